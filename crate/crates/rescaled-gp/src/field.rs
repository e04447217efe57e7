//! The stationary squared-exponential Gaussian field, its spectral measure,
//! exact grid sampling, random-feature expansions and rescaling.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::util::{dot, norm, sq_dist};
use crate::RandomSeed;

/// Covariance of the field: `exp(-||t - s||^2)`.
pub fn covariance(s: &[f64], t: &[f64]) -> Result<f64> {
    if s.len() != t.len() {
        return Err(Error::DimensionMismatch {
            left: s.len(),
            right: t.len(),
        });
    }
    Ok((-sq_dist(s, t)).exp())
}

/// Spectral density of the field: `exp(-||λ||^2/4) / (2^d π^{d/2})`.
///
/// Integrates to one over `R^d`, so the spectral measure is a probability
/// measure (the d-variate normal with variance 2 per axis).
pub fn spectral_density(lambda: &[f64]) -> f64 {
    let d = lambda.len() as i32;
    let nsq: f64 = lambda.iter().map(|x| x * x).sum();
    (-nsq / 4.0).exp() / (2f64.powi(d) * std::f64::consts::PI.powf(d as f64 / 2.0))
}

fn log_spectral_density(lambda: &[f64]) -> f64 {
    let d = lambda.len() as f64;
    let nsq: f64 = lambda.iter().map(|x| x * x).sum();
    -nsq / 4.0 - d * 2f64.ln() - d / 2.0 * std::f64::consts::PI.ln()
}

/// Default quadrature resolution per axis by dimension.
pub fn default_nodes_per_axis(dim: usize) -> usize {
    match dim {
        1 => 2048,
        2 => 128,
        _ => 48,
    }
}

/// Default half-width of the frequency window, in units of the scale.
pub const DEFAULT_HALF_WIDTH: f64 = 40.0;

/// The scaled spectral measure `μ_a` with density `f_a(λ) = a^{-d} f(λ/a)`,
/// discretized on a tensor grid of frequency nodes with trapezoid weights.
///
/// The grid covers `[-R a, R a]^d`; the density is analytic and light-tailed,
/// so the trapezoid rule converges faster than any power of the spacing.
#[derive(Debug, Clone)]
pub struct SpectralMeasure {
    dim: usize,
    scale: f64,
    per_axis: usize,
    /// Flattened nodes, `len = count * dim`.
    nodes: Vec<f64>,
    /// μ_a weights: Lebesgue tensor-trapezoid weight times `f_a` at the node.
    weights: Vec<f64>,
    /// Plain Lebesgue weights (no density factor).
    lebesgue: Vec<f64>,
}

impl SpectralMeasure {
    /// Measure of the squared-exponential field at scale `a`, default grid.
    pub fn gaussian(dim: usize, scale: f64) -> Result<Self> {
        Self::with_resolution(dim, scale, default_nodes_per_axis(dim), DEFAULT_HALF_WIDTH)
    }

    /// As [`Self::gaussian`] but with explicit per-axis node count and
    /// half-width (in units of the scale).
    pub fn with_resolution(
        dim: usize,
        scale: f64,
        per_axis: usize,
        half_width: f64,
    ) -> Result<Self> {
        if scale <= 0.0 {
            return Err(Error::NonPositiveScale(scale));
        }
        assert!(dim >= 1 && per_axis >= 2);
        let r = half_width * scale;
        let h = 2.0 * r / (per_axis - 1) as f64;
        let axis: Vec<f64> = (0..per_axis).map(|i| -r + h * i as f64).collect();
        let count = per_axis.pow(dim as u32);
        let mut nodes = Vec::with_capacity(count * dim);
        let mut weights = Vec::with_capacity(count);
        let mut lebesgue = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        let mut lam = vec![0.0; dim];
        let log_scale_jac = -(dim as f64) * scale.ln();
        loop {
            let mut w = 1.0;
            for k in 0..dim {
                lam[k] = axis[idx[k]];
                let edge = idx[k] == 0 || idx[k] == per_axis - 1;
                w *= if edge { h / 2.0 } else { h };
            }
            // f_a(λ) = a^{-d} f(λ/a), evaluated in log space to dodge underflow
            let scaled: Vec<f64> = lam.iter().map(|x| x / scale).collect();
            let log_fa = log_spectral_density(&scaled) + log_scale_jac;
            nodes.extend_from_slice(&lam);
            lebesgue.push(w);
            weights.push(w * log_fa.exp());
            // advance the tensor index
            let mut k = 0;
            loop {
                if k == dim {
                    return Ok(Self {
                        dim,
                        scale,
                        per_axis,
                        nodes,
                        weights,
                        lebesgue,
                    });
                }
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    /// μ_a weight of node `i` (includes the density factor).
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Lebesgue weight of node `i`.
    pub fn lebesgue_weight(&self, i: usize) -> f64 {
        self.lebesgue[i]
    }

    /// Density `f_a` at an arbitrary frequency.
    pub fn density(&self, lambda: &[f64]) -> f64 {
        self.log_density(lambda).exp()
    }

    pub fn log_density(&self, lambda: &[f64]) -> f64 {
        let scaled: Vec<f64> = lambda.iter().map(|x| x / self.scale).collect();
        log_spectral_density(&scaled) - (self.dim as f64) * self.scale.ln()
    }

    /// `∫ g dμ_a` by quadrature.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut g: F) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * g(self.node(i))).sum()
    }

    /// `∫ g(λ) dλ` over the frequency window by quadrature.
    pub fn integrate_lebesgue<F: FnMut(&[f64]) -> f64>(&self, mut g: F) -> f64 {
        (0..self.len()).map(|i| self.lebesgue[i] * g(self.node(i))).sum()
    }

    /// Total mass `μ_a(R^d)`; equals 1 for the squared-exponential field.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Same grid topology at a different scale (node positions stretch with
    /// the scale, so node `i` here corresponds to node `i` there).
    pub fn at_scale(&self, scale: f64) -> Result<Self> {
        Self::with_resolution(
            self.dim,
            scale,
            self.per_axis,
            // recover half-width in scale units
            -self.nodes[0] / self.scale,
        )
    }
}

/// Residual of Bochner's theorem at lag `t`:
/// `|covariance(0, t) - Re ∫ e^{-i<λ,t>} dμ(λ)|`.
pub fn verify_bochner(t: &[f64], measure: &SpectralMeasure) -> Result<f64> {
    if t.len() != measure.dim() {
        return Err(Error::DimensionMismatch {
            left: t.len(),
            right: measure.dim(),
        });
    }
    let origin = vec![0.0; t.len()];
    let cov = covariance(&origin, t)?;
    // the measure is symmetric, so the imaginary part cancels
    let re = measure.integrate(|lam| dot(lam, t).cos());
    Ok((cov - re).abs())
}

/// `∫ e^{δ||λ||} dμ(λ)`; finite for every `δ > 0` for the squared-exponential
/// measure. Errors if the quadrature window visibly truncates the integrand.
pub fn subexponential_moment(delta: f64, measure: &SpectralMeasure) -> Result<f64> {
    if delta <= 0.0 {
        return Err(Error::Precondition(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let half_width = -measure.node(0)[0];
    let shell = 0.8 * half_width;
    let mut total = 0.0;
    let mut tail = 0.0;
    for i in 0..measure.len() {
        let lam = measure.node(i);
        let v = measure.weight(i) * (delta * norm(lam)).exp();
        total += v;
        if lam.iter().any(|x| x.abs() > shell) {
            tail += v;
        }
    }
    let tail_fraction = tail / total;
    if !total.is_finite() || tail_fraction > 1e-8 {
        return Err(Error::DivergentQuadrature { tail_fraction });
    }
    Ok(total)
}

/// A tensor grid of evaluation points inside `[0,1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    axes: Vec<Vec<f64>>,
}

impl GridSpec {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidConfig("grid needs at least one axis".into()));
        }
        for axis in &axes {
            if axis.is_empty() {
                return Err(Error::InvalidConfig("empty grid axis".into()));
            }
            for w in axis.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::InvalidConfig("grid axis not sorted".into()));
                }
            }
            if axis[0] < 0.0 || *axis.last().unwrap() > 1.0 {
                return Err(Error::InvalidConfig("grid axis outside [0,1]".into()));
            }
        }
        Ok(Self { axes })
    }

    /// Uniform grid with `n` nodes per axis covering `[0,1]` inclusively.
    pub fn uniform(dim: usize, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig("need at least 2 nodes per axis".into()));
        }
        let axis: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        Self::new(vec![axis; dim])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All tensor nodes, row-major in the first axis fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; dim];
        loop {
            out.push((0..dim).map(|k| self.axes[k][idx[k]]).collect());
            let mut k = 0;
            loop {
                if k == dim {
                    return out;
                }
                idx[k] += 1;
                if idx[k] < self.axes[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

/// An exact draw of the field at the nodes of a grid.
#[derive(Debug, Clone)]
pub struct GridPath {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// A truncated spectral expansion of the field:
/// `W(t) = M^{-1/2} Σ_j (z_j cos<λ_j, s t> + z'_j sin<λ_j, s t>)`,
/// an everywhere-defined function of `t` with built-in rescaling factor `s`.
#[derive(Debug, Clone)]
pub struct FeatureExpansion {
    dim: usize,
    /// Flattened frequencies, `len = m * dim`, drawn from the normalized
    /// spectral measure (per-axis variance 2).
    freqs: Vec<f64>,
    cos_w: Vec<f64>,
    sin_w: Vec<f64>,
    scale: f64,
}

impl FeatureExpansion {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_features(&self) -> usize {
        self.cos_w.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn freq(&self, j: usize) -> &[f64] {
        &self.freqs[j * self.dim..(j + 1) * self.dim]
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        debug_assert_eq!(t.len(), self.dim);
        let m = self.num_features();
        let mut acc = 0.0;
        for j in 0..m {
            let phase = self.scale * dot(self.freq(j), t);
            let (s, c) = phase.sin_cos();
            acc += self.cos_w[j] * c + self.sin_w[j] * s;
        }
        acc / (m as f64).sqrt()
    }
}

/// Either representation of a field realization.
#[derive(Debug, Clone)]
pub enum FieldRepresentation {
    Grid(GridPath),
    Features(FeatureExpansion),
}

/// Default feature count: `256 d`.
pub fn default_num_features(dim: usize) -> usize {
    256 * dim
}

/// Covariance matrix of the field over a point set.
pub fn covariance_matrix(points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = covariance(&points[i], &points[j])?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cholesky factor of a covariance matrix with escalating diagonal jitter.
///
/// Starts at `1e-10` times the max diagonal, escalates tenfold up to `1e-6`.
pub fn jittered_cholesky(k: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let max_diag = (0..k.nrows()).map(|i| k[(i, i)]).fold(0.0f64, f64::max);
    let mut jitter = 1e-10 * max_diag;
    let cap = 1e-6 * max_diag;
    loop {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            return Ok(chol);
        }
        jitter *= 10.0;
        if jitter > cap {
            return Err(Error::FactorizationFailed { jitter });
        }
    }
}

/// Exact multivariate-normal draw of the field at the grid nodes.
pub fn sample_grid(grid: &GridSpec, seed: RandomSeed) -> Result<GridPath> {
    let points = grid.points();
    let chol = jittered_cholesky(&covariance_matrix(&points)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(
        points.len(),
        (0..points.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let values = (chol.l() * z).iter().copied().collect();
    Ok(GridPath { points, values })
}

/// Draws `m` frequencies from the normalized spectral measure and standard
/// normal cosine/sine weights; the resulting expansion has covariance
/// converging to `exp(-||t-s||^2)` as `m` grows.
pub fn sample_features(dim: usize, m: usize, seed: RandomSeed) -> FeatureExpansion {
    assert!(m >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = 2f64.sqrt();
    let freqs: Vec<f64> = (0..m * dim)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let cos_w: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let sin_w: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    FeatureExpansion {
        dim,
        freqs,
        cos_w,
        sin_w,
        scale: 1.0,
    }
}

/// Rescales a field realization: `t -> W(a t)`. Composes multiplicatively.
///
/// Grid paths cannot be rescaled (the values outside the grid are unknown);
/// re-sample instead.
pub fn rescale(field: &FieldRepresentation, a: f64) -> Result<FieldRepresentation> {
    if a <= 0.0 {
        return Err(Error::NonPositiveScale(a));
    }
    match field {
        FieldRepresentation::Features(f) => {
            let mut g = f.clone();
            g.scale *= a;
            Ok(FieldRepresentation::Features(g))
        }
        FieldRepresentation::Grid(_) => Err(Error::GridPathRescale),
    }
}
