//! Hierarchical posterior inference with the rescaled-field prior for the
//! three observation models — density estimation, fixed-design regression and
//! binary classification — plus the distance functionals contraction is
//! measured in.
//!
//! The latent function is carried as a random-feature expansion whose 2M
//! weights are a priori standard normal, so an elliptical slice update is
//! valid for every likelihood without gradients. The bandwidth is sampled by
//! random-walk Metropolis on its logarithm (with Jacobian); for regression
//! the move targets the marginal likelihood with the weights integrated out
//! (the model is linear-Gaussian in the weights) and redraws them exactly on
//! acceptance, which decouples bandwidth mixing from the weight fit. The
//! regression noise scale uses random-walk Metropolis under a uniform prior.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bandwidth::GammaRootPrior;
use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::util::{dot, quantile, sq_dist};
use crate::RandomSeed;

/// Link function mapping the latent field to a success probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Logistic,
    Probit,
}

impl Link {
    pub fn apply(self, w: f64) -> f64 {
        match self {
            Link::Logistic => 1.0 / (1.0 + (-w).exp()),
            Link::Probit => crate::rkhs::normal_cdf(w),
        }
    }

    /// `log Ψ(w)`, computed without catastrophic cancellation.
    pub fn log_apply(self, w: f64) -> f64 {
        match self {
            // log σ(w) = -log(1 + e^{-w})
            Link::Logistic => -softplus(-w),
            Link::Probit => crate::rkhs::normal_cdf(w).max(1e-300).ln(),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Observation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    Density,
    Regression { sigma_lo: f64, sigma_hi: f64 },
    Classification { link: Link },
}

impl Setting {
    pub fn default_regression() -> Self {
        Setting::Regression {
            sigma_lo: 0.1,
            sigma_hi: 10.0,
        }
    }
}

/// Observed data for one of the settings.
#[derive(Debug, Clone)]
pub enum Dataset {
    /// Points drawn from the unknown density on `[0,1]^d`.
    Density { x: Vec<Vec<f64>> },
    /// Fixed design with real responses.
    Regression { t: Vec<Vec<f64>>, y: Vec<f64> },
    /// Covariates with binary labels.
    Classification { x: Vec<Vec<f64>>, y: Vec<u8> },
}

impl Dataset {
    pub fn covariates(&self) -> &[Vec<f64>] {
        match self {
            Dataset::Density { x } => x,
            Dataset::Regression { t, .. } => t,
            Dataset::Classification { x, .. } => x,
        }
    }

    pub fn len(&self) -> usize {
        self.covariates().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.covariates().first().map_or(1, |p| p.len())
    }

    pub fn validate(&self, setting: &Setting) -> Result<()> {
        for p in self.covariates() {
            if p.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::Precondition("covariate outside [0,1]^d".into()));
            }
        }
        match (self, setting) {
            (Dataset::Density { .. }, Setting::Density) => Ok(()),
            (Dataset::Regression { t, y }, Setting::Regression { sigma_lo, sigma_hi }) => {
                if t.len() != y.len() {
                    return Err(Error::DimensionMismatch {
                        left: t.len(),
                        right: y.len(),
                    });
                }
                if !(0.0 < *sigma_lo && sigma_lo < sigma_hi) {
                    return Err(Error::Precondition(format!(
                        "need 0 < sigma_lo < sigma_hi, got [{sigma_lo}, {sigma_hi}]"
                    )));
                }
                Ok(())
            }
            (Dataset::Classification { x, y }, Setting::Classification { .. }) => {
                if x.len() != y.len() {
                    return Err(Error::DimensionMismatch {
                        left: x.len(),
                        right: y.len(),
                    });
                }
                Ok(())
            }
            _ => Err(Error::SettingMismatch {
                expected: "matching",
            }),
        }
    }
}

/// Latent state of the sampler: feature weights, log-bandwidth, noise scale.
#[derive(Debug, Clone)]
pub struct LatentState {
    /// Cosine weights (M of them).
    pub z_cos: Vec<f64>,
    /// Sine weights (M of them).
    pub z_sin: Vec<f64>,
    /// `log A`.
    pub ell: f64,
    /// Noise scale; present only under Regression.
    pub sigma: Option<f64>,
}

/// Chain configuration.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub num_features: usize,
    pub burn_in: usize,
    /// Post-burn-in scans.
    pub scans: usize,
    pub thin: usize,
    pub seed: RandomSeed,
    /// Clamp the bandwidth (no bandwidth moves) when set.
    pub fixed_bandwidth: Option<f64>,
    /// Clamp the noise scale when set.
    pub fixed_sigma: Option<f64>,
    /// Evaluation grid; doubles as the density-normalizer quadrature grid.
    pub eval_grid: GridSpec,
    pub init_step_ell: f64,
    pub step_sigma: f64,
    /// Propose a bandwidth move every this many scans (collapsed regression
    /// moves cost O(n·M²), so large-n chains thin them; weight and σ
    /// updates still run every scan).
    pub bandwidth_period: usize,
}

impl ChainConfig {
    pub fn new(dim: usize, seed: RandomSeed) -> Self {
        Self {
            num_features: crate::field::default_num_features(dim),
            burn_in: 2_000,
            scans: 10_000,
            thin: 5,
            seed,
            fixed_bandwidth: None,
            fixed_sigma: None,
            eval_grid: GridSpec::uniform(dim, if dim == 1 { 513 } else { 65 })
                .expect("static grid"),
            init_step_ell: 0.5,
            step_sigma: 0.5,
            bandwidth_period: 1,
        }
    }
}

/// One recorded posterior draw.
#[derive(Debug, Clone)]
pub struct ChainSample {
    pub bandwidth: f64,
    pub sigma: Option<f64>,
    /// Latent function values on the evaluation grid.
    pub values: Vec<f64>,
}

/// A completed MCMC run.
#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<ChainSample>,
    pub eval_points: Vec<Vec<f64>>,
    /// Trapezoid quadrature weights matching `eval_points`.
    pub eval_weights: Vec<f64>,
    pub accept_bandwidth: f64,
    pub accept_sigma: f64,
    pub final_step_ell: f64,
    pub log_post_trace: Vec<f64>,
}

/// Tensor trapezoid quadrature weights for a grid, in `points()` order.
pub fn grid_quad_weights(grid: &GridSpec) -> Vec<f64> {
    let axes = grid.axes();
    let axis_weights: Vec<Vec<f64>> = axes
        .iter()
        .map(|axis| {
            let n = axis.len();
            if n == 1 {
                return vec![1.0];
            }
            (0..n)
                .map(|i| {
                    let left = if i == 0 { axis[0] } else { axis[i - 1] };
                    let right = if i == n - 1 { axis[n - 1] } else { axis[i + 1] };
                    0.5 * (right - left)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(grid.len());
    let dim = grid.dim();
    let mut idx = vec![0usize; dim];
    loop {
        out.push((0..dim).map(|k| axis_weights[k][idx[k]]).product());
        let mut k = 0;
        loop {
            if k == dim {
                return out;
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// The sampler: owns the latent state plus cached feature values at the data
/// and evaluation points for the current bandwidth.
pub struct Sampler {
    setting: Setting,
    data: Dataset,
    prior: GammaRootPrior,
    config: ChainConfig,
    /// Frequencies of the unscaled field, `M x d`, drawn `N(0, 2I)`.
    freqs: Vec<f64>,
    dim: usize,
    state: LatentState,
    /// cos/sin of `a <λ_j, t_i>` at data points, `n x M` row-major.
    c_data: Vec<f64>,
    s_data: Vec<f64>,
    c_eval: Vec<f64>,
    s_eval: Vec<f64>,
    /// Current function values at data / evaluation points.
    w_data: Vec<f64>,
    w_eval: Vec<f64>,
    eval_points: Vec<Vec<f64>>,
    eval_weights: Vec<f64>,
    log_lik: f64,
    /// Regression only: `Φᵀ Φ`, `Φᵀ Y`, `YᵀY` for the current bandwidth's
    /// design features `Φ = [C S]/√M`, independent of the weights and σ.
    gram: Option<(DMatrix<f64>, DVector<f64>, f64)>,
    scan_count: usize,
    step_ell: f64,
    rng: ChaCha8Rng,
    bw_proposals: usize,
    bw_accepts: usize,
    sigma_proposals: usize,
    sigma_accepts: usize,
}

impl Sampler {
    pub fn new(
        config: ChainConfig,
        data: Dataset,
        setting: Setting,
        prior: GammaRootPrior,
    ) -> Result<Self> {
        data.validate(&setting)?;
        let dim = if data.is_empty() {
            config.eval_grid.dim()
        } else {
            data.dim()
        };
        if prior.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: prior.dim(),
                right: dim,
            });
        }
        let m = config.num_features;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sd = 2.0f64.sqrt();
        let freqs: Vec<f64> = (0..m * dim)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let sigma = match (&setting, config.fixed_sigma) {
            (Setting::Regression { .. }, Some(s)) => Some(s),
            (Setting::Regression { sigma_lo, sigma_hi }, None) => {
                Some(0.5 * (sigma_lo + sigma_hi))
            }
            _ => None,
        };
        let ell = match config.fixed_bandwidth {
            Some(a) => a.ln(),
            None => prior.median().ln(),
        };
        let state = LatentState {
            z_cos: vec![0.0; m],
            z_sin: vec![0.0; m],
            ell,
            sigma,
        };
        let eval_points = config.eval_grid.points();
        let eval_weights = grid_quad_weights(&config.eval_grid);
        let step_ell = config.init_step_ell;
        let mut s = Self {
            setting,
            data,
            prior,
            config,
            freqs,
            dim,
            state,
            c_data: Vec::new(),
            s_data: Vec::new(),
            c_eval: Vec::new(),
            s_eval: Vec::new(),
            w_data: Vec::new(),
            w_eval: Vec::new(),
            eval_points,
            eval_weights,
            log_lik: 0.0,
            gram: None,
            scan_count: 0,
            step_ell,
            rng,
            bw_proposals: 0,
            bw_accepts: 0,
            sigma_proposals: 0,
            sigma_accepts: 0,
        };
        let a = s.state.ell.exp();
        let (c, sn) = s.feature_table(&points_owned(s.data.covariates()), a);
        s.c_data = c;
        s.s_data = sn;
        let eval = s.eval_points.clone();
        let (c, sn) = s.feature_table(&eval, a);
        s.c_eval = c;
        s.s_eval = sn;
        s.w_data = s.apply_weights(&s.c_data, &s.s_data, &s.state.z_cos, &s.state.z_sin);
        s.w_eval = s.apply_weights(&s.c_eval, &s.s_eval, &s.state.z_cos, &s.state.z_sin);
        s.log_lik = log_likelihood_values(
            &s.setting,
            &s.data,
            &s.w_data,
            &s.w_eval,
            &s.eval_weights,
            s.state.sigma,
        )?;
        if matches!(s.setting, Setting::Regression { .. }) && s.config.fixed_bandwidth.is_none() {
            s.gram = Some(s.build_gram(&s.c_data, &s.s_data));
        }
        Ok(s)
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn log_lik(&self) -> f64 {
        self.log_lik
    }

    pub fn eval_values(&self) -> &[f64] {
        &self.w_eval
    }

    fn feature_table(&self, points: &[Vec<f64>], a: f64) -> (Vec<f64>, Vec<f64>) {
        let m = self.config.num_features;
        let mut c = vec![0.0; points.len() * m];
        let mut s = vec![0.0; points.len() * m];
        for (i, p) in points.iter().enumerate() {
            for j in 0..m {
                let phase = a * dot(&self.freqs[j * self.dim..(j + 1) * self.dim], p);
                let (sv, cv) = phase.sin_cos();
                c[i * m + j] = cv;
                s[i * m + j] = sv;
            }
        }
        (c, s)
    }

    fn apply_weights(&self, c: &[f64], s: &[f64], zc: &[f64], zs: &[f64]) -> Vec<f64> {
        let m = self.config.num_features;
        let inv = 1.0 / (m as f64).sqrt();
        let n = c.len() / m.max(1);
        (0..n)
            .map(|i| {
                let row = i * m;
                let mut acc = 0.0;
                for j in 0..m {
                    acc += c[row + j] * zc[j] + s[row + j] * zs[j];
                }
                acc * inv
            })
            .collect()
    }

    fn likelihood_of(&self, w_data: &[f64], w_eval: &[f64], sigma: Option<f64>) -> f64 {
        log_likelihood_values(
            &self.setting,
            &self.data,
            w_data,
            w_eval,
            &self.eval_weights,
            sigma,
        )
        .expect("state consistent with setting")
    }

    /// Elliptical slice update of the feature weights; always moves to a
    /// state with the conditional posterior invariant.
    pub fn update_weights(&mut self) {
        let m = self.config.num_features;
        let nu_c: Vec<f64> = (0..m).map(|_| self.rng.sample(StandardNormal)).collect();
        let nu_s: Vec<f64> = (0..m).map(|_| self.rng.sample(StandardNormal)).collect();
        let wnu_data = self.apply_weights(&self.c_data, &self.s_data, &nu_c, &nu_s);
        let wnu_eval = self.apply_weights(&self.c_eval, &self.s_eval, &nu_c, &nu_s);
        let log_y = self.log_lik + self.rng.gen::<f64>().ln();
        let mut theta = self.rng.gen::<f64>() * std::f64::consts::TAU;
        let (mut lo, mut hi) = (theta - std::f64::consts::TAU, theta);
        for _ in 0..100 {
            let (sin_t, cos_t) = theta.sin_cos();
            let cand_data: Vec<f64> = self
                .w_data
                .iter()
                .zip(&wnu_data)
                .map(|(w, v)| w * cos_t + v * sin_t)
                .collect();
            let cand_eval: Vec<f64> = self
                .w_eval
                .iter()
                .zip(&wnu_eval)
                .map(|(w, v)| w * cos_t + v * sin_t)
                .collect();
            let ll = self.likelihood_of(&cand_data, &cand_eval, self.state.sigma);
            if ll > log_y {
                for j in 0..m {
                    self.state.z_cos[j] = self.state.z_cos[j] * cos_t + nu_c[j] * sin_t;
                    self.state.z_sin[j] = self.state.z_sin[j] * cos_t + nu_s[j] * sin_t;
                }
                self.w_data = cand_data;
                self.w_eval = cand_eval;
                self.log_lik = ll;
                return;
            }
            if theta < 0.0 {
                lo = theta;
            } else {
                hi = theta;
            }
            theta = lo + self.rng.gen::<f64>() * (hi - lo);
        }
        // bracket collapsed onto the current state; keep it
    }

    /// Random-walk Metropolis on `ℓ = log A`; target includes the Jacobian.
    /// During burn-in the step adapts toward acceptance rate 0.3 when
    /// `adapt` is set; afterwards it is frozen.
    pub fn update_bandwidth(&mut self, adapt: bool) {
        if self.config.fixed_bandwidth.is_some() {
            return;
        }
        self.bw_proposals += 1;
        let ell_new = self.state.ell + self.step_ell * self.rng.sample::<f64, _>(StandardNormal);
        let a_new = ell_new.exp();
        let (c_data, s_data) = self.feature_table(&points_owned(self.data.covariates()), a_new);
        let eval = self.eval_points.clone();
        let (c_eval, s_eval) = self.feature_table(&eval, a_new);
        let w_data = self.apply_weights(&c_data, &s_data, &self.state.z_cos, &self.state.z_sin);
        let w_eval = self.apply_weights(&c_eval, &s_eval, &self.state.z_cos, &self.state.z_sin);
        let ll_new = self.likelihood_of(&w_data, &w_eval, self.state.sigma);
        let log_acc = ll_new + self.log_prior_ell(ell_new) - self.log_lik
            - self.log_prior_ell(self.state.ell);
        let alpha = log_acc.min(0.0).exp();
        if self.rng.gen::<f64>() < alpha {
            self.bw_accepts += 1;
            self.state.ell = ell_new;
            self.c_data = c_data;
            self.s_data = s_data;
            self.c_eval = c_eval;
            self.s_eval = s_eval;
            self.w_data = w_data;
            self.w_eval = w_eval;
            self.log_lik = ll_new;
        }
        if adapt {
            let t = self.bw_proposals as f64;
            let gamma = 2.0 / (20.0 + t).sqrt();
            self.step_ell *= (gamma * (alpha - 0.3)).exp();
        }
    }

    /// `ΦᵀΦ`, `ΦᵀY`, `YᵀY` for the regression design with `Φ = [C S]/√M`.
    fn build_gram(&self, c: &[f64], s: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
        let m = self.config.num_features;
        let y: &[f64] = match &self.data {
            Dataset::Regression { y, .. } => y,
            _ => &[],
        };
        let n = y.len();
        let inv = 1.0 / (m as f64).sqrt();
        let mut phi = DMatrix::<f64>::zeros(n, 2 * m);
        for i in 0..n {
            for j in 0..m {
                phi[(i, j)] = c[i * m + j] * inv;
                phi[(i, m + j)] = s[i * m + j] * inv;
            }
        }
        let gram = phi.tr_mul(&phi);
        let yv = DVector::from_column_slice(y);
        let phi_ty = phi.tr_mul(&yv);
        (gram, phi_ty, yv.dot(&yv))
    }

    /// Marginal regression log-likelihood `log N(Y; 0, ΦΦᵀ + σ²I)` with the
    /// feature weights integrated out, evaluated through the 2M×2M
    /// precision `G = I + ΦᵀΦ/σ²`.
    fn marginal_loglik(
        gram: &DMatrix<f64>,
        phi_ty: &DVector<f64>,
        y_sq: f64,
        n: usize,
        sigma: f64,
    ) -> f64 {
        let k = gram.nrows();
        let s2 = sigma * sigma;
        let mut g = gram / s2;
        for j in 0..k {
            g[(j, j)] += 1.0;
        }
        let chol = Cholesky::new(g).expect("marginal precision is positive definite");
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let solved = chol.solve(phi_ty);
        let quad = (y_sq - phi_ty.dot(&solved) / s2) / s2;
        -0.5 * (n as f64 * (2.0 * std::f64::consts::PI * s2).ln() + log_det + quad)
    }

    /// Collapsed bandwidth move for regression: Metropolis on `ℓ = log A`
    /// targeting the marginal posterior with the weights integrated out;
    /// on acceptance the weights are redrawn exactly from their Gaussian
    /// conditional, so the joint chain stays invariant.
    pub fn update_bandwidth_collapsed(&mut self, adapt: bool) {
        if self.config.fixed_bandwidth.is_some() {
            return;
        }
        let sigma = self.state.sigma.expect("regression carries sigma");
        let n = self.data.len();
        self.bw_proposals += 1;
        let ell_new = self.state.ell + self.step_ell * self.rng.sample::<f64, _>(StandardNormal);
        let a_new = ell_new.exp();
        let (c_data, s_data) = self.feature_table(&points_owned(self.data.covariates()), a_new);
        let (gram_new, phi_ty_new, y_sq) = self.build_gram(&c_data, &s_data);
        let (gram_cur, phi_ty_cur, y_sq_cur) = self.gram.as_ref().expect("gram cached");
        let ml_cur = Self::marginal_loglik(gram_cur, phi_ty_cur, *y_sq_cur, n, sigma);
        let ml_new = Self::marginal_loglik(&gram_new, &phi_ty_new, y_sq, n, sigma);
        let log_acc =
            ml_new + self.log_prior_ell(ell_new) - ml_cur - self.log_prior_ell(self.state.ell);
        let alpha = log_acc.min(0.0).exp();
        if self.rng.gen::<f64>() < alpha {
            self.bw_accepts += 1;
            self.state.ell = ell_new;
            self.c_data = c_data;
            self.s_data = s_data;
            let eval = self.eval_points.clone();
            let (c_eval, s_eval) = self.feature_table(&eval, a_new);
            self.c_eval = c_eval;
            self.s_eval = s_eval;
            self.gram = Some((gram_new, phi_ty_new, y_sq));
            self.redraw_weights_exact();
        }
        if adapt {
            let t = self.bw_proposals as f64;
            let gamma = 2.0 / (20.0 + t).sqrt();
            self.step_ell *= (gamma * (alpha - 0.3)).exp();
        }
    }

    /// Exact draw of the feature weights from their Gaussian conditional
    /// given the regression data, bandwidth, and σ.
    fn redraw_weights_exact(&mut self) {
        let sigma = self.state.sigma.expect("regression carries sigma");
        let s2 = sigma * sigma;
        let (gram, phi_ty, _) = self.gram.as_ref().expect("gram cached");
        let k = gram.nrows();
        let mut p = gram / s2;
        for j in 0..k {
            p[(j, j)] += 1.0;
        }
        let chol = Cholesky::new(p).expect("weight precision is positive definite");
        let mean = chol.solve(&(phi_ty / s2));
        let xi = DVector::from_iterator(k, (0..k).map(|_| self.rng.sample(StandardNormal)));
        // z = mean + L^{-T} ξ has covariance P^{-1}
        let z = mean + chol.l().tr_solve_lower_triangular(&xi).expect("triangular solve");
        let m = self.config.num_features;
        for j in 0..m {
            self.state.z_cos[j] = z[j];
            self.state.z_sin[j] = z[m + j];
        }
        self.w_data = self.apply_weights(&self.c_data, &self.s_data, &self.state.z_cos, &self.state.z_sin);
        self.w_eval = self.apply_weights(&self.c_eval, &self.s_eval, &self.state.z_cos, &self.state.z_sin);
        self.log_lik = self.likelihood_of(&self.w_data, &self.w_eval, self.state.sigma);
    }

    /// Burn-in-only exploration for the non-conjugate settings: refit the
    /// weights by elliptical slice steps at each candidate bandwidth and
    /// jump to the best joint posterior. The recorded (post-burn-in) kernel
    /// is untouched, so chain correctness is unaffected; this only provides
    /// a good starting basin that the plain random walk cannot reach when
    /// the weights and the bandwidth are strongly coupled.
    pub fn basin_search(&mut self, candidates: &[f64], refits: usize) {
        if self.config.fixed_bandwidth.is_some() {
            return;
        }
        let saved = self.snapshot();
        let mut best_lp = self.log_posterior();
        let mut best: Option<Snapshot> = None;
        for &a in candidates {
            self.restore(saved.clone());
            self.state.ell = a.ln();
            let (c, s) = self.feature_table(&points_owned(self.data.covariates()), a);
            self.c_data = c;
            self.s_data = s;
            let eval = self.eval_points.clone();
            let (c, s) = self.feature_table(&eval, a);
            self.c_eval = c;
            self.s_eval = s;
            self.w_data =
                self.apply_weights(&self.c_data, &self.s_data, &self.state.z_cos, &self.state.z_sin);
            self.w_eval =
                self.apply_weights(&self.c_eval, &self.s_eval, &self.state.z_cos, &self.state.z_sin);
            self.log_lik = self.likelihood_of(&self.w_data, &self.w_eval, self.state.sigma);
            for _ in 0..refits {
                self.update_weights();
            }
            let lp = self.log_posterior();
            if lp > best_lp {
                best_lp = lp;
                best = Some(self.snapshot());
            }
        }
        match best {
            Some(snap) => self.restore(snap),
            None => self.restore(saved),
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            state: self.state.clone(),
            c_data: self.c_data.clone(),
            s_data: self.s_data.clone(),
            c_eval: self.c_eval.clone(),
            s_eval: self.s_eval.clone(),
            w_data: self.w_data.clone(),
            w_eval: self.w_eval.clone(),
            log_lik: self.log_lik,
        }
    }

    fn restore(&mut self, snap: Snapshot) {
        self.state = snap.state;
        self.c_data = snap.c_data;
        self.s_data = snap.s_data;
        self.c_eval = snap.c_eval;
        self.s_eval = snap.s_eval;
        self.w_data = snap.w_data;
        self.w_eval = snap.w_eval;
        self.log_lik = snap.log_lik;
    }

    fn log_prior_ell(&self, ell: f64) -> f64 {
        // density of ℓ: g(e^ℓ) e^ℓ
        self.prior
            .log_density(ell.exp())
            .unwrap_or(f64::NEG_INFINITY)
            + ell
    }

    /// Random-walk Metropolis on σ with a uniform prior on its interval.
    pub fn update_sigma(&mut self) -> Result<()> {
        let Setting::Regression { sigma_lo, sigma_hi } = self.setting else {
            return Err(Error::SettingMismatch {
                expected: "Regression".into(),
            });
        };
        if self.config.fixed_sigma.is_some() {
            return Ok(());
        }
        self.sigma_proposals += 1;
        let cur = self.state.sigma.unwrap();
        let cand = cur + self.config.step_sigma * self.rng.sample::<f64, _>(StandardNormal);
        if !(sigma_lo..=sigma_hi).contains(&cand) {
            return Ok(()); // zero prior mass: always rejected
        }
        let ll_new = self.likelihood_of(&self.w_data, &self.w_eval, Some(cand));
        if self.rng.gen::<f64>().ln() < ll_new - self.log_lik {
            self.sigma_accepts += 1;
            self.state.sigma = Some(cand);
            self.log_lik = ll_new;
        }
        Ok(())
    }

    /// One systematic scan: weights, then bandwidth, then (Regression) σ.
    pub fn scan(&mut self, adapt: bool) -> Result<()> {
        self.update_weights();
        let due = self.scan_count % self.config.bandwidth_period.max(1) == 0;
        self.scan_count += 1;
        if matches!(self.setting, Setting::Regression { .. }) {
            if due {
                self.update_bandwidth_collapsed(adapt);
            }
            self.update_sigma()?;
        } else if due {
            self.update_bandwidth(adapt);
        }
        Ok(())
    }

    pub fn log_posterior(&self) -> f64 {
        self.log_lik + log_prior(&self.state, &self.prior, &self.setting)
    }
}

/// Full cached state of a `Sampler`, used by the burn-in basin search.
#[derive(Clone)]
struct Snapshot {
    state: LatentState,
    c_data: Vec<f64>,
    s_data: Vec<f64>,
    c_eval: Vec<f64>,
    s_eval: Vec<f64>,
    w_data: Vec<f64>,
    w_eval: Vec<f64>,
    log_lik: f64,
}

fn points_owned(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points.to_vec()
}

/// Log-likelihood of precomputed function values under a setting.
fn log_likelihood_values(
    setting: &Setting,
    data: &Dataset,
    w_data: &[f64],
    w_eval: &[f64],
    eval_weights: &[f64],
    sigma: Option<f64>,
) -> Result<f64> {
    match (setting, data) {
        (Setting::Density, Dataset::Density { x }) => {
            if x.is_empty() {
                return Ok(0.0);
            }
            // log ∫ e^w with max-subtraction on the quadrature grid
            let m = w_eval.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = m
                + w_eval
                    .iter()
                    .zip(eval_weights)
                    .map(|(w, q)| q * (w - m).exp())
                    .sum::<f64>()
                    .ln();
            Ok(w_data.iter().sum::<f64>() - x.len() as f64 * log_norm)
        }
        (Setting::Regression { .. }, Dataset::Regression { y, .. }) => {
            let s = sigma.ok_or_else(|| Error::Precondition("missing sigma".into()))?;
            let n = y.len() as f64;
            let rss: f64 = y
                .iter()
                .zip(w_data)
                .map(|(yi, wi)| (yi - wi) * (yi - wi))
                .sum();
            Ok(-0.5 * n * (std::f64::consts::TAU * s * s).ln() - 0.5 * rss / (s * s))
        }
        (Setting::Classification { link }, Dataset::Classification { y, .. }) => Ok(y
            .iter()
            .zip(w_data)
            .map(|(&yi, &wi)| {
                if yi == 1 {
                    link.log_apply(wi)
                } else {
                    link.log_apply(-match link {
                        Link::Logistic | Link::Probit => wi,
                    })
                }
            })
            .sum()),
        _ => Err(Error::SettingMismatch {
            expected: "matching",
        }),
    }
}

/// Log-likelihood of a latent state. Function values are recomputed from the
/// state's feature representation, so this is the reference (slow) path; the
/// sampler caches them.
pub fn log_likelihood(
    state: &LatentState,
    data: &Dataset,
    setting: &Setting,
    freqs: &[f64],
    eval_grid: &GridSpec,
) -> Result<f64> {
    let dim = eval_grid.dim();
    let m = state.z_cos.len();
    let a = state.ell.exp();
    let eval = |points: &[Vec<f64>]| -> Vec<f64> {
        let inv = 1.0 / (m as f64).sqrt();
        points
            .iter()
            .map(|p| {
                let mut acc = 0.0;
                for j in 0..m {
                    let (s, c) = (a * dot(&freqs[j * dim..(j + 1) * dim], p)).sin_cos();
                    acc += state.z_cos[j] * c + state.z_sin[j] * s;
                }
                acc * inv
            })
            .collect()
    };
    let w_data = eval(data.covariates());
    let w_eval = eval(&eval_grid.points());
    log_likelihood_values(
        setting,
        data,
        &w_data,
        &w_eval,
        &grid_quad_weights(eval_grid),
        state.sigma,
    )
}

/// Log prior density of a latent state: standard-normal weights, the
/// log-bandwidth with its Jacobian, and (Regression) uniform σ.
pub fn log_prior(state: &LatentState, prior: &GammaRootPrior, setting: &Setting) -> f64 {
    let m2 = (state.z_cos.len() + state.z_sin.len()) as f64;
    let mut lp = -0.5 * m2 * (std::f64::consts::TAU).ln()
        - 0.5
            * (state.z_cos.iter().map(|z| z * z).sum::<f64>()
                + state.z_sin.iter().map(|z| z * z).sum::<f64>());
    lp += prior
        .log_density(state.ell.exp())
        .unwrap_or(f64::NEG_INFINITY)
        + state.ell;
    if let Setting::Regression { sigma_lo, sigma_hi } = setting {
        match state.sigma {
            Some(s) if (*sigma_lo..=*sigma_hi).contains(&s) => {
                lp -= (sigma_hi - sigma_lo).ln();
            }
            _ => return f64::NEG_INFINITY,
        }
    }
    lp
}

/// Runs a full chain: burn-in with step adaptation, then recording every
/// `thin`-th scan. Bit-reproducible from the configuration.
pub fn run_chain(
    config: ChainConfig,
    data: Dataset,
    setting: Setting,
    prior: GammaRootPrior,
) -> Result<Chain> {
    let mut sampler = Sampler::new(config.clone(), data, setting, prior)?;
    // non-conjugate settings explore bandwidth basins the random walk
    // cannot cross; two burn-in searches, later ones from a better state
    let search = !matches!(setting, Setting::Regression { .. })
        && config.fixed_bandwidth.is_none()
        && config.burn_in >= 6;
    let search_grid: Vec<f64> = (0..12).map(|i| 0.5 * 1.5f64.powi(i)).collect();
    for t in 0..config.burn_in {
        sampler.scan(true)?;
        if search && (t == config.burn_in / 3 || t == 2 * config.burn_in / 3) {
            sampler.basin_search(&search_grid, 60);
        }
    }
    // adaptation freezes here; reset acceptance counters for diagnostics
    sampler.bw_proposals = 0;
    sampler.bw_accepts = 0;
    sampler.sigma_proposals = 0;
    sampler.sigma_accepts = 0;
    let mut samples = Vec::new();
    let mut log_post_trace = Vec::new();
    if config.scans == 0 {
        samples.push(ChainSample {
            bandwidth: sampler.state.ell.exp(),
            sigma: sampler.state.sigma,
            values: sampler.w_eval.clone(),
        });
    }
    for i in 0..config.scans {
        sampler.scan(false)?;
        if (i + 1) % config.thin == 0 {
            samples.push(ChainSample {
                bandwidth: sampler.state.ell.exp(),
                sigma: sampler.state.sigma,
                values: sampler.w_eval.clone(),
            });
            log_post_trace.push(sampler.log_posterior());
        }
    }
    Ok(Chain {
        samples,
        eval_points: sampler.eval_points.clone(),
        eval_weights: sampler.eval_weights.clone(),
        accept_bandwidth: if sampler.bw_proposals == 0 {
            f64::NAN
        } else {
            sampler.bw_accepts as f64 / sampler.bw_proposals as f64
        },
        accept_sigma: if sampler.sigma_proposals == 0 {
            f64::NAN
        } else {
            sampler.sigma_accepts as f64 / sampler.sigma_proposals as f64
        },
        final_step_ell: sampler.step_ell,
        log_post_trace,
    })
}

/// Pointwise posterior summary of the estimand on the evaluation grid.
#[derive(Debug, Clone)]
pub struct FunctionalSummary {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Applies the setting's estimand transform to one draw's latent values:
/// exp-normalize (Density), identity (Regression), link (Classification).
pub fn transform_sample(values: &[f64], eval_weights: &[f64], setting: &Setting) -> Vec<f64> {
    match setting {
        Setting::Density => {
            let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let norm: f64 = values
                .iter()
                .zip(eval_weights)
                .map(|(w, q)| q * (w - m).exp())
                .sum();
            values.iter().map(|w| (w - m).exp() / norm).collect()
        }
        Setting::Regression { .. } => values.to_vec(),
        Setting::Classification { link } => values.iter().map(|&w| link.apply(w)).collect(),
    }
}

/// Posterior mean and 95% pointwise credible band of the estimand; the
/// transform is applied before averaging.
pub fn posterior_functional(chain: &Chain, setting: &Setting) -> Result<FunctionalSummary> {
    if chain.samples.is_empty() {
        return Err(Error::Precondition("empty chain".into()));
    }
    let g = chain.eval_points.len();
    let transformed: Vec<Vec<f64>> = chain
        .samples
        .iter()
        .map(|s| transform_sample(&s.values, &chain.eval_weights, setting))
        .collect();
    let mut mean = vec![0.0; g];
    for t in &transformed {
        for (m, v) in mean.iter_mut().zip(t) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= transformed.len() as f64;
    }
    let mut lower = vec![0.0; g];
    let mut upper = vec![0.0; g];
    let mut buf = vec![0.0; transformed.len()];
    for j in 0..g {
        for (b, t) in buf.iter_mut().zip(&transformed) {
            *b = t[j];
        }
        buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower[j] = quantile(&buf, 0.025);
        upper[j] = quantile(&buf, 0.975);
    }
    Ok(FunctionalSummary { mean, lower, upper })
}

/// Hellinger distance between two densities given on the same quadrature
/// grid: `(∫ (√f − √g)^2)^{1/2}`.
pub fn hellinger(f: &[f64], g: &[f64], weights: &[f64]) -> Result<f64> {
    if f.len() != g.len() || f.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            left: f.len(),
            right: g.len(),
        });
    }
    if f.iter().chain(g).any(|&v| v < 0.0) {
        return Err(Error::NegativeDensity);
    }
    let h2: f64 = f
        .iter()
        .zip(g)
        .zip(weights)
        .map(|((a, b), q)| {
            let d = a.sqrt() - b.sqrt();
            q * d * d
        })
        .sum();
    Ok(h2.sqrt())
}

/// `||w||_n = (n^{-1} Σ w(t_i)^2)^{1/2}` over the design.
pub fn empirical_norm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDesign);
    }
    Ok((values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt())
}

/// `L_2(G)` distance between two regression/classification functions, with
/// `G` given as a density on the quadrature grid.
pub fn l2g_norm(r1: &[f64], r2: &[f64], g_density: &[f64], weights: &[f64]) -> Result<f64> {
    if r1.len() != r2.len() || r1.len() != weights.len() || r1.len() != g_density.len() {
        return Err(Error::DimensionMismatch {
            left: r1.len(),
            right: r2.len(),
        });
    }
    let v: f64 = r1
        .iter()
        .zip(r2)
        .zip(g_density.iter().zip(weights))
        .map(|((a, b), (g, q))| q * g * (a - b) * (a - b))
        .sum();
    Ok(v.sqrt())
}

/// Setting-specific distance of one posterior draw from the truth, both on
/// the chain's evaluation grid. Regression adds `|σ − σ₀|` when provided.
pub fn sample_distance(
    sample: &ChainSample,
    truth: &[f64],
    chain: &Chain,
    setting: &Setting,
    sigma0: Option<f64>,
) -> Result<f64> {
    let transformed = transform_sample(&sample.values, &chain.eval_weights, setting);
    match setting {
        Setting::Density => hellinger(&transformed, truth, &chain.eval_weights),
        Setting::Regression { .. } => {
            let mut d2 = 0.0;
            for ((a, b), q) in transformed.iter().zip(truth).zip(&chain.eval_weights) {
                d2 += q * (a - b) * (a - b);
            }
            let mut d = d2.sqrt();
            if let (Some(s0), Some(s)) = (sigma0, sample.sigma) {
                d += (s - s0).abs();
            }
            Ok(d)
        }
        Setting::Classification { .. } => {
            let unif = vec![1.0; truth.len()];
            l2g_norm(&transformed, truth, &unif, &chain.eval_weights)
        }
    }
}

/// Fraction of posterior draws farther than `radius` from the truth.
pub fn contraction_mass(
    chain: &Chain,
    truth: &[f64],
    radius: f64,
    setting: &Setting,
    sigma0: Option<f64>,
) -> Result<f64> {
    let mut far = 0usize;
    for s in &chain.samples {
        if sample_distance(s, truth, chain, setting, sigma0)? >= radius {
            far += 1;
        }
    }
    Ok(far as f64 / chain.samples.len() as f64)
}

/// Closed-form Gaussian conditioning for the clamped-hyperparameter
/// regression sub-model: posterior mean `K_a (K_a + σ² I)^{-1} Y` and
/// covariance `K_a − K_a (K_a + σ² I)^{-1} K_a` at the design, with
/// `(K_a)_{ij} = exp(−a² ||t_i − t_j||²)`.
pub fn conjugate_oracle(
    design: &[Vec<f64>],
    y: &[f64],
    a: f64,
    sigma: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if design.is_empty() {
        return Err(Error::EmptyDesign);
    }
    if design.len() != y.len() {
        return Err(Error::DimensionMismatch {
            left: design.len(),
            right: y.len(),
        });
    }
    let n = design.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = (-a * a * sq_dist(&design[i], &design[j])).exp();
        }
    }
    let mut sys = k.clone();
    for i in 0..n {
        sys[(i, i)] += sigma * sigma;
    }
    let chol = Cholesky::new(sys).ok_or(Error::FactorizationFailed { jitter: 0.0 })?;
    let alpha = chol.solve(&DVector::from_column_slice(y));
    let mean = (&k * &alpha).iter().cloned().collect();
    let cov = &k - &k * chol.solve(&k);
    Ok((mean, cov))
}
