//! Experiment harness: configuration, truth-function generators with
//! certified smoothness, theoretical rate formulas, contraction-rate and
//! adaptation experiments, the lemma verification suite, and file I/O.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bandwidth::GammaRootPrior;
use crate::error::{Error, Result};
use crate::field::{verify_bochner, GridSpec, SpectralMeasure};
use crate::posterior::{
    grid_quad_weights, posterior_functional, run_chain, sample_distance, transform_sample,
    ChainConfig, Dataset, Link, Setting,
};
use crate::rkhs::{
    nesting_check, normal_cdf, normal_quantile, scaling_isometry_check, unit_ball_pointwise_check,
    RkhsElement, Smoothness, TruthFunction,
};
use crate::util::{derive_seed, dot, ls_slope, median, spearman};
use crate::RandomSeed;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Truth-function selector inside a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    /// One of `weierstrass`, `smoothed-weierstrass`, `gaussian-bump`,
    /// `cosine`, `zero`.
    pub id: String,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub decay: Option<f64>,
    #[serde(default)]
    pub frequency: Option<usize>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

impl TruthSpec {
    pub fn named(id: &str) -> Self {
        Self {
            id: id.to_string(),
            alpha: None,
            decay: None,
            frequency: None,
            amplitude: 1.0,
        }
    }

    pub fn weierstrass(alpha: f64, amplitude: f64) -> Self {
        let id = if alpha < 1.0 {
            "weierstrass"
        } else {
            "smoothed-weierstrass"
        };
        Self {
            alpha: Some(alpha),
            amplitude,
            ..Self::named(id)
        }
    }

    pub fn gaussian_bump(decay: f64, amplitude: f64) -> Self {
        Self {
            decay: Some(decay),
            amplitude,
            ..Self::named("gaussian-bump")
        }
    }

    pub fn cosine(frequency: usize, amplitude: f64) -> Self {
        Self {
            frequency: Some(frequency),
            amplitude,
            ..Self::named("cosine")
        }
    }
}

/// Builds the truth function a configuration names.
pub fn make_truth(dim: usize, spec: &TruthSpec) -> Result<TruthFunction> {
    let truth = match spec.id.as_str() {
        "weierstrass" => {
            let alpha = spec
                .alpha
                .ok_or_else(|| Error::InvalidConfig("weierstrass needs alpha".into()))?;
            if !(0.0 < alpha && alpha < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "weierstrass needs 0 < alpha < 1, got {alpha}; use smoothed-weierstrass"
                )));
            }
            TruthFunction::weierstrass(dim, alpha)
        }
        "smoothed-weierstrass" => {
            let alpha = spec
                .alpha
                .ok_or_else(|| Error::InvalidConfig("smoothed-weierstrass needs alpha".into()))?;
            if alpha < 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "smoothed-weierstrass needs alpha >= 1, got {alpha}"
                )));
            }
            TruthFunction::weierstrass(dim, alpha)
        }
        "gaussian-bump" => TruthFunction::gaussian_bump(dim, 1.0, spec.decay.unwrap_or(1.0)),
        "cosine" => TruthFunction::cosine(dim, spec.frequency.unwrap_or(1)),
        "zero" => TruthFunction::zero(dim),
        other => {
            return Err(Error::InvalidConfig(format!("unknown truth id `{other}`")));
        }
    };
    Ok(truth.scaled(spec.amplitude))
}

/// A complete experiment description, JSON-serializable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `density`, `regression`, or `classification`.
    pub setting: String,
    /// Classification link: `logistic` (default) or `probit`.
    #[serde(default = "default_link")]
    pub link: String,
    pub dim: usize,
    pub truth: TruthSpec,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub prior_shape: f64,
    pub prior_rate: f64,
    /// Simulation noise scale (Regression only).
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    #[serde(default = "default_sigma_interval")]
    pub sigma_interval: (f64, f64),
    pub num_features: usize,
    pub burn_in: usize,
    pub scans: usize,
    pub thin: usize,
    pub seed: RandomSeed,
    /// Number of draws emitted by the `sample-prior` command.
    #[serde(default = "default_prior_draws")]
    pub prior_draws: usize,
}

fn default_link() -> String {
    "logistic".into()
}

fn default_sigma0() -> f64 {
    0.3
}

fn default_sigma_interval() -> (f64, f64) {
    (0.1, 10.0)
}

fn default_prior_draws() -> usize {
    100
}

impl ExperimentConfig {
    /// Baseline one-dimensional regression experiment.
    pub fn default_regression() -> Self {
        Self {
            setting: "regression".into(),
            link: default_link(),
            dim: 1,
            truth: TruthSpec::weierstrass(1.0, 1.0),
            n_grid: vec![100, 400, 1600, 6400],
            replications: 10,
            prior_shape: 1.0,
            prior_rate: 1.0,
            sigma0: default_sigma0(),
            sigma_interval: default_sigma_interval(),
            num_features: 96,
            burn_in: 400,
            scans: 1200,
            thin: 4,
            seed: 1,
            prior_draws: default_prior_draws(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.len() < 4 {
            return Err(Error::InvalidConfig("n_grid needs at least 4 points".into()));
        }
        for w in self.n_grid.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig("n_grid must be strictly increasing".into()));
            }
        }
        if self.replications < 1 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        self.setting_enum()?;
        Ok(())
    }

    pub fn setting_enum(&self) -> Result<Setting> {
        match self.setting.as_str() {
            "density" => Ok(Setting::Density),
            "regression" => Ok(Setting::Regression {
                sigma_lo: self.sigma_interval.0,
                sigma_hi: self.sigma_interval.1,
            }),
            "classification" => Ok(Setting::Classification {
                link: match self.link.as_str() {
                    "logistic" => Link::Logistic,
                    "probit" => Link::Probit,
                    other => {
                        return Err(Error::InvalidConfig(format!("unknown link `{other}`")));
                    }
                },
            }),
            other => Err(Error::InvalidConfig(format!("unknown setting `{other}`"))),
        }
    }

    pub fn prior(&self) -> Result<GammaRootPrior> {
        GammaRootPrior::new(self.dim, self.prior_shape, self.prior_rate)
    }

    pub fn chain_config(&self, seed: RandomSeed) -> ChainConfig {
        let mut c = ChainConfig::new(self.dim, seed);
        c.num_features = self.num_features;
        c.burn_in = self.burn_in;
        c.scans = self.scans;
        c.thin = self.thin;
        c
    }
}

// ---------------------------------------------------------------------------
// Data simulation
// ---------------------------------------------------------------------------

/// Draws a dataset from the truth under a setting. Density covariates come
/// from the exp-normalized truth by rejection; regression uses a fixed
/// equispaced design; classification covariates are uniform on `[0,1]^d`.
pub fn simulate_data(
    truth: &TruthFunction,
    setting: &Setting,
    dim: usize,
    n: usize,
    sigma0: f64,
    seed: RandomSeed,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match setting {
        Setting::Density => {
            // rejection against the uniform envelope sup e^{w0}
            let grid = crate::rkhs::sup_eval_grid(dim);
            let sup = grid
                .iter()
                .map(|p| truth.eval(p))
                .fold(f64::NEG_INFINITY, f64::max);
            let bound = sup + 0.05; // log-scale safety margin for off-grid peaks
            let mut x = Vec::with_capacity(n);
            while x.len() < n {
                let cand: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
                let log_u = rng.gen::<f64>().ln();
                if truth.eval(&cand) - bound > log_u {
                    x.push(cand);
                }
            }
            Ok(Dataset::Density { x })
        }
        Setting::Regression { .. } => {
            let t = equispaced_design(dim, n);
            let y = t
                .iter()
                .map(|p| truth.eval(p) + sigma0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Ok(Dataset::Regression { t, y })
        }
        Setting::Classification { link } => {
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let cand: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
                let p = link.apply(truth.eval(&cand));
                y.push(u8::from(rng.gen::<f64>() < p));
                x.push(cand);
            }
            Ok(Dataset::Classification { x, y })
        }
    }
}

/// Fixed design: midpoints of `n` equal cells for `d = 1`; the first `n`
/// points of a near-square lattice for `d >= 2`.
pub fn equispaced_design(dim: usize, n: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        return (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect();
    }
    let side = (n as f64).powf(1.0 / dim as f64).ceil() as usize;
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; dim];
    'outer: loop {
        out.push(
            (0..dim)
                .map(|k| (idx[k] as f64 + 0.5) / side as f64)
                .collect(),
        );
        if out.len() == n {
            return out;
        }
        let mut k = 0;
        loop {
            if k == dim {
                break 'outer;
            }
            idx[k] += 1;
            if idx[k] < side {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Theoretical rates
// ---------------------------------------------------------------------------

/// Rate formulas: `ε_n = n^{-exponent} (log n)^{log_power}` in the direct
/// convention, and the split convention `ε_n = n^{-exponent}(log n)^{κ₁}`,
/// `ε̄_n = ε_n (log n)^{κ₂}` (Hölder case; κ's are NaN for analytic truths).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFormula {
    pub exponent: f64,
    pub log_power: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

/// Minimax-type contraction rate for a smoothness class in dimension `d`
/// with bandwidth-prior log-exponent `q`.
pub fn theoretical_rate(smoothness: Smoothness, dim: usize, q: f64) -> RateFormula {
    let d = dim as f64;
    match smoothness {
        Smoothness::Holder { alpha } => RateFormula {
            exponent: alpha / (2.0 * alpha + d),
            log_power: (4.0 * alpha + d) / (4.0 * alpha + 2.0 * d),
            kappa1: (1.0 + d).max(q) / (2.0 + d / alpha),
            kappa2: (1.0 + d - q) / 2.0,
        },
        Smoothness::Analytic { r, .. } => RateFormula {
            exponent: 0.5,
            log_power: if r >= 2.0 {
                d + 1.0
            } else {
                d + 1.0 + d / (2.0 * r)
            },
            kappa1: f64::NAN,
            kappa2: f64::NAN,
        },
    }
}

// ---------------------------------------------------------------------------
// Rate experiments
// ---------------------------------------------------------------------------

/// One experiment cell: a (sample size, replicate) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub n: usize,
    pub replicate: usize,
    /// Distance of the posterior mean estimand from the truth.
    pub risk_mean: f64,
    /// Median over draws of the per-draw distance.
    pub risk_median: f64,
    pub median_bandwidth: f64,
    pub accept_bandwidth: f64,
}

/// Output of a rate experiment.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub cells: Vec<CellResult>,
    /// Least-squares slope of log risk_mean against log n, with its SE.
    pub slope: f64,
    pub slope_se: f64,
    pub theory: RateFormula,
}

impl RateReport {
    /// Median posterior bandwidth across replicates at the largest n.
    pub fn median_bandwidth_at_max_n(&self) -> f64 {
        let max_n = self.cells.iter().map(|c| c.n).max().unwrap_or(0);
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.n == max_n)
            .map(|c| c.median_bandwidth)
            .collect();
        median(&v)
    }

    /// Median risk per sample size, ordered as the n-grid.
    pub fn median_risk_by_n(&self) -> Vec<(usize, f64)> {
        let mut ns: Vec<usize> = self.cells.iter().map(|c| c.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns.into_iter()
            .map(|n| {
                let v: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.n == n)
                    .map(|c| c.risk_mean)
                    .collect();
                (n, median(&v))
            })
            .collect()
    }
}

/// Runs the full grid of (n, replicate) cells for one truth and setting,
/// fitting a log-log risk slope. Each cell has its own derived seed, so the
/// report is reproducible and independent of execution order.
pub fn rate_experiment(config: &ExperimentConfig) -> Result<RateReport> {
    config.validate()?;
    let setting = config.setting_enum()?;
    let truth = make_truth(config.dim, &config.truth)?;
    let prior = config.prior()?;
    let eval_grid = GridSpec::uniform(config.dim, if config.dim == 1 { 513 } else { 65 })?;
    let eval_points = eval_grid.points();
    let eval_weights = grid_quad_weights(&eval_grid);
    let w0: Vec<f64> = eval_points.iter().map(|p| truth.eval(p)).collect();
    let truth_values = transform_sample(&w0, &eval_weights, &setting);

    let mut cells = Vec::new();
    for (i, &n) in config.n_grid.iter().enumerate() {
        for rep in 0..config.replications {
            let cell_seed = derive_seed(config.seed, (i as u64) * 1_000 + rep as u64);
            let data = simulate_data(
                &truth,
                &setting,
                config.dim,
                n,
                config.sigma0,
                derive_seed(cell_seed, 0),
            )?;
            let mut chain_cfg = config.chain_config(derive_seed(cell_seed, 1));
            // collapsed regression bandwidth moves cost O(n·M²); thin them
            // at large n, where each move mixes far better anyway
            chain_cfg.bandwidth_period = if n >= 1000 { 4 } else { 1 };
            let chain = run_chain(chain_cfg, data, setting, prior.clone())?;
            let summary = posterior_functional(&chain, &setting)?;
            let risk_mean = estimand_distance(&summary.mean, &truth_values, &eval_weights, &setting);
            let mut dists: Vec<f64> = chain
                .samples
                .iter()
                .map(|s| sample_distance(s, &truth_values, &chain, &setting, None))
                .collect::<Result<_>>()?;
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let risk_median = median(&dists);
            let bandwidths: Vec<f64> = chain.samples.iter().map(|s| s.bandwidth).collect();
            if !risk_mean.is_finite() || risk_mean <= 0.0 {
                // flagged cell: kept in the report, excluded from the fit
                eprintln!(
                    "warning: degenerate risk {risk_mean} in cell (n={n}, rep={rep}); excluded from the slope fit"
                );
            }
            cells.push(CellResult {
                n,
                replicate: rep,
                risk_mean,
                risk_median,
                median_bandwidth: median(&bandwidths),
                accept_bandwidth: chain.accept_bandwidth,
            });
        }
    }
    let fit_cells: Vec<&CellResult> = cells
        .iter()
        .filter(|c| c.risk_mean.is_finite() && c.risk_mean > 0.0)
        .collect();
    let xs: Vec<f64> = fit_cells.iter().map(|c| (c.n as f64).ln()).collect();
    let ys: Vec<f64> = fit_cells.iter().map(|c| c.risk_mean.ln()).collect();
    let (slope, slope_se) = ls_slope(&xs, &ys);
    Ok(RateReport {
        cells,
        slope,
        slope_se,
        theory: theoretical_rate(truth.smoothness(), config.dim, 0.0),
    })
}

/// Distance between the posterior-mean estimand and the truth on the
/// evaluation grid, in the setting's metric.
fn estimand_distance(
    estimate: &[f64],
    truth: &[f64],
    weights: &[f64],
    setting: &Setting,
) -> f64 {
    match setting {
        Setting::Density => {
            crate::posterior::hellinger(estimate, truth, weights).unwrap_or(f64::NAN)
        }
        _ => {
            let d2: f64 = estimate
                .iter()
                .zip(truth)
                .zip(weights)
                .map(|((a, b), q)| q * (a - b) * (a - b))
                .sum();
            d2.sqrt()
        }
    }
}

/// Paired rough/smooth experiment under one shared prior.
#[derive(Debug, Clone)]
pub struct AdaptationReport {
    pub rough: RateReport,
    pub smooth: RateReport,
    pub rough_median_bandwidth: f64,
    pub smooth_median_bandwidth: f64,
}

impl AdaptationReport {
    /// Smooth slope minus rough slope (negative when adaptation shows).
    pub fn slope_gap(&self) -> f64 {
        self.smooth.slope - self.rough.slope
    }
}

/// Runs the rough and smooth experiments, enforcing a shared prior, and
/// reports both slopes plus posterior bandwidths at the largest n.
pub fn adaptation_experiment(
    rough: &ExperimentConfig,
    smooth: &ExperimentConfig,
) -> Result<AdaptationReport> {
    if rough.prior_shape != smooth.prior_shape || rough.prior_rate != smooth.prior_rate {
        return Err(Error::Precondition(
            "adaptation experiment needs identical prior hyperparameters".into(),
        ));
    }
    let rough_report = rate_experiment(rough)?;
    let smooth_report = rate_experiment(smooth)?;
    Ok(AdaptationReport {
        rough_median_bandwidth: rough_report.median_bandwidth_at_max_n(),
        smooth_median_bandwidth: smooth_report.median_bandwidth_at_max_n(),
        rough: rough_report,
        smooth: smooth_report,
    })
}

/// Consistency check used by tests: risk decreases with n.
pub fn risk_spearman(report: &RateReport) -> f64 {
    let by_n = report.median_risk_by_n();
    let xs: Vec<f64> = by_n.iter().map(|(n, _)| *n as f64).collect();
    let ys: Vec<f64> = by_n.iter().map(|(_, r)| *r).collect();
    spearman(&xs, &ys)
}

// ---------------------------------------------------------------------------
// Lemma verification suite
// ---------------------------------------------------------------------------

/// One row of the verification report.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub check_id: String,
    pub lemma: String,
    pub parameters: String,
    pub observed: f64,
    pub bound: f64,
    pub pass: bool,
}

fn row(check_id: &str, lemma: &str, parameters: String, observed: f64, bound: f64) -> CheckRow {
    CheckRow {
        check_id: check_id.into(),
        lemma: lemma.into(),
        parameters,
        observed,
        bound,
        pass: observed <= bound,
    }
}

/// Runs the full lemma suite: Bochner consistency, the scaling isometry,
/// RKHS nesting, unit-ball pointwise bounds, the bandwidth tail bound, and
/// the normal-quantile inequalities. Every row states observed <= bound.
pub fn lemma_suite(seed: RandomSeed) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Bochner: covariance equals the Fourier transform of the spectral measure
    for dim in [1usize, 2] {
        let measure = SpectralMeasure::gaussian(dim, 1.0)?;
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let t: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            worst = worst.max(verify_bochner(&t, &measure)?);
        }
        rows.push(row(
            &format!("bochner-d{dim}"),
            "spectral-representation",
            format!("d={dim}, 50 random points"),
            worst,
            1e-6,
        ));
    }

    // Scaling isometry (norm preserved when ψ is rescaled with the measure)
    let base = SpectralMeasure::gaussian(1, 1.0)?;
    for (case, a) in [(0usize, 0.5f64), (1, 2.0), (2, 5.0), (3, 17.0)] {
        let (c1, c2, c3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let psi = move |lam: &[f64]| {
            Complex64::new(
                c1 * (-0.05 * lam[0] * lam[0]).exp() + c2 * (0.2 * lam[0]).cos(),
                c3 * (0.1 * lam[0]).sin(),
            )
        };
        let residual = scaling_isometry_check(psi, &base, a)?;
        rows.push(row(
            &format!("isometry-{case}"),
            "scaling-isometry",
            format!("a={a}"),
            residual,
            1e-6,
        ));
    }

    // Nesting: 60 random (ψ, a, b) cases
    for case in 0..60 {
        let (c1, c2): (f64, f64) = (rng.gen(), rng.gen());
        let psi = move |lam: &[f64]| {
            Complex64::new(
                c1 * (-0.02 * lam[0] * lam[0]).exp(),
                c2 * (0.15 * lam[0]).sin(),
            )
        };
        let a = 0.5 + rng.gen::<f64>() * 2.0;
        let b = a * (1.0 + rng.gen::<f64>() * 3.0);
        let r = nesting_check(psi, a, b, 1)?;
        rows.push(row(
            &format!("nesting-{case}"),
            "rkhs-nesting",
            format!("a={a:.3}, b={b:.3}"),
            r.norm2_at_b,
            r.norm_bound_factor * r.norm2_at_a + 1e-10,
        ));
    }

    // τ² = 2d by quadrature
    for dim in [1usize, 2] {
        let measure = SpectralMeasure::gaussian(dim, 1.0)?;
        let tau2 = measure.integrate(|lam| dot(lam, lam));
        rows.push(row(
            &format!("tau2-d{dim}"),
            "unit-ball-pointwise",
            format!("d={dim}"),
            (tau2 - 2.0 * dim as f64).abs(),
            1e-8,
        ));
    }

    // unit-ball pointwise bounds: 1000 random normalized elements
    {
        let measures: Vec<Arc<SpectralMeasure>> = [0.1, 1.0, 10.0]
            .iter()
            .map(|&a| SpectralMeasure::gaussian(1, a).map(Arc::new))
            .collect::<Result<_>>()?;
        let mut failures = 0usize;
        for case in 0..1000 {
            let mu = measures[case % measures.len()].clone();
            let vals: Vec<Complex64> = (0..mu.len())
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let h = RkhsElement::from_grid_values(mu, vals).normalized();
            let t = [rng.gen::<f64>()];
            if !unit_ball_pointwise_check(&h, &t)?.holds(1e-9) {
                failures += 1;
            }
        }
        rows.push(row(
            "pointwise-1000",
            "unit-ball-pointwise",
            "1000 cases, a in {0.1,1,10}".into(),
            failures as f64,
            0.0,
        ));
    }

    // bandwidth tail bound dominates the quadrature tail: 12 combinations
    for dim in [1usize, 2] {
        for shape in [1.0f64, 2.0] {
            for rate in [0.5f64, 1.0, 2.0] {
                let prior = GammaRootPrior::new(dim, shape, rate)?;
                let a = 5.0;
                let bound = prior.tail_bound(a)?;
                let tail = quadrature_tail(&prior, a, 60.0)?;
                rows.push(row(
                    &format!("tail-d{dim}-k{shape}-b{rate}"),
                    "bandwidth-tail",
                    format!("d={dim}, k={shape}, beta={rate}, a={a}"),
                    tail,
                    bound,
                ));
            }
        }
    }

    // normal quantile facts on dense grids (observed = worst violation)
    {
        let mut cdf_worst = f64::NEG_INFINITY;
        let mut lower_worst = f64::NEG_INFINITY;
        let mut upper_worst = f64::NEG_INFINITY;
        let mut half_worst = f64::NEG_INFINITY;
        for i in 1..=400 {
            let x = -8.0 + i as f64 * 0.02; // x in (-8, 0)
            if x < 0.0 {
                cdf_worst = cdf_worst.max(normal_cdf(x) - (-x * x / 2.0).exp());
            }
            let u = i as f64 / 401.0;
            let q = normal_quantile(u);
            lower_worst = lower_worst.max(-(2.0 * (1.0 / u).ln()).sqrt() - q);
            if u < 0.25 {
                upper_worst = upper_worst.max(q + 0.5 * (1.0 / u).ln().sqrt());
            }
            let xp = i as f64 * 0.02; // x in (0, 8]
            half_worst =
                half_worst.max(0.5 - normal_cdf((2.0 * xp).sqrt() + normal_quantile((-xp).exp())));
        }
        rows.push(row("quantile-cdf", "normal-quantile", "x in (-8,0)".into(), cdf_worst, 1e-12));
        rows.push(row(
            "quantile-lower",
            "normal-quantile",
            "u in (0,1)".into(),
            lower_worst,
            1e-9,
        ));
        rows.push(row(
            "quantile-upper",
            "normal-quantile",
            "u in (0,1/4)".into(),
            upper_worst,
            1e-9,
        ));
        rows.push(row(
            "quantile-half",
            "normal-quantile",
            "x in (0,8]".into(),
            half_worst,
            1e-12,
        ));
    }

    Ok(rows)
}

/// `P(A > a)` by direct trapezoid quadrature of the prior density.
fn quadrature_tail(prior: &GammaRootPrior, a: f64, a_hi: f64) -> Result<f64> {
    let n = 400_000usize;
    let h = (a_hi - a) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let x = a + h * i as f64;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += w * prior.density(x)?;
    }
    Ok(acc * h)
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

/// Serializes a float with 17 significant digits, round-trip safe.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_config(path: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(config)?)?;
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig = serde_json::from_str(&text)?;
    Ok(config)
}

/// Per-cell CSV of a rate report.
pub fn report_cells_csv(report: &RateReport) -> String {
    let mut out = String::from(
        "n,replicate,risk_mean,risk_median,median_bandwidth,accept_bandwidth\n",
    );
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.n,
            c.replicate,
            fmt_float(c.risk_mean),
            fmt_float(c.risk_median),
            fmt_float(c.median_bandwidth),
            fmt_float(c.accept_bandwidth),
        );
    }
    out
}

/// Summary CSV carrying the fitted slope next to the theoretical values.
pub fn report_summary_csv(report: &RateReport) -> String {
    let mut out =
        String::from("slope,slope_se,theory_exponent,theory_log_power,kappa1,kappa2\n");
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        fmt_float(report.slope),
        fmt_float(report.slope_se),
        fmt_float(report.theory.exponent),
        fmt_float(report.theory.log_power),
        fmt_float(report.theory.kappa1),
        fmt_float(report.theory.kappa2),
    );
    out
}

/// Parses a per-cell CSV back into cells, with line-numbered schema errors.
pub fn parse_cells_csv(path: &str, text: &str) -> Result<Vec<CellResult>> {
    let schema_err = |line: usize, message: String| Error::Schema {
        path: path.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| schema_err(1, "empty file".into()))?;
    let expected = "n,replicate,risk_mean,risk_median,median_bandwidth,accept_bandwidth";
    if header != expected {
        return Err(schema_err(1, format!("expected header `{expected}`")));
    }
    let mut cells = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(schema_err(lineno, format!("expected 6 fields, got {}", fields.len())));
        }
        let n: usize = fields[0]
            .parse()
            .map_err(|e| schema_err(lineno, format!("bad n: {e}")))?;
        let replicate: usize = fields[1]
            .parse()
            .map_err(|e| schema_err(lineno, format!("bad replicate: {e}")))?;
        let mut vals = [0.0f64; 4];
        for (k, f) in fields[2..].iter().enumerate() {
            vals[k] = f
                .parse()
                .map_err(|e| schema_err(lineno, format!("bad float in field {}: {e}", k + 3)))?;
        }
        cells.push(CellResult {
            n,
            replicate,
            risk_mean: vals[0],
            risk_median: vals[1],
            median_bandwidth: vals[2],
            accept_bandwidth: vals[3],
        });
    }
    Ok(cells)
}

/// CSV of the lemma verification rows.
pub fn checks_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from("check_id,lemma,parameters,observed,bound,pass\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},\"{}\",{},{},{}",
            r.check_id,
            r.lemma,
            r.parameters,
            fmt_float(r.observed),
            fmt_float(r.bound),
            r.pass,
        );
    }
    out
}

/// Reads a dataset CSV for a setting. Density rows: `t1..td`; regression:
/// `t1..td,y`; classification: `t1..td,label`.
pub fn parse_dataset_csv(path: &str, text: &str, setting: &Setting, dim: usize) -> Result<Dataset> {
    let schema_err = |line: usize, message: String| Error::Schema {
        path: path.to_string(),
        line,
        message,
    };
    let expect_cols = match setting {
        Setting::Density => dim,
        _ => dim + 1,
    };
    let mut covs = Vec::new();
    let mut resp = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() || (idx == 0 && line.starts_with('t')) {
            continue; // optional header
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expect_cols {
            return Err(schema_err(
                lineno,
                format!("expected {expect_cols} fields, got {}", fields.len()),
            ));
        }
        let mut p = Vec::with_capacity(dim);
        for f in &fields[..dim] {
            p.push(
                f.parse::<f64>()
                    .map_err(|e| schema_err(lineno, format!("bad covariate: {e}")))?,
            );
        }
        covs.push(p);
        if expect_cols > dim {
            resp.push(
                fields[dim]
                    .parse::<f64>()
                    .map_err(|e| schema_err(lineno, format!("bad response: {e}")))?,
            );
        }
    }
    match setting {
        Setting::Density => Ok(Dataset::Density { x: covs }),
        Setting::Regression { .. } => Ok(Dataset::Regression { t: covs, y: resp }),
        Setting::Classification { .. } => {
            let labels = resp
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if v == 0.0 {
                        Ok(0u8)
                    } else if v == 1.0 {
                        Ok(1u8)
                    } else {
                        Err(schema_err(i + 1, format!("label must be 0 or 1, got {v}")))
                    }
                })
                .collect::<Result<_>>()?;
            Ok(Dataset::Classification { x: covs, y: labels })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::ks_statistic;
    use approx::assert_abs_diff_eq;

    #[test]
    fn make_truth_examples() {
        let c = make_truth(1, &TruthSpec::cosine(1, 1.0)).unwrap();
        assert_abs_diff_eq!(c.eval(&[0.0]), 1.0);

        // empirical Hölder quotient stays bounded under dyadic refinement
        let w = make_truth(1, &TruthSpec::weierstrass(0.5, 1.0)).unwrap();
        let mut quotients = Vec::new();
        for level in 4..=12u32 {
            let n = 1usize << level;
            let h = 1.0 / n as f64;
            let mut q: f64 = 0.0;
            for i in 0..n {
                let a = w.eval(&[i as f64 * h]);
                let b = w.eval(&[(i + 1) as f64 * h]);
                q = q.max((a - b).abs() / h.sqrt());
            }
            quotients.push(q);
        }
        let max = quotients.iter().cloned().fold(0.0f64, f64::max);
        let min = quotients.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 3.0, "quotients {quotients:?}");

        // gaussian-bump analytic certificate: ∫ e^{γλ²} |ŵ|² dλ finite and
        // matching the closed-form Gaussian integral below the threshold
        let g = make_truth(1, &TruthSpec::gaussian_bump(1.0, 1.0)).unwrap();
        let Smoothness::Analytic { gamma, r } = g.smoothness() else {
            panic!("expected analytic certificate");
        };
        assert_eq!(r, 2.0);
        let gamma_test = 0.8 * gamma;
        let mut acc = 0.0;
        let n = 20_000;
        let h = 40.0 / n as f64;
        for i in 0..=n {
            let lam = -20.0 + h * i as f64;
            let wv = g.fourier(&[lam]).unwrap().norm_sqr();
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * (gamma_test * lam * lam).exp() * wv;
        }
        acc *= h;
        // |ŵ|² = (4π)^{-1} e^{-λ²/2}; ∫ e^{(γt-1/2)λ²} dλ = √(π/(1/2-γt))
        let exact = (std::f64::consts::PI / (0.5 - gamma_test)).sqrt()
            / (4.0 * std::f64::consts::PI);
        assert_abs_diff_eq!(acc, exact, epsilon = 1e-8);

        assert!(make_truth(1, &TruthSpec::named("mystery")).is_err());
        assert!(make_truth(1, &TruthSpec::weierstrass(0.5, 1.0)).is_ok());
        // weierstrass with alpha >= 1 must go through smoothed-weierstrass
        let mut bad = TruthSpec::named("weierstrass");
        bad.alpha = Some(1.5);
        assert!(make_truth(1, &bad).is_err());
    }

    #[test]
    fn simulate_data_examples() {
        // density with w0 ≡ 0 → uniform sample
        let z = TruthFunction::zero(1);
        let Dataset::Density { x } =
            simulate_data(&z, &Setting::Density, 1, 100_000, 0.0, 11).unwrap()
        else {
            panic!()
        };
        let mut vals: Vec<f64> = x.iter().map(|p| p[0]).collect();
        let ks = ks_statistic(&mut vals, |v| v.clamp(0.0, 1.0));
        assert!(ks < 0.02, "KS {ks}");

        // σ0 = 0 → exact responses
        let w = make_truth(1, &TruthSpec::cosine(1, 1.0)).unwrap();
        let Dataset::Regression { t, y } =
            simulate_data(&w, &Setting::default_regression(), 1, 50, 0.0, 3).unwrap()
        else {
            panic!()
        };
        for (p, yi) in t.iter().zip(&y) {
            assert_abs_diff_eq!(*yi, w.eval(p), epsilon = 1e-14);
        }

        // w0 ≡ 0 classification → frequency near 1/2
        let n = 40_000;
        let Dataset::Classification { y, .. } = simulate_data(
            &z,
            &Setting::Classification {
                link: Link::Logistic,
            },
            1,
            n,
            0.0,
            5,
        )
        .unwrap() else {
            panic!()
        };
        let freq = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        assert!((freq - 0.5).abs() < 1.5 / (n as f64).sqrt() * 3.0, "freq {freq}");
    }

    #[test]
    fn theoretical_rate_formulas() {
        let r = theoretical_rate(Smoothness::Holder { alpha: 1.0 }, 1, 0.0);
        assert_abs_diff_eq!(r.exponent, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.log_power, 5.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.kappa1, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.kappa2, 1.0, epsilon = 1e-15);

        let r = theoretical_rate(Smoothness::Holder { alpha: 2.0 }, 1, 0.0);
        assert_abs_diff_eq!(r.exponent, 2.0 / 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.log_power, 9.0 / 10.0, epsilon = 1e-15);

        let r = theoretical_rate(Smoothness::Analytic { gamma: 1.0, r: 2.0 }, 1, 0.0);
        assert_abs_diff_eq!(r.exponent, 0.5);
        assert_abs_diff_eq!(r.log_power, 2.0);
        let r = theoretical_rate(Smoothness::Analytic { gamma: 1.0, r: 1.0 }, 1, 0.0);
        assert_abs_diff_eq!(r.log_power, 2.5);

        // continuity in α
        let mut prev = theoretical_rate(Smoothness::Holder { alpha: 0.1 }, 1, 0.0);
        for i in 1..100 {
            let alpha = 0.1 + i as f64 * 0.05;
            let cur = theoretical_rate(Smoothness::Holder { alpha }, 1, 0.0);
            assert!((cur.exponent - prev.exponent).abs() < 0.04);
            assert!((cur.log_power - prev.log_power).abs() < 0.04);
            prev = cur;
        }
    }

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default_regression();
        c.truth = TruthSpec::named("zero");
        c.n_grid = vec![25, 100, 400, 1600];
        c.replications = 3;
        c.num_features = 32;
        c.burn_in = 100;
        c.scans = 300;
        c.thin = 3;
        c.seed = 77;
        c
    }

    #[test]
    fn rate_experiment_consistency_sanity() {
        let report = rate_experiment(&tiny_config()).unwrap();
        assert_eq!(report.cells.len(), 12);
        for c in &report.cells {
            assert!(c.risk_mean.is_finite() && c.risk_mean > 0.0);
        }
        let rho = risk_spearman(&report);
        assert!(rho <= -0.9, "spearman {rho}");
    }

    #[test]
    fn experiment_reproducibility_and_csv_roundtrip() {
        let cfg = tiny_config();
        let r1 = rate_experiment(&cfg).unwrap();
        let r2 = rate_experiment(&cfg).unwrap();
        let csv1 = report_cells_csv(&r1);
        let csv2 = report_cells_csv(&r2);
        assert_eq!(csv1, csv2);

        let cells = parse_cells_csv("mem", &csv1).unwrap();
        assert_eq!(cells, r1.cells);

        // constant column count
        for line in csv1.lines() {
            assert_eq!(line.split(',').count(), 6);
        }

        // schema errors carry line numbers
        let bad = csv1.replacen("2.", "x.", 1);
        match parse_cells_csv("mem", &bad) {
            Err(Error::Schema { line, .. }) => assert!(line >= 2),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn config_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let cfg = ExperimentConfig::default_regression();
        write_config(&path, &cfg).unwrap();
        let back = load_config(&path).unwrap();
        assert_eq!(cfg, back);

        // unknown keys are named in the error
        let mut raw: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        raw["mystery_key"] = serde_json::json!(1);
        std::fs::write(&path, raw.to_string()).unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("mystery_key"), "{err}");
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default_regression();
        c.n_grid = vec![100, 400, 1600];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default_regression();
        c.n_grid = vec![100, 400, 400, 1600];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default_regression();
        c.setting = "surveying".into();
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default_regression().validate().is_ok());
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let setting = Setting::default_regression();
        let text = "t1,y\n0.25,1.5\n0.75,-0.5\n";
        let Dataset::Regression { t, y } = parse_dataset_csv("mem", text, &setting, 1).unwrap()
        else {
            panic!()
        };
        assert_eq!(t, vec![vec![0.25], vec![0.75]]);
        assert_eq!(y, vec![1.5, -0.5]);

        let bad = "t1,y\n0.25\n";
        match parse_dataset_csv("mem", bad, &setting, 1) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other:?}"),
        }

        let cls = "0.2,1\n0.8,0\n";
        let Dataset::Classification { y, .. } = parse_dataset_csv(
            "mem",
            cls,
            &Setting::Classification {
                link: Link::Logistic,
            },
            1,
        )
        .unwrap() else {
            panic!()
        };
        assert_eq!(y, vec![1, 0]);
    }

    #[test]
    fn lemma_suite_all_pass() {
        let rows = lemma_suite(2024).unwrap();
        assert!(rows.len() > 70);
        for r in &rows {
            assert!(r.pass, "failed check {}: {} vs {}", r.check_id, r.observed, r.bound);
        }
        let csv = checks_csv(&rows);
        assert!(csv.starts_with("check_id,lemma,parameters,observed,bound,pass\n"));
        assert_eq!(csv.lines().count(), rows.len() + 1);
    }

    #[test]
    fn equispaced_design_properties() {
        let d1 = equispaced_design(1, 5);
        assert_eq!(d1[0], vec![0.1]);
        assert_eq!(d1[4], vec![0.9]);
        let d2 = equispaced_design(2, 7);
        assert_eq!(d2.len(), 7);
        for p in &d2 {
            assert!(p.iter().all(|&c| (0.0..=1.0).contains(&c)));
        }
    }
}
