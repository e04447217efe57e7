//! The random rescaling (bandwidth) variable `A`.
//!
//! `A^d` carries a Gamma distribution, so the density of `A` sits inside the
//! polynomial-times-exponential envelope
//! `C1 a^p exp(-D1 a^d log^q a) <= g(a) <= C2 a^p exp(-D2 a^d log^q a)`
//! with `q = 0`. A generalized prior with `q > 0` is provided as well, sampled
//! through a quadrature-built inverse CDF.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma as GammaDist;
use statrs::function::gamma::{gamma, gamma_lr};

use crate::error::{Error, Result};
use crate::RandomSeed;

/// Parameters of the density envelope, including the dimension the `a^d`
/// exponent refers to and the threshold above which the envelope is asserted.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeParams {
    pub dim: usize,
    pub p: f64,
    pub q: f64,
    pub c1: f64,
    pub d1: f64,
    pub c2: f64,
    pub d2: f64,
    pub a_min: f64,
}

impl EnvelopeParams {
    pub fn new(
        dim: usize,
        p: f64,
        q: f64,
        c1: f64,
        d1: f64,
        c2: f64,
        d2: f64,
        a_min: f64,
    ) -> Result<Self> {
        if p < 0.0 || q < 0.0 || c1 <= 0.0 || c2 <= 0.0 || d1 <= 0.0 || d2 <= 0.0 {
            return Err(Error::InvalidConfig(
                "envelope parameters must be positive (p, q nonnegative)".into(),
            ));
        }
        if c1 > c2 || d2 > d1 {
            return Err(Error::InvalidConfig(
                "empty envelope: need C1 <= C2 and D2 <= D1".into(),
            ));
        }
        Ok(Self {
            dim,
            p,
            q,
            c1,
            d1,
            c2,
            d2,
            a_min,
        })
    }

    fn shape(&self, a: f64, c: f64, d_rate: f64) -> f64 {
        c * a.powf(self.p) * (-d_rate * a.powi(self.dim as i32) * a.ln().powf(self.q)).exp()
    }

    pub fn lower(&self, a: f64) -> f64 {
        self.shape(a, self.c1, self.d1)
    }

    pub fn upper(&self, a: f64) -> f64 {
        self.shape(a, self.c2, self.d2)
    }
}

/// Checks the sandwich `lower(a) <= g(a) <= upper(a)` on a grid of scales and
/// returns the worst margin (zero when the density equals its own envelope).
pub fn envelope_check<F: Fn(f64) -> f64>(
    env: &EnvelopeParams,
    g: F,
    a_grid: &[f64],
) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for &a in a_grid {
        if a < env.a_min {
            return Err(Error::Precondition(format!(
                "grid point {a} below envelope threshold {}",
                env.a_min
            )));
        }
        let v = g(a);
        let lo = env.lower(a);
        let hi = env.upper(a);
        let margin = (v - lo).min(hi - v);
        if margin < -1e-12 * hi.max(v).max(1e-300) {
            return Err(Error::EnvelopeViolated { at: a });
        }
        worst = worst.min(margin);
    }
    Ok(worst.max(0.0))
}

/// The bandwidth prior in which `A^d ~ Gamma(shape, rate)`, so
/// `g(a) = d rate^shape / Γ(shape) a^{d shape - 1} e^{-rate a^d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRootPrior {
    dim: usize,
    shape: f64,
    rate: f64,
}

impl GammaRootPrior {
    pub fn new(dim: usize, shape: f64, rate: f64) -> Result<Self> {
        if dim < 1 || shape <= 0.0 || rate <= 0.0 {
            return Err(Error::InvalidConfig(
                "GammaRootPrior needs dim >= 1, shape > 0, rate > 0".into(),
            ));
        }
        Ok(Self { dim, shape, rate })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn density(&self, a: f64) -> Result<f64> {
        Ok(self.log_density(a)?.exp())
    }

    pub fn log_density(&self, a: f64) -> Result<f64> {
        if a <= 0.0 {
            return Err(Error::Precondition(format!(
                "density argument must be positive, got {a}"
            )));
        }
        let d = self.dim as f64;
        Ok(d.ln() + self.shape * self.rate.ln() - gamma(self.shape).ln()
            + (d * self.shape - 1.0) * a.ln()
            - self.rate * a.powi(self.dim as i32))
    }

    /// CDF `P(A <= a)` through the Gamma CDF of `A^d`.
    pub fn cdf(&self, a: f64) -> f64 {
        if a <= 0.0 {
            0.0
        } else {
            gamma_lr(self.shape, self.rate * a.powi(self.dim as i32))
        }
    }

    pub fn sample(&self, seed: RandomSeed) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> f64 {
        let gamma = GammaDist::new(self.shape, 1.0 / self.rate).unwrap();
        let g: f64 = gamma.sample(rng);
        g.powf(1.0 / self.dim as f64)
    }

    /// Median of `A`, used as a neutral chain initializer.
    pub fn median(&self) -> f64 {
        // bisection on the CDF
        let (mut lo, mut hi) = (1e-8, 1.0);
        while self.cdf(hi) < 0.5 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// The envelope this density satisfies exactly for `a >= e`:
    /// `p = d shape - 1`, `q = 0`, `D1 = D2 = rate`, `C1 = C2 = d rate^shape / Γ(shape)`.
    pub fn envelope(&self) -> EnvelopeParams {
        let d = self.dim as f64;
        let c = d * self.rate.powf(self.shape) / gamma(self.shape);
        EnvelopeParams::new(
            self.dim,
            d * self.shape - 1.0,
            0.0,
            c,
            self.rate,
            c,
            self.rate,
            std::f64::consts::E,
        )
        .expect("derived envelope is valid")
    }

    /// Tail bound `P(A > a) <= 2 C2 a^{p-d+1} exp(-D2 a^d (log a)^q) / (D2 d (log a)^q)`,
    /// asserted for `a > e` with `a^d (log a)^q > 2|p-d+1| / (D2 d)`.
    pub fn tail_bound(&self, a: f64) -> Result<f64> {
        tail_bound(&self.envelope(), a)
    }
}

/// The tail bound evaluated for arbitrary envelope parameters.
pub fn tail_bound(env: &EnvelopeParams, a: f64) -> Result<f64> {
    let d = env.dim as f64;
    if a <= std::f64::consts::E {
        return Err(Error::Precondition(format!(
            "tail bound requires a > e, got {a}"
        )));
    }
    let log_pow = a.ln().powf(env.q);
    let threshold = 2.0 * (env.p - d + 1.0).abs() / (env.d2 * d);
    if a.powi(env.dim as i32) * log_pow <= threshold {
        return Err(Error::Precondition(format!(
            "tail bound requires a^d (log a)^q > {threshold}, got {}",
            a.powi(env.dim as i32) * log_pow
        )));
    }
    Ok(2.0 * env.c2 * a.powf(env.p - d + 1.0)
        * (-env.d2 * a.powi(env.dim as i32) * log_pow).exp()
        / (env.d2 * d * log_pow))
}

/// Generalized bandwidth prior with density proportional to
/// `a^p exp(-D a^d (max(1, log a))^q)`, which satisfies the envelope with the
/// given `q` exactly above `a = e`. Sampled by a quadrature-built inverse CDF.
#[derive(Debug, Clone)]
pub struct GeneralizedBandwidthPrior {
    dim: usize,
    p: f64,
    d_rate: f64,
    q: f64,
    norm: f64,
    /// CDF table on a uniform grid over `[0, a_max]`.
    grid_step: f64,
    cdf_table: Vec<f64>,
}

impl GeneralizedBandwidthPrior {
    pub fn new(dim: usize, p: f64, d_rate: f64, q: f64) -> Result<Self> {
        if dim < 1 || p < 0.0 || d_rate <= 0.0 || q < 0.0 {
            return Err(Error::InvalidConfig(
                "generalized prior needs dim >= 1, p >= 0, D > 0, q >= 0".into(),
            ));
        }
        let unnorm = |a: f64| -> f64 {
            if a <= 0.0 {
                // limit as a -> 0+
                if p == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                a.powf(p) * (-d_rate * a.powi(dim as i32) * a.ln().max(1.0).powf(q)).exp()
            }
        };
        // find a_max where the density has underflown
        let mut a_max = 2.0;
        while unnorm(a_max) > 1e-280 {
            a_max *= 1.5;
        }
        let n = 16_384;
        let h = a_max / n as f64;
        let mut cdf_table = Vec::with_capacity(n + 1);
        cdf_table.push(0.0);
        let mut acc = 0.0;
        let mut prev = unnorm(0.0);
        for i in 1..=n {
            let cur = unnorm(h * i as f64);
            acc += 0.5 * h * (prev + cur);
            cdf_table.push(acc);
            prev = cur;
        }
        let norm = acc;
        for v in cdf_table.iter_mut() {
            *v /= norm;
        }
        Ok(Self {
            dim,
            p,
            d_rate,
            q,
            norm,
            grid_step: h,
            cdf_table,
        })
    }

    pub fn density(&self, a: f64) -> Result<f64> {
        if a <= 0.0 {
            return Err(Error::Precondition(format!(
                "density argument must be positive, got {a}"
            )));
        }
        Ok(a.powf(self.p)
            * (-self.d_rate * a.powi(self.dim as i32) * a.ln().max(1.0).powf(self.q)).exp()
            / self.norm)
    }

    pub fn cdf(&self, a: f64) -> f64 {
        if a <= 0.0 {
            return 0.0;
        }
        let pos = a / self.grid_step;
        let i = pos.floor() as usize;
        if i + 1 >= self.cdf_table.len() {
            return 1.0;
        }
        let frac = pos - i as f64;
        self.cdf_table[i] * (1.0 - frac) + self.cdf_table[i + 1] * frac
    }

    pub fn sample(&self, seed: RandomSeed) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        // binary search the CDF table, then interpolate linearly
        let mut lo = 0usize;
        let mut hi = self.cdf_table.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf_table[mid] < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c0 = self.cdf_table[lo];
        let c1 = self.cdf_table[hi];
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        (lo as f64 + frac) * self.grid_step
    }

    pub fn envelope(&self) -> EnvelopeParams {
        let c = 1.0 / self.norm;
        EnvelopeParams::new(
            self.dim,
            self.p,
            self.q,
            c,
            self.d_rate,
            c,
            self.d_rate,
            std::f64::consts::E,
        )
        .expect("derived envelope is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::ks_statistic;
    use approx::assert_abs_diff_eq;

    #[test]
    fn density_closed_forms() {
        let p1 = GammaRootPrior::new(1, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(p1.density(2.0).unwrap(), (-2.0f64).exp(), epsilon = 1e-12);
        let p2 = GammaRootPrior::new(2, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            p2.density(1.0).unwrap(),
            2.0 * (-1.0f64).exp(),
            epsilon = 1e-12
        );
        assert!(p1.density(0.0).is_err());
        assert!(p1.density(-1.0).is_err());
    }

    // trapezoid quadrature oracle for ∫ g
    fn integral_of_density<F: Fn(f64) -> f64>(g: F, a_max: f64, n: usize) -> f64 {
        let h = a_max / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let a0 = (h * i as f64).max(1e-12);
            let a1 = h * (i + 1) as f64;
            acc += 0.5 * h * (g(a0) + g(a1));
        }
        acc
    }

    #[test]
    fn density_integrates_to_one() {
        for (dim, k, b) in [(1usize, 1.0, 1.0), (2, 2.0, 0.5), (1, 2.0, 2.0), (3, 1.5, 1.0)] {
            let p = GammaRootPrior::new(dim, k, b).unwrap();
            let i = integral_of_density(|a| p.density(a).unwrap(), 60.0, 400_000);
            assert_abs_diff_eq!(i, 1.0, epsilon = 1e-6);
        }
        // the k=1, β=1, d=1 case admits the sharper tolerance of the contract
        let p = GammaRootPrior::new(1, 1.0, 1.0).unwrap();
        let i = integral_of_density(|a| p.density(a).unwrap(), 80.0, 2_000_000);
        assert_abs_diff_eq!(i, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn sampling_moments_and_tail() {
        let n = 1_000_000usize;
        for (dim, k, b) in [(1usize, 1.0, 1.0), (2, 2.0, 1.0)] {
            let p = GammaRootPrior::new(dim, k, b).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mean_ad: f64 = (0..n)
                .map(|_| p.sample_with(&mut rng).powi(dim as i32))
                .sum::<f64>()
                / n as f64;
            let band = 3.0 * k.sqrt() / b / (n as f64).sqrt();
            assert!((mean_ad - k / b).abs() < band, "mean {mean_ad} vs {}", k / b);
        }
        let p = GammaRootPrior::new(1, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let over: usize = (0..n).filter(|_| p.sample_with(&mut rng) > 2.0).count();
        assert!((over as f64 / n as f64 - (-2.0f64).exp()).abs() < 0.002);
        assert_eq!(p.sample(5), p.sample(5));
    }

    #[test]
    fn tail_bound_examples() {
        let p1 = GammaRootPrior::new(1, 1.0, 1.0).unwrap();
        let b = p1.tail_bound(3.0).unwrap();
        assert_abs_diff_eq!(b, 2.0 * (-3.0f64).exp(), epsilon = 1e-12);
        assert!(b >= (-3.0f64).exp());

        let p2 = GammaRootPrior::new(2, 1.0, 1.0).unwrap();
        // quadrature oracle for ∫_3^∞ 2a e^{-a^2} da = e^{-9}
        let tail = integral_of_density(|a| p2.density(a).unwrap(), 30.0, 300_000)
            - integral_of_density(|a| p2.density(a).unwrap(), 3.0, 30_000);
        assert_abs_diff_eq!(tail, (-9.0f64).exp(), epsilon = 1e-8);
        assert!(p2.tail_bound(3.0).unwrap() >= tail);

        // decreasing over [3, 20]
        let mut prev = f64::INFINITY;
        let mut a = 3.0;
        while a <= 20.0 {
            let v = p1.tail_bound(a).unwrap();
            assert!(v < prev);
            prev = v;
            a += 0.5;
        }

        assert!(p1.tail_bound(2.0).is_err()); // a <= e
    }

    #[test]
    fn tail_bound_dominates_quadrature_tail() {
        for dim in [1usize, 2] {
            for k in [1.0, 2.0] {
                for b in [0.5, 1.0, 2.0] {
                    let p = GammaRootPrior::new(dim, k, b).unwrap();
                    let mut a = 3.0;
                    while a < 25.0 {
                        // integrate the tail itself so quadrature error stays
                        // proportional to the tail, not to the total mass
                        let h = (100.0 - a) / 400_000f64;
                        let tail: f64 = (0..400_000)
                            .map(|i| {
                                let x0 = a + h * i as f64;
                                let x1 = x0 + h;
                                0.5 * h * (p.density(x0).unwrap() + p.density(x1).unwrap())
                            })
                            .sum();
                        if tail < 1e-280 {
                            break;
                        }
                        if let Ok(bound) = p.tail_bound(a) {
                            assert!(
                                bound >= tail - 1e-10,
                                "d={dim} k={k} b={b} a={a}: bound {bound} < tail {tail}"
                            );
                        }
                        a *= 1.5;
                    }
                }
            }
        }
    }

    #[test]
    fn envelope_self_consistency() {
        let p = GammaRootPrior::new(1, 1.0, 1.0).unwrap();
        let env = p.envelope();
        let grid: Vec<f64> = (0..100)
            .map(|i| std::f64::consts::E + i as f64 * (50.0 - std::f64::consts::E) / 99.0)
            .collect();
        let slack = envelope_check(&env, |a| p.density(a).unwrap(), &grid).unwrap();
        assert!(slack.abs() < 1e-12, "slack = {slack}");

        // widened envelope passes with positive slack
        let mut wide = env.clone();
        wide.c1 /= 2.0;
        wide.c2 *= 2.0;
        let slack = envelope_check(&wide, |a| p.density(a).unwrap(), &grid).unwrap();
        assert!(slack > 0.0);

        // too-fast decay in the upper envelope fails for large a
        let mut bad = env.clone();
        bad.d1 = 1.5;
        bad.d2 = 1.5; // > β = 1
        assert!(matches!(
            envelope_check(&bad, |a| p.density(a).unwrap(), &[10.0]),
            Err(Error::EnvelopeViolated { .. })
        ));
    }

    #[test]
    fn envelope_ordering_enforced() {
        assert!(EnvelopeParams::new(1, 0.0, 0.0, 2.0, 1.0, 1.0, 1.0, 1.0).is_err()); // C1 > C2
        assert!(EnvelopeParams::new(1, 0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 1.0).is_err()); // D2 > D1
    }

    #[test]
    fn samples_match_density_ks() {
        let p = GammaRootPrior::new(2, 1.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut samples: Vec<f64> = (0..100_000).map(|_| p.sample_with(&mut rng)).collect();
        // CDF by quadrature of g (independent of the sampling path)
        let n = 20_000;
        let a_max = 5.0;
        let h = a_max / n as f64;
        let mut table = vec![0.0];
        let mut acc = 0.0;
        for i in 1..=n {
            let a0 = (h * (i - 1) as f64).max(1e-12);
            let a1 = h * i as f64;
            acc += 0.5 * h * (p.density(a0).unwrap() + p.density(a1).unwrap());
            table.push(acc);
        }
        let cdf = |x: f64| -> f64 {
            if x <= 0.0 {
                return 0.0;
            }
            let pos = (x / h).min(n as f64);
            let i = pos.floor() as usize;
            if i >= n {
                return 1.0;
            }
            table[i] + (pos - i as f64) * (table[i + 1] - table[i])
        };
        let d = ks_statistic(&mut samples, cdf);
        assert!(d < 0.01, "KS = {d}");
    }

    #[test]
    fn generalized_prior_roundtrip() {
        // q = d + 1 = 2 for d = 1
        let p = GeneralizedBandwidthPrior::new(1, 0.0, 1.0, 2.0).unwrap();
        let i = integral_of_density(|a| p.density(a).unwrap(), 20.0, 200_000);
        assert_abs_diff_eq!(i, 1.0, epsilon = 1e-5);

        let env = p.envelope();
        let grid: Vec<f64> = (0..50).map(|i| 2.72 + i as f64 * 0.1).collect();
        let slack = envelope_check(&env, |a| p.density(a).unwrap(), &grid).unwrap();
        assert!(slack.abs() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut samples: Vec<f64> = (0..100_000).map(|_| p.sample_with(&mut rng)).collect();
        let d = ks_statistic(&mut samples, |x| p.cdf(x));
        assert!(d < 0.01, "KS = {d}");
        assert_eq!(p.sample(3), p.sample(3));
    }
}
