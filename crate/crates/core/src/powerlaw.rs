//! Continuous power-law fitting: closed-form maximum-likelihood exponent,
//! Kolmogorov-Smirnov selection of the lower bound `x_min`, and a
//! semiparametric bootstrap goodness-of-fit p-value.
//!
//! The model is `p(x) = (alpha - 1) / x_min * (x / x_min)^-alpha` for
//! `x >= x_min`, with CDF `P(x) = 1 - (x / x_min)^(1 - alpha)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impact::BinnedCurve;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Smallest tail a candidate `x_min` may leave.
    pub min_tail: usize,
    /// Above this many distinct values the scan uses log-spaced candidates.
    pub max_candidates: usize,
    /// Tails smaller than this are flagged as low power.
    pub low_power_tail: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            min_tail: 5,
            max_candidates: 1000,
            low_power_tail: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub x_min: f64,
    pub ks_distance: f64,
    pub p_value: Option<f64>,
    /// Sample size.
    pub n: usize,
    /// Observations at or above `x_min`.
    pub n_tail: usize,
    /// Number of `x_min` values scanned.
    pub n_candidates: usize,
    pub n_boot: usize,
    pub seed: Option<u64>,
    /// Fewer than three distinct values in the tail.
    pub degenerate: bool,
    pub low_power: bool,
}

/// Model CDF.
pub fn powerlaw_cdf(x: f64, alpha: f64, x_min: f64) -> f64 {
    if x < x_min {
        0.0
    } else {
        1.0 - (x / x_min).powf(1.0 - alpha)
    }
}

/// Inverse CDF; `u` in `[0, 1)`.
pub fn powerlaw_quantile(u: f64, alpha: f64, x_min: f64) -> f64 {
    x_min * (1.0 - u).powf(-1.0 / (alpha - 1.0))
}

fn check_sample(sample: &[f64]) -> Result<()> {
    match sample.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        Some(bad) => Err(Error::InvalidArgument(format!("power-law samples must be positive and finite, got {bad}"))),
        None => Ok(()),
    }
}

/// `1 + n / sum(ln(x_i / x_min))` over `x_i >= x_min`.
pub fn mle_alpha(sample: &[f64], x_min: f64) -> Result<f64> {
    if !(x_min > 0.0) {
        return Err(Error::InvalidArgument(format!("x_min must be positive, got {x_min}")));
    }
    let (n, s) = sample
        .iter()
        .filter(|&&x| x >= x_min)
        .fold((0usize, 0.0f64), |(n, s), &x| (n + 1, s + (x / x_min).ln()));
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} points at or above x_min")));
    }
    if s <= 0.0 {
        return Err(Error::DegenerateSample("every tail point equals x_min".into()));
    }
    Ok(1.0 + n as f64 / s)
}

/// KS distance on a sorted tail, given `ln(x / x_min)` for each point.
/// Both sides of each step of the empirical CDF are compared.
fn ks_sorted(tail: &[f64], log_ratio: impl Fn(usize) -> f64, alpha: f64) -> f64 {
    let n = tail.len() as f64;
    let mut d = 0.0f64;
    let mut j = 0;
    while j < tail.len() {
        let mut k = j + 1;
        while k < tail.len() && tail[k] == tail[j] {
            k += 1;
        }
        let model = 1.0 - ((1.0 - alpha) * log_ratio(j)).exp();
        let below = j as f64 / n;
        let at = k as f64 / n;
        d = d.max((below - model).abs()).max((at - model).abs());
        j = k;
    }
    d.min(1.0)
}

/// Largest gap between the empirical CDF of the tail `x >= x_min` and the
/// model CDF.
pub fn ks_distance(sample: &[f64], alpha: f64, x_min: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must exceed 1, got {alpha}")));
    }
    let mut tail: Vec<f64> = sample.iter().copied().filter(|&x| x >= x_min).collect();
    if tail.is_empty() {
        return Err(Error::InsufficientData("empty tail".into()));
    }
    tail.sort_by(f64::total_cmp);
    Ok(ks_sorted(&tail, |j| (tail[j] / x_min).ln(), alpha))
}

/// Sorted sample with cached logarithms and their suffix sums.
struct Prepared {
    xs: Vec<f64>,
    ln: Vec<f64>,
    suffix_ln: Vec<f64>,
}

impl Prepared {
    fn new(sample: &[f64]) -> Self {
        let mut xs = sample.to_vec();
        xs.sort_by(f64::total_cmp);
        let ln: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let mut suffix_ln = vec![0.0; xs.len() + 1];
        for i in (0..xs.len()).rev() {
            suffix_ln[i] = suffix_ln[i + 1] + ln[i];
        }
        Prepared { xs, ln, suffix_ln }
    }

    /// Start index of each run of equal values that leaves an admissible tail.
    fn candidates(&self, opts: &FitOptions) -> Vec<usize> {
        let n = self.xs.len();
        let Some(&largest) = self.xs.last() else { return Vec::new() };
        let mut starts: Vec<usize> = (0..n)
            .filter(|&i| (i == 0 || self.xs[i] != self.xs[i - 1]) && n - i >= opts.min_tail.max(2) && self.xs[i] < largest)
            .collect();
        if starts.len() > opts.max_candidates && opts.max_candidates >= 2 {
            let lo = self.xs[starts[0]].ln();
            let hi = self.xs[*starts.last().unwrap()].ln();
            let m = opts.max_candidates;
            let mut picked: Vec<usize> = (0..m)
                .map(|k| {
                    let target = (lo + (hi - lo) * k as f64 / (m - 1) as f64).exp();
                    let pos = starts.partition_point(|&i| self.xs[i] < target);
                    starts[pos.min(starts.len() - 1)]
                })
                .collect();
            picked.dedup();
            starts = picked;
        }
        starts
    }

    fn evaluate(&self, start: usize) -> (f64, f64) {
        let n_tail = (self.xs.len() - start) as f64;
        let ln_min = self.ln[start];
        let s = self.suffix_ln[start] - n_tail * ln_min;
        let alpha = 1.0 + n_tail / s;
        let d = ks_sorted(&self.xs[start..], |j| self.ln[start + j] - ln_min, alpha);
        (alpha, d)
    }
}

/// The `x_min` values [`fit_xmin`] would scan, ascending.
pub fn xmin_candidates(sample: &[f64], opts: &FitOptions) -> Vec<f64> {
    let prep = Prepared::new(sample);
    prep.candidates(opts).into_iter().map(|i| prep.xs[i]).collect()
}

/// Scans candidate lower bounds and keeps the one whose fitted tail is
/// closest to the model in KS distance. Ties go to the smaller `x_min`.
pub fn fit_xmin(sample: &[f64], opts: &FitOptions) -> Result<PowerLawFit> {
    check_sample(sample)?;
    if sample.len() < opts.min_tail.max(2) {
        return Err(Error::InsufficientData(format!(
            "{} points, need at least {}",
            sample.len(),
            opts.min_tail.max(2)
        )));
    }
    let prep = Prepared::new(sample);
    let candidates = prep.candidates(opts);
    let mut best: Option<(usize, f64, f64)> = None;
    for &start in &candidates {
        let (alpha, d) = prep.evaluate(start);
        if !alpha.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, _, bd)| d < bd) {
            best = Some((start, alpha, d));
        }
    }
    let (start, alpha, d) = best.ok_or_else(|| {
        Error::InsufficientData(format!("no x_min candidate leaves {} distinct-valued tail points", opts.min_tail))
    })?;
    let tail = &prep.xs[start..];
    let distinct = 1 + tail.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(PowerLawFit {
        alpha,
        x_min: prep.xs[start],
        ks_distance: d,
        p_value: None,
        n: sample.len(),
        n_tail: tail.len(),
        n_candidates: candidates.len(),
        n_boot: 0,
        seed: None,
        degenerate: distinct < 3,
        low_power: tail.len() < opts.low_power_tail,
    })
}

/// Generator for bootstrap replicate `index`: the ChaCha8 stream `index` of
/// `seed`, so results do not depend on scheduling.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Outcome of the bootstrap, including replicates whose refit failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub p_value: f64,
    pub exceeded: usize,
    pub valid: usize,
    pub failed: usize,
}

/// Semiparametric bootstrap. Each replicate has the original size; every
/// point comes from the fitted power law with probability `n_tail / n` and
/// otherwise from the empirical body below `x_min`. Replicates are refitted
/// with [`fit_xmin`] and `p` is the share whose KS distance exceeds the
/// observed one.
pub fn bootstrap(sample: &[f64], fit: &PowerLawFit, n_boot: usize, seed: u64, opts: &FitOptions) -> Result<Bootstrap> {
    if n_boot < 100 {
        return Err(Error::InvalidArgument(format!("n_boot must be 0 or at least 100, got {n_boot}")));
    }
    check_sample(sample)?;
    let n = sample.len();
    let mut body: Vec<f64> = sample.iter().copied().filter(|&x| x < fit.x_min).collect();
    body.sort_by(f64::total_cmp);
    let p_tail = if body.is_empty() { 1.0 } else { fit.n_tail as f64 / n as f64 };
    let distances: Vec<Option<f64>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b);
            let replicate: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random::<f64>() < p_tail {
                        powerlaw_quantile(rng.random::<f64>(), fit.alpha, fit.x_min)
                    } else {
                        body[rng.random_range(0..body.len())]
                    }
                })
                .collect();
            fit_xmin(&replicate, opts).ok().map(|f| f.ks_distance)
        })
        .collect();
    let valid = distances.iter().flatten().count();
    if valid == 0 {
        return Err(Error::InsufficientData("every bootstrap replicate failed to fit".into()));
    }
    let exceeded = distances.iter().flatten().filter(|&&d| d > fit.ks_distance).count();
    Ok(Bootstrap {
        p_value: exceeded as f64 / valid as f64,
        exceeded,
        valid,
        failed: n_boot - valid,
    })
}

/// Goodness-of-fit p-value; `None` when `n_boot` is zero.
pub fn gof_pvalue(sample: &[f64], fit: &PowerLawFit, n_boot: usize, seed: u64, opts: &FitOptions) -> Result<Option<f64>> {
    if n_boot == 0 {
        return Ok(None);
    }
    Ok(Some(bootstrap(sample, fit, n_boot, seed, opts)?.p_value))
}

/// [`fit_xmin`] followed by [`gof_pvalue`].
pub fn fit_powerlaw(sample: &[f64], opts: &FitOptions, n_boot: usize, seed: u64) -> Result<PowerLawFit> {
    let mut fit = fit_xmin(sample, opts)?;
    fit.p_value = gof_pvalue(sample, &fit, n_boot, seed, opts)?;
    fit.n_boot = n_boot;
    fit.seed = Some(seed);
    Ok(fit)
}

/// Fits the impact magnitudes of curve points with `omega_star` above
/// `volume_threshold`.
pub fn fit_tail_impacts(
    curve: &BinnedCurve,
    volume_threshold: f64,
    opts: &FitOptions,
    n_boot: usize,
    seed: u64,
) -> Result<PowerLawFit> {
    let values: Vec<f64> = curve
        .points
        .iter()
        .filter(|p| p.omega_star > volume_threshold)
        .map(|p| curve.magnitude(p))
        .filter(|m| *m > 0.0)
        .collect();
    if values.len() < opts.min_tail.max(2) {
        return Err(Error::InsufficientData(format!(
            "{} bins with positive impact above omega {volume_threshold}, need {}",
            values.len(),
            opts.min_tail.max(2)
        )));
    }
    fit_powerlaw(&values, opts, n_boot, seed)
}

/// One row of a fit table: labels plus the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub sector: String,
    pub direction: String,
    pub period: String,
    #[serde(flatten)]
    pub fit: PowerLawFit,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::E;

    #[test]
    fn closed_form_alpha() {
        let xm = 0.3;
        assert!((mle_alpha(&[xm * E; 4], xm).unwrap() - 2.0).abs() < 1e-12);
        assert!((mle_alpha(&[xm * E.sqrt(); 4], xm).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mle_errors() {
        assert!(matches!(mle_alpha(&[2.0], 1.0), Err(Error::InsufficientData(_))));
        assert!(matches!(mle_alpha(&[1.0, 1.0, 0.5], 1.0), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn ks_single_point_at_xmin() {
        assert_eq!(ks_distance(&[2.0], 2.5, 2.0).unwrap(), 1.0);
        assert!(ks_distance(&[1.0], 2.5, 2.0).is_err());
        assert!(ks_distance(&[3.0], 1.0, 2.0).is_err());
    }

    #[test]
    fn ks_at_model_quantiles() {
        // Evaluate the model CDF directly at its own quantiles.
        let (alpha, xm, n) = (2.7, 0.01, 200);
        let sample: Vec<f64> = (1..=n)
            .map(|k| xm * (1.0 - k as f64 / (n + 1) as f64).powf(-1.0 / (alpha - 1.0)))
            .collect();
        let d = ks_distance(&sample, alpha, xm).unwrap();
        assert!(d <= 1.0 / (n + 1) as f64 + 1.0 / n as f64, "{d}");
    }

    #[test]
    fn two_distinct_values_flag_degenerate() {
        let fit = fit_xmin(&[1.0, 1.0, 1.0, 2.0, 2.0, 2.0], &FitOptions::default()).unwrap();
        assert_eq!(fit.x_min, 1.0);
        assert!(fit.degenerate);
        assert!(fit.low_power);
    }

    #[test]
    fn too_small_sample() {
        assert!(matches!(fit_xmin(&[1.0, 2.0, 3.0], &FitOptions::default()), Err(Error::InsufficientData(_))));
        assert!(matches!(fit_xmin(&[1.0; 10], &FitOptions::default()), Err(Error::InsufficientData(_))));
        assert!(fit_xmin(&[1.0, -2.0, 3.0, 4.0, 5.0], &FitOptions::default()).is_err());
    }

    fn draws(alpha: f64, xm: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| xm * (1.0 - rng.random::<f64>()).powf(-1.0 / (alpha - 1.0))).collect()
    }

    #[test]
    fn candidate_cap_is_respected() {
        let sample = draws(2.5, 1.0, 5000, 3);
        let fit = fit_xmin(&sample, &FitOptions::default()).unwrap();
        assert!(fit.n_candidates <= 1000);
        let small = fit_xmin(&sample[..400], &FitOptions::default()).unwrap();
        assert_eq!(small.n_candidates, 400 - 4);
    }

    #[test]
    fn skipped_bootstrap_and_small_nboot() {
        let sample = draws(2.5, 1.0, 300, 1);
        let fit = fit_xmin(&sample, &FitOptions::default()).unwrap();
        assert_eq!(gof_pvalue(&sample, &fit, 0, 9, &FitOptions::default()).unwrap(), None);
        assert!(gof_pvalue(&sample, &fit, 10, 9, &FitOptions::default()).is_err());
        let full = fit_powerlaw(&sample, &FitOptions::default(), 0, 9).unwrap();
        assert_eq!(full.p_value, None);
        assert_eq!(full.alpha, fit.alpha);
    }

    #[test]
    fn p_value_is_deterministic_for_a_seed() {
        let sample = draws(3.0, 1.0, 150, 2);
        let fit = fit_xmin(&sample, &FitOptions::default()).unwrap();
        let a = bootstrap(&sample, &fit, 120, 42, &FitOptions::default()).unwrap();
        let b = bootstrap(&sample, &fit, 120, 42, &FitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
        assert_eq!(a.valid + a.failed, 120);
    }

    proptest! {
        #[test]
        fn ks_is_a_probability(seed in 0u64..1000, alpha in 1.2f64..5.0) {
            let sample = draws(2.5, 1.0, 60, seed);
            let d = ks_distance(&sample, alpha, 1.3).unwrap_or(0.0);
            prop_assert!((0.0..=1.0).contains(&d));
            let fit = fit_xmin(&sample, &FitOptions::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&fit.ks_distance));
            prop_assert!(fit.alpha > 1.0);
        }

        #[test]
        fn appending_xmin_points_raises_alpha(seed in 0u64..1000, extra in 1usize..20) {
            let xm = 0.5;
            let sample = draws(2.2, xm, 40, seed);
            let a0 = mle_alpha(&sample, xm).unwrap();
            let mut more = sample.clone();
            more.extend(std::iter::repeat_n(xm, extra));
            prop_assert!(mle_alpha(&more, xm).unwrap() > a0);
        }

        #[test]
        fn fits_are_scale_equivariant(seed in 0u64..1000, c in 1e-3f64..1e3) {
            let sample = draws(3.0, 1.0, 120, seed);
            let scaled: Vec<f64> = sample.iter().map(|x| x * c).collect();
            let a = mle_alpha(&sample, 1.5).unwrap();
            let b = mle_alpha(&scaled, 1.5 * c).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a);
            let da = ks_distance(&sample, 2.5, 1.5).unwrap();
            let db = ks_distance(&scaled, 2.5, 1.5 * c).unwrap();
            prop_assert!((da - db).abs() <= 1e-9);
            let fa = fit_xmin(&sample, &FitOptions::default()).unwrap();
            let fb = fit_xmin(&scaled, &FitOptions::default()).unwrap();
            prop_assert_eq!(fb.x_min, fa.x_min * c);
            prop_assert!((fa.alpha - fb.alpha).abs() <= 1e-9 * fa.alpha);
            prop_assert!((fa.ks_distance - fb.ks_distance).abs() <= 1e-9);
        }
    }
}
