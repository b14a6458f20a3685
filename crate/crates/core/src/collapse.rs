//! Master-curve collapse. Each group's curve is rescaled with its liquidity
//! proxy `C` as `x = omega* / C^delta`, `y = delta_p* * C^gamma`, and
//! `(gamma, delta)` are chosen to minimise the mean, over log-spaced bins of
//! the pooled `x` axis, of the squared coefficients of variation of `x` and
//! `|y|`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::ClassifiedTrade;
use crate::error::{Error, Result};
use crate::impact::BinnedCurve;
use crate::optim::{nelder_mead, SimplexOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidityProxy {
    pub group_id: String,
    /// Average daily value traded.
    pub c: f64,
}

/// `C = sum(vwap * volume) / n_days`.
pub fn liquidity_proxy(group_id: &str, trades: &[ClassifiedTrade], n_days: usize) -> Result<LiquidityProxy> {
    if n_days == 0 {
        return Err(Error::InvalidArgument("n_days must be at least 1".into()));
    }
    if trades.is_empty() {
        return Err(Error::InsufficientData(format!("no trades for group `{group_id}`")));
    }
    let value: f64 = trades.iter().map(|t| t.trade.value()).sum();
    Ok(LiquidityProxy {
        group_id: group_id.to_string(),
        c: value / n_days as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaledPoint {
    pub omega_star: f64,
    pub delta_p_star: f64,
    pub x: f64,
    pub y: f64,
    pub count: usize,
}

pub fn rescale(curve: &BinnedCurve, c: f64, gamma: f64, delta: f64) -> Vec<RescaledPoint> {
    let sx = c.powf(-delta);
    let sy = c.powf(gamma);
    curve
        .points
        .iter()
        .map(|p| RescaledPoint {
            omega_star: p.omega_star,
            delta_p_star: p.delta_p_star,
            x: p.omega_star * sx,
            y: p.delta_p_star * sy,
            count: p.count,
        })
        .collect()
}

fn check_pairs(curves: &[BinnedCurve], proxies: &[LiquidityProxy]) -> Result<()> {
    if curves.len() < 2 {
        return Err(Error::InvalidArgument(format!("collapse needs at least 2 curves, got {}", curves.len())));
    }
    if curves.len() != proxies.len() {
        return Err(Error::InvalidArgument(format!(
            "{} curves but {} liquidity proxies",
            curves.len(),
            proxies.len()
        )));
    }
    if let Some(p) = proxies.iter().find(|p| !(p.c > 0.0 && p.c.is_finite())) {
        return Err(Error::InvalidArgument(format!("liquidity proxy of `{}` must be positive, got {}", p.group_id, p.c)));
    }
    Ok(())
}

/// Pooled `(ln x, x, |y|)` of all rescaled points with positive `x`.
fn pooled(curves: &[BinnedCurve], proxies: &[LiquidityProxy], gamma: f64, delta: f64) -> Vec<(f64, f64, f64)> {
    curves
        .iter()
        .zip(proxies)
        .flat_map(|(curve, proxy)| rescale(curve, proxy.c, gamma, delta))
        .filter(|p| p.x > 0.0 && p.x.is_finite() && p.y.is_finite())
        .map(|p| (p.x.ln(), p.x, p.y.abs()))
        .collect()
}

fn edges_for(points: &[(f64, f64, f64)], n_bins: usize) -> Vec<f64> {
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..=n_bins).map(|k| lo + width * k as f64).collect();
    edges[n_bins] = hi;
    edges
}

/// Bin edges in `ln x` that [`collapse_error`] would use at `(gamma, delta)`.
pub fn collapse_log_edges(
    curves: &[BinnedCurve],
    proxies: &[LiquidityProxy],
    gamma: f64,
    delta: f64,
    n_bins: usize,
) -> Result<Vec<f64>> {
    check_pairs(curves, proxies)?;
    let pts = pooled(curves, proxies, gamma, delta);
    if pts.is_empty() || n_bins == 0 {
        return Err(Error::UndefinedObjective("no points to partition".into()));
    }
    Ok(edges_for(&pts, n_bins))
}

/// Value of the collapse objective and how many bins were skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseEval {
    pub epsilon: f64,
    pub contributing_bins: usize,
    pub skipped_bins: usize,
}

fn evaluate(points: &[(f64, f64, f64)], log_edges: &[f64]) -> Result<CollapseEval> {
    let n_bins = log_edges.len().saturating_sub(1);
    if n_bins == 0 {
        return Err(Error::UndefinedObjective("no bins".into()));
    }
    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_bins];
    let (lo, hi) = (log_edges[0], log_edges[n_bins]);
    for &(lx, x, y) in points {
        if lx < lo || lx > hi {
            continue;
        }
        let i = log_edges.partition_point(|&e| e <= lx).max(1) - 1;
        members[i.min(n_bins - 1)].push((x, y));
    }
    let mut total = 0.0;
    let mut contributing = 0;
    for bin in &members {
        if bin.len() < 2 {
            continue;
        }
        let n = bin.len() as f64;
        let mx = bin.iter().map(|p| p.0).sum::<f64>() / n;
        let my = bin.iter().map(|p| p.1).sum::<f64>() / n;
        if mx == 0.0 || my == 0.0 {
            continue;
        }
        let vx = bin.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n;
        let vy = bin.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n;
        total += vx / (mx * mx) + vy / (my * my);
        contributing += 1;
    }
    if contributing == 0 {
        return Err(Error::UndefinedObjective("no bin holds two or more points with nonzero means".into()));
    }
    Ok(CollapseEval {
        epsilon: total / contributing as f64,
        contributing_bins: contributing,
        skipped_bins: n_bins - contributing,
    })
}

/// Collapse objective at `(gamma, delta)` with `n_bins` log-spaced bins over
/// the pooled rescaled `x` range. Standard deviations are population ones.
/// Bins with fewer than two points or a zero mean are skipped.
pub fn collapse_error(
    curves: &[BinnedCurve],
    proxies: &[LiquidityProxy],
    gamma: f64,
    delta: f64,
    n_bins: usize,
) -> Result<CollapseEval> {
    check_pairs(curves, proxies)?;
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be positive".into()));
    }
    let pts = pooled(curves, proxies, gamma, delta);
    if pts.is_empty() {
        return Err(Error::UndefinedObjective("no rescaled points".into()));
    }
    evaluate(&pts, &edges_for(&pts, n_bins))
}

/// Same objective on a caller-supplied partition (`ln x` edges). Points
/// outside the edges are ignored.
pub fn collapse_error_with_edges(
    curves: &[BinnedCurve],
    proxies: &[LiquidityProxy],
    gamma: f64,
    delta: f64,
    log_edges: &[f64],
) -> Result<CollapseEval> {
    check_pairs(curves, proxies)?;
    evaluate(&pooled(curves, proxies, gamma, delta), log_edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseConfig {
    pub n_bins: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_step: f64,
    /// Convergence tolerance on epsilon for the simplex refinement.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        CollapseConfig {
            n_bins: 10,
            grid_min: -1.0,
            grid_max: 1.0,
            grid_step: 0.01,
            tolerance: 1e-6,
            max_iter: 1000,
        }
    }
}

impl CollapseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 {
            return Err(Error::config("collapse.n_bins", "must be positive"));
        }
        if !(self.grid_min < self.grid_max) {
            return Err(Error::config("collapse.grid_min", "must be below grid_max"));
        }
        if !(self.grid_step > 0.0) || self.grid_step > self.grid_max - self.grid_min {
            return Err(Error::config("collapse.grid_step", "must be positive and no wider than the grid"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("collapse.tolerance", "must be positive"));
        }
        Ok(())
    }

    /// Grid coordinates, rounded to 1e-10 so that 0 is hit exactly.
    pub fn grid(&self) -> Vec<f64> {
        let steps = ((self.grid_max - self.grid_min) / self.grid_step + 1e-9).floor() as usize;
        (0..=steps)
            .map(|i| ((self.grid_min + self.grid_step * i as f64) * 1e10).round() / 1e10)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledCurve {
    pub group_id: String,
    pub c: f64,
    pub points: Vec<RescaledPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub n_bins: usize,
    pub skipped_bins: usize,
    pub contributing_bins: usize,
    /// False when changing gamma cannot change epsilon (e.g. all proxies equal).
    pub gamma_identifiable: bool,
    pub delta_identifiable: bool,
    pub grid_gamma: f64,
    pub grid_delta: f64,
    pub grid_epsilon: f64,
    pub refine_iterations: usize,
    pub refine_converged: bool,
    pub settings: CollapseConfig,
    pub rescaled_curves: Vec<RescaledCurve>,
}

impl CollapseResult {
    /// Unscaled and rescaled coordinates of every point, one row each.
    pub fn write_curves_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["group_id", "c", "omega_star", "delta_p_star", "x", "y", "count"])?;
        for curve in &self.rescaled_curves {
            for p in &curve.points {
                wtr.write_record([
                    curve.group_id.clone(),
                    curve.c.to_string(),
                    p.omega_star.to_string(),
                    p.delta_p_star.to_string(),
                    p.x.to_string(),
                    p.y.to_string(),
                    p.count.to_string(),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<collapse>", e))?;
        Ok(())
    }
}

fn tie_key(eps: f64, g: f64, d: f64) -> (f64, f64, f64, f64, f64) {
    (eps, g.abs(), d.abs(), g, d)
}

fn better(a: (f64, f64, f64, f64, f64), b: (f64, f64, f64, f64, f64)) -> bool {
    a.partial_cmp(&b) == Some(std::cmp::Ordering::Less)
}

/// Grid search over `(gamma, delta)` followed by simplex refinement from the
/// best grid point. Grid ties go to the smallest `(|gamma|, |delta|)`. When
/// every proxy is equal neither exponent is identifiable and the result is
/// reported at the origin with both flags cleared.
pub fn fit_collapse(curves: &[BinnedCurve], proxies: &[LiquidityProxy], config: &CollapseConfig) -> Result<CollapseResult> {
    check_pairs(curves, proxies)?;
    config.validate()?;
    let objective = |g: f64, d: f64| collapse_error(curves, proxies, g, d, config.n_bins);

    let c0 = proxies[0].c;
    let all_equal = proxies.iter().all(|p| (p.c - c0).abs() <= 1e-12 * c0);
    if all_equal {
        let eval = objective(0.0, 0.0)?;
        return Ok(assemble(curves, proxies, config, (0.0, 0.0, eval), (0.0, 0.0, eval.epsilon), 0, true, false, false));
    }

    let grid = config.grid();
    let evals: Vec<(f64, f64, Option<f64>)> = grid
        .par_iter()
        .flat_map_iter(|&g| grid.iter().map(move |&d| (g, d)))
        .map(|(g, d)| (g, d, objective(g, d).ok().map(|e| e.epsilon)))
        .collect();
    let mut best: Option<(f64, f64, f64, f64, f64)> = None;
    for &(g, d, e) in &evals {
        let Some(e) = e else { continue };
        let key = tie_key(e, g, d);
        if best.is_none_or(|b| better(key, b)) {
            best = Some(key);
        }
    }
    let (grid_eps, _, _, grid_g, grid_d) = best.ok_or_else(|| {
        Error::UndefinedObjective("collapse objective undefined at every grid point".into())
    })?;

    // gamma is unidentifiable if the row through the optimum is flat
    let row: Vec<f64> = evals
        .iter()
        .filter(|(_, d, _)| *d == grid_d)
        .filter_map(|(_, _, e)| *e)
        .collect();
    let (rmin, rmax) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
    let gamma_identifiable = rmax - rmin > 1e-12 * (1.0 + rmax.abs());
    let col: Vec<f64> = evals
        .iter()
        .filter(|(g, _, _)| *g == grid_g)
        .filter_map(|(_, _, e)| *e)
        .collect();
    let (cmin, cmax) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
    let delta_identifiable = cmax - cmin > 1e-12 * (1.0 + cmax.abs());

    let (lo, hi) = (config.grid_min, config.grid_max);
    let simplex = nelder_mead(
        |v| {
            if v.iter().any(|x| !(lo..=hi).contains(x)) {
                return f64::INFINITY;
            }
            objective(v[0], v[1]).map(|e| e.epsilon).unwrap_or(f64::INFINITY)
        },
        &[grid_g, grid_d],
        &SimplexOptions {
            f_tol: config.tolerance,
            x_tol: config.tolerance,
            max_iter: config.max_iter,
            initial_step: config.grid_step,
        },
    );
    let (g, d) = if simplex.fx < grid_eps && gamma_identifiable && delta_identifiable {
        (simplex.x[0], simplex.x[1])
    } else {
        (grid_g, grid_d)
    };
    let eval = objective(g, d)?;
    Ok(assemble(
        curves,
        proxies,
        config,
        (g, d, eval),
        (grid_g, grid_d, grid_eps),
        simplex.iterations,
        simplex.converged,
        gamma_identifiable,
        delta_identifiable,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    curves: &[BinnedCurve],
    proxies: &[LiquidityProxy],
    config: &CollapseConfig,
    (gamma, delta, eval): (f64, f64, CollapseEval),
    (grid_gamma, grid_delta, grid_epsilon): (f64, f64, f64),
    refine_iterations: usize,
    refine_converged: bool,
    gamma_identifiable: bool,
    delta_identifiable: bool,
) -> CollapseResult {
    CollapseResult {
        gamma,
        delta,
        epsilon: eval.epsilon,
        n_bins: config.n_bins,
        skipped_bins: eval.skipped_bins,
        contributing_bins: eval.contributing_bins,
        gamma_identifiable,
        delta_identifiable,
        grid_gamma,
        grid_delta,
        grid_epsilon,
        refine_iterations,
        refine_converged,
        settings: *config,
        rescaled_curves: curves
            .iter()
            .zip(proxies)
            .map(|(curve, proxy)| RescaledCurve {
                group_id: curve.group_id.clone(),
                c: proxy.c,
                points: rescale(curve, proxy.c, gamma, delta),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::classify::{Direction, Rule};
    use crate::impact::CurvePoint;
    use crate::ingest::AggregatedTrade;
    use proptest::prelude::*;

    fn curve(group: &str, pts: &[(f64, f64)]) -> BinnedCurve {
        BinnedCurve {
            group_id: group.into(),
            direction: Direction::BuyerInitiated,
            points: pts
                .iter()
                .enumerate()
                .map(|(i, &(w, d))| CurvePoint {
                    bin: i,
                    bin_lo: w * 0.9,
                    bin_hi: w * 1.1,
                    omega_star: w,
                    delta_p_star: d,
                    count: 3,
                })
                .collect(),
            out_of_range: 0,
        }
    }

    fn proxy(group: &str, c: f64) -> LiquidityProxy {
        LiquidityProxy { group_id: group.into(), c }
    }

    fn trade(vwap: f64, volume: u64) -> ClassifiedTrade {
        ClassifiedTrade {
            trade: AggregatedTrade { timestamp: 0, vwap, total_volume: volume, n_trades: 1 },
            direction: Direction::BuyerInitiated,
            rule: Rule::Quote,
            prevailing_mid: vwap,
        }
    }

    #[test]
    fn proxy_is_value_per_day() {
        let trades = [trade(10.0, 100), trade(20.0, 100)];
        assert_eq!(liquidity_proxy("g", &trades, 1).unwrap().c, 3000.0);
        assert_eq!(liquidity_proxy("g", &trades, 2).unwrap().c, 1500.0);
        assert!(liquidity_proxy("g", &[], 1).is_err());
        assert!(liquidity_proxy("g", &trades, 0).is_err());
    }

    #[test]
    fn rescale_examples() {
        let c = curve("a", &[(1.0, 2e-3), (0.5, 1e-3)]);
        for p in rescale(&c, 7.0, 0.0, 0.0).iter().chain(&rescale(&c, 1.0, 0.4, -0.7)) {
            assert_eq!(p.x, p.omega_star);
            assert_eq!(p.y, p.delta_p_star);
        }
        let r = rescale(&c, 100.0, 0.0, 0.3);
        assert_abs_diff_eq!(r[0].x, 0.251188643150958, epsilon = 1e-12);
        assert_eq!(r[0].count, 3);
    }

    #[test]
    fn identical_curves_collapse_to_zero() {
        let pts: Vec<_> = (0..10).map(|i| (0.1 * 1.5f64.powi(i), 1e-4 * 1.3f64.powi(i))).collect();
        let curves = [curve("a", &pts), curve("b", &pts)];
        let proxies = [proxy("a", 5.0), proxy("b", 5.0)];
        let e = collapse_error(&curves, &proxies, 0.0, 0.0, 10).unwrap();
        assert_eq!(e.epsilon, 0.0);

        let fit = fit_collapse(&curves, &proxies, &CollapseConfig::default()).unwrap();
        assert_eq!((fit.gamma, fit.delta, fit.epsilon), (0.0, 0.0, 0.0), "{fit:?}");
        assert!(!fit.gamma_identifiable);
    }

    #[test]
    fn objective_errors() {
        let one = [curve("a", &[(1.0, 1.0)])];
        assert!(collapse_error(&one, &[proxy("a", 1.0)], 0.0, 0.0, 3).is_err());
        let sparse = [curve("a", &[(1.0, 1.0)]), curve("b", &[(100.0, 1.0)])];
        let proxies = [proxy("a", 1.0), proxy("b", 2.0)];
        assert!(matches!(collapse_error(&sparse, &proxies, 0.0, 0.0, 5), Err(Error::UndefinedObjective(_))));
        assert!(collapse_error(&sparse, &proxies[..1], 0.0, 0.0, 5).is_err());
        assert!(collapse_error(&sparse, &[proxy("a", 1.0), proxy("b", 0.0)], 0.0, 0.0, 5).is_err());
    }

    #[test]
    fn zero_mean_bins_are_skipped() {
        let curves = [curve("a", &[(1.0, 0.0), (10.0, 1.0)]), curve("b", &[(1.0, 0.0), (10.0, 2.0)])];
        let proxies = [proxy("a", 1.0), proxy("b", 2.0)];
        let e = collapse_error(&curves, &proxies, 0.0, 0.0, 2).unwrap();
        assert_eq!(e.contributing_bins, 1);
        assert_eq!(e.skipped_bins, 1);
        assert_abs_diff_eq!(e.epsilon, 1.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn grid_hits_origin() {
        let g = CollapseConfig::default().grid();
        assert_eq!(g.len(), 201);
        assert!(g.contains(&0.0));
        assert_eq!(g[0], -1.0);
        assert_eq!(g[200], 1.0);
        assert!(CollapseConfig { grid_step: 0.0, ..Default::default() }.validate().is_err());
    }

    fn arb_family() -> impl Strategy<Value = Vec<Vec<(f64, f64)>>> {
        prop::collection::vec(prop::collection::vec((-2.0f64..1.0, 1e-5f64..1e-2), 2..8), 2..5)
            .prop_map(|gs| gs.into_iter().map(|g| g.into_iter().map(|(lw, d)| (10f64.powf(lw), d)).collect()).collect())
    }

    proptest! {
        #[test]
        fn invariant_under_reordering(fam in arb_family(), g in -1.0f64..1.0, d in -1.0f64..1.0) {
            let curves: Vec<_> = fam.iter().enumerate().map(|(i, p)| curve(&format!("g{i}"), p)).collect();
            let proxies: Vec<_> = (0..fam.len()).map(|i| proxy(&format!("g{i}"), 10f64.powi(i as i32))).collect();
            let Ok(e) = collapse_error(&curves, &proxies, g, d, 4) else { return Ok(()) };
            let mut rc: Vec<_> = curves.iter().rev().cloned().collect();
            for c in &mut rc {
                c.points.reverse();
            }
            let rp: Vec<_> = proxies.iter().rev().cloned().collect();
            let e2 = collapse_error(&rc, &rp, g, d, 4).unwrap();
            prop_assert_eq!(e.skipped_bins, e2.skipped_bins);
            prop_assert!((e.epsilon - e2.epsilon).abs() <= 1e-12 * e.epsilon.max(1e-300));
        }

        #[test]
        fn common_proxy_scaling_with_fixed_partition(fam in arb_family(), g in -1.0f64..1.0, d in -1.0f64..1.0, k in 0.01f64..100.0) {
            let curves: Vec<_> = fam.iter().enumerate().map(|(i, p)| curve(&format!("g{i}"), p)).collect();
            let proxies: Vec<_> = (0..fam.len()).map(|i| proxy(&format!("g{i}"), 3f64.powi(i as i32))).collect();
            let Ok(edges) = collapse_log_edges(&curves, &proxies, g, d, 4) else { return Ok(()) };
            let Ok(base) = collapse_error_with_edges(&curves, &proxies, g, d, &edges) else { return Ok(()) };
            let scaled: Vec<_> = proxies.iter().map(|p| proxy(&p.group_id, p.c * k)).collect();
            // the same partition expressed in the scaled x coordinates
            let shift = -d * k.ln();
            let mut moved: Vec<f64> = edges.iter().map(|e| e + shift).collect();
            let last = moved.len() - 1;
            moved[0] -= 1e-9;
            moved[last] += 1e-9;
            let e2 = collapse_error_with_edges(&curves, &scaled, g, d, &moved).unwrap();
            prop_assert!((base.epsilon - e2.epsilon).abs() <= 1e-9 * base.epsilon.max(1e-12), "{} vs {}", base.epsilon, e2.epsilon);
        }
    }
}
