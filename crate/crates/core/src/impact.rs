//! Per-trade log-midquote impacts, volume normalisation, logarithmic binning
//! into average impact curves, and daily-average distributions.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::classify::{ClassifiedTrade, Direction};
use crate::error::{Error, Result};
use crate::ingest::QuoteEvent;
use crate::time::date_of;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactObservation {
    pub stock_id: String,
    pub day: NaiveDate,
    pub timestamp: i64,
    /// Raw aggregated volume in shares.
    pub volume: u64,
    /// Normalised volume; equals `volume` until [`normalize_volumes`] runs.
    pub omega: f64,
    /// `ln(mid_after) - ln(mid_before)`.
    pub delta_p: f64,
    pub direction: Direction,
    pub price: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub input: usize,
    pub kept: usize,
    pub dropped_no_next_quote: usize,
}

/// Impact of each classified trade: the log midquote of the first quote
/// stamped strictly after the trade minus the log of the prevailing mid.
/// Trades with no later quote are dropped and counted.
pub fn compute_impacts(
    stock_id: &str,
    trades: &[ClassifiedTrade],
    quotes: &[QuoteEvent],
) -> (Vec<ImpactObservation>, ImpactReport) {
    let mut report = ImpactReport {
        input: trades.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(trades.len());
    let mut next = 0;
    for ct in trades {
        let ts = ct.trade.timestamp;
        while next < quotes.len() && quotes[next].timestamp <= ts {
            next += 1;
        }
        let Some(after) = quotes.get(next) else {
            report.dropped_no_next_quote += 1;
            continue;
        };
        out.push(ImpactObservation {
            stock_id: stock_id.to_string(),
            day: date_of(ts),
            timestamp: ts,
            volume: ct.trade.total_volume,
            omega: ct.trade.total_volume as f64,
            delta_p: after.mid().ln() - ct.prevailing_mid.ln(),
            direction: ct.direction,
            price: ct.trade.vwap,
        });
    }
    report.kept = out.len();
    (out, report)
}

/// Sets `omega = volume / mean(raw volumes of the stock)`.
pub fn normalize_volumes(
    observations: &[ImpactObservation],
    raw_volumes: &BTreeMap<String, Vec<u64>>,
) -> Result<Vec<ImpactObservation>> {
    let mut means = BTreeMap::new();
    for (stock, vols) in raw_volumes {
        if vols.is_empty() {
            continue;
        }
        let total: f64 = vols.iter().map(|&v| v as f64).sum();
        means.insert(stock.as_str(), total / vols.len() as f64);
    }
    observations
        .iter()
        .map(|o| {
            let mean = means.get(o.stock_id.as_str()).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("no raw volumes for stock `{}`", o.stock_id))
            })?;
            if mean <= 0.0 {
                return Err(Error::InvalidArgument(format!("zero mean volume for `{}`", o.stock_id)));
            }
            Ok(ImpactObservation {
                omega: o.volume as f64 / mean,
                ..o.clone()
            })
        })
        .collect()
}

/// Logarithmically spaced bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    edges: Vec<f64>,
}

impl Default for BinEdges {
    /// 20 bins between 10^-3.2 and 10.
    fn default() -> Self {
        BinEdges::log_spaced(-3.2, 1.0, 20).expect("valid default edges")
    }
}

impl BinEdges {
    /// `n_bins` bins between `10^lo_exp` and `10^hi_exp`. The end points are
    /// set exactly.
    pub fn log_spaced(lo_exp: f64, hi_exp: f64, n_bins: usize) -> Result<Self> {
        if n_bins == 0 || !(lo_exp < hi_exp) || !lo_exp.is_finite() || !hi_exp.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bad bin settings: 10^{lo_exp}..10^{hi_exp} with {n_bins} bins"
            )));
        }
        let step = (hi_exp - lo_exp) / n_bins as f64;
        let mut edges: Vec<f64> = (0..=n_bins).map(|i| 10f64.powf(lo_exp + step * i as f64)).collect();
        edges[0] = 10f64.powf(lo_exp);
        edges[n_bins] = 10f64.powf(hi_exp);
        Ok(BinEdges { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn lo(&self) -> f64 {
        self.edges[0]
    }

    pub fn hi(&self) -> f64 {
        self.edges[self.n_bins()]
    }

    /// Half-open `[lo, hi)` bins, with the last bin closed on the right.
    pub fn bin_index(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo() && x <= self.hi()) {
            return None;
        }
        let i = self.edges.partition_point(|&e| e <= x);
        Some((i - 1).min(self.n_bins() - 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bin: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub omega_star: f64,
    pub delta_p_star: f64,
    pub count: usize,
}

/// Average impact curve for one direction. Empty bins are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCurve {
    pub group_id: String,
    pub direction: Direction,
    pub points: Vec<CurvePoint>,
    pub out_of_range: usize,
}

impl BinnedCurve {
    pub fn in_range(&self) -> usize {
        self.points.iter().map(|p| p.count).sum()
    }

    /// Impact magnitude on the curve's positive axis: `delta_p_star` for
    /// buys, `-delta_p_star` for sells.
    pub fn magnitude(&self, p: &CurvePoint) -> f64 {
        match self.direction {
            Direction::SellerInitiated => -p.delta_p_star,
            _ => p.delta_p_star,
        }
    }

    /// Points with `omega_star` strictly above `threshold`.
    pub fn above(&self, threshold: f64) -> BinnedCurve {
        BinnedCurve {
            points: self.points.iter().copied().filter(|p| p.omega_star > threshold).collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["bin_lo", "bin_hi", "omega_star", "delta_p_star", "count"])?;
        for p in &self.points {
            wtr.write_record([
                p.bin_lo.to_string(),
                p.bin_hi.to_string(),
                p.omega_star.to_string(),
                p.delta_p_star.to_string(),
                p.count.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<curve>", e))?;
        Ok(())
    }

    /// Reads a curve written by [`BinnedCurve::write_csv`]. Bin indices are
    /// reassigned in row order.
    pub fn read_csv<R: Read>(reader: R, group_id: &str, direction: Direction) -> Result<BinnedCurve> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut points = Vec::new();
        for (bin, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Parse(format!("curve row {}: bad column {i}", bin + 1)))
            };
            points.push(CurvePoint {
                bin,
                bin_lo: num(0)?,
                bin_hi: num(1)?,
                omega_star: num(2)?,
                delta_p_star: num(3)?,
                count: num(4)? as usize,
            });
        }
        Ok(BinnedCurve {
            group_id: group_id.to_string(),
            direction,
            points,
            out_of_range: 0,
        })
    }
}

/// Averages `omega` and signed `delta_p` within each volume bin. Only
/// observations with the requested direction are used.
pub fn bin_curve(observations: &[ImpactObservation], edges: &BinEdges, direction: Direction, group_id: &str) -> BinnedCurve {
    let n = edges.n_bins();
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); n];
    let mut out_of_range = 0;
    for o in observations.iter().filter(|o| o.direction == direction) {
        match edges.bin_index(o.omega) {
            Some(i) => {
                let s = &mut sums[i];
                s.0 += o.omega;
                s.1 += o.delta_p;
                s.2 += 1;
            }
            None => out_of_range += 1,
        }
    }
    let e = edges.edges();
    let points = sums
        .into_iter()
        .enumerate()
        .filter(|(_, s)| s.2 > 0)
        .map(|(i, (so, sd, c))| CurvePoint {
            bin: i,
            bin_lo: e[i],
            bin_hi: e[i + 1],
            // rounding in the sum must not push the mean outside its bin
            omega_star: (so / c as f64).clamp(e[i], e[i + 1]),
            delta_p_star: sd / c as f64,
            count: c,
        })
        .collect();
    BinnedCurve {
        group_id: group_id.to_string(),
        direction,
        points,
        out_of_range,
    }
}

/// Least-squares slope of `ln|impact|` against `ln omega_star` over points
/// with `lo < omega_star <= hi` and positive impact magnitude.
pub fn loglog_slope(curve: &BinnedCurve, lo: f64, hi: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| p.omega_star > lo && p.omega_star <= hi)
        .filter_map(|p| {
            let m = curve.magnitude(p);
            (m > 0.0).then(|| (p.omega_star.ln(), m.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable points for a log-log slope",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateSample("all omega_star equal".into()));
    }
    Ok(sxy / sxx)
}

/// Averages for one stock, day and direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyAverage {
    pub stock_id: String,
    pub day: NaiveDate,
    pub direction: Direction,
    pub n_trades: usize,
    pub mean_volume: f64,
    pub mean_price: f64,
    pub n_impacts: usize,
    /// Mean signed impact; absent when no trade that day had a measurable impact.
    pub mean_impact: Option<f64>,
}

/// Daily averages of volume and price over classified trades and of impact
/// over observations. Indeterminate trades are skipped. Days without trades
/// produce no record.
pub fn daily_averages(stock_id: &str, observations: &[ImpactObservation], trades: &[ClassifiedTrade]) -> Vec<DailyAverage> {
    #[derive(Default)]
    struct Acc {
        n: usize,
        vol: f64,
        price: f64,
        n_imp: usize,
        imp: f64,
    }
    let mut acc: BTreeMap<(NaiveDate, Direction), Acc> = BTreeMap::new();
    for t in trades.iter().filter(|t| t.direction != Direction::Indeterminate) {
        let a = acc.entry((date_of(t.trade.timestamp), t.direction)).or_default();
        a.n += 1;
        a.vol += t.trade.total_volume as f64;
        a.price += t.trade.vwap;
    }
    for o in observations.iter().filter(|o| o.stock_id == stock_id) {
        if let Some(a) = acc.get_mut(&(o.day, o.direction)) {
            a.n_imp += 1;
            a.imp += o.delta_p;
        }
    }
    acc.into_iter()
        .filter(|(_, a)| a.n > 0)
        .map(|((day, direction), a)| DailyAverage {
            stock_id: stock_id.to_string(),
            day,
            direction,
            n_trades: a.n,
            mean_volume: a.vol / a.n as f64,
            mean_price: a.price / a.n as f64,
            n_impacts: a.n_imp,
            mean_impact: (a.n_imp > 0).then(|| a.imp / a.n_imp as f64),
        })
        .collect()
}

/// Histogram over `log10` of positive values with equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    /// Bin edges in `log10` units.
    pub log10_edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Counts divided by the number of binned values; sums to 1.
    pub masses: Vec<f64>,
    /// Values that were zero, negative or non-finite.
    pub excluded: usize,
}

impl LogHistogram {
    pub fn build(values: &[f64], n_bins: usize) -> Result<LogHistogram> {
        if n_bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        let logs: Vec<f64> = values
            .iter()
            .filter(|v| v.is_finite() && **v > 0.0)
            .map(|v| v.log10())
            .collect();
        let excluded = values.len() - logs.len();
        if logs.is_empty() {
            return Ok(LogHistogram {
                log10_edges: Vec::new(),
                counts: Vec::new(),
                masses: Vec::new(),
                excluded,
            });
        }
        let mut lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / n_bins as f64;
        let mut log10_edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
        log10_edges[n_bins] = hi;
        let mut counts = vec![0usize; n_bins];
        for v in &logs {
            let i = log10_edges.partition_point(|&e| e <= *v);
            counts[(i.max(1) - 1).min(n_bins - 1)] += 1;
        }
        let total = logs.len() as f64;
        let masses = counts.iter().map(|&c| c as f64 / total).collect();
        Ok(LogHistogram {
            log10_edges,
            counts,
            masses,
            excluded,
        })
    }
}

/// Distributions of daily averages pooled over a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyDistributions {
    pub n_bins: usize,
    pub volume: LogHistogram,
    /// Over `|mean impact|`.
    pub impact: LogHistogram,
    pub price: LogHistogram,
}

/// Histograms of daily mean volume, impact magnitude and price using
/// `n_bins` equal bins on the log axis (one per trading day by default).
pub fn daily_distributions(records: &[DailyAverage], n_bins: usize) -> Result<DailyDistributions> {
    let vols: Vec<f64> = records.iter().map(|r| r.mean_volume).collect();
    let imps: Vec<f64> = records.iter().filter_map(|r| r.mean_impact).map(f64::abs).collect();
    let prices: Vec<f64> = records.iter().map(|r| r.mean_price).collect();
    Ok(DailyDistributions {
        n_bins,
        volume: LogHistogram::build(&vols, n_bins)?,
        impact: LogHistogram::build(&imps, n_bins)?,
        price: LogHistogram::build(&prices, n_bins)?,
    })
}

pub fn write_daily_csv<W: Write>(writer: W, records: &[DailyAverage]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "stock_id",
        "day",
        "direction",
        "n_trades",
        "mean_volume",
        "mean_price",
        "n_impacts",
        "mean_impact",
    ])?;
    for r in records {
        wtr.write_record([
            r.stock_id.clone(),
            r.day.to_string(),
            r.direction.as_str().to_string(),
            r.n_trades.to_string(),
            r.mean_volume.to_string(),
            r.mean_price.to_string(),
            r.n_impacts.to_string(),
            r.mean_impact.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<daily>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::classify::Rule;
    use crate::ingest::AggregatedTrade;
    use proptest::prelude::*;

    fn obs(omega: f64, delta_p: f64, direction: Direction) -> ImpactObservation {
        ImpactObservation {
            stock_id: "S".into(),
            day: NaiveDate::from_ymd_opt(2013, 3, 4).unwrap(),
            timestamp: 0,
            volume: 1,
            omega,
            delta_p,
            direction,
            price: 10.0,
        }
    }

    fn ct(ts: i64, mid: f64, volume: u64, direction: Direction) -> ClassifiedTrade {
        ClassifiedTrade {
            trade: AggregatedTrade {
                timestamp: ts,
                vwap: mid,
                total_volume: volume,
                n_trades: 1,
            },
            direction,
            rule: Rule::Quote,
            prevailing_mid: mid,
        }
    }

    fn q(ts: i64, mid: f64) -> QuoteEvent {
        QuoteEvent {
            timestamp: ts,
            bid: mid - 0.05,
            ask: mid + 0.05,
        }
    }

    #[test]
    fn impact_is_log_midquote_change() {
        let trades = [ct(10, 100.0, 5, Direction::BuyerInitiated)];
        let quotes = [q(5, 100.0), q(10, 100.05), q(11, 100.10)];
        let (out, report) = compute_impacts("S", &trades, &quotes);
        assert_eq!(report.kept, 1);
        let expected = (1.001f64).ln();
        assert_abs_diff_eq!(out[0].delta_p, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0].delta_p, 9.995e-4, epsilon = 1e-6);
    }

    #[test]
    fn unchanged_mid_gives_zero_impact_and_is_kept() {
        let trades = [ct(10, 100.0, 5, Direction::SellerInitiated)];
        let (out, _) = compute_impacts("S", &trades, &[q(5, 100.0), q(12, 100.0)]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].delta_p, 0.0);
    }

    #[test]
    fn trade_without_later_quote_is_dropped() {
        let trades = [ct(10, 100.0, 5, Direction::BuyerInitiated)];
        let (out, report) = compute_impacts("S", &trades, &[q(5, 100.0), q(10, 100.0)]);
        assert!(out.is_empty());
        assert_eq!(report.dropped_no_next_quote, 1);
    }

    #[test]
    fn normalization_examples() {
        let mut raw = BTreeMap::new();
        raw.insert("S".to_string(), vec![100, 300]);
        let mut o = obs(0.0, 0.0, Direction::BuyerInitiated);
        o.volume = 100;
        let out = normalize_volumes(&[o.clone()], &raw).unwrap();
        assert_eq!(out[0].omega, 0.5);

        raw.insert("S".to_string(), vec![70; 5]);
        o.volume = 70;
        assert_eq!(normalize_volumes(&[o.clone()], &raw).unwrap()[0].omega, 1.0);

        o.stock_id = "missing".into();
        assert!(normalize_volumes(&[o], &raw).is_err());
    }

    #[test]
    fn default_edges() {
        let e = BinEdges::default();
        assert_eq!(e.n_bins(), 20);
        assert_eq!(e.lo(), 10f64.powf(-3.2));
        assert_eq!(e.hi(), 10.0);
        assert!(e.edges().windows(2).all(|w| w[0] < w[1]));
        let ratios: Vec<f64> = e.edges().windows(2).map(|w| (w[1] / w[0]).log10()).collect();
        assert!(ratios.iter().all(|r| (r - 0.21).abs() < 1e-12));
    }

    #[test]
    fn boundary_values_land_in_first_and_last_bins() {
        let e = BinEdges::default();
        assert_eq!(e.bin_index(10f64.powf(-3.2)), Some(0));
        assert_eq!(e.bin_index(10.0), Some(19));
        assert_eq!(e.bin_index(10.000001), None);
        assert_eq!(e.bin_index(1e-4), None);
        assert_eq!(e.bin_index(f64::NAN), None);
        for (i, w) in e.edges().windows(2).enumerate() {
            assert_eq!(e.bin_index(w[0]), Some(i));
        }
    }

    #[test]
    fn singleton_curve() {
        let c = bin_curve(&[obs(1.0, 1e-4, Direction::BuyerInitiated)], &BinEdges::default(), Direction::BuyerInitiated, "g");
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.points[0].omega_star, 1.0);
        assert_eq!(c.points[0].delta_p_star, 1e-4);
        assert_eq!(c.points[0].count, 1);
    }

    #[test]
    fn curve_csv_round_trip() {
        let observations: Vec<_> = (1..50).map(|i| obs(i as f64 * 0.17, i as f64 * 1e-5, Direction::BuyerInitiated)).collect();
        let c = bin_curve(&observations, &BinEdges::default(), Direction::BuyerInitiated, "g");
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = BinnedCurve::read_csv(buf.as_slice(), "g", Direction::BuyerInitiated).unwrap();
        assert_eq!(back.points.len(), c.points.len());
        for (a, b) in back.points.iter().zip(&c.points) {
            assert_eq!((a.omega_star, a.delta_p_star, a.count), (b.omega_star, b.delta_p_star, b.count));
        }
    }

    #[test]
    fn slope_of_exact_power_curve() {
        let observations: Vec<_> = (0..200)
            .map(|i| {
                let w = 10f64.powf(-3.0 + i as f64 * 0.02);
                obs(w, -w.powf(0.4) / 50.0, Direction::SellerInitiated)
            })
            .collect();
        let c = bin_curve(&observations, &BinEdges::default(), Direction::SellerInitiated, "g");
        let s = loglog_slope(&c, 10f64.powf(-0.9), 10.0).unwrap();
        assert!((s - 0.4).abs() < 0.01, "{s}");
        assert!(loglog_slope(&c, 20.0, 30.0).is_err());
    }

    #[test]
    fn daily_mean_volume() {
        let trades = [ct(1, 10.0, 100, Direction::BuyerInitiated), ct(2, 12.0, 300, Direction::BuyerInitiated)];
        let recs = daily_averages("S", &[], &trades);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].mean_volume, 200.0);
        assert_eq!(recs[0].mean_price, 11.0);
        assert_eq!(recs[0].mean_impact, None);
    }

    #[test]
    fn histogram_of_constant_values() {
        let h = LogHistogram::build(&[5.0, 5.0, 0.0, -1.0], 3).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 2);
        assert_eq!(h.excluded, 2);
        assert_abs_diff_eq!(h.masses.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(LogHistogram::build(&[1.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn masses_sum_to_one(values in prop::collection::vec(1e-6f64..1e6, 1..200), n in 1usize..70) {
            let h = LogHistogram::build(&values, n).unwrap();
            prop_assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert_eq!(h.counts.iter().sum::<usize>(), values.len());
        }

        #[test]
        fn binning_partitions_and_flips_sign(
            pts in prop::collection::vec((-4.0f64..1.5, -1e-3f64..1e-3), 0..300)
        ) {
            let edges = BinEdges::default();
            let observations: Vec<_> = pts.iter().map(|&(lw, d)| obs(10f64.powf(lw), d, Direction::BuyerInitiated)).collect();
            let c = bin_curve(&observations, &edges, Direction::BuyerInitiated, "g");
            prop_assert_eq!(c.in_range() + c.out_of_range, observations.len());
            for p in &c.points {
                prop_assert!(p.bin_lo <= p.omega_star && p.omega_star <= p.bin_hi);
            }
            let flipped: Vec<_> = observations.iter().map(|o| ImpactObservation { delta_p: -o.delta_p, ..o.clone() }).collect();
            let f = bin_curve(&flipped, &edges, Direction::BuyerInitiated, "g");
            prop_assert_eq!(f.points.len(), c.points.len());
            for (a, b) in f.points.iter().zip(&c.points) {
                prop_assert_eq!(a.delta_p_star, -b.delta_p_star);
                prop_assert_eq!(a.omega_star, b.omega_star);
                prop_assert_eq!(a.count, b.count);
            }
        }

        #[test]
        fn normalization_is_scale_invariant(vols in prop::collection::vec(1u64..10_000, 1..50), k in 2u64..50) {
            let mut raw = BTreeMap::new();
            raw.insert("S".to_string(), vols.clone());
            let observations: Vec<_> = vols.iter().map(|&v| ImpactObservation { volume: v, ..obs(0.0, 0.0, Direction::BuyerInitiated) }).collect();
            let a = normalize_volumes(&observations, &raw).unwrap();
            raw.insert("S".to_string(), vols.iter().map(|v| v * k).collect());
            let scaled: Vec<_> = observations.iter().map(|o| ImpactObservation { volume: o.volume * k, ..o.clone() }).collect();
            let b = normalize_volumes(&scaled, &raw).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.omega - y.omega).abs() <= 1e-12 * x.omega.max(1.0));
            }
        }
    }
}
