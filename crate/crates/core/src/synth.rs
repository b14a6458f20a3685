//! Seeded synthetic markets with known answers.
//!
//! [`gen_market`] writes trade/quote tapes whose impacts follow
//! `sign(omega) |omega|^alpha / lambda` (optionally with lognormal noise), with
//! the true direction and realised impact of every trade kept alongside.
//! [`gen_collapse_family`] builds curves for several groups from one master
//! function so the collapse exponents are known, and
//! [`gen_powerlaw_samples`] draws from a continuous power law.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::Direction;
use crate::collapse::LiquidityProxy;
use crate::config::{RunConfig, StockInput};
use crate::error::{Error, Result};
use crate::impact::{BinEdges, BinnedCurve, CurvePoint};
use crate::ingest::{write_quotes, write_trades, QuoteEvent, SessionFilter, TickFormat, TradeEvent};
use crate::output::write_atomic;
use crate::pipeline::StockEvents;
use crate::powerlaw::powerlaw_quantile;
use crate::time::{midnight_micros, MICROS_PER_SECOND};

/// `n` inverse-CDF draws from a power law above `x_min`.
pub fn gen_powerlaw_samples(alpha: f64, x_min: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(alpha > 1.0) || !(x_min > 0.0) {
        return Err(Error::InvalidArgument(format!("need alpha > 1 and x_min > 0, got {alpha}, {x_min}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| powerlaw_quantile(rng.random::<f64>(), alpha, x_min)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolumeModel {
    /// Volume = mean_volume * exp(sigma z - sigma^2 / 2), rounded, at least 1.
    LogNormal { sigma: f64 },
    /// Every trade has exactly the mean volume.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMode {
    Fair,
    AllBuy,
    AllSell,
}

/// Master function for collapse families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MasterFunction {
    /// `z^exponent`.
    Power { exponent: f64 },
    /// `z^exponent / (1 + z / knee)^exponent`: slope `exponent` well below
    /// the knee, flat well above it.
    Saturating { exponent: f64, knee: f64 },
}

impl MasterFunction {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            MasterFunction::Power { exponent } => z.powf(exponent),
            MasterFunction::Saturating { exponent, knee } => (z / (1.0 + z / knee)).powf(exponent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupScenario {
    pub group_id: String,
    pub n_stocks: usize,
    /// Liquidity proxy used for collapse families.
    pub c_target: f64,
    pub alpha_impact: f64,
    pub lambda: f64,
    /// Trades per hour of tradable time.
    pub trade_rate: f64,
    pub mean_volume: f64,
    /// Quoted spread in currency units.
    pub spread: f64,
    pub start_price: f64,
}

impl Default for GroupScenario {
    fn default() -> Self {
        GroupScenario {
            group_id: "G".into(),
            n_stocks: 1,
            c_target: 1.0,
            alpha_impact: 0.3,
            lambda: 2000.0,
            trade_rate: 60.0,
            mean_volume: 1000.0,
            spread: 0.02,
            start_price: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketScenario {
    pub seed: u64,
    pub start_date: NaiveDate,
    /// Number of weekdays simulated.
    pub n_days: usize,
    pub session: SessionFilter,
    /// Std-dev of the log-midquote step before each trade.
    pub volatility: f64,
    /// Sigma of the mean-one lognormal factor on impact magnitudes.
    pub impact_noise: f64,
    /// Share of trades printed at the midquote.
    pub mid_fraction: f64,
    pub direction_mode: DirectionMode,
    pub volume_model: VolumeModel,
    pub gamma_0: f64,
    pub delta_0: f64,
    pub master: MasterFunction,
    /// Sigma of the mean-one lognormal factor on family curve points.
    pub family_noise: f64,
    /// Observations attributed to each family curve point.
    pub family_count: usize,
    pub groups: Vec<GroupScenario>,
}

impl Default for MarketScenario {
    fn default() -> Self {
        let group = |id: &str, c: f64, rate: f64, vol: f64, price: f64| GroupScenario {
            group_id: id.into(),
            n_stocks: 2,
            c_target: c,
            trade_rate: rate,
            mean_volume: vol,
            start_price: price,
            ..Default::default()
        };
        MarketScenario {
            seed: 20130930,
            start_date: NaiveDate::from_ymd_opt(2013, 9, 23).unwrap(),
            n_days: 10,
            session: SessionFilter::default(),
            volatility: 1e-4,
            impact_noise: 0.3,
            mid_fraction: 0.0,
            direction_mode: DirectionMode::Fair,
            volume_model: VolumeModel::LogNormal { sigma: 1.5 },
            gamma_0: 0.3,
            delta_0: 0.3,
            master: MasterFunction::Saturating {
                exponent: 1.0,
                knee: 0.01,
            },
            family_noise: 0.0,
            family_count: 100,
            groups: vec![
                group("Financials", 1.0, 40.0, 800.0, 50.0),
                group("Resources", 10.0, 60.0, 1000.0, 120.0),
                group("Industrials", 100.0, 80.0, 1500.0, 300.0),
            ],
        }
    }
}

impl MarketScenario {
    pub fn validate(&self) -> Result<()> {
        self.session.validate()?;
        if self.groups.is_empty() {
            return Err(Error::config("groups", "at least one group is required"));
        }
        if self.n_days == 0 {
            return Err(Error::config("n_days", "must be positive"));
        }
        if self.session.tradable_windows().iter().all(|w| w.duration_micros() < 10) {
            return Err(Error::config("session", "no tradable time left after exclusions"));
        }
        if !(0.0..=1.0).contains(&self.mid_fraction) {
            return Err(Error::config("mid_fraction", "must lie in [0, 1]"));
        }
        if !(self.volatility >= 0.0 && self.impact_noise >= 0.0 && self.family_noise >= 0.0) {
            return Err(Error::config("volatility", "noise levels must be non-negative"));
        }
        if let VolumeModel::LogNormal { sigma } = self.volume_model {
            if !(sigma >= 0.0) {
                return Err(Error::config("volume_model.sigma", "must be non-negative"));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, g) in self.groups.iter().enumerate() {
            let field = |f: &str| format!("groups[{i}].{f}");
            if !ids.insert(g.group_id.as_str()) {
                return Err(Error::config(field("group_id"), "duplicate group id"));
            }
            let positive = [
                ("c_target", g.c_target),
                ("lambda", g.lambda),
                ("trade_rate", g.trade_rate),
                ("mean_volume", g.mean_volume),
                ("start_price", g.start_price),
            ];
            for (name, v) in positive {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::config(field(name), "must be positive"));
                }
            }
            if !(g.alpha_impact > 0.0 && g.alpha_impact <= 1.0) {
                return Err(Error::config(field("alpha_impact"), "must lie in (0, 1]"));
            }
            if !(g.spread >= 0.0 && g.spread < g.start_price) {
                return Err(Error::config(field("spread"), "must be non-negative and below the price"));
            }
            if g.n_stocks == 0 {
                return Err(Error::config(field("n_stocks"), "must be positive"));
            }
        }
        Ok(())
    }

    /// The simulated trading days.
    pub fn days(&self) -> Vec<NaiveDate> {
        self.start_date
            .iter_days()
            .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
            .take(self.n_days)
            .collect()
    }

    pub fn stock_id(group: &GroupScenario, index: usize) -> String {
        format!("{}-{:02}", group.group_id, index + 1)
    }

    pub fn from_toml(text: &str) -> Result<MarketScenario> {
        toml::from_str(text).map_err(|e| Error::config("<scenario>", e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<MarketScenario> {
        MarketScenario::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<scenario>", e.to_string()))
    }
}

/// A simulated stock's tape plus the truth behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTape {
    pub trades: Vec<TradeEvent>,
    pub quotes: Vec<QuoteEvent>,
    pub true_directions: Vec<Direction>,
    /// Realised log-midquote change across each trade.
    pub true_impacts: Vec<f64>,
    /// Volume over the configured mean volume.
    pub true_omegas: Vec<f64>,
    pub at_mid: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockTape {
    pub stock_id: String,
    pub tape: LabeledTape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTape {
    pub group_id: String,
    pub stocks: Vec<StockTape>,
}

fn quote_at(ts: i64, mid: f64, spread: f64) -> QuoteEvent {
    QuoteEvent {
        timestamp: ts,
        bid: mid - spread / 2.0,
        ask: mid + spread / 2.0,
    }
}

fn lognormal_factor<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        1.0
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (sigma * z - sigma * sigma / 2.0).exp()
    }
}

fn gen_stock(scenario: &MarketScenario, group: &GroupScenario, rng: &mut ChaCha8Rng) -> LabeledTape {
    let mut tape = LabeledTape {
        trades: Vec::new(),
        quotes: Vec::new(),
        true_directions: Vec::new(),
        true_impacts: Vec::new(),
        true_omegas: Vec::new(),
        at_mid: Vec::new(),
    };
    let gaps = Exp::new(group.trade_rate / 3600.0 / MICROS_PER_SECOND as f64).expect("positive rate");
    let windows = scenario.session.tradable_windows();
    let mut mid = group.start_price;
    for day in scenario.days() {
        let midnight = midnight_micros(day);
        for w in &windows {
            let (start, end) = (midnight + w.start.micros(), midnight + w.end.micros());
            let mut t = start;
            loop {
                t += 4 + gaps.sample(rng).round() as i64;
                if t + 2 > end {
                    break;
                }
                let z: f64 = StandardNormal.sample(rng);
                mid *= (scenario.volatility * z).exp();
                let before = quote_at(t - 1, mid, group.spread);
                let direction = match scenario.direction_mode {
                    DirectionMode::AllBuy => Direction::BuyerInitiated,
                    DirectionMode::AllSell => Direction::SellerInitiated,
                    DirectionMode::Fair if rng.random_bool(0.5) => Direction::BuyerInitiated,
                    DirectionMode::Fair => Direction::SellerInitiated,
                };
                let volume = match scenario.volume_model {
                    VolumeModel::Fixed => group.mean_volume.round(),
                    VolumeModel::LogNormal { sigma } => (group.mean_volume * lognormal_factor(rng, sigma)).round(),
                }
                .clamp(1.0, scenario.session.max_volume as f64) as u64;
                let omega = volume as f64 / group.mean_volume;
                let at_mid = scenario.mid_fraction > 0.0 && rng.random_bool(scenario.mid_fraction);
                let price = if at_mid {
                    before.mid()
                } else if direction == Direction::BuyerInitiated {
                    before.ask
                } else {
                    before.bid
                };
                let magnitude = omega.powf(group.alpha_impact) / group.lambda * lognormal_factor(rng, scenario.impact_noise);
                mid *= (direction.sign() * magnitude).exp();
                let after = quote_at(t + 1, mid, group.spread);

                tape.quotes.push(before);
                tape.trades.push(TradeEvent { timestamp: t, price, volume });
                tape.quotes.push(after);
                tape.true_directions.push(direction);
                tape.true_impacts.push(after.mid().ln() - before.mid().ln());
                tape.true_omegas.push(omega);
                tape.at_mid.push(at_mid);
                t += 1;
            }
        }
    }
    tape
}

/// Generator for stock `stock` of group `group`.
fn stock_rng(seed: u64, group: usize, stock: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((group as u64) << 32) | stock as u64);
    rng
}

/// Simulates every stock of every group. Stocks are independent and seeded
/// by position, so the result does not depend on thread scheduling.
pub fn gen_market(scenario: &MarketScenario) -> Result<Vec<GroupTape>> {
    scenario.validate()?;
    Ok(scenario
        .groups
        .par_iter()
        .enumerate()
        .map(|(gi, group)| GroupTape {
            group_id: group.group_id.clone(),
            stocks: (0..group.n_stocks)
                .into_par_iter()
                .map(|si| StockTape {
                    stock_id: MarketScenario::stock_id(group, si),
                    tape: gen_stock(scenario, group, &mut stock_rng(scenario.seed, gi, si)),
                })
                .collect(),
        })
        .collect())
}

/// One curve per group with `delta_p* = C^-gamma_0 f(omega* / C^delta_0)` at
/// the geometric centres of the standard volume bins, so that rescaling with
/// `(gamma_0, delta_0)` maps every group onto `f`.
pub fn gen_collapse_family(scenario: &MarketScenario) -> Result<Vec<(BinnedCurve, LiquidityProxy)>> {
    scenario.validate()?;
    let edges = BinEdges::default();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    Ok(scenario
        .groups
        .iter()
        .map(|g| {
            let c = g.c_target;
            let points = edges
                .edges()
                .windows(2)
                .enumerate()
                .map(|(bin, w)| {
                    let omega = (w[0] * w[1]).sqrt();
                    let dp = c.powf(-scenario.gamma_0)
                        * scenario.master.eval(omega / c.powf(scenario.delta_0))
                        * lognormal_factor(&mut rng, scenario.family_noise);
                    CurvePoint {
                        bin,
                        bin_lo: w[0],
                        bin_hi: w[1],
                        omega_star: omega,
                        delta_p_star: dp,
                        count: scenario.family_count,
                    }
                })
                .collect();
            (
                BinnedCurve {
                    group_id: g.group_id.clone(),
                    direction: Direction::BuyerInitiated,
                    points,
                    out_of_range: 0,
                },
                LiquidityProxy {
                    group_id: g.group_id.clone(),
                    c,
                },
            )
        })
        .collect())
}

/// Paths of one stock's files inside a tape directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapeFiles {
    pub stock_id: String,
    pub group_id: String,
    pub trades: PathBuf,
    pub quotes: PathBuf,
    pub labels: PathBuf,
}

/// Writes trades and quotes in the ingest layout plus a label sidecar
/// (`timestamp,direction,impact,omega,at_mid`).
pub fn write_tape(dir: &Path, group_id: &str, stock: &StockTape, format: &TickFormat) -> Result<TapeFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = TapeFiles {
        stock_id: stock.stock_id.clone(),
        group_id: group_id.to_string(),
        trades: dir.join(format!("{}_trades.csv", stock.stock_id)),
        quotes: dir.join(format!("{}_quotes.csv", stock.stock_id)),
        labels: dir.join(format!("{}_labels.csv", stock.stock_id)),
    };
    let tape = &stock.tape;
    write_atomic(&files.trades, |w| write_trades(w, &tape.trades, format))?;
    write_atomic(&files.quotes, |w| write_quotes(w, &tape.quotes, format))?;
    write_atomic(&files.labels, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["timestamp", "direction", "impact", "omega", "at_mid"])?;
        for i in 0..tape.trades.len() {
            wtr.write_record([
                tape.trades[i].timestamp.to_string(),
                tape.true_directions[i].as_str().to_string(),
                tape.true_impacts[i].to_string(),
                tape.true_omegas[i].to_string(),
                tape.at_mid[i].to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<labels>", e))?;
        Ok(())
    })?;
    Ok(files)
}

/// Writes every tape under `dir` and returns a run configuration that
/// reads them back, using `base` for all other settings. Stock paths in the
/// returned configuration are relative to `dir`.
pub fn write_market(dir: &Path, tapes: &[GroupTape], base: &RunConfig) -> Result<(RunConfig, Vec<TapeFiles>)> {
    let mut files = Vec::new();
    let mut stocks = Vec::new();
    for g in tapes {
        for s in &g.stocks {
            let f = write_tape(&dir.join("tapes"), &g.group_id, s, &base.format)?;
            let rel = |p: &Path| PathBuf::from("tapes").join(p.file_name().expect("tape file name"));
            stocks.push(StockInput {
                id: s.stock_id.clone(),
                group: g.group_id.clone(),
                trades: rel(&f.trades),
                quotes: rel(&f.quotes),
            });
            files.push(f);
        }
    }
    Ok((
        RunConfig {
            stocks,
            ..base.clone()
        },
        files,
    ))
}

/// In-memory events of every tape, in the same order as [`write_market`].
pub fn market_events(tapes: &[GroupTape]) -> Vec<StockEvents> {
    tapes
        .iter()
        .flat_map(|g| {
            g.stocks
                .iter()
                .map(|s| StockEvents::in_memory(&s.stock_id, &g.group_id, s.tape.trades.clone(), s.tape.quotes.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::date_of;

    fn small(days: usize) -> MarketScenario {
        MarketScenario {
            n_days: days,
            groups: vec![GroupScenario {
                group_id: "A".into(),
                trade_rate: 200.0,
                ..Default::default()
            }],
            ..Default::default()
        }
    }

    #[test]
    fn inverse_cdf_boundaries() {
        assert_eq!(powerlaw_quantile(0.0, 3.0, 0.7), 0.7);
        assert!((powerlaw_quantile(0.5, 2.0, 0.7) - 1.4).abs() < 1e-15);
        let xs = gen_powerlaw_samples(2.5, 0.1, 1000, 1).unwrap();
        assert!(xs.iter().all(|&x| x >= 0.1));
        assert_eq!(xs, gen_powerlaw_samples(2.5, 0.1, 1000, 1).unwrap());
        assert!(gen_powerlaw_samples(1.0, 0.1, 10, 1).is_err());
    }

    #[test]
    fn unit_volume_without_noise_moves_mid_by_inverse_lambda() {
        let mut s = small(1);
        s.impact_noise = 0.0;
        s.volatility = 0.0;
        s.volume_model = VolumeModel::Fixed;
        s.direction_mode = DirectionMode::AllBuy;
        let tape = &gen_market(&s).unwrap()[0].stocks[0].tape;
        assert!(!tape.trades.is_empty());
        let lambda = s.groups[0].lambda;
        for (&impact, &omega) in tape.true_impacts.iter().zip(&tape.true_omegas) {
            assert_eq!(omega, 1.0);
            assert!((impact - 1.0 / lambda).abs() < 1e-12, "{impact}");
        }
    }

    #[test]
    fn forced_buys_never_lower_the_mid() {
        let mut s = small(2);
        s.direction_mode = DirectionMode::AllBuy;
        let tape = &gen_market(&s).unwrap()[0].stocks[0].tape;
        assert!(tape.true_impacts.iter().all(|&d| d >= 0.0));
        assert!(tape.true_directions.iter().all(|&d| d == Direction::BuyerInitiated));
    }

    #[test]
    fn tapes_are_deterministic_and_consistent() {
        let s = small(2);
        let a = gen_market(&s).unwrap();
        assert_eq!(a, gen_market(&s).unwrap());
        let tape = &a[0].stocks[0].tape;
        assert_eq!(tape.quotes.len(), 2 * tape.trades.len());
        assert!(tape.trades.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert!(tape.quotes.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        for tr in &tape.trades {
            assert!(s.session.keeps(tr), "trade outside session at {}", date_of(tr.timestamp));
        }
        let other = MarketScenario { seed: 1, ..s };
        assert_ne!(a, gen_market(&other).unwrap());
    }

    #[test]
    fn mid_fraction_places_prices_at_the_mid() {
        let mut s = small(1);
        s.mid_fraction = 1.0;
        let tape = &gen_market(&s).unwrap()[0].stocks[0].tape;
        for (i, tr) in tape.trades.iter().enumerate() {
            assert!(tape.at_mid[i]);
            assert_eq!(tr.price, tape.quotes[2 * i].mid());
        }
    }

    #[test]
    fn infeasible_session_is_rejected() {
        let mut s = small(1);
        s.session.excluded_windows = vec![crate::time::TimeWindow::new(s.session.trading_day_start, s.session.trading_day_end)];
        assert!(matches!(gen_market(&s), Err(Error::Config { .. })));
        let mut s = small(1);
        s.groups[0].lambda = 0.0;
        assert!(gen_market(&s).is_err());
    }

    #[test]
    fn zero_exponents_give_identical_curves() {
        let s = MarketScenario {
            gamma_0: 0.0,
            delta_0: 0.0,
            ..Default::default()
        };
        let fam = gen_collapse_family(&s).unwrap();
        for (c, _) in &fam[1..] {
            assert_eq!(c.points, fam[0].0.points);
        }
    }

    #[test]
    fn unit_proxy_curve_is_the_master_function() {
        let s = MarketScenario::default();
        let fam = gen_collapse_family(&s).unwrap();
        let (curve, proxy) = &fam[0];
        assert_eq!(proxy.c, 1.0);
        assert_eq!(curve.points.len(), 20);
        for p in &curve.points {
            assert_eq!(p.delta_p_star, s.master.eval(p.omega_star));
        }
    }

    #[test]
    fn weekdays_only() {
        let s = MarketScenario::default();
        let days = s.days();
        assert_eq!(days.len(), 10);
        assert_eq!(days[5], NaiveDate::from_ymd_opt(2013, 9, 30).unwrap());
    }
}
