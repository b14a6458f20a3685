//! End-to-end run: ingest, classify, measure, bin, fit and collapse every
//! group in every period, writing all outputs under one directory.
//!
//! Output layout, relative to the run directory:
//!
//! ```text
//! report.json                      stage counts, per-unit results, file list
//! config.toml                      the configuration that produced the run
//! <period>/fits.json               one record per fitted curve
//! <period>/<unit>/curve_<dir>.csv  binned impact curve
//! <period>/<unit>/daily.csv        daily averages
//! <period>/<unit>/daily_hist.json  histograms of the daily averages
//! <period>/collapse_<dir>.json     collapse fit
//! <period>/collapse_<dir>.csv      unscaled and rescaled collapse points
//! ```
//!
//! A unit is a group (pooled) or a single stock, depending on the binning
//! configuration. Failures are confined to the unit or stock they occur in.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{classify_stream, ClassifiedTrade, ClassifyConfig, ClassifyReport, Direction, Rule};
use crate::collapse::{fit_collapse, liquidity_proxy, CollapseResult, LiquidityProxy};
use crate::config::{validate_stock_ids, NormalizationWindow, Period, Pooling, RunConfig, StockInput};
use crate::error::{Error, Result};
use crate::impact::{
    bin_curve, compute_impacts, daily_averages, daily_distributions, normalize_volumes, write_daily_csv, BinnedCurve,
    DailyAverage, DailyDistributions, ImpactObservation, ImpactReport,
};
use crate::ingest::{
    aggregate_trades, dedupe_quotes, filter_events, parse_quotes, parse_trades, AggregatedTrade, FilterSummary, ParseReport,
    QuoteEvent, SessionFilter, TradeEvent,
};
use crate::output::{read_json, write_atomic, write_json};
use crate::powerlaw::{fit_tail_impacts, FitRecord, PowerLawFit};
use crate::time::{date_of, midnight_micros};

pub const DIRECTIONS: [Direction; 2] = [Direction::BuyerInitiated, Direction::SellerInitiated];

/// Raw events of one stock, before session filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct StockEvents {
    pub stock_id: String,
    pub group_id: String,
    pub trades: Vec<TradeEvent>,
    pub quotes: Vec<QuoteEvent>,
    pub trades_parse: ParseReport,
    pub quotes_parse: ParseReport,
}

impl StockEvents {
    /// Events that did not come from a file; every row counts as accepted.
    pub fn in_memory(stock_id: &str, group_id: &str, trades: Vec<TradeEvent>, quotes: Vec<QuoteEvent>) -> StockEvents {
        let report = |n| ParseReport {
            source: format!("<memory:{stock_id}>"),
            total_rows: n,
            accepted: n,
            ..Default::default()
        };
        StockEvents {
            stock_id: stock_id.into(),
            group_id: group_id.into(),
            trades_parse: report(trades.len()),
            quotes_parse: report(quotes.len()),
            trades,
            quotes,
        }
    }

    pub fn load(stock: &StockInput, config: &RunConfig) -> Result<StockEvents> {
        let (trades, trades_parse) = parse_trades(&stock.trades, &config.format)?;
        let (quotes, quotes_parse) = parse_quotes(&stock.quotes, &config.format)?;
        Ok(StockEvents {
            stock_id: stock.id.clone(),
            group_id: stock.group.clone(),
            trades,
            quotes,
            trades_parse,
            quotes_parse,
        })
    }
}

/// Per-stage record counts for one stock.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StockStages {
    pub trades_parse: ParseReport,
    pub quotes_parse: ParseReport,
    pub trade_filter: FilterSummary,
    pub quote_filter: FilterSummary,
    /// Trades in, events out of same-timestamp aggregation.
    pub aggregate: (usize, usize),
    /// Quotes in, quotes out of deduplication.
    pub dedupe: (usize, usize),
    pub classify: ClassifyReport,
    pub impact: ImpactReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockReport {
    pub stock_id: String,
    pub group_id: String,
    pub stages: Option<StockStages>,
    pub error: Option<String>,
}

/// A stock after cleaning, classification and impact measurement. Impacts
/// carry raw volumes in `omega` until normalised per period.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedStock {
    pub stock_id: String,
    pub group_id: String,
    pub trades: Vec<AggregatedTrade>,
    pub quotes: Vec<QuoteEvent>,
    pub classified: Vec<ClassifiedTrade>,
    pub impacts: Vec<ImpactObservation>,
    pub stages: StockStages,
}

/// Session filter, aggregation and deduplication.
pub fn clean_events(
    trades: &[TradeEvent],
    quotes: &[QuoteEvent],
    session: &SessionFilter,
) -> (Vec<AggregatedTrade>, Vec<QuoteEvent>, FilterSummary, FilterSummary) {
    let (kept_trades, trade_filter) = filter_events(trades, session);
    let (kept_quotes, quote_filter) = filter_events(quotes, session);
    (aggregate_trades(&kept_trades), dedupe_quotes(&kept_quotes), trade_filter, quote_filter)
}

/// Classification and impact measurement run separately on each calendar
/// day, so no quote or tick carries over from one session to the next.
pub fn classify_and_measure(
    stock_id: &str,
    trades: &[AggregatedTrade],
    quotes: &[QuoteEvent],
    config: &ClassifyConfig,
) -> (Vec<ClassifiedTrade>, Vec<ImpactObservation>, ClassifyReport, ImpactReport) {
    let mut classified = Vec::with_capacity(trades.len());
    let mut impacts = Vec::with_capacity(trades.len());
    let mut creport = ClassifyReport::default();
    let mut ireport = ImpactReport::default();
    for day in trades.chunk_by(|a, b| date_of(a.timestamp) == date_of(b.timestamp)) {
        let start = midnight_micros(date_of(day[0].timestamp));
        let lo = quotes.partition_point(|q| q.timestamp < start);
        let hi = quotes.partition_point(|q| q.timestamp < start + crate::time::MICROS_PER_DAY);
        let day_quotes = &quotes[lo..hi];
        let (c, cr) = classify_stream(day, day_quotes, config);
        let (obs, ir) = compute_impacts(stock_id, &c, day_quotes);
        creport.input += cr.input;
        creport.classified += cr.classified;
        creport.dropped_no_quote += cr.dropped_no_quote;
        creport.buyer += cr.buyer;
        creport.seller += cr.seller;
        creport.indeterminate += cr.indeterminate;
        ireport.input += ir.input;
        ireport.kept += ir.kept;
        ireport.dropped_no_next_quote += ir.dropped_no_next_quote;
        classified.extend(c);
        impacts.extend(obs);
    }
    (classified, impacts, creport, ireport)
}

pub fn process_stock(events: &StockEvents, config: &RunConfig) -> ProcessedStock {
    let (trades, quotes, trade_filter, quote_filter) = clean_events(&events.trades, &events.quotes, &config.session);
    let (classified, impacts, classify, impact) = classify_and_measure(&events.stock_id, &trades, &quotes, &config.classify);
    let stages = StockStages {
        trades_parse: events.trades_parse.clone(),
        quotes_parse: events.quotes_parse.clone(),
        aggregate: (trade_filter.kept, trades.len()),
        dedupe: (quote_filter.kept, quotes.len()),
        trade_filter,
        quote_filter,
        classify,
        impact,
    };
    ProcessedStock {
        stock_id: events.stock_id.clone(),
        group_id: events.group_id.clone(),
        trades,
        quotes,
        classified,
        impacts,
        stages,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub direction: Direction,
    pub file: String,
    pub n_points: usize,
    pub in_range: usize,
    pub out_of_range: usize,
    pub fit: Option<PowerLawFit>,
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitReport {
    pub unit_id: String,
    pub group_id: String,
    pub stocks: Vec<String>,
    pub n_observations: usize,
    pub liquidity_proxy: Option<f64>,
    pub curves: Vec<CurveEntry>,
    pub daily_file: Option<String>,
    pub histogram_file: Option<String>,
    /// Set when the unit could not be processed at all.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseEntry {
    pub direction: Direction,
    pub units: Vec<String>,
    pub result_file: Option<String>,
    pub curves_file: Option<String>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Distinct days with at least one cleaned trade in any stock.
    pub n_days: usize,
    pub fits_file: String,
    pub units: Vec<UnitReport>,
    pub collapses: Vec<CollapseEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub config_file: String,
    pub powerlaw_seed: u64,
    pub stocks: Vec<StockReport>,
    pub periods: Vec<PeriodReport>,
    /// Every file written, relative to the run directory, sorted.
    pub files: Vec<String>,
}

impl RunReport {
    pub fn failed_units(&self) -> Vec<(&str, &str)> {
        self.periods
            .iter()
            .flat_map(|p| p.units.iter().filter(|u| u.error.is_some()).map(move |u| (p.name.as_str(), u.unit_id.as_str())))
            .collect()
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Parses every configured stock and runs the full pipeline.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let loaded: Vec<(String, String, Result<StockEvents>)> = config
        .stocks
        .par_iter()
        .map(|s| (s.id.clone(), s.group.clone(), StockEvents::load(s, config)))
        .collect();
    run_loaded(config, loaded)
}

/// Runs the pipeline on events already in memory.
pub fn run_events(config: &RunConfig, stocks: Vec<StockEvents>) -> Result<RunReport> {
    config.validate_settings()?;
    validate_stock_ids(stocks.iter().map(|s| (s.stock_id.as_str(), s.group_id.as_str())))?;
    let loaded = stocks
        .into_iter()
        .map(|s| (s.stock_id.clone(), s.group_id.clone(), Ok(s)))
        .collect();
    run_loaded(config, loaded)
}

struct Writer<'a> {
    root: &'a Path,
    files: std::sync::Mutex<Vec<String>>,
}

impl Writer<'_> {
    fn write<F>(&self, rel: &str, body: F) -> Result<String>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        write_atomic(&self.root.join(rel), body)?;
        self.files.lock().expect("file list lock").push(rel.to_string());
        Ok(rel.to_string())
    }

    fn json<T: Serialize>(&self, rel: &str, value: &T) -> Result<String> {
        write_json(&self.root.join(rel), value)?;
        self.files.lock().expect("file list lock").push(rel.to_string());
        Ok(rel.to_string())
    }
}

fn run_loaded(config: &RunConfig, loaded: Vec<(String, String, Result<StockEvents>)>) -> Result<RunReport> {
    let root = config.output_dir.as_path();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let writer = Writer {
        root,
        files: Default::default(),
    };
    let edges = config.binning.edges()?;

    let processed: Vec<(String, String, Result<ProcessedStock>)> = loaded
        .into_par_iter()
        .map(|(id, group, ev)| {
            let p = ev.map(|ev| process_stock(&ev, config));
            (id, group, p)
        })
        .collect();
    let stock_reports: Vec<StockReport> = processed
        .iter()
        .map(|(id, group, p)| StockReport {
            stock_id: id.clone(),
            group_id: group.clone(),
            stages: p.as_ref().ok().map(|p| p.stages.clone()),
            error: p.as_ref().err().map(|e| e.to_string()),
        })
        .collect();

    // Units in sorted order, each with its member stocks.
    let mut units: BTreeMap<String, (String, Vec<usize>)> = BTreeMap::new();
    for (i, (id, group, _)) in processed.iter().enumerate() {
        let key = match config.binning.pooling {
            Pooling::Group => group.clone(),
            Pooling::Stock => id.clone(),
        };
        units.entry(key).or_insert_with(|| (group.clone(), Vec::new())).1.push(i);
    }

    let whole_volumes = stock_volumes(&processed, None);
    let mut periods = Vec::new();
    for period in &config.periods {
        let n_days = processed
            .iter()
            .filter_map(|(_, _, p)| p.as_ref().ok())
            .flat_map(|p| p.trades.iter().map(|t| date_of(t.timestamp)))
            .filter(|d| period.contains(*d))
            .collect::<BTreeSet<_>>()
            .len();
        let period_volumes = stock_volumes(&processed, Some(period));
        let volumes = match config.binning.normalization {
            NormalizationWindow::Period => &period_volumes,
            NormalizationWindow::Whole => &whole_volumes,
        };
        let ctx = PeriodContext {
            config,
            period,
            n_days,
            volumes,
            edges: &edges,
            writer: &writer,
        };
        let results: Vec<(UnitReport, Vec<FitRecord>, Option<(Vec<BinnedCurve>, LiquidityProxy)>)> = units
            .par_iter()
            .map(|(unit_id, (group_id, members))| ctx.run_unit(unit_id, group_id, members, &processed))
            .collect();

        let mut fits = Vec::new();
        let mut unit_reports = Vec::new();
        let mut collapse_inputs = Vec::new();
        for (report, f, inputs) in results {
            fits.extend(f);
            unit_reports.push(report);
            if let Some(inputs) = inputs {
                collapse_inputs.push(inputs);
            }
        }
        let fits_file = writer.json(&format!("{}/fits.json", period.name), &fits)?;
        let collapses = DIRECTIONS
            .iter()
            .map(|&dir| ctx.run_collapse(dir, &collapse_inputs))
            .collect();
        periods.push(PeriodReport {
            name: period.name.clone(),
            start: period.start,
            end: period.end,
            n_days,
            fits_file,
            units: unit_reports,
            collapses,
        });
    }

    let echo = RunConfig {
        output_dir: PathBuf::from("."),
        ..config.clone()
    };
    writer.write(CONFIG_FILE, |w| {
        w.write_all(echo.to_toml()?.as_bytes()).map_err(|e| Error::io(CONFIG_FILE, e))
    })?;
    let mut files = writer.files.into_inner().expect("file list lock");
    files.push(REPORT_FILE.to_string());
    files.sort();
    let report = RunReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_file: CONFIG_FILE.to_string(),
        powerlaw_seed: config.powerlaw.seed,
        stocks: stock_reports,
        periods,
        files,
    };
    write_json(&root.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Aggregated trade volumes per stock, optionally restricted to a period.
fn stock_volumes(processed: &[(String, String, Result<ProcessedStock>)], period: Option<&Period>) -> BTreeMap<String, Vec<u64>> {
    processed
        .iter()
        .filter_map(|(_, _, p)| p.as_ref().ok())
        .map(|p| {
            let vols = p
                .trades
                .iter()
                .filter(|t| period.is_none_or(|per| per.contains(date_of(t.timestamp))))
                .map(|t| t.total_volume)
                .collect();
            (p.stock_id.clone(), vols)
        })
        .collect()
}

struct PeriodContext<'a> {
    config: &'a RunConfig,
    period: &'a Period,
    n_days: usize,
    volumes: &'a BTreeMap<String, Vec<u64>>,
    edges: &'a crate::impact::BinEdges,
    writer: &'a Writer<'a>,
}

type UnitOutcome = (UnitReport, Vec<FitRecord>, Option<(Vec<BinnedCurve>, LiquidityProxy)>);

impl PeriodContext<'_> {
    fn run_unit(&self, unit_id: &str, group_id: &str, members: &[usize], processed: &[(String, String, Result<ProcessedStock>)]) -> UnitOutcome {
        let mut report = UnitReport {
            unit_id: unit_id.to_string(),
            group_id: group_id.to_string(),
            stocks: members.iter().map(|&i| processed[i].0.clone()).collect(),
            n_observations: 0,
            liquidity_proxy: None,
            curves: Vec::new(),
            daily_file: None,
            histogram_file: None,
            error: None,
        };
        match self.unit_body(unit_id, members, processed, &mut report) {
            Ok((fits, inputs)) => (report, fits, inputs),
            Err(e) => {
                report.error = Some(e.to_string());
                (report, Vec::new(), None)
            }
        }
    }

    fn unit_body(
        &self,
        unit_id: &str,
        members: &[usize],
        processed: &[(String, String, Result<ProcessedStock>)],
        report: &mut UnitReport,
    ) -> Result<(Vec<FitRecord>, Option<(Vec<BinnedCurve>, LiquidityProxy)>)> {
        let cfg = self.config;
        let in_period = |ts: i64| self.period.contains(date_of(ts));
        let mut stocks = Vec::new();
        for &i in members {
            match &processed[i].2 {
                Ok(p) => stocks.push(p),
                Err(e) => return Err(Error::InsufficientData(format!("stock `{}` failed: {e}", processed[i].0))),
            }
        }
        let mut obs = Vec::new();
        let mut trades = Vec::new();
        let mut daily: Vec<DailyAverage> = Vec::new();
        for p in &stocks {
            let raw: Vec<ImpactObservation> = p.impacts.iter().filter(|o| in_period(o.timestamp)).cloned().collect();
            let normalized = normalize_volumes(&raw, self.volumes)?;
            let ct: Vec<ClassifiedTrade> = p.classified.iter().filter(|t| in_period(t.trade.timestamp)).copied().collect();
            daily.extend(daily_averages(&p.stock_id, &normalized, &ct));
            obs.extend(normalized);
            trades.extend(ct);
        }
        report.n_observations = obs.len();
        if obs.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no impact observations for `{unit_id}` in period `{}`",
                self.period.name
            )));
        }

        let dir = format!("{}/{}", self.period.name, unit_id);
        let mut fits = Vec::new();
        let mut curves = Vec::new();
        for direction in DIRECTIONS {
            let curve = bin_curve(&obs, self.edges, direction, unit_id);
            let file = self
                .writer
                .write(&format!("{dir}/curve_{}.csv", direction.as_str()), |w| curve.write_csv(w))?;
            let fit = fit_tail_impacts(
                &curve,
                cfg.binning.tail_threshold,
                &cfg.powerlaw.options(),
                cfg.powerlaw.n_boot,
                cfg.powerlaw.seed,
            );
            if let Ok(f) = &fit {
                fits.push(FitRecord {
                    sector: unit_id.to_string(),
                    direction: direction.as_str().to_string(),
                    period: self.period.name.clone(),
                    fit: f.clone(),
                });
            }
            report.curves.push(CurveEntry {
                direction,
                file,
                n_points: curve.points.len(),
                in_range: curve.in_range(),
                out_of_range: curve.out_of_range,
                fit_error: fit.as_ref().err().map(|e| e.to_string()),
                fit: fit.ok(),
            });
            curves.push(curve);
        }

        report.daily_file = Some(self.writer.write(&format!("{dir}/daily.csv"), |w| write_daily_csv(w, &daily))?);
        let n_bins = cfg.daily.n_bins.unwrap_or(self.n_days.max(1));
        let hist: DailyDistributions = daily_distributions(&daily, n_bins)?;
        report.histogram_file = Some(self.writer.json(&format!("{dir}/daily_hist.json"), &hist)?);

        let proxy = liquidity_proxy(unit_id, &trades, self.n_days.max(1))?;
        report.liquidity_proxy = Some(proxy.c);
        Ok((fits, Some((curves, proxy))))
    }

    fn run_collapse(&self, direction: Direction, inputs: &[(Vec<BinnedCurve>, LiquidityProxy)]) -> CollapseEntry {
        let threshold = self.config.binning.tail_threshold;
        let (curves, proxies): (Vec<BinnedCurve>, Vec<LiquidityProxy>) = inputs
            .iter()
            .filter_map(|(cs, p)| cs.iter().find(|c| c.direction == direction).map(|c| (c.above(threshold), p.clone())))
            .filter(|(c, _)| !c.points.is_empty())
            .unzip();
        let mut entry = CollapseEntry {
            direction,
            units: proxies.iter().map(|p| p.group_id.clone()).collect(),
            result_file: None,
            curves_file: None,
            gamma: None,
            delta: None,
            epsilon: None,
            error: None,
        };
        let outcome = (|| -> Result<()> {
            if curves.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "{} curve(s) with points above {threshold}, need at least 2",
                    curves.len()
                )));
            }
            let result: CollapseResult = fit_collapse(&curves, &proxies, &self.config.collapse)?;
            let stem = format!("{}/collapse_{}", self.period.name, direction.as_str());
            entry.result_file = Some(self.writer.json(&format!("{stem}.json"), &result)?);
            entry.curves_file = Some(self.writer.write(&format!("{stem}.csv"), |w| result.write_curves_csv(w))?);
            entry.gamma = Some(result.gamma);
            entry.delta = Some(result.delta);
            entry.epsilon = Some(result.epsilon);
            Ok(())
        })();
        if let Err(e) = outcome {
            entry.error = Some(e.to_string());
        }
        entry
    }
}

/// Flat row of a classified-trade file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedRow {
    pub timestamp: i64,
    pub vwap: f64,
    pub total_volume: u64,
    pub n_trades: usize,
    pub direction: Direction,
    pub rule: Rule,
    pub prevailing_mid: f64,
}

impl From<&ClassifiedTrade> for ClassifiedRow {
    fn from(c: &ClassifiedTrade) -> Self {
        ClassifiedRow {
            timestamp: c.trade.timestamp,
            vwap: c.trade.vwap,
            total_volume: c.trade.total_volume,
            n_trades: c.trade.n_trades,
            direction: c.direction,
            rule: c.rule,
            prevailing_mid: c.prevailing_mid,
        }
    }
}

impl From<ClassifiedRow> for ClassifiedTrade {
    fn from(r: ClassifiedRow) -> Self {
        ClassifiedTrade {
            trade: AggregatedTrade {
                timestamp: r.timestamp,
                vwap: r.vwap,
                total_volume: r.total_volume,
                n_trades: r.n_trades,
            },
            direction: r.direction,
            rule: r.rule,
            prevailing_mid: r.prevailing_mid,
        }
    }
}

/// Writes rows with a header derived from the row type.
pub fn write_rows<T: Serialize, W: Write>(writer: W, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("<rows>", e))?;
    Ok(())
}

pub fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    })?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Plot-ready files derived from a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotManifest {
    pub files: Vec<String>,
}

fn require(run_dir: &Path, rel: Option<&String>, what: &str) -> Result<PathBuf> {
    let rel = rel.ok_or_else(|| Error::MissingDependency(what.to_string()))?;
    let path = run_dir.join(rel);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingDependency(format!("{what} ({})", path.display())))
    }
}

#[derive(Debug, Deserialize)]
struct CollapseCsvRow {
    group_id: String,
    c: f64,
    omega_star: f64,
    delta_p_star: f64,
    x: f64,
    y: f64,
}

/// Writes one delimited file per figure panel into `out_dir`:
/// impact curves per period, direction and unit; collapse panels with the
/// unscaled and rescaled point sets; and daily-average histograms. Values
/// are raw (no log transform). A referenced upstream file that is missing
/// yields [`Error::MissingDependency`]; units that failed in the run are
/// skipped.
pub fn emit_plot_data(report: &RunReport, run_dir: &Path, out_dir: &Path) -> Result<PlotManifest> {
    let mut files = Vec::new();
    let mut emit = |name: String, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        write_atomic(&out_dir.join(&name), |w| {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(header)?;
            for r in rows {
                wtr.write_record(r)?;
            }
            wtr.flush().map_err(|e| Error::io(&name, e))?;
            Ok(())
        })?;
        files.push(name);
        Ok(())
    };
    for period in &report.periods {
        for unit in period.units.iter().filter(|u| u.error.is_none()) {
            for curve in &unit.curves {
                let path = require(run_dir, Some(&curve.file), &format!("curve {}/{}/{}", period.name, unit.unit_id, curve.direction.as_str()))?;
                let c = BinnedCurve::read_csv(fs::File::open(&path).map_err(|e| Error::io(&path, e))?, &unit.unit_id, curve.direction)?;
                let rows = c
                    .points
                    .iter()
                    .map(|p| vec![p.omega_star.to_string(), p.delta_p_star.to_string(), c.magnitude(p).to_string(), p.count.to_string()])
                    .collect();
                emit(
                    format!("curves_{}_{}_{}.csv", period.name, curve.direction.as_str(), unit.unit_id),
                    &["omega_star", "delta_p_star", "magnitude", "count"],
                    rows,
                )?;
            }
            let hist_path = require(run_dir, unit.histogram_file.as_ref(), &format!("histogram {}/{}", period.name, unit.unit_id))?;
            let hist: DailyDistributions = read_json(&hist_path)?;
            for (name, h) in [("volume", &hist.volume), ("impact", &hist.impact), ("price", &hist.price)] {
                let rows = (0..h.counts.len())
                    .map(|i| {
                        let (a, b) = (h.log10_edges[i], h.log10_edges[i + 1]);
                        vec![
                            10f64.powf(a).to_string(),
                            10f64.powf(b).to_string(),
                            h.counts[i].to_string(),
                            h.masses[i].to_string(),
                        ]
                    })
                    .collect();
                emit(
                    format!("hist_{}_{}_{name}.csv", period.name, unit.unit_id),
                    &["bin_lo", "bin_hi", "count", "mass"],
                    rows,
                )?;
            }
        }
        for col in period.collapses.iter().filter(|c| c.error.is_none()) {
            let path = require(run_dir, col.curves_file.as_ref(), &format!("collapse {}/{}", period.name, col.direction.as_str()))?;
            let rows: Vec<CollapseCsvRow> = read_rows(&path)?;
            let mut out = Vec::new();
            for (kind, pick) in [("unscaled", false), ("rescaled", true)] {
                for r in &rows {
                    let (x, y) = if pick { (r.x, r.y) } else { (r.omega_star, r.delta_p_star) };
                    out.push(vec![r.group_id.clone(), r.c.to_string(), kind.to_string(), x.to_string(), y.to_string()]);
                }
            }
            emit(
                format!("collapse_{}_{}.csv", period.name, col.direction.as_str()),
                &["group_id", "c", "kind", "x", "y"],
                out,
            )?;
        }
    }
    files.sort();
    let manifest = PlotManifest { files };
    write_json(&out_dir.join("index.json"), &manifest)?;
    Ok(manifest)
}

/// Reads `report.json` from a run directory.
pub fn load_report(run_dir: &Path) -> Result<RunReport> {
    let path = run_dir.join(REPORT_FILE);
    if !path.is_file() {
        return Err(Error::MissingDependency(format!("run report ({})", path.display())));
    }
    read_json(&path)
}
