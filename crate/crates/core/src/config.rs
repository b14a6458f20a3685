//! Run configuration, read from TOML.
//!
//! Every numeric constant of the method (bin edges, tail threshold, session
//! windows, volume cap, bootstrap size) is a field with a default here.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::classify::ClassifyConfig;
use crate::collapse::CollapseConfig;
use crate::error::{Error, Result};
use crate::impact::BinEdges;
use crate::ingest::{SessionFilter, TickFormat};
use crate::powerlaw::FitOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StockInput {
    pub id: String,
    pub group: String,
    pub trades: PathBuf,
    pub quotes: PathBuf,
}

/// An analysis period; both ends inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Period {
    pub name: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One curve per group from the pooled observations of its stocks.
    #[default]
    Group,
    /// One curve per stock.
    Stock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationWindow {
    /// Mean volume computed separately within each period.
    #[default]
    Period,
    /// Mean volume over all periods together.
    Whole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningConfig {
    pub lo_exp: f64,
    pub hi_exp: f64,
    pub n_bins: usize,
    pub pooling: Pooling,
    pub normalization: NormalizationWindow,
    /// Curve points with `omega_star` above this feed the tail fits and the
    /// collapse.
    pub tail_threshold: f64,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            lo_exp: -3.2,
            hi_exp: 1.0,
            n_bins: 20,
            pooling: Pooling::Group,
            normalization: NormalizationWindow::Period,
            tail_threshold: 10f64.powf(-0.9),
        }
    }
}

impl BinningConfig {
    pub fn edges(&self) -> Result<BinEdges> {
        BinEdges::log_spaced(self.lo_exp, self.hi_exp, self.n_bins).map_err(|e| Error::config("binning", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerLawConfig {
    /// Zero skips the bootstrap; otherwise at least 100.
    pub n_boot: usize,
    pub seed: u64,
    /// p-values above this do not reject the power law.
    pub significance: f64,
    pub min_tail: usize,
    pub max_candidates: usize,
    pub low_power_tail: usize,
}

impl Default for PowerLawConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        PowerLawConfig {
            n_boot: 2500,
            seed: 42,
            significance: 0.1,
            min_tail: o.min_tail,
            max_candidates: o.max_candidates,
            low_power_tail: o.low_power_tail,
        }
    }
}

impl PowerLawConfig {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            min_tail: self.min_tail,
            max_candidates: self.max_candidates,
            low_power_tail: self.low_power_tail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DailyConfig {
    /// Histogram bins; unset means one per trading day in the period.
    pub n_bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub format: TickFormat,
    pub session: SessionFilter,
    pub classify: ClassifyConfig,
    pub binning: BinningConfig,
    pub powerlaw: PowerLawConfig,
    pub collapse: CollapseConfig,
    pub daily: DailyConfig,
    pub periods: Vec<Period>,
    pub stocks: Vec<StockInput>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let date = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).unwrap();
        RunConfig {
            output_dir: PathBuf::from("out"),
            format: TickFormat::default(),
            session: SessionFilter::default(),
            classify: ClassifyConfig::default(),
            binning: BinningConfig::default(),
            powerlaw: PowerLawConfig::default(),
            collapse: CollapseConfig::default(),
            daily: DailyConfig::default(),
            periods: vec![
                Period {
                    name: "before".into(),
                    start: date(2013, 1, 1),
                    end: date(2013, 9, 27),
                },
                Period {
                    name: "after".into(),
                    start: date(2013, 9, 30),
                    end: date(2013, 12, 31),
                },
            ],
            stocks: Vec::new(),
        }
    }
}

fn check_name(field: &str, name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, format!("`{name}` must be non-empty and use only letters, digits, `-`, `_` or `.`")))
    }
}

impl RunConfig {
    /// Reads a TOML file. Relative stock paths are resolved against the
    /// file's directory; the output directory is left as written.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        if let Some(base) = path.parent() {
            for s in &mut cfg.stocks {
                if s.trades.is_relative() {
                    s.trades = base.join(&s.trades);
                }
                if s.quotes.is_relative() {
                    s.quotes = base.join(&s.quotes);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::config("<toml>", e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<toml>", e.to_string()))
    }

    /// Full validation, including that every input file exists.
    pub fn validate(&self) -> Result<()> {
        self.validate_settings()?;
        validate_stock_ids(self.stocks.iter().map(|s| (s.id.as_str(), s.group.as_str())))?;
        for (i, s) in self.stocks.iter().enumerate() {
            for (field, path) in [("trades", &s.trades), ("quotes", &s.quotes)] {
                if !path.is_file() {
                    return Err(Error::config(format!("stocks[{i}].{field}"), format!("input file {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    /// Validation of everything except the stock list.
    pub fn validate_settings(&self) -> Result<()> {
        self.format.validate()?;
        self.session.validate()?;
        self.collapse.validate()?;
        self.binning.edges()?;
        if !(self.binning.tail_threshold > 0.0) {
            return Err(Error::config("binning.tail_threshold", "must be positive"));
        }
        if (1..100).contains(&self.powerlaw.n_boot) {
            return Err(Error::config("powerlaw.n_boot", "must be 0 (skip) or at least 100"));
        }
        if !(0.0..=1.0).contains(&self.powerlaw.significance) {
            return Err(Error::config("powerlaw.significance", "must lie in [0, 1]"));
        }
        if self.powerlaw.min_tail < 2 {
            return Err(Error::config("powerlaw.min_tail", "must be at least 2"));
        }
        if self.powerlaw.max_candidates < 2 {
            return Err(Error::config("powerlaw.max_candidates", "must be at least 2"));
        }
        if self.daily.n_bins == Some(0) {
            return Err(Error::config("daily.n_bins", "must be positive"));
        }
        if self.periods.is_empty() {
            return Err(Error::config("periods", "at least one period is required"));
        }
        let mut names = BTreeSet::new();
        for (i, p) in self.periods.iter().enumerate() {
            check_name(&format!("periods[{i}].name"), &p.name)?;
            if !names.insert(p.name.as_str()) {
                return Err(Error::config(format!("periods[{i}].name"), format!("duplicate period `{}`", p.name)));
            }
            if p.start > p.end {
                return Err(Error::config(format!("periods[{i}]"), "start is after end"));
            }
            for (j, q) in self.periods.iter().enumerate().take(i) {
                if p.start <= q.end && q.start <= p.end {
                    return Err(Error::config(
                        format!("periods[{i}]"),
                        format!("`{}` ({}..{}) overlaps `{}` ({}..{}) declared at periods[{j}]", p.name, p.start, p.end, q.name, q.start, q.end),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Group ids in sorted order.
    pub fn groups(&self) -> Vec<String> {
        self.stocks.iter().map(|s| s.group.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }
}

/// Stock and group names must be valid and stock ids unique; field paths
/// index the `(id, group)` sequence.
pub fn validate_stock_ids<'a>(stocks: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
    let mut ids = BTreeSet::new();
    for (i, (id, group)) in stocks.into_iter().enumerate() {
        check_name(&format!("stocks[{i}].id"), id)?;
        check_name(&format!("stocks[{i}].group"), group)?;
        if !ids.insert(id) {
            return Err(Error::config(format!("stocks[{i}].id"), format!("duplicate stock `{id}`")));
        }
    }
    if ids.is_empty() {
        return Err(Error::config("stocks", "at least one stock is required"));
    }
    Ok(())
}
