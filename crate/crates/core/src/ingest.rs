//! Tick file ingestion: parsing, validation, session filtering and
//! same-timestamp aggregation.
//!
//! Input files are plain delimited text. A [`TickFormat`] maps columns to
//! fields so the same code reads any vendor layout. Rows that cannot be parsed
//! are counted in a [`ParseReport`] rather than silently skipped, and a file
//! whose malformed-row rate exceeds [`TickFormat::max_error_rate`] is refused.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{format_iso8601, micros_of_day, parse_iso8601, TimeOfDay, TimeWindow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeEvent {
    pub timestamp: i64,
    pub price: f64,
    pub volume: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuoteEvent {
    pub timestamp: i64,
    pub bid: f64,
    pub ask: f64,
}

impl QuoteEvent {
    pub fn mid(&self) -> f64 {
        (self.bid + self.ask) / 2.0
    }
}

/// All trades sharing one timestamp, merged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatedTrade {
    pub timestamp: i64,
    pub vwap: f64,
    pub total_volume: u64,
    pub n_trades: usize,
}

impl AggregatedTrade {
    pub fn value(&self) -> f64 {
        self.vwap * self.total_volume as f64
    }
}

/// Anything with a timestamp that the session filter can act on.
pub trait TickEvent {
    fn timestamp(&self) -> i64;

    /// Traded volume, if the event is a trade.
    fn volume(&self) -> Option<u64> {
        None
    }
}

impl TickEvent for TradeEvent {
    fn timestamp(&self) -> i64 {
        self.timestamp
    }
    fn volume(&self) -> Option<u64> {
        Some(self.volume)
    }
}

impl TickEvent for QuoteEvent {
    fn timestamp(&self) -> i64 {
        self.timestamp
    }
}

impl TickEvent for AggregatedTrade {
    fn timestamp(&self) -> i64 {
        self.timestamp
    }
    fn volume(&self) -> Option<u64> {
        Some(self.total_volume)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    #[default]
    Iso8601,
    EpochMicros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeColumns {
    pub timestamp: usize,
    pub price: usize,
    pub volume: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteColumns {
    pub timestamp: usize,
    pub bid: usize,
    pub ask: usize,
}

/// Column layout of trade and quote files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TickFormat {
    pub delimiter: char,
    pub has_header: bool,
    pub timestamp_format: TimestampFormat,
    pub trade_columns: TradeColumns,
    pub quote_columns: QuoteColumns,
    /// Largest tolerated fraction of malformed rows before the file is refused.
    pub max_error_rate: f64,
}

impl Default for TickFormat {
    fn default() -> Self {
        TickFormat {
            delimiter: ',',
            has_header: true,
            timestamp_format: TimestampFormat::Iso8601,
            trade_columns: TradeColumns {
                timestamp: 0,
                price: 1,
                volume: 2,
            },
            quote_columns: QuoteColumns {
                timestamp: 0,
                bid: 1,
                ask: 2,
            },
            max_error_rate: 0.01,
        }
    }
}

impl TickFormat {
    pub fn validate(&self) -> Result<()> {
        if !self.delimiter.is_ascii() {
            return Err(Error::config("format.delimiter", "delimiter must be a single ASCII character"));
        }
        if !(0.0..=1.0).contains(&self.max_error_rate) {
            return Err(Error::config("format.max_error_rate", "must lie in [0, 1]"));
        }
        let t = self.trade_columns;
        if t.timestamp == t.price || t.timestamp == t.volume || t.price == t.volume {
            return Err(Error::config("format.trade_columns", "columns must be distinct"));
        }
        let q = self.quote_columns;
        if q.timestamp == q.bid || q.timestamp == q.ask || q.bid == q.ask {
            return Err(Error::config("format.quote_columns", "columns must be distinct"));
        }
        Ok(())
    }

    fn parse_timestamp(&self, s: &str) -> std::result::Result<i64, String> {
        match self.timestamp_format {
            TimestampFormat::Iso8601 => parse_iso8601(s).map_err(|e| e.to_string()),
            TimestampFormat::EpochMicros => s
                .trim()
                .parse::<i64>()
                .map_err(|_| format!("bad epoch-microsecond timestamp `{s}`")),
        }
    }

    fn format_timestamp(&self, ts: i64) -> String {
        match self.timestamp_format {
            TimestampFormat::Iso8601 => format_iso8601(ts),
            TimestampFormat::EpochMicros => ts.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Malformed,
    NonPositivePrice,
    NonPositiveVolume,
    Crossed,
}

/// Row accounting for one parsed file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub source: String,
    pub total_rows: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
    /// First few malformed rows, `line N: reason`.
    pub malformed_examples: Vec<String>,
}

const MAX_EXAMPLES: usize = 10;

impl ParseReport {
    fn new(source: &str) -> Self {
        ParseReport {
            source: source.to_string(),
            ..Default::default()
        }
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn count(&self, reason: RejectReason) -> usize {
        self.rejected.get(&reason).copied().unwrap_or(0)
    }

    fn reject(&mut self, reason: RejectReason) {
        *self.rejected.entry(reason).or_default() += 1;
    }

    fn malformed(&mut self, line: u64, msg: String) {
        self.reject(RejectReason::Malformed);
        if self.malformed_examples.len() < MAX_EXAMPLES {
            self.malformed_examples.push(format!("line {line}: {msg}"));
        }
    }

    fn check_rate(&self, max_rate: f64) -> Result<()> {
        let malformed = self.count(RejectReason::Malformed);
        if self.total_rows > 0 && malformed as f64 > max_rate * self.total_rows as f64 {
            return Err(Error::ErrorRateExceeded {
                path: self.source.clone().into(),
                malformed,
                total: self.total_rows,
                max_rate,
            });
        }
        Ok(())
    }
}

enum Row<T> {
    Ok(T),
    Rejected(RejectReason),
    Malformed(String),
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str) -> std::result::Result<&'a str, String> {
    rec.get(idx)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| format!("missing {name} column {idx}"))
}

fn parse_price(s: &str, name: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad {name} `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {name} `{s}`"))
    }
}

/// Accepts integers and integral decimals such as `400.0`. Negative values are
/// returned as 0 so they fall under the non-positive rule.
fn parse_volume(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v.max(0) as u64);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v.max(0.0) as u64),
        _ => Err(format!("bad volume `{s}`")),
    }
}

fn read_rows<R: Read, T>(
    reader: R,
    format: &TickFormat,
    source: &str,
    mut parse: impl FnMut(&csv::StringRecord) -> Row<T>,
) -> Result<(Vec<T>, ParseReport)>
where
    T: TickEvent,
{
    format.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter as u8)
        .has_headers(format.has_header)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut report = ParseReport::new(source);
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                if rec.iter().all(|f| f.trim().is_empty()) {
                    continue;
                }
                report.total_rows += 1;
                match parse(&rec) {
                    Row::Ok(ev) => {
                        report.accepted += 1;
                        out.push(ev);
                    }
                    Row::Rejected(reason) => report.reject(reason),
                    Row::Malformed(msg) => report.malformed(line, msg),
                }
            }
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(e.into());
                }
                report.total_rows += 1;
                report.malformed(line, e.to_string());
            }
        }
    }
    report.check_rate(format.max_error_rate)?;
    out.sort_by_key(|e| e.timestamp());
    Ok((out, report))
}

pub fn read_trades<R: Read>(reader: R, format: &TickFormat, source: &str) -> Result<(Vec<TradeEvent>, ParseReport)> {
    let cols = format.trade_columns;
    read_rows(reader, format, source, |rec| {
        let parsed = (|| {
            let ts = format.parse_timestamp(field(rec, cols.timestamp, "timestamp")?)?;
            let price = parse_price(field(rec, cols.price, "price")?, "price")?;
            let volume = parse_volume(field(rec, cols.volume, "volume")?)?;
            Ok::<_, String>((ts, price, volume))
        })();
        match parsed {
            Err(msg) => Row::Malformed(msg),
            Ok((_, price, _)) if price <= 0.0 => Row::Rejected(RejectReason::NonPositivePrice),
            Ok((_, _, 0)) => Row::Rejected(RejectReason::NonPositiveVolume),
            Ok((timestamp, price, volume)) => Row::Ok(TradeEvent {
                timestamp,
                price,
                volume,
            }),
        }
    })
}

pub fn read_quotes<R: Read>(reader: R, format: &TickFormat, source: &str) -> Result<(Vec<QuoteEvent>, ParseReport)> {
    let cols = format.quote_columns;
    read_rows(reader, format, source, |rec| {
        let parsed = (|| {
            let ts = format.parse_timestamp(field(rec, cols.timestamp, "timestamp")?)?;
            let bid = parse_price(field(rec, cols.bid, "bid")?, "bid")?;
            let ask = parse_price(field(rec, cols.ask, "ask")?, "ask")?;
            Ok::<_, String>((ts, bid, ask))
        })();
        match parsed {
            Err(msg) => Row::Malformed(msg),
            Ok((_, bid, ask)) if bid <= 0.0 || ask <= 0.0 => Row::Rejected(RejectReason::NonPositivePrice),
            Ok((_, bid, ask)) if bid > ask => Row::Rejected(RejectReason::Crossed),
            Ok((timestamp, bid, ask)) => Row::Ok(QuoteEvent { timestamp, bid, ask }),
        }
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Reads a trade file. Events come back sorted by timestamp; rows sharing a
/// timestamp keep their file order.
pub fn parse_trades(path: &Path, format: &TickFormat) -> Result<(Vec<TradeEvent>, ParseReport)> {
    read_trades(open(path)?, format, &path.display().to_string())
}

/// Reads a quote file. Crossed quotes (bid above ask) are rejected.
pub fn parse_quotes(path: &Path, format: &TickFormat) -> Result<(Vec<QuoteEvent>, ParseReport)> {
    read_quotes(open(path)?, format, &path.display().to_string())
}

fn layout_width(cols: &[usize]) -> usize {
    cols.iter().copied().max().unwrap_or(0) + 1
}

fn write_rows<W: Write>(
    writer: W,
    format: &TickFormat,
    header: [(&str, usize); 3],
    rows: impl Iterator<Item = [String; 3]>,
) -> Result<()> {
    let width = layout_width(&header.map(|(_, c)| c));
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(format.delimiter as u8)
        .from_writer(writer);
    let mut line = vec![String::new(); width];
    if format.has_header {
        for (i, slot) in line.iter_mut().enumerate() {
            *slot = format!("col{i}");
        }
        for (name, col) in header {
            line[col] = name.to_string();
        }
        wtr.write_record(&line)?;
    }
    for values in rows {
        line.iter_mut().for_each(String::clear);
        for ((_, col), v) in header.iter().zip(values) {
            line[*col] = v;
        }
        wtr.write_record(&line)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Writes trades in the layout `format` describes, so [`read_trades`] reads
/// them back exactly.
pub fn write_trades<W: Write>(writer: W, trades: &[TradeEvent], format: &TickFormat) -> Result<()> {
    let c = format.trade_columns;
    write_rows(
        writer,
        format,
        [("timestamp", c.timestamp), ("price", c.price), ("volume", c.volume)],
        trades
            .iter()
            .map(|t| [format.format_timestamp(t.timestamp), t.price.to_string(), t.volume.to_string()]),
    )
}

pub fn write_quotes<W: Write>(writer: W, quotes: &[QuoteEvent], format: &TickFormat) -> Result<()> {
    let c = format.quote_columns;
    write_rows(
        writer,
        format,
        [("timestamp", c.timestamp), ("bid", c.bid), ("ask", c.ask)],
        quotes
            .iter()
            .map(|q| [format.format_timestamp(q.timestamp), q.bid.to_string(), q.ask.to_string()]),
    )
}

/// Trading-session rules applied before any impact is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionFilter {
    pub trading_day_start: TimeOfDay,
    pub trading_day_end: TimeOfDay,
    /// Volatile stretches of continuous trading that are dropped.
    pub excluded_windows: Vec<TimeWindow>,
    /// Auction call periods; may lie outside the trading day.
    pub auction_windows: Vec<TimeWindow>,
    /// Trades with a larger volume are treated as off-market prints.
    pub max_volume: u64,
}

impl Default for SessionFilter {
    fn default() -> Self {
        SessionFilter {
            trading_day_start: TimeOfDay::from_hms(9, 0, 0),
            trading_day_end: TimeOfDay::from_hms(17, 0, 0),
            excluded_windows: vec![TimeWindow::hm(9, 0, 9, 10), TimeWindow::hm(16, 50, 17, 0)],
            auction_windows: vec![TimeWindow::hm(8, 30, 9, 0), TimeWindow::hm(17, 0, 17, 5)],
            max_volume: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterSummary {
    pub input: usize,
    pub kept: usize,
    pub outside_trading_day: usize,
    pub auction_window: usize,
    pub excluded_window: usize,
    pub over_volume_cap: usize,
}

impl FilterSummary {
    pub fn removed(&self) -> usize {
        self.outside_trading_day + self.auction_window + self.excluded_window + self.over_volume_cap
    }
}

impl SessionFilter {
    pub fn validate(&self) -> Result<()> {
        if self.trading_day_start >= self.trading_day_end {
            return Err(Error::config("session.trading_day_start", "must precede trading_day_end"));
        }
        for (i, w) in self.excluded_windows.iter().enumerate() {
            if w.start >= w.end || w.start < self.trading_day_start || w.end > self.trading_day_end {
                return Err(Error::config(
                    format!("session.excluded_windows[{i}]"),
                    "window must be non-empty and lie within the trading day",
                ));
            }
        }
        for (i, w) in self.auction_windows.iter().enumerate() {
            if w.start >= w.end {
                return Err(Error::config(format!("session.auction_windows[{i}]"), "window must be non-empty"));
            }
        }
        if self.max_volume == 0 {
            return Err(Error::config("session.max_volume", "must be positive"));
        }
        Ok(())
    }

    fn classify<T: TickEvent>(&self, ev: &T) -> Option<fn(&mut FilterSummary)> {
        let tod = micros_of_day(ev.timestamp());
        if self.auction_windows.iter().any(|w| w.contains(tod)) {
            return Some(|s| s.auction_window += 1);
        }
        if tod < self.trading_day_start.micros() || tod >= self.trading_day_end.micros() {
            return Some(|s| s.outside_trading_day += 1);
        }
        if self.excluded_windows.iter().any(|w| w.contains(tod)) {
            return Some(|s| s.excluded_window += 1);
        }
        if ev.volume().is_some_and(|v| v > self.max_volume) {
            return Some(|s| s.over_volume_cap += 1);
        }
        None
    }

    pub fn keeps<T: TickEvent>(&self, ev: &T) -> bool {
        self.classify(ev).is_none()
    }

    /// The trading day with excluded and auction windows cut out, as sorted
    /// disjoint windows.
    pub fn tradable_windows(&self) -> Vec<TimeWindow> {
        let mut free = vec![TimeWindow::new(self.trading_day_start, self.trading_day_end)];
        for cut in self.excluded_windows.iter().chain(&self.auction_windows) {
            free = free
                .into_iter()
                .flat_map(|w| {
                    let mut parts = Vec::with_capacity(2);
                    if cut.end <= w.start || cut.start >= w.end {
                        parts.push(w);
                    } else {
                        if cut.start > w.start {
                            parts.push(TimeWindow::new(w.start, cut.start));
                        }
                        if cut.end < w.end {
                            parts.push(TimeWindow::new(cut.end, w.end));
                        }
                    }
                    parts
                })
                .collect();
        }
        free.sort_by_key(|w| w.start);
        free
    }
}

/// Drops events in auction or excluded windows, outside the trading day, or
/// above the volume cap. Survivors keep their relative order.
pub fn filter_events<T: TickEvent + Clone>(events: &[T], filter: &SessionFilter) -> (Vec<T>, FilterSummary) {
    let mut summary = FilterSummary {
        input: events.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(events.len());
    for ev in events {
        match filter.classify(ev) {
            Some(count) => count(&mut summary),
            None => kept.push(ev.clone()),
        }
    }
    summary.kept = kept.len();
    (kept, summary)
}

/// Merges trades that share a timestamp into one event at the volume-weighted
/// average price. Input must be timestamp-ordered.
pub fn aggregate_trades(trades: &[TradeEvent]) -> Vec<AggregatedTrade> {
    trades
        .chunk_by(|a, b| a.timestamp == b.timestamp)
        .map(|group| {
            let first = group[0];
            let total_volume: u64 = group.iter().map(|t| t.volume).sum();
            let (lo, hi) = group
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t.price), hi.max(t.price)));
            // A uniform price is kept verbatim so tick comparisons stay exact.
            let vwap = if lo == hi {
                first.price
            } else {
                let value: f64 = group.iter().map(|t| t.price * t.volume as f64).sum();
                (value / total_volume as f64).clamp(lo, hi)
            };
            AggregatedTrade {
                timestamp: first.timestamp,
                vwap,
                total_volume,
                n_trades: group.len(),
            }
        })
        .collect()
}

/// Keeps the last quote (in file order) for each timestamp.
pub fn dedupe_quotes(quotes: &[QuoteEvent]) -> Vec<QuoteEvent> {
    quotes
        .chunk_by(|a, b| a.timestamp == b.timestamp)
        .map(|group| *group.last().expect("chunks are non-empty"))
        .collect()
}
