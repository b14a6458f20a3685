//! Trade signing with the Lee-Ready rule: the quote test against the
//! prevailing midquote, falling back to the tick test for trades at the mid.

use serde::{Deserialize, Serialize};

use crate::ingest::{AggregatedTrade, QuoteEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[serde(rename = "buyer")]
    BuyerInitiated,
    #[serde(rename = "seller")]
    SellerInitiated,
    Indeterminate,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::BuyerInitiated => "buyer",
            Direction::SellerInitiated => "seller",
            Direction::Indeterminate => "indeterminate",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s.trim() {
            "buyer" => Some(Direction::BuyerInitiated),
            "seller" => Some(Direction::SellerInitiated),
            "indeterminate" => Some(Direction::Indeterminate),
            _ => None,
        }
    }

    /// +1 for buys, -1 for sells, 0 otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Direction::BuyerInitiated => 1.0,
            Direction::SellerInitiated => -1.0,
            Direction::Indeterminate => 0.0,
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::BuyerInitiated => Direction::SellerInitiated,
            Direction::SellerInitiated => Direction::BuyerInitiated,
            Direction::Indeterminate => Direction::Indeterminate,
        }
    }
}

/// Which test decided a trade's direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Quote,
    Tick,
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedTrade {
    pub trade: AggregatedTrade,
    pub direction: Direction,
    pub rule: Rule,
    pub prevailing_mid: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// A quote prevails for a trade at `t` when its timestamp is strictly
    /// below `t - lag_us`. Zero gives "strictly before"; `-1` admits quotes
    /// stamped at the trade time itself.
    pub lag_us: i64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub input: usize,
    pub classified: usize,
    pub dropped_no_quote: usize,
    pub buyer: usize,
    pub seller: usize,
    pub indeterminate: usize,
}

/// Latest quote stamped strictly before `t`. Quotes must be strictly
/// timestamp-ordered.
pub fn prevailing_quote(quotes: &[QuoteEvent], t: i64) -> Option<&QuoteEvent> {
    prevailing_quote_with_lag(quotes, t, 0)
}

pub fn prevailing_quote_with_lag(quotes: &[QuoteEvent], t: i64, lag_us: i64) -> Option<&QuoteEvent> {
    let cutoff = t.saturating_sub(lag_us);
    let idx = quotes.partition_point(|q| q.timestamp < cutoff);
    idx.checked_sub(1).map(|i| &quotes[i])
}

/// Lee-Ready direction of one trade given its prevailing quote and the most
/// recent earlier trade price that differs from this trade's price.
pub fn lee_ready(trade: &AggregatedTrade, quote: &QuoteEvent, prev_distinct_price: Option<f64>) -> Direction {
    lee_ready_with_rule(trade, quote, prev_distinct_price).0
}

pub fn lee_ready_with_rule(
    trade: &AggregatedTrade,
    quote: &QuoteEvent,
    prev_distinct_price: Option<f64>,
) -> (Direction, Rule) {
    let mid = quote.mid();
    let price = trade.vwap;
    if price > mid {
        return (Direction::BuyerInitiated, Rule::Quote);
    }
    if price < mid {
        return (Direction::SellerInitiated, Rule::Quote);
    }
    match prev_distinct_price {
        Some(prev) if price > prev => (Direction::BuyerInitiated, Rule::Tick),
        Some(prev) if price < prev => (Direction::SellerInitiated, Rule::Tick),
        _ => (Direction::Indeterminate, Rule::Unresolved),
    }
}

/// Tracks the last distinct trade price for the zero-tick extension.
#[derive(Debug, Default, Clone, Copy)]
struct TickHistory {
    last: Option<f64>,
    before_last: Option<f64>,
}

impl TickHistory {
    /// Most recent earlier price different from `price`.
    fn reference(&self, price: f64) -> Option<f64> {
        match self.last {
            Some(p) if p != price => Some(p),
            Some(_) => self.before_last,
            None => None,
        }
    }

    fn push(&mut self, price: f64) {
        if self.last != Some(price) {
            self.before_last = self.last;
            self.last = Some(price);
        }
    }
}

/// Classifies a single stock's trades in one merge pass over trades and
/// quotes. Trades without a prevailing quote are dropped and counted; they
/// still feed the tick history.
pub fn classify_stream(
    trades: &[AggregatedTrade],
    quotes: &[QuoteEvent],
    config: &ClassifyConfig,
) -> (Vec<ClassifiedTrade>, ClassifyReport) {
    let mut report = ClassifyReport {
        input: trades.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(trades.len());
    let mut history = TickHistory::default();
    let mut next_quote = 0;
    for trade in trades {
        let cutoff = trade.timestamp.saturating_sub(config.lag_us);
        while next_quote < quotes.len() && quotes[next_quote].timestamp < cutoff {
            next_quote += 1;
        }
        let reference = history.reference(trade.vwap);
        history.push(trade.vwap);
        let Some(quote) = next_quote.checked_sub(1).map(|i| &quotes[i]) else {
            report.dropped_no_quote += 1;
            continue;
        };
        let (direction, rule) = lee_ready_with_rule(trade, quote, reference);
        match direction {
            Direction::BuyerInitiated => report.buyer += 1,
            Direction::SellerInitiated => report.seller += 1,
            Direction::Indeterminate => report.indeterminate += 1,
        }
        out.push(ClassifiedTrade {
            trade: *trade,
            direction,
            rule,
            prevailing_mid: quote.mid(),
        });
    }
    report.classified = out.len();
    (out, report)
}
