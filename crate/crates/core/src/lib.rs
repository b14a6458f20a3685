//! Price-impact measurement pipeline.
//!
//! Raw trade and quote ticks are cleaned and aggregated ([`ingest`]), signed with
//! the Lee-Ready rule ([`classify`]), turned into per-trade log-midquote impacts
//! and binned into average impact curves ([`impact`]). Tails of the curves are
//! tested for power-law size distributions ([`powerlaw`]) and groups of curves
//! are collapsed onto a master curve by rescaling with a liquidity proxy
//! ([`collapse`]). [`synth`] produces labelled synthetic markets used as ground
//! truth, and [`pipeline`] wires everything together for the command line.

pub mod classify;
pub mod collapse;
pub mod config;
pub mod error;
pub mod impact;
pub mod ingest;
pub mod optim;
pub mod output;
pub mod pipeline;
pub mod powerlaw;
pub mod synth;
pub mod time;

pub use error::{Error, Result};
