//! `pricelaw` command line.
//!
//! Results go to stdout as JSON (or to files under `--out`). On failure the
//! process exits with status 1 and prints `{"error": kind, "message": ...}`
//! on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use pricelaw::classify::{ClassifiedTrade, Direction};
use pricelaw::collapse::{fit_collapse, LiquidityProxy};
use pricelaw::config::RunConfig;
use pricelaw::impact::{bin_curve, compute_impacts, normalize_volumes, BinnedCurve};
use pricelaw::ingest::{parse_quotes, parse_trades, AggregatedTrade, QuoteEvent};
use pricelaw::output::{write_atomic, write_json};
use pricelaw::pipeline::{
    classify_and_measure, clean_events, emit_plot_data, load_report, read_rows, run_pipeline, write_rows, ClassifiedRow,
};
use pricelaw::powerlaw::{fit_powerlaw, fit_tail_impacts};
use pricelaw::synth::{gen_collapse_family, gen_market, write_market, MarketScenario};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pricelaw", version, about = "Price-impact curves, power-law fits and master-curve collapse from tick data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML). Only the sections a command needs are used.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> anyhow::Result<RunConfig> {
        Ok(match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and aggregate one stock's trade and quote files.
    Ingest {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        trades: PathBuf,
        #[arg(long)]
        quotes: PathBuf,
        /// Directory for trades.csv, quotes.csv and ingest_report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sign cleaned trades with the Lee-Ready rule.
    Classify {
        #[command(flatten)]
        config: ConfigArg,
        /// Cleaned trades written by `ingest`.
        #[arg(long)]
        trades: PathBuf,
        /// Cleaned quotes written by `ingest`.
        #[arg(long)]
        quotes: PathBuf,
        /// Quote lag in microseconds; overrides the configuration.
        #[arg(long)]
        lag_us: Option<i64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure impacts of classified trades and bin them into curves.
    Impact {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        classified: PathBuf,
        #[arg(long)]
        quotes: PathBuf,
        #[arg(long, default_value = "stock")]
        stock_id: String,
        /// Directory for impacts.csv, curve_buyer.csv and curve_seller.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a power law to a sample file (one value per line) or to the tail
    /// of a curve file.
    FitPowerlaw {
        #[arg(long)]
        input: PathBuf,
        /// Treat the input as a curve CSV with this direction (buyer|seller).
        #[arg(long)]
        curve: Option<String>,
        /// Curve points with omega_star above this are fitted.
        #[arg(long, default_value_t = 10f64.powf(-0.9))]
        threshold: f64,
        #[arg(long, default_value_t = 2500)]
        n_boot: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the collapse exponents of several curves.
    Collapse {
        #[command(flatten)]
        config: ConfigArg,
        /// `GROUP=PATH:C`, one per curve.
        #[arg(long = "curve", required = true)]
        curves: Vec<String>,
        #[arg(long, default_value = "buyer")]
        direction: String,
        /// Curve points with omega_star above this take part; 0 keeps all.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        n_bins: Option<usize>,
        /// Directory for collapse.json and collapse.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic market (tapes, labels and a run configuration).
    Synth {
        /// Scenario (TOML); the built-in scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the collapse family curves.
        #[arg(long)]
        family: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        n_boot: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write plot-ready files from a finished run.
    EmitPlots {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_direction(s: &str) -> anyhow::Result<Direction> {
    match Direction::parse(s) {
        Some(d @ (Direction::BuyerInitiated | Direction::SellerInitiated)) => Ok(d),
        _ => Err(pricelaw::Error::InvalidArgument(format!("direction must be `buyer` or `seller`, got `{s}`")).into()),
    }
}

fn print_json(value: &serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("json values serialise");
    // A closed stdout (e.g. piped into `head`) is not an error of the command.
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn ingest(cfg: &RunConfig, trades: &Path, quotes: &Path, out: &Path) -> anyhow::Result<serde_json::Value> {
    cfg.format.validate()?;
    cfg.session.validate()?;
    let (raw_trades, trades_parse) = parse_trades(trades, &cfg.format)?;
    let (raw_quotes, quotes_parse) = parse_quotes(quotes, &cfg.format)?;
    let (agg, deduped, trade_filter, quote_filter) = clean_events(&raw_trades, &raw_quotes, &cfg.session);
    write_atomic(&out.join("trades.csv"), |w| write_rows(w, &agg))?;
    write_atomic(&out.join("quotes.csv"), |w| write_rows(w, &deduped))?;
    let report = json!({
        "trades_parse": trades_parse,
        "quotes_parse": quotes_parse,
        "trade_filter": trade_filter,
        "quote_filter": quote_filter,
        "aggregated_trades": agg.len(),
        "deduped_quotes": deduped.len(),
    });
    write_json(&out.join("ingest_report.json"), &report)?;
    Ok(report)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest {
            config,
            trades,
            quotes,
            out,
        } => print_json(&ingest(&config.load()?, &trades, &quotes, &out)?),
        Command::Classify {
            config,
            trades,
            quotes,
            lag_us,
            out,
        } => {
            let mut cfg = config.load()?.classify;
            if let Some(l) = lag_us {
                cfg.lag_us = l;
            }
            let trades: Vec<AggregatedTrade> = read_rows(&trades)?;
            let quotes: Vec<QuoteEvent> = read_rows(&quotes)?;
            let (classified, _, report, _) = classify_and_measure("stock", &trades, &quotes, &cfg);
            let rows: Vec<ClassifiedRow> = classified.iter().map(ClassifiedRow::from).collect();
            write_atomic(&out, |w| write_rows(w, &rows))?;
            print_json(&json!({ "classify": report, "output": out }));
        }
        Command::Impact {
            config,
            classified,
            quotes,
            stock_id,
            out,
        } => {
            let cfg = config.load()?;
            let edges = cfg.binning.edges()?;
            let rows: Vec<ClassifiedRow> = read_rows(&classified)?;
            let trades: Vec<ClassifiedTrade> = rows.into_iter().map(ClassifiedTrade::from).collect();
            let quotes: Vec<QuoteEvent> = read_rows(&quotes)?;
            let (raw, report) = compute_impacts(&stock_id, &trades, &quotes);
            let volumes = [(stock_id.clone(), trades.iter().map(|t| t.trade.total_volume).collect())].into();
            let obs = if raw.is_empty() { raw } else { normalize_volumes(&raw, &volumes)? };
            write_atomic(&out.join("impacts.csv"), |w| write_rows(w, &obs))?;
            let mut curves = Vec::new();
            for dir in [Direction::BuyerInitiated, Direction::SellerInitiated] {
                let curve = bin_curve(&obs, &edges, dir, &stock_id);
                let path = out.join(format!("curve_{}.csv", dir.as_str()));
                write_atomic(&path, |w| curve.write_csv(w))?;
                curves.push(json!({"direction": dir, "file": path, "points": curve.points.len(), "out_of_range": curve.out_of_range}));
            }
            print_json(&json!({ "impact": report, "curves": curves }));
        }
        Command::FitPowerlaw {
            input,
            curve,
            threshold,
            n_boot,
            seed,
            out,
        } => {
            let opts = Default::default();
            let fit = match curve {
                Some(d) => {
                    let dir = parse_direction(&d)?;
                    let file = fs::File::open(&input).map_err(|e| pricelaw::Error::io(&input, e))?;
                    let c = BinnedCurve::read_csv(file, "curve", dir)?;
                    fit_tail_impacts(&c, threshold, &opts, n_boot, seed)?
                }
                None => {
                    let text = fs::read_to_string(&input).map_err(|e| pricelaw::Error::io(&input, e))?;
                    let sample = text
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty() && !l.starts_with('#'))
                        .map(|l| l.parse::<f64>().map_err(|_| pricelaw::Error::Parse(format!("not a number: `{l}`"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    fit_powerlaw(&sample, &opts, n_boot, seed)?
                }
            };
            if let Some(out) = out {
                write_json(&out, &fit)?;
            }
            print_json(&serde_json::to_value(&fit)?);
        }
        Command::Collapse {
            config,
            curves,
            direction,
            threshold,
            n_bins,
            out,
        } => {
            let cfg = config.load()?;
            let dir = parse_direction(&direction)?;
            let threshold = threshold.unwrap_or(cfg.binning.tail_threshold);
            let mut settings = cfg.collapse;
            if let Some(n) = n_bins {
                settings.n_bins = n;
            }
            let mut cs = Vec::new();
            let mut ps = Vec::new();
            for arg in &curves {
                let (group, rest) = arg.split_once('=').ok_or_else(|| anyhow!("curve `{arg}` is not GROUP=PATH:C"))?;
                let (path, c) = rest.rsplit_once(':').ok_or_else(|| anyhow!("curve `{arg}` is not GROUP=PATH:C"))?;
                let c: f64 = c.parse().with_context(|| format!("liquidity proxy in `{arg}`"))?;
                let file = fs::File::open(path).map_err(|e| pricelaw::Error::io(path, e))?;
                cs.push(BinnedCurve::read_csv(file, group, dir)?.above(threshold));
                ps.push(LiquidityProxy {
                    group_id: group.to_string(),
                    c,
                });
            }
            let result = fit_collapse(&cs, &ps, &settings)?;
            if let Some(out) = out {
                write_json(&out.join("collapse.json"), &result)?;
                write_atomic(&out.join("collapse.csv"), |w| result.write_curves_csv(w))?;
            }
            print_json(&json!({
                "gamma": result.gamma,
                "delta": result.delta,
                "epsilon": result.epsilon,
                "n_bins": result.n_bins,
                "skipped_bins": result.skipped_bins,
                "gamma_identifiable": result.gamma_identifiable,
                "delta_identifiable": result.delta_identifiable,
                "settings": result.settings,
            }));
        }
        Command::Synth {
            scenario,
            config,
            seed,
            family,
            out,
        } => {
            let mut sc = match scenario {
                Some(p) => MarketScenario::from_file(&p)?,
                None => MarketScenario::default(),
            };
            if let Some(s) = seed {
                sc.seed = s;
            }
            let base = RunConfig {
                output_dir: PathBuf::from("run"),
                session: sc.session.clone(),
                ..config.load()?
            };
            let tapes = gen_market(&sc)?;
            let (run_cfg, files) = write_market(&out, &tapes, &base)?;
            let scenario_text = sc.to_toml()?;
            write_atomic(&out.join("scenario.toml"), |w| {
                w.write_all(scenario_text.as_bytes()).map_err(|e| pricelaw::Error::io("scenario.toml", e))
            })?;
            let run_text = run_cfg.to_toml()?;
            write_atomic(&out.join("run.toml"), |w| {
                w.write_all(run_text.as_bytes()).map_err(|e| pricelaw::Error::io("run.toml", e))
            })?;
            let mut family_files = Vec::new();
            if family {
                for (curve, proxy) in gen_collapse_family(&sc)? {
                    let path = out.join("family").join(format!("{}.csv", curve.group_id));
                    write_atomic(&path, |w| curve.write_csv(w))?;
                    family_files.push(json!({"group_id": curve.group_id, "file": path, "c": proxy.c}));
                }
            }
            let n_trades: usize = tapes.iter().flat_map(|g| &g.stocks).map(|s| s.tape.trades.len()).sum();
            print_json(&json!({
                "seed": sc.seed,
                "stocks": files,
                "trades": n_trades,
                "run_config": out.join("run.toml"),
                "family": family_files,
            }));
        }
        Command::Run {
            config,
            output_dir,
            n_boot,
            seed,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            } else if cfg.output_dir.is_relative() {
                if let Some(base) = config.parent() {
                    cfg.output_dir = base.join(&cfg.output_dir);
                }
            }
            if let Some(n) = n_boot {
                cfg.powerlaw.n_boot = n;
            }
            if let Some(s) = seed {
                cfg.powerlaw.seed = s;
            }
            let report = run_pipeline(&cfg)?;
            let failed: Vec<_> = report.failed_units().into_iter().map(|(p, u)| format!("{p}/{u}")).collect();
            print_json(&json!({
                "output_dir": cfg.output_dir,
                "files": report.files.len(),
                "failed_units": failed,
                "collapses": report.periods.iter().flat_map(|p| p.collapses.iter().map(move |c| json!({
                    "period": p.name, "direction": c.direction, "gamma": c.gamma, "delta": c.delta, "epsilon": c.epsilon, "error": c.error,
                }))).collect::<Vec<_>>(),
            }));
        }
        Command::EmitPlots { run, out } => {
            let report = load_report(&run)?;
            let manifest = emit_plot_data(&report, &run, &out)?;
            print_json(&serde_json::to_value(&manifest)?);
        }
    }
    Ok(())
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<pricelaw::Error>())
        .map(|e| e.kind())
        .unwrap_or("error");
    let mut v = json!({ "error": kind, "message": format!("{err:#}") });
    if let Some(pricelaw::Error::Config { field, .. }) = err.downcast_ref::<pricelaw::Error>() {
        v["field"] = json!(field);
    }
    v
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
