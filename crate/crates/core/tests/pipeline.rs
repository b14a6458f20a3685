use std::path::Path;

use approx::assert_abs_diff_eq;
use chrono::NaiveDate;
use pricelaw::config::{Period, RunConfig};
use pricelaw::error::Error;
use pricelaw::ingest::{QuoteEvent, TradeEvent};
use pricelaw::pipeline::{emit_plot_data, load_report, run_events, RunReport, StockEvents, DIRECTIONS, REPORT_FILE};
use pricelaw::synth::{gen_market, market_events, MarketScenario};
use pricelaw::time::midnight_micros;

fn config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.powerlaw.n_boot = 100;
    cfg
}

fn synthetic_run(dir: &Path) -> RunReport {
    let tapes = gen_market(&MarketScenario::default()).unwrap();
    run_events(&config(dir), market_events(&tapes)).unwrap()
}

/// A stock whose every event falls at 03:00, outside the trading session.
fn off_session_stock(group: &str) -> StockEvents {
    let day = NaiveDate::from_ymd_opt(2013, 9, 24).unwrap();
    let t0 = midnight_micros(day) + 3 * 3_600_000_000;
    let quotes = (0..20)
        .map(|i| QuoteEvent {
            timestamp: t0 + 10 * i,
            bid: 99.99,
            ask: 100.01,
        })
        .collect();
    let trades = (0..10)
        .map(|i| TradeEvent {
            timestamp: t0 + 20 * i + 5,
            price: 100.01,
            volume: 100,
        })
        .collect();
    StockEvents::in_memory("X-01", group, trades, quotes)
}

#[test]
fn three_group_run_reports_curves_fits_and_collapses() {
    let dir = tempfile::tempdir().unwrap();
    let report = synthetic_run(dir.path());
    assert!(report.failed_units().is_empty());
    assert_eq!(report.periods.len(), 2);
    for period in &report.periods {
        assert_eq!(period.units.len(), 3, "period {}", period.name);
        for unit in &period.units {
            assert_eq!(unit.curves.len(), 2);
            for (curve, dir_expected) in unit.curves.iter().zip(DIRECTIONS) {
                assert_eq!(curve.direction, dir_expected);
                assert!(curve.fit.is_some(), "{}/{}: {:?}", period.name, unit.unit_id, curve.fit_error);
                assert!(dir.path().join(&curve.file).is_file());
            }
            assert!(unit.liquidity_proxy.unwrap() > 0.0);
        }
        assert_eq!(period.collapses.len(), 2);
        for c in &period.collapses {
            assert!(c.error.is_none(), "{:?}", c.error);
            assert!(c.gamma.is_some() && c.delta.is_some() && c.epsilon.unwrap() >= 0.0);
        }
        assert!(dir.path().join(&period.fits_file).is_file());
    }
    assert_eq!(load_report(dir.path()).unwrap(), report);
    assert!(report.files.iter().any(|f| f == REPORT_FILE));
}

#[test]
fn parse_reports_account_for_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let report = synthetic_run(dir.path());
    assert_eq!(report.stocks.len(), 6);
    for s in &report.stocks {
        let stages = s.stages.as_ref().unwrap();
        for parse in [&stages.trades_parse, &stages.quotes_parse] {
            let rejected: usize = parse.rejected.values().sum();
            assert_eq!(parse.accepted + rejected, parse.total_rows, "{}", parse.source);
        }
        let (before, after) = stages.aggregate;
        assert!(after <= before);
    }
}

#[test]
fn overlapping_periods_are_rejected_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    let d = |m, day| NaiveDate::from_ymd_opt(2013, m, day).unwrap();
    cfg.periods = vec![
        Period {
            name: "a".into(),
            start: d(1, 1),
            end: d(9, 30),
        },
        Period {
            name: "b".into(),
            start: d(9, 30),
            end: d(12, 31),
        },
    ];
    let tapes = gen_market(&MarketScenario::default()).unwrap();
    match run_events(&cfg, market_events(&tapes)) {
        Err(Error::Config { field, message }) => {
            assert!(field.starts_with("periods["), "{field}");
            assert!(message.contains('a') && message.contains('b'), "{message}");
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn empty_group_fails_alone() {
    let dir = tempfile::tempdir().unwrap();
    let tapes = gen_market(&MarketScenario::default()).unwrap();
    let mut events = market_events(&tapes);
    events.push(off_session_stock("Empty"));
    let report = run_events(&config(dir.path()), events).unwrap();
    let failed = report.failed_units();
    assert_eq!(failed.len(), 2, "{failed:?}");
    assert!(failed.iter().all(|(_, unit)| *unit == "Empty"));
    for period in &report.periods {
        let ok = period.units.iter().filter(|u| u.error.is_none()).count();
        assert_eq!(ok, 3);
        assert!(period.collapses.iter().all(|c| c.error.is_none() && !c.units.iter().any(|u| u == "Empty")));
    }
}

#[test]
fn plot_data_covers_every_panel() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let report = synthetic_run(&run_dir);
    let plots = dir.path().join("plots");
    let manifest = emit_plot_data(&report, &run_dir, &plots).unwrap();
    let count = |prefix: &str| manifest.files.iter().filter(|f| f.starts_with(prefix)).count();
    assert_eq!(count("curves_"), 2 * 3 * 2);
    assert_eq!(count("hist_"), 2 * 3 * 3);
    assert_eq!(count("collapse_"), 2 * 2);
    assert!(plots.join("index.json").is_file());

    for f in manifest.files.iter().filter(|f| f.starts_with("hist_")) {
        let mut rdr = csv::Reader::from_path(plots.join(f)).unwrap();
        let total: f64 = rdr.records().map(|r| r.unwrap()[3].parse::<f64>().unwrap()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }
    for f in manifest.files.iter().filter(|f| f.starts_with("collapse_")) {
        let mut rdr = csv::Reader::from_path(plots.join(f)).unwrap();
        let kinds: Vec<String> = rdr.records().map(|r| r.unwrap()[2].to_string()).collect();
        let unscaled = kinds.iter().filter(|k| *k == "unscaled").count();
        assert!(unscaled > 0);
        assert_eq!(unscaled * 2, kinds.len());
    }
}

#[test]
fn plot_data_reports_missing_upstream_file() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let report = synthetic_run(&run_dir);
    let victim = &report.periods[0].units[0].curves[0].file;
    std::fs::remove_file(run_dir.join(victim)).unwrap();
    let err = emit_plot_data(&report, &run_dir, &dir.path().join("plots")).unwrap_err();
    assert!(matches!(err, Error::MissingDependency(_)), "{err:?}");
}
