use pricelaw::collapse::{collapse_error, fit_collapse, CollapseConfig, LiquidityProxy};
use pricelaw::impact::BinnedCurve;
use pricelaw::synth::{gen_collapse_family, GroupScenario, MarketScenario, MasterFunction};

fn family(sc: &MarketScenario) -> (Vec<BinnedCurve>, Vec<LiquidityProxy>) {
    gen_collapse_family(sc).unwrap().into_iter().unzip()
}

#[test]
fn truth_beats_shifted_exponents() {
    let (curves, proxies) = family(&MarketScenario::default());
    for n_bins in [10, 20, 40] {
        let e = |g: f64, d: f64| collapse_error(&curves, &proxies, g, d, n_bins).unwrap().epsilon;
        let truth = e(0.3, 0.3);
        for (g, d) in [(0.1, 0.1), (0.1, 0.5), (0.5, 0.1), (0.5, 0.5)] {
            assert!(truth <= e(g, d), "N_b {n_bins}: truth {truth} vs ({g}, {d}) {}", e(g, d));
        }
    }
}

#[test]
fn zero_exponents_give_identical_curves() {
    let sc = MarketScenario {
        gamma_0: 0.0,
        delta_0: 0.0,
        ..Default::default()
    };
    let (curves, _) = family(&sc);
    for c in &curves[1..] {
        let ys: Vec<f64> = c.points.iter().map(|p| p.delta_p_star).collect();
        let first: Vec<f64> = curves[0].points.iter().map(|p| p.delta_p_star).collect();
        assert_eq!(ys, first);
    }
}

#[test]
fn reported_epsilon_matches_independent_evaluation() {
    let (curves, proxies) = family(&MarketScenario::default());
    let cfg = CollapseConfig::default();
    let fit = fit_collapse(&curves, &proxies, &cfg).unwrap();
    let again = collapse_error(&curves, &proxies, fit.gamma, fit.delta, cfg.n_bins).unwrap();
    assert_eq!(fit.epsilon, again.epsilon);
    assert_eq!(fit.n_bins, cfg.n_bins);
}

#[test]
fn equal_proxies_flag_gamma() {
    let sc = MarketScenario::default();
    let sc = MarketScenario {
        groups: sc.groups.iter().map(|g| GroupScenario { c_target: 5.0, ..g.clone() }).collect(),
        master: MasterFunction::Power { exponent: 0.5 },
        ..sc.clone()
    };
    let (curves, proxies) = family(&sc);
    let fit = fit_collapse(&curves, &proxies, &CollapseConfig::default()).unwrap();
    assert!(!fit.gamma_identifiable);
}
