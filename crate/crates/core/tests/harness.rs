use std::path::Path;

use heatplan::baselines::RuleController;
use heatplan::harness::{
    self, read_log_csv, run_planner_days, run_rule_days, train_forecaster, warmup, write_log_csv,
    DayMetrics, ExperimentConfig, PlannerSpec, PriorPlan,
};
use heatplan::physnet::ForecasterMode;
use heatplan::planner::{SearchConfig, SearchMode};
use heatplan::reward::RewardNormalizer;

fn tiny(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.name = "tiny".into();
    c.seeds = vec![3, 4];
    c.output_dir = dir.to_path_buf();
    c.protocol.warmup_days = 2;
    c.protocol.test_days = 2;
    c.forecaster.train_updates = 40;
    c.forecaster.retrain_updates = 10;
    c.search.budgets = vec![8, 16];
    c.search.horizon_h = 2.0;
    c.forecast_eval.train_days = vec![1];
    c.forecast_eval.horizons_h = vec![2.0];
    c.forecast_eval.test_days = 1;
    c.forecast_eval.eval_stride = 6;
    c.forecast_eval.train_updates = 40;
    c.alphazero.budgets = vec![8];
    c.alphazero.sample_budget = 16;
    c.alphazero.training.epochs = 3;
    c
}

/// Reward of one step recomputed from the logged quantities.
fn raw_reward(u_phys: f64, lambda: f64, t_set: f64, t_next: f64) -> f64 {
    let kwh = u_phys * 0.5 / 1000.0;
    -kwh * lambda - 0.5 * (t_set - t_next).max(0.0) - 0.1 * (t_next - t_set).max(0.0)
}

#[test]
fn normalization_endpoints_are_exact() {
    let n = RewardNormalizer::new(-2.3).unwrap();
    assert_eq!(n.normalize(0.0), 1.0);
    assert_eq!(n.normalize(-2.3), 0.0);
    assert_eq!(n.normalize(-2.3 / 2.0), 0.5);
    assert_eq!(n.normalize(-100.0), 0.0);
    assert_eq!(n.normalize(0.5), 1.0);
}

#[test]
fn every_logged_transition_has_a_bounded_reward() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.protocol.test_days = 3;
    for seed in 0..4 {
        let w = warmup(&cfg, seed).unwrap();
        assert_eq!(w.normalizer.rho_max, 0.0);
        assert!(w.normalizer.rho_min < 0.0);
        for r in &w.log {
            let expected = raw_reward(r.u_phys, r.obs.lambda, r.obs.t_set, r.t_r_next);
            assert!((r.raw_reward - expected).abs() < 1e-12, "step {}", r.t);
            let v = w.normalizer.normalize(r.raw_reward);
            assert!((0.0..=1.0).contains(&v), "step {} normalized to {v}", r.t);
        }
        for ctrl in [
            RuleController::BangBang,
            RuleController::Discrete,
            RuleController::Continuous,
        ] {
            for d in run_rule_days(&cfg, &w, ctrl).unwrap() {
                assert_eq!(d.steps, 48);
                assert!((0.0..=48.0).contains(&d.reward), "{ctrl:?}: {}", d.reward);
                assert_eq!(d.band_violations, 0);
            }
        }
    }
}

#[test]
fn planner_days_stay_within_the_reward_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let w = warmup(&cfg, 1).unwrap();
    let horizon = cfg.horizon_steps(cfg.search.horizon_h).unwrap();
    let model = train_forecaster(&cfg, ForecasterMode::PhysNet, &w.log, horizon, 7, None).unwrap();
    let spec = PlannerSpec {
        mode: SearchMode::Vanilla,
        search: SearchConfig {
            n_simulations: 8,
            max_depth: None,
            alpha: 1.0,
            gamma: 0.97,
        },
        horizon,
        prior: PriorPlan::None,
    };
    let days = run_planner_days(&cfg, &w, &model, &spec).unwrap();
    assert_eq!(days.len(), cfg.protocol.test_days);
    for d in &days {
        assert!((0.0..=48.0).contains(&d.reward), "{}", d.reward);
        assert_eq!(d.band_violations, 0);
    }
}

#[test]
fn day_metrics_match_a_hand_tally() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let w = warmup(&cfg, 2).unwrap();
    let day = &w.log[48..96];
    let m = DayMetrics::from_records(day, &cfg, &w.normalizer);
    let rho_min = w.normalizer.rho_min;
    let reward: f64 = day
        .iter()
        .map(|r| ((r.raw_reward - rho_min) / -rho_min).clamp(0.0, 1.0))
        .sum();
    let kwh: f64 = day.iter().map(|r| r.u_phys * 0.5 / 1000.0).sum();
    let cost: f64 = day
        .iter()
        .map(|r| r.u_phys * 0.5 / 1000.0 * r.obs.lambda)
        .sum();
    assert!((m.reward - reward).abs() < 1e-9);
    assert!((m.energy_kwh - kwh).abs() < 1e-9);
    assert!((m.cost - cost).abs() < 1e-9);
}

#[test]
fn log_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let (_, log) = harness::generate_data(&cfg, 5, 1, RuleController::Continuous).unwrap();
    let path = dir.path().join("log.csv");
    write_log_csv(&path, &log).unwrap();
    assert_eq!(read_log_csv(&path).unwrap(), log);
}

fn run_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let cfg = tiny(dir);
    let mut out = Vec::new();
    for (name, rows) in [
        ("forecast_eval", harness::run_forecast_eval(&cfg).unwrap()),
        ("control_eval", harness::run_control_eval(&cfg).unwrap()),
        (
            "alphazero_eval",
            harness::run_alphazero_compare(&cfg).unwrap(),
        ),
    ] {
        assert!(rows.iter().all(|r| r.is_ok()), "{name} has failed rows");
        let (csv, _) = harness::emit_results(&cfg, name, &harness::with_summaries(rows)).unwrap();
        out.push((name.to_string(), std::fs::read(csv).unwrap()));
    }
    out
}

#[test]
fn experiments_rerun_byte_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_all(a.path());
    let second = run_all(b.path());
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        assert!(!x.is_empty());
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn bang_bang_rows_ignore_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.search.modes = vec![];
    let rows = harness::run_control_eval(&cfg).unwrap();
    for seed in &cfg.seeds {
        let r: Vec<_> = rows
            .iter()
            .filter(|r| r.seed == Some(*seed) && r.condition == "bangbang")
            .collect();
        assert_eq!(r.len(), cfg.search.budgets.len());
        assert!(r.iter().all(|x| x.daily_reward == r[0].daily_reward));
    }
}

#[test]
fn manifest_records_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let (_, manifest) = harness::emit_results(&cfg, "empty", &[]).unwrap();
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(manifest).unwrap()).unwrap();
    assert_eq!(m["config_hash"], cfg.hash());
    let mut other = cfg.clone();
    other.search.alpha = 2.0;
    assert_ne!(other.hash(), cfg.hash());
}
