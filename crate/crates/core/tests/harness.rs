use std::path::{Path, PathBuf};
use std::process::Command;

use nfv_energy::ddpg::Agent;
use nfv_energy::harness::presets::{self, SlaKind};
use nfv_energy::harness::{compare, evaluate, train, ExperimentConfig, SchedulerKind};
use nfv_energy::metrics::read_metrics;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// A DDPG run small enough for a unit-scale test.
fn tiny(sla: SlaKind, steps: u64) -> ExperimentConfig {
    let mut cfg = presets::five_flow_experiment(sla, SchedulerKind::Ddpg);
    cfg.seed = 7;
    cfg.agent.hidden = vec![16, 16];
    cfg.agent.batch_size = 16;
    let t = &mut cfg.training;
    t.total_steps = steps;
    t.warmup_steps = 50;
    t.learning_starts = 50;
    t.eval_every = 100;
    t.eval_steps = 100;
    t.episode_len = 50;
    t.flush_every = 10;
    t.refresh_every = 20;
    cfg
}

#[test]
fn one_step_run_writes_rows_and_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(SlaKind::MaxThroughput, 1);
    cfg.output_dir = Some(dir.path().to_path_buf());
    let outcome = train(&cfg).unwrap();
    assert_eq!(outcome.metrics.rows.len(), 5);
    let rows = read_metrics(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 5);
    let agent = Agent::load(outcome.checkpoint.unwrap()).unwrap();
    assert_eq!((agent.state_dim(), agent.action_dim()), (20, 25));
    for name in ["eval_metrics.csv", "evals.csv", "replay_stats.csv", "summary.toml"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn deterministic_runs_are_byte_identical_and_complete() {
    let run = |dir: &Path| {
        let mut cfg = tiny(SlaKind::MaxThroughput, 400);
        cfg.output_dir = Some(dir.to_path_buf());
        train(&cfg).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = run(a.path());
    run(b.path());
    for name in ["metrics.csv", "eval_metrics.csv", "evals.csv", "replay_stats.csv", "summary.toml"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert!(x == y, "{name} differs");
    }
    assert_eq!(out.metrics.rows.len(), 400 * 5);
    let steps: Vec<u64> = out.metrics.rows.iter().map(|r| r.step).collect();
    assert!(steps.chunks(5).enumerate().all(|(i, c)| c.iter().all(|&s| s == i as u64)));
    assert_eq!(out.metrics.evals.len(), 4);
}

#[test]
fn evaluate_round_trip_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(SlaKind::EnergyEfficiency, 200);
    cfg.output_dir = Some(dir.path().to_path_buf());
    let ckpt = train(&cfg).unwrap().checkpoint.unwrap();
    let a = evaluate(&ckpt, &cfg, 2).unwrap();
    let b = evaluate(&ckpt, &cfg, 2).unwrap();
    assert_eq!(a, b);
    assert!(a.mean_throughput_gbps.is_finite() && (0.0..=1.0).contains(&a.violation_rate));
    assert!(evaluate(&ckpt, &cfg, 0).is_err());
    let mut other = cfg.clone();
    other.scenario.flows.pop();
    assert!(evaluate(&ckpt, &other, 1).is_err(), "dimension mismatch must be rejected");
}

#[test]
fn untrained_policy_scores_the_same_in_training_and_evaluation() {
    // sigma = 0 and no updates: the training loop runs the same greedy policy
    // that evaluation runs, on a different jitter stream.
    let mut cfg = tiny(SlaKind::MaxThroughput, 1200);
    cfg.agent.sigma0 = 0.0;
    cfg.training.learning_starts = 10_000;
    cfg.training.warmup_steps = 0;
    cfg.training.eval_steps = 1000;
    cfg.training.keep_best = false;
    let m = train(&cfg).unwrap().metrics;
    let (w, e) = (m.training_window, m.final_eval);
    assert!((w.mean_throughput_gbps - e.mean_throughput_gbps).abs() <= 0.05 * e.mean_throughput_gbps);
    assert!((w.mean_energy_j - e.mean_energy_j).abs() <= 0.05 * e.mean_energy_j);
}

#[test]
fn returned_policy_is_the_best_validated_one() {
    let cfg = tiny(SlaKind::MaxThroughput, 500);
    let m = train(&cfg).unwrap().metrics;
    let best = m.evals.iter().map(|e| e.mean_reward).fold(f64::MIN, f64::max);
    assert!(m.selected_step.is_multiple_of(100) && m.selected_step <= 500);
    if m.selected_step < 500 {
        let chosen = m.evals.iter().find(|e| e.step == m.selected_step).unwrap();
        assert_eq!(chosen.mean_reward, best);
    }
    let mut last_only = cfg.clone();
    last_only.training.keep_best = false;
    let l = train(&last_only).unwrap().metrics;
    assert_eq!(l.selected_step, 500);
    assert_eq!(l.final_eval, l.last_iterate_eval);
}

#[test]
fn parallel_mode_produces_every_step_once() {
    let mut cfg = tiny(SlaKind::MinEnergy, 600);
    cfg.training.deterministic = false;
    cfg.training.num_actors = 3;
    let m = train(&cfg).unwrap().metrics;
    assert_eq!(m.rows.len(), 600 * 5);
    let mut steps: Vec<u64> = m.rows.iter().map(|r| r.step).collect();
    steps.dedup();
    assert_eq!(steps, (0..600).collect::<Vec<_>>());
    assert!(m.final_eval.mean_throughput_gbps.is_finite());
}

#[test]
fn comparing_a_scheduler_with_itself_gives_identical_rows() {
    let mut cfg = presets::five_flow_experiment(SlaKind::MaxThroughput, SchedulerKind::Heuristic);
    cfg.training.total_steps = 300;
    cfg.training.eval_steps = 200;
    let report = compare(&[cfg.clone(), cfg.clone()]).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0], report.rows[1]);
    assert!(report.rows.iter().all(|r| r.energy_saving.is_finite()));
    let table = report.to_table();
    assert!(table.contains("heuristic") && table.contains("E_s"));
    let mut other = cfg.clone();
    other.scenario.dt = 5.0;
    assert!(compare(&[cfg, other]).is_err());
}

#[test]
fn bundled_configs_parse_and_match_presets() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let name = path.file_stem().unwrap().to_str().unwrap();
        if name.starts_with("max_throughput") || name == "min_energy" || name == "energy_efficiency" {
            assert_eq!(cfg.scenario, presets::five_flow(), "{name}");
        }
        if name == "llc_split_bench" {
            assert_eq!(cfg.scenario, presets::two_chain_llc().scenario);
            assert_eq!(cfg.bench, presets::two_chain_llc().bench);
        }
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn toml_round_trip_and_rejection() {
    let cfg = tiny(SlaKind::MinEnergy, 10);
    let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(ExperimentConfig::from_toml_str("scheduler = \"ddpg\"\nbogus = 1\n").is_err());
    let mut bad = cfg.clone();
    bad.training.lr_final_fraction = 0.0;
    assert!(bad.validate().is_err());
}

// ---------------------------------------------------------------------------
// Command line

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nfv-energy"))
}

#[test]
fn cli_exit_codes() {
    assert_eq!(cli().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(cli().arg("train").output().unwrap().status.code(), Some(1), "missing config");
    assert_eq!(cli().args(["frobnicate"]).output().unwrap().status.code(), Some(1), "unknown subcommand");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "scheduler = \"ddpg\"\n[sla]\nkind = \"max_throughput\"\nenergy_cap = -1.0\n").unwrap();
    let out = cli().args(["train", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // A reward scale this small turns every stored reward into infinity.
    let mut cfg = tiny(SlaKind::MaxThroughput, 200);
    cfg.training.reward_scale = Some(1e-308);
    let path = dir.path().join("overflow.toml");
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    let out_dir = dir.path().join("run");
    let out = cli().args(["train", "--deterministic", "--config"]).arg(&path).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("abort.txt").exists());
}

#[test]
fn cli_train_eval_bench_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(SlaKind::MaxThroughput, 150);
    let path = dir.path().join("ddpg.toml");
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    let run = dir.path().join("run");
    let ok = |args: &mut Command| {
        let out = args.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(cli().args(["train", "--seed", "3", "--config"]).arg(&path).arg("--out").arg(&run));
    assert!(run.join("metrics.csv").exists());
    let eval = ok(cli().args(["eval", "--episodes", "1", "--checkpoint"]).arg(run.join("checkpoint")).arg("--config").arg(&path));
    assert!(eval.contains("mean_throughput_gbps"));

    let bench_cfg = configs_dir().join("llc_split_bench.toml");
    let bench = ok(cli().args(["bench", "--knob", "llc", "--values", "0.9,0.2", "--config"]).arg(&bench_cfg));
    assert_eq!(bench.lines().count(), 3);
    let out = cli().args(["bench", "--knob", "llc", "--values", "1.5", "--config"]).arg(&bench_cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let heur = configs_dir().join("max_throughput_heuristic.toml");
    let cmp_dir = dir.path().join("cmp");
    let mut short = ExperimentConfig::load(&heur).unwrap();
    short.training.total_steps = 50;
    short.training.eval_steps = 50;
    let short_path = dir.path().join("heur.toml");
    std::fs::write(&short_path, short.to_toml_string().unwrap()).unwrap();
    let table = ok(cli().args(["compare", "--config"]).arg(&short_path).arg("--config").arg(&short_path).arg("--out").arg(&cmp_dir));
    assert!(table.contains("heuristic") && cmp_dir.join("compare.csv").exists());
}
