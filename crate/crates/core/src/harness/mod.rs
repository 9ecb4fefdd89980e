//! CLI, experiment orchestration, persistence, and reproducibility.
//!
//! Each run writes into `<out_root>/<kind>/`: a `metrics.csv` whose content
//! is a pure function of (config, seeds), a `summary.json` with the echoed
//! config and wall times, and a `verdict.txt` mirroring the acceptance
//! thresholds for that experiment kind. Trajectory files additionally carry
//! per-step planning wall-times.

mod config;
mod experiments;

pub use config::{
    parse_config, serialize_config, BoundSection, CodecSection, DreamSection, EnvConfig,
    ExperimentConfig, ExperimentKind, ModelConfig, PlannerSection, TrainSection,
};
pub use experiments::{
    build_env, decoder_mse_vs_baseline, goal_observation, gradient_check_suite, make_planner,
    oracle_stack, run_bound_check, run_codec_bench, run_collapse_seed, run_dream_train,
    run_plan_seed, train_glp, trajectory_return, CollapseSeedOutcome, DreamTrainOutcome,
    GlpTrainOutcome, Objective, TrainLogRow,
};

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Verdict {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub verdicts: Vec<Verdict>,
    pub seed_lines: Vec<String>,
    pub wall_time_s: f64,
}

impl RunOutcome {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, content)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_val(v: f64) -> String {
    format!("{v:.16e}")
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

fn json_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "null".to_string()
    }
}

/// Run the configured experiment, writing all artifacts under
/// `<out_root>/<kind>/`.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<RunOutcome> {
    let started = Instant::now();
    let out_dir = out_root.join(cfg.kind.name());
    fs::create_dir_all(&out_dir)?;

    let mut metrics = String::new();
    let mut verdicts = Vec::new();
    let mut seed_lines = Vec::new();
    let mut extras: Vec<(String, String)> = Vec::new();

    match cfg.kind {
        ExperimentKind::CollapseDemo => {
            metrics.push_str(
                "experiment,seed,arm,step,latent_loss,gen_loss,roundtrip_eps,mean_std,effective_rank\n",
            );
            let mut collapsed = 0usize;
            let mut healthy = 0usize;
            for &seed in &cfg.seeds {
                let outcome = experiments::run_collapse_seed(cfg, seed)?;
                for (arm, rows) in [
                    ("latent", &outcome.latent.rows),
                    ("generative", &outcome.generative.rows),
                ] {
                    for r in rows {
                        let _ = writeln!(
                            metrics,
                            "collapse-demo,{seed},{arm},{},{},{},{},{},{}",
                            r.step,
                            fmt_val(r.latent_loss),
                            fmt_val(r.gen_loss),
                            fmt_val(r.roundtrip_eps),
                            fmt_val(r.mean_std),
                            fmt_val(r.effective_rank)
                        );
                    }
                }
                let lc = outcome.latent_collapsed();
                let gh = outcome.generative_healthy();
                collapsed += lc as usize;
                healthy += gh as usize;
                seed_lines.push(format!(
                    "seed {seed}: latent std {:.3e} -> {:.3e} ({}), generative mse ratio {:.3} std ratio {:.3} ({})",
                    outcome.latent.init_mean_std,
                    outcome.latent.final_mean_std,
                    if lc { "collapsed" } else { "no collapse" },
                    outcome.generative.decoder_mse / outcome.generative.baseline_mse,
                    outcome.generative.final_mean_std / outcome.generative.init_mean_std,
                    if gh { "healthy" } else { "degraded" },
                ));
            }
            let n = cfg.seeds.len();
            verdicts.push(Verdict::new(
                "latent-loss-collapses",
                collapsed * 10 >= n * 9,
                format!("{collapsed}/{n} seeds below 1% of initial latent std"),
            ));
            verdicts.push(Verdict::new(
                "generative-loss-does-not-collapse",
                healthy * 10 >= n * 9,
                format!(
                    "{healthy}/{n} seeds with decoder mse <= 50% baseline and std >= 10% of init"
                ),
            ));
        }

        ExperimentKind::BoundCheck => {
            metrics.push_str(
                "experiment,seed,case,batch,latent_loss,gen_loss,roundtrip_eps,gap,bound_satisfied\n",
            );
            let mut max_gap: f64 = 0.0;
            let mut all_hold = true;
            for &seed in &cfg.seeds {
                let outcome = experiments::run_bound_check(&cfg.bound, seed)?;
                for r in &outcome.rows {
                    let _ = writeln!(
                        metrics,
                        "bound-check,{seed},{},{},{},{},{},{},{}",
                        r.case,
                        r.batch,
                        fmt_val(r.latent_loss),
                        fmt_val(r.gen_loss),
                        fmt_val(r.roundtrip_eps),
                        fmt_val(r.gap),
                        r.bound_satisfied
                    );
                }
                max_gap = max_gap.max(outcome.max_equality_gap);
                all_hold &= outcome.all_bounds_hold;
                seed_lines.push(format!(
                    "seed {seed}: max equality gap {:.3e}, bounds {}",
                    outcome.max_equality_gap,
                    if outcome.all_bounds_hold {
                        "hold"
                    } else {
                        "VIOLATED"
                    },
                ));
            }
            verdicts.push(Verdict::new(
                "equality-case",
                max_gap < 1e-9,
                format!("max |latent - generative| = {max_gap:.3e} (threshold 1e-9)"),
            ));
            verdicts.push(Verdict::new(
                "bound-case",
                all_hold,
                "latent <= generative + roundtrip eps on every batch".to_string(),
            ));
        }

        ExperimentKind::CodecBench => {
            metrics.push_str(
                "mode,T,D,K_tilde,eps_tilde,M,vocab_size,code_length,trials,violations\n",
            );
            let mut total_violations = 0u64;
            // Accumulate verification trials across all seeds per spec row.
            let mut accumulated: Vec<experiments::CodecBenchRow> = Vec::new();
            for (i, &seed) in cfg.seeds.iter().enumerate() {
                let rows = experiments::run_codec_bench(&cfg.codec, seed)?;
                if i == 0 {
                    accumulated = rows;
                } else {
                    for (acc, r) in accumulated.iter_mut().zip(rows) {
                        acc.trials += r.trials;
                        acc.violations += r.violations;
                    }
                }
            }
            for r in &accumulated {
                total_violations += r.violations;
                let m_field = match r.spec.m {
                    Some(m) => m.to_string(),
                    None => String::new(),
                };
                let _ = writeln!(
                    metrics,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.spec.mode.name(),
                    r.spec.t,
                    r.spec.d,
                    fmt_val(r.spec.k_tilde),
                    fmt_val(r.spec.eps_tilde),
                    m_field,
                    r.spec.vocab_size,
                    r.spec.code_length,
                    r.trials,
                    r.violations
                );
            }
            seed_lines.push(format!(
                "{} codec rows verified, {} violations",
                accumulated.len(),
                total_violations
            ));
            verdicts.push(Verdict::new(
                "distinguishability",
                total_violations == 0,
                format!("{total_violations} violations across all rows (threshold 0)"),
            ));
        }

        ExperimentKind::Plan => {
            metrics.push_str("experiment,seed,final_distance,total_reward\n");
            let obs_dim = cfg.env.state_dim + cfg.env.n_distractors;
            let mut worst_distance: f64 = 0.0;
            for &seed in &cfg.seeds {
                let outcome = experiments::run_plan_seed(cfg, seed)?;
                let total_reward: f64 = outcome.record.rewards.iter().sum();
                let _ = writeln!(
                    metrics,
                    "plan,{seed},{},{}",
                    fmt_val(outcome.final_distance),
                    fmt_val(total_reward)
                );
                let mut traj = String::new();
                let mut header: Vec<String> = vec!["step".into()];
                header.extend((0..obs_dim).map(|i| format!("o_{i}")));
                header.extend((0..cfg.env.action_dim).map(|i| format!("a_{i}")));
                header.push("reward".into());
                header.push("plan_ms".into());
                traj.push_str(&header.join(","));
                traj.push('\n');
                for k in 0..outcome.record.actions.len() {
                    let mut row: Vec<String> = vec![k.to_string()];
                    row.extend(outcome.record.observations[k].iter().map(|v| fmt_val(*v)));
                    row.extend(outcome.record.actions[k].iter().map(|v| fmt_val(*v)));
                    row.push(fmt_val(outcome.record.rewards[k]));
                    row.push(format!("{:.3}", outcome.record.plan_ms[k]));
                    traj.push_str(&row.join(","));
                    traj.push('\n');
                }
                write_atomic(&out_dir.join(format!("trajectory_seed{seed}.csv")), &traj)?;
                worst_distance = worst_distance.max(outcome.final_distance);
                seed_lines.push(format!(
                    "seed {seed}: final distance {:.4}, mean plan {:.1} ms",
                    outcome.final_distance, outcome.mean_plan_ms
                ));
            }
            verdicts.push(Verdict::new(
                "reaches-goal",
                worst_distance < 0.1,
                format!("worst final distance {worst_distance:.4} (threshold 0.1)"),
            ));
        }

        ExperimentKind::DreamTrain => {
            metrics.push_str(
                "experiment,seed,oracle_return,dream_return,random_return,collapsed_return\n",
            );
            let outcome = experiments::run_dream_train(cfg)?;
            for r in &outcome.rows {
                let _ = writeln!(
                    metrics,
                    "dream-train,{},{},{},{},{}",
                    r.seed,
                    fmt_val(r.oracle_return),
                    fmt_val(r.dream_return),
                    fmt_val(r.random_return),
                    fmt_val(r.collapsed_return)
                );
                seed_lines.push(format!(
                    "seed {}: oracle {:.3}, dream {:.3}, random {:.3}, collapsed {:.3}",
                    r.seed, r.oracle_return, r.dream_return, r.random_return, r.collapsed_return
                ));
            }
            verdicts.push(Verdict::new(
                "dream-policy-near-oracle",
                outcome.normalized_dream_score >= 0.8,
                format!(
                    "normalized score {:.3} (threshold 0.80); means: oracle {:.3}, dream {:.3}, random {:.3}",
                    outcome.normalized_dream_score,
                    outcome.mean_oracle,
                    outcome.mean_dream,
                    outcome.mean_random
                ),
            ));
            verdicts.push(Verdict::new(
                "collapsed-model-within-noise-of-random",
                outcome.collapsed_vs_random_p >= 0.05,
                format!(
                    "rank-sum p = {:.3} (needs >= 0.05); collapsed mean {:.3}",
                    outcome.collapsed_vs_random_p, outcome.mean_collapsed
                ),
            ));
            verdicts.push(Verdict::new(
                "no-env-calls-during-training",
                outcome.env_calls_during_training == 0,
                format!("{} instrumented calls", outcome.env_calls_during_training),
            ));
            extras.push((
                "mean_mpc_decision_ms".into(),
                json_num(outcome.mean_mpc_decision_ms),
            ));
            extras.push((
                "mean_policy_decision_ms".into(),
                json_num(outcome.mean_policy_decision_ms),
            ));
            extras.push((
                "normalized_dream_score".into(),
                json_num(outcome.normalized_dream_score),
            ));
            extras.push((
                "collapsed_vs_random_p".into(),
                json_num(outcome.collapsed_vs_random_p),
            ));
        }

        ExperimentKind::GradCheck => {
            metrics.push_str("experiment,seed,max_rel_error\n");
            let mut worst: f64 = 0.0;
            for &seed in &cfg.seeds {
                let err = experiments::gradient_check_suite(50, seed)?;
                let _ = writeln!(metrics, "grad-check,{seed},{}", fmt_val(err));
                worst = worst.max(err);
                seed_lines.push(format!("seed {seed}: max rel error {err:.3e}"));
            }
            verdicts.push(Verdict::new(
                "gradients-match-finite-differences",
                worst < 1e-4,
                format!("max rel error {worst:.3e} (threshold 1e-4)"),
            ));
        }
    }

    write_atomic(&out_dir.join("metrics.csv"), &metrics)?;

    let mut verdict_text = String::new();
    for v in &verdicts {
        let _ = writeln!(
            verdict_text,
            "{} {}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.detail
        );
    }
    let all = verdicts.iter().all(|v| v.pass);
    let _ = writeln!(
        verdict_text,
        "{} ({}/{} criteria)",
        if all { "PASS" } else { "FAIL" },
        verdicts.iter().filter(|v| v.pass).count(),
        verdicts.len()
    );
    write_atomic(&out_dir.join("verdict.txt"), &verdict_text)?;

    let wall_time_s = started.elapsed().as_secs_f64();
    let mut json = String::from("{\n");
    let _ = writeln!(json, "  \"experiment\": \"{}\",", cfg.kind.name());
    let _ = writeln!(json, "  \"version\": \"{}\",", VERSION);
    let _ = writeln!(
        json,
        "  \"seeds\": [{}],",
        cfg.seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let _ = writeln!(json, "  \"wall_time_s\": {},", json_num(wall_time_s));
    for (k, v) in &extras {
        let _ = writeln!(json, "  \"{k}\": {v},");
    }
    let _ = writeln!(
        json,
        "  \"verdicts\": [{}],",
        verdicts
            .iter()
            .map(|v| format!(
                "{{\"name\": \"{}\", \"pass\": {}, \"detail\": \"{}\"}}",
                json_escape(&v.name),
                v.pass,
                json_escape(&v.detail)
            ))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let _ = writeln!(
        json,
        "  \"per_seed\": [{}],",
        seed_lines
            .iter()
            .map(|l| format!("\"{}\"", json_escape(l)))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let _ = writeln!(
        json,
        "  \"config\": \"{}\"",
        json_escape(&serialize_config(cfg))
    );
    json.push_str("}\n");
    write_atomic(&out_dir.join("summary.json"), &json)?;

    Ok(RunOutcome {
        out_dir,
        verdicts,
        seed_lines,
        wall_time_s,
    })
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

const USAGE: &str = "\
glplab - world-model objectives laboratory

USAGE:
  glplab <SUBCOMMAND> [--config PATH] [--seed N] [--out DIR]

SUBCOMMANDS:
  collapse-demo   latent vs generative training comparison (config required)
  bound-check     surrogate-bound equality and inequality sweeps (config required)
  codec-bench     discrete codec size formulas and distinguishability checks
  plan            closed-loop MPC on the linear world (config required)
  dream-train     policy learning inside the world model vs MPC (config required)
  grad-check      reverse-mode vs finite-difference gradient audit

OPTIONS:
  --config PATH   experiment configuration file (key = value with [section]s)
  --seed N        override the configured seed list with a single seed
  --out DIR       output root (default: $GLPLAB_OUT, then ./runs)

Exit status: 0 when every verdict passes, 1 on failed verdicts or runtime
errors, 2 on usage errors.
";

fn needs_config(kind: ExperimentKind) -> bool {
    matches!(
        kind,
        ExperimentKind::CollapseDemo
            | ExperimentKind::BoundCheck
            | ExperimentKind::Plan
            | ExperimentKind::DreamTrain
    )
}

pub fn cli_main(args: &[String]) -> i32 {
    let mut iter = args.iter();
    let sub = match iter.next() {
        Some(s) => s.as_str(),
        None => {
            eprint!("{USAGE}");
            return 2;
        }
    };
    if sub == "--help" || sub == "-h" || sub == "help" {
        print!("{USAGE}");
        return 0;
    }
    let kind = match ExperimentKind::parse(sub) {
        Some(k) => k,
        None => {
            eprintln!("unknown subcommand `{sub}`\n");
            eprint!("{USAGE}");
            return 2;
        }
    };

    let mut config_path: Option<String> = None;
    let mut seed_override: Option<u64> = None;
    let mut out_override: Option<String> = None;
    while let Some(flag) = iter.next() {
        match flag.as_str() {
            "--config" => match iter.next() {
                Some(p) => config_path = Some(p.clone()),
                None => {
                    eprintln!("--config needs a path\n");
                    eprint!("{USAGE}");
                    return 2;
                }
            },
            "--seed" => match iter.next().and_then(|s| s.parse::<u64>().ok()) {
                Some(n) => seed_override = Some(n),
                None => {
                    eprintln!("--seed needs an integer\n");
                    eprint!("{USAGE}");
                    return 2;
                }
            },
            "--out" => match iter.next() {
                Some(p) => out_override = Some(p.clone()),
                None => {
                    eprintln!("--out needs a directory\n");
                    eprint!("{USAGE}");
                    return 2;
                }
            },
            other => {
                eprintln!("unknown option `{other}`\n");
                eprint!("{USAGE}");
                return 2;
            }
        }
    }

    let mut cfg = match &config_path {
        Some(path) => {
            let text = match fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("cannot read config `{path}`: {e}");
                    return 1;
                }
            };
            match parse_config(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return 1;
                }
            }
        }
        None => {
            if needs_config(kind) {
                eprintln!("subcommand `{sub}` requires --config PATH\n");
                eprint!("{USAGE}");
                return 2;
            }
            ExperimentConfig::with_kind(kind)
        }
    };
    if cfg.kind != kind {
        eprintln!(
            "config kind `{}` does not match subcommand `{}`",
            cfg.kind.name(),
            sub
        );
        return 2;
    }
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }

    let out_root = out_override
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var("GLPLAB_OUT").ok())
        .unwrap_or_else(|| "runs".to_string());

    match run_experiment(&cfg, Path::new(&out_root)) {
        Ok(outcome) => {
            for line in &outcome.seed_lines {
                println!("{line}");
            }
            for v in &outcome.verdicts {
                println!(
                    "{} {}: {}",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.name,
                    v.detail
                );
            }
            println!(
                "artifacts: {} ({:.1}s)",
                outcome.out_dir.display(),
                outcome.wall_time_s
            );
            if outcome.all_pass() {
                0
            } else {
                1
            }
        }
        Err(Error::Io(e)) => {
            eprintln!("i/o failure: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
