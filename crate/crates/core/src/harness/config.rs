//! Line-oriented `key = value` experiment configuration with `[section]`
//! headers. Unknown sections and keys are rejected with the offending line
//! number; omitted keys take the documented defaults.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    CollapseDemo,
    BoundCheck,
    CodecBench,
    Plan,
    DreamTrain,
    GradCheck,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::CollapseDemo => "collapse-demo",
            ExperimentKind::BoundCheck => "bound-check",
            ExperimentKind::CodecBench => "codec-bench",
            ExperimentKind::Plan => "plan",
            ExperimentKind::DreamTrain => "dream-train",
            ExperimentKind::GradCheck => "grad-check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "collapse-demo" => Some(ExperimentKind::CollapseDemo),
            "bound-check" => Some(ExperimentKind::BoundCheck),
            "codec-bench" => Some(ExperimentKind::CodecBench),
            "plan" => Some(ExperimentKind::Plan),
            "dream-train" => Some(ExperimentKind::DreamTrain),
            "grad-check" => Some(ExperimentKind::GradCheck),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    /// B = b_scale * I (A is always I here).
    pub b_scale: f64,
    pub process_noise: f64,
    pub n_distractors: usize,
    pub distractor_std: f64,
    pub action_bound: f64,
    pub state_bound: f64,
    pub init_range: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            state_dim: 2,
            action_dim: 2,
            b_scale: 0.5,
            process_noise: 0.02,
            n_distractors: 4,
            distractor_std: 0.5,
            action_bound: 1.0,
            state_bound: 3.0,
            init_range: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 8,
            hidden_width: 64,
            hidden_layers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub regularizer_weight: f64,
    pub probe_size: usize,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 3000,
            batch_size: 32,
            dataset_size: 4096,
            lr: 1.5e-3,
            lr_final: 1e-5,
            regularizer_weight: 0.0,
            probe_size: 512,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecSection {
    pub trials: usize,
    pub k_tilde: f64,
    pub eps_tilde_list: Vec<f64>,
    pub t_list: Vec<usize>,
    pub d_list: Vec<usize>,
    pub m: u64,
}

impl Default for CodecSection {
    fn default() -> Self {
        CodecSection {
            trials: 10_000,
            k_tilde: 2.0,
            eps_tilde_list: vec![0.1, 0.2],
            t_list: vec![1, 2],
            d_list: vec![1, 2, 3],
            m: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSection {
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub batches: usize,
    pub batch_size: usize,
}

impl Default for BoundSection {
    fn default() -> Self {
        BoundSection {
            latent_dim: 2,
            obs_dim: 4,
            batches: 20,
            batch_size: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerSection {
    pub kind: String,
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub mppi_noise_std: f64,
    /// Closed-loop steps for the `plan` experiment.
    pub steps: usize,
}

impl Default for PlannerSection {
    fn default() -> Self {
        PlannerSection {
            kind: "cem".into(),
            horizon: 12,
            population: 256,
            elites: 25,
            iterations: 8,
            lambda: 1.0,
            gamma: 0.97,
            mppi_noise_std: 0.25,
            steps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DreamSection {
    pub iterations: usize,
    pub rollouts: usize,
    pub horizon: usize,
    pub lr: f64,
    pub sigma_init: f64,
    pub sigma_final: f64,
    pub eval_episodes: usize,
    pub eval_horizon: usize,
    pub start_beliefs: usize,
}

impl Default for DreamSection {
    fn default() -> Self {
        DreamSection {
            iterations: 3000,
            rollouts: 48,
            horizon: 6,
            lr: 0.05,
            sigma_init: 0.4,
            sigma_final: 0.05,
            eval_episodes: 20,
            eval_horizon: 20,
            start_beliefs: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub out_dir: Option<String>,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub codec: CodecSection,
    pub bound: BoundSection,
    pub planner: PlannerSection,
    pub dream: DreamSection,
}

impl ExperimentConfig {
    pub fn with_kind(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            seeds: vec![0],
            out_dir: None,
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            codec: CodecSection::default(),
            bound: BoundSection::default(),
            planner: PlannerSection::default(),
            dream: DreamSection::default(),
        }
    }
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

fn parse_seeds(value: &str, line: usize) -> Result<Vec<u64>> {
    let value = value.trim();
    if let Some((lo, hi)) = value.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|_| bad(line, format!("bad seed range start `{lo}`")))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|_| bad(line, format!("bad seed range end `{hi}`")))?;
        if hi <= lo {
            return Err(bad(line, "empty seed range"));
        }
        return Ok((lo..hi).collect());
    }
    let seeds: Result<Vec<u64>> = value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| bad(line, format!("bad seed `{s}`")))
        })
        .collect();
    let seeds = seeds?;
    if seeds.is_empty() {
        return Err(bad(line, "seeds must be nonempty"));
    }
    Ok(seeds)
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| bad(line, format!("bad value `{value}` for key `{key}`")))
}

fn parse_list_f64(value: &str, line: usize, key: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_num::<f64>(v, line, key))
        .collect()
}

fn parse_list_usize(value: &str, line: usize, key: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse_num::<usize>(v, line, key))
        .collect()
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut kind: Option<ExperimentKind> = None;
    let mut cfg = ExperimentConfig::with_kind(ExperimentKind::GradCheck);
    let mut section = String::from("experiment");
    let mut seeds_set = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| bad(line_no, "unterminated section header"))?;
            match name {
                "experiment" | "env" | "model" | "train" | "codec" | "bound" | "planner"
                | "dream" => section = name.to_string(),
                other => return Err(bad(line_no, format!("unknown section `[{other}]`"))),
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(line_no, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        match (section.as_str(), key) {
            ("experiment", "kind") => {
                kind =
                    Some(ExperimentKind::parse(value).ok_or_else(|| {
                        bad(line_no, format!("unknown experiment kind `{value}`"))
                    })?);
            }
            ("experiment", "seeds") => {
                cfg.seeds = parse_seeds(value, line_no)?;
                seeds_set = true;
            }
            ("experiment", "out_dir") => cfg.out_dir = Some(value.to_string()),
            ("env", "state_dim") => cfg.env.state_dim = parse_num(value, line_no, key)?,
            ("env", "action_dim") => cfg.env.action_dim = parse_num(value, line_no, key)?,
            ("env", "b_scale") => cfg.env.b_scale = parse_num(value, line_no, key)?,
            ("env", "process_noise") => cfg.env.process_noise = parse_num(value, line_no, key)?,
            ("env", "n_distractors") => cfg.env.n_distractors = parse_num(value, line_no, key)?,
            ("env", "distractor_std") => cfg.env.distractor_std = parse_num(value, line_no, key)?,
            ("env", "action_bound") => cfg.env.action_bound = parse_num(value, line_no, key)?,
            ("env", "state_bound") => cfg.env.state_bound = parse_num(value, line_no, key)?,
            ("env", "init_range") => cfg.env.init_range = parse_num(value, line_no, key)?,
            ("model", "latent_dim") => cfg.model.latent_dim = parse_num(value, line_no, key)?,
            ("model", "hidden_width") => cfg.model.hidden_width = parse_num(value, line_no, key)?,
            ("model", "hidden_layers") => cfg.model.hidden_layers = parse_num(value, line_no, key)?,
            ("train", "steps") => cfg.train.steps = parse_num(value, line_no, key)?,
            ("train", "batch_size") => cfg.train.batch_size = parse_num(value, line_no, key)?,
            ("train", "dataset_size") => cfg.train.dataset_size = parse_num(value, line_no, key)?,
            ("train", "lr") => cfg.train.lr = parse_num(value, line_no, key)?,
            ("train", "lr_final") => cfg.train.lr_final = parse_num(value, line_no, key)?,
            ("train", "regularizer_weight") => {
                cfg.train.regularizer_weight = parse_num(value, line_no, key)?
            }
            ("train", "probe_size") => cfg.train.probe_size = parse_num(value, line_no, key)?,
            ("train", "log_every") => cfg.train.log_every = parse_num(value, line_no, key)?,
            ("codec", "trials") => cfg.codec.trials = parse_num(value, line_no, key)?,
            ("codec", "k_tilde") => cfg.codec.k_tilde = parse_num(value, line_no, key)?,
            ("codec", "eps_tilde_list") => {
                cfg.codec.eps_tilde_list = parse_list_f64(value, line_no, key)?
            }
            ("codec", "t_list") => cfg.codec.t_list = parse_list_usize(value, line_no, key)?,
            ("codec", "d_list") => cfg.codec.d_list = parse_list_usize(value, line_no, key)?,
            ("codec", "m") => cfg.codec.m = parse_num(value, line_no, key)?,
            ("bound", "latent_dim") => cfg.bound.latent_dim = parse_num(value, line_no, key)?,
            ("bound", "obs_dim") => cfg.bound.obs_dim = parse_num(value, line_no, key)?,
            ("bound", "batches") => cfg.bound.batches = parse_num(value, line_no, key)?,
            ("bound", "batch_size") => cfg.bound.batch_size = parse_num(value, line_no, key)?,
            ("planner", "kind") => {
                if value != "cem" && value != "mppi" {
                    return Err(bad(line_no, format!("unknown planner kind `{value}`")));
                }
                cfg.planner.kind = value.to_string();
            }
            ("planner", "horizon") => cfg.planner.horizon = parse_num(value, line_no, key)?,
            ("planner", "population") => cfg.planner.population = parse_num(value, line_no, key)?,
            ("planner", "elites") => cfg.planner.elites = parse_num(value, line_no, key)?,
            ("planner", "iterations") => cfg.planner.iterations = parse_num(value, line_no, key)?,
            ("planner", "lambda") => cfg.planner.lambda = parse_num(value, line_no, key)?,
            ("planner", "gamma") => cfg.planner.gamma = parse_num(value, line_no, key)?,
            ("planner", "mppi_noise_std") => {
                cfg.planner.mppi_noise_std = parse_num(value, line_no, key)?
            }
            ("planner", "steps") => cfg.planner.steps = parse_num(value, line_no, key)?,
            ("dream", "iterations") => cfg.dream.iterations = parse_num(value, line_no, key)?,
            ("dream", "rollouts") => cfg.dream.rollouts = parse_num(value, line_no, key)?,
            ("dream", "horizon") => cfg.dream.horizon = parse_num(value, line_no, key)?,
            ("dream", "lr") => cfg.dream.lr = parse_num(value, line_no, key)?,
            ("dream", "sigma_init") => cfg.dream.sigma_init = parse_num(value, line_no, key)?,
            ("dream", "sigma_final") => cfg.dream.sigma_final = parse_num(value, line_no, key)?,
            ("dream", "eval_episodes") => cfg.dream.eval_episodes = parse_num(value, line_no, key)?,
            ("dream", "eval_horizon") => cfg.dream.eval_horizon = parse_num(value, line_no, key)?,
            ("dream", "start_beliefs") => cfg.dream.start_beliefs = parse_num(value, line_no, key)?,
            (section, key) => {
                return Err(bad(
                    line_no,
                    format!("unknown key `{key}` in section `[{section}]`"),
                ))
            }
        }
    }

    let kind = kind.ok_or_else(|| bad(0, "missing required key `kind` in [experiment]"))?;
    cfg.kind = kind;
    if !seeds_set {
        cfg.seeds = vec![0];
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidParam("seeds must be nonempty".into()));
    }
    if cfg.train.batch_size == 0 || cfg.train.dataset_size == 0 {
        return Err(Error::InvalidParam("train sizes must be >= 1".into()));
    }
    if cfg.train.batch_size > cfg.train.dataset_size {
        return Err(Error::InvalidParam(
            "batch_size cannot exceed dataset_size".into(),
        ));
    }
    if cfg.model.latent_dim == 0 || cfg.model.hidden_width == 0 {
        return Err(Error::InvalidParam("model dims must be >= 1".into()));
    }
    if cfg.bound.latent_dim > cfg.bound.obs_dim {
        return Err(Error::InvalidParam(
            "bound check needs latent_dim <= obs_dim".into(),
        ));
    }
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips.
    let s = format!("{v}");
    if s.parse::<f64>() == Ok(v) {
        s
    } else {
        format!("{v:.17e}")
    }
}

fn fmt_list_f64(vs: &[f64]) -> String {
    vs.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

fn fmt_list_usize(vs: &[usize]) -> String {
    vs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Canonical text form; `parse_config(serialize_config(c))` equals `c`.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    out.push_str("[experiment]\n");
    out.push_str(&format!("kind = {}\n", cfg.kind.name()));
    out.push_str(&format!(
        "seeds = {}\n",
        cfg.seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    if let Some(dir) = &cfg.out_dir {
        out.push_str(&format!("out_dir = {dir}\n"));
    }
    out.push_str("\n[env]\n");
    out.push_str(&format!("state_dim = {}\n", cfg.env.state_dim));
    out.push_str(&format!("action_dim = {}\n", cfg.env.action_dim));
    out.push_str(&format!("b_scale = {}\n", fmt_f64(cfg.env.b_scale)));
    out.push_str(&format!(
        "process_noise = {}\n",
        fmt_f64(cfg.env.process_noise)
    ));
    out.push_str(&format!("n_distractors = {}\n", cfg.env.n_distractors));
    out.push_str(&format!(
        "distractor_std = {}\n",
        fmt_f64(cfg.env.distractor_std)
    ));
    out.push_str(&format!(
        "action_bound = {}\n",
        fmt_f64(cfg.env.action_bound)
    ));
    out.push_str(&format!("state_bound = {}\n", fmt_f64(cfg.env.state_bound)));
    out.push_str(&format!("init_range = {}\n", fmt_f64(cfg.env.init_range)));
    out.push_str("\n[model]\n");
    out.push_str(&format!("latent_dim = {}\n", cfg.model.latent_dim));
    out.push_str(&format!("hidden_width = {}\n", cfg.model.hidden_width));
    out.push_str(&format!("hidden_layers = {}\n", cfg.model.hidden_layers));
    out.push_str("\n[train]\n");
    out.push_str(&format!("steps = {}\n", cfg.train.steps));
    out.push_str(&format!("batch_size = {}\n", cfg.train.batch_size));
    out.push_str(&format!("dataset_size = {}\n", cfg.train.dataset_size));
    out.push_str(&format!("lr = {}\n", fmt_f64(cfg.train.lr)));
    out.push_str(&format!("lr_final = {}\n", fmt_f64(cfg.train.lr_final)));
    out.push_str(&format!(
        "regularizer_weight = {}\n",
        fmt_f64(cfg.train.regularizer_weight)
    ));
    out.push_str(&format!("probe_size = {}\n", cfg.train.probe_size));
    out.push_str(&format!("log_every = {}\n", cfg.train.log_every));
    out.push_str("\n[codec]\n");
    out.push_str(&format!("trials = {}\n", cfg.codec.trials));
    out.push_str(&format!("k_tilde = {}\n", fmt_f64(cfg.codec.k_tilde)));
    out.push_str(&format!(
        "eps_tilde_list = {}\n",
        fmt_list_f64(&cfg.codec.eps_tilde_list)
    ));
    out.push_str(&format!("t_list = {}\n", fmt_list_usize(&cfg.codec.t_list)));
    out.push_str(&format!("d_list = {}\n", fmt_list_usize(&cfg.codec.d_list)));
    out.push_str(&format!("m = {}\n", cfg.codec.m));
    out.push_str("\n[bound]\n");
    out.push_str(&format!("latent_dim = {}\n", cfg.bound.latent_dim));
    out.push_str(&format!("obs_dim = {}\n", cfg.bound.obs_dim));
    out.push_str(&format!("batches = {}\n", cfg.bound.batches));
    out.push_str(&format!("batch_size = {}\n", cfg.bound.batch_size));
    out.push_str("\n[planner]\n");
    out.push_str(&format!("kind = {}\n", cfg.planner.kind));
    out.push_str(&format!("horizon = {}\n", cfg.planner.horizon));
    out.push_str(&format!("population = {}\n", cfg.planner.population));
    out.push_str(&format!("elites = {}\n", cfg.planner.elites));
    out.push_str(&format!("iterations = {}\n", cfg.planner.iterations));
    out.push_str(&format!("lambda = {}\n", fmt_f64(cfg.planner.lambda)));
    out.push_str(&format!("gamma = {}\n", fmt_f64(cfg.planner.gamma)));
    out.push_str(&format!(
        "mppi_noise_std = {}\n",
        fmt_f64(cfg.planner.mppi_noise_std)
    ));
    out.push_str(&format!("steps = {}\n", cfg.planner.steps));
    out.push_str("\n[dream]\n");
    out.push_str(&format!("iterations = {}\n", cfg.dream.iterations));
    out.push_str(&format!("rollouts = {}\n", cfg.dream.rollouts));
    out.push_str(&format!("horizon = {}\n", cfg.dream.horizon));
    out.push_str(&format!("lr = {}\n", fmt_f64(cfg.dream.lr)));
    out.push_str(&format!("sigma_init = {}\n", fmt_f64(cfg.dream.sigma_init)));
    out.push_str(&format!(
        "sigma_final = {}\n",
        fmt_f64(cfg.dream.sigma_final)
    ));
    out.push_str(&format!("eval_episodes = {}\n", cfg.dream.eval_episodes));
    out.push_str(&format!("eval_horizon = {}\n", cfg.dream.eval_horizon));
    out.push_str(&format!("start_beliefs = {}\n", cfg.dream.start_beliefs));
    out
}
