//! TOML run configuration with flat [task]/[train]/[perturb]/[sua]/[bounds]
//! sections. CLI flags override file values; everything has a default so a
//! bare invocation works.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sua_core::perturb::PerturbConfig;
use sua_core::score::SuaConfig;
use sua_core::task::{TaskFamily, TaskSpec};
use sua_core::train::{Method, TrainConfig};

use crate::{CommonArgs, Failure};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub task: TaskSection,
    pub train: TrainConfig,
    pub perturb: PerturbConfig,
    pub sua: SuaConfig,
    pub bounds: BoundsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSection {
    pub family: String,
    pub train_size: Option<usize>,
    pub valid_size: Option<usize>,
    pub test_size: Option<usize>,
    pub shifted_test_size: Option<usize>,
    pub rho: Option<f64>,
    pub ambiguity_level: Option<f64>,
    pub ambiguity_spread: Option<f64>,
    pub interpretations_per_ambiguous: Option<usize>,
    pub num_labels: Option<usize>,
    pub num_cues: Option<usize>,
    pub seq_len: Option<usize>,
    pub deterministic_emission: Option<bool>,
    pub emission_noise: Option<f64>,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            family: "factual".into(),
            train_size: None,
            valid_size: None,
            test_size: None,
            shifted_test_size: None,
            rho: None,
            ambiguity_level: None,
            ambiguity_spread: None,
            interpretations_per_ambiguous: None,
            num_labels: None,
            num_cues: None,
            seq_len: None,
            deterministic_emission: None,
            emission_noise: None,
        }
    }
}

pub fn parse_family(name: &str) -> Result<TaskFamily, Failure> {
    match name {
        "factual" => Ok(TaskFamily::Factual),
        "ambiguous" => Ok(TaskFamily::Ambiguous),
        "shifted" => Ok(TaskFamily::Shifted),
        other => Err(Failure::Config(format!("unknown task family '{other}'"))),
    }
}

pub fn parse_method(name: &str) -> Result<Method, Failure> {
    match name {
        "standard" => Ok(Method::Standard),
        "adversarial" => Ok(Method::Adversarial),
        "sua_tr" => Ok(Method::SuaTr),
        "sua_tr_minus_ent" => Ok(Method::SuaTrMinusEnt),
        "sua_tr_minus_cons" => Ok(Method::SuaTrMinusCons),
        other => Err(Failure::Config(format!("unknown method '{other}'"))),
    }
}

impl TaskSection {
    pub fn spec(&self, family_override: Option<&str>) -> Result<TaskSpec, Failure> {
        let family_name = family_override.unwrap_or(&self.family);
        let family = parse_family(family_name)?;
        let mut spec = TaskSpec::family(family);
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    spec.$field = v;
                }
            };
        }
        take!(train_size);
        take!(valid_size);
        take!(test_size);
        take!(shifted_test_size);
        take!(rho);
        take!(ambiguity_level);
        take!(ambiguity_spread);
        take!(interpretations_per_ambiguous);
        take!(num_labels);
        take!(num_cues);
        take!(seq_len);
        take!(deterministic_emission);
        take!(emission_noise);
        spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsSection {
    pub l_d: f64,
    /// Threshold grid for the selective risk bound.
    pub tau_grid: Vec<f64>,
    pub alpha_collapse: f64,
    pub beta_collapse: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            l_d: 1.0,
            tau_grid: vec![-0.5, -0.25, 0.0, 0.25, 0.5],
            alpha_collapse: std::f64::consts::LN_2 - 1e-6,
            beta_collapse: 0.1,
        }
    }
}

/// Fully-resolved configuration for one command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub task_name: String,
    pub task: TaskSpec,
    pub train: TrainConfig,
    pub sua: SuaConfig,
    pub perturb: PerturbConfig,
    pub bounds: BoundsSection,
    /// Excluded from the config hash: where a run is written must not
    /// change its identity.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub seed: u64,
    pub coverage: f64,
    pub tau: Option<f64>,
}

impl RunConfig {
    pub fn resolve(command: &str, args: &CommonArgs) -> Result<Self, Failure> {
        let file: FileConfig = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| Failure::Config(format!("bad config: {e}")))?
            }
            None => FileConfig::default(),
        };

        let task_name = args
            .task
            .clone()
            .unwrap_or_else(|| file.task.family.clone());
        let task = file.task.spec(args.task.as_deref())?;

        let mut train = file.train.clone();
        train.perturb = file.perturb;
        train.seed = args.seed;
        if let Some(m) = &args.method {
            train.method = parse_method(m)?;
        }
        if let Some(k) = args.k {
            train.k = k;
        }
        if let Some(l) = args.lambda {
            train.lambda = l;
        }
        train
            .validate()
            .map_err(|e| Failure::Config(e.to_string()))?;

        let mut sua = file.sua;
        if let Some(k) = args.k {
            sua.k = k;
        }
        if let Some(l) = args.lambda {
            sua.lambda = l;
        }
        if let Some(t) = args.tau {
            sua.tau = t;
        }
        sua.validate().map_err(|e| Failure::Config(e.to_string()))?;
        file.perturb
            .validate()
            .map_err(|e| Failure::Config(e.to_string()))?;

        let coverage = args.coverage.unwrap_or(0.8);
        if !(coverage > 0.0 && coverage <= 1.0) {
            return Err(Failure::Config(format!("coverage {coverage} outside (0, 1]")));
        }
        if file.bounds.l_d <= 0.0 || file.bounds.tau_grid.is_empty() {
            return Err(Failure::Config("bounds need l_d > 0 and a non-empty tau grid".into()));
        }

        Ok(Self {
            command: command.to_string(),
            task_name,
            task,
            train,
            sua,
            perturb: file.perturb,
            bounds: file.bounds,
            out_dir: args.out.clone(),
            seed: args.seed,
            coverage,
            tau: args.tau,
        })
    }

    pub fn method_name(&self) -> &'static str {
        self.train.method.name()
    }
}
