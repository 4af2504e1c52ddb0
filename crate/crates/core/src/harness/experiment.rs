//! The sequential optimization loop, run independently per seed.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{next_point, AcquisitionConfig, AcquisitionState, PolicyKind};
use crate::benchmarks::{lookup, TestFunction};
use crate::cmaes::{CmaConfig, SearchBox};
use crate::error::{Error, Result};
use crate::gp::{
    fit_hyperparams, Dataset, GpHyperParams, GpPosterior, HyperBounds, Normalizer,
    DEFAULT_FIT_BUDGET,
};
use crate::harness::external::{ExternalObjective, DEFAULT_TIMEOUT_MS};
use crate::harness::regret::{Observation, RegretTrace};

/// What to optimize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObjectiveSpec {
    /// A catalog function, by name.
    Builtin(String),
    /// A child process speaking the JSON-lines protocol.
    External {
        command: String,
        bounds: Vec<(f64, f64)>,
        /// Reference maximum used for regret.
        f_max: f64,
        #[serde(default = "default_external_name")]
        name: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_external_name() -> String {
    "external".into()
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl ObjectiveSpec {
    /// Display name used in result files.
    pub fn name(&self) -> Result<String> {
        match self {
            ObjectiveSpec::Builtin(name) => Ok(lookup(name)?.name.to_string()),
            ObjectiveSpec::External { name, .. } => Ok(name.clone()),
        }
    }

    pub fn bounds(&self) -> Result<SearchBox> {
        match self {
            ObjectiveSpec::Builtin(name) => Ok(lookup(name)?.bounds),
            ObjectiveSpec::External { bounds, .. } => SearchBox::from_pairs(bounds),
        }
    }

    pub fn f_max(&self) -> Result<f64> {
        match self {
            ObjectiveSpec::Builtin(name) => Ok(lookup(name)?.f_max),
            ObjectiveSpec::External { f_max, .. } => Ok(*f_max),
        }
    }

    fn open(&self) -> Result<Objective> {
        match self {
            ObjectiveSpec::Builtin(name) => Ok(Objective::Builtin(lookup(name)?)),
            ObjectiveSpec::External {
                command,
                timeout_ms,
                ..
            } => Ok(Objective::External(ExternalObjective::spawn(
                command,
                Duration::from_millis(*timeout_ms),
            )?)),
        }
    }
}

enum Objective {
    Builtin(TestFunction),
    External(ExternalObjective),
}

impl Objective {
    fn evaluate(&mut self, x: &[f64]) -> Result<f64> {
        match self {
            Objective::Builtin(f) => f.evaluate(x),
            Objective::External(child) => child.evaluate(x),
        }
    }
}

/// One experiment: a single objective and policy over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSpec,
    pub policy: PolicyKind,
    #[serde(default = "default_initial_points")]
    pub initial_points: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default = "default_fit_budget")]
    pub fit_budget: usize,
    /// Standard deviation of Gaussian noise added to each observation.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_initial_points() -> usize {
    3
}

fn default_steps() -> usize {
    40
}

fn default_seeds() -> Vec<u64> {
    (0..30).collect()
}

fn default_fit_budget() -> usize {
    DEFAULT_FIT_BUDGET
}

impl ExperimentConfig {
    pub fn new(objective: ObjectiveSpec, policy: PolicyKind) -> Self {
        Self {
            objective,
            policy,
            initial_points: default_initial_points(),
            steps: default_steps(),
            seeds: default_seeds(),
            acquisition: AcquisitionConfig::default(),
            fit_budget: default_fit_budget(),
            noise: 0.0,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.initial_points == 0 {
            return Err(Error::invalid("initial points must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::invalid(format!("noise must be nonnegative, got {}", self.noise)));
        }
        if self.policy.uses_max_samples() && self.acquisition.samples < 4 && self.policy != PolicyKind::Mes {
            return Err(Error::invalid(format!(
                "{} needs at least 4 posterior samples, got {}",
                self.policy, self.acquisition.samples
            )));
        }
        let acq = &self.acquisition;
        if acq.samples == 0 || acq.features == 0 {
            return Err(Error::invalid("samples and features must be positive"));
        }
        let min_budget = CmaConfig::default_population(self.objective.bounds()?.dim());
        if acq.sample_budget < min_budget || acq.acquisition_budget < min_budget {
            return Err(Error::invalid(format!(
                "CMA-ES budgets must be at least the population size {min_budget}"
            )));
        }
        self.objective.f_max()?;
        Ok(())
    }
}

/// Runs every seed, in parallel. A seed that fails keeps the observations
/// made so far and records the error; the others are unaffected.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RegretTrace>> {
    cfg.validate()?;
    Ok(cfg.seeds.par_iter().map(|&seed| run_seed(cfg, seed)).collect())
}

/// Runs one seed to completion or to its first failure.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> RegretTrace {
    let mut trace = RegretTrace {
        function: cfg.objective.name().unwrap_or_else(|_| "unknown".into()),
        policy: cfg.policy,
        seed,
        observations: Vec::new(),
        error: None,
    };
    if let Err(e) = drive(cfg, seed, &mut trace) {
        log::error!("{} / {} seed {seed}: {e}", trace.function, cfg.policy);
        trace.error = Some(e.to_string());
    }
    trace
}

fn drive(cfg: &ExperimentConfig, seed: u64, trace: &mut RegretTrace) -> Result<()> {
    let bounds = cfg.objective.bounds()?;
    let f_max = cfg.objective.f_max()?;
    let mut objective = cfg.objective.open()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::new(bounds.clone());
    let mut best = f64::NEG_INFINITY;

    let mut observe = |step: usize,
                       x: Vec<f64>,
                       started: Instant,
                       rng: &mut ChaCha8Rng,
                       data: &mut Dataset|
     -> Result<()> {
        let mut y = objective.evaluate(&x)?;
        if cfg.noise > 0.0 {
            y += cfg.noise * rng.sample::<f64, _>(StandardNormal);
        }
        best = best.max(y);
        data.push(x.clone(), y)?;
        trace.observations.push(Observation {
            step,
            x,
            y,
            regret: f_max - best,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    };

    for _ in 0..cfg.initial_points {
        let started = Instant::now();
        let x = bounds.sample_uniform(&mut rng);
        observe(0, x, started, &mut rng, &mut data)?;
    }

    let mut params: Option<GpHyperParams> = None;
    for step in 1..=cfg.steps {
        let started = Instant::now();
        let x = if cfg.policy.uses_model() {
            propose(cfg, step, &data, &mut params, &mut rng)?
        } else {
            bounds.sample_uniform(&mut rng)
        };
        observe(step, x, started, &mut rng, &mut data)?;
    }
    Ok(())
}

/// Refits the GP on normalized data and maximizes the acquisition.
fn propose(
    cfg: &ExperimentConfig,
    step: usize,
    data: &Dataset,
    params: &mut Option<GpHyperParams>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let normalizer = Normalizer::from_dataset(data);
    let unit = normalizer.normalize(data);
    let bounds = HyperBounds::for_dataset(&unit);
    let incumbent = params.unwrap_or_else(|| bounds.initial_guess());
    let fitted = fit_hyperparams(&unit, &incumbent, &bounds, cfg.fit_budget, rng)?;
    *params = Some(fitted);
    let gp = GpPosterior::new(unit, fitted)?;
    let state = AcquisitionState::prepare(cfg.policy, gp, step, &cfg.acquisition, rng)?;
    let cma = CmaConfig::with_budget(cfg.acquisition.acquisition_budget, 0);
    let u = next_point(cfg.policy, &state, &cma, rng)?;
    Ok(normalizer.from_unit(&u))
}
