use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FlowConfig, RadianceConfig};
use crate::integrate::{IntegrationMode, DEFAULT_ATOL, DEFAULT_RTOL, DEFAULT_STEP_BUDGET};
use crate::losses::LossWeights;

/// Every hyperparameter of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub rays_per_batch: usize,
    pub consistency_points_per_batch: usize,
    pub correspondences_per_batch: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_steps: u64,
    pub samples_per_ray: usize,
    pub eval_samples_per_ray: usize,
    /// Cap on empty-space flow points per ray.
    pub empty_space_k: usize,
    pub weights: LossWeights,
    /// Inference-time integration; training always unrolls fixed RK4.
    pub integration: IntegrationMode,
    pub radiance: RadianceConfig,
    pub flow: FlowConfig,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            warmup_steps: 2000,
            total_steps: 5000,
            rays_per_batch: 256,
            consistency_points_per_batch: 128,
            correspondences_per_batch: 64,
            base_lr: 1e-3,
            decay_factor: 0.1,
            decay_steps: 40_000,
            samples_per_ray: 64,
            eval_samples_per_ray: 128,
            empty_space_k: 16,
            weights: LossWeights::default(),
            integration: IntegrationMode::adaptive(),
            radiance: RadianceConfig::default(),
            flow: FlowConfig::default(),
            checkpoint_interval: 1000,
            log_interval: 50,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

impl TrainConfig {
    /// Eight-layer radiance and six-layer flow networks at the batch sizes
    /// of a GPU-scale run.
    pub fn full_size() -> Self {
        Self {
            warmup_steps: 5000,
            total_steps: 20_000,
            rays_per_batch: 1024,
            consistency_points_per_batch: 256,
            correspondences_per_batch: 256,
            radiance: RadianceConfig::full_size(),
            flow: FlowConfig::full_size(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.total_steps == 0 || self.warmup_steps >= self.total_steps {
            return err("need 0 <= warmup_steps < total_steps");
        }
        if self.rays_per_batch == 0
            || self.consistency_points_per_batch == 0
            || self.correspondences_per_batch == 0
            || self.samples_per_ray == 0
            || self.eval_samples_per_ray == 0
        {
            return err("batch sizes and sample counts must be at least 1");
        }
        if !(self.base_lr > 0.0) || !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) || self.decay_steps == 0 {
            return err("need base_lr > 0, 0 < decay_factor <= 1, decay_steps >= 1");
        }
        if self.checkpoint_interval == 0 || self.log_interval == 0 {
            return err("intervals must be at least 1");
        }
        let w = &self.weights;
        if [w.alpha, w.beta, w.corr_weight, w.specular_l2, w.flow_weight, w.acc_weight]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return err("loss weights must be finite and non-negative");
        }
        Ok(())
    }

    /// Parses `key = value` lines with `#` comments on top of the defaults.
    ///
    /// `model` and `loss_preset` are applied before any other key, so
    /// explicit keys always override a preset.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::default();
        for (k, v) in &pairs {
            match k.as_str() {
                "model" => {
                    cfg = match v.as_str() {
                        "desk" => Self::default(),
                        "full" => Self::full_size(),
                        _ => return Err(Error::Config(format!("unknown model '{v}'"))),
                    }
                }
                "loss_preset" => {
                    cfg.weights = LossWeights::preset(v)
                        .ok_or_else(|| Error::Config(format!("unknown loss preset '{v}'")))?
                }
                _ => {}
            }
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (rtol, atol, budget) = match self.integration {
            IntegrationMode::AdaptiveRk45 { rtol, atol, step_budget } => (rtol, atol, step_budget),
            IntegrationMode::FixedRk4 { .. } => (DEFAULT_RTOL, DEFAULT_ATOL, DEFAULT_STEP_BUDGET),
        };
        match key {
            "model" | "loss_preset" => {}
            "seed" => self.seed = parse(key, v)?,
            "warmup_steps" => self.warmup_steps = parse(key, v)?,
            "total_steps" => self.total_steps = parse(key, v)?,
            "rays_per_batch" => self.rays_per_batch = parse(key, v)?,
            "consistency_points_per_batch" => self.consistency_points_per_batch = parse(key, v)?,
            "correspondences_per_batch" => self.correspondences_per_batch = parse(key, v)?,
            "base_lr" => self.base_lr = parse(key, v)?,
            "decay_factor" => self.decay_factor = parse(key, v)?,
            "decay_steps" => self.decay_steps = parse(key, v)?,
            "samples_per_ray" => self.samples_per_ray = parse(key, v)?,
            "eval_samples_per_ray" => self.eval_samples_per_ray = parse(key, v)?,
            "empty_space_k" => self.empty_space_k = parse(key, v)?,
            "alpha" => self.weights.alpha = parse(key, v)?,
            "beta" => self.weights.beta = parse(key, v)?,
            "corr_weight" => self.weights.corr_weight = parse(key, v)?,
            "specular_l2" => self.weights.specular_l2 = parse(key, v)?,
            "flow_weight" => self.weights.flow_weight = parse(key, v)?,
            "acc_weight" => self.weights.acc_weight = parse(key, v)?,
            "integration_mode" => {
                self.integration = match v {
                    "adaptive_rk45" => IntegrationMode::AdaptiveRk45 { rtol, atol, step_budget: budget },
                    _ => match v.strip_prefix("fixed_rk4:") {
                        Some(n) => IntegrationMode::FixedRk4 { step_count: parse(key, n)? },
                        None => return Err(Error::Config(format!("unknown integration mode '{v}'"))),
                    },
                }
            }
            "integration_rtol" => {
                self.integration = IntegrationMode::AdaptiveRk45 { rtol: parse(key, v)?, atol, step_budget: budget }
            }
            "integration_atol" => {
                self.integration = IntegrationMode::AdaptiveRk45 { rtol, atol: parse(key, v)?, step_budget: budget }
            }
            "integration_step_budget" => {
                self.integration = IntegrationMode::AdaptiveRk45 { rtol, atol, step_budget: parse(key, v)? }
            }
            "radiance_depth" => self.radiance.depth = parse(key, v)?,
            "radiance_width" => self.radiance.width = parse(key, v)?,
            "radiance_skip_layer" => {
                self.radiance.skip_layer = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "radiance_specular_width" => self.radiance.specular_width = parse(key, v)?,
            "pos_freqs" => self.radiance.pos_freqs = parse(key, v)?,
            "dir_freqs" => self.radiance.dir_freqs = parse(key, v)?,
            "flow_depth" => self.flow.depth = parse(key, v)?,
            "flow_width" => self.flow.width = parse(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "log_interval" => self.log_interval = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Renders the config in the format [`TrainConfig::parse`] reads.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let mut line = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("seed", &self.seed);
        line("warmup_steps", &self.warmup_steps);
        line("total_steps", &self.total_steps);
        line("rays_per_batch", &self.rays_per_batch);
        line("consistency_points_per_batch", &self.consistency_points_per_batch);
        line("correspondences_per_batch", &self.correspondences_per_batch);
        line("base_lr", &self.base_lr);
        line("decay_factor", &self.decay_factor);
        line("decay_steps", &self.decay_steps);
        line("samples_per_ray", &self.samples_per_ray);
        line("eval_samples_per_ray", &self.eval_samples_per_ray);
        line("empty_space_k", &self.empty_space_k);
        line("alpha", &w.alpha);
        line("beta", &w.beta);
        line("corr_weight", &w.corr_weight);
        line("specular_l2", &w.specular_l2);
        line("flow_weight", &w.flow_weight);
        line("acc_weight", &w.acc_weight);
        match self.integration {
            IntegrationMode::AdaptiveRk45 { rtol, atol, step_budget } => {
                line("integration_mode", &"adaptive_rk45");
                line("integration_rtol", &rtol);
                line("integration_atol", &atol);
                line("integration_step_budget", &step_budget);
            }
            IntegrationMode::FixedRk4 { step_count } => {
                line("integration_mode", &format!("fixed_rk4:{step_count}"));
            }
        }
        line("radiance_depth", &self.radiance.depth);
        line("radiance_width", &self.radiance.width);
        match self.radiance.skip_layer {
            Some(l) => line("radiance_skip_layer", &l),
            None => line("radiance_skip_layer", &"none"),
        }
        line("radiance_specular_width", &self.radiance.specular_width);
        line("pos_freqs", &self.radiance.pos_freqs);
        line("dir_freqs", &self.radiance.dir_freqs);
        line("flow_depth", &self.flow.depth);
        line("flow_width", &self.flow.width);
        line("checkpoint_interval", &self.checkpoint_interval);
        line("log_interval", &self.log_interval);
        s
    }
}
