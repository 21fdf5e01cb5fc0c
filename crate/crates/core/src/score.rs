//! SUA estimation and abstention: sensitivity under sampled perturbations,
//! the score (sensitivity minus weighted entropy), the population alignment
//! risk, the operational ambiguity proxy, and threshold-based inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, predict_label, ModelParams};
use crate::perturb::{gen_paraphrase, sample_perturbations, PerturbConfig, Perturbation};
use crate::prob::{divergence, entropy, Dist, DivergenceKind, SmoothingPolicy};
use crate::rngs::Stream;
use crate::task::{sample_index, World};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SuaConfig {
    pub lambda: f64,
    pub divergence: DivergenceKind,
    pub k: usize,
    /// Abstention threshold; abstain strictly above tau.
    pub tau: f64,
}

impl Default for SuaConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            divergence: DivergenceKind::Js,
            k: 4,
            tau: 0.0,
        }
    }
}

impl SuaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Contract(format!("lambda {} must be > 0", self.lambda)));
        }
        if self.k < 1 {
            return Err(Error::Contract("K must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuaEstimate {
    pub sensitivity_hat: f64,
    pub entropy: f64,
    pub score: f64,
    pub k_used: usize,
    pub per_perturbation_divergences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Answer(usize),
    Abstain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstentionOutcome {
    pub decision: Decision,
    pub diagnostics: SuaEstimate,
}

/// Mean divergence between the base output and each perturbed output.
pub fn sensitivity_hat(
    params: &ModelParams,
    tokens: &[usize],
    perturbations: &[Perturbation],
    kind: DivergenceKind,
) -> Result<(f64, Vec<f64>)> {
    if perturbations.is_empty() {
        return Err(Error::EmptyInput("perturbation list".into()));
    }
    let (base, _) = forward(params, tokens)?;
    let policy = SmoothingPolicy::default();
    let mut divs = Vec::with_capacity(perturbations.len());
    for p in perturbations {
        let (d, _) = forward(params, &p.tokens)?;
        divs.push(divergence(kind, &base, &d, policy)?);
    }
    let mean = divs.iter().sum::<f64>() / divs.len() as f64;
    Ok((mean, divs))
}

/// score = sensitivity - lambda * entropy.
pub fn sua_score(est_sensitivity: f64, entropy: f64, lambda: f64) -> f64 {
    est_sensitivity - lambda * entropy
}

/// Mean positive part of a list of scores.
pub fn sua_risk(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("score list".into()));
    }
    Ok(scores.iter().map(|&s| s.max(0.0)).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMode {
    Resample,
    Paraphrase,
}

/// Entropy of the empirical label histogram, under resampled outputs or
/// predictions on paraphrased inputs. Paraphrase mode is the default
/// elsewhere: the resample proxy collapses for near-deterministic models.
pub fn ambiguity_proxy(
    params: &ModelParams,
    world: &World,
    tokens: &[usize],
    k_samples: usize,
    rng: &mut Stream,
    mode: ProxyMode,
) -> Result<f64> {
    if k_samples < 2 {
        return Err(Error::Contract("K_samples must be >= 2".into()));
    }
    let mut counts = vec![0usize; params.num_labels];
    match mode {
        ProxyMode::Resample => {
            let (d, _) = forward(params, tokens)?;
            for _ in 0..k_samples {
                counts[sample_index(d.as_slice(), rng)] += 1;
            }
        }
        ProxyMode::Paraphrase => {
            let config = PerturbConfig::default();
            for _ in 0..k_samples {
                let p = gen_paraphrase(world, tokens, &config, rng)?;
                let (d, _) = forward(params, &p.tokens)?;
                counts[predict_label(&d)] += 1;
            }
        }
    }
    let hist = Dist::from_weights(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>())?;
    Ok(entropy(&hist))
}

/// Computes a full SUA estimate from freshly sampled perturbations.
pub fn estimate(
    params: &ModelParams,
    world: &World,
    tokens: &[usize],
    config: &SuaConfig,
    perturb_config: &PerturbConfig,
    rng: &mut Stream,
) -> Result<SuaEstimate> {
    config.validate()?;
    let pc = PerturbConfig {
        k: config.k,
        ..*perturb_config
    };
    let perturbations = sample_perturbations(world, params, tokens, &pc, rng)?;
    let (sens, divs) = sensitivity_hat(params, tokens, &perturbations, config.divergence)?;
    let (d, _) = forward(params, tokens)?;
    let h = entropy(&d);
    Ok(SuaEstimate {
        sensitivity_hat: sens,
        entropy: h,
        score: sua_score(sens, h, config.lambda),
        k_used: perturbations.len(),
        per_perturbation_divergences: divs,
    })
}

/// Threshold inference: answer the argmax label unless score > tau.
pub fn infer_with_abstention(
    params: &ModelParams,
    world: &World,
    tokens: &[usize],
    config: &SuaConfig,
    perturb_config: &PerturbConfig,
    rng: &mut Stream,
) -> Result<AbstentionOutcome> {
    let diagnostics = estimate(params, world, tokens, config, perturb_config, rng)?;
    let decision = if diagnostics.score > config.tau {
        Decision::Abstain
    } else {
        let (d, _) = forward(params, tokens)?;
        Decision::Answer(predict_label(&d))
    };
    Ok(AbstentionOutcome {
        decision,
        diagnostics,
    })
}
