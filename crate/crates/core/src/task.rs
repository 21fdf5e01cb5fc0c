//! Synthetic latent-interpretation worlds with exactly computable oracles.
//!
//! An input is a short token sequence whose first position carries a "cue"
//! token. The interpretation prior p(z|x) and the emission p(y|z,x) are
//! lookup tables keyed by the cue, so the label mixture, latent ambiguity,
//! true uncertainty, and Bayes risk are all exact enumerations. Ambiguity
//! is injected by giving a controlled fraction of cues a multi-support
//! prior; domain shift is a disjoint surface vocabulary with shared cue
//! semantics.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{entropy, Dist};
use crate::rngs::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Factual,
    Ambiguous,
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
    ShiftedTest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: TaskFamily,
    pub train_size: usize,
    pub valid_size: usize,
    pub test_size: usize,
    pub shifted_test_size: usize,
    /// Fraction of cues given an ambiguous (multi-interpretation) prior.
    pub rho: f64,
    /// Target latent ambiguity A(x) in nats for ambiguous cues.
    pub ambiguity_level: f64,
    /// Width of the per-cue ambiguity range: each ambiguous cue draws its
    /// target uniformly from [ambiguity_level − spread, ambiguity_level],
    /// so failure probability varies across the ambiguous subset. 0 gives
    /// every ambiguous cue exactly ambiguity_level.
    pub ambiguity_spread: f64,
    /// Prior support size for ambiguous cues (1, 2 or 4).
    pub interpretations_per_ambiguous: usize,
    pub num_labels: usize,
    pub num_cues: usize,
    pub seq_len: usize,
    pub deterministic_emission: bool,
    /// Uniform label-noise weight mixed into emissions when not deterministic.
    pub emission_noise: f64,
}

impl TaskSpec {
    pub fn family(family: TaskFamily) -> Self {
        // Factual keeps a small ambiguous fraction: real factual benchmarks
        // contain some genuinely underspecified items, and the conflicting
        // label signal they carry is what the alignment losses act on.
        let rho = match family {
            TaskFamily::Factual => 0.08,
            TaskFamily::Ambiguous => 0.4,
            TaskFamily::Shifted => 0.15,
        };
        Self {
            family,
            train_size: 1024,
            valid_size: 256,
            test_size: 512,
            shifted_test_size: 512,
            rho,
            ambiguity_level: std::f64::consts::LN_2,
            ambiguity_spread: 0.45,
            interpretations_per_ambiguous: 2,
            num_labels: 4,
            num_cues: 192,
            seq_len: 8,
            deterministic_emission: true,
            emission_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Contract(format!("rho {} outside [0,1]", self.rho)));
        }
        if self.train_size == 0 || self.valid_size == 0 || self.test_size == 0 {
            return Err(Error::Contract("split sizes must be >= 1".into()));
        }
        if !(4..=32).contains(&self.seq_len) {
            return Err(Error::Contract(format!("seq_len {} outside 4..=32", self.seq_len)));
        }
        if self.num_labels < 2 {
            return Err(Error::Contract("need num_labels >= 2".into()));
        }
        let m = self.interpretations_per_ambiguous;
        if !(m >= 1 && m <= self.num_labels) {
            return Err(Error::Contract(
                "interpretations_per_ambiguous must be in 1..=num_labels".into(),
            ));
        }
        if self.ambiguity_level < 0.0 || self.ambiguity_level > (m.max(1) as f64).ln() + 1e-12 {
            return Err(Error::Contract(format!(
                "ambiguity_level {} unreachable with support {m}",
                self.ambiguity_level
            )));
        }
        if self.ambiguity_spread < 0.0 || self.ambiguity_spread > self.ambiguity_level + 1e-12 {
            return Err(Error::Contract(format!(
                "ambiguity_spread {} outside [0, ambiguity_level]",
                self.ambiguity_spread
            )));
        }
        Ok(())
    }
}

/// One sampled example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    #[serde(rename = "z")]
    pub latent_z: usize,
    #[serde(rename = "y")]
    pub label_y: usize,
    pub split: Split,
}

/// Exact oracle quantities for one input.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub p_z_given_x: Dist,
    pub p_y_given_x: Dist,
    pub ambiguity_a: f64,
    pub true_uncertainty_u: f64,
    pub eta: f64,
    pub bayes_risk: f64,
}

/// A fully-specified generative world realizing the latent-mixture model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    pub vocab_size: usize,
    pub num_interpretations: usize,
    pub num_labels: usize,
    /// Tokens [0, cue_tokens) are cue tokens; priors/emissions index by cue.
    pub cue_tokens: usize,
    pub priors: Vec<Vec<f64>>,
    /// emissions[cue][z] is a Dist over labels.
    pub emissions: Vec<Vec<Vec<f64>>>,
    pub equivalence_classes: Vec<Vec<usize>>,
    pub noise_tokens: Vec<usize>,
    pub content_train: Vec<usize>,
    pub content_shifted: Vec<usize>,
    pub ambiguous_cues: Vec<bool>,
    pub seq_len: usize,
    pub seed: u64,
}

/// Geometric weights over `m` atoms whose entropy equals `target` nats.
///
/// Bisection on the tilt parameter; t = 0 is uniform (entropy ln m).
fn tilted_prior(m: usize, target: f64) -> Vec<f64> {
    assert!(m >= 1);
    if m == 1 {
        return vec![1.0];
    }
    let ent = |t: f64| -> f64 {
        let w: Vec<f64> = (0..m).map(|i| (-t * i as f64).exp()).collect();
        let z: f64 = w.iter().sum();
        w.iter().map(|&x| x / z).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum()
    };
    let max_h = (m as f64).ln();
    let target = target.clamp(0.0, max_h);
    if (target - max_h).abs() < 1e-12 {
        return vec![1.0 / m as f64; m];
    }
    let (mut lo, mut hi) = (0.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ent(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let w: Vec<f64> = (0..m).map(|i| (-t * i as f64).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|&x| x / z).collect()
}

/// Deterministic world construction from (spec, seed).
pub fn build_world(spec: &TaskSpec, seed: u64) -> Result<World> {
    spec.validate()?;
    let mut rng = crate::rngs::stream(seed, "world");

    let num_cues = spec.num_cues;
    let num_z = spec.interpretations_per_ambiguous.max(2);
    let k = spec.num_labels;

    let class_size = 4;
    let n_content_classes = 24;
    let n_content = n_content_classes * class_size;
    let n_noise = 16;
    let n_shifted = n_content;

    let content_start = num_cues;
    let noise_start = content_start + n_content;
    let shifted_start = noise_start + n_noise;
    let vocab_size = shifted_start + n_shifted;

    let content_train: Vec<usize> = (content_start..noise_start).collect();
    let noise_tokens: Vec<usize> = (noise_start..shifted_start).collect();
    let content_shifted: Vec<usize> = (shifted_start..vocab_size).collect();

    // Partition: cues and noise tokens are singleton classes; content
    // tokens (both regions) form synonym classes of fixed size.
    let mut equivalence_classes: Vec<Vec<usize>> = Vec::new();
    for t in 0..num_cues {
        equivalence_classes.push(vec![t]);
    }
    for chunk in content_train.chunks(class_size) {
        equivalence_classes.push(chunk.to_vec());
    }
    for &t in &noise_tokens {
        equivalence_classes.push(vec![t]);
    }
    for chunk in content_shifted.chunks(class_size) {
        equivalence_classes.push(chunk.to_vec());
    }

    let n_ambiguous = (spec.rho * num_cues as f64).round() as usize;
    let mut cue_order: Vec<usize> = (0..num_cues).collect();
    cue_order.shuffle(&mut rng);
    let mut ambiguous_cues = vec![false; num_cues];
    for &c in cue_order.iter().take(n_ambiguous) {
        ambiguous_cues[c] = true;
    }

    let m = spec.interpretations_per_ambiguous;

    let mut priors = Vec::with_capacity(num_cues);
    let mut emissions = Vec::with_capacity(num_cues);
    for c in 0..num_cues {
        let mut prior = vec![0.0; num_z];
        let mut emission = vec![vec![1.0 / k as f64; k]; num_z];
        if ambiguous_cues[c] {
            let target = spec.ambiguity_level - rng.gen::<f64>() * spec.ambiguity_spread;
            let ambiguous_weights = tilted_prior(m, target.max(0.0));
            // Support of size m on random distinct interpretations, mapped
            // to distinct labels so the mixture has Bayes risk > 0.
            let mut zs: Vec<usize> = (0..num_z).collect();
            zs.shuffle(&mut rng);
            let mut labels: Vec<usize> = (0..k).collect();
            labels.shuffle(&mut rng);
            for (slot, &z) in zs.iter().take(m).enumerate() {
                prior[z] = ambiguous_weights[slot];
                emission[z] = emission_dist(labels[slot], k, spec)?;
            }
        } else {
            let z = rng.gen_range(0..num_z);
            prior[z] = 1.0;
            let label = rng.gen_range(0..k);
            emission[z] = emission_dist(label, k, spec)?;
        }
        priors.push(prior);
        emissions.push(emission);
    }

    Ok(World {
        vocab_size,
        num_interpretations: num_z,
        num_labels: k,
        cue_tokens: num_cues,
        priors,
        emissions,
        equivalence_classes,
        noise_tokens,
        content_train,
        content_shifted,
        ambiguous_cues,
        seq_len: spec.seq_len,
        seed,
    })
}

fn emission_dist(label: usize, k: usize, spec: &TaskSpec) -> Result<Vec<f64>> {
    if spec.deterministic_emission {
        Ok(Dist::point_mass(label, k)?.as_slice().to_vec())
    } else {
        let noise = spec.emission_noise;
        let mut p = vec![noise / k as f64; k];
        p[label] += 1.0 - noise;
        Ok(p)
    }
}

impl World {
    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence".into()));
        }
        for &t in tokens {
            if t >= self.vocab_size {
                return Err(Error::OutOfVocab {
                    token: t,
                    vocab_size: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    pub fn is_cue(&self, token: usize) -> bool {
        token < self.cue_tokens
    }

    /// Interpretation prior p(z|x). Total: a non-cue leading token maps to
    /// the degenerate single-interpretation prior.
    pub fn interpretation_prior(&self, tokens: &[usize]) -> Result<Dist> {
        self.check_tokens(tokens)?;
        if self.is_cue(tokens[0]) {
            Dist::new(self.priors[tokens[0]].clone())
        } else {
            Dist::point_mass(0, self.num_interpretations)
        }
    }

    /// Emission p(y|z,x).
    pub fn emission(&self, z: usize, tokens: &[usize]) -> Result<Dist> {
        self.check_tokens(tokens)?;
        if z >= self.num_interpretations {
            return Err(Error::Contract(format!("z {z} out of range")));
        }
        if self.is_cue(tokens[0]) {
            Dist::new(self.emissions[tokens[0]][z].clone())
        } else {
            Dist::uniform(self.num_labels)
        }
    }

    /// Exact oracle quantities at `tokens`, by direct mixture enumeration.
    pub fn ground_truth(&self, tokens: &[usize]) -> Result<GroundTruth> {
        let p_z = self.interpretation_prior(tokens)?;
        let mut p_y = vec![0.0; self.num_labels];
        for z in 0..self.num_interpretations {
            let pz = p_z.get(z);
            if pz == 0.0 {
                continue;
            }
            let em = self.emission(z, tokens)?;
            for y in 0..self.num_labels {
                p_y[y] += pz * em.get(y);
            }
        }
        let p_y = Dist::new(p_y)?;
        let ambiguity_a = entropy(&p_z);
        let true_uncertainty_u = entropy(&p_y);
        let eta = (true_uncertainty_u - ambiguity_a).abs();
        let bayes_risk = 1.0 - p_y.as_slice().iter().cloned().fold(f64::MIN, f64::max);
        Ok(GroundTruth {
            p_z_given_x: p_z,
            p_y_given_x: p_y,
            ambiguity_a,
            true_uncertainty_u,
            eta,
            bayes_risk,
        })
    }

    /// Chain-rule decomposition terms for the identity
    /// U*(x) = A(x) + E_z[H(Y|z,x)] - H(Z|Y,x), by exact enumeration.
    pub fn chain_rule_terms(&self, tokens: &[usize]) -> Result<(f64, f64)> {
        let p_z = self.interpretation_prior(tokens)?;
        let gt = self.ground_truth(tokens)?;
        let mut mean_h_y_given_z = 0.0;
        // joint[z][y] = p(z|x) p(y|z,x)
        let mut joint = vec![vec![0.0; self.num_labels]; self.num_interpretations];
        for z in 0..self.num_interpretations {
            let pz = p_z.get(z);
            if pz == 0.0 {
                continue;
            }
            let em = self.emission(z, tokens)?;
            mean_h_y_given_z += pz * entropy(&em);
            for y in 0..self.num_labels {
                joint[z][y] = pz * em.get(y);
            }
        }
        let mut h_z_given_y = 0.0;
        for y in 0..self.num_labels {
            let py = gt.p_y_given_x.get(y);
            if py == 0.0 {
                continue;
            }
            for z in 0..self.num_interpretations {
                let pzy = joint[z][y];
                if pzy > 0.0 {
                    h_z_given_y += pzy * (py / pzy).ln();
                }
            }
        }
        Ok((mean_h_y_given_z, h_z_given_y))
    }

    /// Samples one token sequence: a cue at position 0 followed by content
    /// tokens from the given region.
    pub fn sample_tokens(&self, split: Split, rng: &mut Stream) -> Vec<usize> {
        let region = match split {
            Split::ShiftedTest => &self.content_shifted,
            _ => &self.content_train,
        };
        let mut tokens = Vec::with_capacity(self.seq_len);
        tokens.push(rng.gen_range(0..self.cue_tokens));
        for _ in 1..self.seq_len {
            tokens.push(region[rng.gen_range(0..region.len())]);
        }
        tokens
    }

    /// Samples latent z then label y for the given tokens.
    pub fn sample_outcome(&self, tokens: &[usize], rng: &mut Stream) -> Result<(usize, usize)> {
        let p_z = self.interpretation_prior(tokens)?;
        let z = sample_index(p_z.as_slice(), rng);
        let em = self.emission(z, tokens)?;
        let y = sample_index(em.as_slice(), rng);
        Ok((z, y))
    }
}

pub fn sample_index(probs: &[f64], rng: &mut Stream) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Samples the full dataset: sizes per split, shifted_test drawn from the
/// held-out vocabulary region.
pub fn sample_dataset(world: &World, spec: &TaskSpec, rng: &mut Stream) -> Result<Vec<Example>> {
    spec.validate()?;
    let plan = [
        (Split::Train, spec.train_size),
        (Split::Valid, spec.valid_size),
        (Split::Test, spec.test_size),
        (Split::ShiftedTest, spec.shifted_test_size),
    ];
    let mut out = Vec::new();
    for (split, size) in plan {
        for _ in 0..size {
            let tokens = world.sample_tokens(split, rng);
            let (z, y) = world.sample_outcome(&tokens, rng)?;
            out.push(Example {
                tokens,
                latent_z: z,
                label_y: y,
                split,
            });
        }
    }
    Ok(out)
}

/// Positive part of (Bayes risk - model risk).
pub fn kappa(ground: &GroundTruth, model_risk: f64) -> f64 {
    (ground.bayes_risk - model_risk).max(0.0)
}
