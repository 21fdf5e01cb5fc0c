//! Metrics (ECE, AUROC, selective and robust accuracy), baseline failure
//! scores, threshold calibration, and the empirical verification harness
//! for the risk and calibration bounds.
//!
//! All failure scores are oriented so that larger means more suspect.
//! Worst-case risks inside the bound checks are approximated by a search
//! over in-budget candidates; small residual violations attributable to
//! the search underestimating the true sup are logged, not failed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, model_risk, predict_label, ModelParams};
use crate::perturb::{sample_perturbations, PerturbConfig};
use crate::prob::{entropy, js, smooth, tv, Dist, DivergenceKind};
use crate::rngs::Stream;
use crate::score::{sensitivity_hat, sua_score, SuaConfig};
use crate::task::{kappa, Example, World};
use crate::train::TempScaler;

/// Slack below which a bound is considered satisfied.
const PASS_TOL: f64 = 1e-6;
/// Excess above which a bound violation is counted rather than logged.
const HARD_EXCESS: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub method: String,
    pub accuracy: f64,
    pub robust_accuracy: f64,
    pub ece: f64,
    pub auroc: f64,
    /// coverage -> selective accuracy at that coverage.
    pub selective_accuracy_at: Vec<(f64, f64)>,
}

/// Maps entropy to a confidence in [0, 1]: g(h) = 1 - h / ln k.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfidenceMap {
    pub h_max: f64,
}

impl ConfidenceMap {
    pub fn for_labels(k: usize) -> Self {
        Self {
            h_max: (k as f64).ln(),
        }
    }

    pub fn g(&self, h: f64) -> f64 {
        (1.0 - h / self.h_max).clamp(0.0, 1.0)
    }
}

/// Ambiguity-collapse thresholds: latent ambiguity above `alpha` with
/// predictive entropy below `beta`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CollapseThresholds {
    pub alpha: f64,
    pub beta: f64,
}

impl CollapseThresholds {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > beta && beta >= 0.0) {
            return Err(Error::Contract(format!(
                "need alpha > beta >= 0, got alpha {alpha}, beta {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

/// Constants for the risk bounds: 0-1 loss with total variation gives a
/// Lipschitz constant of 1; psi(h) = 1 - e^{-h}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundConfig {
    pub l_d: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { l_d: 1.0 }
    }
}

impl BoundConfig {
    pub fn psi(&self, h: f64) -> f64 {
        1.0 - (-h).exp()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundRow {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    /// Context-dependent extra (coverage for the selective bound, 0 elsewhere).
    pub aux: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinRow {
    pub mean_sensitivity: f64,
    pub mean_entropy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: String,
    pub rows: Vec<BoundRow>,
    /// Fraction of counted rows whose excess lhs - rhs is >= the hard cutoff.
    pub violation_rate: f64,
    /// Rows exceeding the pass tolerance but below the hard cutoff.
    pub logged_violations: usize,
    /// Inputs excluded before checking (e.g. failing the lambda condition).
    pub excluded: usize,
    /// Per-bin statistics (calibration bound only).
    pub bins: Vec<BinRow>,
    pub extras: BTreeMap<String, f64>,
}

impl BoundReport {
    fn new(theorem: &str) -> Self {
        Self {
            theorem: theorem.to_string(),
            rows: Vec::new(),
            violation_rate: 0.0,
            logged_violations: 0,
            excluded: 0,
            bins: Vec::new(),
            extras: BTreeMap::new(),
        }
    }

    fn finalize(&mut self) {
        let hard = self
            .rows
            .iter()
            .filter(|r| r.lhs - r.rhs >= HARD_EXCESS)
            .count();
        self.logged_violations = self
            .rows
            .iter()
            .filter(|r| {
                let excess = r.lhs - r.rhs;
                excess > PASS_TOL && excess < HARD_EXCESS
            })
            .count();
        self.violation_rate = if self.rows.is_empty() {
            0.0
        } else {
            hard as f64 / self.rows.len() as f64
        };
    }
}

/// Expected calibration error with equal-width bins on [0, 1]; the final
/// bin is right-inclusive.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.is_empty() || confidences.len() != correct.len() {
        return Err(Error::Contract("need equal-length non-empty inputs".into()));
    }
    if bins == 0 {
        return Err(Error::Contract("need at least one bin".into()));
    }
    if confidences.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(Error::Contract("confidences must lie in [0, 1]".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut acc_sum = vec![0.0; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += c;
        acc_sum[b] += if ok { 1.0 } else { 0.0 };
    }
    let n = confidences.len() as f64;
    let mut out = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let m = count[b] as f64;
            out += (m / n) * (acc_sum[b] / m - conf_sum[b] / m).abs();
        }
    }
    Ok(out)
}

/// Probability that a random failure outranks a random success; ties count
/// one half (midrank convention).
pub fn auroc(scores: &[f64], is_failure: &[bool]) -> Result<f64> {
    if scores.is_empty() || scores.len() != is_failure.len() {
        return Err(Error::Contract("need equal-length non-empty inputs".into()));
    }
    let n_pos = is_failure.iter().filter(|&&f| f).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUROC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank shared across the tie group
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(is_failure)
        .filter(|(_, &f)| f)
        .map(|(&r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Accuracy over the fraction `coverage` of inputs with the lowest scores.
/// Ties at the cutoff are broken by input order.
pub fn selective_accuracy(scores: &[f64], correct: &[bool], coverage: f64) -> Result<f64> {
    if scores.is_empty() || scores.len() != correct.len() {
        return Err(Error::Contract("need equal-length non-empty inputs".into()));
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::Contract(format!("coverage {coverage} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let keep = ((coverage * scores.len() as f64).ceil() as usize).max(1);
    let hits = order
        .iter()
        .take(keep)
        .filter(|&&i| correct[i])
        .count();
    Ok(hits as f64 / keep as f64)
}

/// Accuracy under one perturbation draw per example.
pub fn robust_accuracy(
    params: &ModelParams,
    world: &World,
    examples: &[Example],
    config: &PerturbConfig,
    rng: &mut Stream,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("evaluation split".into()));
    }
    let pc = PerturbConfig { k: 1, ..*config };
    let mut correct = 0usize;
    for ex in examples {
        let p = &sample_perturbations(world, params, &ex.tokens, &pc, rng)?[0];
        let (d, _) = forward(params, &p.tokens)?;
        if predict_label(&d) == ex.label_y {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

pub fn clean_accuracy(params: &ModelParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("evaluation split".into()));
    }
    let mut correct = 0usize;
    for ex in examples {
        let (d, _) = forward(params, &ex.tokens)?;
        if predict_label(&d) == ex.label_y {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// All four failure scores for one input, each oriented so larger = more
/// suspect.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaselineScores {
    pub entropy: f64,
    pub self_consistency: f64,
    pub temp_scaled_conf: f64,
    pub sua: f64,
}

pub fn baseline_scores(
    params: &ModelParams,
    world: &World,
    tokens: &[usize],
    scaler: &TempScaler,
    sua_config: &SuaConfig,
    perturb_config: &PerturbConfig,
    consistency_samples: usize,
    rng: &mut Stream,
) -> Result<BaselineScores> {
    let (d, _) = forward(params, tokens)?;
    let h = entropy(&d);

    // agreement rate = modal frequency over sampled labels
    let mut counts = vec![0usize; params.num_labels];
    for _ in 0..consistency_samples.max(1) {
        counts[crate::task::sample_index(d.as_slice(), rng)] += 1;
    }
    let agreement = *counts.iter().max().unwrap() as f64 / consistency_samples.max(1) as f64;

    let mut scaled = params.clone();
    scaled.temperature = scaler.temperature;
    let (ds, _) = forward(&scaled, tokens)?;
    let max_conf = ds.as_slice().iter().cloned().fold(f64::MIN, f64::max);

    let est = crate::score::estimate(params, world, tokens, sua_config, perturb_config, rng)?;
    Ok(BaselineScores {
        entropy: h,
        self_consistency: 1.0 - agreement,
        temp_scaled_conf: 1.0 - max_conf,
        sua: est.score,
    })
}

/// Empirical coverage-quantile of validation scores: answering when
/// score <= tau covers approximately `coverage` of the data. Lower
/// interpolation: the ceil(c n)-th smallest score.
pub fn calibrate_tau(scores: &[f64], coverage: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("score list".into()));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::Contract(format!("coverage {coverage} outside (0, 1)")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((coverage * sorted.len() as f64).ceil() as usize).max(1) - 1;
    Ok(sorted[idx])
}

fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with midrank tie handling.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Contract("need two equal-length lists of >= 2 values".into()));
    }
    let ra = midranks(a);
    let rb = midranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean) * (x - mean);
        vb += (y - mean) * (y - mean);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Undefined("constant ranking has no correlation".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

struct BoundInput {
    base_risk: f64,
    worst_risk: f64,
    sua: f64,
    kappa: f64,
    lambda_ok: bool,
}

/// Shared per-input legwork for the pointwise and selective risk bounds:
/// TV sensitivity, entropy, SUA score, exact kappa, and a searched
/// worst-case risk over the Hamming ball.
fn bound_inputs(
    params: &ModelParams,
    world: &World,
    examples: &[Example],
    bound: &BoundConfig,
    sua_config: &SuaConfig,
    perturb_config: &PerturbConfig,
    rng: &mut Stream,
) -> Result<Vec<BoundInput>> {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let _ = bound;
    let pc = PerturbConfig {
        k: sua_config.k,
        ..*perturb_config
    };
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let (d, _) = forward(params, &ex.tokens)?;
        let base_risk = model_risk(&d);
        let perturbations = sample_perturbations(world, params, &ex.tokens, &pc, rng)?;
        let (sens, _) = sensitivity_hat(params, &ex.tokens, &perturbations, DivergenceKind::Tv)?;
        let h = entropy(&d);
        let score = sua_score(sens, h, sua_config.lambda);
        let lambda_ok = sua_config.lambda * h >= crate::eval::BoundConfig::default().psi(h) - 1e-12;

        // worst-case risk search: the K sampled perturbations plus a fresh
        // in-budget candidate sweep
        let mut worst = base_risk;
        for p in &perturbations {
            let (dq, _) = forward(params, &p.tokens)?;
            worst = worst.max(model_risk(&dq));
        }
        let pz = world.interpretation_prior(&ex.tokens)?;
        for _ in 0..pc.adv_search_budget {
            let n_edits = rng.gen_range(1..=pc.epsilon);
            let mut cand = ex.tokens.clone();
            let mut positions: Vec<usize> = (0..cand.len()).collect();
            positions.shuffle(rng);
            for &i in positions.iter().take(n_edits) {
                cand[i] = rng.gen_range(0..world.vocab_size);
            }
            let qz = world.interpretation_prior(&cand)?;
            if tv(&pz, &qz)? > pc.semantic_tv_threshold {
                continue;
            }
            let (dq, _) = forward(params, &cand)?;
            worst = worst.max(model_risk(&dq));
        }
        let gt = world.ground_truth(&ex.tokens)?;
        out.push(BoundInput {
            base_risk,
            worst_risk: worst,
            sua: score,
            kappa: kappa(&gt, base_risk),
            lambda_ok,
        });
    }
    Ok(out)
}

/// Pointwise robustness bound: searched worst-case risk against
/// R(x) + L_D * (SUA(x))_+ + kappa(x). The positive part keeps the bound
/// meaningful where the score is negative (a constant model has score
/// -lambda*H but unchanged risk). Inputs failing the lambda condition
/// lambda * H >= psi(H) are excluded and counted.
pub fn verify_theorem1(
    params: &ModelParams,
    world: &World,
    examples: &[Example],
    bound: &BoundConfig,
    sua_config: &SuaConfig,
    perturb_config: &PerturbConfig,
    rng: &mut Stream,
) -> Result<BoundReport> {
    let inputs = bound_inputs(params, world, examples, bound, sua_config, perturb_config, rng)?;
    let mut report = BoundReport::new("theorem1");
    for inp in &inputs {
        if !inp.lambda_ok {
            report.excluded += 1;
            continue;
        }
        let rhs = inp.base_risk + bound.l_d * inp.sua.max(0.0) + inp.kappa;
        report.rows.push(BoundRow {
            lhs: inp.worst_risk,
            rhs,
            slack: rhs - inp.worst_risk,
            aux: 0.0,
        });
    }
    report.finalize();
    Ok(report)
}

/// Ambiguity-collapse gap: on inputs with latent ambiguity above alpha and
/// predictive entropy below beta, |H - U*| >= alpha - beta - eta. This is
/// an identity-level consequence; any violation is an implementation bug.
pub fn verify_lemma1(
    world: &World,
    params: &ModelParams,
    thresholds: &CollapseThresholds,
    examples: &[Example],
) -> Result<BoundReport> {
    CollapseThresholds::new(thresholds.alpha, thresholds.beta)?;
    let mut report = BoundReport::new("lemma1");
    for ex in examples {
        let gt = world.ground_truth(&ex.tokens)?;
        let (d, _) = forward(params, &ex.tokens)?;
        let h = entropy(&d);
        if gt.ambiguity_a > thresholds.alpha && h < thresholds.beta {
            let required = thresholds.alpha - thresholds.beta - gt.eta;
            let observed = (h - gt.true_uncertainty_u).abs();
            report.rows.push(BoundRow {
                lhs: required,
                rhs: observed,
                slack: observed - required,
                aux: 0.0,
            });
        }
    }
    // identity-level: any negative slack beyond float noise is a violation
    let hard = report.rows.iter().filter(|r| r.slack < -1e-9).count();
    report.violation_rate = if report.rows.is_empty() {
        0.0
    } else {
        hard as f64 / report.rows.len() as f64
    };
    report.extras.insert("qualifying_inputs".into(), report.rows.len() as f64);
    Ok(report)
}

fn random_dist(k: usize, rng: &mut Stream) -> Dist {
    use rand::Rng;
    let w: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
    Dist::from_weights(&w).unwrap()
}

/// Entropy-stability tension: smoothing toward uniform contracts JS by at
/// least (1 - gamma) and never decreases 0-1 model risk. The sharper
/// (1 - gamma)^2 ratio is reported, never asserted.
pub fn verify_lemma2(rng: &mut Stream) -> Result<BoundReport> {
    use rand::Rng;
    let mut report = BoundReport::new("lemma2");
    let triples = 10_000;
    let mut max_sq_ratio = 0.0f64;
    let mut hard = 0usize;
    for _ in 0..triples {
        let k = rng.gen_range(2..=6);
        let p = random_dist(k, rng);
        let q = random_dist(k, rng);
        let gamma: f64 = rng.gen();
        let base = js(&p, &q)?;
        let smoothed = js(&smooth(&p, gamma)?, &smooth(&q, gamma)?)?;
        if smoothed > (1.0 - gamma) * base + 1e-12 {
            hard += 1;
        }
        if model_risk(&smooth(&p, gamma)?) < model_risk(&p) - 1e-12 {
            hard += 1;
        }
        if base > 1e-9 {
            let denom = (1.0 - gamma) * (1.0 - gamma) * base;
            if denom > 1e-12 {
                max_sq_ratio = max_sq_ratio.max(smoothed / denom);
            }
        }
    }
    report.violation_rate = hard as f64 / triples as f64;
    report.extras.insert("triples".into(), triples as f64);
    report
        .extras
        .insert("max_ratio_vs_one_minus_gamma_sq".into(), max_sq_ratio);
    Ok(report)
}

/// Selective risk bound over a threshold grid: worst-case risk on the
/// covered set against mean covered risk + L_D * max(tau, 0) + mean
/// covered kappa (the positive part matches the pointwise bound's use of
/// (SUA)_+). Coverage is reported per row.
pub fn verify_prop1(
    params: &ModelParams,
    world: &World,
    examples: &[Example],
    taus: &[f64],
    bound: &BoundConfig,
    sua_config: &SuaConfig,
    perturb_config: &PerturbConfig,
    rng: &mut Stream,
) -> Result<BoundReport> {
    let inputs = bound_inputs(params, world, examples, bound, sua_config, perturb_config, rng)?;
    let kept: Vec<&BoundInput> = inputs.iter().filter(|i| i.lambda_ok).collect();
    let mut report = BoundReport::new("prop1");
    report.excluded = inputs.len() - kept.len();
    if kept.is_empty() {
        return Ok(report);
    }
    for &tau in taus {
        let covered: Vec<&&BoundInput> = kept.iter().filter(|i| i.sua <= tau).collect();
        let coverage = covered.len() as f64 / kept.len() as f64;
        if covered.is_empty() {
            report.extras.insert(format!("empty_coverage_tau_{tau}"), 0.0);
            continue;
        }
        let n = covered.len() as f64;
        let lhs = covered.iter().map(|i| i.worst_risk).sum::<f64>() / n;
        let mean_risk = covered.iter().map(|i| i.base_risk).sum::<f64>() / n;
        let mean_kappa = covered.iter().map(|i| i.kappa).sum::<f64>() / n;
        let rhs = mean_risk + bound.l_d * tau.max(0.0) + mean_kappa;
        report.rows.push(BoundRow {
            lhs,
            rhs,
            slack: rhs - lhs,
            aux: coverage,
        });
    }
    report.finalize();
    Ok(report)
}

/// Calibration-bound reporting: measured ECE next to the per-bin positive
/// parts (S_b - lambda H_b)_+ averaged over bins. The bin slack term is
/// unmeasurable, so nothing is asserted beyond the reporting schema.
pub fn verify_theorem2(
    params: &ModelParams,
    world: &World,
    examples: &[Example],
    cmap: &ConfidenceMap,
    bins: usize,
    sua_config: &SuaConfig,
    perturb_config: &PerturbConfig,
    rng: &mut Stream,
) -> Result<BoundReport> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("evaluation split".into()));
    }
    let pc = PerturbConfig {
        k: sua_config.k,
        ..*perturb_config
    };
    let mut confidences = Vec::with_capacity(examples.len());
    let mut correct = Vec::with_capacity(examples.len());
    let mut sens_of = Vec::with_capacity(examples.len());
    let mut ent_of = Vec::with_capacity(examples.len());
    for ex in examples {
        let (d, _) = forward(params, &ex.tokens)?;
        let h = entropy(&d);
        let perturbations = sample_perturbations(world, params, &ex.tokens, &pc, rng)?;
        let (sens, _) =
            sensitivity_hat(params, &ex.tokens, &perturbations, sua_config.divergence)?;
        confidences.push(cmap.g(h));
        correct.push(predict_label(&d) == ex.label_y);
        sens_of.push(sens);
        ent_of.push(h);
    }
    let measured_ece = ece(&confidences, &correct, bins)?;

    let mut report = BoundReport::new("theorem2");
    let mut bound_value = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<usize> = (0..examples.len())
            .filter(|&i| {
                let c = confidences[i];
                (c >= lo && c < hi) || (b == bins - 1 && c == hi)
            })
            .collect();
        let (s_bar, h_bar) = if members.is_empty() {
            (0.0, 0.0)
        } else {
            let n = members.len() as f64;
            (
                members.iter().map(|&i| sens_of[i]).sum::<f64>() / n,
                members.iter().map(|&i| ent_of[i]).sum::<f64>() / n,
            )
        };
        if !members.is_empty() {
            bound_value += (s_bar - sua_config.lambda * h_bar).max(0.0) / bins as f64;
        }
        report.bins.push(BinRow {
            mean_sensitivity: s_bar,
            mean_entropy: h_bar,
            count: members.len(),
        });
    }
    report.extras.insert("measured_ece".into(), measured_ece);
    report.extras.insert("bound_value_at_zero_slack".into(), bound_value);
    Ok(report)
}
