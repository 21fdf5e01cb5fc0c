//! The eight CLI commands. Each builds its world/model deterministically
//! from (config, seed), writes artifacts through a RunContext, and returns
//! structured results so integration tests can assert on them directly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sua_core::eval::{
    auroc, calibrate_tau, clean_accuracy, ece, robust_accuracy, selective_accuracy, spearman,
    verify_lemma1, verify_lemma2, verify_prop1, verify_theorem1, verify_theorem2, BoundConfig,
    BoundReport, CollapseThresholds, ConfidenceMap,
};
use sua_core::model::{forward, predict_label, ModelParams};
use sua_core::perturb::{sample_perturbations, PerturbConfig};
use sua_core::prob::entropy;
use sua_core::rngs;
use sua_core::score::{self, sensitivity_hat, sua_score, SuaConfig};
use sua_core::task::{build_world, sample_dataset, Example, Split, TaskFamily, World};
use sua_core::train::{adversarial_train, fit_temperature, train, Method, TempScaler, TrainHistory};

use crate::config::RunConfig;
use crate::manifest::{csv, num, RunContext};
use crate::Failure;

pub fn prepare(cfg: &RunConfig) -> Result<(World, Vec<Example>), Failure> {
    let world = build_world(&cfg.task, cfg.seed)?;
    let mut rng = rngs::stream(cfg.seed, "data");
    let data = sample_dataset(&world, &cfg.task, &mut rng)?;
    Ok((world, data))
}

pub fn split(data: &[Example], which: Split) -> Vec<Example> {
    data.iter().filter(|e| e.split == which).cloned().collect()
}

/// The split a task family is evaluated on: the shifted family tests on the
/// held-out vocabulary region, everything else on the in-domain test split.
pub fn eval_split(cfg: &RunConfig) -> Split {
    match cfg.task.family {
        TaskFamily::Shifted => Split::ShiftedTest,
        _ => Split::Test,
    }
}

/// The failure/abstention score a method is evaluated with: baseline
/// methods rank by predictive entropy (their canonical uncertainty signal);
/// alignment-trained methods rank by the SUA score.
pub fn method_predictor<'a>(method: Method, scored: &'a ScoredSplit) -> &'a [f64] {
    match method {
        Method::Standard | Method::Adversarial => &scored.entropy,
        _ => &scored.sua,
    }
}

pub struct TrainedCell {
    pub world: World,
    pub data: Vec<Example>,
    pub params: ModelParams,
    pub history: TrainHistory,
    pub scaler: TempScaler,
}

pub fn train_cell(cfg: &RunConfig) -> Result<TrainedCell, Failure> {
    let (world, data) = prepare(cfg)?;
    let (params, history) = match cfg.train.method {
        Method::Adversarial => adversarial_train(&world, &data, &cfg.train)?,
        _ => train(&world, &data, &cfg.train)?,
    };
    let valid = split(&data, Split::Valid);
    let scaler = fit_temperature(&params, &valid)?;
    Ok(TrainedCell {
        world,
        data,
        params,
        history,
        scaler,
    })
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<(), Failure> {
    let (world, data) = prepare(cfg)?;
    let mut ctx = RunContext::new(cfg)?;
    let world_json = serde_json::to_string_pretty(&world).expect("world serializes");
    ctx.write("world.json", &world_json)?;
    let mut lines = String::new();
    for ex in &data {
        lines.push_str(&serde_json::to_string(ex).expect("example serializes"));
        lines.push('\n');
    }
    ctx.write("dataset.jsonl", &lines)?;
    let ambiguous = world.ambiguous_cues.iter().filter(|&&a| a).count();
    let stats = serde_json::json!({
        "num_examples": data.len(),
        "ambiguous_fraction": ambiguous as f64 / world.cue_tokens as f64,
        "vocab_size": world.vocab_size,
    });
    ctx.write("world_stats.json", &serde_json::to_string_pretty(&stats).unwrap())?;
    ctx.finish()?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let cell = train_cell(cfg)?;
    let mut ctx = RunContext::new(cfg)?;
    let checkpoint = serde_json::to_string(&cell.params).expect("params serialize");
    ctx.write("checkpoint.json", &checkpoint)?;
    let rows: Vec<String> = (0..cell.history.total_loss.len())
        .map(|e| {
            format!(
                "{e},{},{},{},{},{}",
                num(cell.history.task_loss[e]),
                num(cell.history.cons_loss[e]),
                num(cell.history.ent_loss[e]),
                num(cell.history.total_loss[e]),
                num(cell.history.train_accuracy[e]),
            )
        })
        .collect();
    let history = csv(
        "epoch,task_loss,cons_loss,ent_loss,total_loss,train_accuracy",
        &rows,
    );
    let path = ctx.write("history.csv", &history)?;
    ctx.write(
        "temperature.json",
        &serde_json::to_string(&cell.scaler).unwrap(),
    )?;
    ctx.finish()?;
    Ok(path)
}

/// Per-input evaluation state shared by several commands.
pub struct ScoredSplit {
    pub correct: Vec<bool>,
    pub confidence: Vec<f64>,
    pub entropy: Vec<f64>,
    pub sua: Vec<f64>,
}

pub fn score_split(
    params: &ModelParams,
    world: &World,
    examples: &[Example],
    sua: &SuaConfig,
    perturb: &PerturbConfig,
    rng: &mut rngs::Stream,
) -> Result<ScoredSplit, Failure> {
    let cmap = ConfidenceMap::for_labels(world.num_labels);
    let mut out = ScoredSplit {
        correct: Vec::with_capacity(examples.len()),
        confidence: Vec::with_capacity(examples.len()),
        entropy: Vec::with_capacity(examples.len()),
        sua: Vec::with_capacity(examples.len()),
    };
    for ex in examples {
        let (d, _) = forward(params, &ex.tokens)?;
        let h = entropy(&d);
        let est = score::estimate(params, world, &ex.tokens, sua, perturb, rng)?;
        out.correct.push(predict_label(&d) == ex.label_y);
        out.confidence.push(cmap.g(h));
        out.entropy.push(h);
        out.sua.push(est.score);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalMetrics {
    pub task: String,
    pub method: String,
    pub seed: u64,
    pub accuracy: f64,
    pub robust_accuracy: f64,
    pub ece: f64,
    pub auroc: f64,
    pub selective: Vec<(f64, f64)>,
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalMetrics, Failure> {
    let cell = train_cell(cfg)?;
    let test = split(&cell.data, eval_split(cfg));
    let mut rng = rngs::stream(cfg.seed, "eval");
    let scored = score_split(&cell.params, &cell.world, &test, &cfg.sua, &cfg.perturb, &mut rng)?;

    let accuracy = clean_accuracy(&cell.params, &test)?;
    let robust = robust_accuracy(&cell.params, &cell.world, &test, &cfg.perturb, &mut rng)?;
    let ece_v = ece(&scored.confidence, &scored.correct, 15)?;
    let failures: Vec<bool> = scored.correct.iter().map(|&c| !c).collect();
    let predictor = method_predictor(cfg.train.method, &scored);
    let auroc_v = auroc(predictor, &failures)?;
    let coverages = [0.7, 0.8, 0.9];
    let selective: Vec<(f64, f64)> = coverages
        .iter()
        .map(|&c| Ok((c, selective_accuracy(predictor, &scored.correct, c)?)))
        .collect::<Result<_, sua_core::error::Error>>()?;

    let metrics = EvalMetrics {
        task: cfg.task_name.clone(),
        method: cfg.method_name().to_string(),
        seed: cfg.seed,
        accuracy,
        robust_accuracy: robust,
        ece: ece_v,
        auroc: auroc_v,
        selective: selective.clone(),
    };

    let mut ctx = RunContext::new(cfg)?;
    let row = format!(
        "{},{},{},{},{},{},{},{},{},{}",
        metrics.task,
        metrics.method,
        metrics.seed,
        num(accuracy),
        num(robust),
        num(ece_v),
        num(auroc_v),
        num(selective[0].1),
        num(selective[1].1),
        num(selective[2].1),
    );
    let body = csv(
        "task,method,seed,accuracy,robust_accuracy,ece,auroc,sel_acc_70,sel_acc_80,sel_acc_90",
        &[row],
    );
    let rel = format!("{}/{}/metrics.csv", cfg.task_name, cfg.method_name());
    ctx.write(&rel, &body)?;
    ctx.finish()?;
    Ok(metrics)
}

pub fn cmd_score(cfg: &RunConfig) -> Result<(), Failure> {
    let cell = train_cell(cfg)?;
    let test = split(&cell.data, eval_split(cfg));
    let mut rng = rngs::stream(cfg.seed, "eval");
    let mut lines = String::new();
    for (i, ex) in test.iter().enumerate() {
        let est = score::estimate(&cell.params, &cell.world, &ex.tokens, &cfg.sua, &cfg.perturb, &mut rng)?;
        let row = serde_json::json!({
            "index": i,
            "sensitivity": est.sensitivity_hat,
            "entropy": est.entropy,
            "score": est.score,
            "k": est.k_used,
        });
        lines.push_str(&row.to_string());
        lines.push('\n');
    }
    let mut ctx = RunContext::new(cfg)?;
    ctx.write("scores.jsonl", &lines)?;
    ctx.finish()?;
    Ok(())
}

pub fn cmd_abstain(cfg: &RunConfig) -> Result<(), Failure> {
    let cell = train_cell(cfg)?;
    let valid = split(&cell.data, Split::Valid);
    let test = split(&cell.data, eval_split(cfg));
    let mut rng = rngs::stream(cfg.seed, "eval");
    let tau = match cfg.tau {
        Some(t) => t,
        None => {
            let scored = score_split(&cell.params, &cell.world, &valid, &cfg.sua, &cfg.perturb, &mut rng)?;
            calibrate_tau(&scored.sua, cfg.coverage)?
        }
    };
    let scored = score_split(&cell.params, &cell.world, &test, &cfg.sua, &cfg.perturb, &mut rng)?;
    let mut lines = String::new();
    let mut answered = 0usize;
    let mut answered_correct = 0usize;
    for i in 0..test.len() {
        let abstain = scored.sua[i] > tau;
        if !abstain {
            answered += 1;
            if scored.correct[i] {
                answered_correct += 1;
            }
        }
        let row = serde_json::json!({
            "index": i,
            "score": scored.sua[i],
            "decision": if abstain { "abstain" } else { "answer" },
            "correct": scored.correct[i],
        });
        lines.push_str(&row.to_string());
        lines.push('\n');
    }
    let mut ctx = RunContext::new(cfg)?;
    ctx.write("abstain.jsonl", &lines)?;
    let summary = serde_json::json!({
        "tau": tau,
        "target_coverage": cfg.coverage,
        "achieved_coverage": answered as f64 / test.len() as f64,
        "selective_accuracy": if answered > 0 {
            answered_correct as f64 / answered as f64
        } else {
            0.0
        },
    });
    ctx.write("abstain_summary.json", &serde_json::to_string_pretty(&summary).unwrap())?;
    ctx.finish()?;
    Ok(())
}

fn bound_rows(report: &BoundReport) -> Vec<String> {
    report
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            format!(
                "{},{},{},{},{},{}",
                report.theorem,
                i,
                num(r.lhs),
                num(r.rhs),
                num(r.slack),
                num(r.aux)
            )
        })
        .collect()
}

/// K-sensitivity sweep: prefix means of a shared K=64 perturbation draw,
/// rank-correlated against the full-draw oracle.
pub fn k_sweep(
    params: &ModelParams,
    world: &World,
    examples: &[Example],
    sua: &SuaConfig,
    perturb: &PerturbConfig,
    ks: &[usize],
    oracle_k: usize,
    rng: &mut rngs::Stream,
) -> Result<Vec<(usize, f64)>, Failure> {
    let pc = PerturbConfig {
        k: oracle_k,
        ..*perturb
    };
    let mut prefix_scores: Vec<Vec<f64>> = vec![Vec::new(); ks.len()];
    let mut oracle_scores = Vec::new();
    for ex in examples {
        let perturbations = sample_perturbations(world, params, &ex.tokens, &pc, rng)?;
        let (_, divs) = sensitivity_hat(params, &ex.tokens, &perturbations, sua.divergence)?;
        let (d, _) = forward(params, &ex.tokens)?;
        let h = entropy(&d);
        let mean = |k: usize| divs.iter().take(k).sum::<f64>() / k as f64;
        for (slot, &k) in ks.iter().enumerate() {
            prefix_scores[slot].push(sua_score(mean(k), h, sua.lambda));
        }
        oracle_scores.push(sua_score(mean(oracle_k), h, sua.lambda));
    }
    let mut out = Vec::new();
    for (slot, &k) in ks.iter().enumerate() {
        out.push((k, spearman(&prefix_scores[slot], &oracle_scores)?));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct VerifySummary {
    pub theorem1_violation_rate: f64,
    pub theorem1_logged: usize,
    pub theorem1_excluded: usize,
    pub lemma1_violation_rate: f64,
    pub lemma1_qualifying: usize,
    pub lemma2_violation_rate: f64,
    pub lemma2_max_sq_ratio: f64,
    pub prop1_violation_rate: f64,
    pub theorem2_measured_ece: f64,
    pub theorem2_bound_value: f64,
    pub spearman_by_k: Vec<(usize, f64)>,
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<(), Failure> {
    let cell = train_cell(cfg)?;
    let test = split(&cell.data, eval_split(cfg));
    let bound = BoundConfig { l_d: cfg.bounds.l_d };
    let mut rng = rngs::stream(cfg.seed, "eval");

    let thm1 = verify_theorem1(&cell.params, &cell.world, &test, &bound, &cfg.sua, &cfg.perturb, &mut rng)?;
    let thresholds = CollapseThresholds::new(cfg.bounds.alpha_collapse, cfg.bounds.beta_collapse)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let lem1 = verify_lemma1(&cell.world, &cell.params, &thresholds, &test)?;
    let lem2 = verify_lemma2(&mut rng)?;
    let prop1 = verify_prop1(
        &cell.params,
        &cell.world,
        &test,
        &cfg.bounds.tau_grid,
        &bound,
        &cfg.sua,
        &cfg.perturb,
        &mut rng,
    )?;
    let thm2 = verify_theorem2(
        &cell.params,
        &cell.world,
        &test,
        &ConfidenceMap::for_labels(cell.world.num_labels),
        15,
        &cfg.sua,
        &cfg.perturb,
        &mut rng,
    )?;
    let sweep_n = test.len().min(200);
    let sweep = k_sweep(
        &cell.params,
        &cell.world,
        &test[..sweep_n],
        &cfg.sua,
        &cfg.perturb,
        &[1, 2, 4, 8],
        64,
        &mut rng,
    )?;

    let mut rows = Vec::new();
    for report in [&thm1, &lem1, &prop1] {
        rows.extend(bound_rows(report));
    }
    let mut ctx = RunContext::new(cfg)?;
    ctx.write("bounds.csv", &csv("theorem,row,lhs,rhs,slack,aux", &rows))?;
    let bin_rows: Vec<String> = thm2
        .bins
        .iter()
        .enumerate()
        .map(|(b, r)| {
            format!(
                "{b},{},{},{}",
                num(r.mean_sensitivity),
                num(r.mean_entropy),
                r.count
            )
        })
        .collect();
    ctx.write(
        "calibration_bins.csv",
        &csv("bin,mean_sensitivity,mean_entropy,count", &bin_rows),
    )?;
    let sweep_rows: Vec<String> = sweep
        .iter()
        .map(|(k, s)| format!("{k},{}", num(*s)))
        .collect();
    ctx.write("k_sweep.csv", &csv("k,spearman_vs_k64", &sweep_rows))?;

    let summary = VerifySummary {
        theorem1_violation_rate: thm1.violation_rate,
        theorem1_logged: thm1.logged_violations,
        theorem1_excluded: thm1.excluded,
        lemma1_violation_rate: lem1.violation_rate,
        lemma1_qualifying: lem1.rows.len(),
        lemma2_violation_rate: lem2.violation_rate,
        lemma2_max_sq_ratio: lem2.extras["max_ratio_vs_one_minus_gamma_sq"],
        prop1_violation_rate: prop1.violation_rate,
        theorem2_measured_ece: thm2.extras["measured_ece"],
        theorem2_bound_value: thm2.extras["bound_value_at_zero_slack"],
        spearman_by_k: sweep,
    };
    ctx.write(
        "verify_summary.json",
        &serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    ctx.finish()?;

    let mut failures = Vec::new();
    if lem1.violation_rate != 0.0 {
        failures.push(format!("lemma1 violation rate {}", lem1.violation_rate));
    }
    if lem2.violation_rate != 0.0 {
        failures.push(format!("lemma2 violation rate {}", lem2.violation_rate));
    }
    if thm1.violation_rate > 0.01 {
        failures.push(format!("theorem1 violation rate {}", thm1.violation_rate));
    }
    if prop1.violation_rate > 0.01 {
        failures.push(format!("prop1 violation rate {}", prop1.violation_rate));
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(failures.join("; ")))
    }
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<(), Failure> {
    let cell = train_cell(cfg)?;
    let test = split(&cell.data, eval_split(cfg));
    let mut rng = rngs::stream(cfg.seed, "eval");

    // shared per-input sensitivity/entropy with an 8-perturbation draw
    let pc8 = PerturbConfig { k: 8, ..cfg.perturb };
    let mut divs_of = Vec::with_capacity(test.len());
    let mut h_of = Vec::with_capacity(test.len());
    let mut failures = Vec::with_capacity(test.len());
    for ex in &test {
        let ps = sample_perturbations(&cell.world, &cell.params, &ex.tokens, &pc8, &mut rng)?;
        let (_, divs) = sensitivity_hat(&cell.params, &ex.tokens, &ps, cfg.sua.divergence)?;
        let (d, _) = forward(&cell.params, &ex.tokens)?;
        divs_of.push(divs);
        h_of.push(entropy(&d));
        failures.push(predict_label(&d) != ex.label_y);
    }

    let score_with = |k: usize, lambda: f64| -> Vec<f64> {
        divs_of
            .iter()
            .zip(&h_of)
            .map(|(divs, &h)| {
                let s = divs.iter().take(k).sum::<f64>() / k as f64;
                sua_score(s, h, lambda)
            })
            .collect()
    };

    let mut ctx = RunContext::new(cfg)?;
    let lambda_rows: Vec<String> = [0.1, 0.5, 1.0, 2.0, 5.0]
        .iter()
        .map(|&l| {
            let scores = score_with(cfg.sua.k.min(8), l);
            let a = auroc(&scores, &failures).map_err(Failure::from)?;
            Ok(format!("{},{}", num(l), num(a)))
        })
        .collect::<Result<_, Failure>>()?;
    ctx.write("lambda_sweep.csv", &csv("lambda,auroc", &lambda_rows))?;

    let k_rows: Vec<String> = [1usize, 4, 8]
        .iter()
        .map(|&k| {
            let scores = score_with(k, cfg.sua.lambda);
            let a = auroc(&scores, &failures).map_err(Failure::from)?;
            Ok(format!("{k},{}", num(a)))
        })
        .collect::<Result<_, Failure>>()?;
    ctx.write("k_sweep.csv", &csv("k,auroc", &k_rows))?;

    let mixtures: [(&str, [f64; 3]); 3] = [
        ("default", cfg.perturb.weights),
        ("para_only", [1.0, 0.0, 0.0]),
        ("adv_only", [0.0, 0.0, 1.0]),
    ];
    let mut mixture_rows = Vec::new();
    for (name, weights) in mixtures {
        let pc = PerturbConfig {
            weights,
            ..cfg.perturb
        };
        let mut mrng = rngs::substream(cfg.seed, "ablate-mixture", mixture_rows.len() as u64);
        let mut scores = Vec::with_capacity(test.len());
        for ex in &test {
            let est = score::estimate(&cell.params, &cell.world, &ex.tokens, &cfg.sua, &pc, &mut mrng)?;
            scores.push(est.score);
        }
        let a = auroc(&scores, &failures)?;
        let rob = robust_accuracy(&cell.params, &cell.world, &test, &pc, &mut mrng)?;
        mixture_rows.push(format!("{name},{},{}", num(a), num(rob)));
    }
    ctx.write(
        "mixture_sweep.csv",
        &csv("mixture,auroc,robust_accuracy", &mixture_rows),
    )?;
    ctx.finish()?;
    Ok(())
}

fn find_metrics_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), Failure> {
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_metrics_files(&path, out)?;
        } else if path.file_name().map(|n| n == "metrics.csv").unwrap_or(false) {
            out.push(path);
        }
    }
    Ok(())
}

/// Aggregates every metrics.csv under the output root into one seed-averaged
/// table, one row per (task, method).
pub fn cmd_report(cfg: &RunConfig) -> Result<(), Failure> {
    let mut files = Vec::new();
    find_metrics_files(&cfg.out_dir, &mut files)?;
    if files.is_empty() {
        return Err(Failure::Config(format!(
            "no metrics.csv files under {}",
            cfg.out_dir.display()
        )));
    }
    // (task, method) -> (n, column sums)
    let mut groups: BTreeMap<(String, String), (usize, Vec<f64>)> = BTreeMap::new();
    for file in &files {
        let text = std::fs::read_to_string(file)?;
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 10 {
                return Err(Failure::Config(format!("malformed row in {}", file.display())));
            }
            let key = (fields[0].to_string(), fields[1].to_string());
            let values: Vec<f64> = fields[3..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| Failure::Config(format!("bad number in {}: {e}", file.display())))?;
            let entry = groups.entry(key).or_insert_with(|| (0, vec![0.0; 7]));
            entry.0 += 1;
            for (acc, v) in entry.1.iter_mut().zip(&values) {
                *acc += v;
            }
        }
    }
    let rows: Vec<String> = groups
        .iter()
        .map(|((task, method), (n, sums))| {
            let means: Vec<String> = sums.iter().map(|s| num(s / *n as f64)).collect();
            format!("{task},{method},{n},{}", means.join(","))
        })
        .collect();
    let body = csv(
        "task,method,seeds,accuracy,robust_accuracy,ece,auroc,sel_acc_70,sel_acc_80,sel_acc_90",
        &rows,
    );
    // aggregation over whatever runs exist: plain overwrite by design
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("report.csv"), body)?;
    Ok(())
}
