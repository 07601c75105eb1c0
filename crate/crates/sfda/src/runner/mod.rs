//! The experiment driver behind the CLI: runs pretrain / select / adapt per
//! seed, writes the metrics, selection, and embedding CSVs plus
//! checkpoints, prints theory tables, and drives the two ablations.
//!
//! All output is deterministic: reruns with the same config produce
//! byte-identical files.

pub mod pca;

use crate::config::ExperimentConfig;
use crate::data::{Dataset, DomainPair, Standardizer};
use crate::error::SfdaError;
use crate::losses::{self, AdaptationWeights};
use crate::model::{ensemble_predict, init_model, ModelState};
use crate::pipeline::{
    adapt_target, evaluate, pretrain_source, save_checkpoint, select_model, selection_score,
    AdaptConfig, AdaptOutcome, PretrainOutcome,
};
use crate::report::{csv_line, fmt_g6};
use crate::theory::{
    disagreement_ratio_bruteforce, disagreement_ratio_exact, ratio_recurrence_check,
    rational_to_f64, BRUTE_FORCE_BOUND,
};
use crate::Result;
use pca::Pca;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

const MODEL_SEED_TAG: u64 = 0x4D4F_4445;

/// Everything one seed's training produced, before any files are written.
pub struct TrainedRun {
    pub seed: u64,
    pub pair: DomainPair,
    pub pretrain: PretrainOutcome,
    pub chosen_epoch: usize,
    pub selected_model: ModelState,
    pub adapt: AdaptOutcome,
    /// Target accuracy of the selected model before adaptation.
    pub source_only_target_acc: f64,
    /// Target accuracy after adaptation.
    pub adapted_target_acc: f64,
}

/// Pretrain, select, and adapt one seed without touching the filesystem.
pub fn train_once(config: &ExperimentConfig, seed: u64) -> Result<TrainedRun> {
    let raw_pair = config.build_data(seed)?;
    let (pair, _) = Standardizer::standardize_pair(&raw_pair);
    let model = init_model(
        config.generator_spec(pair.source.dim()),
        config.bank_spec(),
        seed ^ MODEL_SEED_TAG,
    )?;
    let pre_cfg = config.pretrain_config(pair.source.n())?;
    let pretrain = pretrain_source(model, &pair.source, &pre_cfg)?;
    let chosen_epoch = select_model(&pretrain.record)?;
    let selected_model = pretrain.epochs[chosen_epoch].snapshot.clone();
    let source_only_target_acc = evaluate(&selected_model, &pair.target)?.overall_accuracy;

    let adapt_cfg = config.adapt_config(pair.target.n())?;
    let adapt = adapt_target(
        selected_model.clone(),
        &pair.target_for_adaptation(),
        &adapt_cfg,
    )?;
    let adapted_target_acc = evaluate(&adapt.model, &pair.target)?.overall_accuracy;

    Ok(TrainedRun {
        seed,
        pair,
        pretrain,
        chosen_epoch,
        selected_model,
        adapt,
        source_only_target_acc,
        adapted_target_acc,
    })
}

fn write_file(path: &Path, content: &[u8]) -> Result<()> {
    fs::write(path, content).map_err(|e| SfdaError::io(path.display().to_string(), e))
}

fn metrics_header(c: usize) -> String {
    let mut fields: Vec<String> = vec![
        "phase".into(),
        "epoch".into(),
        "overall_acc_source".into(),
        "overall_acc_target".into(),
    ];
    for cls in 0..c {
        fields.push(format!("acc_class_{cls}"));
    }
    fields.extend(
        [
            "loss_cls",
            "loss_adv_min_pair",
            "loss_pair_tr",
            "loss_ent_c",
            "loss_ent_m",
            "loss_pseudo",
            "min_pair_discrepancy",
            "empirical_disagreement_source",
            "empirical_disagreement_target",
            "divergence_estimate",
        ]
        .map(String::from),
    );
    csv_line(&fields)
}

struct PhaseLosses {
    cls: f64,
    adv_min_pair: f64,
    pair_tr: f64,
    ent_c: f64,
    ent_m: f64,
    pseudo: f64,
    min_pair_discrepancy: f64,
}

fn metrics_row(
    phase: &str,
    epoch: usize,
    snapshot: &ModelState,
    pair: &DomainPair,
    losses_now: &PhaseLosses,
) -> Result<String> {
    let eval_s = evaluate(snapshot, &pair.source)?;
    let eval_t = evaluate(snapshot, &pair.target)?;
    let divergence = 2.0 * (eval_s.disagreement - eval_t.disagreement).abs();
    let mut fields: Vec<String> = vec![
        phase.to_string(),
        epoch.to_string(),
        fmt_g6(eval_s.overall_accuracy),
        fmt_g6(eval_t.overall_accuracy),
    ];
    for v in &eval_t.per_class {
        fields.push(fmt_g6(*v));
    }
    for v in [
        losses_now.cls,
        losses_now.adv_min_pair,
        losses_now.pair_tr,
        losses_now.ent_c,
        losses_now.ent_m,
        losses_now.pseudo,
        losses_now.min_pair_discrepancy,
        eval_s.disagreement,
        eval_t.disagreement,
        divergence,
    ] {
        fields.push(fmt_g6(v));
    }
    Ok(csv_line(&fields))
}

/// Full-set diagnostic losses of a snapshot on one dataset.
fn target_diagnostics(model: &ModelState, target: &Dataset) -> Result<(f64, f64, f64, f64)> {
    let out = model.forward(&target.x)?;
    Ok((
        losses::pair_trace_loss(&out),
        losses::conditional_entropy(&out),
        losses::marginal_entropy(&out),
        losses::pair_discrepancies(&out).min,
    ))
}

fn build_metrics_csv(run: &TrainedRun, pretrain_alpha_s: f64) -> Result<String> {
    let c = run.pair.source.c;
    let mut out = metrics_header(c);
    for (e, log) in run.pretrain.epochs.iter().enumerate() {
        let (pair_tr, ent_c, ent_m, _) = target_diagnostics(&log.snapshot, &run.pair.target)?;
        let row = PhaseLosses {
            cls: log.mean_cls_loss,
            adv_min_pair: pretrain_alpha_s * log.min_pair_disc,
            pair_tr,
            ent_c,
            ent_m,
            pseudo: 0.0,
            min_pair_discrepancy: log.min_pair_disc,
        };
        out.push_str(&metrics_row(
            "pretrain",
            e + 1,
            &log.snapshot,
            &run.pair,
            &row,
        )?);
    }
    for (e, log) in run.adapt.epochs.iter().enumerate() {
        let (_, _, _, min_disc_t) = target_diagnostics(&log.snapshot, &run.pair.target)?;
        let row = PhaseLosses {
            cls: 0.0,
            adv_min_pair: 0.0,
            pair_tr: log.mean_pair_trace,
            ent_c: log.mean_cond_entropy,
            ent_m: log.mean_marg_entropy,
            pseudo: log.mean_pseudo_loss,
            min_pair_discrepancy: min_disc_t,
        };
        out.push_str(&metrics_row(
            "adapt",
            e + 1,
            &log.snapshot,
            &run.pair,
            &row,
        )?);
    }
    Ok(out)
}

fn build_selection_csv(run: &TrainedRun) -> String {
    let record = &run.pretrain.record;
    let k = record.per_epoch[0].len();
    let c = record.per_epoch[0][0].len();
    let mut fields: Vec<String> = vec!["epoch".into(), "score".into(), "selected".into()];
    for j in 0..k {
        for cls in 0..c {
            fields.push(format!("acc_h{j}_c{cls}"));
        }
    }
    let mut out = csv_line(&fields);
    for (e, acc) in record.per_epoch.iter().enumerate() {
        let mut fields: Vec<String> = vec![
            (e + 1).to_string(),
            selection_score(acc).to_string(),
            usize::from(e == run.chosen_epoch).to_string(),
        ];
        for row in acc {
            for v in row {
                fields.push(fmt_g6(*v));
            }
        }
        out.push_str(&csv_line(&fields));
    }
    out
}

/// Project both domains' learned features to two dimensions and list
/// coordinates with domain, true label, and ensemble prediction.
pub fn build_embedding_csv(model: &ModelState, pair: &DomainPair) -> Result<String> {
    let feats_s = model.forward_features(&pair.source.x)?;
    let feats_t = model.forward_features(&pair.target.x)?;
    let d = feats_s.cols();
    let mut pooled = Vec::with_capacity((feats_s.rows() + feats_t.rows()) * d);
    pooled.extend_from_slice(feats_s.data());
    pooled.extend_from_slice(feats_t.data());
    let pooled = crate::numerics::Tensor2D::from_vec(feats_s.rows() + feats_t.rows(), d, pooled)?;
    let fitted = Pca::fit(&pooled, 2)?;
    let proj_s = fitted.transform(&feats_s);
    let proj_t = fitted.transform(&feats_t);

    let mut out = csv_line(&["x", "y", "domain", "label", "predicted"].map(String::from));
    for (ds, proj, domain) in [
        (&pair.source, &proj_s, "source"),
        (&pair.target, &proj_t, "target"),
    ] {
        let (preds, _) = ensemble_predict(&model.forward(&ds.x)?);
        let labels = ds.labels()?;
        for r in 0..ds.n() {
            out.push_str(&csv_line(&[
                fmt_g6(proj.get(r, 0)),
                fmt_g6(proj.get(r, 1)),
                domain.to_string(),
                labels[r].to_string(),
                preds[r].to_string(),
            ]));
        }
    }
    Ok(out)
}

/// Run every seed of a config, writing per-seed artifacts under
/// `out_dir/seed_<seed>/` and a cross-seed summary CSV.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<TrainedRun>> {
    fs::create_dir_all(out_dir).map_err(|e| SfdaError::io(out_dir.display().to_string(), e))?;
    let mut runs = Vec::new();
    for &seed in &config.experiment.seeds {
        log::info!("running seed {seed}");
        let run = train_once(config, seed)?;
        let seed_dir = out_dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&seed_dir)
            .map_err(|e| SfdaError::io(seed_dir.display().to_string(), e))?;

        write_file(
            &seed_dir.join("metrics.csv"),
            build_metrics_csv(&run, config.pretrain.alpha_s)?.as_bytes(),
        )?;
        write_file(
            &seed_dir.join("selection.csv"),
            build_selection_csv(&run).as_bytes(),
        )?;
        write_file(
            &seed_dir.join("embedding.csv"),
            build_embedding_csv(&run.adapt.model, &run.pair)?.as_bytes(),
        )?;
        save_checkpoint(
            &run.selected_model,
            &seed_dir.join("checkpoint_pretrained.ckpt"),
        )?;
        save_checkpoint(&run.adapt.model, &seed_dir.join("checkpoint_adapted.ckpt"))?;
        runs.push(run);
    }

    let mut summary = csv_line(
        &[
            "seed",
            "chosen_epoch",
            "source_only_target_acc",
            "adapted_target_acc",
        ]
        .map(String::from),
    );
    for run in &runs {
        summary.push_str(&csv_line(&[
            run.seed.to_string(),
            (run.chosen_epoch + 1).to_string(),
            fmt_g6(run.source_only_target_acc),
            fmt_g6(run.adapted_target_acc),
        ]));
    }
    let mean_src: f64 =
        runs.iter().map(|r| r.source_only_target_acc).sum::<f64>() / runs.len() as f64;
    let mean_adapted: f64 =
        runs.iter().map(|r| r.adapted_target_acc).sum::<f64>() / runs.len() as f64;
    summary.push_str(&csv_line(&[
        "mean".into(),
        String::new(),
        fmt_g6(mean_src),
        fmt_g6(mean_adapted),
    ]));
    write_file(&out_dir.join("summary.csv"), summary.as_bytes())?;
    Ok(runs)
}

/// Print the disagreement-ratio table as CSV: exact ratio, brute-force
/// oracle where feasible, and the ratio recurrence against its closed form.
pub fn theory_table(c_max: usize, k_max: usize, out: &mut dyn Write) -> Result<()> {
    assert!(c_max >= 2 && k_max >= 2, "c_max and k_max must be >= 2");
    let header = csv_line(
        &[
            "c",
            "k",
            "exact",
            "brute_force",
            "recurrence_quotient",
            "expected_quotient",
        ]
        .map(String::from),
    );
    out.write_all(header.as_bytes())
        .map_err(|e| SfdaError::io("stdout", e))?;
    for c in 2..=c_max {
        let recurrence = ratio_recurrence_check(c)?;
        for k in 2..=k_max {
            let exact = disagreement_ratio_exact(c, k)?;
            let feasible = (c as u128)
                .checked_pow(k.min(c) as u32)
                .map(|t| t <= BRUTE_FORCE_BOUND)
                == Some(true);
            let brute = if feasible {
                fmt_g6(disagreement_ratio_bruteforce(c, k)?.value)
            } else {
                String::new()
            };
            let (quot, expect) = match recurrence.iter().find(|e| e.k == k) {
                Some(entry) => (
                    fmt_g6(rational_to_f64(&entry.quotient)),
                    fmt_g6(rational_to_f64(&entry.expected)),
                ),
                None if k > c + 1 => ("1".to_string(), "1".to_string()),
                None => (String::new(), String::new()),
            };
            let line = csv_line(&[
                c.to_string(),
                k.to_string(),
                fmt_g6(exact.value),
                brute,
                quot,
                expect,
            ]);
            out.write_all(line.as_bytes())
                .map_err(|e| SfdaError::io("stdout", e))?;
        }
    }
    Ok(())
}

/// Which ablation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateMode {
    /// Bank size 2 versus bank size c, shared seeds.
    BiVsMany,
    /// Pair-trace only, pseudo-label only, and both, sharing one pretrained
    /// source model per seed.
    TraceVsPseudo,
}

/// Run an ablation and write its comparison CSV into `out_dir`. Returns the
/// CSV path.
pub fn ablate(config: &ExperimentConfig, mode: AblateMode, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| SfdaError::io(out_dir.display().to_string(), e))?;
    match mode {
        AblateMode::BiVsMany => {
            let path = out_dir.join("bi_vs_many.csv");
            let mut csv = csv_line(&["series", "seed", "target_accuracy"].map(String::from));
            let classes = config.classes();
            for k in [2usize, classes] {
                let mut variant = config.clone();
                variant.model.k = k;
                let series = format!("k={k}");
                let mut accs = Vec::new();
                for &seed in &config.experiment.seeds {
                    let run = train_once(&variant, seed)?;
                    csv.push_str(&csv_line(&[
                        series.clone(),
                        seed.to_string(),
                        fmt_g6(run.adapted_target_acc),
                    ]));
                    accs.push(run.adapted_target_acc);
                }
                let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                csv.push_str(&csv_line(&[series, "mean".into(), fmt_g6(mean)]));
            }
            write_file(&path, csv.as_bytes())?;
            Ok(path)
        }
        AblateMode::TraceVsPseudo => {
            let path = out_dir.join("trace_vs_pseudo.csv");
            let mut csv =
                csv_line(&["series", "seed", "epoch", "target_accuracy"].map(String::from));
            type Mask = fn(&AdaptationWeights) -> AdaptationWeights;
            let masks: [(&str, Mask); 3] = [
                ("trace_only", |w| AdaptationWeights {
                    beta: 0.0,
                    ..w.clone()
                }),
                ("pseudo_only", |w| AdaptationWeights {
                    alpha_t: 0.0,
                    ..w.clone()
                }),
                ("trace_and_pseudo", |w| w.clone()),
            ];
            // per-series, per-epoch accuracy curves across seeds
            let mut curves: Vec<Vec<Vec<f64>>> = vec![Vec::new(); masks.len()];
            for &seed in &config.experiment.seeds {
                // one pretrained source model shared by all three series
                let raw_pair = config.build_data(seed)?;
                let (pair, _) = Standardizer::standardize_pair(&raw_pair);
                let model = init_model(
                    config.generator_spec(pair.source.dim()),
                    config.bank_spec(),
                    seed ^ MODEL_SEED_TAG,
                )?;
                let pre_cfg = config.pretrain_config(pair.source.n())?;
                let pretrain = pretrain_source(model, &pair.source, &pre_cfg)?;
                let chosen = select_model(&pretrain.record)?;
                let selected = pretrain.epochs[chosen].snapshot.clone();

                let base_cfg = config.adapt_config(pair.target.n())?;
                for (mi, (series, mask)) in masks.iter().enumerate() {
                    let cfg = AdaptConfig {
                        weights: mask(&base_cfg.weights),
                        ..base_cfg.clone()
                    };
                    let outcome =
                        adapt_target(selected.clone(), &pair.target_for_adaptation(), &cfg)?;
                    let mut curve = Vec::with_capacity(outcome.epochs.len());
                    for (e, log) in outcome.epochs.iter().enumerate() {
                        let acc = evaluate(&log.snapshot, &pair.target)?.overall_accuracy;
                        csv.push_str(&csv_line(&[
                            series.to_string(),
                            seed.to_string(),
                            (e + 1).to_string(),
                            fmt_g6(acc),
                        ]));
                        curve.push(acc);
                    }
                    curves[mi].push(curve);
                }
            }
            for ((series, _), per_seed) in masks.iter().zip(curves.iter()) {
                let epochs = per_seed[0].len();
                for e in 0..epochs {
                    let mean = per_seed.iter().map(|c| c[e]).sum::<f64>() / per_seed.len() as f64;
                    csv.push_str(&csv_line(&[
                        series.to_string(),
                        "mean".into(),
                        (e + 1).to_string(),
                        fmt_g6(mean),
                    ]));
                }
            }
            write_file(&path, csv.as_bytes())?;
            Ok(path)
        }
    }
}

/// Project the features of a checkpointed model over a config's data and
/// write the embedding CSV.
pub fn embed(checkpoint: &Path, config: &ExperimentConfig, out_path: &Path) -> Result<()> {
    let model = crate::pipeline::load_checkpoint(checkpoint)?;
    let seed = config.experiment.seeds[0];
    let raw_pair = config.build_data(seed)?;
    let (pair, _) = Standardizer::standardize_pair(&raw_pair);
    write_file(out_path, build_embedding_csv(&model, &pair)?.as_bytes())
}
