//! Training phases: source pre-training with worst-pair separation, the
//! accuracy-pattern model-selection heuristic, centroid pseudo-labels,
//! source-free target adaptation with frozen heads, and evaluation.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use crate::data::{batches, take_labels, take_rows, Dataset, UnlabeledDataset};
use crate::error::SfdaError;
use crate::losses::{
    self, adaptation_objective_node, classification_loss_node, pair_discrepancies, pair_l1_node,
    AdaptationWeights,
};
use crate::model::{ensemble_probs, ModelState, SoftmaxBankOutput, TrainScope};
use crate::numerics::{lr_at, sgd_step, DiffGraph, OptimizerConfig, Tensor2D};
use crate::theory::{empirical_disagreement, DisagreementSample};
use crate::Result;

/// Pre-training phase settings.
#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Separation threshold the worst pair must reach per batch.
    pub tau: f64,
    /// Coefficient of the separation objective.
    pub alpha_s: f64,
    /// Bound on worst-pair iterations per batch; keeps an unreachable tau
    /// from hanging an epoch.
    pub inner_cap: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau <= 0.0 || self.tau >= 2.0 {
            return Err(SfdaError::InvalidConfig(format!(
                "tau must lie in (0, 2), got {}",
                self.tau
            )));
        }
        if self.inner_cap < 1 {
            return Err(SfdaError::InvalidConfig("inner_cap must be >= 1".into()));
        }
        if self.alpha_s < 0.0 {
            return Err(SfdaError::InvalidConfig("alpha_s must be >= 0".into()));
        }
        if self.epochs < 1 {
            return Err(SfdaError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(SfdaError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adaptation phase settings. Pseudo labels are recomputed at epochs
/// `pseudo_start_epoch, pseudo_start_epoch + pseudo_interval, ...`
/// (1-indexed), and the pseudo-label weight is treated as zero before
/// `pseudo_start_epoch`.
#[derive(Debug, Clone)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: AdaptationWeights,
    pub pseudo_start_epoch: usize,
    pub pseudo_interval: usize,
    pub optimizer: OptimizerConfig,
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.pseudo_interval < 1 {
            return Err(SfdaError::InvalidConfig(
                "pseudo_interval must be >= 1".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(SfdaError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch matrix of per-(classifier, category) source training accuracy.
#[derive(Debug, Clone)]
pub struct SelectionRecord {
    /// `per_epoch[e][head][class]` in `[0, 1]`.
    pub per_epoch: Vec<Vec<Vec<f64>>>,
}

/// What one pre-training epoch left behind.
#[derive(Debug, Clone)]
pub struct PretrainEpochLog {
    pub snapshot: ModelState,
    /// Head x class source accuracy at epoch end.
    pub accuracy: Vec<Vec<f64>>,
    /// Mean classification loss over the epoch's batches.
    pub mean_cls_loss: f64,
    /// Minimum pairwise discrepancy over the full source set at epoch end.
    pub min_pair_disc: f64,
    /// Worst-pair iterations actually spent this epoch.
    pub inner_steps: usize,
}

/// Result of [`pretrain_source`]: the final model, per-epoch snapshots and
/// diagnostics, and the selection record.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: ModelState,
    pub record: SelectionRecord,
    pub epochs: Vec<PretrainEpochLog>,
}

const PRETRAIN_SHUFFLE_TAG: u64 = 0x5052_4554;
const ADAPT_SHUFFLE_TAG: u64 = 0x4144_5054;

fn batch_tensor(x: &Tensor2D, idx: &[usize]) -> Tensor2D {
    take_rows(x, idx)
}

fn finite_or_abort(
    value: f64,
    phase: &'static str,
    epoch: usize,
    batch: usize,
    loss_name: &'static str,
) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SfdaError::NonFiniteLoss {
            phase,
            epoch,
            batch,
            loss_name,
        })
    }
}

/// Per-head argmax labels (ties toward the lowest class index), one row of
/// `k` labels per sample.
pub fn bank_argmax_labels(out: &SoftmaxBankOutput) -> Vec<Vec<usize>> {
    let (n, c, k) = (out.batch(), out.c(), out.k());
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        let mut row = Vec::with_capacity(k);
        for j in 0..k {
            let mut best = 0;
            let mut best_p = f64::NEG_INFINITY;
            for cls in 0..c {
                let p = out.head(j).get(r, cls);
                if p > best_p {
                    best_p = p;
                    best = cls;
                }
            }
            row.push(best);
        }
        rows.push(row);
    }
    rows
}

fn accuracy_matrix(out: &SoftmaxBankOutput, labels: &[usize]) -> Vec<Vec<f64>> {
    let (c, k) = (out.c(), out.k());
    let preds = bank_argmax_labels(out);
    let mut correct = vec![vec![0usize; c]; k];
    let mut count = vec![0usize; c];
    for (r, &y) in labels.iter().enumerate() {
        count[y] += 1;
        for j in 0..k {
            if preds[r][j] == y {
                correct[j][y] += 1;
            }
        }
    }
    (0..k)
        .map(|j| {
            (0..c)
                .map(|cls| {
                    if count[cls] == 0 {
                        1.0
                    } else {
                        correct[j][cls] as f64 / count[cls] as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Source pre-training: per epoch, every batch first minimizes the
/// classification loss over the generator and all heads, then freezes the
/// generator and repeatedly maximizes the separation of the currently
/// closest head pair until the minimum pairwise discrepancy reaches `tau`
/// or `inner_cap` iterations are spent. The closest pair is re-selected on
/// every inner iteration and both of its heads move.
pub fn pretrain_source(
    mut model: ModelState,
    source: &Dataset,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    for p in model.params_mut() {
        p.reset_velocity();
    }
    let labels = source.labels()?;
    let c = source.c;
    let shuffle_seed = model.seed() ^ PRETRAIN_SHUFFLE_TAG;
    let all_ids: Vec<usize> = (0..model.params().len()).collect();
    let mut iter = 0usize;
    let max_iter = cfg.optimizer.max_iter;

    let mut epoch_logs = Vec::with_capacity(cfg.epochs);
    let mut record = SelectionRecord {
        per_epoch: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 0..cfg.epochs {
        let mut cls_sum = 0.0;
        let mut inner_steps = 0usize;
        let batch_list = batches(source.n(), cfg.batch_size, shuffle_seed, epoch);
        for (bi, batch) in batch_list.iter().enumerate() {
            let x = batch_tensor(&source.x, batch);
            let y = take_labels(labels, batch);
            let lr = lr_at(iter.min(max_iter), &cfg.optimizer);

            // joint classification step over G and every head
            model.zero_grads();
            let mut g = DiffGraph::new();
            let xn = g.leaf(x.clone());
            let feats = model.record_features(&mut g, xn, &TrainScope::All);
            let bank = model.record_bank(&mut g, feats, &TrainScope::All);
            let loss = classification_loss_node(&mut g, &bank.log_probs, &y, c)?;
            let loss_val = finite_or_abort(
                g.value(loss).item(),
                "pretrain",
                epoch,
                bi,
                "classification",
            )?;
            cls_sum += loss_val;
            g.backward(loss)?;
            g.accumulate_grads(model.params_mut());
            sgd_step(model.params_mut_by_ids(&all_ids), lr, &cfg.optimizer);
            iter += 1;

            // worst-pair separation with the generator frozen
            if cfg.alpha_s > 0.0 {
                let feats_fixed = model.forward_features(&x)?;
                for _ in 0..cfg.inner_cap {
                    let out = model.forward_bank(&feats_fixed)?;
                    let rep = pair_discrepancies(&out);
                    if rep.min >= cfg.tau {
                        break;
                    }
                    let (a, b) = rep.argmin;
                    model.zero_grads();
                    let mut g = DiffGraph::new();
                    let fnode = g.leaf(feats_fixed.clone());
                    let bank = model.record_bank(&mut g, fnode, &TrainScope::Heads(vec![a, b]));
                    let d = pair_l1_node(&mut g, bank.probs[a], bank.probs[b]);
                    finite_or_abort(g.value(d).item(), "pretrain", epoch, bi, "separation")?;
                    // maximize by descending the negated objective
                    let neg = g.scale(d, -cfg.alpha_s);
                    g.backward(neg)?;
                    g.accumulate_grads(model.params_mut());
                    let mut pair_ids = model.head_param_ids(a);
                    pair_ids.extend(model.head_param_ids(b));
                    sgd_step(model.params_mut_by_ids(&pair_ids), lr, &cfg.optimizer);
                    inner_steps += 1;
                }
            }
        }

        // epoch-end diagnostics over the full source set
        let out = model.forward(&source.x)?;
        let accuracy = accuracy_matrix(&out, labels);
        let min_pair_disc = pair_discrepancies(&out).min;
        record.per_epoch.push(accuracy.clone());
        epoch_logs.push(PretrainEpochLog {
            snapshot: model.clone(),
            accuracy,
            mean_cls_loss: cls_sum / batch_list.len() as f64,
            min_pair_disc,
            inner_steps,
        });
    }

    Ok(PretrainOutcome {
        model,
        record,
        epochs: epoch_logs,
    })
}

/// Selection score of one epoch's accuracy matrix: the number of
/// (head, class) cells at exactly 100%, minus `k*c` for every class with
/// fewer than `k - 2` perfect heads (three or more heads off the mark on
/// one class signals boundary pile-up rather than disagreement).
pub fn selection_score(accuracy: &[Vec<f64>]) -> i64 {
    let k = accuracy.len();
    let c = accuracy[0].len();
    let mut perfect_cells = 0i64;
    let mut penalties = 0i64;
    for cls in 0..c {
        let perfect = (0..k).filter(|&j| accuracy[j][cls] == 1.0).count();
        perfect_cells += perfect as i64;
        if k >= 2 && perfect < k.saturating_sub(2) {
            penalties += (k * c) as i64;
        }
    }
    perfect_cells - penalties
}

/// Pick the epoch with the best [`selection_score`]; ties go to the later
/// epoch.
pub fn select_model(record: &SelectionRecord) -> Result<usize> {
    if record.per_epoch.is_empty() {
        return Err(SfdaError::EmptySelectionRecord);
    }
    let mut best = 0usize;
    let mut best_score = i64::MIN;
    for (e, acc) in record.per_epoch.iter().enumerate() {
        let s = selection_score(acc);
        if s >= best_score {
            best_score = s;
            best = e;
        }
    }
    Ok(best)
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    1.0 - dot / (na.sqrt() * nb.sqrt() + 1e-12)
}

fn assign_by_centroid(feats: &Tensor2D, centroids: &[Vec<f64>], pbar: &Tensor2D) -> Vec<usize> {
    let n = feats.rows();
    let c = centroids.len();
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let f = feats.row(r);
        let dists: Vec<f64> = (0..c)
            .map(|cls| cosine_distance(f, &centroids[cls]))
            .collect();
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        // near-ties resolve toward the class the ensemble already prefers
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for cls in 0..c {
            if dists[cls] - min <= 1e-12 && pbar.get(r, cls) > best_p {
                best_p = pbar.get(r, cls);
                best = cls;
            }
        }
        labels.push(best);
    }
    labels
}

/// Centroid fallback for a class with no mass: the feature row of the
/// sample the ensemble rates highest for that class.
fn fallback_centroid(feats: &Tensor2D, pbar: &Tensor2D, cls: usize) -> Vec<f64> {
    let mut best_r = 0usize;
    let mut best_p = f64::NEG_INFINITY;
    for r in 0..feats.rows() {
        if pbar.get(r, cls) > best_p {
            best_p = pbar.get(r, cls);
            best_r = r;
        }
    }
    feats.row(best_r).to_vec()
}

/// Two-round centroid pseudo-labels: soft class centroids weighted by the
/// ensemble probabilities, nearest-centroid assignment under cosine
/// distance, then one refinement from the hard assignment. Deterministic;
/// a class with zero mass falls back to its single highest-probability
/// sample (logged).
pub fn compute_pseudo_labels(model: &ModelState, target_x: &Tensor2D) -> Result<Vec<usize>> {
    let feats = model.forward_features(target_x)?;
    let out = model.forward_bank(&feats)?;
    let pbar = ensemble_probs(&out);
    let (n, d) = feats.shape();
    let c = out.c();

    // soft centroids
    let mut centroids = vec![vec![0.0; d]; c];
    for cls in 0..c {
        let mut mass = 0.0;
        for r in 0..n {
            let w = pbar.get(r, cls);
            mass += w;
            for j in 0..d {
                centroids[cls][j] += w * feats.get(r, j);
            }
        }
        if mass <= 1e-12 {
            log::warn!("pseudo-labels: class {cls} has no soft mass, using best sample");
            centroids[cls] = fallback_centroid(&feats, &pbar, cls);
        } else {
            centroids[cls].iter_mut().for_each(|v| *v /= mass);
        }
    }
    let first = assign_by_centroid(&feats, &centroids, &pbar);

    // one refinement from hard labels
    let mut hard = vec![vec![0.0; d]; c];
    let mut counts = vec![0usize; c];
    for (r, &cls) in first.iter().enumerate() {
        counts[cls] += 1;
        for j in 0..d {
            hard[cls][j] += feats.get(r, j);
        }
    }
    for cls in 0..c {
        if counts[cls] == 0 {
            log::warn!("pseudo-labels: class {cls} empty after assignment, using best sample");
            hard[cls] = fallback_centroid(&feats, &pbar, cls);
        } else {
            hard[cls].iter_mut().for_each(|v| *v /= counts[cls] as f64);
        }
    }
    Ok(assign_by_centroid(&feats, &hard, &pbar))
}

/// One adaptation epoch's diagnostics (batch means of the objective terms).
#[derive(Debug, Clone)]
pub struct AdaptEpochLog {
    pub snapshot: ModelState,
    pub mean_pair_trace: f64,
    pub mean_cond_entropy: f64,
    pub mean_marg_entropy: f64,
    pub mean_pseudo_loss: f64,
    pub mean_objective: f64,
    pub pseudo_refreshed: bool,
}

/// Result of [`adapt_target`].
#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub model: ModelState,
    pub epochs: Vec<AdaptEpochLog>,
}

/// Source-free target adaptation: the heads stay frozen for the entire
/// phase while the generator descends the combined objective batch-wise.
/// Takes a label-free view of the target, which is all it can see.
pub fn adapt_target(
    mut model: ModelState,
    target: &UnlabeledDataset,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    for p in model.params_mut() {
        p.reset_velocity();
    }
    let c = target.c;
    let shuffle_seed = model.seed() ^ ADAPT_SHUFFLE_TAG;
    let gen_ids = model.generator_param_ids();
    let mut iter = 0usize;
    let max_iter = cfg.optimizer.max_iter;
    let mut pseudo: Option<Vec<usize>> = None;
    let mut epoch_logs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let refresh = cfg.weights.beta != 0.0
            && epoch >= cfg.pseudo_start_epoch
            && (epoch - cfg.pseudo_start_epoch).is_multiple_of(cfg.pseudo_interval);
        if refresh {
            pseudo = Some(compute_pseudo_labels(&model, &target.x)?);
        }
        let beta_active = epoch >= cfg.pseudo_start_epoch && pseudo.is_some();
        let weights = AdaptationWeights {
            beta: if beta_active { cfg.weights.beta } else { 0.0 },
            ..cfg.weights.clone()
        };

        let mut sums = [0.0f64; 5];
        let batch_list = batches(target.n(), cfg.batch_size, shuffle_seed, epoch);
        for (bi, batch) in batch_list.iter().enumerate() {
            let x = batch_tensor(&target.x, batch);
            let pseudo_batch: Option<Vec<usize>> = pseudo
                .as_ref()
                .map(|p| take_labels(p, batch))
                .filter(|_| weights.beta != 0.0);
            let lr = lr_at(iter.min(max_iter), &cfg.optimizer);

            model.zero_grads();
            let mut g = DiffGraph::new();
            let xn = g.leaf(x.clone());
            let feats = model.record_features(&mut g, xn, &TrainScope::GeneratorOnly);
            let bank = model.record_bank(&mut g, feats, &TrainScope::GeneratorOnly);
            let loss = adaptation_objective_node(
                &mut g,
                &bank.probs,
                &bank.log_probs,
                pseudo_batch.as_deref(),
                c,
                &weights,
            )?;
            let loss_val = finite_or_abort(g.value(loss).item(), "adapt", epoch, bi, "adaptation")?;

            // per-batch component diagnostics from the same forward values
            let out =
                SoftmaxBankOutput::new(bank.probs.iter().map(|&p| g.value(p).clone()).collect())?;
            sums[0] += losses::pair_trace_loss(&out);
            sums[1] += losses::conditional_entropy(&out);
            sums[2] += losses::marginal_entropy(&out);
            sums[3] += match &pseudo_batch {
                Some(p) => losses::pseudo_label_loss(&out, p)?,
                None => 0.0,
            };
            sums[4] += loss_val;

            g.backward(loss)?;
            g.accumulate_grads(model.params_mut());
            sgd_step(model.params_mut_by_ids(&gen_ids), lr, &cfg.optimizer);
            iter += 1;
        }

        let nb = batch_list.len() as f64;
        epoch_logs.push(AdaptEpochLog {
            snapshot: model.clone(),
            mean_pair_trace: sums[0] / nb,
            mean_cond_entropy: sums[1] / nb,
            mean_marg_entropy: sums[2] / nb,
            mean_pseudo_loss: sums[3] / nb,
            mean_objective: sums[4] / nb,
            pseudo_refreshed: refresh,
        });
    }

    Ok(AdaptOutcome {
        model,
        epochs: epoch_logs,
    })
}

/// Evaluation summary over a labeled dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    /// Per-class recall; classes absent from the dataset report 0.
    pub per_class: Vec<f64>,
    /// Empirical disagreement of the bank on this dataset.
    pub disagreement: f64,
}

/// Ensemble accuracy, per-class recall, and bank disagreement on a labeled
/// dataset.
pub fn evaluate(model: &ModelState, ds: &Dataset) -> Result<EvalReport> {
    let labels = ds.labels()?;
    let out = model.forward(&ds.x)?;
    let (preds, _) = crate::model::ensemble_predict(&out);
    let c = ds.c;
    let mut correct = 0usize;
    let mut class_correct = vec![0usize; c];
    let mut class_count = vec![0usize; c];
    for (&y, &p) in labels.iter().zip(preds.iter()) {
        class_count[y] += 1;
        if y == p {
            correct += 1;
            class_correct[y] += 1;
        }
    }
    let per_class = (0..c)
        .map(|cls| {
            if class_count[cls] == 0 {
                0.0
            } else {
                class_correct[cls] as f64 / class_count[cls] as f64
            }
        })
        .collect();
    let sample = DisagreementSample::new(bank_argmax_labels(&out), c)?;
    Ok(EvalReport {
        overall_accuracy: correct as f64 / ds.n() as f64,
        per_class,
        disagreement: empirical_disagreement(&sample),
    })
}
