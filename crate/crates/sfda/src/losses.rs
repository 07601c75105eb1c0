//! Training objectives over bank outputs.
//!
//! Every loss exists twice: a plain `f64` evaluation over a
//! [`SoftmaxBankOutput`] for metrics and tests, and a graph builder over
//! recorded probability nodes for training. The two routes are checked
//! against each other, and every graph builder is validated against the
//! finite-difference oracle in [`crate::numerics::grad_check`].
//!
//! Conventions:
//! - classification / pseudo-label: mean over batch and heads of the
//!   negative log-probability of the given label;
//! - pair discrepancy: per-sample L1 distance of two heads' probability
//!   vectors, averaged over the batch (range [0, 2]);
//! - trace agreement: one minus the summed per-class product of all heads'
//!   probabilities;
//! - pair-trace: sum over head pairs of one minus the inner product of
//!   their probability vectors;
//! - conditional entropy: head-averaged mean sample entropy; marginal
//!   entropy: head-averaged entropy of the batch-mean prediction.

use crate::error::SfdaError;
use crate::model::SoftmaxBankOutput;
use crate::numerics::{DiffGraph, NodeId, Tensor2D};
use crate::Result;

/// Floor used inside logarithms of raw probabilities.
const LOG_FLOOR: f64 = 1e-12;

/// Weights of the combined adaptation objective:
/// `alpha_t * pair_trace + gamma1 * cond_entropy - gamma2 * marg_entropy
///  + beta * pseudo_label`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationWeights {
    pub alpha_t: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta: f64,
}

impl AdaptationWeights {
    /// Entropy weights default to 0.1.
    pub fn new(alpha_t: f64, beta: f64) -> Self {
        AdaptationWeights {
            alpha_t,
            gamma1: 0.1,
            gamma2: 0.1,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_t < 0.0 || self.gamma1 < 0.0 || self.gamma2 < 0.0 || self.beta < 0.0 {
            return Err(SfdaError::InvalidConfig(
                "adaptation weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Batch-mean L1 distances for every head pair, with the closest pair.
#[derive(Debug, Clone)]
pub struct PairDiscrepancyReport {
    /// `(i, j, d_ij)` for all i < j, in lexicographic pair order.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Closest pair; lexicographically smallest on ties.
    pub argmin: (usize, usize),
    /// Distance of the closest pair.
    pub min: f64,
}

fn check_labels(labels: &[usize], c: usize) -> Result<()> {
    for &y in labels {
        if y >= c {
            return Err(SfdaError::LabelOutOfRange {
                label: y,
                classes: c,
            });
        }
    }
    Ok(())
}

/// Mean over batch and heads of `-log p_head(label)`.
pub fn classification_loss(out: &SoftmaxBankOutput, labels: &[usize]) -> Result<f64> {
    check_labels(labels, out.c())?;
    assert_eq!(labels.len(), out.batch(), "one label per row");
    let mut total = 0.0;
    for j in 0..out.k() {
        for (r, &y) in labels.iter().enumerate() {
            total += -out.head(j).get(r, y).max(LOG_FLOOR).ln();
        }
    }
    Ok(total / (out.k() * out.batch()) as f64)
}

/// Identical arithmetic to [`classification_loss`], against pseudo labels.
pub fn pseudo_label_loss(out: &SoftmaxBankOutput, pseudo: &[usize]) -> Result<f64> {
    classification_loss(out, pseudo)
}

/// Batch-mean L1 distance between two probability matrices.
fn l1_distance(a: &Tensor2D, b: &Tensor2D) -> f64 {
    let mut total = 0.0;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        total += (x - y).abs();
    }
    total / a.rows() as f64
}

/// All pairwise batch-mean L1 distances and the closest pair.
pub fn pair_discrepancies(out: &SoftmaxBankOutput) -> PairDiscrepancyReport {
    assert!(out.k() >= 2, "need at least two heads");
    let mut pairs = Vec::new();
    let mut argmin = (0, 1);
    let mut min = f64::INFINITY;
    for i in 0..out.k() {
        for j in (i + 1)..out.k() {
            let d = l1_distance(out.head(i), out.head(j));
            if d < min {
                min = d;
                argmin = (i, j);
            }
            pairs.push((i, j, d));
        }
    }
    PairDiscrepancyReport { pairs, argmin, min }
}

/// `alpha_s` times the minimum pairwise distance: the quantity the
/// worst-pair separation step maximizes.
pub fn adversarial_separation_loss(out: &SoftmaxBankOutput, alpha_s: f64) -> f64 {
    alpha_s * pair_discrepancies(out).min
}

/// One minus the batch-mean summed per-class product of all heads.
pub fn trace_loss(out: &SoftmaxBankOutput) -> f64 {
    let (n, c, k) = (out.batch(), out.c(), out.k());
    let mut mean_agree = 0.0;
    for r in 0..n {
        let mut agree = 0.0;
        for cls in 0..c {
            let mut prod = 1.0;
            for j in 0..k {
                prod *= out.head(j).get(r, cls);
            }
            agree += prod;
        }
        mean_agree += agree;
    }
    1.0 - mean_agree / n as f64
}

/// Sum over head pairs of one minus the batch-mean inner product.
pub fn pair_trace_loss(out: &SoftmaxBankOutput) -> f64 {
    assert!(out.k() >= 2, "need at least two heads");
    let (n, c, k) = (out.batch(), out.c(), out.k());
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let mut mean_inner = 0.0;
            for r in 0..n {
                for cls in 0..c {
                    mean_inner += out.head(i).get(r, cls) * out.head(j).get(r, cls);
                }
            }
            total += 1.0 - mean_inner / n as f64;
        }
    }
    total
}

/// Head-averaged mean sample entropy, in `[0, ln c]`.
pub fn conditional_entropy(out: &SoftmaxBankOutput) -> f64 {
    let (n, c, k) = (out.batch(), out.c(), out.k());
    let mut total = 0.0;
    for j in 0..k {
        for r in 0..n {
            for cls in 0..c {
                let p = out.head(j).get(r, cls);
                total -= p * p.max(LOG_FLOOR).ln();
            }
        }
    }
    total / (k * n) as f64
}

/// Head-averaged entropy of the batch-mean prediction, in `[0, ln c]`.
pub fn marginal_entropy(out: &SoftmaxBankOutput) -> f64 {
    let (n, c, k) = (out.batch(), out.c(), out.k());
    let mut total = 0.0;
    for j in 0..k {
        for cls in 0..c {
            let mut q = 0.0;
            for r in 0..n {
                q += out.head(j).get(r, cls);
            }
            q /= n as f64;
            total -= q * q.max(LOG_FLOOR).ln();
        }
    }
    total / k as f64
}

/// The combined adaptation objective (to minimize):
/// `alpha_t*pair_trace + gamma1*cond_ent - gamma2*marg_ent + beta*pseudo`.
pub fn adaptation_objective(
    out: &SoftmaxBankOutput,
    pseudo: &[usize],
    w: &AdaptationWeights,
) -> Result<f64> {
    let lp = if w.beta != 0.0 {
        pseudo_label_loss(out, pseudo)?
    } else {
        0.0
    };
    Ok(
        w.alpha_t * pair_trace_loss(out) + w.gamma1 * conditional_entropy(out)
            - w.gamma2 * marginal_entropy(out)
            + w.beta * lp,
    )
}

// ---- graph builders -------------------------------------------------------

/// One-hot row mask for a label vector, as a constant graph leaf.
fn one_hot_leaf(g: &mut DiffGraph, labels: &[usize], c: usize) -> NodeId {
    let mut mask = Tensor2D::zeros(labels.len(), c);
    for (r, &y) in labels.iter().enumerate() {
        mask.set(r, y, 1.0);
    }
    g.leaf(mask)
}

/// Graph version of [`classification_loss`] over per-head log-softmax nodes.
pub fn classification_loss_node(
    g: &mut DiffGraph,
    log_probs: &[NodeId],
    labels: &[usize],
    c: usize,
) -> Result<NodeId> {
    check_labels(labels, c)?;
    let mask = one_hot_leaf(g, labels, c);
    let k = log_probs.len();
    let mut acc: Option<NodeId> = None;
    for &ls in log_probs {
        let picked = g.mul(ls, mask);
        let rs = g.row_sum(picked);
        let m = g.mean_all(rs);
        acc = Some(match acc {
            Some(a) => g.add(a, m),
            None => m,
        });
    }
    Ok(g.scale(acc.unwrap(), -1.0 / k as f64))
}

/// Graph node for the batch-mean L1 distance between two heads'
/// probability nodes. Gradient flows only into these two heads.
pub fn pair_l1_node(g: &mut DiffGraph, p_i: NodeId, p_j: NodeId) -> NodeId {
    let diff = g.sub(p_i, p_j);
    let a = g.abs(diff);
    let rs = g.row_sum(a);
    let m = g.mean_all(rs);
    // mean_all over an n x 1 column is exactly the batch mean
    m
}

/// Graph version of [`trace_loss`] over per-head probability nodes.
pub fn trace_loss_node(g: &mut DiffGraph, probs: &[NodeId]) -> NodeId {
    let mut prod = probs[0];
    for &p in &probs[1..] {
        prod = g.mul(prod, p);
    }
    let rs = g.row_sum(prod);
    let m = g.mean_all(rs);
    let neg = g.scale(m, -1.0);
    g.add_const(neg, 1.0)
}

/// Graph version of [`pair_trace_loss`] over per-head probability nodes.
pub fn pair_trace_loss_node(g: &mut DiffGraph, probs: &[NodeId]) -> NodeId {
    assert!(probs.len() >= 2, "need at least two heads");
    let mut acc: Option<NodeId> = None;
    for i in 0..probs.len() {
        for j in (i + 1)..probs.len() {
            let inner = g.mul(probs[i], probs[j]);
            let rs = g.row_sum(inner);
            let m = g.mean_all(rs);
            let neg = g.scale(m, -1.0);
            let term = g.add_const(neg, 1.0);
            acc = Some(match acc {
                Some(a) => g.add(a, term),
                None => term,
            });
        }
    }
    acc.unwrap()
}

/// Graph version of [`conditional_entropy`]; uses the log-softmax nodes
/// directly so no clamping is involved.
pub fn conditional_entropy_node(
    g: &mut DiffGraph,
    probs: &[NodeId],
    log_probs: &[NodeId],
) -> NodeId {
    let k = probs.len();
    let mut acc: Option<NodeId> = None;
    for (&p, &ls) in probs.iter().zip(log_probs.iter()) {
        let pl = g.mul(p, ls);
        let rs = g.row_sum(pl);
        let m = g.mean_all(rs);
        acc = Some(match acc {
            Some(a) => g.add(a, m),
            None => m,
        });
    }
    g.scale(acc.unwrap(), -1.0 / k as f64)
}

/// Graph version of [`marginal_entropy`]; the batch-mean prediction goes
/// through a clamped log.
pub fn marginal_entropy_node(g: &mut DiffGraph, probs: &[NodeId]) -> NodeId {
    let k = probs.len();
    let mut acc: Option<NodeId> = None;
    for &p in probs {
        let q = g.mean_rows(p);
        let lq = g.log_clamped(q);
        let ql = g.mul(q, lq);
        let s = g.sum_all(ql);
        acc = Some(match acc {
            Some(a) => g.add(a, s),
            None => s,
        });
    }
    g.scale(acc.unwrap(), -1.0 / k as f64)
}

/// Graph version of [`adaptation_objective`]. `pseudo` may be absent while
/// the pseudo-label term is inactive (`beta` treated as zero).
pub fn adaptation_objective_node(
    g: &mut DiffGraph,
    probs: &[NodeId],
    log_probs: &[NodeId],
    pseudo: Option<&[usize]>,
    c: usize,
    w: &AdaptationWeights,
) -> Result<NodeId> {
    let pair = pair_trace_loss_node(g, probs);
    let ec = conditional_entropy_node(g, probs, log_probs);
    let em = marginal_entropy_node(g, probs);
    let t1 = g.scale(pair, w.alpha_t);
    let t2 = g.scale(ec, w.gamma1);
    let t3 = g.scale(em, -w.gamma2);
    let mut acc = g.add(t1, t2);
    acc = g.add(acc, t3);
    if let (Some(labels), true) = (pseudo, w.beta != 0.0) {
        let lp = classification_loss_node(g, log_probs, labels, c)?;
        let t4 = g.scale(lp, w.beta);
        acc = g.add(acc, t4);
    }
    Ok(acc)
}
