//! Finite-difference oracle for analytic gradients.
//!
//! The checker records a scalar loss over a parameter set, runs backward,
//! then recomputes the loss with each coordinate perturbed by ±step and
//! compares the analytic gradient against the central difference. It is the
//! independent reference every differentiable loss is validated against.

use crate::error::SfdaError;
use crate::numerics::{DiffGraph, NodeId, Parameter};
use crate::Result;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max_coord |analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    /// (parameter index, coordinate index) attaining the max, if any
    /// coordinate exists.
    pub worst: Option<(usize, usize)>,
}

/// Compare analytic gradients of a recorded scalar function against central
/// finite differences with the given step.
///
/// `build` receives a fresh graph plus one node per parameter (recorded in
/// order) and must return the scalar loss node. It is invoked once for the
/// analytic pass and twice per coordinate for the numeric pass, so it must
/// be deterministic.
pub fn grad_check<F>(params: &mut [Parameter], build: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut DiffGraph, &[NodeId]) -> NodeId,
{
    assert!(step > 0.0, "finite-difference step must be positive");

    let record = |params: &[Parameter]| -> (NodeId, Vec<NodeId>, DiffGraph) {
        let mut g = DiffGraph::new();
        let nodes: Vec<NodeId> = params
            .iter()
            .enumerate()
            .map(|(i, p)| g.param(i, p))
            .collect();
        let loss = build(&mut g, &nodes);
        (loss, nodes, g)
    };

    // analytic pass
    let (loss_node, param_nodes, mut graph) = record(params);
    let loss0 = graph.value(loss_node).item();
    if !loss0.is_finite() {
        return Err(SfdaError::NonFiniteCheck { param: 0, coord: 0 });
    }
    graph.backward(loss_node)?;
    let analytic: Vec<Vec<f64>> = param_nodes
        .iter()
        .map(|&n| graph.grad(n).data().to_vec())
        .collect();

    // numeric pass, one coordinate at a time
    let mut max_rel = 0.0;
    let mut worst = None;
    for pi in 0..params.len() {
        let n = params[pi].value().data().len();
        for ci in 0..n {
            let orig = params[pi].value().data()[ci];

            params[pi].value_mut().data_mut()[ci] = orig + step;
            let (ln, _, gp) = record(params);
            let fp = gp.value(ln).item();
            params[pi].value_mut().data_mut()[ci] = orig - step;
            let (ln, _, gm) = record(params);
            let fm = gm.value(ln).item();
            params[pi].value_mut().data_mut()[ci] = orig;

            if !fp.is_finite() || !fm.is_finite() {
                return Err(SfdaError::NonFiniteCheck {
                    param: pi,
                    coord: ci,
                });
            }
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[pi][ci];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
                worst = Some((pi, ci));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
    })
}
