//! The adaptation architecture: a feature generator `G` and a bank of `k`
//! classifier heads sharing one architecture but independent parameters.
//!
//! Forward passes are pure; recording variants register parameters on a
//! [`DiffGraph`] so the pipeline can differentiate through them. Which
//! parameters are trainable is chosen per recording via [`TrainScope`],
//! which is how the pipeline freezes the generator during worst-pair
//! separation and freezes the heads during target adaptation.

use crate::error::SfdaError;
use crate::numerics::{DiffGraph, NodeId, Parameter, Tensor2D};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// MLP feature generator layout: ReLU after every hidden layer, linear
/// final layer onto `feature_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
}

impl GeneratorSpec {
    /// Desk-scale default: two hidden layers of width 32 squeezing into a
    /// 16-dimensional feature space.
    pub fn desk_default(input_dim: usize) -> Self {
        GeneratorSpec {
            input_dim,
            hidden_dims: vec![32, 32],
            feature_dim: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.feature_dim < 1 || self.hidden_dims.iter().any(|&d| d < 1) {
            return Err(SfdaError::InvalidConfig(
                "generator dimensions must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Bank layout: `k` heads over `c` categories. `head_hidden = 0` means a
/// single linear layer; otherwise one ReLU hidden layer of that width.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBankSpec {
    pub k: usize,
    pub c: usize,
    pub head_hidden: usize,
}

impl ClassifierBankSpec {
    /// Desk-scale default: one hidden layer of width 16 per head.
    pub fn desk_default(k: usize, c: usize) -> Self {
        ClassifierBankSpec {
            k,
            c,
            head_hidden: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(SfdaError::InvalidConfig(format!(
                "need at least 2 classifiers, got k={}",
                self.k
            )));
        }
        if self.c < 2 {
            return Err(SfdaError::InvalidConfig(format!(
                "need at least 2 categories, got c={}",
                self.c
            )));
        }
        Ok(())
    }
}

/// Which parameters a recorded forward treats as trainable.
#[derive(Debug, Clone)]
pub enum TrainScope {
    /// Generator and every head.
    All,
    /// Only the listed heads; the generator is frozen.
    Heads(Vec<usize>),
    /// Only the generator; every head is frozen.
    GeneratorOnly,
}

impl TrainScope {
    fn generator_trainable(&self) -> bool {
        matches!(self, TrainScope::All | TrainScope::GeneratorOnly)
    }

    fn head_trainable(&self, head: usize) -> bool {
        match self {
            TrainScope::All => true,
            TrainScope::Heads(hs) => hs.contains(&head),
            TrainScope::GeneratorOnly => false,
        }
    }
}

/// Indices of one linear layer's weight and bias inside the flat parameter
/// vector.
#[derive(Debug, Clone)]
struct LinearRef {
    w: usize,
    b: usize,
}

/// Per-head softmax outputs, one `batch x c` probability matrix per head.
/// Rows sum to one within 1e-9.
#[derive(Debug, Clone)]
pub struct SoftmaxBankOutput {
    heads: Vec<Tensor2D>,
}

impl SoftmaxBankOutput {
    /// Validating constructor: equal shapes, entries in [0, 1], rows
    /// normalized within 1e-9. Model-produced outputs keep entries strictly
    /// inside (0, 1); hand-built one-hot fixtures sit on the boundary.
    pub fn new(heads: Vec<Tensor2D>) -> Result<Self> {
        if heads.is_empty() {
            return Err(SfdaError::InvalidConfig("empty bank output".into()));
        }
        let shape = heads[0].shape();
        for (j, h) in heads.iter().enumerate() {
            if h.shape() != shape {
                return Err(SfdaError::ShapeMismatch {
                    context: format!("bank head {j}"),
                    expected: format!("{}x{}", shape.0, shape.1),
                    got: format!("{}x{}", h.rows(), h.cols()),
                });
            }
            for r in 0..h.rows() {
                let row = h.row(r);
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(SfdaError::InvalidConfig(format!(
                        "head {j} row {r} has probabilities outside [0, 1]"
                    )));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(SfdaError::InvalidConfig(format!(
                        "head {j} row {r} sums to {s}, not 1"
                    )));
                }
            }
        }
        Ok(SoftmaxBankOutput { heads })
    }

    pub fn k(&self) -> usize {
        self.heads.len()
    }

    pub fn c(&self) -> usize {
        self.heads[0].cols()
    }

    pub fn batch(&self) -> usize {
        self.heads[0].rows()
    }

    pub fn head(&self, j: usize) -> &Tensor2D {
        &self.heads[j]
    }

    pub fn heads(&self) -> &[Tensor2D] {
        &self.heads
    }
}

/// Nodes produced by recording the bank on a graph: per-head log-softmax
/// and softmax outputs.
pub struct BankNodes {
    pub log_probs: Vec<NodeId>,
    pub probs: Vec<NodeId>,
}

/// Generator weights plus `k` classifier-head weights, with the RNG seed
/// they were initialized from.
#[derive(Debug, Clone)]
pub struct ModelState {
    gspec: GeneratorSpec,
    bspec: ClassifierBankSpec,
    seed: u64,
    params: Vec<Parameter>,
    gen_layers: Vec<LinearRef>,
    head_layers: Vec<Vec<LinearRef>>,
}

/// Initialize a model: weights drawn from `U(-sqrt(6/fan_in), +sqrt(6/fan_in))`,
/// biases zero, deterministic for a given seed.
pub fn init_model(
    gspec: GeneratorSpec,
    bspec: ClassifierBankSpec,
    seed: u64,
) -> Result<ModelState> {
    gspec.validate()?;
    bspec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();

    let mut push_linear = |in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng| -> LinearRef {
        let bound = (6.0 / in_dim as f64).sqrt();
        let data: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let w = Parameter::new(Tensor2D::from_vec(in_dim, out_dim, data).unwrap());
        let b = Parameter::new(Tensor2D::zeros(1, out_dim));
        let wi = params.len();
        params.push(w);
        let bi = params.len();
        params.push(b);
        LinearRef { w: wi, b: bi }
    };

    let mut gen_layers = Vec::new();
    let mut prev = gspec.input_dim;
    for &h in &gspec.hidden_dims {
        gen_layers.push(push_linear(prev, h, &mut rng));
        prev = h;
    }
    gen_layers.push(push_linear(prev, gspec.feature_dim, &mut rng));

    let mut head_layers = Vec::new();
    for _ in 0..bspec.k {
        let mut layers = Vec::new();
        if bspec.head_hidden > 0 {
            layers.push(push_linear(gspec.feature_dim, bspec.head_hidden, &mut rng));
            layers.push(push_linear(bspec.head_hidden, bspec.c, &mut rng));
        } else {
            layers.push(push_linear(gspec.feature_dim, bspec.c, &mut rng));
        }
        head_layers.push(layers);
    }

    Ok(ModelState {
        gspec,
        bspec,
        seed,
        params,
        gen_layers,
        head_layers,
    })
}

impl ModelState {
    pub fn generator_spec(&self) -> &GeneratorSpec {
        &self.gspec
    }

    pub fn bank_spec(&self) -> &ClassifierBankSpec {
        &self.bspec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Parameter indices of the generator, in layer order.
    pub fn generator_param_ids(&self) -> Vec<usize> {
        self.gen_layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    /// Parameter indices of one head, in layer order.
    pub fn head_param_ids(&self, head: usize) -> Vec<usize> {
        self.head_layers[head]
            .iter()
            .flat_map(|l| [l.w, l.b])
            .collect()
    }

    /// Mutable access to an id-selected subset of parameters, preserving
    /// id order. Used to step only the generator or only a worst pair.
    pub fn params_mut_by_ids(&mut self, ids: &[usize]) -> Vec<&mut Parameter> {
        let idset: Vec<usize> = ids.to_vec();
        self.params
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| idset.contains(i))
            .map(|(_, p)| p)
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Raw little-endian bytes of one head's parameter values, for
    /// frozen-head byte comparisons.
    pub fn head_bytes(&self, head: usize) -> Vec<u8> {
        let mut out = Vec::new();
        for id in self.head_param_ids(head) {
            for v in self.params[id].value().data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn record_linear(
        &self,
        g: &mut DiffGraph,
        x: NodeId,
        layer: &LinearRef,
        trainable: bool,
    ) -> NodeId {
        let (w, b) = if trainable {
            (
                g.param(layer.w, &self.params[layer.w]),
                g.param(layer.b, &self.params[layer.b]),
            )
        } else {
            (
                g.leaf(self.params[layer.w].value().clone()),
                g.leaf(self.params[layer.b].value().clone()),
            )
        };
        let z = g.matmul(x, w);
        g.add_bias(z, b)
    }

    /// Record the generator on a graph. `x` must already be a node of shape
    /// `batch x input_dim`.
    pub fn record_features(&self, g: &mut DiffGraph, x: NodeId, scope: &TrainScope) -> NodeId {
        let trainable = scope.generator_trainable();
        let mut h = x;
        let n = self.gen_layers.len();
        for (i, layer) in self.gen_layers.iter().enumerate() {
            h = self.record_linear(g, h, layer, trainable);
            if i + 1 < n {
                h = g.relu(h);
            }
        }
        h
    }

    /// Record every head on a graph over the given feature node, yielding
    /// per-head log-softmax and softmax nodes.
    pub fn record_bank(&self, g: &mut DiffGraph, feats: NodeId, scope: &TrainScope) -> BankNodes {
        let mut log_probs = Vec::with_capacity(self.bspec.k);
        let mut probs = Vec::with_capacity(self.bspec.k);
        for (j, layers) in self.head_layers.iter().enumerate() {
            let trainable = scope.head_trainable(j);
            let mut h = feats;
            let n = layers.len();
            for (i, layer) in layers.iter().enumerate() {
                h = self.record_linear(g, h, layer, trainable);
                if i + 1 < n {
                    h = g.relu(h);
                }
            }
            let ls = g.log_softmax(h);
            let p = g.exp(ls);
            log_probs.push(ls);
            probs.push(p);
        }
        BankNodes { log_probs, probs }
    }

    fn check_cols(&self, x: &Tensor2D, expected: usize, what: &str) -> Result<()> {
        if x.cols() != expected {
            return Err(SfdaError::ShapeMismatch {
                context: what.to_string(),
                expected: format!("{expected} columns"),
                got: format!("{}", x.cols()),
            });
        }
        Ok(())
    }

    /// Pure feature pass: `batch x input_dim` in, `batch x feature_dim` out.
    pub fn forward_features(&self, x: &Tensor2D) -> Result<Tensor2D> {
        self.check_cols(x, self.gspec.input_dim, "forward_features input")?;
        let mut g = DiffGraph::new();
        let xn = g.leaf(x.clone());
        let f = self.record_features(&mut g, xn, &TrainScope::GeneratorOnly);
        Ok(g.value(f).clone())
    }

    /// Pure bank pass over precomputed features.
    pub fn forward_bank(&self, feats: &Tensor2D) -> Result<SoftmaxBankOutput> {
        self.check_cols(feats, self.gspec.feature_dim, "forward_bank features")?;
        let mut g = DiffGraph::new();
        let fnode = g.leaf(feats.clone());
        let bank = self.record_bank(&mut g, fnode, &TrainScope::GeneratorOnly);
        let heads = bank.probs.iter().map(|&p| g.value(p).clone()).collect();
        SoftmaxBankOutput::new(heads)
    }

    /// Features then bank in one call.
    pub fn forward(&self, x: &Tensor2D) -> Result<SoftmaxBankOutput> {
        let feats = self.forward_features(x)?;
        self.forward_bank(&feats)
    }
}

/// Head-averaged prediction: label is the argmax of `mean_j p^j` with ties
/// broken toward the lowest class index; confidence is the max entry of the
/// averaged vector.
pub fn ensemble_predict(out: &SoftmaxBankOutput) -> (Vec<usize>, Vec<f64>) {
    let (n, c, k) = (out.batch(), out.c(), out.k());
    let mut labels = Vec::with_capacity(n);
    let mut confidence = Vec::with_capacity(n);
    for r in 0..n {
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for cls in 0..c {
            let mut p = 0.0;
            for j in 0..k {
                p += out.head(j).get(r, cls);
            }
            p /= k as f64;
            if p > best_p {
                best_p = p;
                best = cls;
            }
        }
        labels.push(best);
        confidence.push(best_p);
    }
    (labels, confidence)
}

/// Head-averaged probability matrix `mean_j p^j` (batch x c).
pub fn ensemble_probs(out: &SoftmaxBankOutput) -> Tensor2D {
    let (n, c, k) = (out.batch(), out.c(), out.k());
    let mut avg = Tensor2D::zeros(n, c);
    for j in 0..k {
        avg.add_assign(out.head(j));
    }
    let inv = 1.0 / k as f64;
    for v in avg.data_mut() {
        *v *= inv;
    }
    avg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(seed: u64) -> ModelState {
        init_model(
            GeneratorSpec {
                input_dim: 2,
                hidden_dims: vec![8],
                feature_dim: 4,
            },
            ClassifierBankSpec {
                k: 3,
                c: 3,
                head_hidden: 0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn same_seed_gives_identical_models() {
        let a = tiny_model(11);
        let b = tiny_model(11);
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.value().data(), pb.value().data());
        }
    }

    #[test]
    fn different_seeds_differ_somewhere() {
        let a = tiny_model(11);
        let b = tiny_model(12);
        let differs = a
            .params()
            .iter()
            .zip(b.params().iter())
            .any(|(pa, pb)| pa.value().data() != pb.value().data());
        assert!(differs);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let m = init_model(
            GeneratorSpec {
                input_dim: 4,
                hidden_dims: vec![],
                feature_dim: 8,
            },
            ClassifierBankSpec {
                k: 2,
                c: 2,
                head_hidden: 0,
            },
            3,
        )
        .unwrap();
        // first layer has fan_in 4, bound sqrt(6/4) = sqrt(1.5)
        let bound = (6.0f64 / 4.0).sqrt();
        let wid = m.generator_param_ids()[0];
        assert!(m.params()[wid]
            .value()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_input_zero_bias_single_layer_gives_zero_features() {
        let m = init_model(
            GeneratorSpec {
                input_dim: 3,
                hidden_dims: vec![],
                feature_dim: 5,
            },
            ClassifierBankSpec {
                k: 2,
                c: 2,
                head_hidden: 0,
            },
            1,
        )
        .unwrap();
        let f = m.forward_features(&Tensor2D::zeros(4, 3)).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rows_are_independent_without_batch_norm() {
        let m = tiny_model(5);
        let x32 = Tensor2D::from_vec(2, 2, vec![0.3, -0.7, 2.0, 1.0]).unwrap();
        let single = Tensor2D::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let f_batch = m.forward_features(&x32).unwrap();
        let f_one = m.forward_features(&single).unwrap();
        assert_eq!(f_batch.row(0), f_one.row(0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = tiny_model(5);
        assert!(m.forward_features(&Tensor2D::zeros(4, 3)).is_err());
        assert!(m.forward_bank(&Tensor2D::zeros(4, 9)).is_err());
    }

    #[test]
    fn zero_head_weights_give_uniform_rows() {
        let mut m = tiny_model(5);
        for j in 0..3 {
            for id in m.head_param_ids(j) {
                m.params_mut()[id].value_mut().fill_zero();
            }
        }
        let out = m
            .forward(&Tensor2D::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap())
            .unwrap();
        for j in 0..3 {
            for r in 0..2 {
                for cls in 0..3 {
                    assert!((out.head(j).get(r, cls) - 1.0 / 3.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let m = tiny_model(9);
        let out = m
            .forward(&Tensor2D::from_vec(3, 2, vec![0.1, 0.2, -1.0, 0.4, 2.0, -0.3]).unwrap())
            .unwrap();
        for j in 0..out.k() {
            for r in 0..out.batch() {
                let s: f64 = out.head(j).row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn logit_shift_invariance_per_head() {
        // adding a constant to all logits of one head leaves softmax fixed:
        // exercised through the bias of a single-linear head
        let m = tiny_model(13);
        let x = Tensor2D::from_vec(2, 2, vec![0.5, -0.2, 1.5, 0.3]).unwrap();
        let before = m.forward(&x).unwrap();
        let mut shifted = m.clone();
        let bias_id = shifted.head_param_ids(1)[1];
        for v in shifted.params_mut()[bias_id].value_mut().data_mut() {
            *v += 3.7;
        }
        let after = shifted.forward(&x).unwrap();
        for r in 0..2 {
            for cls in 0..3 {
                assert!((before.head(1).get(r, cls) - after.head(1).get(r, cls)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ensemble_tie_breaks_to_lowest_class() {
        let p1 = Tensor2D::from_vec(1, 2, vec![0.9, 0.1]).unwrap();
        let p2 = Tensor2D::from_vec(1, 2, vec![0.1, 0.9]).unwrap();
        let out = SoftmaxBankOutput::new(vec![p1, p2]).unwrap();
        let (labels, conf) = ensemble_predict(&out);
        assert_eq!(labels, vec![0]);
        assert!((conf[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ensemble_hand_average() {
        let heads = vec![
            Tensor2D::from_vec(1, 3, vec![0.6, 0.3, 0.1]).unwrap(),
            Tensor2D::from_vec(1, 3, vec![0.2, 0.5, 0.3]).unwrap(),
            Tensor2D::from_vec(1, 3, vec![0.1, 0.2, 0.7]).unwrap(),
        ];
        let out = SoftmaxBankOutput::new(heads).unwrap();
        let (labels, conf) = ensemble_predict(&out);
        assert_eq!(labels, vec![2]);
        assert!((conf[0] - (0.1 + 0.3 + 0.7) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_heads_agree_one_hot() {
        let one_hot = Tensor2D::from_vec(1, 3, vec![0.0, 0.0, 1.0]).unwrap();
        let out = SoftmaxBankOutput::new(vec![one_hot.clone(), one_hot]).unwrap();
        let (labels, conf) = ensemble_predict(&out);
        assert_eq!(labels, vec![2]);
        assert_eq!(conf, vec![1.0]);
    }

    #[test]
    fn forward_is_pure() {
        let m = tiny_model(21);
        let x = Tensor2D::from_vec(2, 2, vec![0.4, 1.2, -0.8, 0.9]).unwrap();
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        for j in 0..a.k() {
            assert_eq!(a.head(j).data(), b.head(j).data());
        }
    }
}
