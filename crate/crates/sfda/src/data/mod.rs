//! Datasets, synthetic domain pairs, normalization, and seeded batching.
//!
//! A [`DomainPair`] keeps the target labels around for evaluation, but the
//! adaptation entry point only ever receives an [`UnlabeledDataset`] via
//! [`DomainPair::target_for_adaptation`], which has no label field at all.
//! Normalization statistics come from the source alone and are applied to
//! both domains; recomputing them jointly would leak source data into the
//! adaptation phase.

mod idx;

pub use idx::{load_idx, write_idx_images, write_idx_labels};

use crate::error::SfdaError;
use crate::numerics::Tensor2D;
use crate::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A design matrix with optional labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Tensor2D,
    pub y: Option<Vec<usize>>,
    pub c: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        x: Tensor2D,
        y: Option<Vec<usize>>,
        c: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if x.rows() == 0 {
            return Err(SfdaError::InvalidConfig(
                "dataset needs at least one row".into(),
            ));
        }
        if let Some(labels) = &y {
            if labels.len() != x.rows() {
                return Err(SfdaError::ShapeMismatch {
                    context: "dataset labels".into(),
                    expected: format!("{} labels", x.rows()),
                    got: format!("{}", labels.len()),
                });
            }
            for &l in labels {
                if l >= c {
                    return Err(SfdaError::LabelOutOfRange {
                        label: l,
                        classes: c,
                    });
                }
            }
        }
        Ok(Dataset {
            x,
            y,
            c,
            name: name.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Labels, or an error naming the dataset.
    pub fn labels(&self) -> Result<&[usize]> {
        self.y
            .as_deref()
            .ok_or_else(|| SfdaError::MissingLabels(self.name.clone()))
    }
}

/// A label-free view of a dataset. The type carries no label field, which
/// is what keeps target labels structurally out of reach of adaptation.
#[derive(Debug, Clone)]
pub struct UnlabeledDataset {
    pub x: Tensor2D,
    pub c: usize,
    pub name: String,
}

impl UnlabeledDataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }
}

/// Labeled source plus target sharing one label space. Target labels are
/// retained for evaluation only.
#[derive(Debug, Clone)]
pub struct DomainPair {
    pub source: Dataset,
    pub target: Dataset,
}

impl DomainPair {
    /// The view handed to the adaptation phase: target features only.
    pub fn target_for_adaptation(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            x: self.target.x.clone(),
            c: self.target.c,
            name: self.target.name.clone(),
        }
    }
}

/// Synthetic shifted-Gaussians specification: `c` blobs with means equally
/// spaced on a circle; the target configuration is rotated, translated, and
/// its within-class spread inflated.
#[derive(Debug, Clone)]
pub struct SyntheticShiftSpec {
    pub c: usize,
    pub n_per_class: usize,
    pub radius: f64,
    pub std: f64,
    /// Target rotation in radians.
    pub rotation: f64,
    pub translation: [f64; 2],
    pub std_inflation: f64,
    pub seed: u64,
}

impl SyntheticShiftSpec {
    /// Defaults that leave a source-trained model a visible but recoverable
    /// accuracy gap on the target: c=3, radius 3, std 0.8, 45 degree
    /// rotation, translation (0.5, -0.5), inflation 1.2.
    pub fn desk_default(seed: u64) -> Self {
        SyntheticShiftSpec {
            c: 3,
            n_per_class: 200,
            radius: 3.0,
            std: 0.8,
            rotation: std::f64::consts::FRAC_PI_4,
            translation: [0.5, -0.5],
            std_inflation: 1.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c < 2 {
            return Err(SfdaError::InvalidConfig("need at least 2 classes".into()));
        }
        if self.n_per_class == 0 {
            return Err(SfdaError::InvalidConfig("n_per_class must be >= 1".into()));
        }
        let bad = |x: f64| !x.is_finite() || x <= 0.0;
        if bad(self.radius) || bad(self.std) || bad(self.std_inflation) {
            return Err(SfdaError::InvalidConfig(
                "radius, std, and inflation must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn sample_blobs(
    means: &[[f64; 2]],
    n_per_class: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> (Tensor2D, Vec<usize>) {
    let n = means.len() * n_per_class;
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for (cls, m) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            let gx: f64 = rng.sample(StandardNormal);
            let gy: f64 = rng.sample(StandardNormal);
            data.push(m[0] + std * gx);
            data.push(m[1] + std * gy);
            labels.push(cls);
        }
    }
    (Tensor2D::from_vec(n, 2, data).unwrap(), labels)
}

fn rotate(p: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Generate a shifted-Gaussians domain pair. Both domains are labeled; the
/// target labels exist for evaluation and never reach the adaptation path.
pub fn gen_shifted_gaussians(spec: &SyntheticShiftSpec) -> Result<DomainPair> {
    spec.validate()?;
    let source_means: Vec<[f64; 2]> = (0..spec.c)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / spec.c as f64;
            [spec.radius * angle.cos(), spec.radius * angle.sin()]
        })
        .collect();
    let target_means: Vec<[f64; 2]> = source_means
        .iter()
        .map(|&m| {
            let r = rotate(m, spec.rotation);
            [r[0] + spec.translation[0], r[1] + spec.translation[1]]
        })
        .collect();

    let mut src_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9E37_79B9_7F4A_7C15);
    let (sx, sy) = sample_blobs(&source_means, spec.n_per_class, spec.std, &mut src_rng);
    let (tx, ty) = sample_blobs(
        &target_means,
        spec.n_per_class,
        spec.std * spec.std_inflation,
        &mut tgt_rng,
    );
    Ok(DomainPair {
        source: Dataset::new(sx, Some(sy), spec.c, "gaussians_source")?,
        target: Dataset::new(tx, Some(ty), spec.c, "gaussians_target")?,
    })
}

/// Two interleaved half circles with Gaussian noise; the target is the same
/// construction (fresh draws) rotated about the figure's center
/// (0.5, 0.25).
pub fn gen_two_moons_shift(n: usize, noise: f64, rotation: f64, seed: u64) -> Result<DomainPair> {
    if n < 2 {
        return Err(SfdaError::InvalidConfig("two moons need n >= 2".into()));
    }
    let center = [0.5, 0.25];
    let make = |rng: &mut ChaCha8Rng, theta: f64| -> (Tensor2D, Vec<usize>) {
        let n_outer = n / 2;
        let n_inner = n - n_outer;
        let mut data = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n_outer {
            let t = std::f64::consts::PI * i as f64 / (n_outer.max(2) - 1) as f64;
            let gx: f64 = rng.sample(StandardNormal);
            let gy: f64 = rng.sample(StandardNormal);
            let p = [t.cos() + noise * gx, t.sin() + noise * gy];
            let p = [p[0] - center[0], p[1] - center[1]];
            let p = rotate(p, theta);
            data.push(p[0] + center[0]);
            data.push(p[1] + center[1]);
            labels.push(0);
        }
        for i in 0..n_inner {
            let t = std::f64::consts::PI * i as f64 / (n_inner.max(2) - 1) as f64;
            let gx: f64 = rng.sample(StandardNormal);
            let gy: f64 = rng.sample(StandardNormal);
            let p = [1.0 - t.cos() + noise * gx, 0.5 - t.sin() + noise * gy];
            let p = [p[0] - center[0], p[1] - center[1]];
            let p = rotate(p, theta);
            data.push(p[0] + center[0]);
            data.push(p[1] + center[1]);
            labels.push(1);
        }
        (Tensor2D::from_vec(n, 2, data).unwrap(), labels)
    };
    let mut src_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let (sx, sy) = make(&mut src_rng, 0.0);
    let (tx, ty) = make(&mut tgt_rng, rotation);
    Ok(DomainPair {
        source: Dataset::new(sx, Some(sy), 2, "moons_source")?,
        target: Dataset::new(tx, Some(ty), 2, "moons_target")?,
    })
}

/// Per-dimension mean/std fitted on one dataset (the source) and applied to
/// any dataset of the same width.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit on the source design matrix. Constant dimensions get std 1 so
    /// application is a pure shift there.
    pub fn fit(x: &Tensor2D) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                mean[c] += x.get(r, c);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut std = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                let v = x.get(r, c) - mean[c];
                std[c] += v * v;
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n as f64).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &Tensor2D) -> Tensor2D {
        let (n, d) = x.shape();
        assert_eq!(d, self.mean.len(), "standardizer width mismatch");
        let mut out = x.clone();
        for r in 0..n {
            for c in 0..d {
                out.set(r, c, (x.get(r, c) - self.mean[c]) / self.std[c]);
            }
        }
        out
    }

    /// Fit on the pair's source and apply to both domains.
    pub fn standardize_pair(pair: &DomainPair) -> (DomainPair, Standardizer) {
        let st = Standardizer::fit(&pair.source.x);
        let mut out = pair.clone();
        out.source.x = st.apply(&pair.source.x);
        out.target.x = st.apply(&pair.target.x);
        (out, st)
    }
}

/// Seeded index batches: one fresh permutation per `(shuffle_seed, epoch)`,
/// final short batch included.
pub fn batches(n: usize, batch_size: usize, shuffle_seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(
        shuffle_seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    idx.shuffle(&mut rng);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Gather the given rows of a matrix into a new matrix.
pub fn take_rows(x: &Tensor2D, rows: &[usize]) -> Tensor2D {
    let d = x.cols();
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Tensor2D::from_vec(rows.len(), d, data).unwrap()
}

/// Gather the given entries of a label vector.
pub fn take_labels(y: &[usize], rows: &[usize]) -> Vec<usize> {
    rows.iter().map(|&r| y[r]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_gaussians_counts_and_balance() {
        let pair = gen_shifted_gaussians(&SyntheticShiftSpec {
            c: 3,
            n_per_class: 200,
            ..SyntheticShiftSpec::desk_default(1)
        })
        .unwrap();
        assert_eq!(pair.source.n(), 600);
        assert_eq!(pair.target.n(), 600);
        let labels = pair.source.labels().unwrap();
        for cls in 0..3 {
            assert_eq!(labels.iter().filter(|&&l| l == cls).count(), 200);
        }
    }

    #[test]
    fn zero_shift_matches_source_distribution() {
        // theta = 0, no translation, inflation 1: per-class sample means of
        // source and target agree within Monte Carlo noise
        let spec = SyntheticShiftSpec {
            rotation: 0.0,
            translation: [0.0, 0.0],
            std_inflation: 1.0,
            n_per_class: 500,
            ..SyntheticShiftSpec::desk_default(3)
        };
        let pair = gen_shifted_gaussians(&spec).unwrap();
        let mean_of = |ds: &Dataset, cls: usize| -> [f64; 2] {
            let labels = ds.labels().unwrap();
            let mut m = [0.0, 0.0];
            let mut n = 0.0;
            for r in 0..ds.n() {
                if labels[r] == cls {
                    m[0] += ds.x.get(r, 0);
                    m[1] += ds.x.get(r, 1);
                    n += 1.0;
                }
            }
            [m[0] / n, m[1] / n]
        };
        for cls in 0..spec.c {
            let ms = mean_of(&pair.source, cls);
            let mt = mean_of(&pair.target, cls);
            assert!((ms[0] - mt[0]).abs() < 0.2, "class {cls}");
            assert!((ms[1] - mt[1]).abs() < 0.2, "class {cls}");
        }
    }

    #[test]
    fn pi_rotation_swaps_two_symmetric_means() {
        let spec = SyntheticShiftSpec {
            c: 2,
            rotation: std::f64::consts::PI,
            translation: [0.0, 0.0],
            std_inflation: 1.0,
            n_per_class: 400,
            ..SyntheticShiftSpec::desk_default(5)
        };
        let pair = gen_shifted_gaussians(&spec).unwrap();
        // class-0 target blob sits where class-1 source blob was
        let labels_t = pair.target.labels().unwrap();
        let mut m0 = [0.0, 0.0];
        let mut n0 = 0.0;
        for r in 0..pair.target.n() {
            if labels_t[r] == 0 {
                m0[0] += pair.target.x.get(r, 0);
                m0[1] += pair.target.x.get(r, 1);
                n0 += 1.0;
            }
        }
        m0[0] /= n0;
        m0[1] /= n0;
        // source class-1 mean is at (-radius, 0)
        assert!((m0[0] + spec.radius).abs() < 0.2);
        assert!(m0[1].abs() < 0.2);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticShiftSpec::desk_default(9);
        let a = gen_shifted_gaussians(&spec).unwrap();
        let b = gen_shifted_gaussians(&spec).unwrap();
        assert_eq!(a.source.x.data(), b.source.x.data());
        assert_eq!(a.target.x.data(), b.target.x.data());
    }

    #[test]
    fn zero_rotation_moons_match_in_distribution() {
        let pair = gen_two_moons_shift(400, 0.05, 0.0, 11).unwrap();
        // same construction, fresh draws: per-class centroids agree within
        // sampling noise
        for cls in 0..2 {
            for dim in 0..2 {
                let mean = |ds: &Dataset| {
                    let labels = ds.labels().unwrap();
                    let (mut s, mut n) = (0.0, 0.0);
                    for r in 0..ds.n() {
                        if labels[r] == cls {
                            s += ds.x.get(r, dim);
                            n += 1.0;
                        }
                    }
                    s / n
                };
                assert!(
                    (mean(&pair.source) - mean(&pair.target)).abs() < 0.1,
                    "class {cls} dim {dim}"
                );
            }
        }
    }

    #[test]
    fn two_moons_has_requested_rows_and_two_classes() {
        let pair = gen_two_moons_shift(101, 0.1, 0.5, 2).unwrap();
        assert_eq!(pair.source.n(), 101);
        assert_eq!(pair.source.c, 2);
        let labels = pair.source.labels().unwrap();
        assert!(labels.contains(&0) && labels.contains(&1));
    }

    #[test]
    fn standardizer_uses_source_stats_only() {
        let pair = gen_shifted_gaussians(&SyntheticShiftSpec::desk_default(4)).unwrap();
        let (std_pair, st) = Standardizer::standardize_pair(&pair);
        // source is exactly standardized
        let refit = Standardizer::fit(&std_pair.source.x);
        for d in 0..2 {
            assert!(refit.mean[d].abs() < 1e-9);
            assert!((refit.std[d] - 1.0).abs() < 1e-9);
        }
        // target transformed with the same statistics, not its own
        let t_refit = Standardizer::fit(&std_pair.target.x);
        assert!(t_refit.mean.iter().any(|m| m.abs() > 1e-3));
        // applying st to raw target reproduces the pair's target
        assert_eq!(st.apply(&pair.target.x).data(), std_pair.target.x.data());
    }

    #[test]
    fn batches_cover_everything_with_short_tail() {
        let b = batches(5, 2, 7, 0);
        let sizes: Vec<usize> = b.iter().map(|x| x.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let mut all: Vec<usize> = b.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn batches_deterministic_and_epoch_dependent() {
        let a = batches(32, 4, 11, 0);
        let b = batches(32, 4, 11, 0);
        assert_eq!(a, b);
        let c = batches(32, 4, 11, 1);
        assert_ne!(a, c);
    }

    #[test]
    fn unlabeled_view_strips_labels() {
        let pair = gen_shifted_gaussians(&SyntheticShiftSpec::desk_default(8)).unwrap();
        let view = pair.target_for_adaptation();
        assert_eq!(view.n(), pair.target.n());
        assert_eq!(view.x.data(), pair.target.x.data());
        // the type has no label accessor; nothing further to check here
    }
}
