//! Ground-truth conditionals `p(x|y)`, per-center datasets and the central
//! server's record of the label distribution seen so far.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::Mat;

/// Index into the fixed label vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelId(pub usize);

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One diagonal Gaussian component of a label's mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Component {
    pub fn new(weight: f64, mean: Vec<f64>, var: Vec<f64>) -> Self {
        Self { weight, mean, var }
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.var)
            .zip(x)
            .map(|((m, v), xi)| -0.5 * ((2.0 * PI * v).ln() + (xi - m) * (xi - m) / v))
            .sum()
    }
}

/// Per-label mixture of diagonal Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct CondGaussianMixture {
    dim: usize,
    labels: Vec<Vec<Component>>,
}

const WEIGHT_TOL: f64 = 1e-12;

impl CondGaussianMixture {
    /// `labels[y]` lists the components of `p(x|y)`.
    pub fn new(dim: usize, labels: Vec<Vec<Component>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("data dimension must be positive".into()));
        }
        if labels.is_empty() {
            return Err(Error::Config("label vocabulary is empty".into()));
        }
        for (y, comps) in labels.iter().enumerate() {
            if comps.is_empty() {
                return Err(Error::Config(format!("label {y} has no components")));
            }
            for c in comps {
                if c.mean.len() != dim || c.var.len() != dim {
                    return Err(Error::Config(format!(
                        "label {y}: component mean/var must have {dim} entries"
                    )));
                }
                if !(c.weight >= 0.0) || !c.weight.is_finite() {
                    return Err(Error::Config(format!("label {y}: negative weight")));
                }
                if c.var.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::Config(format!(
                        "label {y}: variances must be positive"
                    )));
                }
                if c.mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::Config(format!("label {y}: non-finite mean")));
                }
            }
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            if (total - 1.0).abs() > WEIGHT_TOL {
                return Err(Error::Config(format!(
                    "label {y}: weights must sum to 1 (got {total})"
                )));
            }
        }
        Ok(Self { dim, labels })
    }

    /// One single-component label per `(mean, var)` pair, all 1-D.
    pub fn one_dim(params: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            1,
            params
                .iter()
                .map(|&(m, v)| vec![Component::new(1.0, vec![m], vec![v])])
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.labels.len()
    }

    pub fn components(&self, y: LabelId) -> Result<&[Component]> {
        self.labels
            .get(y.0)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Domain(format!("unknown label {y}")))
    }

    pub fn check_label(&self, y: LabelId) -> Result<()> {
        self.components(y).map(|_| ())
    }

    /// Draws one `x ~ p(x|y)`.
    pub fn sample<R: Rng + ?Sized>(&self, y: LabelId, rng: &mut R) -> Result<Vec<f64>> {
        let comps = self.components(y)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = &comps[comps.len() - 1];
        for c in comps {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        Ok(chosen
            .mean
            .iter()
            .zip(&chosen.var)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect())
    }

    /// Draws one sample per label, returned as a `[dim x labels.len()]` batch.
    pub fn sample_batch<R: Rng + ?Sized>(&self, labels: &[LabelId], rng: &mut R) -> Result<Mat> {
        let mut out = Mat::zeros(self.dim, labels.len());
        for (c, &y) in labels.iter().enumerate() {
            let x = self.sample(y, rng)?;
            for (r, v) in x.into_iter().enumerate() {
                out.set(r, c, v);
            }
        }
        Ok(out)
    }

    /// Exact density `p(x|y)`.
    pub fn pdf(&self, x: &[f64], y: LabelId) -> Result<f64> {
        let comps = self.components(y)?;
        if x.len() != self.dim {
            return Err(crate::error::shape_err("pdf_conditional", self.dim, x.len()));
        }
        Ok(comps
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight * c.log_pdf(x).exp())
            .sum())
    }
}

/// `π_k = n_k / Σ n`.
pub fn mixture_weights(sizes: &[u64]) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::Config("no data centers".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::Config("data center sizes must be positive".into()));
    }
    let total: u64 = sizes.iter().sum();
    Ok(sizes.iter().map(|&n| n as f64 / total as f64).collect())
}

fn sample_counts<R: Rng + ?Sized>(
    counts: &BTreeMap<LabelId, u64>,
    total: u64,
    m: usize,
    rng: &mut R,
) -> Vec<LabelId> {
    (0..m)
        .map(|_| {
            let mut u = rng.random_range(0..total);
            for (&y, &c) in counts {
                if u < c {
                    return y;
                }
                u -= c;
            }
            unreachable!("u < total")
        })
        .collect()
}

fn positive_support(counts: &BTreeMap<LabelId, u64>) -> BTreeSet<LabelId> {
    counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(&y, _)| y)
        .collect()
}

/// A center's private dataset: label counts, with real samples drawn from the
/// shared ground truth only inside the crate.
///
/// Real samples never leave the owning center:
///
/// ```compile_fail
/// use std::{collections::BTreeMap, sync::Arc};
/// use rand::SeedableRng;
/// use tdgan::data::{CenterDataset, CondGaussianMixture, LabelId};
///
/// let truth = Arc::new(CondGaussianMixture::one_dim(&[(0.0, 1.0)]).unwrap());
/// let ds = CenterDataset::new("a", BTreeMap::from([(LabelId(0), 4)]), truth).unwrap();
/// let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
/// let _x = ds.draw_real(&[LabelId(0)], &mut rng);
/// ```
#[derive(Debug, Clone)]
pub struct CenterDataset {
    center_id: String,
    label_counts: BTreeMap<LabelId, u64>,
    size: u64,
    truth: Arc<CondGaussianMixture>,
}

impl CenterDataset {
    pub fn new(
        center_id: impl Into<String>,
        label_counts: BTreeMap<LabelId, u64>,
        truth: Arc<CondGaussianMixture>,
    ) -> Result<Self> {
        let center_id = center_id.into();
        for &y in label_counts.keys() {
            truth.check_label(y)?;
        }
        let size: u64 = label_counts.values().sum();
        if size == 0 {
            return Err(Error::Config(format!("center {center_id} holds no data")));
        }
        Ok(Self {
            center_id,
            label_counts,
            size,
            truth,
        })
    }

    pub fn id(&self) -> &str {
        &self.center_id
    }

    /// `n_t^k`.
    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn label_counts(&self) -> &BTreeMap<LabelId, u64> {
        &self.label_counts
    }

    pub fn truth(&self) -> &Arc<CondGaussianMixture> {
        &self.truth
    }

    /// `g_t^k(y)` as normalized counts.
    pub fn marginal(&self) -> BTreeMap<LabelId, f64> {
        self.label_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&y, &c)| (y, c as f64 / self.size as f64))
            .collect()
    }

    pub fn support(&self) -> BTreeSet<LabelId> {
        positive_support(&self.label_counts)
    }

    /// `m` iid labels from this center's marginal.
    pub fn sample_labels<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<LabelId> {
        sample_counts(&self.label_counts, self.size, m, rng)
    }

    /// Real samples paired with `labels`. Crate-private: only a center's own
    /// discriminator update calls this.
    pub(crate) fn draw_real<R: Rng + ?Sized>(&self, labels: &[LabelId], rng: &mut R) -> Result<Mat> {
        if let Some(y) = labels
            .iter()
            .find(|y| self.label_counts.get(y).copied().unwrap_or(0) == 0)
        {
            return Err(Error::Domain(format!(
                "center {} holds no data for label {y}",
                self.center_id
            )));
        }
        self.truth.sample_batch(labels, rng)
    }
}

/// The central server's empirical label distribution `s_t(y)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelStore {
    counts: BTreeMap<LabelId, u64>,
    total: u64,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: BTreeMap<LabelId, u64>) -> Self {
        let total = counts.values().sum();
        Self { counts, total }
    }

    pub fn counts(&self) -> &BTreeMap<LabelId, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn probability(&self, y: LabelId) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(&y).copied().unwrap_or(0) as f64 / self.total as f64
    }

    /// Normalized distribution over the support.
    pub fn distribution(&self) -> BTreeMap<LabelId, f64> {
        self.counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&y, &c)| (y, c as f64 / self.total as f64))
            .collect()
    }

    /// `Ω`: labels with positive count.
    pub fn support(&self) -> BTreeSet<LabelId> {
        positive_support(&self.counts)
    }

    /// Mixing weight `α = n_new / (N_old + n_new)` that merging `new_total`
    /// more samples would use.
    pub fn alpha_for(&self, new_total: u64) -> f64 {
        new_total as f64 / (self.total + new_total) as f64
    }

    /// Adds `new_labels` to the record and returns the mixing weight `α`, so
    /// that the new distribution is `(1 - α) s_old + α g_new`.
    pub fn merge(&mut self, new_labels: &BTreeMap<LabelId, u64>) -> Result<f64> {
        let added: u64 = new_labels.values().sum();
        if added == 0 {
            return Err(Error::Config(
                "merged label counts must contain a positive count".into(),
            ));
        }
        let alpha = self.alpha_for(added);
        for (&y, &c) in new_labels {
            if c > 0 {
                *self.counts.entry(y).or_insert(0) += c;
            }
        }
        self.total += added;
        Ok(alpha)
    }

    /// Non-mutating form of [`LabelStore::merge`].
    pub fn merged(&self, new_labels: &BTreeMap<LabelId, u64>) -> Result<(LabelStore, f64)> {
        let mut out = self.clone();
        let alpha = out.merge(new_labels)?;
        Ok((out, alpha))
    }

    /// `m` iid draws from the stored distribution.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<LabelId>> {
        if self.total == 0 {
            return Err(Error::State("label store is empty".into()));
        }
        Ok(sample_counts(&self.counts, self.total, m, rng))
    }
}

/// Labels new at this step: `Ω(g_t) − Ω(s_{t−1})`.
pub fn new_support(previous: &LabelStore, current: &BTreeSet<LabelId>) -> BTreeSet<LabelId> {
    current.difference(&previous.support()).copied().collect()
}

/// Previously seen labels with no online supervision: `Ω(s_{t−1}) − Ω(g_t)`.
pub fn absent_support(previous: &LabelStore, current: &BTreeSet<LabelId>) -> BTreeSet<LabelId> {
    previous.support().difference(current).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn counts(pairs: &[(usize, u64)]) -> BTreeMap<LabelId, u64> {
        pairs.iter().map(|&(y, c)| (LabelId(y), c)).collect()
    }

    #[test]
    fn rejects_bad_mixtures() {
        let bad_weights = CondGaussianMixture::new(
            1,
            vec![vec![
                Component::new(0.3, vec![0.0], vec![1.0]),
                Component::new(0.3, vec![1.0], vec![1.0]),
            ]],
        );
        let msg = bad_weights.unwrap_err().to_string();
        assert!(msg.contains("weights must sum to 1"), "{msg}");
        assert!(CondGaussianMixture::new(1, vec![vec![Component::new(1.0, vec![0.0], vec![0.0])]]).is_err());
        assert!(CondGaussianMixture::new(2, vec![vec![Component::new(1.0, vec![0.0], vec![1.0])]]).is_err());
    }

    #[test]
    fn degenerate_component_samples_its_mean() {
        let t = CondGaussianMixture::new(
            2,
            vec![vec![Component::new(1.0, vec![1.5, -2.0], vec![1e-12, 1e-12])]],
        )
        .unwrap();
        let mut r = rng(1);
        for _ in 0..100 {
            let x = t.sample(LabelId(0), &mut r).unwrap();
            assert!((x[0] - 1.5).abs() < 1e-5 && (x[1] + 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let (mu, var) = ([0.7, -1.2], [0.5, 2.0]);
        let t = CondGaussianMixture::new(
            2,
            vec![vec![Component::new(1.0, mu.to_vec(), var.to_vec())]],
        )
        .unwrap();
        let n = 100_000;
        let mut r = rng(2);
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let x = t.sample(LabelId(0), &mut r).unwrap();
            sum[0] += x[0];
            sum[1] += x[1];
        }
        for d in 0..2 {
            let bound = 4.0 * var[d].sqrt() / (n as f64).sqrt();
            assert!((sum[d] / n as f64 - mu[d]).abs() < bound);
        }
    }

    #[test]
    fn component_frequencies_follow_weights() {
        let t = CondGaussianMixture::new(
            1,
            vec![vec![
                Component::new(0.5, vec![-5.0], vec![0.01]),
                Component::new(0.5, vec![5.0], vec![0.01]),
            ]],
        )
        .unwrap();
        let n = 10_000;
        let mut r = rng(3);
        let pos = (0..n)
            .filter(|_| t.sample(LabelId(0), &mut r).unwrap()[0] > 0.0)
            .count();
        // binomial sd is 0.005 at n = 1e4; 0.02 is four sd.
        assert!((pos as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn unknown_label_is_a_domain_error() {
        let t = CondGaussianMixture::one_dim(&[(0.0, 1.0)]).unwrap();
        assert!(matches!(t.sample(LabelId(1), &mut rng(0)), Err(Error::Domain(_))));
        assert!(matches!(t.pdf(&[0.0], LabelId(3)), Err(Error::Domain(_))));
    }

    #[test]
    fn pdf_closed_forms() {
        let std = CondGaussianMixture::one_dim(&[(0.0, 1.0)]).unwrap();
        assert!((std.pdf(&[0.0], LabelId(0)).unwrap() - 0.398_942_280_4).abs() < 1e-10);
        let two = CondGaussianMixture::new(
            1,
            vec![vec![
                Component::new(0.5, vec![-1.0], vec![1.0]),
                Component::new(0.5, vec![1.0], vec![1.0]),
            ]],
        )
        .unwrap();
        assert!((two.pdf(&[0.0], LabelId(0)).unwrap() - 0.241_970_724_5).abs() < 1e-10);
    }

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
        h * (0.5 * f(lo) + inner + 0.5 * f(hi))
    }

    #[test]
    fn pdf_integrates_to_one_1d_and_2d() {
        let t = CondGaussianMixture::new(
            1,
            vec![vec![
                Component::new(0.25, vec![-1.0], vec![0.3]),
                Component::new(0.75, vec![2.0], vec![1.5]),
            ]],
        )
        .unwrap();
        let sd = 1.5f64.sqrt();
        let mass = trapezoid(|x| t.pdf(&[x], LabelId(0)).unwrap(), -1.0 - 10.0 * sd, 2.0 + 10.0 * sd, 20_000);
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");

        let t2 = CondGaussianMixture::new(
            2,
            vec![vec![
                Component::new(0.6, vec![0.0, 1.0], vec![0.5, 1.0]),
                Component::new(0.4, vec![1.0, -1.0], vec![1.0, 0.25]),
            ]],
        )
        .unwrap();
        let (lo, hi, n) = (-11.0, 11.0, 600);
        let mass2 = trapezoid(
            |x| trapezoid(|y| t2.pdf(&[x, y], LabelId(0)).unwrap(), lo, hi, n),
            lo,
            hi,
            n,
        );
        assert!((mass2 - 1.0).abs() < 1e-6, "{mass2}");
    }

    #[test]
    fn mixture_weight_examples() {
        assert_eq!(mixture_weights(&[64, 64]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(mixture_weights(&[16, 48]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(mixture_weights(&[7]).unwrap(), vec![1.0]);
        assert!(matches!(mixture_weights(&[]), Err(Error::Config(_))));
        assert!(matches!(mixture_weights(&[3, 0]), Err(Error::Config(_))));
    }

    #[test]
    fn merge_examples() {
        let mut s = LabelStore::from_counts(counts(&[(0, 2)]));
        let a = s.merge(&counts(&[(1, 2)])).unwrap();
        assert_eq!(a, 0.5);
        assert_eq!(s.probability(LabelId(0)), 0.5);
        assert_eq!(s.probability(LabelId(1)), 0.5);

        let mut e = LabelStore::new();
        let a = e.merge(&counts(&[(3, 5)])).unwrap();
        assert_eq!(a, 1.0);
        assert_eq!(e.distribution(), BTreeMap::from([(LabelId(3), 1.0)]));

        let old = LabelStore::from_counts(counts(&[(0, 30)]));
        let new = counts(&[(0, 10), (1, 20)]);
        let (merged, a) = old.merged(&new).unwrap();
        assert_eq!(a, 0.5);
        assert_eq!(merged.probability(LabelId(0)), 40.0 / 60.0);
        assert_eq!(merged.probability(LabelId(1)), 20.0 / 60.0);
        // (1 - α) s + α g with s = [1, 0], g = [1/3, 2/3]
        let mix0 = (1.0 - a) * 1.0 + a * (10.0 / 30.0);
        let mix1 = (1.0 - a) * 0.0 + a * (20.0 / 30.0);
        assert!((merged.probability(LabelId(0)) - mix0).abs() < 1e-15);
        assert!((merged.probability(LabelId(1)) - mix1).abs() < 1e-15);

        assert!(matches!(old.merged(&counts(&[(0, 0)])), Err(Error::Config(_))));
    }

    #[test]
    fn store_sampling() {
        let point = LabelStore::from_counts(counts(&[(2, 9)]));
        assert!(point.sample(50, &mut rng(0)).unwrap().iter().all(|&y| y == LabelId(2)));

        let uni = LabelStore::from_counts(counts(&[(0, 1), (1, 1)]));
        let draws = uni.sample(10_000, &mut rng(1)).unwrap();
        let zeros = draws.iter().filter(|&&y| y == LabelId(0)).count();
        assert!((zeros as f64 / 1e4 - 0.5).abs() < 0.02);
        assert_eq!(uni.sample(20, &mut rng(5)).unwrap(), uni.sample(20, &mut rng(5)).unwrap());

        assert!(matches!(LabelStore::new().sample(1, &mut rng(0)), Err(Error::State(_))));
    }

    #[test]
    fn support_examples() {
        let s = LabelStore::from_counts(counts(&[(2, 5), (7, 1)]));
        assert_eq!(s.support(), BTreeSet::from([LabelId(2), LabelId(7)]));
        assert!(LabelStore::new().support().is_empty());
        let mut s = LabelStore::from_counts(counts(&[(1, 1)]));
        s.merge(&counts(&[(0, 1)])).unwrap();
        assert_eq!(s.support(), BTreeSet::from([LabelId(0), LabelId(1)]));
        assert!(LabelStore::from_counts(counts(&[(4, 0)])).support().is_empty());
    }

    #[test]
    fn new_and_absent_support() {
        let prev = LabelStore::from_counts(counts(&[(0, 3), (1, 3)]));
        let cur = BTreeSet::from([LabelId(1), LabelId(2)]);
        assert_eq!(new_support(&prev, &cur), BTreeSet::from([LabelId(2)]));
        assert_eq!(absent_support(&prev, &cur), BTreeSet::from([LabelId(0)]));
    }

    #[test]
    fn center_dataset_contract() {
        let truth = Arc::new(CondGaussianMixture::one_dim(&[(0.0, 1.0), (3.0, 1.0)]).unwrap());
        let ds = CenterDataset::new("a", counts(&[(0, 16), (1, 48)]), truth.clone()).unwrap();
        assert_eq!(ds.size(), 64);
        assert_eq!(ds.marginal()[&LabelId(1)], 0.75);
        assert!(ds.draw_real(&[LabelId(0), LabelId(1)], &mut rng(0)).is_ok());
        let only0 = CenterDataset::new("b", counts(&[(0, 4)]), truth.clone()).unwrap();
        assert!(matches!(only0.draw_real(&[LabelId(1)], &mut rng(0)), Err(Error::Domain(_))));
        assert!(CenterDataset::new("c", counts(&[(0, 0)]), truth.clone()).is_err());
        assert!(CenterDataset::new("d", counts(&[(5, 1)]), truth).is_err());
    }
}
