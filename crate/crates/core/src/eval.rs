//! Ground-truth-aware evaluation: energy distance, the four training methods
//! and numerical checks of the two loss-level guarantees.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{CenterDataset, CondGaussianMixture, LabelId, LabelStore};
use crate::error::{Error, Result};
use crate::federation::{run_scenario, scaled_iterations, RunKeys, RunOptions, Scenario, TaskSpec};
use crate::gan::{
    disc_update, optimal_disc_value, reminding_loss, reminding_loss_and_grads, sample_noise, scheduled_lr,
    Discriminator, Generator, LabeledBatch,
};
use crate::numeric::{AdamHyper, AdamState, Mat};
use crate::rng::{purpose, stream};

/// Energy distance with diagonal-free within-set means, clamped at zero.
pub fn energy_distance(a: &Mat, b: &Mat) -> Result<f64> {
    energy_distance_raw(a, b).map(|v| v.max(0.0))
}

/// `2·mean‖A_i − B_j‖ − mean_{i≠i'}‖A_i − A_i'‖ − mean_{j≠j'}‖B_j − B_j'‖`.
///
/// Samples are columns. The value is exactly symmetric in its arguments.
pub fn energy_distance_raw(a: &Mat, b: &Mat) -> Result<f64> {
    if a.cols() == 0 || b.cols() == 0 {
        return Err(Error::Config("energy distance needs non-empty sample sets".into()));
    }
    if a.rows() != b.rows() {
        return Err(crate::error::shape_err("energy_distance", a.rows(), b.rows()));
    }
    if a.rows() == 1 {
        Ok(energy_distance_sorted(a.data(), b.data()))
    } else {
        Ok(energy_distance_pairwise(a, b))
    }
}

/// `Σ_{i<j} |x_i − x_j|` for sorted `x`.
fn sorted_pair_sum(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(j, &v)| v * (2.0 * j as f64 - (n - 1.0)))
        .sum()
}

fn within_mean(pair_sum: f64, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        2.0 * pair_sum / (n as f64 * (n as f64 - 1.0))
    }
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn energy_distance_sorted(a: &[f64], b: &[f64]) -> f64 {
    let sa = sorted(a);
    let sb = sorted(b);
    let mut union = Vec::with_capacity(a.len() + b.len());
    union.extend_from_slice(&sa);
    union.extend_from_slice(&sb);
    union.sort_by(f64::total_cmp);
    let (saa, sbb) = (sorted_pair_sum(&sa), sorted_pair_sum(&sb));
    let cross = (sorted_pair_sum(&union) - (saa + sbb)) / (a.len() as f64 * b.len() as f64);
    2.0 * cross - (within_mean(saa, a.len()) + within_mean(sbb, b.len()))
}

fn col_dist(a: &Mat, i: usize, b: &Mat, j: usize) -> f64 {
    (0..a.rows())
        .map(|r| {
            let d = a.get(r, i) - b.get(r, j);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn pair_sum(x: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..x.cols() {
        for j in i + 1..x.cols() {
            s += col_dist(x, i, x, j);
        }
    }
    s
}

fn energy_distance_pairwise(a: &Mat, b: &Mat) -> f64 {
    let (n, m) = (a.cols(), b.cols());
    // Both summation orders, so swapping the arguments gives the same bits.
    let mut ab = 0.0;
    for i in 0..n {
        for j in 0..m {
            ab += col_dist(a, i, b, j);
        }
    }
    let mut ba = 0.0;
    for j in 0..m {
        for i in 0..n {
            ba += col_dist(b, j, a, i);
        }
    }
    let cross = (ab + ba) / (2.0 * (n as f64 * m as f64));
    2.0 * cross - (within_mean(pair_sum(a), n) + within_mean(pair_sum(b), m))
}

/// Anything that can produce samples of `x | y`.
pub trait ConditionalSampler {
    fn sample_label(&self, y: LabelId, n: usize, rng: &mut dyn rand::RngCore) -> Result<Mat>;
}

impl ConditionalSampler for Generator {
    fn sample_label(&self, y: LabelId, n: usize, rng: &mut dyn rand::RngCore) -> Result<Mat> {
        if y.0 >= self.vocab() {
            return Err(Error::Domain(format!("unknown label {y}")));
        }
        let noise = sample_noise(self.noise_dim(), n, rng);
        self.generate(&noise, &vec![y; n])
    }
}

impl ConditionalSampler for CondGaussianMixture {
    fn sample_label(&self, y: LabelId, n: usize, rng: &mut dyn rand::RngCore) -> Result<Mat> {
        self.sample_batch(&vec![y; n], rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Tdgan,
    Finetune,
    Joint,
    Local,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Tdgan, Method::Finetune, Method::Joint, Method::Local];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tdgan => "tdgan",
            Method::Finetune => "finetune",
            Method::Joint => "joint",
            Method::Local => "local",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    EnergyDistance,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::EnergyDistance => "energy_distance",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: Method,
    pub seed: u64,
    /// 1-based task index.
    pub task: usize,
    pub label: LabelId,
    pub metric: Metric,
    pub value: f64,
}

impl MetricRow {
    fn sort_key(&self) -> (&'static str, u64, usize, LabelId) {
        (self.method.as_str(), self.seed, self.task, self.label)
    }
}

/// Sorts rows by `(method, seed, task, label)`, methods by name.
pub fn canonicalize(rows: &mut [MetricRow]) {
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Who produced the samples being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowContext {
    pub method: Method,
    pub seed: u64,
    pub task: usize,
}

/// Number of generated and true samples per label.
pub const N_EVAL: usize = 2000;

/// Energy distance between `n_eval` draws of `sampler` and of the truth, for
/// every label in `labels`. Streams depend on `(seed, task, label)` only.
pub fn eval_generator(
    sampler: &dyn ConditionalSampler,
    truth: &CondGaussianMixture,
    labels: &BTreeSet<LabelId>,
    n_eval: usize,
    ctx: RowContext,
) -> Result<Vec<MetricRow>> {
    labels
        .iter()
        .map(|&y| {
            truth.check_label(y)?;
            let mut fake_rng = stream(ctx.seed, &[purpose::EVAL, ctx.task as u64, y.0 as u64, 0]);
            let mut true_rng = stream(ctx.seed, &[purpose::EVAL, ctx.task as u64, y.0 as u64, 1]);
            let fake = sampler.sample_label(y, n_eval, &mut fake_rng)?;
            let real = truth.sample_label(y, n_eval, &mut true_rng)?;
            Ok(MetricRow {
                method: ctx.method,
                seed: ctx.seed,
                task: ctx.task,
                label: y,
                metric: Metric::EnergyDistance,
                value: energy_distance(&fake, &real)?,
            })
        })
        .collect()
}

/// Empirical `q`-quantile of the truth-vs-truth energy distance for label `y`.
pub fn null_quantile(
    truth: &CondGaussianMixture,
    y: LabelId,
    n_eval: usize,
    reps: usize,
    q: f64,
    seed: u64,
) -> Result<f64> {
    if reps == 0 || !(0.0..=1.0).contains(&q) {
        return Err(Error::Config("null calibration needs reps >= 1 and q in [0, 1]".into()));
    }
    let mut rng = stream(seed, &[purpose::EVAL, u64::MAX, y.0 as u64]);
    let mut values = (0..reps)
        .map(|_| {
            let a = truth.sample_label(y, n_eval, &mut rng)?;
            let b = truth.sample_label(y, n_eval, &mut rng)?;
            energy_distance(&a, &b)
        })
        .collect::<Result<Vec<_>>>()?;
    values.sort_by(f64::total_cmp);
    let idx = ((q * reps as f64).ceil() as usize).clamp(1, reps) - 1;
    Ok(values[idx])
}

/// `ε_stat`: the largest per-label null quantile over `labels`.
pub fn null_threshold(
    truth: &CondGaussianMixture,
    labels: &BTreeSet<LabelId>,
    n_eval: usize,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    labels
        .iter()
        .map(|&y| null_quantile(truth, y, n_eval, reps, 0.95, seed))
        .try_fold(0.0f64, |acc, v| Ok(acc.max(v?)))
}

fn eval_snapshots(
    s: &Scenario,
    method: Method,
    seed: u64,
    snapshots: &[Generator],
    supports: &[BTreeSet<LabelId>],
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for (i, (g, support)) in snapshots.iter().zip(supports).enumerate() {
        let ctx = RowContext {
            method,
            seed,
            task: i + 1,
        };
        rows.extend(eval_generator(g, &s.truth, support, N_EVAL, ctx)?);
    }
    Ok(rows)
}

/// All tasks pooled into one task with one center holding the union.
pub fn pooled_scenario(s: &Scenario, iters_scale: f64) -> Result<Scenario> {
    let mut counts: BTreeMap<LabelId, u64> = BTreeMap::new();
    for t in &s.tasks {
        for (y, n) in t.label_counts() {
            *counts.entry(y).or_insert(0) += n;
        }
    }
    let iterations = s
        .tasks
        .iter()
        .map(|t| scaled_iterations(t.iterations, iters_scale))
        .sum();
    let overrides = s.tasks.first().map(|t| t.overrides.clone()).unwrap_or_default();
    Ok(Scenario {
        name: s.name.clone(),
        truth: s.truth.clone(),
        tasks: vec![TaskSpec {
            centers: vec![CenterDataset::new("joint", counts, s.truth.clone())?],
            iterations,
            overrides,
        }],
        hyper: s.hyper.clone(),
        seed: s.seed,
    })
}

/// Stream salt of the local GAN for center `k` (0-based) of task `t`
/// (1-based); zero for the first center of the first task.
fn local_salt(t: usize, k: usize) -> u64 {
    ((t as u64 - 1) << 32) | k as u64
}

/// Trains and evaluates one method on `s`, evaluating after every task on
/// the labels seen so far. Rows come back in canonical order.
pub fn run_method(s: &Scenario, method: Method, seed: u64, iters_scale: f64) -> Result<Vec<MetricRow>> {
    let opts = RunOptions::new(seed).with_iters_scale(iters_scale);
    let mut rows = match method {
        Method::Tdgan => {
            let run = run_scenario(s, opts)?;
            eval_snapshots(s, method, seed, &run.snapshots, &run.supports)?
        }
        Method::Finetune => {
            let run = run_scenario(s, opts.with_lambda(0.0))?;
            eval_snapshots(s, method, seed, &run.snapshots, &run.supports)?
        }
        Method::Joint => {
            let pooled = pooled_scenario(s, iters_scale)?;
            let run = run_scenario(&pooled, opts.with_iters_scale(1.0))?;
            let g = run.snapshots.last().expect("one task");
            let ctx = RowContext {
                method,
                seed,
                task: s.tasks.len(),
            };
            eval_generator(g, &s.truth, &run.supports[0], N_EVAL, ctx)?
        }
        Method::Local => {
            let mut rows = Vec::new();
            for (i, task) in s.tasks.iter().enumerate() {
                let t = i + 1;
                let mut per_label: BTreeMap<LabelId, Vec<f64>> = BTreeMap::new();
                for (k, center) in task.centers.iter().enumerate() {
                    let single = Scenario {
                        tasks: vec![TaskSpec {
                            centers: vec![center.clone()],
                            iterations: task.iterations,
                            overrides: task.overrides.clone(),
                        }],
                        ..s.clone()
                    };
                    let local_opts = RunOptions {
                        keys: RunKeys::new(seed).with_salt(local_salt(t, k)),
                        ..opts
                    };
                    let run = run_scenario(&single, local_opts)?;
                    let ctx = RowContext { method, seed, task: t };
                    for r in eval_generator(&run.snapshots[0], &s.truth, &center.support(), N_EVAL, ctx)? {
                        per_label.entry(r.label).or_default().push(r.value);
                    }
                }
                rows.extend(per_label.into_iter().map(|(label, v)| MetricRow {
                    method,
                    seed,
                    task: t,
                    label,
                    metric: Metric::EnergyDistance,
                    value: v.iter().sum::<f64>() / v.len() as f64,
                }));
            }
            rows
        }
    };
    canonicalize(&mut rows);
    Ok(rows)
}

/// Mean over `rows` restricted to `task` and `labels`.
pub fn mean_distance(rows: &[MetricRow], task: usize, labels: &BTreeSet<LabelId>) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.task == task && labels.contains(&r.label))
        .map(|r| r.value)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per label: distance after `later` minus distance after the label's own
/// task `earlier`.
pub fn forgetting(rows: &[MetricRow], earlier: usize, later: usize) -> BTreeMap<LabelId, f64> {
    let at = |t: usize| -> BTreeMap<LabelId, f64> {
        rows.iter().filter(|r| r.task == t).map(|r| (r.label, r.value)).collect()
    };
    let (before, after) = (at(earlier), at(later));
    before
        .iter()
        .filter_map(|(y, b)| after.get(y).map(|a| (*y, a - b)))
        .collect()
}

/// A 1-D distribution with known density.
pub trait Density1d {
    fn pdf(&self, x: f64) -> f64;
    fn sample(&self, n: usize, rng: &mut dyn rand::RngCore) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal1d {
    pub mean: f64,
    pub sd: f64,
}

impl Density1d for Normal1d {
    fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        (-0.5 * z * z).exp() / (self.sd * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn sample(&self, n: usize, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        (0..n)
            .map(|_| self.mean + self.sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// `n` evenly spaced points covering `[lo, hi]`.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Mean over `grid` of `|D(x) − p(x)/(p(x)+q(x))|` for a single-label
/// discriminator.
pub fn discriminator_gap(d: &Discriminator, p: &dyn Density1d, q: &dyn Density1d, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("empty evaluation grid".into()));
    }
    let x = Mat::row(grid);
    let out = d.predict(&x, &vec![LabelId(0); grid.len()])?;
    let mut total = 0.0;
    for (&xi, &di) in grid.iter().zip(out.data()) {
        let (pd, qd) = (p.pdf(xi), q.pdf(xi));
        if !pd.is_finite() || !qd.is_finite() {
            return Err(Error::Numeric(format!("non-finite density at {xi}")));
        }
        total += (di - optimal_disc_value(pd, qd)?).abs();
    }
    Ok(total / grid.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalDiscConfig {
    pub steps: usize,
    pub batch: usize,
    pub hidden: Vec<usize>,
    pub adam: AdamHyper,
    pub lr_decay: bool,
    pub seed: u64,
}

impl Default for OptimalDiscConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch: 256,
            hidden: vec![16, 16],
            adam: AdamHyper::default().with_lr(1e-3),
            lr_decay: true,
            seed: 0,
        }
    }
}

/// Trains a fresh discriminator with `p` as real and `q` as fake data, then
/// returns its gap to `p/(p+q)` on `grid`.
pub fn verify_optimal_discriminator(
    p: &dyn Density1d,
    q: &dyn Density1d,
    cfg: &OptimalDiscConfig,
    grid: &[f64],
) -> Result<f64> {
    let mut d = Discriminator::new(1, 1, &cfg.hidden, &mut stream(cfg.seed, &[purpose::DISC_INIT]))?;
    let mut opt = AdamState::new(d.net(), cfg.adam)?;
    let mut rng = stream(cfg.seed, &[purpose::CENTER]);
    let labels = vec![LabelId(0); cfg.batch];
    for step in 0..cfg.steps {
        let real = Mat::row(&p.sample(cfg.batch, &mut rng));
        let fake = Mat::row(&q.sample(cfg.batch, &mut rng));
        let lr = scheduled_lr(cfg.adam.lr, step, cfg.steps, cfg.lr_decay);
        disc_update(
            &mut d,
            LabeledBatch::new(&real, &labels),
            LabeledBatch::new(&fake, &labels),
            &mut opt,
            lr,
        )?;
    }
    discriminator_gap(&d, p, q, grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemindingConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamHyper,
    pub lr_decay: bool,
    /// Size of the fixed batch the final loss is measured on.
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for RemindingConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 256,
            adam: AdamHyper::default().with_lr(1e-3),
            lr_decay: true,
            eval_batch: 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemindingReport {
    /// Loss on a fixed evaluation batch before training.
    pub initial_loss: f64,
    /// Loss on the same batch after training.
    pub final_loss: f64,
    /// Minibatch loss at every step.
    pub trajectory: Vec<f64>,
    /// Loss on the fixed evaluation batch after every step.
    pub held_out: Vec<f64>,
}

/// Means of consecutive `window`-long blocks.
pub fn block_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks_exact(window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

impl RemindingReport {
    /// Block means of the minibatch trajectory.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        block_means(&self.trajectory, window)
    }

    /// Block means of the held-out trajectory.
    pub fn held_out_window_means(&self, window: usize) -> Vec<f64> {
        block_means(&self.held_out, window)
    }
}

/// Trains `fresh` on the reminding loss alone against `frozen`, with labels
/// drawn uniformly from the vocabulary.
pub fn verify_reminding_convergence(
    frozen: &Generator,
    mut fresh: Generator,
    cfg: &RemindingConfig,
) -> Result<RemindingReport> {
    let vocab = frozen.vocab();
    let store = LabelStore::from_counts((0..vocab).map(|y| (LabelId(y), 1)).collect());
    let mut eval_rng = stream(cfg.seed, &[purpose::EVAL]);
    let eval_labels = store.sample(cfg.eval_batch, &mut eval_rng)?;
    let eval_noise = sample_noise(frozen.noise_dim(), cfg.eval_batch, &mut eval_rng);
    let initial_loss = reminding_loss(&fresh, frozen, &eval_labels, &eval_noise)?;
    let eval_target = frozen.generate(&eval_noise, &eval_labels)?;
    let held_out_loss = |g: &Generator| -> Result<f64> {
        let diff = g.generate(&eval_noise, &eval_labels)?.sub(&eval_target)?;
        Ok(diff.data().iter().map(|v| v * v).sum::<f64>() / cfg.eval_batch as f64)
    };
    let mut held_out = Vec::with_capacity(cfg.steps);
    let mut opt = AdamState::new(fresh.net(), cfg.adam)?;
    let mut rng = stream(cfg.seed, &[purpose::REMINDING]);
    let mut trajectory = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let labels = store.sample(cfg.batch, &mut rng)?;
        let noise = sample_noise(frozen.noise_dim(), cfg.batch, &mut rng);
        let (grads, value) = reminding_loss_and_grads(&fresh, frozen, &labels, &noise)?;
        trajectory.push(value);
        let lr = scheduled_lr(cfg.adam.lr, step, cfg.steps, cfg.lr_decay);
        opt.step_with_lr(fresh.net_mut(), &grads, lr)?;
        held_out.push(held_out_loss(&fresh)?);
    }
    Ok(RemindingReport {
        initial_loss,
        final_loss: held_out.last().copied().unwrap_or(initial_loss),
        trajectory,
        held_out,
    })
}

/// A random generator and an independently initialised one of the same
/// shape, for reminding checks.
pub fn generator_pair(
    seed: u64,
    noise_dim: usize,
    vocab: usize,
    data_dim: usize,
    hidden: &[usize],
) -> Result<(Generator, Generator)> {
    let mut rng = stream(seed, &[purpose::GEN_INIT]);
    let frozen = Generator::new(noise_dim, vocab, data_dim, hidden, &mut rng)?;
    let fresh = Generator::new(noise_dim, vocab, data_dim, hidden, &mut rng)?;
    Ok((frozen, fresh))
}
