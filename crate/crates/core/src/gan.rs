//! Label-conditioned generator and discriminator, the digesting and reminding
//! losses with exact gradients, and the closed-form optimal discriminator.

use rand::Rng;

use crate::data::LabelId;
use crate::error::{shape_err, Error, Result};
use crate::numeric::{
    AdamHyper, AdamState, HiddenActivation, Mat, MlpCache, MlpGrads, MlpParams, OutputActivation,
};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-12;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn inside_clamp(p: f64) -> bool {
    p > PROB_FLOOR && p < 1.0 - PROB_FLOOR
}

/// `[vocab x batch]` one-hot encoding of `labels`.
pub fn one_hot(labels: &[LabelId], vocab: usize) -> Result<Mat> {
    let mut out = Mat::zeros(vocab, labels.len());
    for (c, y) in labels.iter().enumerate() {
        if y.0 >= vocab {
            return Err(Error::Domain(format!("label {y} outside vocabulary of {vocab}")));
        }
        out.set(y.0, c, 1.0);
    }
    Ok(out)
}

/// `[noise_dim x n]` matrix of iid uniform(0, 1) draws.
pub fn sample_noise<R: Rng + ?Sized>(noise_dim: usize, n: usize, rng: &mut R) -> Mat {
    Mat::from_fn(noise_dim, n, |_, _| rng.random::<f64>())
}

/// Generator loss used for the digesting term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GenLoss {
    /// `log(1 - D(x̂))`, minimized by the generator.
    #[default]
    Minimax,
    /// `-log D(x̂)`.
    NonSaturating,
}

/// `G(u, y)`: maps `[noise; onehot(y)]` to a data point.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    net: MlpParams,
    noise_dim: usize,
    vocab: usize,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        noise_dim: usize,
        vocab: usize,
        data_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![noise_dim + vocab];
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        let net = MlpParams::init(&dims, HiddenActivation::Tanh, OutputActivation::Linear, rng)?;
        Self::from_net(net, noise_dim, vocab)
    }

    pub fn from_net(net: MlpParams, noise_dim: usize, vocab: usize) -> Result<Self> {
        if noise_dim == 0 || vocab == 0 {
            return Err(Error::Config("noise_dim and vocab must be positive".into()));
        }
        if net.input_dim() != noise_dim + vocab {
            return Err(shape_err(
                "Generator::from_net",
                format!("input dim {}", noise_dim + vocab),
                net.input_dim(),
            ));
        }
        if net.output_activation() != OutputActivation::Linear {
            return Err(Error::Config("generator output must be linear".into()));
        }
        Ok(Self {
            net,
            noise_dim,
            vocab,
        })
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpParams {
        &mut self.net
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn data_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn input(&self, noise: &Mat, labels: &[LabelId]) -> Result<Mat> {
        if noise.rows() != self.noise_dim || noise.cols() != labels.len() {
            return Err(shape_err(
                "gen_forward",
                format!("noise {}x{}", self.noise_dim, labels.len()),
                format!("{}x{}", noise.rows(), noise.cols()),
            ));
        }
        Mat::vstack(noise, &one_hot(labels, self.vocab)?)
    }

    /// `X̂ = G(U, Y)` column-wise, with the cache for [`Generator::backward`].
    pub fn forward(&self, noise: &Mat, labels: &[LabelId]) -> Result<(Mat, MlpCache)> {
        self.net.forward(&self.input(noise, labels)?)
    }

    pub fn generate(&self, noise: &Mat, labels: &[LabelId]) -> Result<Mat> {
        self.forward(noise, labels).map(|(x, _)| x)
    }

    /// Parameter gradient of `sum(X̂ ⊙ grad_out)`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Mat) -> Result<MlpGrads> {
        self.net.backward(cache, grad_out).map(|(g, _)| g)
    }
}

/// `D(x, y)`: maps `[x; onehot(y)]` to a probability of being real.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    net: MlpParams,
    data_dim: usize,
    vocab: usize,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        vocab: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![data_dim + vocab];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = MlpParams::init(&dims, HiddenActivation::Relu, OutputActivation::Sigmoid, rng)?;
        Self::from_net(net, data_dim, vocab)
    }

    pub fn from_net(net: MlpParams, data_dim: usize, vocab: usize) -> Result<Self> {
        if net.input_dim() != data_dim + vocab || net.output_dim() != 1 {
            return Err(shape_err(
                "Discriminator::from_net",
                format!("{} -> 1", data_dim + vocab),
                format!("{} -> {}", net.input_dim(), net.output_dim()),
            ));
        }
        if net.output_activation() != OutputActivation::Sigmoid {
            return Err(Error::Config("discriminator output must be sigmoid".into()));
        }
        Ok(Self {
            net,
            data_dim,
            vocab,
        })
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpParams {
        &mut self.net
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// `[1 x batch]` probabilities.
    pub fn forward(&self, x: &Mat, labels: &[LabelId]) -> Result<(Mat, MlpCache)> {
        if x.rows() != self.data_dim || x.cols() != labels.len() {
            return Err(shape_err(
                "disc_forward",
                format!("x {}x{}", self.data_dim, labels.len()),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        let input = Mat::vstack(x, &one_hot(labels, self.vocab)?)?;
        self.net.forward(&input)
    }

    pub fn predict(&self, x: &Mat, labels: &[LabelId]) -> Result<Mat> {
        self.forward(x, labels).map(|(p, _)| p)
    }

    /// Parameter gradients and the gradient with respect to `x` (the label
    /// rows of the input gradient are dropped).
    fn backward(&self, cache: &MlpCache, grad_p: &Mat) -> Result<(MlpGrads, Mat)> {
        let (g, gin) = self.net.backward(cache, grad_p)?;
        Ok((g, gin.row_range(0, self.data_dim)?))
    }
}

/// A labelled batch: `x` is `[dim x labels.len()]`.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBatch<'a> {
    pub x: &'a Mat,
    pub labels: &'a [LabelId],
}

impl<'a> LabeledBatch<'a> {
    pub fn new(x: &'a Mat, labels: &'a [LabelId]) -> Self {
        Self { x, labels }
    }
}

/// `(1/m) Σ [log D(x) + log(1 - D(x̂))]` and its parameter gradient.
pub fn disc_objective_and_grads(
    d: &Discriminator,
    real: LabeledBatch<'_>,
    fake: LabeledBatch<'_>,
) -> Result<(MlpGrads, f64)> {
    let m = real.labels.len();
    if m == 0 || fake.labels.len() != m {
        return Err(shape_err("disc_update", format!("{m} fakes (m >= 1)"), fake.labels.len()));
    }
    let inv_m = 1.0 / m as f64;
    let (p_real, cache_real) = d.forward(real.x, real.labels)?;
    let (p_fake, cache_fake) = d.forward(fake.x, fake.labels)?;
    let mut value = 0.0;
    let grad_real = p_real.map(|p| if inside_clamp(p) { inv_m / p } else { 0.0 });
    let grad_fake = p_fake.map(|p| {
        if inside_clamp(p) {
            -inv_m / (1.0 - p)
        } else {
            0.0
        }
    });
    for (&pr, &pf) in p_real.data().iter().zip(p_fake.data()) {
        value += clamp_prob(pr).ln() + (1.0 - clamp_prob(pf)).ln();
    }
    value *= inv_m;
    let (mut grads, _) = d.backward(&cache_real, &grad_real)?;
    let (g_fake, _) = d.backward(&cache_fake, &grad_fake)?;
    grads.axpy(1.0, &g_fake)?;
    Ok((grads, value))
}

pub fn disc_objective(d: &Discriminator, real: LabeledBatch<'_>, fake: LabeledBatch<'_>) -> Result<f64> {
    disc_objective_and_grads(d, real, fake).map(|(_, v)| v)
}

/// One ascent step on the discriminator objective. Returns the objective
/// before the step.
pub fn disc_update(
    d: &mut Discriminator,
    real: LabeledBatch<'_>,
    fake: LabeledBatch<'_>,
    opt: &mut AdamState,
    lr: f64,
) -> Result<f64> {
    let (mut grads, value) = disc_objective_and_grads(d, real, fake)?;
    grads.scale(-1.0);
    opt.step_with_lr(&mut d.net, &grads, lr)?;
    Ok(value)
}

/// What one discriminator reports back for a batch of fakes: the generator
/// loss value `(1/m) Σ ℓ(D(x̂_i))` and its gradient with respect to `x̂`.
pub fn digest_feedback(
    d: &Discriminator,
    fake: LabeledBatch<'_>,
    loss: GenLoss,
) -> Result<(Mat, f64)> {
    let m = fake.labels.len();
    if m == 0 {
        return Err(Error::Config("empty fake batch".into()));
    }
    let inv_m = 1.0 / m as f64;
    let (p, cache) = d.forward(fake.x, fake.labels)?;
    let (value, grad_p) = match loss {
        GenLoss::Minimax => (
            p.data().iter().map(|&v| (1.0 - clamp_prob(v)).ln()).sum::<f64>() * inv_m,
            p.map(|v| if inside_clamp(v) { -inv_m / (1.0 - v) } else { 0.0 }),
        ),
        GenLoss::NonSaturating => (
            -p.data().iter().map(|&v| clamp_prob(v).ln()).sum::<f64>() * inv_m,
            p.map(|v| if inside_clamp(v) { -inv_m / v } else { 0.0 }),
        ),
    };
    let (_, grad_x) = d.backward(&cache, &grad_p)?;
    Ok((grad_x, value))
}

/// One center's contribution to the digesting loss.
#[derive(Debug, Clone, Copy)]
pub struct DigestTerm<'a> {
    pub disc: &'a Discriminator,
    pub weight: f64,
    pub labels: &'a [LabelId],
    pub noise: &'a Mat,
}

/// Digesting loss `Σ_k π_k (1/m) Σ_i ℓ(D_k(G(u_i, y_i), y_i))` and its exact
/// generator gradient, computed in one pass over the concatenated batch.
pub fn digesting_gen_grads(
    g: &Generator,
    terms: &[DigestTerm<'_>],
    loss: GenLoss,
) -> Result<(MlpGrads, f64)> {
    if terms.is_empty() {
        return Err(Error::State("no online discriminators".into()));
    }
    let noises: Vec<&Mat> = terms.iter().map(|t| t.noise).collect();
    let noise = Mat::hstack(&noises)?;
    let labels: Vec<LabelId> = terms.iter().flat_map(|t| t.labels.iter().copied()).collect();
    let (x_hat, cache) = g.forward(&noise, &labels)?;
    let mut grad_out = Mat::zeros(x_hat.rows(), x_hat.cols());
    let mut value = 0.0;
    let mut offset = 0;
    for t in terms {
        let m = t.labels.len();
        let slice = x_hat.col_range(offset, offset + m)?;
        let (gx, v) = digest_feedback(t.disc, LabeledBatch::new(&slice, t.labels), loss)?;
        value += t.weight * v;
        for r in 0..gx.rows() {
            for c in 0..m {
                grad_out.set(r, offset + c, t.weight * gx.get(r, c));
            }
        }
        offset += m;
    }
    Ok((g.backward(&cache, &grad_out)?, value))
}

/// `(1/n) Σ ‖G(u_i, y_i) − G_frozen(u_i, y_i)‖²` and its gradient with
/// respect to `g` only.
pub fn reminding_loss_and_grads(
    g: &Generator,
    frozen: &Generator,
    labels: &[LabelId],
    noise: &Mat,
) -> Result<(MlpGrads, f64)> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Config("reminding batch must be non-empty".into()));
    }
    if g.net.input_dim() != frozen.net.input_dim() || g.data_dim() != frozen.data_dim() {
        return Err(shape_err(
            "reminding_loss",
            "matching generator shapes",
            "mismatched generators",
        ));
    }
    let (x, cache) = g.forward(noise, labels)?;
    let target = frozen.generate(noise, labels)?;
    let diff = x.sub(&target)?;
    let value = diff.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
    let grad_out = diff.scale(2.0 / n as f64);
    Ok((g.backward(&cache, &grad_out)?, value))
}

pub fn reminding_loss(g: &Generator, frozen: &Generator, labels: &[LabelId], noise: &Mat) -> Result<f64> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Config("reminding batch must be non-empty".into()));
    }
    let diff = g.generate(noise, labels)?.sub(&frozen.generate(noise, labels)?)?;
    Ok(diff.data().iter().map(|v| v * v).sum::<f64>() / n as f64)
}

/// One Adam descent step on `digesting + λ · reminding`.
pub fn generator_update(
    g: &mut Generator,
    digesting: &MlpGrads,
    reminding: Option<&MlpGrads>,
    lambda: f64,
    opt: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let mut combined = digesting.clone();
    if let Some(r) = reminding {
        combined.axpy(lambda, r)?;
    }
    opt.step_with_lr(&mut g.net, &combined, lr)
}

/// `p / (p + q)`: the discriminator that maximizes the objective pointwise.
pub fn optimal_disc_value(p: f64, q: f64) -> Result<f64> {
    if !(p >= 0.0 && q >= 0.0) || !p.is_finite() || !q.is_finite() {
        return Err(Error::Domain(format!("densities must be finite and >= 0, got {p}, {q}")));
    }
    if p + q == 0.0 {
        return Err(Error::Domain("both densities are zero".into()));
    }
    Ok(p / (p + q))
}

/// Learning rate at `iter` of `total`: constant for the first half, then
/// linearly decayed towards zero.
pub fn scheduled_lr(base: f64, iter: usize, total: usize, decay: bool) -> f64 {
    if !decay || total == 0 {
        return base;
    }
    let half = total / 2;
    if iter < half {
        base
    } else {
        base * (total - iter) as f64 / (total - half) as f64
    }
}

/// Training hyperparameters shared by every method.
#[derive(Debug, Clone, PartialEq)]
pub struct GanHyper {
    /// Reminding weight λ.
    pub lambda: f64,
    /// Minibatch size per center.
    pub m: usize,
    /// Reminding minibatch size.
    pub n: usize,
    pub d_iters: usize,
    pub gen_adam: AdamHyper,
    pub disc_adam: AdamHyper,
    pub noise_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub gen_loss: GenLoss,
    pub lr_decay: bool,
}

impl Default for GanHyper {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            m: 64,
            n: 64,
            d_iters: 1,
            gen_adam: AdamHyper::default(),
            disc_adam: AdamHyper::default(),
            noise_dim: 4,
            gen_hidden: vec![64, 64],
            disc_hidden: vec![64, 64],
            gen_loss: GenLoss::Minimax,
            lr_decay: true,
        }
    }
}

impl GanHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.m == 0 || self.n == 0 || self.d_iters == 0 || self.noise_dim == 0 {
            return Err(Error::Config("m, n, d_iters and noise_dim must be >= 1".into()));
        }
        if self.gen_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        self.gen_adam.validate()?;
        self.disc_adam.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, Layer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn labels(ids: &[usize]) -> Vec<LabelId> {
        ids.iter().map(|&i| LabelId(i)).collect()
    }

    fn zero_disc(data_dim: usize, vocab: usize) -> Discriminator {
        let mut d = Discriminator::new(data_dim, vocab, &[5], &mut rng(0)).unwrap();
        for l in d.net_mut().layers_mut() {
            l.weight.scale_in_place(0.0);
        }
        d
    }

    #[test]
    fn one_hot_rejects_out_of_vocab() {
        assert!(matches!(one_hot(&labels(&[0, 3]), 3), Err(Error::Domain(_))));
        let oh = one_hot(&labels(&[2, 0]), 3).unwrap();
        assert_eq!(oh.data(), &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn generator_is_deterministic() {
        let g = Generator::new(3, 2, 2, &[8], &mut rng(1)).unwrap();
        let u = sample_noise(3, 5, &mut rng(2));
        let y = labels(&[0, 1, 1, 0, 1]);
        assert_eq!(g.generate(&u, &y).unwrap(), g.generate(&u, &y).unwrap());
    }

    #[test]
    fn linear_generator_matches_affine_map() {
        // x = w_u · u + w_y[y] + b
        let w = Mat::from_vec(1, 4, vec![2.0, -1.0, 0.5, 3.0]).unwrap();
        let b = Mat::from_vec(1, 1, vec![0.25]).unwrap();
        let net = MlpParams::new(
            vec![Layer { weight: w, bias: b }],
            HiddenActivation::Tanh,
            OutputActivation::Linear,
        )
        .unwrap();
        let g = Generator::from_net(net, 2, 2).unwrap();
        let u = Mat::from_vec(2, 2, vec![0.1, 0.9, 0.4, 0.3]).unwrap();
        let x = g.generate(&u, &labels(&[0, 1])).unwrap();
        assert!((x.get(0, 0) - (2.0 * 0.1 - 0.4 + 0.5 + 0.25)).abs() < 1e-15);
        assert!((x.get(0, 1) - (2.0 * 0.9 - 0.3 + 3.0 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn generator_output_sum_gradient_checks() {
        let g = Generator::new(3, 2, 2, &[6, 5], &mut rng(3)).unwrap();
        let u = sample_noise(3, 4, &mut rng(4));
        let y = labels(&[0, 1, 0, 1]);
        let (x, cache) = g.forward(&u, &y).unwrap();
        let ones = Mat::from_fn(x.rows(), x.cols(), |_, _| 1.0);
        let grads = g.backward(&cache, &ones).unwrap();
        let err = grad_check(g.net(), &grads, 1e-5, |p| {
            let gg = Generator::from_net(p.clone(), 3, 2).unwrap();
            gg.generate(&u, &y).unwrap().sum()
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn zero_weight_disc_is_one_half() {
        let d = zero_disc(2, 3);
        let x = Mat::from_fn(2, 4, |r, c| (r * 7 + c) as f64 - 3.0);
        let p = d.predict(&x, &labels(&[0, 1, 2, 0])).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
        assert_eq!(p, d.predict(&x, &labels(&[0, 1, 2, 0])).unwrap());
    }

    #[test]
    fn disc_objective_values() {
        let d = zero_disc(1, 1);
        let x = Mat::row(&[0.1, -0.4, 2.0]);
        let y = labels(&[0, 0, 0]);
        let v = disc_objective(&d, LabeledBatch::new(&x, &y), LabeledBatch::new(&x, &y)).unwrap();
        assert!((v - (-1.386_294_361_1)).abs() < 1e-10);

        // Saturated discriminator: real at +large, fake at -large.
        let net = MlpParams::new(
            vec![Layer {
                weight: Mat::from_vec(1, 2, vec![100.0, 0.0]).unwrap(),
                bias: Mat::zeros(1, 1),
            }],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
        )
        .unwrap();
        let perfect = Discriminator::from_net(net, 1, 1).unwrap();
        let real = Mat::row(&[5.0, 6.0]);
        let fake = Mat::row(&[-5.0, -6.0]);
        let y2 = labels(&[0, 0]);
        let v = disc_objective(&perfect, LabeledBatch::new(&real, &y2), LabeledBatch::new(&fake, &y2)).unwrap();
        assert!((v - 2.0 * (1.0 - PROB_FLOOR).ln()).abs() < 1e-11);
        assert!(v.abs() < 1e-11);
    }

    #[test]
    fn disc_objective_gradient_checks() {
        let mut r = rng(7);
        let d = Discriminator::new(2, 3, &[6, 4], &mut r).unwrap();
        let real = Mat::from_fn(2, 5, |_, _| r.random_range(-1.0..1.0));
        let fake = Mat::from_fn(2, 5, |_, _| r.random_range(-1.0..1.0));
        let (yr, yf) = (labels(&[0, 1, 2, 0, 1]), labels(&[2, 2, 1, 0, 0]));
        let (grads, _) = disc_objective_and_grads(&d, LabeledBatch::new(&real, &yr), LabeledBatch::new(&fake, &yf)).unwrap();
        let err = grad_check(d.net(), &grads, 1e-5, |p| {
            let dd = Discriminator::from_net(p.clone(), 2, 3).unwrap();
            disc_objective(&dd, LabeledBatch::new(&real, &yr), LabeledBatch::new(&fake, &yf)).unwrap()
        })
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn disc_update_ascends() {
        let mut r = rng(8);
        let mut d = Discriminator::new(1, 2, &[8], &mut r).unwrap();
        let real = Mat::from_fn(1, 16, |_, _| 1.0 + r.random_range(-0.3..0.3));
        let fake = Mat::from_fn(1, 16, |_, _| -1.0 + r.random_range(-0.3..0.3));
        let y: Vec<LabelId> = (0..16).map(|i| LabelId(i % 2)).collect();
        let mut opt = AdamState::new(d.net(), AdamHyper::default().with_lr(1e-3)).unwrap();
        let before = disc_update(&mut d, LabeledBatch::new(&real, &y), LabeledBatch::new(&fake, &y), &mut opt, 1e-3).unwrap();
        let after = disc_objective(&d, LabeledBatch::new(&real, &y), LabeledBatch::new(&fake, &y)).unwrap();
        assert!(after > before, "{before} -> {after}");
        assert!(disc_update(&mut d, LabeledBatch::new(&real, &y), LabeledBatch::new(&fake, &y[..3]), &mut opt, 1e-3).is_err());
    }

    fn digest_fixture(seed: u64) -> (Generator, Discriminator, Discriminator, Mat, Mat, Vec<LabelId>, Vec<LabelId>) {
        let mut r = rng(seed);
        let g = Generator::new(3, 3, 2, &[6, 5], &mut r).unwrap();
        let d1 = Discriminator::new(2, 3, &[6], &mut r).unwrap();
        let d2 = Discriminator::new(2, 3, &[7], &mut r).unwrap();
        let u1 = sample_noise(3, 4, &mut r);
        let u2 = sample_noise(3, 4, &mut r);
        (g, d1, d2, u1, u2, labels(&[0, 1, 2, 1]), labels(&[2, 2, 0, 1]))
    }

    #[test]
    fn digesting_gradient_checks() {
        for loss in [GenLoss::Minimax, GenLoss::NonSaturating] {
            let (g, d1, d2, u1, u2, y1, y2) = digest_fixture(11);
            let value = |gen: &Generator| {
                let terms = [
                    DigestTerm { disc: &d1, weight: 0.25, labels: &y1, noise: &u1 },
                    DigestTerm { disc: &d2, weight: 0.75, labels: &y2, noise: &u2 },
                ];
                digesting_gen_grads(gen, &terms, loss).unwrap()
            };
            let (grads, _) = value(&g);
            let err = grad_check(g.net(), &grads, 1e-5, |p| {
                value(&Generator::from_net(p.clone(), 3, 3).unwrap()).1
            })
            .unwrap();
            assert!(err < 1e-4, "{loss:?}: {err}");
        }
    }

    #[test]
    fn digesting_equal_centers_reduce_to_one() {
        let (g, d1, _, u1, _, y1, _) = digest_fixture(12);
        let one = [DigestTerm { disc: &d1, weight: 1.0, labels: &y1, noise: &u1 }];
        let two = [
            DigestTerm { disc: &d1, weight: 0.5, labels: &y1, noise: &u1 },
            DigestTerm { disc: &d1, weight: 0.5, labels: &y1, noise: &u1 },
        ];
        let (ga, va) = digesting_gen_grads(&g, &one, GenLoss::Minimax).unwrap();
        let (gb, vb) = digesting_gen_grads(&g, &two, GenLoss::Minimax).unwrap();
        assert!((va - vb).abs() < 1e-15);
        assert!(ga.max_abs_diff(&gb).unwrap() < 1e-15);
    }

    #[test]
    fn digesting_against_constant_disc_has_zero_gradient() {
        let (g, _, _, u1, _, y1, _) = digest_fixture(13);
        let d = zero_disc(2, 3);
        let t = [DigestTerm { disc: &d, weight: 1.0, labels: &y1, noise: &u1 }];
        let (grads, v) = digesting_gen_grads(&g, &t, GenLoss::Minimax).unwrap();
        assert!(grads.is_zero());
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        assert!(matches!(digesting_gen_grads(&g, &[], GenLoss::Minimax), Err(Error::State(_))));
    }

    #[test]
    fn digesting_value_is_order_invariant() {
        let (g, d1, d2, u1, u2, y1, y2) = digest_fixture(14);
        let a = [
            DigestTerm { disc: &d1, weight: 0.4, labels: &y1, noise: &u1 },
            DigestTerm { disc: &d2, weight: 0.6, labels: &y2, noise: &u2 },
        ];
        let b = [a[1], a[0]];
        let va = digesting_gen_grads(&g, &a, GenLoss::Minimax).unwrap().1;
        let vb = digesting_gen_grads(&g, &b, GenLoss::Minimax).unwrap().1;
        assert!((va - vb).abs() < 1e-14);
        // within-batch permutation
        let perm = [3usize, 0, 2, 1];
        let y1p: Vec<LabelId> = perm.iter().map(|&i| y1[i]).collect();
        let u1p = Mat::from_fn(u1.rows(), 4, |r, c| u1.get(r, perm[c]));
        let c = [DigestTerm { disc: &d1, weight: 0.4, labels: &y1p, noise: &u1p }, a[1]];
        let vc = digesting_gen_grads(&g, &c, GenLoss::Minimax).unwrap().1;
        assert!((va - vc).abs() < 1e-14);
    }

    #[test]
    fn reminding_identities() {
        let mut r = rng(20);
        let g = Generator::new(2, 2, 3, &[5], &mut r).unwrap();
        let u = sample_noise(2, 6, &mut r);
        let y = labels(&[0, 1, 1, 0, 0, 1]);
        let (grads, v) = reminding_loss_and_grads(&g, &g.clone(), &y, &u).unwrap();
        assert_eq!(v, 0.0);
        assert!(grads.is_zero());

        let mut shifted = g.clone();
        let c = 0.3;
        let last = shifted.net().layers().len() - 1;
        for b in shifted.net_mut().layers_mut()[last].bias.data_mut() {
            *b += c;
        }
        let v = reminding_loss(&shifted, &g, &y, &u).unwrap();
        assert!((v - 3.0 * c * c).abs() < 1e-14);
        assert!(matches!(reminding_loss_and_grads(&g, &g, &[], &Mat::zeros(2, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn reminding_gradient_checks_and_permutation_invariance() {
        let mut r = rng(21);
        let g = Generator::new(2, 3, 2, &[6, 4], &mut r).unwrap();
        let frozen = Generator::new(2, 3, 2, &[6, 4], &mut r).unwrap();
        let u = sample_noise(2, 5, &mut r);
        let y = labels(&[0, 2, 1, 1, 0]);
        let (grads, v) = reminding_loss_and_grads(&g, &frozen, &y, &u).unwrap();
        assert!((v - reminding_loss(&g, &frozen, &y, &u).unwrap()).abs() < 1e-15);
        let err = grad_check(g.net(), &grads, 1e-5, |p| {
            reminding_loss(&Generator::from_net(p.clone(), 2, 3).unwrap(), &frozen, &y, &u).unwrap()
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
        let perm = [4usize, 2, 0, 3, 1];
        let yp: Vec<LabelId> = perm.iter().map(|&i| y[i]).collect();
        let up = Mat::from_fn(2, 5, |rr, c| u.get(rr, perm[c]));
        assert!((reminding_loss(&g, &frozen, &yp, &up).unwrap() - v).abs() < 1e-14);
    }

    #[test]
    fn generator_update_combinations() {
        let mut r = rng(30);
        let g0 = Generator::new(2, 2, 1, &[4], &mut r).unwrap();
        let frozen = Generator::new(2, 2, 1, &[4], &mut r).unwrap();
        let d = Discriminator::new(1, 2, &[4], &mut r).unwrap();
        let u = sample_noise(2, 6, &mut r);
        let y = labels(&[0, 1, 0, 1, 1, 0]);
        let t = [DigestTerm { disc: &d, weight: 1.0, labels: &y, noise: &u }];
        let (dig, _) = digesting_gen_grads(&g0, &t, GenLoss::Minimax).unwrap();
        let (rem, _) = reminding_loss_and_grads(&g0, &frozen, &y, &u).unwrap();
        let hyper = AdamHyper::default();

        // λ = 0 equals a digesting-only step, bitwise.
        let (mut a, mut b) = (g0.clone(), g0.clone());
        let mut oa = AdamState::new(a.net(), hyper).unwrap();
        let mut ob = oa.clone();
        generator_update(&mut a, &dig, Some(&rem), 0.0, &mut oa, hyper.lr).unwrap();
        generator_update(&mut b, &dig, None, 0.0, &mut ob, hyper.lr).unwrap();
        assert_eq!(a.net().fingerprint(), b.net().fingerprint());

        // zero gradients leave the generator unchanged
        let mut c = g0.clone();
        let mut oc = AdamState::new(c.net(), hyper).unwrap();
        let z = MlpGrads::zeros_like(c.net());
        generator_update(&mut c, &z, Some(&z), 1.0, &mut oc, hyper.lr).unwrap();
        assert_eq!(c, g0);

        // λ = 1: the combined gradient is the gradient of the summed loss
        let mut combined = dig.clone();
        combined.axpy(1.0, &rem).unwrap();
        let err = grad_check(g0.net(), &combined, 1e-5, |p| {
            let gg = Generator::from_net(p.clone(), 2, 2).unwrap();
            let t = [DigestTerm { disc: &d, weight: 1.0, labels: &y, noise: &u }];
            digesting_gen_grads(&gg, &t, GenLoss::Minimax).unwrap().1
                + reminding_loss(&gg, &frozen, &y, &u).unwrap()
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
        let (mut e, mut f) = (g0.clone(), g0.clone());
        let mut oe = AdamState::new(e.net(), hyper).unwrap();
        let mut of = oe.clone();
        generator_update(&mut e, &dig, Some(&rem), 1.0, &mut oe, hyper.lr).unwrap();
        of.step(f.net_mut(), &combined).unwrap();
        assert_eq!(e, f);
    }

    #[test]
    fn optimal_disc_examples() {
        assert_eq!(optimal_disc_value(0.3, 0.3).unwrap(), 0.5);
        assert!((optimal_disc_value(0.4, 0.2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(optimal_disc_value(0.0, 0.7).unwrap(), 0.0);
        assert!(matches!(optimal_disc_value(0.0, 0.0), Err(Error::Domain(_))));
        assert!(optimal_disc_value(-1.0, 0.5).is_err());
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(scheduled_lr(1.0, 0, 10, true), 1.0);
        assert_eq!(scheduled_lr(1.0, 4, 10, true), 1.0);
        assert_eq!(scheduled_lr(1.0, 5, 10, true), 1.0);
        assert!((scheduled_lr(1.0, 9, 10, true) - 0.2).abs() < 1e-15);
        assert_eq!(scheduled_lr(1.0, 9, 10, false), 1.0);
    }

    #[test]
    fn hyper_validation() {
        assert!(GanHyper::default().validate().is_ok());
        assert!(GanHyper { m: 0, ..GanHyper::default() }.validate().is_err());
        assert!(GanHyper { lambda: -1.0, ..GanHyper::default() }.validate().is_err());
    }
}
