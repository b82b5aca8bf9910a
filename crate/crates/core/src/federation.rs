//! The training protocol between the central generator node and the
//! temporary discriminator nodes.
//!
//! The generator only talks to centers through a [`CenterLink`]. Messages
//! carry labels, generated samples and loss gradients; no variant can carry a
//! real sample. [`InProcessLink`] is the synchronous in-memory transport and
//! records a trace of every message it moves.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::{mixture_weights, CenterDataset, CondGaussianMixture, LabelId, LabelStore};
use crate::error::{shape_err, Error, Result};
use crate::gan::{
    digest_feedback, digesting_gen_grads, disc_update, generator_update, reminding_loss_and_grads, sample_noise,
    scheduled_lr, DigestTerm, Discriminator, GanHyper, Generator, LabeledBatch,
};
use crate::numeric::{AdamState, Mat, MlpGrads};
use crate::rng::{purpose, stream, StreamRng};

/// Protocol messages. Field order is part of the wire shape.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Center → generator: labels sampled from the center's marginal.
    LabelBatch {
        center_id: String,
        labels: Vec<LabelId>,
    },
    /// Generator → center: generated samples for a label batch.
    FakeBatch {
        center_id: String,
        x_hat: Mat,
        labels: Vec<LabelId>,
    },
    /// Center → generator: gradient of the center's generator loss with
    /// respect to each fake sample, plus the loss value.
    Feedback {
        center_id: String,
        d_x_hat: Mat,
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    LabelBatch,
    FakeBatch,
    Feedback,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::LabelBatch { .. } => MessageKind::LabelBatch,
            Message::FakeBatch { .. } => MessageKind::FakeBatch,
            Message::Feedback { .. } => MessageKind::Feedback,
        }
    }

    pub fn center_id(&self) -> &str {
        match self {
            Message::LabelBatch { center_id, .. }
            | Message::FakeBatch { center_id, .. }
            | Message::Feedback { center_id, .. } => center_id,
        }
    }
}

/// Which exchange a fake batch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Round {
    /// The center trains its discriminator on the fakes.
    DiscriminatorStep,
    /// The center answers with [`Message::Feedback`].
    Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToGenerator,
    ToCenter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub direction: Direction,
    pub kind: MessageKind,
    pub center_id: String,
}

/// Metadata a center shares when it comes online. Counts, never samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterInfo {
    pub center_id: String,
    pub size: u64,
    pub label_counts: BTreeMap<LabelId, u64>,
}

/// The generator's only view of the online centers.
pub trait CenterLink {
    /// Online centers in a fixed order.
    fn online(&self) -> Vec<CenterInfo>;

    /// Asks a center for a label batch; the reply is a [`Message::LabelBatch`].
    fn request_labels(&mut self, center_id: &str, round: Round) -> Result<Message>;

    /// Delivers a [`Message::FakeBatch`]. Returns the center's
    /// [`Message::Feedback`] for [`Round::Digest`] and nothing otherwise.
    fn send_fakes(&mut self, fakes: Message, round: Round) -> Result<Option<Message>>;
}

/// A data center with its temporary discriminator.
#[derive(Debug, Clone)]
pub struct DiscriminatorNode {
    dataset: CenterDataset,
    disc: Discriminator,
    opt: AdamState,
    online: bool,
    rng: StreamRng,
    m: usize,
    gen_loss: crate::gan::GenLoss,
    base_lr: f64,
    lr_decay: bool,
    planned_updates: usize,
    updates: usize,
    pending: Option<(Round, Vec<LabelId>)>,
}

impl DiscriminatorNode {
    /// Brings a center online with a freshly initialized discriminator.
    /// `planned_updates` is the number of discriminator steps this task will
    /// run, used for the learning-rate schedule.
    pub fn new(
        dataset: CenterDataset,
        hyper: &GanHyper,
        planned_updates: usize,
        mut init_rng: StreamRng,
        rng: StreamRng,
    ) -> Result<Self> {
        let truth = dataset.truth();
        let disc = Discriminator::new(truth.dim(), truth.vocab_size(), &hyper.disc_hidden, &mut init_rng)?;
        let opt = AdamState::new(disc.net(), hyper.disc_adam)?;
        Ok(Self {
            dataset,
            disc,
            opt,
            online: true,
            rng,
            m: hyper.m,
            gen_loss: hyper.gen_loss,
            base_lr: hyper.disc_adam.lr,
            lr_decay: hyper.lr_decay,
            planned_updates,
            updates: 0,
            pending: None,
        })
    }

    pub fn center_id(&self) -> &str {
        self.dataset.id()
    }

    pub fn dataset(&self) -> &CenterDataset {
        &self.dataset
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }

    pub fn is_online(&self) -> bool {
        self.online
    }

    pub fn go_offline(&mut self) {
        self.online = false;
        self.pending = None;
    }

    pub fn info(&self) -> CenterInfo {
        CenterInfo {
            center_id: self.dataset.id().to_string(),
            size: self.dataset.size(),
            label_counts: self.dataset.label_counts().clone(),
        }
    }

    fn ensure_online(&self) -> Result<()> {
        if self.online {
            Ok(())
        } else {
            Err(Error::Protocol(format!("center {} is offline", self.center_id())))
        }
    }

    /// Samples `m` labels from `g_t^k` and remembers them for the reply.
    pub fn emit_labels(&mut self, round: Round) -> Result<Message> {
        self.ensure_online()?;
        let labels = self.dataset.sample_labels(self.m, &mut self.rng);
        self.pending = Some((round, labels.clone()));
        Ok(Message::LabelBatch {
            center_id: self.center_id().to_string(),
            labels,
        })
    }

    fn accept_fakes(&mut self, msg: Message, round: Round) -> Result<(Mat, Vec<LabelId>)> {
        self.ensure_online()?;
        let Message::FakeBatch {
            center_id,
            x_hat,
            labels,
        } = msg
        else {
            return Err(Error::Protocol(format!(
                "center {} expected a FakeBatch, got {:?}",
                self.center_id(),
                msg.kind()
            )));
        };
        if center_id != self.center_id() {
            return Err(Error::Protocol(format!(
                "FakeBatch for {center_id} delivered to {}",
                self.center_id()
            )));
        }
        match self.pending.take() {
            Some((r, sent)) if r == round && sent == labels => {}
            _ => {
                return Err(Error::Protocol(format!(
                    "FakeBatch to {} does not answer its last LabelBatch",
                    self.center_id()
                )))
            }
        }
        let dim = self.disc.data_dim();
        if x_hat.rows() != dim || x_hat.cols() != labels.len() {
            return Err(shape_err(
                "FakeBatch",
                format!("{dim}x{}", labels.len()),
                format!("{}x{}", x_hat.rows(), x_hat.cols()),
            ));
        }
        Ok((x_hat, labels))
    }

    /// Discriminator step on private real samples paired with the fakes'
    /// labels. Returns the objective before the step.
    pub fn train_on_fakes(&mut self, msg: Message) -> Result<f64> {
        let (x_hat, labels) = self.accept_fakes(msg, Round::DiscriminatorStep)?;
        let real = self.dataset.draw_real(&labels, &mut self.rng)?;
        let lr = scheduled_lr(self.base_lr, self.updates, self.planned_updates, self.lr_decay);
        self.updates += 1;
        disc_update(
            &mut self.disc,
            LabeledBatch::new(&real, &labels),
            LabeledBatch::new(&x_hat, &labels),
            &mut self.opt,
            lr,
        )
    }

    /// Gradient of this center's generator loss with respect to the fakes.
    pub fn feedback(&mut self, msg: Message) -> Result<Message> {
        let (x_hat, labels) = self.accept_fakes(msg, Round::Digest)?;
        let (d_x_hat, value) = digest_feedback(&self.disc, LabeledBatch::new(&x_hat, &labels), self.gen_loss)?;
        Ok(Message::Feedback {
            center_id: self.center_id().to_string(),
            d_x_hat,
            value,
        })
    }
}

/// Synchronous in-memory transport over a set of discriminator nodes.
#[derive(Debug, Default)]
pub struct InProcessLink {
    nodes: Vec<DiscriminatorNode>,
    trace: Vec<TraceEntry>,
}

impl InProcessLink {
    pub fn new(nodes: Vec<DiscriminatorNode>) -> Self {
        Self {
            nodes,
            trace: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[DiscriminatorNode] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [DiscriminatorNode] {
        &mut self.nodes
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn clear_trace(&mut self) {
        self.trace.clear();
    }

    /// Takes every node offline; their discriminators are dropped with them.
    pub fn shut_down(mut self) -> Vec<TraceEntry> {
        for n in &mut self.nodes {
            n.go_offline();
        }
        self.trace
    }

    fn node_mut(&mut self, center_id: &str) -> Result<&mut DiscriminatorNode> {
        let node = self
            .nodes
            .iter_mut()
            .find(|n| n.center_id() == center_id)
            .ok_or_else(|| Error::Protocol(format!("unknown center {center_id}")))?;
        node.ensure_online()?;
        Ok(node)
    }

    fn record(&mut self, direction: Direction, msg: &Message) {
        self.trace.push(TraceEntry {
            direction,
            kind: msg.kind(),
            center_id: msg.center_id().to_string(),
        });
    }
}

impl CenterLink for InProcessLink {
    fn online(&self) -> Vec<CenterInfo> {
        self.nodes
            .iter()
            .filter(|n| n.is_online())
            .map(DiscriminatorNode::info)
            .collect()
    }

    fn request_labels(&mut self, center_id: &str, round: Round) -> Result<Message> {
        let msg = self.node_mut(center_id)?.emit_labels(round)?;
        self.record(Direction::ToGenerator, &msg);
        Ok(msg)
    }

    fn send_fakes(&mut self, fakes: Message, round: Round) -> Result<Option<Message>> {
        self.record(Direction::ToCenter, &fakes);
        let center_id = fakes.center_id().to_string();
        let node = self.node_mut(&center_id)?;
        match round {
            Round::DiscriminatorStep => {
                node.train_on_fakes(fakes)?;
                Ok(None)
            }
            Round::Digest => {
                let reply = node.feedback(fakes)?;
                self.record(Direction::ToGenerator, &reply);
                Ok(Some(reply))
            }
        }
    }
}

/// Checks that the generator only ever received labels and feedback.
pub fn audit_generator_inbox(trace: &[TraceEntry]) -> Result<()> {
    match trace
        .iter()
        .find(|e| e.direction == Direction::ToGenerator && e.kind == MessageKind::FakeBatch)
    {
        Some(e) => Err(Error::Protocol(format!(
            "generator received a {:?} from {}",
            e.kind, e.center_id
        ))),
        None => Ok(()),
    }
}

/// Immutable copy of a generator, used as `G_{t-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenGenerator(Generator);

impl FrozenGenerator {
    pub fn generator(&self) -> &Generator {
        &self.0
    }

    pub fn fingerprint(&self) -> u64 {
        self.0.net().fingerprint()
    }

    pub fn into_inner(self) -> Generator {
        self.0
    }
}

/// Deep copy that later updates to `g` cannot reach.
pub fn snapshot(g: &Generator) -> FrozenGenerator {
    FrozenGenerator(g.clone())
}

/// Seeds for every random stream of one run.
///
/// Streams are keyed by `(salt, task, center, purpose)`, so methods that run
/// the same schedule (TDGAN and fine-tuning) share their random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKeys {
    pub seed: u64,
    pub salt: u64,
}

impl RunKeys {
    pub fn new(seed: u64) -> Self {
        Self { seed, salt: 0 }
    }

    pub fn with_salt(self, salt: u64) -> Self {
        Self { salt, ..self }
    }

    pub fn generator_init(&self) -> StreamRng {
        stream(self.seed, &[self.salt, purpose::GEN_INIT])
    }

    pub fn task(&self, task: usize, purpose: u64) -> StreamRng {
        stream(self.seed, &[self.salt, task as u64, purpose])
    }

    pub fn center(&self, task: usize, center: usize, purpose: u64) -> StreamRng {
        stream(self.seed, &[self.salt, task as u64, center as u64, purpose])
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub digesting: f64,
    pub reminding: Option<f64>,
}

/// One center's part of a digest round, kept so the same gradient can be
/// recomputed outside the protocol.
#[derive(Debug, Clone)]
pub struct DigestRecord {
    pub center_id: String,
    pub weight: f64,
    pub labels: Vec<LabelId>,
    pub noise: Mat,
}

/// The central server: current generator, frozen previous generator and the
/// label record `s_{t-1}`.
#[derive(Debug, Clone)]
pub struct GeneratorNode {
    gen: Generator,
    frozen: Option<FrozenGenerator>,
    store: LabelStore,
    opt: AdamState,
    noise_rng: StreamRng,
    remind_rng: StreamRng,
    task: usize,
}

impl GeneratorNode {
    pub fn new(gen: Generator, hyper: &GanHyper, keys: RunKeys) -> Result<Self> {
        let opt = AdamState::new(gen.net(), hyper.gen_adam)?;
        Ok(Self {
            gen,
            frozen: None,
            store: LabelStore::new(),
            opt,
            noise_rng: keys.task(0, purpose::FAKE_NOISE),
            remind_rng: keys.task(0, purpose::REMINDING),
            task: 0,
        })
    }

    /// A node with a freshly initialized generator for `truth`.
    pub fn init(truth: &CondGaussianMixture, hyper: &GanHyper, keys: RunKeys) -> Result<Self> {
        let gen = Generator::new(
            hyper.noise_dim,
            truth.vocab_size(),
            truth.dim(),
            &hyper.gen_hidden,
            &mut keys.generator_init(),
        )?;
        Self::new(gen, hyper, keys)
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn frozen(&self) -> Option<&FrozenGenerator> {
        self.frozen.as_ref()
    }

    pub fn store(&self) -> &LabelStore {
        &self.store
    }

    /// Index of the last task started (0 before the first).
    pub fn task(&self) -> usize {
        self.task
    }

    /// Starts task `t` (1-based): resets the optimizer and the task streams.
    fn begin_task(&mut self, t: usize, hyper: &GanHyper, keys: RunKeys) -> Result<()> {
        if t == 0 {
            return Err(Error::Config("tasks are numbered from 1".into()));
        }
        match (t, &self.frozen) {
            (1, Some(_)) => {
                return Err(Error::State("task 1 must start without a frozen generator".into()))
            }
            (t, None) if t > 1 => {
                return Err(Error::State(format!(
                    "task {t} needs the frozen generator of task {}",
                    t - 1
                )))
            }
            _ => {}
        }
        self.task = t;
        self.opt = AdamState::new(self.gen.net(), hyper.gen_adam)?;
        self.noise_rng = keys.task(t, purpose::FAKE_NOISE);
        self.remind_rng = keys.task(t, purpose::REMINDING);
        Ok(())
    }

    fn fakes_for(&mut self, msg: Message) -> Result<(Message, Mat, crate::numeric::MlpCache)> {
        let Message::LabelBatch { center_id, labels } = msg else {
            return Err(Error::Protocol(format!("expected a LabelBatch, got {:?}", msg.kind())));
        };
        let noise = sample_noise(self.gen.noise_dim(), labels.len(), &mut self.noise_rng);
        let (x_hat, cache) = self.gen.forward(&noise, &labels)?;
        Ok((
            Message::FakeBatch {
                center_id,
                x_hat,
                labels,
            },
            noise,
            cache,
        ))
    }

    /// Discriminator round: every online center trains once on fresh fakes.
    pub fn discriminator_round(&mut self, link: &mut dyn CenterLink, centers: &[CenterInfo]) -> Result<()> {
        for c in centers {
            let lb = link.request_labels(&c.center_id, Round::DiscriminatorStep)?;
            expect_from(&lb, &c.center_id, MessageKind::LabelBatch)?;
            let (fb, _, _) = self.fakes_for(lb)?;
            if link.send_fakes(fb, Round::DiscriminatorStep)?.is_some() {
                return Err(Error::Protocol("unexpected reply to a discriminator round".into()));
            }
        }
        Ok(())
    }

    /// Digest round: collects feedback from every center and assembles the
    /// digesting gradient `Σ_k π_k ∇(1/m) Σ_i ℓ(D_k(x̂_i))`, summed in center
    /// order.
    pub fn digest_round(
        &mut self,
        link: &mut dyn CenterLink,
        centers: &[CenterInfo],
        weights: &[f64],
    ) -> Result<(MlpGrads, f64, Vec<DigestRecord>)> {
        if centers.is_empty() {
            return Err(Error::State("no online discriminators".into()));
        }
        let mut grads = MlpGrads::zeros_like(self.gen.net());
        let mut value = 0.0;
        let mut records = Vec::with_capacity(centers.len());
        for (c, &w) in centers.iter().zip(weights) {
            let lb = link.request_labels(&c.center_id, Round::Digest)?;
            expect_from(&lb, &c.center_id, MessageKind::LabelBatch)?;
            let (fb, noise, cache) = self.fakes_for(lb)?;
            let Message::FakeBatch { x_hat, labels, .. } = &fb else {
                unreachable!()
            };
            let (shape, labels) = (x_hat.shape(), labels.clone());
            let reply = link
                .send_fakes(fb, Round::Digest)?
                .ok_or_else(|| Error::Protocol(format!("center {} sent no feedback", c.center_id)))?;
            expect_from(&reply, &c.center_id, MessageKind::Feedback)?;
            let Message::Feedback { d_x_hat, value: v, .. } = reply else {
                unreachable!()
            };
            if d_x_hat.shape() != shape {
                return Err(Error::Protocol(format!(
                    "feedback from {} has shape {:?}, fakes had {:?}",
                    c.center_id,
                    d_x_hat.shape(),
                    shape
                )));
            }
            let g = self.gen.backward(&cache, &d_x_hat.scale(w))?;
            grads.axpy(1.0, &g)?;
            value += w * v;
            records.push(DigestRecord {
                center_id: c.center_id.clone(),
                weight: w,
                labels,
                noise,
            });
        }
        Ok((grads, value, records))
    }

    /// Reminding gradient on `n` labels from `s_{t-1}` with shared noise.
    pub fn reminding_round(&mut self, n: usize) -> Result<(MlpGrads, f64)> {
        let frozen = self
            .frozen
            .as_ref()
            .ok_or_else(|| Error::State("no frozen generator".into()))?;
        let labels = self.store.sample(n, &mut self.remind_rng)?;
        let noise = sample_noise(self.gen.noise_dim(), n, &mut self.remind_rng);
        reminding_loss_and_grads(&self.gen, frozen.generator(), &labels, &noise)
    }

    /// One pass of the training loop at task `t`.
    pub fn train_iteration(
        &mut self,
        link: &mut dyn CenterLink,
        weights: &[f64],
        hyper: &GanHyper,
        lr: f64,
    ) -> Result<IterationStats> {
        let centers = link.online();
        if centers.len() != weights.len() {
            return Err(Error::Protocol(format!(
                "{} online centers but {} mixture weights",
                centers.len(),
                weights.len()
            )));
        }
        for _ in 0..hyper.d_iters {
            self.discriminator_round(link, &centers)?;
        }
        let (digesting, dig_value, _) = self.digest_round(link, &centers, weights)?;
        let reminding = if self.task > 1 {
            Some(self.reminding_round(hyper.n)?)
        } else {
            None
        };
        generator_update(
            &mut self.gen,
            &digesting,
            reminding.as_ref().map(|(g, _)| g),
            hyper.lambda,
            &mut self.opt,
            lr,
        )?;
        Ok(IterationStats {
            digesting: dig_value,
            reminding: reminding.map(|(_, v)| v),
        })
    }
}

fn expect_from(msg: &Message, center_id: &str, kind: MessageKind) -> Result<()> {
    if msg.kind() != kind || msg.center_id() != center_id {
        return Err(Error::Protocol(format!(
            "expected {kind:?} from {center_id}, got {:?} from {}",
            msg.kind(),
            msg.center_id()
        )));
    }
    Ok(())
}

/// Summary of one task.
#[derive(Debug, Clone)]
pub struct TaskReport {
    pub task: usize,
    pub alpha: f64,
    pub trace: Vec<TraceEntry>,
    pub stats: Vec<IterationStats>,
}

/// One task of a scenario.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub centers: Vec<CenterDataset>,
    pub iterations: usize,
    pub overrides: HyperOverrides,
}

/// Per-task replacements for global hyperparameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HyperOverrides {
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub d_iters: Option<usize>,
}

impl HyperOverrides {
    pub fn is_empty(&self) -> bool {
        *self == HyperOverrides::default()
    }

    pub fn apply(&self, base: &GanHyper) -> GanHyper {
        let mut h = base.clone();
        if let Some(l) = self.lambda {
            h.lambda = l;
        }
        if let Some(lr) = self.lr {
            h.gen_adam.lr = lr;
            h.disc_adam.lr = lr;
        }
        if let Some(m) = self.m {
            h.m = m;
        }
        if let Some(n) = self.n {
            h.n = n;
        }
        if let Some(d) = self.d_iters {
            h.d_iters = d;
        }
        h
    }
}

impl TaskSpec {
    /// Label counts summed over the task's centers (`n_t g_t`).
    pub fn label_counts(&self) -> BTreeMap<LabelId, u64> {
        let mut out = BTreeMap::new();
        for c in &self.centers {
            for (&y, &n) in c.label_counts() {
                *out.entry(y).or_insert(0) += n;
            }
        }
        out
    }
}

/// Ordered tasks over a shared ground truth.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: Option<String>,
    pub truth: Arc<CondGaussianMixture>,
    pub tasks: Vec<TaskSpec>,
    pub hyper: GanHyper,
    pub seed: u64,
}

impl Scenario {
    pub fn vocab_size(&self) -> usize {
        self.truth.vocab_size()
    }

    pub fn data_dim(&self) -> usize {
        self.truth.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.tasks.is_empty() {
            return Err(Error::Config("scenario has no tasks".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.centers.is_empty() {
                return Err(Error::Config(format!("task {} has no centers", i + 1)));
            }
            let mut ids: Vec<&str> = t.centers.iter().map(|c| c.id()).collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() != t.centers.len() {
                return Err(Error::Config(format!("task {} repeats a center name", i + 1)));
            }
            for c in &t.centers {
                if !Arc::ptr_eq(c.truth(), &self.truth) && **c.truth() != *self.truth {
                    return Err(Error::Config(format!("center {} uses a different ground truth", c.id())));
                }
            }
            t.overrides.apply(&self.hyper).validate()?;
        }
        Ok(())
    }
}

/// Brings the task's centers online with fresh discriminators.
pub fn open_centers(
    centers: &[CenterDataset],
    t: usize,
    iterations: usize,
    hyper: &GanHyper,
    keys: RunKeys,
) -> Result<InProcessLink> {
    let nodes = centers
        .iter()
        .enumerate()
        .map(|(k, ds)| {
            DiscriminatorNode::new(
                ds.clone(),
                hyper,
                iterations * hyper.d_iters,
                keys.center(t, k, purpose::DISC_INIT),
                keys.center(t, k, purpose::CENTER),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InProcessLink::new(nodes))
}

/// Runs task `t` against the centers behind `link`, then merges the task's
/// label counts into the store and freezes the generator for the next task.
pub fn run_task(
    node: &mut GeneratorNode,
    link: &mut dyn CenterLink,
    t: usize,
    iterations: usize,
    hyper: &GanHyper,
    keys: RunKeys,
) -> Result<Vec<IterationStats>> {
    let centers = link.online();
    if centers.is_empty() {
        return Err(Error::Protocol(format!("task {t} has no online centers")));
    }
    hyper.validate()?;
    node.begin_task(t, hyper, keys)?;
    let sizes: Vec<u64> = centers.iter().map(|c| c.size).collect();
    let weights = mixture_weights(&sizes)?;
    let mut stats = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let lr = scheduled_lr(hyper.gen_adam.lr, it, iterations, hyper.lr_decay);
        stats.push(node.train_iteration(link, &weights, hyper, lr)?);
    }
    let mut counts = BTreeMap::new();
    for c in &centers {
        for (&y, &n) in &c.label_counts {
            *counts.entry(y).or_insert(0) += n;
        }
    }
    node.store.merge(&counts)?;
    node.frozen = Some(snapshot(&node.gen));
    Ok(stats)
}

/// Result of running every task of a scenario.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub node: GeneratorNode,
    /// Generator after each task.
    pub snapshots: Vec<Generator>,
    /// Label support `Ω_t` after each task.
    pub supports: Vec<std::collections::BTreeSet<LabelId>>,
    pub reports: Vec<TaskReport>,
}

/// Knobs that vary between runs of the same scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub keys: RunKeys,
    pub lambda: Option<f64>,
    pub iters_scale: f64,
    pub keep_trace: bool,
}

impl RunOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            keys: RunKeys::new(seed),
            lambda: None,
            iters_scale: 1.0,
            keep_trace: false,
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self {
            lambda: Some(lambda),
            ..self
        }
    }

    pub fn with_iters_scale(self, iters_scale: f64) -> Self {
        Self { iters_scale, ..self }
    }

    pub fn with_trace(self) -> Self {
        Self {
            keep_trace: true,
            ..self
        }
    }
}

/// Iterations after scaling, rounded to the nearest integer.
pub fn scaled_iterations(iterations: usize, scale: f64) -> usize {
    (iterations as f64 * scale).round() as usize
}

/// Runs the tasks of `s` in order.
pub fn run_scenario(s: &Scenario, opts: RunOptions) -> Result<ScenarioRun> {
    s.validate()?;
    if !(opts.iters_scale > 0.0) || !opts.iters_scale.is_finite() {
        return Err(Error::Config(format!("iteration scale {} must be > 0", opts.iters_scale)));
    }
    let keys = opts.keys;
    let mut node = GeneratorNode::init(&s.truth, &s.hyper, keys)?;
    let mut snapshots = Vec::with_capacity(s.tasks.len());
    let mut supports = Vec::with_capacity(s.tasks.len());
    let mut reports = Vec::with_capacity(s.tasks.len());
    for (i, task) in s.tasks.iter().enumerate() {
        let t = i + 1;
        let mut hyper = task.overrides.apply(&s.hyper);
        if let Some(l) = opts.lambda {
            hyper.lambda = l;
        }
        let iterations = scaled_iterations(task.iterations, opts.iters_scale);
        let alpha = node.store.alpha_for(task.centers.iter().map(CenterDataset::size).sum());
        let mut link = open_centers(&task.centers, t, iterations, &hyper, keys)?;
        let stats = run_task(&mut node, &mut link, t, iterations, &hyper, keys)?;
        let trace = link.shut_down();
        audit_generator_inbox(&trace)?;
        snapshots.push(node.gen.clone());
        supports.push(node.store.support());
        reports.push(TaskReport {
            task: t,
            alpha,
            trace: if opts.keep_trace { trace } else { Vec::new() },
            stats,
        });
    }
    Ok(ScenarioRun {
        node,
        snapshots,
        supports,
        reports,
    })
}

/// Largest difference between the digesting gradient assembled from center
/// feedback and the same gradient computed in one pass over the
/// concatenated batch, after `warmup` iterations on task 1 of `s`.
pub fn transport_gap(s: &Scenario, keys: RunKeys, warmup: usize) -> Result<f64> {
    s.validate()?;
    let task = &s.tasks[0];
    let hyper = task.overrides.apply(&s.hyper);
    let mut node = GeneratorNode::init(&s.truth, &s.hyper, keys)?;
    let mut link = open_centers(&task.centers, 1, warmup.max(1), &hyper, keys)?;
    node.begin_task(1, &hyper, keys)?;
    let weights = mixture_weights(&task.centers.iter().map(CenterDataset::size).collect::<Vec<_>>())?;
    for _ in 0..warmup {
        node.train_iteration(&mut link, &weights, &hyper, hyper.gen_adam.lr)?;
    }
    let infos = link.online();
    let (grads, value, records) = node.digest_round(&mut link, &infos, &weights)?;
    let terms: Vec<DigestTerm<'_>> = records
        .iter()
        .zip(link.nodes())
        .map(|(r, n)| DigestTerm {
            disc: n.discriminator(),
            weight: r.weight,
            labels: &r.labels,
            noise: &r.noise,
        })
        .collect();
    let (mono, mono_value) = digesting_gen_grads(node.generator(), &terms, hyper.gen_loss)?;
    Ok(grads.max_abs_diff(&mono)?.max((value - mono_value).abs()))
}
