//! Joint training of the two branches.
//!
//! Each step draws an `m`-row batch from each modality, runs both forward
//! passes, evaluates
//!
//! ```text
//! loss = CE_image + CE_text + w · (align(h_I, h_T) + align(o_I, o_T))
//! ```
//!
//! and applies momentum SGD to both branches. `h` is the post-ReLU fc1
//! activation and `o` the fc2 logits.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::alignment::{alignment_term, coral_loss, sample_triplets, AlignmentKind, TripletPlan};
use crate::dataset::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::network::{
    backward, cross_entropy, BranchGrads, BranchNet, ForwardCache, ModelParams, ParamGrads,
    DEFAULT_HIDDEN,
};
use crate::numerics::{derive_seed, seeded_rng, stream, Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub alignment: AlignmentKind,
    pub alignment_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 50,
            hidden: DEFAULT_HIDDEN,
            alignment: AlignmentKind::Coral,
            alignment_weight: 1.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !self.alignment_weight.is_finite() || self.alignment_weight < 0.0 {
            return Err(Error::Config(format!(
                "alignment weight must be non-negative, got {}",
                self.alignment_weight
            )));
        }
        self.alignment.validate()
    }
}

/// Per-term breakdown of the joint objective for one batch.
///
/// `align_fc1`/`align_fc2` are the unweighted values of the configured
/// alignment term; `coral_fc1`/`coral_fc2` are always CORAL distances,
/// whatever term is being optimized.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub image: f64,
    pub text: f64,
    pub align_fc1: f64,
    pub align_fc2: f64,
    pub coral_fc1: f64,
    pub coral_fc2: f64,
}

/// Upstream gradients for the hidden and logit activations of each branch.
#[derive(Debug, Clone)]
pub struct Injections {
    pub image_hidden: Matrix,
    pub image_logits: Matrix,
    pub text_hidden: Matrix,
    pub text_logits: Matrix,
}

/// The joint objective: cross-entropy per branch plus a weighted
/// alignment term at both attachment points.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub alignment: AlignmentKind,
    pub weight: f64,
}

impl Objective {
    /// Loss breakdown and the alignment gradients to inject. `triplets` is
    /// needed only for triplet alignment.
    pub fn evaluate(
        &self,
        img: &ForwardCache,
        txt: &ForwardCache,
        y_img: &[usize],
        y_txt: &[usize],
        triplets: Option<&TripletPlan>,
    ) -> Result<(LossBreakdown, Injections)> {
        let image = cross_entropy(&img.probs, y_img)?;
        let text = cross_entropy(&txt.probs, y_txt)?;
        let (a1, gi1, gt1) = alignment_term(self.alignment, &img.hidden, &txt.hidden, triplets)?;
        let (a2, gi2, gt2) = alignment_term(self.alignment, &img.logits, &txt.logits, triplets)?;
        let (coral_fc1, coral_fc2) = match self.alignment {
            AlignmentKind::Coral => (a1, a2),
            _ => (
                coral_loss(&img.hidden, &txt.hidden)?,
                coral_loss(&img.logits, &txt.logits)?,
            ),
        };
        let w = self.weight;
        let breakdown = LossBreakdown {
            total: image + text + w * (a1 + a2),
            image,
            text,
            align_fc1: a1,
            align_fc2: a2,
            coral_fc1,
            coral_fc2,
        };
        let injections = Injections {
            image_hidden: gi1.scale(w),
            image_logits: gi2.scale(w),
            text_hidden: gt1.scale(w),
            text_logits: gt2.scale(w),
        };
        Ok((breakdown, injections))
    }
}

/// Joint objective for one pair of batches; see [`Objective::evaluate`].
pub fn total_loss(
    img: &ForwardCache,
    txt: &ForwardCache,
    y_img: &[usize],
    y_txt: &[usize],
    alignment: AlignmentKind,
    weight: f64,
    triplets: Option<&TripletPlan>,
) -> Result<LossBreakdown> {
    Objective { alignment, weight }
        .evaluate(img, txt, y_img, y_txt, triplets)
        .map(|(b, _)| b)
}

/// Gradients of the joint objective with respect to both branches.
pub fn joint_gradients(
    params: &ModelParams,
    img: &ForwardCache,
    txt: &ForwardCache,
    y_img: &[usize],
    y_txt: &[usize],
    objective: &Objective,
    triplets: Option<&TripletPlan>,
) -> Result<(LossBreakdown, ParamGrads)> {
    let (breakdown, inj) = objective.evaluate(img, txt, y_img, y_txt, triplets)?;
    let image = backward(&params.image, img, y_img, &inj.image_hidden, &inj.image_logits)?;
    let text = backward(&params.text, txt, y_txt, &inj.text_hidden, &inj.text_logits)?;
    Ok((breakdown, ParamGrads { image, text }))
}

fn step_branch(
    params: &mut BranchNet,
    grads: &BranchGrads,
    velocity: &mut BranchGrads,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let g = grads.blocks();
    let shapes_match = params
        .blocks()
        .iter()
        .zip(g.iter())
        .zip(velocity.blocks().iter())
        .all(|((p, g), v)| p.len() == g.len() && p.len() == v.len());
    if !shapes_match {
        return Err(Error::Shape("parameter, gradient and velocity shapes differ".into()));
    }
    for ((p, g), v) in params
        .blocks_mut()
        .into_iter()
        .zip(g)
        .zip(velocity.blocks_mut())
    {
        for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = momentum * *v + g;
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Classical momentum SGD: `v ← μ·v + g`, `θ ← θ − λ·v`.
///
/// With `μ = 0` this is plain `θ ← θ − λ·g`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    velocity: &mut ParamGrads,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    step_branch(&mut params.image, &grads.image, &mut velocity.image, learning_rate, momentum)?;
    step_branch(&mut params.text, &grads.text, &mut velocity.text, learning_rate, momentum)
}

/// Draws batches from one modality's training pool: uniformly without
/// replacement within a pass, reshuffling and continuing when a pass runs
/// out.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(pool: Vec<usize>, what: &'static str) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyPartition(what));
        }
        Ok(Self {
            order: Vec::new(),
            cursor: 0,
            pool,
        })
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn next_batch(&mut self, m: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            if self.cursor == self.order.len() {
                self.order.clone_from(&self.pool);
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            let take = (m - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

/// One batch of features and labels for `modality` drawn by `sampler`.
pub fn sample_batch(
    dataset: &Dataset,
    modality: Modality,
    sampler: &mut BatchSampler,
    m: usize,
    rng: &mut Rng,
) -> (Matrix, Vec<usize>) {
    let idx = sampler.next_batch(m, rng);
    (dataset.features(modality, &idx), dataset.labels(modality, &idx))
}

/// Per-epoch means over the epoch's steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,total_loss,loss_img,loss_txt,coral_fc1,coral_fc2";

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn first(&self) -> Option<&LossBreakdown> {
        self.epochs.first().map(|e| &e.loss)
    }

    pub fn last(&self) -> Option<&LossBreakdown> {
        self.epochs.last().map(|e| &e.loss)
    }

    /// CSV with one row per epoch, 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for e in &self.epochs {
            let l = &e.loss;
            writeln!(
                w,
                "{},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}",
                e.epoch, l.total, l.image, l.text, l.coral_fc1, l.coral_fc2
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

/// Training pools: dataset indices per modality.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPools<'a> {
    pub image: &'a [usize],
    pub text: &'a [usize],
}

/// Freshly initialized parameters for `dataset` under `config`.
pub fn init_params(dataset: &Dataset, config: &TrainConfig) -> ModelParams {
    let mut rng = seeded_rng(derive_seed(config.seed, stream::INIT));
    ModelParams::init(
        dataset.dim(Modality::Image),
        dataset.dim(Modality::Text),
        config.hidden,
        dataset.classes(),
        &mut rng,
    )
}

/// Runs `config.epochs` epochs of joint training and returns the final
/// parameters and the per-epoch log.
///
/// An epoch is `ceil(max(|train_I|, |train_T|) / m)` steps, so the larger
/// modality is seen once per epoch and the smaller one recycles.
pub fn train(
    dataset: &Dataset,
    pools: TrainingPools<'_>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    train_from(dataset, pools, config, init_params(dataset, config))
}

/// As [`train`], starting from the given parameters.
pub fn train_from(
    dataset: &Dataset,
    pools: TrainingPools<'_>,
    config: &TrainConfig,
    mut params: ModelParams,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    if params.image.input_dim() != dataset.dim(Modality::Image)
        || params.text.input_dim() != dataset.dim(Modality::Text)
        || params.classes() < dataset.classes()
    {
        return Err(Error::Shape(format!(
            "model ({}→·→{}, {}→·→{}) does not fit dataset ({} / {} features, {} labels)",
            params.image.input_dim(),
            params.image.classes(),
            params.text.input_dim(),
            params.text.classes(),
            dataset.dim(Modality::Image),
            dataset.dim(Modality::Text),
            dataset.classes()
        )));
    }
    let mut img_sampler = BatchSampler::new(pools.image.to_vec(), "image training")?;
    let mut txt_sampler = BatchSampler::new(pools.text.to_vec(), "text training")?;
    let mut rng = seeded_rng(derive_seed(config.seed, stream::SAMPLING));
    let mut triplet_rng = seeded_rng(derive_seed(config.seed, stream::TRIPLETS));
    let objective = Objective {
        alignment: config.alignment,
        weight: config.alignment_weight,
    };
    let m = config.batch_size;
    let steps = img_sampler.pool_len().max(txt_sampler.pool_len()).div_ceil(m);
    let mut velocity = params.zeros_like();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        let mut acc = LossBreakdown::default();
        for step in 0..steps {
            let (x_img, y_img) = sample_batch(dataset, Modality::Image, &mut img_sampler, m, &mut rng);
            let (x_txt, y_txt) = sample_batch(dataset, Modality::Text, &mut txt_sampler, m, &mut rng);
            let img = params.image.forward(&x_img)?;
            let txt = params.text.forward(&x_txt)?;
            let plan = matches!(config.alignment, AlignmentKind::Triplet { .. })
                .then(|| sample_triplets(&y_img, &y_txt, &mut triplet_rng));
            let (loss, grads) =
                joint_gradients(&params, &img, &txt, &y_img, &y_txt, &objective, plan.as_ref())?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: loss.total,
                });
            }
            sgd_step(&mut params, &grads, &mut velocity, config.learning_rate, config.momentum)?;
            accumulate(&mut acc, &loss);
        }
        let mean = scale_breakdown(&acc, 1.0 / steps as f64);
        log::debug!(
            "epoch {epoch}: loss {:.6} (img {:.6}, txt {:.6}, coral fc1 {:.3e}, fc2 {:.3e})",
            mean.total,
            mean.image,
            mean.text,
            mean.coral_fc1,
            mean.coral_fc2
        );
        log.epochs.push(EpochStats { epoch, loss: mean });
    }
    Ok((params, log))
}

fn accumulate(acc: &mut LossBreakdown, l: &LossBreakdown) {
    acc.total += l.total;
    acc.image += l.image;
    acc.text += l.text;
    acc.align_fc1 += l.align_fc1;
    acc.align_fc2 += l.align_fc2;
    acc.coral_fc1 += l.coral_fc1;
    acc.coral_fc2 += l.coral_fc2;
}

fn scale_breakdown(l: &LossBreakdown, s: f64) -> LossBreakdown {
    LossBreakdown {
        total: l.total * s,
        image: l.image * s,
        text: l.text * s,
        align_fc1: l.align_fc1 * s,
        align_fc2: l.align_fc2 * s,
        coral_fc1: l.coral_fc1 * s,
        coral_fc2: l.coral_fc2 * s,
    }
}
