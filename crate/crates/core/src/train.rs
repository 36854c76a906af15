//! Seeded mini-batch training under the margin-ranking or cross-entropy loss.
//!
//! Randomness comes from ChaCha8 seeded with `config.seed`, split into three
//! independent streams: parameter initialisation, epoch shuffling and
//! negative sampling. Changing the number of negatives therefore leaves the
//! initial parameters untouched. A run is a pure function of the graph and
//! the config.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Split, Triple};
use crate::models::{accumulate_grad, EmbeddingModel, LossKind, Method, ModelConfig, OptimizerKind};

pub const ADAGRAD_EPSILON: f64 = 1e-10;

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const NEGATIVE_STREAM: u64 = 2;

/// Maximum redraws per negative when `filtered_negatives` is on.
const FILTER_RETRIES: usize = 32;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a master seed and a named path such as
/// `competitor/3` or `aggregate/2/7`.
pub fn derive_seed(master: u64, path: &str) -> u64 {
    let digest = Sha256::digest(format!("{master}/{path}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// `max(0, margin - positive + negative)`
pub fn margin_pair_loss(margin: f64, positive: f64, negative: f64) -> f64 {
    (margin - positive + negative).max(0.0)
}

/// `log(1 + exp(-label * score))` for `label` in {-1, +1}.
pub fn logistic_loss(label: f64, score: f64) -> f64 {
    softplus(-label * score)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Corrupts head or tail (fair coin) with a uniformly drawn different entity.
///
/// Negatives may coincide with known-true triples unless `filtered` is set,
/// in which case a bounded number of redraws is attempted.
pub fn sample_negatives<R: Rng>(
    rng: &mut R,
    triple: Triple,
    graph: &KnowledgeGraph,
    k: usize,
    filtered: bool,
) -> Result<Vec<Triple>> {
    let n = graph.num_entities() as u32;
    if n < 2 {
        return Err(Error::Config(
            "cannot corrupt triples in a graph with one entity".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Config("need at least one negative".into()));
    }
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut attempt = 0;
        loop {
            let corrupt_head = rng.random_bool(0.5);
            let original = if corrupt_head { triple.head } else { triple.tail };
            let mut pick = rng.random_range(0..n - 1);
            if pick >= original.0 {
                pick += 1;
            }
            let mut neg = triple;
            if corrupt_head {
                neg.head = EntityId(pick);
            } else {
                neg.tail = EntityId(pick);
            }
            attempt += 1;
            if !filtered || attempt > FILTER_RETRIES || !graph.is_known(&neg) {
                out.push(neg);
                break;
            }
        }
    }
    Ok(out)
}

/// Gradient buffer over the full tables that tracks which rows were
/// touched, so clearing and applying cost only the touched rows.
#[derive(Debug, Clone)]
pub struct SparseGrad {
    entity_width: usize,
    relation_width: usize,
    entity: Vec<f64>,
    relation: Vec<f64>,
    entity_touched: Vec<bool>,
    relation_touched: Vec<bool>,
    entity_rows: Vec<EntityId>,
    relation_rows: Vec<RelationId>,
    scratch: [Vec<f64>; 3],
}

impl SparseGrad {
    pub fn new(model: &EmbeddingModel) -> Self {
        let (ew, rw) = (model.config.entity_width(), model.config.relation_width());
        SparseGrad {
            entity_width: ew,
            relation_width: rw,
            entity: vec![0.0; model.entity_table.len()],
            relation: vec![0.0; model.relation_table.len()],
            entity_touched: vec![false; model.num_entities],
            relation_touched: vec![false; model.num_relations],
            entity_rows: Vec::new(),
            relation_rows: Vec::new(),
            scratch: [vec![0.0; ew], vec![0.0; rw], vec![0.0; ew]],
        }
    }

    /// Touched entity rows in ascending id order.
    pub fn entity_rows(&self) -> Vec<EntityId> {
        let mut rows = self.entity_rows.clone();
        rows.sort();
        rows
    }

    pub fn relation_rows(&self) -> Vec<RelationId> {
        let mut rows = self.relation_rows.clone();
        rows.sort();
        rows
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let w = self.entity_width;
        &self.entity[e.index() * w..(e.index() + 1) * w]
    }

    pub fn relation(&self, r: RelationId) -> &[f64] {
        let w = self.relation_width;
        &self.relation[r.index() * w..(r.index() + 1) * w]
    }

    pub fn clear(&mut self) {
        let (ew, rw) = (self.entity_width, self.relation_width);
        for e in self.entity_rows.drain(..) {
            self.entity[e.index() * ew..(e.index() + 1) * ew].fill(0.0);
            self.entity_touched[e.index()] = false;
        }
        for r in self.relation_rows.drain(..) {
            self.relation[r.index() * rw..(r.index() + 1) * rw].fill(0.0);
            self.relation_touched[r.index()] = false;
        }
    }

    fn add_score_grad(&mut self, model: &EmbeddingModel, t: &Triple, scale: f64) {
        if scale == 0.0 {
            return;
        }
        let cfg = &model.config;
        let [mut gh, mut gr, mut gt] = std::mem::take(&mut self.scratch);
        for v in [&mut gh, &mut gr, &mut gt] {
            v.fill(0.0);
        }
        accumulate_grad(
            cfg.method,
            cfg.embedding_dim,
            model.entity(t.head),
            model.relation(t.relation),
            model.entity(t.tail),
            scale,
            &mut gh,
            &mut gr,
            &mut gt,
        );
        self.add_entity(t.head, &gh);
        self.add_entity(t.tail, &gt);
        self.add_relation(t.relation, &gr);
        self.scratch = [gh, gr, gt];
    }

    fn add_entity(&mut self, e: EntityId, g: &[f64]) {
        if !std::mem::replace(&mut self.entity_touched[e.index()], true) {
            self.entity_rows.push(e);
        }
        let w = self.entity_width;
        let row = &mut self.entity[e.index() * w..(e.index() + 1) * w];
        row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    fn add_relation(&mut self, r: RelationId, g: &[f64]) {
        if !std::mem::replace(&mut self.relation_touched[r.index()], true) {
            self.relation_rows.push(r);
        }
        let w = self.relation_width;
        let row = &mut self.relation[r.index() * w..(r.index() + 1) * w];
        row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    fn scale(&mut self, factor: f64) {
        let (ew, rw) = (self.entity_width, self.relation_width);
        for e in &self.entity_rows {
            self.entity[e.index() * ew..(e.index() + 1) * ew]
                .iter_mut()
                .for_each(|x| *x *= factor);
        }
        for r in &self.relation_rows {
            self.relation[r.index() * rw..(r.index() + 1) * rw]
                .iter_mut()
                .for_each(|x| *x *= factor);
        }
    }
}

/// Loss of one positive triple against its negatives, plus the L2 penalty on
/// the positive's rows. Adds the gradient into `grad` when given.
pub fn example_objective(
    model: &EmbeddingModel,
    positive: &Triple,
    negatives: &[Triple],
    mut grad: Option<&mut SparseGrad>,
) -> f64 {
    let cfg = &model.config;
    let s_pos = model.score_unchecked(positive);
    let mut loss = 0.0;
    match cfg.loss {
        LossKind::MarginRanking { margin } => {
            for neg in negatives {
                let s_neg = model.score_unchecked(neg);
                let l = margin_pair_loss(margin, s_pos, s_neg);
                loss += l;
                if l > 0.0 {
                    if let Some(g) = grad.as_deref_mut() {
                        g.add_score_grad(model, positive, -1.0);
                        g.add_score_grad(model, neg, 1.0);
                    }
                }
            }
        }
        LossKind::CrossEntropy => {
            loss += logistic_loss(1.0, s_pos);
            if let Some(g) = grad.as_deref_mut() {
                g.add_score_grad(model, positive, -sigmoid(-s_pos));
            }
            for neg in negatives {
                let s_neg = model.score_unchecked(neg);
                loss += logistic_loss(-1.0, s_neg);
                if let Some(g) = grad.as_deref_mut() {
                    g.add_score_grad(model, neg, sigmoid(s_neg));
                }
            }
        }
    }

    if cfg.l2_weight > 0.0 {
        let lambda = cfg.l2_weight;
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let h = model.entity(positive.head);
        let t = model.entity(positive.tail);
        loss += lambda * (sq(h) + sq(t));
        // Phases are periodic; only real-valued relation rows are penalised.
        let penalise_relation = cfg.method != Method::RotatE;
        let r = model.relation(positive.relation);
        if penalise_relation {
            loss += lambda * sq(r);
        }
        if let Some(g) = grad {
            let twice = |v: &[f64]| v.iter().map(|x| 2.0 * lambda * x).collect::<Vec<_>>();
            g.add_entity(positive.head, &twice(h));
            g.add_entity(positive.tail, &twice(t));
            if penalise_relation {
                g.add_relation(positive.relation, &twice(r));
            }
        }
    }
    loss
}

/// Output of one training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: ModelConfig,
    pub epoch_losses: Vec<f64>,
    pub model: EmbeddingModel,
}

fn wrap_phase(x: f64) -> f64 {
    use std::f64::consts::PI;
    let y = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    // floor rounding can land exactly on +PI
    if y >= PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Uniform `±init_scale / sqrt(dim)` initialisation from the init stream.
pub fn initialise(graph: &KnowledgeGraph, config: &ModelConfig) -> EmbeddingModel {
    let mut model = EmbeddingModel::zeros(config.clone(), graph);
    let mut rng = stream_rng(config.seed, INIT_STREAM);
    let bound = config.init_scale / (config.embedding_dim as f64).sqrt();
    for v in model
        .entity_table
        .iter_mut()
        .chain(model.relation_table.iter_mut())
    {
        *v = rng.random_range(-bound..bound);
    }
    model
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    entity_acc: Vec<f64>,
    relation_acc: Vec<f64>,
}

impl Optimizer {
    fn new(model: &EmbeddingModel) -> Self {
        let adagrad = model.config.optimizer == OptimizerKind::Adagrad;
        let len = |n: usize| if adagrad { n } else { 0 };
        Optimizer {
            kind: model.config.optimizer,
            lr: model.config.learning_rate,
            entity_acc: vec![0.0; len(model.entity_table.len())],
            relation_acc: vec![0.0; len(model.relation_table.len())],
        }
    }

    fn step(&mut self, model: &mut EmbeddingModel, grad: &SparseGrad) {
        let ew = model.config.entity_width();
        let rw = model.config.relation_width();
        for &e in &grad.entity_rows {
            let g = grad.entity(e);
            let off = e.index() * ew;
            Self::update(
                self.kind,
                self.lr,
                &mut model.entity_table[off..off + ew],
                acc_slice(&mut self.entity_acc, off, ew),
                g,
            );
        }
        let phases = model.config.method == Method::RotatE;
        for &r in &grad.relation_rows {
            let g = grad.relation(r);
            let off = r.index() * rw;
            let row = &mut model.relation_table[off..off + rw];
            Self::update(
                self.kind,
                self.lr,
                row,
                acc_slice(&mut self.relation_acc, off, rw),
                g,
            );
            if phases {
                row.iter_mut().for_each(|p| *p = wrap_phase(*p));
            }
        }
    }

    fn update(kind: OptimizerKind, lr: f64, params: &mut [f64], acc: &mut [f64], g: &[f64]) {
        match kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(g) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adagrad => {
                for ((p, a), g) in params.iter_mut().zip(acc.iter_mut()).zip(g) {
                    *a += g * g;
                    *p -= lr * g / (a.sqrt() + ADAGRAD_EPSILON);
                }
            }
        }
    }
}

fn acc_slice(acc: &mut [f64], off: usize, width: usize) -> &mut [f64] {
    if acc.is_empty() {
        &mut []
    } else {
        &mut acc[off..off + width]
    }
}

/// Trains a model on the graph's training split.
pub fn train(graph: &KnowledgeGraph, config: &ModelConfig) -> Result<TrainRun> {
    config.validate()?;
    if graph.num_entities() < 2 {
        return Err(Error::Config("need at least two entities".into()));
    }
    let started = Instant::now();
    let mut model = initialise(graph, config);
    let mut optimizer = Optimizer::new(&model);
    let mut grad = SparseGrad::new(&model);
    let mut shuffle_rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut negative_rng = stream_rng(config.seed, NEGATIVE_STREAM);

    let positives = graph.split(Split::Train);
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.clear();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let pos = positives[idx];
                let negs = sample_negatives(
                    &mut negative_rng,
                    pos,
                    graph,
                    config.negatives_per_positive,
                    config.filtered_negatives,
                )?;
                batch_loss += example_objective(&model, &pos, &negs, Some(&mut grad));
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch} (learning_rate {} may be too high)",
                    config.learning_rate
                )));
            }
            grad.scale(1.0 / batch.len() as f64);
            optimizer.step(&mut model, &grad);
            epoch_loss += batch_loss;
        }
        epoch_losses.push(epoch_loss / positives.len() as f64);
    }

    if !model.is_finite() {
        return Err(Error::Diverged("non-finite parameters after training".into()));
    }
    model.trained_epochs = config.epochs;
    model.epoch_losses = epoch_losses.clone();
    log::debug!(
        "trained {} seed {} in {:.2?}, final loss {:.4}",
        config.method.name(),
        config.seed,
        started.elapsed(),
        epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(TrainRun {
        config: config.clone(),
        epoch_losses,
        model,
    })
}

/// Trains independent runs in parallel; results keep the input order.
pub fn train_many(graph: &KnowledgeGraph, configs: &[ModelConfig]) -> Vec<Result<EmbeddingModel>> {
    configs
        .par_iter()
        .map(|c| train(graph, c).map(|run| run.model))
        .collect()
}
