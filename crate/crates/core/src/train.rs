//! Deterministic mini-batch training: seeded shuffling with neighbor lookup
//! at batch-assembly time, Adam with bias correction, and an epoch hook for
//! checkpointing.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, LabeledPair};
use crate::error::{CoreError, Result};
use crate::graph::BehaviorGraph;
use crate::loss::{bce_traced, total_loss, BatchExample, LossBreakdown};
use crate::model::config::{BaselineKind, ModelConfig};
use crate::model::forward::{forward_baseline_traced, PairExample};
use crate::model::init::{init_baseline_params, init_params};
use crate::numerics::fmath;
use crate::numerics::ops;
use crate::numerics::params::ParamSet;
use crate::numerics::tape::Tape;
use crate::text::vocab::{tokenize, TokenSequence, Vocab};

/// Which scorer a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ModelSpec {
    Barl,
    TwoTower,
    CrossEncoder,
}

impl ModelSpec {
    pub fn baseline_kind(self) -> Option<BaselineKind> {
        match self {
            ModelSpec::Barl => None,
            ModelSpec::TwoTower => Some(BaselineKind::TwoTower),
            ModelSpec::CrossEncoder => Some(BaselineKind::CrossEncoder),
        }
    }
}

/// Full training-run configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub kind: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Memoize neighbor lookups per unique key during batch assembly.
    pub cache_neighbors: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelSpec::Barl,
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            cache_neighbors: true,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    fn contrastive_on(&self) -> bool {
        self.kind == ModelSpec::Barl
            && ((self.model.use_qntc && self.model.lambda_qntc > 0.0)
                || (self.model.use_intc && self.model.lambda_intc > 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(CoreError::Config {
                field: "learning_rate".into(),
                reason: alloc::format!("must be positive, got {}", self.learning_rate),
            });
        }
        if self.batch_size == 0 || (self.contrastive_on() && self.batch_size < 2) {
            return Err(CoreError::Config {
                field: "batch_size".into(),
                reason: alloc::format!(
                    "must be >= 2 with contrastive terms enabled, got {}",
                    self.batch_size
                ),
            });
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b >= 0.0 && b < 1.0) {
                return Err(CoreError::Config {
                    field: name.into(),
                    reason: alloc::format!("must lie in [0, 1), got {b}"),
                });
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(CoreError::Config {
                field: "epsilon".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// One mini-batch of prepared examples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub examples: Vec<BatchExample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Mined neighbor texts for one pair, self-exclusion already applied.
pub fn neighbor_texts(
    graph: &BehaviorGraph,
    pair: &LabeledPair,
    k: usize,
    exclude_self: bool,
) -> Result<(Vec<String>, Vec<String>)> {
    // Mine one extra so self-exclusion cannot under-fill the list.
    let mine_k = if exclude_self { k + 1 } else { k };
    let mut qbn: Vec<String> = graph
        .neighbors_of_query(&pair.query, mine_k)?
        .neighbors
        .into_iter()
        .map(|(t, _)| t)
        .collect();
    let mut ibn: Vec<String> = graph
        .neighbors_of_item(&pair.item_id, mine_k)?
        .neighbors
        .into_iter()
        .map(|(t, _)| t)
        .collect();
    if exclude_self {
        qbn.retain(|t| t != &pair.item);
        ibn.retain(|t| t != &pair.query);
        qbn.truncate(k);
        ibn.truncate(k);
    }
    Ok((qbn, ibn))
}

/// Tokenize one labeled pair plus its mined neighbors.
pub fn prepare_example(
    vocab: &Vocab,
    cfg: &ModelConfig,
    graph: &BehaviorGraph,
    pair: &LabeledPair,
) -> Result<BatchExample> {
    pair.validate()?;
    let (qbn_texts, ibn_texts) =
        neighbor_texts(graph, pair, cfg.k_neighbors, cfg.exclude_self_neighbor)?;
    let tok_all = |texts: &[String]| -> Result<Vec<TokenSequence>> {
        texts.iter().map(|t| tokenize(vocab, t, cfg.max_len)).collect()
    };
    Ok(BatchExample {
        ex: PairExample {
            query: tokenize(vocab, &pair.query, cfg.max_len)?,
            item: tokenize(vocab, &pair.item, cfg.max_len)?,
            qbn: tok_all(&qbn_texts)?,
            ibn: tok_all(&ibn_texts)?,
        },
        label: pair.label,
        query_key: pair.query.clone(),
        item_key: pair.item_id.clone(),
    })
}

/// Seeded shuffle and partition of the dataset into batches.
///
/// Every example appears exactly once. A trailing remainder of one example
/// is folded into the previous batch when contrastive terms require a
/// minimum batch of two.
pub fn make_batches(
    ds: &Dataset,
    graph: &BehaviorGraph,
    vocab: &Vocab,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<Batch>> {
    if ds.is_empty() {
        return Err(CoreError::Contract(
            "make_batches requires a non-empty dataset".into(),
        ));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut cache: BTreeMap<usize, BatchExample> = BTreeMap::new();
    let mut prepared = Vec::with_capacity(ds.len());
    for &idx in &order {
        let example = if cfg.cache_neighbors {
            // Pairs are not deduplicated, so the cache key is the pair index
            // itself; repeated pairs share the prepared form.
            match cache.get(&idx) {
                Some(e) => e.clone(),
                None => {
                    let e = prepare_example(vocab, &cfg.model, graph, &ds.pairs[idx])?;
                    cache.insert(idx, e.clone());
                    e
                }
            }
        } else {
            prepare_example(vocab, &cfg.model, graph, &ds.pairs[idx])?
        };
        prepared.push(example);
    }

    let mut batches: Vec<Batch> = Vec::new();
    let mut start = 0;
    while start < prepared.len() {
        let end = usize::min(start + cfg.batch_size, prepared.len());
        batches.push(Batch {
            examples: prepared[start..end].to_vec(),
        });
        start = end;
    }
    if cfg.contrastive_on() && batches.len() > 1 {
        if let Some(last) = batches.last() {
            if last.len() == 1 {
                let last = batches.pop().expect("non-empty");
                batches
                    .last_mut()
                    .expect("previous batch")
                    .examples
                    .extend(last.examples);
            }
        }
    }
    Ok(batches)
}

/// Adam accumulator state, keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Serializable view: step count plus `(name, m, v)` triples in name
    /// order.
    pub fn snapshot(&self) -> (u64, Vec<(String, Vec<f64>, Vec<f64>)>) {
        let entries = self
            .m
            .iter()
            .map(|(name, m)| {
                let v = self.v.get(name).cloned().unwrap_or_default();
                (name.clone(), m.clone(), v)
            })
            .collect();
        (self.t, entries)
    }

    pub fn restore(t: u64, entries: Vec<(String, Vec<f64>, Vec<f64>)>) -> Self {
        let mut state = AdamState {
            t,
            ..AdamState::default()
        };
        for (name, m, v) in entries {
            state.m.insert(name.clone(), m);
            state.v.insert(name, v);
        }
        state
    }
}

/// One Adam update with bias correction, reading each tensor's `grad`.
pub fn adam_step(
    params: &mut ParamSet,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    state.t += 1;
    let t = state.t;
    let bc1 = 1.0 - fmath::powf(beta1, t as f64);
    let bc2 = 1.0 - fmath::powf(beta2, t as f64);
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let tensor = params.get_mut(&name)?;
        let grad = tensor
            .grad()
            .ok_or_else(|| {
                CoreError::Contract(alloc::format!("parameter `{name}` has no gradient"))
            })?
            .to_vec();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| alloc::vec![0.0; grad.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| alloc::vec![0.0; grad.len()]);
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        }
        let (m, v) = (&state.m[&name], &state.v[&name]);
        tensor.apply_update(|i, w| {
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w - lr * m_hat / (fmath::sqrt(v_hat) + epsilon)
        })?;
    }
    Ok(())
}

/// Batch objective for whichever model kind is being trained. Baselines use
/// plain BCE on their single score, reported in `l_sup_q`.
fn batch_objective(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &TrainConfig,
    batch: &Batch,
) -> Result<(LossBreakdown, crate::numerics::tensor::Tensor)> {
    match cfg.kind.baseline_kind() {
        None => total_loss(tape, params, &cfg.model, &batch.examples),
        Some(kind) => {
            let mut terms = Vec::with_capacity(batch.len());
            for b in &batch.examples {
                let score =
                    forward_baseline_traced(tape, kind, params, &cfg.model, &b.ex.query, &b.ex.item)?;
                terms.push(bce_traced(tape, &score, b.label)?);
            }
            let mut acc = terms[0].clone();
            for t in &terms[1..] {
                acc = ops::add(tape, &acc, t)?;
            }
            let mean = ops::affine(tape, &acc, 1.0 / terms.len() as f64, 0.0)?;
            let value = mean.value()?;
            Ok((
                LossBreakdown {
                    l_sup_q: value,
                    l_sup_i: 0.0,
                    l_qntc: 0.0,
                    l_intc: 0.0,
                    l_mutual: 0.0,
                    total: value,
                },
                mean,
            ))
        }
    }
}

fn check_finite(breakdown: &LossBreakdown) -> Result<()> {
    for (term, value) in breakdown.terms() {
        if !value.is_finite() {
            return Err(CoreError::NonFiniteLoss { term });
        }
    }
    Ok(())
}

/// One forward/backward/Adam update. Deterministic; aborts with the term
/// name if any loss component is non-finite.
pub fn train_step(
    params: &mut ParamSet,
    state: &mut AdamState,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    params.watch_all(&mut tape);
    let (breakdown, total) = batch_objective(&mut tape, params, cfg, batch)?;
    check_finite(&breakdown)?;
    let grads = tape.backward(&total)?;
    params.write_gradients(&grads);
    adam_step(
        params,
        state,
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    )?;
    params.zero_grads();
    Ok(breakdown)
}

/// Loss of one optimizer step, tagged with its position in the run.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
}

/// Final state of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub opt: AdamState,
    pub history: Vec<StepRecord>,
}

impl TrainOutcome {
    /// Mean total loss per epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for rec in &self.history {
            let e = sums.entry(rec.epoch).or_insert((0.0, 0));
            e.0 += rec.loss.total;
            e.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }
}

/// Per-epoch batch-order seed derived from the run seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Initialize parameters for the configured model kind.
pub fn init_for(cfg: &TrainConfig) -> Result<ParamSet> {
    match cfg.kind.baseline_kind() {
        None => init_params(&cfg.model, cfg.seed),
        Some(kind) => init_baseline_params(kind, &cfg.model, cfg.seed),
    }
}

/// Run the full training loop.
///
/// `epoch_hook` fires after each epoch with the current parameters and
/// optimizer state (the CLI writes checkpoints there). Identical inputs and
/// seeds produce bit-identical final parameters.
pub fn train(
    ds: &Dataset,
    graph: &BehaviorGraph,
    vocab: &Vocab,
    cfg: &TrainConfig,
    mut epoch_hook: impl FnMut(usize, &ParamSet, &AdamState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = init_for(cfg)?;
    let mut opt = AdamState::new();
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let batches = make_batches(ds, graph, vocab, cfg, epoch_seed(cfg.seed, epoch))?;
        for (step, batch) in batches.iter().enumerate() {
            let loss = train_step(&mut params, &mut opt, batch, cfg)?;
            history.push(StepRecord { epoch, step, loss });
        }
        epoch_hook(epoch, &params, &opt)?;
    }
    Ok(TrainOutcome {
        params,
        opt,
        history,
    })
}
