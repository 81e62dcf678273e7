//! Training objectives: supervised BCE per head, the two neighbor-target
//! contrastive terms (query side and item side), mutual distillation between
//! the heads, and their weighted total.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::model::config::ModelConfig;
use crate::model::forward::{forward_pair, PairExample, PairForward};
use crate::numerics::fmath;
use crate::numerics::ops;
use crate::numerics::params::ParamSet;
use crate::numerics::tape::Tape;
use crate::numerics::tensor::Tensor;

/// Log arguments are clamped this far away from {0, 1}.
pub const CLAMP_EPS: f64 = 1e-7;

/// Per-term loss values of one batch. `total` folds the lambda weights in;
/// the individual fields are unweighted. Disabled terms are exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub l_sup_q: f64,
    pub l_sup_i: f64,
    pub l_qntc: f64,
    pub l_intc: f64,
    pub l_mutual: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// The term names paired with values, in reporting order.
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("l_sup_q", self.l_sup_q),
            ("l_sup_i", self.l_sup_i),
            ("l_qntc", self.l_qntc),
            ("l_intc", self.l_intc),
            ("l_mutual", self.l_mutual),
            ("total", self.total),
        ]
    }
}

/// One training example prepared for the batch objective.
#[derive(Debug, Clone)]
pub struct BatchExample {
    pub ex: PairExample,
    pub label: u8,
    /// Masking key on the query side (the query text).
    pub query_key: String,
    /// Masking key on the item side (the item id).
    pub item_key: String,
}

fn clamp_unit(s: f64) -> f64 {
    s.max(CLAMP_EPS).min(1.0 - CLAMP_EPS)
}

/// Binary cross-entropy with boundary clamping.
pub fn bce(score: f64, label: u8) -> f64 {
    let s = clamp_unit(score);
    if label == 1 {
        -fmath::ln(s)
    } else {
        -fmath::ln(1.0 - s)
    }
}

/// Tape form of [`bce`]; `score` is a 1x1 tensor.
pub fn bce_traced(tape: &mut Tape, score: &Tensor, label: u8) -> Result<Tensor> {
    let s = ops::clamp(tape, score, CLAMP_EPS, 1.0 - CLAMP_EPS)?;
    if label == 1 {
        let l = ops::ln(tape, &s)?;
        ops::affine(tape, &l, -1.0, 0.0)
    } else {
        let one_minus = ops::affine(tape, &s, -1.0, 1.0)?;
        let l = ops::ln(tape, &one_minus)?;
        ops::affine(tape, &l, -1.0, 0.0)
    }
}

/// Symmetric Bernoulli KL between the two head scores.
pub fn mutual_distill(score_q: f64, score_i: f64) -> f64 {
    let p = clamp_unit(score_q);
    let q = clamp_unit(score_i);
    let kl = |a: f64, b: f64| a * fmath::ln(a / b) + (1.0 - a) * fmath::ln((1.0 - a) / (1.0 - b));
    0.5 * kl(p, q) + 0.5 * kl(q, p)
}

/// Tape form of [`mutual_distill`].
pub fn mutual_distill_traced(tape: &mut Tape, score_q: &Tensor, score_i: &Tensor) -> Result<Tensor> {
    let p = ops::clamp(tape, score_q, CLAMP_EPS, 1.0 - CLAMP_EPS)?;
    let q = ops::clamp(tape, score_i, CLAMP_EPS, 1.0 - CLAMP_EPS)?;
    let one_minus_p = ops::affine(tape, &p, -1.0, 1.0)?;
    let one_minus_q = ops::affine(tape, &q, -1.0, 1.0)?;
    let lp = ops::ln(tape, &p)?;
    let lq = ops::ln(tape, &q)?;
    let l1p = ops::ln(tape, &one_minus_p)?;
    let l1q = ops::ln(tape, &one_minus_q)?;

    let kl = |tape: &mut Tape, a: &Tensor, one_minus_a: &Tensor, la: &Tensor, lb: &Tensor, l1a: &Tensor, l1b: &Tensor| -> Result<Tensor> {
        let d1 = ops::sub(tape, la, lb)?;
        let t1 = ops::mul(tape, a, &d1)?;
        let d2 = ops::sub(tape, l1a, l1b)?;
        let t2 = ops::mul(tape, one_minus_a, &d2)?;
        ops::add(tape, &t1, &t2)
    };
    let kl_pq = kl(tape, &p, &one_minus_p, &lp, &lq, &l1p, &l1q)?;
    let kl_qp = kl(tape, &q, &one_minus_q, &lq, &lp, &l1q, &l1p)?;
    let sum = ops::add(tape, &kl_pq, &kl_qp)?;
    ops::affine(tape, &sum, 0.5, 0.0)
}

/// InfoNCE over cosine similarities at temperature `tau`.
///
/// `-ln( exp(sim(a,p)/tau) / (exp(sim(a,p)/tau) + sum_j exp(sim(a,n_j)/tau)) )`
pub fn info_nce(anchor: &Tensor, positive: &Tensor, negatives: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    info_nce_traced(&mut tape, anchor, positive, negatives, tau)?.value()
}

/// Tape form of [`info_nce`]. Zero-norm vectors are rejected.
pub fn info_nce_traced(
    tape: &mut Tape,
    anchor: &Tensor,
    positive: &Tensor,
    negatives: &Tensor,
    tau: f64,
) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(CoreError::Contract(alloc::format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let a = ops::l2_normalize_rows(tape, anchor)?;
    let p = ops::l2_normalize_rows(tape, positive)?;
    let n = ops::l2_normalize_rows(tape, negatives)?;
    let sim_p = ops::matmul_tb(tape, &a, &p)?; // 1 x 1
    let sim_n = ops::matmul_tb(tape, &a, &n)?; // 1 x m
    let sims = ops::concat_cols(tape, &[&sim_p, &sim_n])?;
    let scaled = ops::affine(tape, &sims, 1.0 / tau, 0.0)?;

    // log-sum-exp with a constant shift; the shift cancels in the gradient.
    let shift = scaled
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = ops::affine(tape, &scaled, 1.0, -shift)?;
    let exp = ops::exp(tape, &shifted)?;
    let sum = ops::sum_all(tape, &exp)?;
    let ln_sum = ops::ln(tape, &sum)?;
    let lse = ops::affine(tape, &ln_sum, 1.0, shift)?;

    let sp_scaled = ops::affine(tape, &sim_p, 1.0 / tau, 0.0)?;
    ops::sub(tape, &lse, &sp_scaled)
}

/// One side's inputs to a neighbor-target contrastive term.
struct ContrastEntry<'a> {
    anchor: &'a Tensor,
    positive: &'a Tensor,
    key: &'a str,
    has_neighbors: bool,
}

/// Mean InfoNCE over the batch with in-batch negatives.
///
/// Anchors are the target pooled representations, positives the fused
/// neighbor aggregates; negatives are the other examples' aggregates with
/// same-key examples masked out. Examples without neighbors, or with every
/// negative masked, are skipped; an empty kept set yields zero.
fn contrastive_loss(tape: &mut Tape, entries: &[ContrastEntry<'_>], tau: f64) -> Result<Tensor> {
    if entries.len() < 2 {
        return Err(CoreError::Contract(alloc::format!(
            "contrastive terms need a batch of >= 2, got {}",
            entries.len()
        )));
    }
    let mut per_example = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        if !e.has_neighbors {
            continue;
        }
        let negatives: Vec<&Tensor> = entries
            .iter()
            .enumerate()
            .filter(|(j, other)| *j != i && other.key != e.key)
            .map(|(_, other)| other.positive)
            .collect();
        if negatives.is_empty() {
            continue;
        }
        let stacked = ops::concat_rows(tape, &negatives)?;
        per_example.push(info_nce_traced(tape, e.anchor, e.positive, &stacked, tau)?);
    }
    if per_example.is_empty() {
        return Tensor::scalar(0.0);
    }
    let mut acc = per_example[0].clone();
    for t in &per_example[1..] {
        acc = ops::add(tape, &acc, t)?;
    }
    ops::affine(tape, &acc, 1.0 / per_example.len() as f64, 0.0)
}

/// Query-side neighbor-target contrast over a batch of tower outputs.
pub fn qntc_loss(tape: &mut Tape, batch: &[BatchExample], fwds: &[PairForward], tau: f64) -> Result<Tensor> {
    let entries: Vec<ContrastEntry<'_>> = batch
        .iter()
        .zip(fwds)
        .map(|(b, f)| ContrastEntry {
            anchor: &f.query_tower.target_pooled,
            positive: &f.query_tower.nca_fused,
            key: &b.query_key,
            has_neighbors: f.query_tower.neighbors_pooled.is_some(),
        })
        .collect();
    contrastive_loss(tape, &entries, tau)
}

/// Item-side neighbor-target contrast over a batch of tower outputs.
pub fn intc_loss(tape: &mut Tape, batch: &[BatchExample], fwds: &[PairForward], tau: f64) -> Result<Tensor> {
    let entries: Vec<ContrastEntry<'_>> = batch
        .iter()
        .zip(fwds)
        .map(|(b, f)| ContrastEntry {
            anchor: &f.item_tower.target_pooled,
            positive: &f.item_tower.nca_fused,
            key: &b.item_key,
            has_neighbors: f.item_tower.neighbors_pooled.is_some(),
        })
        .collect();
    contrastive_loss(tape, &entries, tau)
}

fn mean_scalars(tape: &mut Tape, terms: &[Tensor]) -> Result<Tensor> {
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = ops::add(tape, &acc, t)?;
    }
    ops::affine(tape, &acc, 1.0 / terms.len() as f64, 0.0)
}

/// Build the full batch objective on `tape`.
///
/// Returns the per-term breakdown plus the scalar total tensor to run
/// `backward` on. Terms whose flag is off (or whose lambda is zero)
/// contribute exactly zero and add no tape nodes.
pub fn total_loss(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &ModelConfig,
    batch: &[BatchExample],
) -> Result<(LossBreakdown, Tensor)> {
    if batch.is_empty() {
        return Err(CoreError::Contract("empty batch".into()));
    }
    let fwds: Vec<PairForward> = batch
        .iter()
        .map(|b| forward_pair(tape, params, cfg, &b.ex))
        .collect::<Result<_>>()?;

    let mut sup_q = Vec::with_capacity(batch.len());
    let mut sup_i = Vec::with_capacity(batch.len());
    for (b, f) in batch.iter().zip(&fwds) {
        sup_q.push(bce_traced(tape, &f.query_tower.score, b.label)?);
        sup_i.push(bce_traced(tape, &f.item_tower.score, b.label)?);
    }
    let l_sup_q = mean_scalars(tape, &sup_q)?;
    let l_sup_i = mean_scalars(tape, &sup_i)?;
    let mut total = ops::add(tape, &l_sup_q, &l_sup_i)?;

    let mut l_qntc = 0.0;
    if cfg.use_qntc && cfg.lambda_qntc > 0.0 {
        let t = qntc_loss(tape, batch, &fwds, cfg.temperature)?;
        l_qntc = t.value()?;
        let weighted = ops::affine(tape, &t, cfg.lambda_qntc, 0.0)?;
        total = ops::add(tape, &total, &weighted)?;
    }
    let mut l_intc = 0.0;
    if cfg.use_intc && cfg.lambda_intc > 0.0 {
        let t = intc_loss(tape, batch, &fwds, cfg.temperature)?;
        l_intc = t.value()?;
        let weighted = ops::affine(tape, &t, cfg.lambda_intc, 0.0)?;
        total = ops::add(tape, &total, &weighted)?;
    }
    let mut l_mutual = 0.0;
    if cfg.use_mutual && cfg.lambda_mutual > 0.0 {
        let mut terms = Vec::with_capacity(batch.len());
        for f in &fwds {
            terms.push(mutual_distill_traced(
                tape,
                &f.query_tower.score,
                &f.item_tower.score,
            )?);
        }
        let t = mean_scalars(tape, &terms)?;
        l_mutual = t.value()?;
        let weighted = ops::affine(tape, &t, cfg.lambda_mutual, 0.0)?;
        total = ops::add(tape, &total, &weighted)?;
    }

    let breakdown = LossBreakdown {
        l_sup_q: l_sup_q.value()?,
        l_sup_i: l_sup_i.value()?,
        l_qntc,
        l_intc,
        l_mutual,
        total: total.value()?,
    };
    Ok((breakdown, total))
}
