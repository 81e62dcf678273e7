//! Forward passes: the dual-tower scorer, the two baselines, and the
//! neighbor-aware routing variant.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::model::config::{BaselineKind, ModelConfig, ScoreCombiner};
use crate::model::fuse::{nca_fuse, tca_fuse};
use crate::numerics::ops;
use crate::numerics::params::ParamSet;
use crate::numerics::tape::Tape;
use crate::numerics::tensor::Tensor;
use crate::text::encoder::{encode, EncoderOutput};
use crate::text::vocab::TokenSequence;

/// One scoring input: the pair plus its tokenized behavior neighbors.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub query: TokenSequence,
    pub item: TokenSequence,
    pub qbn: Vec<TokenSequence>,
    pub ibn: Vec<TokenSequence>,
}

/// Everything one tower produced on the way to its head score.
#[derive(Debug, Clone)]
pub struct TowerIntermediates {
    /// Pooled representation of the tower's own text, `1 x d`.
    pub target_pooled: Tensor,
    /// Stacked pooled neighbor representations, `b x d`, when the tower
    /// consumed any neighbors.
    pub neighbors_pooled: Option<Tensor>,
    /// NCA slot of the head input (target pass-through when NCA is off or no
    /// neighbors exist).
    pub nca_fused: Tensor,
    /// TCA slot of the head input (masked token mean as the fallback).
    pub tca_fused: Tensor,
    /// `1 x 4d` concatenation entering the head.
    pub head_input: Tensor,
    /// Head output after the sigmoid, `1 x 1`.
    pub score: Tensor,
}

/// Forward result of one pair with live tape handles.
#[derive(Debug, Clone)]
pub struct PairForward {
    pub query_tower: TowerIntermediates,
    pub item_tower: TowerIntermediates,
    pub final_score: Tensor,
}

/// Plain-float scoring outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceScore {
    pub score_q: f64,
    pub score_i: f64,
    pub final_score: f64,
    /// Set when the routing variant fell back to the two-tower baseline.
    pub used_fallback: bool,
}

fn mlp_head(tape: &mut Tape, params: &ParamSet, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let h = ops::matmul(tape, x, params.get(&format!("{prefix}.w1"))?)?;
    let h = ops::add_bias(tape, &h, params.get(&format!("{prefix}.b1"))?)?;
    let h = ops::relu(tape, &h)?;
    let o = ops::matmul(tape, &h, params.get(&format!("{prefix}.w2"))?)?;
    let o = ops::add_bias(tape, &o, params.get(&format!("{prefix}.b2"))?)?;
    ops::sigmoid(tape, &o)
}

/// Stack the pooled rows of already-encoded neighbors into `b x d`.
fn stack_pooled(tape: &mut Tape, encs: &[EncoderOutput]) -> Result<Option<Tensor>> {
    if encs.is_empty() {
        return Ok(None);
    }
    let pooled: Vec<&Tensor> = encs.iter().map(|e| &e.pooled).collect();
    Ok(Some(ops::concat_rows(tape, &pooled)?))
}

/// Concatenate the non-PAD token rows of already-encoded neighbors.
fn stack_tokens(tape: &mut Tape, encs: &[EncoderOutput]) -> Result<Option<Tensor>> {
    if encs.is_empty() {
        return Ok(None);
    }
    let mut trimmed = Vec::with_capacity(encs.len());
    for e in encs {
        trimmed.push(ops::slice_rows(tape, &e.token_reps, 0, e.attn_len)?);
    }
    let refs: Vec<&Tensor> = trimmed.iter().collect();
    Ok(Some(ops::concat_rows(tape, &refs)?))
}

fn tower_forward(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &ModelConfig,
    tower: &str,
    target: &EncoderOutput,
    neighbors: &[EncoderOutput],
    counterpart_pooled: &Tensor,
) -> Result<TowerIntermediates> {
    let neighbors_pooled = stack_pooled(tape, neighbors)?;
    let nca_fused = if cfg.use_nca {
        nca_fuse(
            tape,
            params,
            &format!("{tower}.nca"),
            &target.pooled,
            neighbors_pooled.as_ref(),
        )?
    } else {
        target.pooled.clone()
    };

    let neighbor_tokens = if cfg.use_tca {
        stack_tokens(tape, neighbors)?
    } else {
        None
    };
    let tca_fused = tca_fuse(
        tape,
        params,
        &format!("{tower}.tca"),
        &target.token_reps,
        target.attn_len,
        neighbor_tokens.as_ref(),
    )?;

    let head_input = ops::concat_cols(
        tape,
        &[&target.pooled, &nca_fused, &tca_fused, counterpart_pooled],
    )?;
    let score = mlp_head(tape, params, &format!("{tower}.head"), &head_input)?;
    Ok(TowerIntermediates {
        target_pooled: target.pooled.clone(),
        neighbors_pooled,
        nca_fused,
        tca_fused,
        head_input,
        score,
    })
}

/// Full dual-tower forward on a tape. Ablation flags are respected: a
/// disabled neighbor side skips its neighbor encodings entirely, which is
/// score-identical to passing empty lists.
pub fn forward_pair(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &ModelConfig,
    ex: &PairExample,
) -> Result<PairForward> {
    if ex.qbn.len() > cfg.k_neighbors || ex.ibn.len() > cfg.k_neighbors {
        return Err(CoreError::Contract(format!(
            "neighbor lists ({}, {}) exceed k_neighbors {}",
            ex.qbn.len(),
            ex.ibn.len(),
            cfg.k_neighbors
        )));
    }
    let enc_cfg = cfg.encoder_config();
    let q_prefix = cfg.encoder_prefix(true);
    let i_prefix = cfg.encoder_prefix(false);

    let q_enc = encode(tape, params, q_prefix, &enc_cfg, &ex.query)?;
    let i_enc = encode(tape, params, i_prefix, &enc_cfg, &ex.item)?;

    let mut qbn_encs = Vec::new();
    if cfg.use_qbn {
        for seq in &ex.qbn {
            qbn_encs.push(encode(tape, params, q_prefix, &enc_cfg, seq)?);
        }
    }
    let mut ibn_encs = Vec::new();
    if cfg.use_ibn {
        for seq in &ex.ibn {
            ibn_encs.push(encode(tape, params, i_prefix, &enc_cfg, seq)?);
        }
    }

    let query_tower = tower_forward(tape, params, cfg, "tower_q", &q_enc, &qbn_encs, &i_enc.pooled)?;
    let item_tower = tower_forward(tape, params, cfg, "tower_i", &i_enc, &ibn_encs, &q_enc.pooled)?;

    let final_score = match cfg.combiner {
        ScoreCombiner::Mean => {
            let sum = ops::add(tape, &query_tower.score, &item_tower.score)?;
            ops::affine(tape, &sum, 0.5, 0.0)?
        }
        ScoreCombiner::QueryOnly => query_tower.score.clone(),
        ScoreCombiner::ItemOnly => item_tower.score.clone(),
    };
    Ok(PairForward {
        query_tower,
        item_tower,
        final_score,
    })
}

/// Score one pair without gradient tracking.
pub fn forward_score(
    params: &ParamSet,
    cfg: &ModelConfig,
    query: &TokenSequence,
    item: &TokenSequence,
    qbn: &[TokenSequence],
    ibn: &[TokenSequence],
) -> Result<(RelevanceScore, TowerIntermediates, TowerIntermediates)> {
    let mut tape = Tape::new();
    let ex = PairExample {
        query: query.clone(),
        item: item.clone(),
        qbn: qbn.to_vec(),
        ibn: ibn.to_vec(),
    };
    let fwd = forward_pair(&mut tape, params, cfg, &ex)?;
    let score = RelevanceScore {
        score_q: fwd.query_tower.score.value()?,
        score_i: fwd.item_tower.score.value()?,
        final_score: fwd.final_score.value()?,
        used_fallback: false,
    };
    Ok((score, fwd.query_tower, fwd.item_tower))
}

/// Tape-level baseline forward; returns the `1 x 1` post-sigmoid score.
pub fn forward_baseline_traced(
    tape: &mut Tape,
    kind: BaselineKind,
    params: &ParamSet,
    cfg: &ModelConfig,
    query: &TokenSequence,
    item: &TokenSequence,
) -> Result<Tensor> {
    let enc_cfg = cfg.encoder_config();
    match kind {
        BaselineKind::TwoTower => {
            let pq = encode(tape, params, "enc", &enc_cfg, query)?.pooled;
            let pi = encode(tape, params, "enc", &enc_cfg, item)?.pooled;
            let nq = ops::l2_normalize_rows(tape, &pq)?;
            let ni = ops::l2_normalize_rows(tape, &pi)?;
            let cos = ops::matmul_tb(tape, &nq, &ni)?;
            let scaled = ops::mul(tape, &cos, params.get("score.scale")?)?;
            ops::sigmoid(tape, &scaled)
        }
        BaselineKind::CrossEncoder => {
            let joint = TokenSequence::joined(query, item, cfg.max_len)?;
            let pooled = encode(tape, params, "enc", &enc_cfg, &joint)?.pooled;
            mlp_head(tape, params, "head", &pooled)
        }
    }
}

/// Score one pair with a baseline, without gradient tracking.
pub fn forward_baseline(
    kind: BaselineKind,
    params: &ParamSet,
    cfg: &ModelConfig,
    query: &TokenSequence,
    item: &TokenSequence,
) -> Result<f64> {
    let mut tape = Tape::new();
    forward_baseline_traced(&mut tape, kind, params, cfg, query, item)?.value()
}

/// Routing variant: pairs with no behavior neighbors on either side fall back
/// to the two-tower baseline; every other pair scores identically to
/// [`forward_score`].
pub fn forward_score_plus(
    params: &ParamSet,
    baseline_params: &ParamSet,
    cfg: &ModelConfig,
    query: &TokenSequence,
    item: &TokenSequence,
    qbn: &[TokenSequence],
    ibn: &[TokenSequence],
) -> Result<RelevanceScore> {
    let main_vocab = params
        .get(&format!("{}.tok_emb", cfg.encoder_prefix(true)))?
        .rows();
    let baseline_vocab = baseline_params.get("enc.tok_emb")?.rows();
    if main_vocab != baseline_vocab {
        return Err(CoreError::Contract(format!(
            "vocab mismatch between model ({main_vocab}) and baseline ({baseline_vocab})"
        )));
    }
    if qbn.is_empty() && ibn.is_empty() {
        let s = forward_baseline(BaselineKind::TwoTower, baseline_params, cfg, query, item)?;
        return Ok(RelevanceScore {
            score_q: s,
            score_i: s,
            final_score: s,
            used_fallback: true,
        });
    }
    let (score, _, _) = forward_score(params, cfg, query, item, qbn, ibn)?;
    Ok(score)
}
