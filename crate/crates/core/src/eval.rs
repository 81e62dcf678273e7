//! Ranking metrics and the neighbor-aware evaluation protocol.
//!
//! AUC is computed exactly from integer pair counts (ties credit one half),
//! classification metrics from the confusion matrix at a fixed threshold.
//! `evaluate` scores each pair once and reports metrics on the full test set
//! plus its "w/ neighbors" / "w/o neighbors" partition; `run_ablations`
//! retrains each component-ablated variant from scratch and tabulates them.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::graph::BehaviorGraph;
use crate::model::config::ModelConfig;
use crate::model::forward::{forward_score, forward_score_plus, RelevanceScore};
use crate::numerics::params::ParamSet;
use crate::text::vocab::{TokenSequence, Vocab};
use crate::train::{self, train, TrainConfig};

pub const SPLIT_ALL: &str = "all";
pub const SPLIT_WITH: &str = "w/ neighbors";
pub const SPLIT_WITHOUT: &str = "w/o neighbors";

/// Metrics of one scored split. `auc`/`fnr` are absent when undefined on the
/// split (single-class or no positives).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub split: String,
    pub auc: Option<f64>,
    pub f1: f64,
    pub fnr: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub n_examples: usize,
}

/// Probability that a random positive outranks a random negative, ties
/// crediting one half; exact integer pair counting.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CoreError::Contract(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::UndefinedMetric(
            "auc requires both classes".into(),
        ));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(CoreError::Contract("labels must be 0 or 1".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Doubled mid-ranks stay integral: a tie group occupying 1-based ranks
    // i+1..=j has doubled mid-rank i+j+1.
    let mut doubled_rank_sum_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let doubled_midrank = (i + j + 1) as u128;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                doubled_rank_sum_pos += doubled_midrank;
            }
        }
        i = j;
    }
    let np = n_pos as u128;
    let nn = n_neg as u128;
    // AUC = (sum of positive ranks - n_pos (n_pos + 1) / 2) / (n_pos n_neg)
    let doubled_u = doubled_rank_sum_pos - np * (np + 1);
    Ok(doubled_u as f64 / (2.0 * (np * nn) as f64))
}

/// Confusion-matrix metrics at a fixed threshold (predict positive when
/// `score >= threshold`; positive class is label 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub f1: f64,
    pub fnr: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn classification_metrics(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ClassificationMetrics> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(CoreError::Contract(
            "classification_metrics: empty or mismatched inputs".into(),
        ));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(CoreError::Contract("labels must be 0 or 1".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CoreError::Contract(format!(
            "threshold must lie in (0,1), got {threshold}"
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let predicted = s >= threshold;
        match (predicted, l) {
            (true, 1) => tp += 1,
            (true, 0) => fp += 1,
            (false, 1) => fn_ += 1,
            (false, 0) => tn += 1,
            _ => unreachable!(),
        }
    }
    let _ = tn;
    if tp + fn_ == 0 {
        return Err(CoreError::UndefinedMetric(
            "fnr requires at least one positive label".into(),
        ));
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = tp as f64 / (tp + fn_) as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let fnr = fn_ as f64 / (fn_ + tp) as f64;
    Ok(ClassificationMetrics {
        f1,
        fnr,
        precision,
        recall,
    })
}

/// A scorer maps a prepared pair (with its mined, tokenized neighbors) to a
/// final score plus a fallback indicator.
pub type ScoreOutcome = (f64, bool);

/// Ready-made scorers over trained parameter sets.
pub enum Scorer<'a> {
    Barl {
        params: &'a ParamSet,
        cfg: &'a ModelConfig,
    },
    Baseline {
        kind: crate::model::config::BaselineKind,
        params: &'a ParamSet,
        cfg: &'a ModelConfig,
    },
    /// Routing variant: behavior model plus two-tower fallback.
    BarlPlus {
        params: &'a ParamSet,
        baseline_params: &'a ParamSet,
        cfg: &'a ModelConfig,
    },
}

impl Scorer<'_> {
    pub fn score(
        &self,
        query: &TokenSequence,
        item: &TokenSequence,
        qbn: &[TokenSequence],
        ibn: &[TokenSequence],
    ) -> Result<ScoreOutcome> {
        match self {
            Scorer::Barl { params, cfg } => {
                let (s, _, _) = forward_score(params, cfg, query, item, qbn, ibn)?;
                Ok((s.final_score, false))
            }
            Scorer::Baseline { kind, params, cfg } => {
                let s =
                    crate::model::forward::forward_baseline(*kind, params, cfg, query, item)?;
                Ok((s, false))
            }
            Scorer::BarlPlus {
                params,
                baseline_params,
                cfg,
            } => {
                let s: RelevanceScore =
                    forward_score_plus(params, baseline_params, cfg, query, item, qbn, ibn)?;
                Ok((s.final_score, s.used_fallback))
            }
        }
    }
}

/// Scores plus neighbor membership for every pair, in dataset order.
#[derive(Debug, Clone)]
pub struct ScoredDataset {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub has_neighbors: Vec<bool>,
    pub n_fallback: usize,
}

/// Score every pair once, mining neighbors through the same path the models
/// consume.
pub fn score_dataset(
    scorer: &Scorer<'_>,
    ds: &Dataset,
    graph: &BehaviorGraph,
    vocab: &Vocab,
    cfg: &ModelConfig,
) -> Result<ScoredDataset> {
    let mut scores = Vec::with_capacity(ds.len());
    let mut labels = Vec::with_capacity(ds.len());
    let mut has_neighbors = Vec::with_capacity(ds.len());
    let mut n_fallback = 0;
    for pair in ds.iter() {
        let prepared = train::prepare_example(vocab, cfg, graph, pair)?;
        let (score, fallback) = scorer.score(
            &prepared.ex.query,
            &prepared.ex.item,
            &prepared.ex.qbn,
            &prepared.ex.ibn,
        )?;
        scores.push(score);
        labels.push(pair.label);
        has_neighbors.push(!prepared.ex.qbn.is_empty() || !prepared.ex.ibn.is_empty());
        n_fallback += usize::from(fallback);
    }
    Ok(ScoredDataset {
        scores,
        labels,
        has_neighbors,
        n_fallback,
    })
}

fn report_for(split: &str, scores: &[f64], labels: &[u8], threshold: f64) -> MetricsReport {
    let auc_value = auc(scores, labels).ok();
    let cls = classification_metrics(scores, labels, threshold);
    let (f1, fnr, precision, recall) = match cls {
        Ok(c) => (c.f1, Some(c.fnr), c.precision, c.recall),
        Err(_) => (0.0, None, 0.0, 0.0),
    };
    MetricsReport {
        split: split.into(),
        auc: auc_value,
        f1,
        fnr,
        precision,
        recall,
        threshold,
        n_examples: scores.len(),
    }
}

/// Neighbor-aware evaluation output: the full set plus its partition.
/// Splits with no members are absent.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalOutput {
    pub all: MetricsReport,
    pub with_neighbors: Option<MetricsReport>,
    pub without_neighbors: Option<MetricsReport>,
    pub n_fallback: usize,
}

/// Score a dataset and report metrics for `all`, `w/ neighbors`, and
/// `w/o neighbors` (a pair belongs to the latter when both its QBN and IBN
/// are empty at the configured k).
pub fn evaluate(
    scorer: &Scorer<'_>,
    ds: &Dataset,
    graph: &BehaviorGraph,
    vocab: &Vocab,
    cfg: &ModelConfig,
    threshold: f64,
) -> Result<EvalOutput> {
    if !ds.has_both_classes() {
        return Err(CoreError::UndefinedMetric(
            "evaluation dataset must contain both classes".into(),
        ));
    }
    let scored = score_dataset(scorer, ds, graph, vocab, cfg)?;
    Ok(summarize(&scored, threshold))
}

/// Split and summarize already-computed scores.
pub fn summarize(scored: &ScoredDataset, threshold: f64) -> EvalOutput {
    let all = report_for(SPLIT_ALL, &scored.scores, &scored.labels, threshold);
    let mut with_scores = Vec::new();
    let mut with_labels = Vec::new();
    let mut without_scores = Vec::new();
    let mut without_labels = Vec::new();
    for i in 0..scored.scores.len() {
        if scored.has_neighbors[i] {
            with_scores.push(scored.scores[i]);
            with_labels.push(scored.labels[i]);
        } else {
            without_scores.push(scored.scores[i]);
            without_labels.push(scored.labels[i]);
        }
    }
    let with_neighbors = if with_scores.is_empty() {
        None
    } else {
        Some(report_for(SPLIT_WITH, &with_scores, &with_labels, threshold))
    };
    let without_neighbors = if without_scores.is_empty() {
        None
    } else {
        Some(report_for(
            SPLIT_WITHOUT,
            &without_scores,
            &without_labels,
            threshold,
        ))
    };
    EvalOutput {
        all,
        with_neighbors,
        without_neighbors,
        n_fallback: scored.n_fallback,
    }
}

/// The component-ablation variants in reporting order.
pub const ABLATION_VARIANTS: [&str; 8] = [
    "full",
    "w/o QBN",
    "w/o IBN",
    "w/o NCA",
    "w/o TCA",
    "w/o QNTC",
    "w/o INTC",
    "w/o Mutual",
];

fn variant_config(base: &ModelConfig, variant: &str) -> ModelConfig {
    let mut cfg = base.clone();
    match variant {
        "full" => {}
        "w/o QBN" => cfg.use_qbn = false,
        "w/o IBN" => cfg.use_ibn = false,
        "w/o NCA" => cfg.use_nca = false,
        "w/o TCA" => cfg.use_tca = false,
        "w/o QNTC" => cfg.use_qntc = false,
        "w/o INTC" => cfg.use_intc = false,
        "w/o Mutual" => cfg.use_mutual = false,
        other => unreachable!("unknown variant {other}"),
    }
    cfg
}

/// Per-variant mean metrics over the ablation seeds.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRow {
    pub variant: String,
    pub auc: f64,
    pub f1: f64,
    pub fnr: f64,
    pub n_seeds: usize,
}

/// Train every variant from scratch per seed (identical data order across
/// variants) and report mean test metrics per variant.
pub fn run_ablations(
    ds_train: &Dataset,
    ds_test: &Dataset,
    graph: &BehaviorGraph,
    base_cfg: &TrainConfig,
    seeds: &[u64],
    threshold: f64,
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(CoreError::Contract(
            "run_ablations needs at least one seed".into(),
        ));
    }
    let corpus: Vec<&str> = ds_train
        .iter()
        .flat_map(|p| [p.query.as_str(), p.item.as_str()])
        .collect();
    let vocab = Vocab::build(corpus, base_cfg.model.vocab_size)?;

    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for variant in ABLATION_VARIANTS {
        let mut sum_auc = 0.0;
        let mut sum_f1 = 0.0;
        let mut sum_fnr = 0.0;
        for &seed in seeds {
            let mut cfg = base_cfg.clone();
            cfg.model = variant_config(&base_cfg.model, variant);
            cfg.model.vocab_size = vocab.size();
            cfg.seed = seed;
            let outcome = train(ds_train, graph, &vocab, &cfg, |_, _, _| Ok(()))?;
            let scorer = Scorer::Barl {
                params: &outcome.params,
                cfg: &cfg.model,
            };
            let out = evaluate(&scorer, ds_test, graph, &vocab, &cfg.model, threshold)?;
            sum_auc += out.all.auc.ok_or_else(|| {
                CoreError::UndefinedMetric("ablation test split must have both classes".into())
            })?;
            sum_f1 += out.all.f1;
            sum_fnr += out.all.fnr.unwrap_or(0.0);
        }
        let n = seeds.len() as f64;
        rows.push(AblationRow {
            variant: variant.into(),
            auc: sum_auc / n,
            f1: sum_f1 / n,
            fnr: sum_fnr / n,
            n_seeds: seeds.len(),
        });
    }
    Ok(rows)
}
