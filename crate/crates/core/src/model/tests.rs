use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::model::config::{BaselineKind, ModelConfig, ScoreCombiner};
use crate::model::forward::{
    forward_baseline, forward_pair, forward_score, forward_score_plus, PairExample,
};
use crate::model::fuse::{nca_fuse, tca_fuse};
use crate::model::init::{
    baseline_param_count, init_baseline_params, init_params, param_count,
};
use crate::numerics::params::ParamSet;
use crate::numerics::tape::Tape;
use crate::numerics::tensor::Tensor;
use crate::text::vocab::{tokenize, TokenSequence, Vocab};

fn micro_cfg(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        hidden_dim: 8,
        layers: 1,
        heads: 2,
        max_len: 6,
        k_neighbors: 2,
        ..ModelConfig::default()
    }
}

fn micro_vocab() -> Vocab {
    Vocab::build(
        ["red fruit apple pie", "green fruit pear tart", "blue sky plane wing"],
        64,
    )
    .unwrap()
}

fn seqs(vocab: &Vocab, texts: &[&str], max_len: usize) -> Vec<TokenSequence> {
    texts
        .iter()
        .map(|t| tokenize(vocab, t, max_len).unwrap())
        .collect()
}

fn fixture() -> (Vocab, ModelConfig, ParamSet, PairExample) {
    let vocab = micro_vocab();
    let cfg = micro_cfg(vocab.size());
    let params = init_params(&cfg, 7).unwrap();
    let ex = PairExample {
        query: tokenize(&vocab, "red fruit", cfg.max_len).unwrap(),
        item: tokenize(&vocab, "apple pie fruit", cfg.max_len).unwrap(),
        qbn: seqs(&vocab, &["apple pie", "pear tart"], cfg.max_len),
        ibn: seqs(&vocab, &["red fruit"], cfg.max_len),
    };
    (vocab, cfg, params, ex)
}

// ── init ─────────────────────────────────────────────────────────────

#[test]
fn init_is_deterministic() {
    let cfg = micro_cfg(64);
    let a = init_params(&cfg, 7).unwrap();
    let b = init_params(&cfg, 7).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    let c = init_params(&cfg, 8).unwrap();
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn param_count_matches_actual() {
    for flags in 0..16u32 {
        let mut cfg = micro_cfg(64);
        cfg.use_qbn = flags & 1 != 0;
        cfg.use_ibn = flags & 2 != 0;
        cfg.use_nca = flags & 4 != 0;
        cfg.use_tca = flags & 8 != 0;
        let params = init_params(&cfg, 3).unwrap();
        assert_eq!(params.total_params(), param_count(&cfg), "flags {flags:04b}");
    }
    let cfg = micro_cfg(64);
    for kind in [BaselineKind::TwoTower, BaselineKind::CrossEncoder] {
        let params = init_baseline_params(kind, &cfg, 3).unwrap();
        assert_eq!(params.total_params(), baseline_param_count(kind, &cfg));
    }
}

#[test]
fn disabling_nca_removes_exactly_its_block() {
    let full = micro_cfg(64);
    let mut without = full.clone();
    without.use_nca = false;
    let d = full.hidden_dim;
    let delta = 2 * (3 * d * d + 2 * d); // one NCA block per tower
    assert_eq!(param_count(&full) - param_count(&without), delta);
    assert!(param_count(&without) < param_count(&full));
}

#[test]
fn unshared_encoder_doubles_encoder_params() {
    let shared = micro_cfg(64);
    let mut separate = shared.clone();
    separate.shared_encoder = false;
    let enc = crate::text::encoder_param_count(&shared.encoder_config());
    assert_eq!(param_count(&separate) - param_count(&shared), enc);
}

#[test]
fn invalid_config_names_field() {
    let mut cfg = micro_cfg(64);
    cfg.hidden_dim = 0;
    match init_params(&cfg, 1) {
        Err(CoreError::Config { field, .. }) => assert_eq!(field, "hidden_dim"),
        other => panic!("expected config error, got {other:?}"),
    }
    let mut cfg = micro_cfg(64);
    cfg.temperature = 0.0;
    assert!(matches!(init_params(&cfg, 1), Err(CoreError::Config { .. })));
}

// ── fusion ───────────────────────────────────────────────────────────

#[test]
fn nca_with_no_neighbors_is_identity() {
    let (_, cfg, params, _) = fixture();
    let target = Tensor::matrix(1, cfg.hidden_dim, (0..8).map(|v| v as f64 * 0.1).collect())
        .unwrap();
    let mut tape = Tape::new();
    let out = nca_fuse(&mut tape, &params, "tower_q.nca", &target, None).unwrap();
    assert_eq!(out.data(), target.data());
}

#[test]
fn nca_identical_neighbors_collapse_to_single() {
    let (_, cfg, params, _) = fixture();
    let d = cfg.hidden_dim;
    let target = Tensor::matrix(1, d, (0..d).map(|v| 0.3 - v as f64 * 0.05).collect()).unwrap();
    let nbr: Vec<f64> = (0..d).map(|v| 0.1 + v as f64 * 0.02).collect();
    let one = Tensor::matrix(1, d, nbr.clone()).unwrap();
    let three = Tensor::from_rows(&vec![nbr; 3]).unwrap();
    let mut tape = Tape::new();
    let out1 = nca_fuse(&mut tape, &params, "tower_q.nca", &target, Some(&one)).unwrap();
    let out3 = nca_fuse(&mut tape, &params, "tower_q.nca", &target, Some(&three)).unwrap();
    for (a, b) in out1.data().iter().zip(out3.data()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn tca_with_no_neighbors_is_masked_mean() {
    let (_, _, params, _) = fixture();
    let tokens = Tensor::from_rows(&[
        vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        vec![-1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        vec![9.0; 8], // PAD row, excluded by attn_len = 2
    ])
    .unwrap();
    let mut tape = Tape::new();
    let out = tca_fuse(&mut tape, &params, "tower_q.tca", &tokens, 2, None).unwrap();
    let expected: Vec<f64> = (0..8)
        .map(|c| (tokens.at(0, c) + tokens.at(1, c)) * 0.5)
        .collect();
    assert_eq!(out.data(), &expected[..]);
}

#[test]
fn tca_identical_neighbor_tokens_collapse() {
    let (_, cfg, params, _) = fixture();
    let d = cfg.hidden_dim;
    let tokens = Tensor::from_rows(&[
        (0..d).map(|v| 0.1 * v as f64).collect::<Vec<f64>>(),
        (0..d).map(|v| 0.4 - 0.03 * v as f64).collect(),
    ])
    .unwrap();
    let nbr: Vec<f64> = (0..d).map(|v| 0.2 + 0.01 * v as f64).collect();
    let one = Tensor::matrix(1, d, nbr.clone()).unwrap();
    let four = Tensor::from_rows(&vec![nbr; 4]).unwrap();
    let mut tape = Tape::new();
    let out1 = tca_fuse(&mut tape, &params, "tower_q.tca", &tokens, 2, Some(&one)).unwrap();
    let out4 = tca_fuse(&mut tape, &params, "tower_q.tca", &tokens, 2, Some(&four)).unwrap();
    for (a, b) in out1.data().iter().zip(out4.data()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

// ── forward ──────────────────────────────────────────────────────────

#[test]
fn scores_lie_in_unit_interval() {
    let (_, cfg, params, ex) = fixture();
    let (score, _, _) = forward_score(&params, &cfg, &ex.query, &ex.item, &ex.qbn, &ex.ibn)
        .unwrap();
    for s in [score.score_q, score.score_i, score.final_score] {
        assert!(s > 0.0 && s < 1.0, "score {s}");
    }
    assert!((score.final_score - (score.score_q + score.score_i) / 2.0).abs() <= 1e-15);
}

#[test]
fn empty_neighbor_lists_degrade_gracefully() {
    let (_, cfg, params, ex) = fixture();
    let (score, q_int, _) = forward_score(&params, &cfg, &ex.query, &ex.item, &[], &[]).unwrap();
    assert!(score.final_score > 0.0 && score.final_score < 1.0);
    // Semantic path: NCA slot collapses to the target pooled vector.
    assert_eq!(q_int.nca_fused.data(), q_int.target_pooled.data());
    assert!(q_int.neighbors_pooled.is_none());
}

#[test]
fn disabled_qbn_equals_empty_qbn() {
    let (_, cfg, params, ex) = fixture();
    let mut cfg_off = cfg.clone();
    cfg_off.use_qbn = false;
    let params_off = init_params(&cfg_off, 7).unwrap();

    let (a, _, _) =
        forward_score(&params_off, &cfg_off, &ex.query, &ex.item, &ex.qbn, &ex.ibn).unwrap();
    let (b, _, _) = forward_score(&params, &cfg, &ex.query, &ex.item, &[], &ex.ibn).unwrap();
    assert_eq!(a.score_q.to_bits(), b.score_q.to_bits());
    assert_eq!(a.score_i.to_bits(), b.score_i.to_bits());
    assert_eq!(a.final_score.to_bits(), b.final_score.to_bits());
}

#[test]
fn disabled_ibn_equals_empty_ibn() {
    let (_, cfg, params, ex) = fixture();
    let mut cfg_off = cfg.clone();
    cfg_off.use_ibn = false;
    let params_off = init_params(&cfg_off, 7).unwrap();
    let (a, _, _) =
        forward_score(&params_off, &cfg_off, &ex.query, &ex.item, &ex.qbn, &ex.ibn).unwrap();
    let (b, _, _) = forward_score(&params, &cfg, &ex.query, &ex.item, &ex.qbn, &[]).unwrap();
    assert_eq!(a.final_score.to_bits(), b.final_score.to_bits());
}

#[test]
fn disabled_fusions_use_fallback_slots() {
    let (_, cfg, _, ex) = fixture();
    let mut cfg_off = cfg.clone();
    cfg_off.use_nca = false;
    cfg_off.use_tca = false;
    let params_off = init_params(&cfg_off, 7).unwrap();
    let (_, q_int, _) =
        forward_score(&params_off, &cfg_off, &ex.query, &ex.item, &ex.qbn, &ex.ibn).unwrap();
    assert_eq!(q_int.nca_fused.data(), q_int.target_pooled.data());
    // TCA fallback: masked mean of the target token representations. With
    // mean pooling the pooled vector is that same mean.
    assert_eq!(q_int.tca_fused.data(), q_int.target_pooled.data());
}

#[test]
fn neighbor_overflow_is_a_contract_error() {
    let (vocab, cfg, params, ex) = fixture();
    let many = seqs(&vocab, &["a", "b", "c"], cfg.max_len);
    let err = forward_score(&params, &cfg, &ex.query, &ex.item, &many, &ex.ibn).unwrap_err();
    assert!(matches!(err, CoreError::Contract(_)));
}

#[test]
fn combiner_variants() {
    let (_, cfg, params, ex) = fixture();
    let mut cfg_q = cfg.clone();
    cfg_q.combiner = ScoreCombiner::QueryOnly;
    let (s, _, _) = forward_score(&params, &cfg_q, &ex.query, &ex.item, &ex.qbn, &ex.ibn).unwrap();
    assert_eq!(s.final_score, s.score_q);
    let mut cfg_i = cfg.clone();
    cfg_i.combiner = ScoreCombiner::ItemOnly;
    let (s, _, _) = forward_score(&params, &cfg_i, &ex.query, &ex.item, &ex.qbn, &ex.ibn).unwrap();
    assert_eq!(s.final_score, s.score_i);
}

// ── baselines and routing ────────────────────────────────────────────

#[test]
fn two_tower_self_similarity_is_sigmoid_of_scale() {
    let (vocab, cfg, _, _) = fixture();
    let params = init_baseline_params(BaselineKind::TwoTower, &cfg, 7).unwrap();
    let q = tokenize(&vocab, "red fruit", cfg.max_len).unwrap();
    let s = forward_baseline(BaselineKind::TwoTower, &params, &cfg, &q, &q).unwrap();
    let scale = params.get("score.scale").unwrap().value().unwrap();
    let expected = 1.0 / (1.0 + (-scale).exp());
    assert!((s - expected).abs() <= 1e-12, "score {s} expected {expected}");
}

#[test]
fn two_tower_score_is_symmetric() {
    let (vocab, cfg, _, _) = fixture();
    let params = init_baseline_params(BaselineKind::TwoTower, &cfg, 9).unwrap();
    let a = tokenize(&vocab, "red fruit", cfg.max_len).unwrap();
    let b = tokenize(&vocab, "blue sky", cfg.max_len).unwrap();
    let s_ab = forward_baseline(BaselineKind::TwoTower, &params, &cfg, &a, &b).unwrap();
    let s_ba = forward_baseline(BaselineKind::TwoTower, &params, &cfg, &b, &a).unwrap();
    assert!((s_ab - s_ba).abs() <= 1e-15);
}

#[test]
fn routing_matches_forward_score_when_neighbors_exist() {
    let (_, cfg, params, ex) = fixture();
    let baseline = init_baseline_params(BaselineKind::TwoTower, &cfg, 11).unwrap();
    let plus =
        forward_score_plus(&params, &baseline, &cfg, &ex.query, &ex.item, &ex.qbn, &ex.ibn)
            .unwrap();
    let (direct, _, _) =
        forward_score(&params, &cfg, &ex.query, &ex.item, &ex.qbn, &ex.ibn).unwrap();
    assert!(!plus.used_fallback);
    assert_eq!(plus.final_score.to_bits(), direct.final_score.to_bits());
}

#[test]
fn routing_falls_back_on_neighborless_pairs() {
    let (_, cfg, params, ex) = fixture();
    let baseline = init_baseline_params(BaselineKind::TwoTower, &cfg, 11).unwrap();
    let plus = forward_score_plus(&params, &baseline, &cfg, &ex.query, &ex.item, &[], &[])
        .unwrap();
    let direct =
        forward_baseline(BaselineKind::TwoTower, &baseline, &cfg, &ex.query, &ex.item).unwrap();
    assert!(plus.used_fallback);
    assert_eq!(plus.final_score.to_bits(), direct.to_bits());
}

#[test]
fn routing_rejects_vocab_mismatch() {
    let (_, cfg, params, ex) = fixture();
    let mut other_cfg = cfg.clone();
    other_cfg.vocab_size = cfg.vocab_size + 5;
    let baseline = init_baseline_params(BaselineKind::TwoTower, &other_cfg, 11).unwrap();
    assert!(matches!(
        forward_score_plus(&params, &baseline, &cfg, &ex.query, &ex.item, &ex.qbn, &ex.ibn),
        Err(CoreError::Contract(_))
    ));
}

// ── straight-line reference oracle ───────────────────────────────────
//
// An independent re-implementation of the same wiring in plain vectors,
// mirroring the production arithmetic order so results agree to float
// round-off. Any structural drift between the two paths shows up here.

mod straightline {
    use super::*;
    use crate::numerics::fmath;
    use crate::numerics::ops::LAYER_NORM_EPS;

    #[derive(Clone)]
    pub struct Mat {
        pub r: usize,
        pub c: usize,
        pub d: Vec<f64>,
    }

    impl Mat {
        pub fn row(&self, i: usize) -> &[f64] {
            &self.d[i * self.c..(i + 1) * self.c]
        }
    }

    fn get<'a>(p: &'a ParamSet, name: &str) -> Mat {
        let t = p.get(name).unwrap();
        Mat {
            r: t.rows(),
            c: t.cols(),
            d: t.data().to_vec(),
        }
    }

    fn mm(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.c, b.r);
        let mut out = vec![0.0; a.r * b.c];
        for i in 0..a.r {
            for kk in 0..a.c {
                let av = a.d[i * a.c + kk];
                for j in 0..b.c {
                    out[i * b.c + j] += av * b.d[kk * b.c + j];
                }
            }
        }
        Mat { r: a.r, c: b.c, d: out }
    }

    fn mm_abt(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.c, b.c);
        let mut out = vec![0.0; a.r * b.r];
        for i in 0..a.r {
            for j in 0..b.r {
                out[i * b.r + j] = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        Mat { r: a.r, c: b.r, d: out }
    }

    fn add(a: &Mat, b: &Mat) -> Mat {
        Mat {
            r: a.r,
            c: a.c,
            d: a.d.iter().zip(&b.d).map(|(x, y)| x + y).collect(),
        }
    }

    fn add_bias(x: &Mat, b: &Mat) -> Mat {
        let mut d = Vec::with_capacity(x.d.len());
        for r in 0..x.r {
            for c in 0..x.c {
                d.push(x.d[r * x.c + c] + b.d[c]);
            }
        }
        Mat { r: x.r, c: x.c, d }
    }

    fn mul_bias(x: &Mat, g: &Mat) -> Mat {
        let mut d = Vec::with_capacity(x.d.len());
        for r in 0..x.r {
            for c in 0..x.c {
                d.push(x.d[r * x.c + c] * g.d[c]);
            }
        }
        Mat { r: x.r, c: x.c, d }
    }

    fn relu(x: &Mat) -> Mat {
        Mat {
            r: x.r,
            c: x.c,
            d: x.d.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        }
    }

    fn sigmoid_scalar(v: f64) -> f64 {
        if v >= 0.0 {
            1.0 / (1.0 + fmath::exp(-v))
        } else {
            let e = fmath::exp(v);
            e / (1.0 + e)
        }
    }

    fn softmax_rows(x: &Mat) -> Mat {
        let mut d = vec![0.0; x.d.len()];
        for r in 0..x.r {
            let row = x.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..x.c {
                let e = fmath::exp(row[c] - max);
                d[r * x.c + c] = e;
                sum += e;
            }
            for c in 0..x.c {
                d[r * x.c + c] /= sum;
            }
        }
        Mat { r: x.r, c: x.c, d }
    }

    fn layer_norm(x: &Mat) -> Mat {
        let n = x.c as f64;
        let mut d = vec![0.0; x.d.len()];
        for r in 0..x.r {
            let row = x.row(r);
            let mean: f64 = row.iter().sum::<f64>() / n;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / fmath::sqrt(var + LAYER_NORM_EPS);
            for c in 0..x.c {
                d[r * x.c + c] = (row[c] - mean) * inv;
            }
        }
        Mat { r: x.r, c: x.c, d }
    }

    fn ln_affine(p: &ParamSet, prefix: &str, x: &Mat) -> Mat {
        let g = get(p, &format!("{prefix}.gain"));
        let b = get(p, &format!("{prefix}.bias"));
        add_bias(&mul_bias(&layer_norm(x), &g), &b)
    }

    fn mean_rows_prefix(x: &Mat, n: usize) -> Mat {
        let mut d = vec![0.0; x.c];
        for r in 0..n {
            for c in 0..x.c {
                d[c] += x.d[r * x.c + c];
            }
        }
        let w = 1.0 / n as f64;
        for v in d.iter_mut() {
            *v *= w;
        }
        Mat { r: 1, c: x.c, d }
    }

    fn slice_cols(x: &Mat, lo: usize, hi: usize) -> Mat {
        let mut d = Vec::with_capacity(x.r * (hi - lo));
        for r in 0..x.r {
            d.extend_from_slice(&x.row(r)[lo..hi]);
        }
        Mat { r: x.r, c: hi - lo, d }
    }

    fn concat_cols(parts: &[&Mat]) -> Mat {
        let rows = parts[0].r;
        let cols: usize = parts.iter().map(|p| p.c).sum();
        let mut d = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                d.extend_from_slice(p.row(r));
            }
        }
        Mat { r: rows, c: cols, d }
    }

    fn concat_rows(parts: &[&Mat]) -> Mat {
        let cols = parts[0].c;
        let mut d = Vec::new();
        let mut rows = 0;
        for p in parts {
            d.extend_from_slice(&p.d);
            rows += p.r;
        }
        Mat { r: rows, c: cols, d }
    }

    fn attention(q: &Mat, k: &Mat, v: &Mat, scale: f64) -> Mat {
        let logits = mm_abt(q, k);
        let scaled = Mat {
            r: logits.r,
            c: logits.c,
            d: logits.d.iter().map(|&x| scale * x + 0.0).collect(),
        };
        let w = softmax_rows(&scaled);
        mm(&w, v)
    }

    fn encode(p: &ParamSet, prefix: &str, cfg: &ModelConfig, seq: &TokenSequence) -> (Mat, Mat) {
        let d = cfg.hidden_dim;
        let emb = get(p, &format!("{prefix}.tok_emb"));
        let pos = get(p, &format!("{prefix}.pos_emb"));
        let len = seq.len();
        let mut x = Mat {
            r: len,
            c: d,
            d: {
                let mut out = Vec::with_capacity(len * d);
                for &id in seq.ids() {
                    out.extend_from_slice(emb.row(id));
                }
                out
            },
        };
        let pos_slice = Mat {
            r: len,
            c: d,
            d: pos.d[..len * d].to_vec(),
        };
        x = add(&x, &pos_slice);
        let dh = d / cfg.heads;
        let scale = 1.0 / fmath::sqrt(dh as f64);
        for l in 0..cfg.layers {
            let b = format!("{prefix}.block{l}");
            let q = mm(&x, &get(p, &format!("{b}.attn.wq")));
            let k = mm(&x, &get(p, &format!("{b}.attn.wk")));
            let v = mm(&x, &get(p, &format!("{b}.attn.wv")));
            let mut heads = Vec::new();
            for h in 0..cfg.heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                heads.push(attention(
                    &slice_cols(&q, lo, hi),
                    &slice_cols(&k, lo, hi),
                    &slice_cols(&v, lo, hi),
                    scale,
                ));
            }
            let head_refs: Vec<&Mat> = heads.iter().collect();
            let merged = mm(&concat_cols(&head_refs), &get(p, &format!("{b}.attn.wo")));
            let normed1 = ln_affine(p, &format!("{b}.ln1"), &add(&x, &merged));
            let h1 = relu(&add_bias(
                &mm(&normed1, &get(p, &format!("{b}.ff.w1"))),
                &get(p, &format!("{b}.ff.b1")),
            ));
            let h2 = add_bias(
                &mm(&h1, &get(p, &format!("{b}.ff.w2"))),
                &get(p, &format!("{b}.ff.b2")),
            );
            x = ln_affine(p, &format!("{b}.ln2"), &add(&normed1, &h2));
        }
        let pooled = mean_rows_prefix(&x, seq.attn_len());
        (x, pooled)
    }

    fn head(p: &ParamSet, prefix: &str, x: &Mat) -> f64 {
        let h = relu(&add_bias(
            &mm(x, &get(p, &format!("{prefix}.w1"))),
            &get(p, &format!("{prefix}.b1")),
        ));
        let o = add_bias(
            &mm(&h, &get(p, &format!("{prefix}.w2"))),
            &get(p, &format!("{prefix}.b2")),
        );
        sigmoid_scalar(o.d[0])
    }

    fn fuse_nca(p: &ParamSet, prefix: &str, target: &Mat, nbrs: Option<&Mat>) -> Mat {
        let Some(nbrs) = nbrs else {
            return target.clone();
        };
        let d = target.c;
        let q = mm(target, &get(p, &format!("{prefix}.wq")));
        let k = mm(nbrs, &get(p, &format!("{prefix}.wk")));
        let v = mm(nbrs, &get(p, &format!("{prefix}.wv")));
        let att = attention(&q, &k, &v, 1.0 / fmath::sqrt(d as f64));
        ln_affine(p, &format!("{prefix}.ln"), &add(target, &att))
    }

    fn fuse_tca(
        p: &ParamSet,
        prefix: &str,
        tokens: &Mat,
        attn_len: usize,
        nbrs: Option<&Mat>,
    ) -> Mat {
        let Some(nbrs) = nbrs else {
            return mean_rows_prefix(tokens, attn_len);
        };
        let d = tokens.c;
        let q = mm(tokens, &get(p, &format!("{prefix}.wq")));
        let k = mm(nbrs, &get(p, &format!("{prefix}.wk")));
        let v = mm(nbrs, &get(p, &format!("{prefix}.wv")));
        let att = attention(&q, &k, &v, 1.0 / fmath::sqrt(d as f64));
        let normed = ln_affine(p, &format!("{prefix}.ln"), &add(tokens, &att));
        mean_rows_prefix(&normed, attn_len)
    }

    /// Full dual-tower score recomputed without the tape stack.
    pub fn score(p: &ParamSet, cfg: &ModelConfig, ex: &PairExample) -> (f64, f64, f64) {
        let qp = cfg.encoder_prefix(true);
        let ip = cfg.encoder_prefix(false);
        let (q_tok, q_pool) = encode(p, qp, cfg, &ex.query);
        let (i_tok, i_pool) = encode(p, ip, cfg, &ex.item);

        let tower = |name: &str,
                         tok: &Mat,
                         pool: &Mat,
                         attn_len: usize,
                         nbr_seqs: &[TokenSequence],
                         enc_prefix: &str,
                         counterpart: &Mat| {
            let encs: Vec<(Mat, Mat)> = nbr_seqs
                .iter()
                .map(|s| encode(p, enc_prefix, cfg, s))
                .collect();
            let pooled_mats: Vec<Mat> = encs.iter().map(|(_, pl)| pl.clone()).collect();
            let pooled_refs: Vec<&Mat> = pooled_mats.iter().collect();
            let stacked = if pooled_refs.is_empty() {
                None
            } else {
                Some(concat_rows(&pooled_refs))
            };
            let nca = if cfg.use_nca {
                fuse_nca(p, &format!("{name}.nca"), pool, stacked.as_ref())
            } else {
                pool.clone()
            };
            let token_mats: Vec<Mat> = nbr_seqs
                .iter()
                .zip(&encs)
                .map(|(s, (t, _))| Mat {
                    r: s.attn_len(),
                    c: t.c,
                    d: t.d[..s.attn_len() * t.c].to_vec(),
                })
                .collect();
            let token_refs: Vec<&Mat> = token_mats.iter().collect();
            let nbr_tokens = if !cfg.use_tca || token_refs.is_empty() {
                None
            } else {
                Some(concat_rows(&token_refs))
            };
            let tca = fuse_tca(p, &format!("{name}.tca"), tok, attn_len, nbr_tokens.as_ref());
            let input = concat_cols(&[pool, &nca, &tca, counterpart]);
            head(p, &format!("{name}.head"), &input)
        };

        let qbn: &[TokenSequence] = if cfg.use_qbn { &ex.qbn } else { &[] };
        let ibn: &[TokenSequence] = if cfg.use_ibn { &ex.ibn } else { &[] };
        let sq = tower(
            "tower_q",
            &q_tok,
            &q_pool,
            ex.query.attn_len(),
            qbn,
            qp,
            &i_pool,
        );
        let si = tower(
            "tower_i",
            &i_tok,
            &i_pool,
            ex.item.attn_len(),
            ibn,
            ip,
            &q_pool,
        );
        (sq, si, (sq + si) * 0.5)
    }

    /// Straight-line cross-encoder score.
    pub fn cross_encoder_score(
        p: &ParamSet,
        cfg: &ModelConfig,
        query: &TokenSequence,
        item: &TokenSequence,
    ) -> f64 {
        let joint = TokenSequence::joined(query, item, cfg.max_len).unwrap();
        let (_, pooled) = encode(p, "enc", cfg, &joint);
        head(p, "head", &pooled)
    }
}

#[test]
fn forward_matches_straightline_oracle() {
    let (_, cfg, params, ex) = fixture();
    let (score, _, _) =
        forward_score(&params, &cfg, &ex.query, &ex.item, &ex.qbn, &ex.ibn).unwrap();
    let (sq, si, fin) = straightline::score(&params, &cfg, &ex);
    assert!((score.score_q - sq).abs() <= 1e-12, "{} vs {sq}", score.score_q);
    assert!((score.score_i - si).abs() <= 1e-12, "{} vs {si}", score.score_i);
    assert!((score.final_score - fin).abs() <= 1e-12);
}

#[test]
fn forward_matches_oracle_under_every_single_flag_ablation() {
    let (_, base_cfg, _, ex) = fixture();
    for flag in 0..4 {
        let mut cfg = base_cfg.clone();
        match flag {
            0 => cfg.use_qbn = false,
            1 => cfg.use_ibn = false,
            2 => cfg.use_nca = false,
            _ => cfg.use_tca = false,
        }
        let params = init_params(&cfg, 7).unwrap();
        let (score, _, _) =
            forward_score(&params, &cfg, &ex.query, &ex.item, &ex.qbn, &ex.ibn).unwrap();
        let (sq, si, fin) = straightline::score(&params, &cfg, &ex);
        assert!((score.score_q - sq).abs() <= 1e-12, "flag {flag}");
        assert!((score.score_i - si).abs() <= 1e-12, "flag {flag}");
        assert!((score.final_score - fin).abs() <= 1e-12, "flag {flag}");
    }
}

#[test]
fn cross_encoder_matches_straightline_oracle() {
    let (vocab, cfg, _, _) = fixture();
    let params = init_baseline_params(BaselineKind::CrossEncoder, &cfg, 7).unwrap();
    let q = tokenize(&vocab, "red fruit", cfg.max_len).unwrap();
    let i = tokenize(&vocab, "apple pie fruit", cfg.max_len).unwrap();
    let s = forward_baseline(BaselineKind::CrossEncoder, &params, &cfg, &q, &i).unwrap();
    let oracle = straightline::cross_encoder_score(&params, &cfg, &q, &i);
    assert!((s - oracle).abs() <= 1e-12, "{s} vs {oracle}");
}

#[test]
fn forward_pair_is_deterministic() {
    let (_, cfg, params, ex) = fixture();
    let mut t1 = Tape::new();
    let a = forward_pair(&mut t1, &params, &cfg, &ex).unwrap();
    let mut t2 = Tape::new();
    let b = forward_pair(&mut t2, &params, &cfg, &ex).unwrap();
    assert_eq!(
        a.final_score.value().unwrap().to_bits(),
        b.final_score.value().unwrap().to_bits()
    );
}

#[test]
fn head_input_width_is_four_d() {
    let (_, cfg, params, ex) = fixture();
    let mut tape = Tape::new();
    let fwd = forward_pair(&mut tape, &params, &cfg, &ex).unwrap();
    assert_eq!(fwd.query_tower.head_input.shape(), &[1, 4 * cfg.hidden_dim]);
    assert_eq!(
        fwd.item_tower.neighbors_pooled.as_ref().unwrap().shape(),
        &[1, cfg.hidden_dim]
    );
}
