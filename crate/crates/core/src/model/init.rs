//! Deterministic parameter initialization and closed-form parameter counts.
//!
//! Weight matrices draw uniform values in `[-a, a]` with
//! `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero, layer-norm gains
//! at one, and the two-tower cosine scale at one. Every tensor's draw is
//! keyed by `(seed, name)`, so configs that share a tensor initialize it
//! bit-identically regardless of which other components exist.

use alloc::format;
use alloc::vec::Vec;

use crate::error::Result;
use crate::model::config::{BaselineKind, ModelConfig};
use crate::numerics::params::{build_params, ParamInit, ParamSet, ParamSpec};
use crate::text::encoder::{self, encoder_param_count};

fn head_specs(prefix: &str, in_dim: usize, hidden: usize) -> Vec<ParamSpec> {
    alloc::vec![
        ParamSpec::new(format!("{prefix}.w1"), in_dim, hidden, ParamInit::Uniform),
        ParamSpec::new(format!("{prefix}.b1"), 1, hidden, ParamInit::Zeros),
        ParamSpec::new(format!("{prefix}.w2"), hidden, 1, ParamInit::Uniform),
        ParamSpec::new(format!("{prefix}.b2"), 1, 1, ParamInit::Zeros),
    ]
}

fn fuse_specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
    alloc::vec![
        ParamSpec::new(format!("{prefix}.wq"), d, d, ParamInit::Uniform),
        ParamSpec::new(format!("{prefix}.wk"), d, d, ParamInit::Uniform),
        ParamSpec::new(format!("{prefix}.wv"), d, d, ParamInit::Uniform),
        ParamSpec::new(format!("{prefix}.ln.gain"), 1, d, ParamInit::Ones),
        ParamSpec::new(format!("{prefix}.ln.bias"), 1, d, ParamInit::Zeros),
    ]
}

fn model_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.hidden_dim;
    let enc_cfg = cfg.encoder_config();
    let mut specs = Vec::new();
    if cfg.shared_encoder {
        specs.extend(encoder::param_specs("enc", &enc_cfg));
    } else {
        specs.extend(encoder::param_specs("enc_q", &enc_cfg));
        specs.extend(encoder::param_specs("enc_i", &enc_cfg));
    }
    for (tower, neighbors_on) in [("tower_q", cfg.use_qbn), ("tower_i", cfg.use_ibn)] {
        if neighbors_on && cfg.use_nca {
            specs.extend(fuse_specs(&format!("{tower}.nca"), d));
        }
        if neighbors_on && cfg.use_tca {
            specs.extend(fuse_specs(&format!("{tower}.tca"), d));
        }
        specs.extend(head_specs(
            &format!("{tower}.head"),
            4 * d,
            cfg.head_hidden(),
        ));
    }
    specs
}

/// Initialize the full dual-tower model.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    build_params(&model_specs(cfg), seed)
}

/// Closed-form scalar parameter count of [`init_params`].
///
/// With `d = hidden_dim`, `h = 2d`, and `e` the per-stack encoder count:
/// `count = e * (1 or 2 for unshared) + per-tower fusion + 2 * head`, where a
/// fusion block (NCA or TCA) adds `3d^2 + 2d` when its flag and the tower's
/// neighbor input are both enabled, and each head adds `4d*h + h + h + 1`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.hidden_dim;
    let h = cfg.head_hidden();
    let enc = encoder_param_count(&cfg.encoder_config());
    let enc_total = if cfg.shared_encoder { enc } else { 2 * enc };
    let fuse = 3 * d * d + 2 * d;
    let head = 4 * d * h + h + h + 1;
    let mut total = enc_total + 2 * head;
    for neighbors_on in [cfg.use_qbn, cfg.use_ibn] {
        if neighbors_on && cfg.use_nca {
            total += fuse;
        }
        if neighbors_on && cfg.use_tca {
            total += fuse;
        }
    }
    total
}

fn baseline_specs(kind: BaselineKind, cfg: &ModelConfig) -> Vec<ParamSpec> {
    let enc_cfg = cfg.encoder_config();
    let mut specs = encoder::param_specs("enc", &enc_cfg);
    match kind {
        BaselineKind::TwoTower => {
            specs.push(ParamSpec::new(
                "score.scale".into(),
                1,
                1,
                ParamInit::Const(1.0),
            ));
        }
        BaselineKind::CrossEncoder => {
            specs.extend(head_specs("head", cfg.hidden_dim, cfg.head_hidden()));
        }
    }
    specs
}

/// Initialize a baseline scorer (its own independent parameter set).
pub fn init_baseline_params(kind: BaselineKind, cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    build_params(&baseline_specs(kind, cfg), seed)
}

/// Closed-form count for [`init_baseline_params`].
pub fn baseline_param_count(kind: BaselineKind, cfg: &ModelConfig) -> usize {
    let enc = encoder_param_count(&cfg.encoder_config());
    match kind {
        BaselineKind::TwoTower => enc + 1,
        BaselineKind::CrossEncoder => {
            let d = cfg.hidden_dim;
            let h = cfg.head_hidden();
            enc + d * h + h + h + 1
        }
    }
}
