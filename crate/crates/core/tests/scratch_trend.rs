// Temporary calibration harness; deleted before shipping.
use std::time::Instant;

use barl_core::datagen::{generate, SyntheticConfig};
use barl_core::eval::{evaluate, Scorer};
use barl_core::graph::ingest_log;
use barl_core::model::config::ModelConfig;
use barl_core::text::vocab::Vocab;
use barl_core::train::{train, ModelSpec, TrainConfig};

fn lean_model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        hidden_dim: 16,
        layers: 1,
        heads: 2,
        max_len: 16,
        k_neighbors: 5,
        ..ModelConfig::default()
    }
}

#[test]
#[ignore]
fn trend_check() {
    let affinity: f64 = std::env::var("AFF").map(|v| v.parse().unwrap()).unwrap_or(0.5);
    let world_cfg = SyntheticConfig { query_topic_affinity: affinity, ..SyntheticConfig::default() };
    let world = generate(&world_cfg).unwrap();
    let graph = ingest_log(world.clicks.clone()).unwrap();
    let corpus: Vec<&str> = world
        .train
        .iter()
        .flat_map(|p| [p.query.as_str(), p.item.as_str()])
        .collect();
    let vocab = Vocab::build(corpus, 5000).unwrap();

    for lr in [0.0f64] {  // per-model lr below
    for seed in [1u64] {
        for (name, kind) in [
            ("barl", ModelSpec::Barl),
            ("two_tower", ModelSpec::TwoTower),
            ("cross_enc", ModelSpec::CrossEncoder),
        ] {
            let tc = TrainConfig {
                kind,
                epochs: 4,
                batch_size: 32,
                learning_rate: if kind == ModelSpec::Barl { 5e-3 } else { 2e-3 },
                seed,
                model: lean_model(vocab.size()),
                ..TrainConfig::default()
            };
            let t0 = Instant::now();
            let out = train(&world.train, &graph, &vocab, &tc, |_, _, _| Ok(())).unwrap();
            let scorer = match kind {
                ModelSpec::Barl => Scorer::Barl {
                    params: &out.params,
                    cfg: &tc.model,
                },
                ModelSpec::TwoTower => Scorer::Baseline {
                    kind: barl_core::model::config::BaselineKind::TwoTower,
                    params: &out.params,
                    cfg: &tc.model,
                },
                ModelSpec::CrossEncoder => Scorer::Baseline {
                    kind: barl_core::model::config::BaselineKind::CrossEncoder,
                    params: &out.params,
                    cfg: &tc.model,
                },
            };
            let m = evaluate(&scorer, &world.test, &graph, &vocab, &tc.model, 0.5).unwrap();
            let wo = m.without_neighbors.as_ref().and_then(|r| r.auc);
            let wi = m.with_neighbors.as_ref().and_then(|r| r.auc);
            println!(
                "aff {affinity} lr {lr} seed {seed} {name:10} auc {:.4} f1 {:.4} fnr {:?} | w/ {:?} w/o {:?} | {:?} last-loss {:.3}",
                m.all.auc.unwrap(),
                m.all.f1,
                m.all.fnr.map(|v| (v * 1e4).round() / 1e4),
                wi.map(|v| (v * 1e4).round() / 1e4),
                wo.map(|v| (v * 1e4).round() / 1e4),
                t0.elapsed(),
                out.history.last().unwrap().loss.total,
            );
        }
    }
    }
}
