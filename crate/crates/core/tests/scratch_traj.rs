// Temporary calibration harness; deleted before shipping.
use barl_core::datagen::{generate, SyntheticConfig};
use barl_core::eval::{evaluate, Scorer};
use barl_core::graph::ingest_log;
use barl_core::model::config::{BaselineKind, ModelConfig};
use barl_core::text::vocab::Vocab;
use barl_core::train::{
    epoch_seed, init_for, make_batches, train_step, AdamState, ModelSpec, TrainConfig,
};

#[test]
#[ignore]
fn trajectory() {
    let aff: f64 = std::env::var("AFF").map(|v| v.parse().unwrap()).unwrap_or(0.5);
    let bsz: usize = std::env::var("BSZ").map(|v| v.parse().unwrap()).unwrap_or(32);
    let lr: f64 = std::env::var("LR").map(|v| v.parse().unwrap()).unwrap_or(5e-3);
    let lam: f64 = std::env::var("LAM").map(|v| v.parse().unwrap()).unwrap_or(1.0);
    let kind = match std::env::var("KIND").as_deref() {
        Ok("tt") => ModelSpec::TwoTower,
        Ok("xe") => ModelSpec::CrossEncoder,
        _ => ModelSpec::Barl,
    };
    let epochs: usize = std::env::var("EP").map(|v| v.parse().unwrap()).unwrap_or(8);

    let world_cfg = SyntheticConfig {
        query_topic_affinity: aff,
        ..SyntheticConfig::default()
    };
    let world = generate(&world_cfg).unwrap();
    let graph = ingest_log(world.clicks.clone()).unwrap();
    let corpus: Vec<&str> = world
        .train
        .iter()
        .flat_map(|p| [p.query.as_str(), p.item.as_str()])
        .collect();
    let vocab = Vocab::build(corpus, 5000).unwrap();
    let model = ModelConfig {
        vocab_size: vocab.size(),
        hidden_dim: 16,
        layers: 1,
        heads: 2,
        max_len: 16,
        k_neighbors: 5,
        lambda_qntc: 0.1 * lam,
        lambda_intc: 0.1 * lam,
        lambda_mutual: 0.5 * lam,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        kind,
        epochs,
        batch_size: bsz,
        learning_rate: lr,
        seed: 1,
        model,
        ..TrainConfig::default()
    };
    let mut params = init_for(&tc).unwrap();
    let mut opt = AdamState::new();
    for epoch in 0..tc.epochs {
        let batches = make_batches(&world.train, &graph, &vocab, &tc, epoch_seed(tc.seed, epoch)).unwrap();
        let mut sum = 0.0;
        for b in &batches {
            sum += train_step(&mut params, &mut opt, b, &tc).unwrap().total;
        }
        let scorer = match kind {
            ModelSpec::Barl => Scorer::Barl { params: &params, cfg: &tc.model },
            ModelSpec::TwoTower => Scorer::Baseline { kind: BaselineKind::TwoTower, params: &params, cfg: &tc.model },
            ModelSpec::CrossEncoder => Scorer::Baseline { kind: BaselineKind::CrossEncoder, params: &params, cfg: &tc.model },
        };
        let m = evaluate(&scorer, &world.test, &graph, &vocab, &tc.model, 0.5).unwrap();
        let head_auc = |combiner: barl_core::model::config::ScoreCombiner| -> f64 {
            if kind != ModelSpec::Barl {
                return f64::NAN;
            }
            let mut c = tc.model.clone();
            c.combiner = combiner;
            let s = Scorer::Barl { params: &params, cfg: &c };
            evaluate(&s, &world.test, &graph, &vocab, &c, 0.5)
                .unwrap()
                .all
                .auc
                .unwrap()
        };
        println!(
            "kind {kind:?} aff {aff} bsz {bsz} lr {lr} lam {lam} epoch {epoch}: mean-loss {:.4} test-auc {:.4} (w/ {:.4} w/o {:.4}) headq {:.4} headi {:.4}",
            sum / batches.len() as f64,
            m.all.auc.unwrap(),
            m.with_neighbors.as_ref().and_then(|r| r.auc).unwrap_or(f64::NAN),
            m.without_neighbors.as_ref().and_then(|r| r.auc).unwrap_or(f64::NAN),
            head_auc(barl_core::model::config::ScoreCombiner::QueryOnly),
            head_auc(barl_core::model::config::ScoreCombiner::ItemOnly),
        );
    }
}
