// Temporary calibration harness; deleted before shipping.
use barl_core::datagen::{generate, SyntheticConfig};
use barl_core::eval::{evaluate, Scorer};
use barl_core::graph::ingest_log;
use barl_core::model::config::{BaselineKind, ModelConfig};
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
fn five_seeds() {
    let world = generate(&SyntheticConfig::default()).unwrap();
    let graph = ingest_log(world.clicks.clone()).unwrap();
    let corpus: Vec<&str> = world
        .train
        .iter()
        .flat_map(|p| [p.query.as_str(), p.item.as_str()])
        .collect();
    let vocab = Vocab::build(corpus, 5000).unwrap();

    let mut rows = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for seed in 1u64..=5 {
            for kind in [ModelSpec::Barl, ModelSpec::TwoTower] {
                let world = &world;
                let graph = &graph;
                let vocab = &vocab;
                handles.push(scope.spawn(move || {
                    let epochs: usize = std::env::var("EP").map(|v| v.parse().unwrap()).unwrap_or(3);
                    let bsz: usize = std::env::var("BSZ").map(|v| v.parse().unwrap()).unwrap_or(32);
                    let lr: f64 = std::env::var("LR").map(|v| v.parse().unwrap()).unwrap_or(5e-3);
                    let tc = TrainConfig {
                        kind,
                        epochs,
                        batch_size: bsz,
                        learning_rate: if kind == ModelSpec::Barl { lr } else { 2e-3 },
                        seed,
                        model: lean_model(vocab.size()),
                        ..TrainConfig::default()
                    };
                    let out = train(&world.train, graph, vocab, &tc, |_, _, _| Ok(())).unwrap();
                    let scorer = match kind {
                        ModelSpec::Barl => Scorer::Barl { params: &out.params, cfg: &tc.model },
                        ModelSpec::TwoTower => Scorer::Baseline {
                            kind: BaselineKind::TwoTower,
                            params: &out.params,
                            cfg: &tc.model,
                        },
                        ModelSpec::CrossEncoder => Scorer::Baseline {
                            kind: BaselineKind::CrossEncoder,
                            params: &out.params,
                            cfg: &tc.model,
                        },
                    };
                    let m = evaluate(&scorer, &world.test, graph, vocab, &tc.model, 0.5).unwrap();
                    (
                        seed,
                        kind,
                        m.all.auc.unwrap(),
                        m.with_neighbors.and_then(|r| r.auc).unwrap_or(f64::NAN),
                        m.without_neighbors.and_then(|r| r.auc).unwrap_or(f64::NAN),
                    )
                }));
            }
        }
        for h in handles {
            rows.push(h.join().unwrap());
        }
    });
    rows.sort_by_key(|r| (r.0, format!("{:?}", r.1)));
    for (seed, kind, all, with, without) in &rows {
        println!("seed {seed} {kind:?}: all {all:.4} w/ {with:.4} w/o {without:.4}");
    }
    for seed in 1u64..=5 {
        let get = |k: ModelSpec| rows.iter().find(|r| r.0 == seed && r.1 == k).unwrap();
        let barl = get(ModelSpec::Barl);
        let tt = get(ModelSpec::TwoTower);
        let xe = get(ModelSpec::CrossEncoder);
        println!(
            "seed {seed}: gap_tt {:+.4} gap_xe {:+.4} | routing margin (tt_wo - barl_wo) {:+.4}",
            barl.2 - tt.2,
            barl.2 - xe.2,
            tt.4 - barl.4
        );
    }
}
