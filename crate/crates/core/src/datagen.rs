//! Seeded synthetic world: a topic model over queries and items that yields
//! a labeled relevance dataset plus a correlated click log.
//!
//! Every query and item carries a latent topic and draws its tokens from a
//! mix of its topic's word pool and a shared background pool. Relevance is
//! topic match with label noise; clicks land predominantly on topic-matching
//! pairs. A configurable share of test pairs uses entities withheld from the
//! click log, producing the no-neighbor subset with a calibrated size.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, LabeledPair};
use crate::error::{CoreError, Result};
use crate::graph::ClickRecord;

/// Generator configuration. The default world trains in minutes on a CPU
/// and leaves roughly 6.3% of test pairs without behavior neighbors.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticConfig {
    pub n_topics: usize,
    pub n_queries: usize,
    pub n_items: usize,
    pub n_pairs: usize,
    /// Total word pool size across shared and topic-owned words.
    pub vocab_pool: usize,
    pub tokens_per_text: usize,
    /// Probability a pair's label is flipped away from its topic match.
    pub label_noise: f64,
    /// Mean clicks per clicked pair; weights draw uniformly from
    /// `1..=2*mean-1`.
    pub clicks_per_pair_mean: u64,
    /// Target fraction of test pairs with no neighbors on either side.
    pub no_neighbor_fraction: f64,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    /// Target marginal probability of label 1.
    pub positive_rate: f64,
    /// Probability a query token comes from the query's topic pool rather
    /// than the shared pool.
    pub query_topic_affinity: f64,
    /// Probability an item token comes from the item's topic pool. Item
    /// titles are deliberately cryptic by default: their behavior history,
    /// not their text, identifies them.
    pub item_topic_affinity: f64,
    /// Warm items reserved for test pairs; their texts never occur in the
    /// labeled train or valid splits, so test metrics measure word-level
    /// generalization rather than entity memorization.
    pub heldout_items: usize,
    /// Topic affinity of cold (clickless) items. New entities without any
    /// behavior history carry descriptive text, so semantic-only scoring is
    /// strongest exactly where behavior is absent.
    pub cold_item_topic_affinity: f64,
    /// Topic affinity of cold queries, mirroring `cold_item_topic_affinity`.
    pub cold_query_topic_affinity: f64,
    /// Fraction of the word pool shared across topics.
    pub shared_vocab_frac: f64,
    /// Fraction of clicks landing on topic-mismatched pairs.
    pub click_noise: f64,
    /// Upper bound on distinct items clicked per query.
    pub clicked_items_per_query: usize,
    /// Entities reserved for the no-neighbor test subset.
    pub cold_queries: usize,
    pub cold_items: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_topics: 8,
            n_queries: 2000,
            n_items: 2000,
            n_pairs: 25000,
            vocab_pool: 1600,
            tokens_per_text: 6,
            label_noise: 0.1,
            clicks_per_pair_mean: 3,
            no_neighbor_fraction: 0.063,
            train_frac: 0.8,
            valid_frac: 0.1,
            test_frac: 0.1,
            seed: 0,
            positive_rate: 0.6,
            query_topic_affinity: 0.55,
            item_topic_affinity: 0.15,
            heldout_items: 600,
            cold_item_topic_affinity: 0.5,
            cold_query_topic_affinity: 0.75,
            shared_vocab_frac: 0.3,
            click_noise: 0.05,
            clicked_items_per_query: 8,
            cold_queries: 120,
            cold_items: 120,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |field: &str, ok: bool, reason: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(CoreError::Config {
                    field: field.into(),
                    reason,
                })
            }
        };
        check("n_topics", self.n_topics >= 1, "must be >= 1".into())?;
        check("n_queries", self.n_queries >= 1, "must be >= 1".into())?;
        check("n_items", self.n_items >= 1, "must be >= 1".into())?;
        check("n_pairs", self.n_pairs >= 1, "must be >= 1".into())?;
        check(
            "vocab_pool",
            self.vocab_pool >= 2 * self.n_topics,
            "needs at least two words per topic".into(),
        )?;
        check(
            "tokens_per_text",
            self.tokens_per_text >= 1,
            "must be >= 1".into(),
        )?;
        check(
            "label_noise",
            (0.0..0.5).contains(&self.label_noise),
            format!("must lie in [0, 0.5), got {}", self.label_noise),
        )?;
        check(
            "clicks_per_pair_mean",
            self.clicks_per_pair_mean >= 1,
            "must be >= 1".into(),
        )?;
        check(
            "no_neighbor_fraction",
            (0.0..1.0).contains(&self.no_neighbor_fraction),
            "must lie in [0, 1)".into(),
        )?;
        let frac_sum = self.train_frac + self.valid_frac + self.test_frac;
        check(
            "train_frac",
            (frac_sum - 1.0).abs() <= 1e-9
                && self.train_frac > 0.0
                && self.valid_frac >= 0.0
                && self.test_frac >= 0.0,
            format!("split fractions must sum to 1, got {frac_sum}"),
        )?;
        let p_match = self.p_match();
        check(
            "positive_rate",
            (0.0..=1.0).contains(&p_match),
            format!(
                "positive_rate {} unreachable at label_noise {}",
                self.positive_rate, self.label_noise
            ),
        )?;
        for (name, a) in [
            ("query_topic_affinity", self.query_topic_affinity),
            ("item_topic_affinity", self.item_topic_affinity),
            ("cold_item_topic_affinity", self.cold_item_topic_affinity),
            ("cold_query_topic_affinity", self.cold_query_topic_affinity),
        ] {
            check(name, (0.0..=1.0).contains(&a), "must lie in [0, 1]".into())?;
        }
        check(
            "heldout_items",
            self.heldout_items + self.cold_items < self.n_items,
            "must leave warm items for the train split".into(),
        )?;
        check(
            "shared_vocab_frac",
            (0.0..1.0).contains(&self.shared_vocab_frac),
            "must lie in [0, 1)".into(),
        )?;
        check(
            "click_noise",
            (0.0..=1.0).contains(&self.click_noise),
            "must lie in [0, 1]".into(),
        )?;
        check(
            "clicked_items_per_query",
            self.clicked_items_per_query >= 1,
            "must be >= 1".into(),
        )?;
        check(
            "cold_queries",
            self.cold_queries < self.n_queries,
            "must leave at least one warm query".into(),
        )?;
        check(
            "cold_items",
            self.cold_items < self.n_items,
            "must leave at least one warm item".into(),
        )?;

        let n_test = self.split_sizes().2;
        let n_cold_pairs = self.cold_pair_target();
        check(
            "no_neighbor_fraction",
            n_cold_pairs <= n_test,
            format!("{n_cold_pairs} withheld pairs exceed the test split of {n_test}"),
        )?;
        check(
            "no_neighbor_fraction",
            n_cold_pairs == 0 || self.cold_queries * self.cold_items >= n_cold_pairs,
            format!(
                "{n_cold_pairs} withheld pairs exceed the {} x {} cold entity grid",
                self.cold_queries, self.cold_items
            ),
        )?;
        Ok(())
    }

    /// Probability a sampled pair is topic-matching, solved so the marginal
    /// positive rate comes out at `positive_rate` under the label noise.
    fn p_match(&self) -> f64 {
        if self.n_topics == 1 {
            return 1.0;
        }
        (self.positive_rate - self.label_noise) / (1.0 - 2.0 * self.label_noise)
    }

    /// `(n_train, n_valid, n_test)`, summing exactly to `n_pairs`.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let n = self.n_pairs as f64;
        let n_valid = libm::round(self.valid_frac * n) as usize;
        let n_test = libm::round(self.test_frac * n) as usize;
        let n_train = self.n_pairs - n_valid - n_test;
        (n_train, n_valid, n_test)
    }

    /// Number of test pairs built from fully-cold entities.
    pub fn cold_pair_target(&self) -> usize {
        let (_, _, n_test) = self.split_sizes();
        libm::round(self.no_neighbor_fraction * n_test as f64) as usize
    }
}

/// Everything one generator run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub clicks: Vec<ClickRecord>,
}

struct Entity {
    id: String,
    text: String,
    topic: usize,
}

struct WordPools {
    shared: Vec<String>,
    per_topic: Vec<Vec<String>>,
}

fn build_pools(cfg: &SyntheticConfig) -> WordPools {
    let n_shared = libm::round(cfg.shared_vocab_frac * cfg.vocab_pool as f64) as usize;
    let n_shared = n_shared.min(cfg.vocab_pool - cfg.n_topics); // leave topic words
    let words: Vec<String> = (0..cfg.vocab_pool).map(|i| format!("w{i:04}")).collect();
    let shared = words[..n_shared].to_vec();
    let owned = &words[n_shared..];
    let per = owned.len() / cfg.n_topics;
    let mut per_topic = Vec::with_capacity(cfg.n_topics);
    for t in 0..cfg.n_topics {
        let start = t * per;
        let end = if t + 1 == cfg.n_topics {
            owned.len()
        } else {
            (t + 1) * per
        };
        per_topic.push(owned[start..end].to_vec());
    }
    WordPools { shared, per_topic }
}

fn sample_text(
    cfg: &SyntheticConfig,
    pools: &WordPools,
    topic: usize,
    affinity: f64,
    rng: &mut ChaCha8Rng,
) -> String {
    let mut tokens = Vec::with_capacity(cfg.tokens_per_text);
    for _ in 0..cfg.tokens_per_text {
        let own = pools.shared.is_empty() || rng.gen::<f64>() < affinity;
        let pool = if own {
            &pools.per_topic[topic]
        } else {
            &pools.shared
        };
        tokens.push(pool[rng.gen_range(0..pool.len())].clone());
    }
    tokens.join(" ")
}

fn build_entities(
    cfg: &SyntheticConfig,
    pools: &WordPools,
    rng: &mut ChaCha8Rng,
    count: usize,
    prefix: &str,
    affinity: impl Fn(usize) -> f64,
) -> Vec<Entity> {
    (0..count)
        .map(|i| {
            // Round-robin topics keep every topic populated in every
            // entity range (train, heldout, cold).
            let topic = i % cfg.n_topics;
            Entity {
                id: format!("{prefix}{i:05}"),
                text: sample_text(cfg, pools, topic, affinity(i), rng),
                topic,
            }
        })
        .collect()
}

/// Indices into an entity slice, grouped by topic.
fn by_topic(entities: &[Entity], range: core::ops::Range<usize>, n_topics: usize) -> Vec<Vec<usize>> {
    let mut groups = alloc::vec![Vec::new(); n_topics];
    for idx in range {
        groups[entities[idx].topic].push(idx);
    }
    groups
}

struct PairSampler<'a> {
    cfg: &'a SyntheticConfig,
    queries_by_topic: Vec<Vec<usize>>,
    items_by_topic: Vec<Vec<usize>>,
    used: BTreeSet<(usize, usize)>,
}

impl PairSampler<'_> {
    fn sample(&mut self, rng: &mut ChaCha8Rng) -> Result<(usize, usize, u8)> {
        let p_match = self.cfg.p_match();
        for _ in 0..10_000 {
            let matching = self.cfg.n_topics == 1 || rng.gen::<f64>() < p_match;
            let (qt, it) = if matching {
                let t = rng.gen_range(0..self.cfg.n_topics);
                (t, t)
            } else {
                let t1 = rng.gen_range(0..self.cfg.n_topics);
                let mut t2 = rng.gen_range(0..self.cfg.n_topics - 1);
                if t2 >= t1 {
                    t2 += 1;
                }
                (t1, t2)
            };
            let q_pool = &self.queries_by_topic[qt];
            let i_pool = &self.items_by_topic[it];
            if q_pool.is_empty() || i_pool.is_empty() {
                continue;
            }
            let q = q_pool[rng.gen_range(0..q_pool.len())];
            let i = i_pool[rng.gen_range(0..i_pool.len())];
            if !self.used.insert((q, i)) {
                continue;
            }
            let flip = rng.gen::<f64>() < self.cfg.label_noise;
            let label = u8::from(matching != flip);
            return Ok((q, i, label));
        }
        Err(CoreError::Config {
            field: "n_pairs".into(),
            reason: "pair sampling exhausted; entity pools too small for the requested sizes"
                .into(),
        })
    }
}

/// Generate the labeled splits and the click log. Fully deterministic per
/// seed.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pools = build_pools(cfg);

    let n_warm_queries = cfg.n_queries - cfg.cold_queries;
    let queries = build_entities(cfg, &pools, &mut rng, cfg.n_queries, "q", |i| {
        if i < n_warm_queries {
            cfg.query_topic_affinity
        } else {
            cfg.cold_query_topic_affinity
        }
    });
    let n_warm_items = cfg.n_items - cfg.cold_items;
    let items = build_entities(cfg, &pools, &mut rng, cfg.n_items, "i", |i| {
        if i < n_warm_items {
            cfg.item_topic_affinity
        } else {
            cfg.cold_item_topic_affinity
        }
    });
    let n_warm_q = cfg.n_queries - cfg.cold_queries;
    let n_warm_i = cfg.n_items - cfg.cold_items;
    // Warm items split into a train range and a heldout range used only by
    // test pairs; both ranges appear in the click log.
    let n_train_i = n_warm_i - cfg.heldout_items;

    let warm_q_topics = by_topic(&queries, 0..n_warm_q, cfg.n_topics);
    let train_i_topics = by_topic(&items, 0..n_train_i, cfg.n_topics);
    let heldout_i_topics = by_topic(&items, n_train_i..n_warm_i, cfg.n_topics);
    let cold_q_topics = by_topic(&queries, n_warm_q..cfg.n_queries, cfg.n_topics);
    let cold_i_topics = by_topic(&items, n_warm_i..cfg.n_items, cfg.n_topics);

    let (n_train, n_valid, n_test) = cfg.split_sizes();
    let n_cold_pairs = cfg.cold_pair_target();
    // Mixed pairs exercise the one-sided coverage paths without affecting
    // the no-neighbor fraction.
    let budget = n_test - n_cold_pairs;
    let n_qcold = usize::min(n_cold_pairs, budget / 4);
    let n_icold = usize::min(n_cold_pairs, budget.saturating_sub(n_qcold) / 4);

    let mut used = BTreeSet::new();
    let make_pairs = |sampler: &mut PairSampler<'_>,
                      rng: &mut ChaCha8Rng,
                      count: usize,
                      queries: &[Entity],
                      items: &[Entity]|
     -> Result<Vec<LabeledPair>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let (q, i, label) = sampler.sample(rng)?;
            out.push(LabeledPair {
                query_id: queries[q].id.clone(),
                query: queries[q].text.clone(),
                item_id: items[i].id.clone(),
                item: items[i].text.clone(),
                label,
            });
        }
        Ok(out)
    };

    // Train and valid pairs draw from the train item range; covered test
    // pairs draw from the heldout item range, so no test item's text was
    // ever seen with a label.
    let mut train_sampler = PairSampler {
        cfg,
        queries_by_topic: warm_q_topics.clone(),
        items_by_topic: train_i_topics,
        used: core::mem::take(&mut used),
    };
    let train_pairs = make_pairs(&mut train_sampler, &mut rng, n_train, &queries, &items)?;
    let valid_pairs = make_pairs(&mut train_sampler, &mut rng, n_valid, &queries, &items)?;
    used = train_sampler.used;

    let mut test_sampler = PairSampler {
        cfg,
        queries_by_topic: warm_q_topics.clone(),
        items_by_topic: heldout_i_topics,
        used: core::mem::take(&mut used),
    };
    let n_warm_test = n_test - n_cold_pairs - n_qcold - n_icold;
    let mut test_pairs = make_pairs(&mut test_sampler, &mut rng, n_warm_test, &queries, &items)?;
    used = test_sampler.used;

    // Query-side-cold, item-side-cold, and fully-cold test pairs.
    let warm_i_topics_all = by_topic(&items, 0..n_warm_i, cfg.n_topics);
    let mut side_sampler = PairSampler {
        cfg,
        queries_by_topic: cold_q_topics.clone(),
        items_by_topic: warm_i_topics_all,
        used: core::mem::take(&mut used),
    };
    test_pairs.extend(make_pairs(&mut side_sampler, &mut rng, n_qcold, &queries, &items)?);
    used = side_sampler.used;

    let mut side_sampler = PairSampler {
        cfg,
        queries_by_topic: warm_q_topics,
        items_by_topic: cold_i_topics.clone(),
        used: core::mem::take(&mut used),
    };
    test_pairs.extend(make_pairs(&mut side_sampler, &mut rng, n_icold, &queries, &items)?);
    used = side_sampler.used;

    let mut cold_sampler = PairSampler {
        cfg,
        queries_by_topic: cold_q_topics,
        items_by_topic: cold_i_topics,
        used,
    };
    test_pairs.extend(make_pairs(&mut cold_sampler, &mut rng, n_cold_pairs, &queries, &items)?);
    test_pairs.shuffle(&mut rng);

    // Click log over warm entities only.
    let mut clicks: alloc::collections::BTreeMap<(usize, usize), u64> =
        alloc::collections::BTreeMap::new();
    let weight_hi = 2 * cfg.clicks_per_pair_mean - 1;
    let warm_i_topics_click = by_topic(&items, 0..n_warm_i, cfg.n_topics);
    for (q_idx, q) in queries.iter().enumerate().take(n_warm_q) {
        let n_clicked = rng.gen_range(1..=cfg.clicked_items_per_query);
        for _ in 0..n_clicked {
            let off_topic = cfg.n_topics > 1 && rng.gen::<f64>() < cfg.click_noise;
            let topic = if off_topic {
                let mut t = rng.gen_range(0..cfg.n_topics - 1);
                if t >= q.topic {
                    t += 1;
                }
                t
            } else {
                q.topic
            };
            let pool = &warm_i_topics_click[topic];
            if pool.is_empty() {
                continue;
            }
            let i_idx = pool[rng.gen_range(0..pool.len())];
            let w = rng.gen_range(1..=weight_hi);
            *clicks.entry((q_idx, i_idx)).or_insert(0) += w;
        }
    }
    // Guarantee warm items are reachable from the item side.
    let mut clicked_items: BTreeSet<usize> = clicks.keys().map(|&(_, i)| i).collect();
    let warm_q_topics_click = by_topic(&queries, 0..n_warm_q, cfg.n_topics);
    for i_idx in 0..n_warm_i {
        if clicked_items.contains(&i_idx) {
            continue;
        }
        let pool = &warm_q_topics_click[items[i_idx].topic];
        if pool.is_empty() {
            continue;
        }
        let q_idx = pool[rng.gen_range(0..pool.len())];
        let w = rng.gen_range(1..=weight_hi);
        *clicks.entry((q_idx, i_idx)).or_insert(0) += w;
        clicked_items.insert(i_idx);
    }

    let click_records: Vec<ClickRecord> = clicks
        .into_iter()
        .map(|((q, i), w)| {
            ClickRecord::new(&queries[q].text, &items[i].id, &items[i].text, w)
        })
        .collect();

    Ok(SyntheticWorld {
        train: Dataset::new(train_pairs),
        valid: Dataset::new(valid_pairs),
        test: Dataset::new(test_pairs),
        clicks: click_records,
    })
}

/// Dataset statistics in the reporting order
/// `(samples, queries, items, good, bad)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetStats {
    pub n_samples: usize,
    pub n_queries: usize,
    pub n_items: usize,
    pub n_good: usize,
    pub n_bad: usize,
}

/// Exact counts over a dataset: sample count, distinct queries and items,
/// and the label split.
pub fn describe(ds: &Dataset) -> Result<DatasetStats> {
    if ds.is_empty() {
        return Err(CoreError::Contract("describe requires a non-empty dataset".into()));
    }
    let queries: BTreeSet<&str> = ds.iter().map(|p| p.query_id.as_str()).collect();
    let items: BTreeSet<&str> = ds.iter().map(|p| p.item_id.as_str()).collect();
    let n_good = ds.iter().filter(|p| p.label == 1).count();
    Ok(DatasetStats {
        n_samples: ds.len(),
        n_queries: queries.len(),
        n_items: items.len(),
        n_good,
        n_bad: ds.len() - n_good,
    })
}
