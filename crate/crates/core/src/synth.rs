//! Seeded synthetic corpus with benign chatter and three spam campaign
//! styles: one account advertising under many items, deformed copies of one
//! advert spread over many accounts, and coupon blasts from low-activity
//! accounts. Cross-account campaigns reuse a small set of topic words, and a
//! share of their posts drop the advert entirely and come from regular
//! accounts; only their wording ties them to the campaign. Also writes
//! matching word vectors and weak node features.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{GasError, Result};
use crate::graph::{write_node_features, write_records, CommentRecord, Label};
use crate::text::{write_embeddings, EmbeddingTable, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub comments: usize,
    pub spam_fraction: f64,
    /// Shares of spam from single-account adverts, deformed cross-account
    /// adverts and coupon blasts.
    pub mix: [f64; 3],
    /// Probability that a deformed advert swaps a keyword for a variant.
    pub deformation_rate: f64,
    /// Distinct misspellings per advert keyword.
    pub variants: usize,
    /// Posts per single-account spammer.
    pub spammer_posts: usize,
    /// Distinct deformed advert campaigns.
    pub campaigns: usize,
    /// Share of users with very low activity; cross-account spam is posted
    /// from these.
    pub casual_share: f64,
    /// Share of benign comments that mention contact or sales words.
    pub lookalike_rate: f64,
    /// Probability that an advert keyword is dropped or replaced by filler.
    pub keyword_noise: f64,
    /// Share of cross-account campaign posts that carry no advert words at
    /// all. These are posted from otherwise regular accounts and only echo
    /// the campaign's wording.
    pub covert_rate: f64,
    /// Size of the contact and coupon word pools; the sales pool is twice
    /// as large.
    pub keywords: usize,
    pub topics: usize,
    pub topic_words: usize,
    pub common_words: usize,
    pub embedding_dim: usize,
    pub feature_dim: usize,
    /// Shift of spammer feature means, in standard deviations.
    pub feature_signal: f64,
    pub time_span: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 500,
            items: 1500,
            comments: 5000,
            spam_fraction: 0.1,
            mix: [0.35, 0.4, 0.25],
            deformation_rate: 0.7,
            variants: 12,
            spammer_posts: 20,
            campaigns: 6,
            casual_share: 0.5,
            lookalike_rate: 0.2,
            keyword_noise: 0.4,
            covert_rate: 0.3,
            keywords: 24,
            topics: 25,
            topic_words: 20,
            common_words: 120,
            embedding_dim: 32,
            feature_dim: 4,
            feature_signal: 0.3,
            time_span: 30 * 86_400,
        }
    }
}

/// A generated corpus with the word vectors and node features to go with it.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub records: Vec<CommentRecord>,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub user_features: HashMap<String, Vec<f64>>,
    pub item_features: HashMap<String, Vec<f64>>,
}

struct Lexicon {
    topic: Vec<Vec<String>>,
    common: Vec<String>,
    contact: Vec<String>,
    sales: Vec<String>,
    coupon: Vec<String>,
}

/// Topic words each cross-account campaign keeps reusing.
const CAMPAIGN_WORDS: usize = 8;

fn variant(base: &str, j: usize) -> String {
    format!("{base}~{j}")
}

impl Lexicon {
    fn new(cfg: &SynthConfig) -> Self {
        Lexicon {
            topic: (0..cfg.topics)
                .map(|t| (0..cfg.topic_words).map(|k| format!("t{t}w{k}")).collect())
                .collect(),
            common: (0..cfg.common_words).map(|k| format!("w{k}")).collect(),
            contact: (0..cfg.keywords).map(|k| format!("contact{k}")).collect(),
            sales: (0..2 * cfg.keywords).map(|k| format!("sale{k}")).collect(),
            coupon: (0..cfg.keywords).map(|k| format!("coupon{k}")).collect(),
        }
    }

    fn filler(&self, rng: &mut ChaCha8Rng, topic: usize) -> String {
        if rng.random_bool(0.4) {
            self.common.choose(rng).expect("non-empty").clone()
        } else {
            self.topic[topic].choose(rng).expect("non-empty").clone()
        }
    }

}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GasError::Config(m));
        if self.users == 0 || self.items == 0 || self.comments == 0 || self.topics == 0 {
            return bad("counts must be positive".into());
        }
        if self.topic_words == 0 || self.common_words == 0 || self.variants == 0 || self.keywords < 3 || self.embedding_dim == 0 || self.spammer_posts == 0 {
            return bad("vocabulary sizes, variants and spammer_posts must be positive and keywords at least 3".into());
        }
        for (name, v) in [
            ("spam_fraction", self.spam_fraction),
            ("deformation_rate", self.deformation_rate),
            ("casual_share", self.casual_share),
            ("lookalike_rate", self.lookalike_rate),
            ("keyword_noise", self.keyword_noise),
            ("covert_rate", self.covert_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.mix.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
            return bad(format!("campaign mix shares must be in [0, 1], got {:?}", self.mix));
        }
        let (spammers, _, _) = self.spam_counts();
        let casual = self.casual_users();
        let needs_casual = self.spam_total() > 0 && (self.mix[1] > 0.0 || self.mix[2] > 0.0);
        if spammers + casual > self.users || (needs_casual && casual == 0) {
            return bad(format!(
                "{spammers} spammer accounts and {casual} low-activity accounts do not fit in {} users",
                self.users
            ));
        }
        if spammers + casual == self.users && (self.spam_total() < self.comments || self.covert_posts() > 0) {
            return bad("no regular users left to post benign or covert comments".into());
        }
        if self.mix[1] > 0.0 && self.campaigns == 0 && self.spam_total() > 0 {
            return bad("deformed adverts need at least one campaign".into());
        }
        Ok(())
    }

    fn spam_total(&self) -> usize {
        (self.comments as f64 * self.spam_fraction).round() as usize
    }

    /// Covert campaign posts.
    fn covert_posts(&self) -> usize {
        let (_, d, c) = self.spam_counts();
        ((d + c) as f64 * self.covert_rate).round() as usize
    }

    fn casual_users(&self) -> usize {
        (self.users as f64 * self.casual_share).round() as usize
    }

    /// (spammer accounts, deformed adverts, coupon messages); single-account
    /// adverts number `spam_total − deformed − coupon`.
    fn spam_counts(&self) -> (usize, usize, usize) {
        let total = self.spam_total();
        let s: f64 = self.mix.iter().sum();
        if total == 0 || s == 0.0 {
            return (0, 0, 0);
        }
        let deformed = (total as f64 * self.mix[1] / s).round() as usize;
        let coupon = ((total as f64 * self.mix[2] / s).round() as usize).min(total - deformed);
        let single = total - deformed - coupon;
        (single.div_ceil(self.spammer_posts), deformed, coupon)
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("valid");
    let v: Vec<f64> = (0..d).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn blend(rng: &mut ChaCha8Rng, center: &[f64], noise: f64) -> Vec<f64> {
    let r = unit(rng, center.len());
    center.iter().zip(&r).map(|(c, x)| c + noise * x).collect()
}

fn word_vectors(lex: &Lexicon, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vocabulary, EmbeddingTable) {
    let d = cfg.embedding_dim;
    let mut vocab = Vocabulary::new();
    let mut rows = vec![0.0; 2 * d];
    let mut add = |vocab: &mut Vocabulary, tok: &str, v: Vec<f64>| {
        vocab.insert(tok);
        rows.extend(v);
    };
    for pool in &lex.topic {
        let center = unit(rng, d);
        for t in pool {
            let v = blend(rng, &center, 1.2);
            add(&mut vocab, t, v);
        }
    }
    for t in &lex.common {
        let v = unit(rng, d);
        add(&mut vocab, t, v);
    }
    for t in lex.contact.iter().chain(&lex.sales).chain(&lex.coupon) {
        let base = unit(rng, d);
        add(&mut vocab, t, base.clone());
        // spelling variants stay close to the word they imitate
        for j in 0..cfg.variants {
            let v = blend(rng, &base, 0.3);
            add(&mut vocab, &variant(t, j), v);
        }
    }
    let n = vocab.len();
    (
        vocab,
        EmbeddingTable {
            matrix: Tensor::matrix(n, d, rows).expect("sized"),
        },
    )
}

/// Generates a corpus. Identical `cfg` and `seed` give identical output.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lex = Lexicon::new(cfg);
    let (vocab, embeddings) = word_vectors(&lex, cfg, &mut rng);

    let (spammers, n_deformed, n_coupon) = cfg.spam_counts();
    let n_single = cfg.spam_total() - n_deformed - n_coupon;
    let casual = cfg.casual_users();
    // users: spammers first, then low-activity accounts, then regulars
    let user_name = |u: usize| format!("u{u:04}");
    let casual_ids: Vec<usize> = (spammers..spammers + casual).collect();
    let covert = cfg.covert_posts();
    let regular_ids: Vec<usize> = (spammers + casual..cfg.users).collect();
    let item_topic: Vec<usize> = (0..cfg.items).map(|_| rng.random_range(0..cfg.topics)).collect();
    // heavy-tailed benign activity
    let regular_weight: Vec<f64> = regular_ids.iter().map(|_| rng.random_range(0.2f64..1.0).powi(3)).collect();
    let regular_total: f64 = regular_weight.iter().sum();

    struct Draft {
        user: usize,
        item: usize,
        tokens: Vec<String>,
        time: i64,
        spam: bool,
    }
    let mut drafts: Vec<Draft> = Vec::with_capacity(cfg.comments);
    let span = cfg.time_span.max(1);

    // benign comments
    let n_benign = cfg.comments - cfg.spam_total();
    for k in 0..n_benign {
        let user = if !casual_ids.is_empty() && (k < casual_ids.len() || rng.random_bool(0.03)) {
            // every low-activity account posts at least once
            casual_ids[k % casual_ids.len().max(1)]
        } else if regular_ids.is_empty() {
            casual_ids[rng.random_range(0..casual_ids.len())]
        } else {
            let mut x = rng.random_range(0.0..regular_total);
            let mut pick = regular_ids.len() - 1;
            for (j, w) in regular_weight.iter().enumerate() {
                if x < *w {
                    pick = j;
                    break;
                }
                x -= w;
            }
            regular_ids[pick]
        };
        let item = rng.random_range(0..cfg.items);
        let topic = item_topic[item];
        let len = rng.random_range(6..=14);
        let mut tokens: Vec<String> = (0..len).map(|_| lex.filler(&mut rng, topic)).collect();
        if rng.random_bool(cfg.lookalike_rate) {
            for _ in 0..rng.random_range(1..=3) {
                let pool = if rng.random_bool(0.5) { &lex.contact } else { &lex.sales };
                let pos = rng.random_range(0..=tokens.len());
                tokens.insert(pos, pool.choose(&mut rng).expect("non-empty").clone());
            }
        }
        drafts.push(Draft {
            user,
            item,
            tokens,
            time: rng.random_range(0..span),
            spam: false,
        });
    }

    let advert = |rng: &mut ChaCha8Rng, template: &[String], topic: usize, deform: f64| -> Vec<String> {
        let mut out = Vec::new();
        for t in template {
            if rng.random_bool(cfg.keyword_noise) {
                if rng.random_bool(0.5) {
                    out.push(lex.filler(rng, topic));
                }
                continue;
            }
            if rng.random_bool(deform) {
                out.push(variant(t, rng.random_range(0..cfg.variants)));
            } else {
                out.push(t.clone());
            }
        }
        for _ in 0..rng.random_range(2..=5) {
            let pos = rng.random_range(0..=out.len());
            out.insert(pos, lex.filler(rng, topic));
        }
        out
    };
    let template = |rng: &mut ChaCha8Rng, pools: &[(&Vec<String>, usize)]| -> Vec<String> {
        let mut t = Vec::new();
        for (pool, n) in pools {
            t.extend(pool.choose_multiple(rng, *n).cloned());
        }
        t.shuffle(rng);
        t
    };

    // single-account adverts: one template per spammer, bursts in time
    let mut left = n_single;
    for s in 0..spammers {
        let posts = left.min(cfg.spammer_posts);
        left -= posts;
        let tpl = template(&mut rng, &[(&lex.contact, 2), (&lex.sales, 3)]);
        let start = rng.random_range(0..span);
        let mut items: Vec<usize> = (0..cfg.items).collect();
        items.shuffle(&mut rng);
        for &item in items.iter().take(posts) {
            let tokens = advert(&mut rng, &tpl, item_topic[item], 0.0);
            drafts.push(Draft {
                user: s,
                item,
                tokens,
                time: (start + rng.random_range(0..span / 10 + 1)) % span,
                spam: true,
            });
        }
    }
    // Deformed adverts and coupon blasts come from disjoint halves of the
    // low-activity accounts, so one kind never vouches for the other.
    let (deform_pool, coupon_pool) = casual_ids.split_at(casual_ids.len().div_ceil(2));
    let coupon_pool = if coupon_pool.is_empty() { deform_pool } else { coupon_pool };
    // each campaign repeats a small fixed set of words from two topics
    let campaign = |rng: &mut ChaCha8Rng, pools: &[(&Vec<String>, usize)]| {
        let mut words = Vec::new();
        for _ in 0..2 {
            let t = rng.random_range(0..cfg.topics);
            words.extend(lex.topic[t].choose_multiple(rng, CAMPAIGN_WORDS / 2).cloned());
        }
        (template(rng, pools), words)
    };
    let deformed: Vec<(Vec<String>, Vec<String>)> = (0..cfg.campaigns.max(1))
        .map(|_| campaign(&mut rng, &[(&lex.contact, 2), (&lex.sales, 3)]))
        .collect();
    let coupons: Vec<(Vec<String>, Vec<String>)> = (0..cfg.campaigns.max(1))
        .map(|_| campaign(&mut rng, &[(&lex.coupon, 3), (&lex.sales, 1)]))
        .collect();
    for k in 0..n_deformed + n_coupon {
        let ((tpl, words), deform, pool) = if k < n_deformed {
            (&deformed[k % deformed.len()], cfg.deformation_rate, deform_pool)
        } else {
            (&coupons[k % coupons.len()], 0.0, coupon_pool)
        };
        let item = rng.random_range(0..cfg.items);
        // covert posts are spread evenly over both kinds
        let covert_here = (k + 1) * covert / (n_deformed + n_coupon) > k * covert / (n_deformed + n_coupon);
        let (user, tokens) = if covert_here {
            let len = rng.random_range(8..=12);
            let tokens = (0..len)
                .map(|_| {
                    let pool = if rng.random_bool(0.4) { &lex.common } else { words };
                    pool.choose(&mut rng).expect("non-empty").clone()
                })
                .collect();
            (regular_ids[rng.random_range(0..regular_ids.len())], tokens)
        } else {
            let mut tokens = advert(&mut rng, tpl, 0, deform);
            for t in tokens.iter_mut().filter(|t| t.starts_with('t')) {
                *t = words.choose(&mut rng).expect("non-empty").clone();
            }
            (pool[rng.random_range(0..pool.len())], tokens)
        };
        drafts.push(Draft {
            user,
            item,
            tokens,
            time: rng.random_range(0..span),
            spam: true,
        });
    }

    drafts.sort_by_key(|d| d.time);
    let records: Vec<CommentRecord> = drafts
        .into_iter()
        .enumerate()
        .map(|(k, d)| CommentRecord {
            comment_id: format!("c{k:06}"),
            user_id: user_name(d.user),
            item_id: format!("i{:05}", d.item),
            tokens: d.tokens,
            timestamp: d.time,
            label: if d.spam { Label::Spam } else { Label::Regular },
        })
        .collect();

    // weak features: spammer accounts are shifted slightly, items are noise
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let mut user_features = HashMap::new();
    for u in 0..cfg.users {
        let name = user_name(u);
        let shift = if u < spammers { cfg.feature_signal } else { 0.0 };
        let v: Vec<f64> = (0..cfg.feature_dim).map(|_| normal.sample(&mut rng) + shift).collect();
        user_features.insert(name, v);
    }
    let mut item_features = HashMap::new();
    for i in 0..cfg.items {
        let v: Vec<f64> = (0..cfg.feature_dim).map(|_| normal.sample(&mut rng)).collect();
        item_features.insert(format!("i{i:05}"), v);
    }
    // only nodes that actually appear
    let seen_users: std::collections::HashSet<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
    let seen_items: std::collections::HashSet<&str> = records.iter().map(|r| r.item_id.as_str()).collect();
    user_features.retain(|k, _| seen_users.contains(k.as_str()));
    item_features.retain(|k, _| seen_items.contains(k.as_str()));

    Ok(SynthCorpus {
        records,
        vocab,
        embeddings,
        user_features,
        item_features,
    })
}

/// File names written by [`write_corpus`].
pub const RECORDS_FILE: &str = "records.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const USER_FEATURES_FILE: &str = "user_features.jsonl";
pub const ITEM_FEATURES_FILE: &str = "item_features.jsonl";

/// Writes records, word vectors and both feature files into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &SynthCorpus) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(RECORDS_FILE))?);
    write_records(&mut f, &corpus.records)?;
    f.flush()?;
    write_embeddings(dir.join(EMBEDDINGS_FILE), &corpus.vocab, &corpus.embeddings)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(USER_FEATURES_FILE))?);
    write_node_features(&mut f, true, &corpus.user_features)?;
    f.flush()?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(ITEM_FEATURES_FILE))?);
    write_node_features(&mut f, false, &corpus.item_features)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BipartiteGraph, NodeRef};

    fn small() -> SynthConfig {
        SynthConfig {
            users: 60,
            items: 80,
            comments: 400,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_spam_fraction_gives_only_regular_labels() {
        let c = synth_corpus(&SynthConfig { spam_fraction: 0.0, ..small() }, 1).unwrap();
        assert_eq!(c.records.len(), 400);
        assert!(c.records.iter().all(|r| r.label == Label::Regular));
    }

    #[test]
    fn deterministic_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_corpus(a.path(), &synth_corpus(&small(), 7).unwrap()).unwrap();
        write_corpus(b.path(), &synth_corpus(&small(), 7).unwrap()).unwrap();
        for f in [RECORDS_FILE, EMBEDDINGS_FILE, USER_FEATURES_FILE, ITEM_FEATURES_FILE] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn single_spammer_posts_under_distinct_items() {
        let cfg = SynthConfig {
            comments: 200,
            spam_fraction: 0.1,
            mix: [1.0, 0.0, 0.0],
            spammer_posts: 20,
            ..small()
        };
        let c = synth_corpus(&cfg, 3).unwrap();
        let g = BipartiteGraph::build(c.records.clone()).unwrap();
        let u = g.user("u0000").unwrap();
        let edges = g.adjacency(NodeRef::User(u)).unwrap();
        assert_eq!(edges.len(), 20);
        assert!(edges.iter().all(|&e| g.record(e).label.is_spam()));
        let items: std::collections::HashSet<usize> = edges.iter().map(|&e| g.edge_item(e)).collect();
        assert_eq!(items.len(), 20);
    }

    #[test]
    fn covert_posts_carry_no_advert_words() {
        let cfg = SynthConfig {
            mix: [0.0, 1.0, 0.0],
            covert_rate: 1.0,
            campaigns: 1,
            ..small()
        };
        let c = synth_corpus(&cfg, 4).unwrap();
        let spam: Vec<&CommentRecord> = c.records.iter().filter(|r| r.label.is_spam()).collect();
        assert_eq!(spam.len(), 40);
        let casual = cfg.casual_users();
        let mut topic_words = std::collections::HashSet::new();
        for r in &spam {
            assert!(r.tokens.iter().all(|t| !t.contains('~') && !t.starts_with("contact") && !t.starts_with("sale")));
            // posted from a regular account
            assert!(r.user_id[1..].parse::<usize>().unwrap() >= casual, "{}", r.user_id);
            topic_words.extend(r.tokens.iter().filter(|t| t.starts_with('t')).cloned());
        }
        // one campaign keeps reusing the same few words
        assert!(topic_words.len() <= CAMPAIGN_WORDS, "{topic_words:?}");
    }

    #[test]
    fn infeasible_campaigns_rejected() {
        let cfg = SynthConfig {
            users: 10,
            comments: 1000,
            spam_fraction: 0.5,
            mix: [1.0, 0.0, 0.0],
            ..small()
        };
        assert!(matches!(synth_corpus(&cfg, 0), Err(GasError::Config(_))));
    }
}
