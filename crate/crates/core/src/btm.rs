//! Biterm topic model: collapsed Gibbs pre-training and topic inference.
//!
//! The model generates unordered word pairs (biterms) from a corpus-level
//! topic mixture. Sampling state is the per-biterm topic assignment; the
//! conditional for one biterm is
//! `P(z=t | z_rest) ∝ (n_t + α) · (n_{wi|t} + β)(n_{wj|t} + β) / (Σ_w n_{w|t} + Vβ)²`
//! and the point estimates are
//! `φ[t][w] = (n_{w|t} + β) / (2·n_t + Vβ)`, `θ[t] = (n_t + α) / (|B| + Kα)`,
//! computed from counts averaged over post-burn-in sweeps.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextPairDoc, RESERVED};
use crate::error::{Error, Result};

/// An unordered pair of word ids, stored with `w_i <= w_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Biterm {
    lo: u32,
    hi: u32,
}

impl Biterm {
    pub fn new(a: u32, b: u32) -> Biterm {
        if a <= b {
            Biterm { lo: a, hi: b }
        } else {
            Biterm { lo: b, hi: a }
        }
    }

    pub fn w_i(&self) -> u32 {
        self.lo
    }

    pub fn w_j(&self) -> u32 {
        self.hi
    }
}

/// A multiset of biterms with counts. Iteration order is canonical
/// (ascending pair order), independent of how the biterms were produced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitermSet {
    counts: BTreeMap<Biterm, u32>,
    total: u32,
}

impl BitermSet {
    pub fn insert(&mut self, b: Biterm) {
        *self.counts.entry(b).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Biterm, u32)> + '_ {
        self.counts.iter().map(|(&b, &c)| (b, c))
    }

    /// Total biterm instances, multiplicity included.
    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }
}

/// All unordered pairs of distinct positions in `doc`. Pairs touching a
/// reserved id (PAD/BOS/EOS/UNK) are dropped. A doc with fewer than two
/// usable tokens yields an empty multiset.
pub fn extract_biterms(doc: &[u32]) -> BitermSet {
    let usable: Vec<u32> = doc
        .iter()
        .copied()
        .filter(|&id| id >= RESERVED as u32)
        .collect();
    let mut set = BitermSet::default();
    for i in 0..usable.len() {
        for j in (i + 1)..usable.len() {
            set.insert(Biterm::new(usable[i], usable[j]));
        }
    }
    set
}

/// Biterm corpus: per-document biterm multisets plus the flat instance list
/// (with document provenance) that drives the sampler.
#[derive(Debug, Clone)]
pub struct BtmCorpus {
    pub docs: Vec<BitermSet>,
    instances: Vec<(Biterm, u32)>, // (biterm, doc index), multiplicity expanded
    /// Documents dropped because they yielded no biterms.
    pub dropped_docs: usize,
}

impl BtmCorpus {
    pub fn from_docs(docs: &[ContextPairDoc]) -> BtmCorpus {
        Self::from_token_bags(docs.iter().map(|d| d.tokens.as_slice()))
    }

    pub fn from_token_bags<'a, I>(bags: I) -> BtmCorpus
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let mut corpus = BtmCorpus {
            docs: Vec::new(),
            instances: Vec::new(),
            dropped_docs: 0,
        };
        for bag in bags {
            let set = extract_biterms(bag);
            if set.is_empty() {
                corpus.dropped_docs += 1;
                continue;
            }
            let doc_idx = corpus.docs.len() as u32;
            for (b, c) in set.iter() {
                for _ in 0..c {
                    corpus.instances.push((b, doc_idx));
                }
            }
            corpus.docs.push(set);
        }
        corpus
    }

    /// Total biterm instances |B|.
    pub fn total_biterms(&self) -> usize {
        self.instances.len()
    }
}

/// Gibbs sampler settings.
#[derive(Debug, Clone)]
pub struct GibbsConfig {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    /// Counts are accumulated every `thin` post-burn-in sweeps.
    pub thin: usize,
    pub seed: u64,
}

impl GibbsConfig {
    /// Conventional defaults: α = 50/K, β = 0.01.
    pub fn new(topics: usize, sweeps: usize, burn_in: usize, seed: u64) -> GibbsConfig {
        GibbsConfig {
            topics,
            alpha: 50.0 / topics.max(1) as f64,
            beta: 0.01,
            sweeps,
            burn_in,
            thin: 5,
            seed,
        }
    }
}

/// Averaged Gibbs count tables, kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsCounts {
    /// K×V mean word-topic counts.
    pub word_topic: Vec<Vec<f64>>,
    /// Length-K mean biterm-topic counts.
    pub topic: Vec<f64>,
}

/// Trained topic model: `phi[t]` is P(w|t), `theta[t]` is P(t).
#[derive(Debug, Clone, PartialEq)]
pub struct BtmModel {
    pub k: usize,
    pub v: usize,
    pub alpha: f64,
    pub beta: f64,
    pub theta: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    /// Present after training, absent after loading from disk.
    pub counts: Option<GibbsCounts>,
}

impl BtmModel {
    /// Assemble a model from explicit parameters (tests, fine-tuned phi).
    pub fn from_parts(
        k: usize,
        v: usize,
        alpha: f64,
        beta: f64,
        theta: Vec<f64>,
        phi: Vec<Vec<f64>>,
    ) -> BtmModel {
        assert_eq!(theta.len(), k, "theta length must be K");
        assert_eq!(phi.len(), k, "phi must have K rows");
        for row in &phi {
            assert_eq!(row.len(), v, "phi rows must have V entries");
        }
        BtmModel {
            k,
            v,
            alpha,
            beta,
            theta,
            phi,
            counts: None,
        }
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = BtmModelFile {
            version: 1,
            kind: "btm".to_string(),
            k: self.k,
            v: self.v,
            alpha: self.alpha,
            beta: self.beta,
            theta: self.theta.clone(),
            phi: self.phi.clone(),
        };
        let mut out = File::create(path)?;
        serde_json::to_writer(&mut out, &file)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<BtmModel> {
        let file: BtmModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|_| Error::Format("not a BTM model file".to_string()))?;
        if file.kind != "btm" {
            return Err(Error::Format("not a BTM model file".to_string()));
        }
        if file.version != 1 {
            return Err(Error::Format(format!(
                "unsupported BTM model version {}",
                file.version
            )));
        }
        if file.theta.len() != file.k || file.phi.len() != file.k {
            return Err(Error::Format("BTM model file has inconsistent K".to_string()));
        }
        if file.phi.iter().any(|row| row.len() != file.v) {
            return Err(Error::Format("BTM model file has inconsistent V".to_string()));
        }
        Ok(BtmModel {
            k: file.k,
            v: file.v,
            alpha: file.alpha,
            beta: file.beta,
            theta: file.theta,
            phi: file.phi,
            counts: None,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BtmModelFile {
    version: u32,
    kind: String,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "V")]
    v: usize,
    alpha: f64,
    beta: f64,
    theta: Vec<f64>,
    phi: Vec<Vec<f64>>,
}

/// Per-sweep progress passed to the training callback.
#[derive(Debug, Clone, Copy)]
pub struct SweepStats {
    pub sweep: usize,
    /// Mean per-biterm log likelihood under the instantaneous estimates.
    pub log_likelihood: f64,
}

/// Train by collapsed Gibbs sampling. Deterministic given the seed.
pub fn gibbs_train(corpus: &BtmCorpus, cfg: &GibbsConfig) -> Result<BtmModel> {
    gibbs_train_with_progress(corpus, cfg, |_| {})
}

pub fn gibbs_train_with_progress(
    corpus: &BtmCorpus,
    cfg: &GibbsConfig,
    mut progress: impl FnMut(SweepStats),
) -> Result<BtmModel> {
    if cfg.topics == 0 {
        return Err(Error::InvalidConfig("topic count must be at least 1".into()));
    }
    if cfg.sweeps <= cfg.burn_in {
        return Err(Error::InvalidConfig(
            "sweeps must exceed burn_in".into(),
        ));
    }
    if cfg.thin == 0 {
        return Err(Error::InvalidConfig("thin must be at least 1".into()));
    }
    let b_total = corpus.total_biterms();
    if b_total == 0 {
        return Err(Error::EmptyCorpus);
    }
    if cfg.topics > b_total {
        eprintln!(
            "warning: topic count {} exceeds biterm count {}",
            cfg.topics, b_total
        );
    }

    let k = cfg.topics;
    let v = corpus
        .instances
        .iter()
        .map(|(b, _)| b.w_j() + 1)
        .max()
        .unwrap() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut n_t = vec![0u64; k];
    let mut n_wt = vec![vec![0u64; v]; k];
    let mut z: Vec<usize> = Vec::with_capacity(b_total);
    for (b, _) in &corpus.instances {
        let t = rng.gen_range(0..k);
        z.push(t);
        n_t[t] += 1;
        n_wt[t][b.w_i() as usize] += 1;
        n_wt[t][b.w_j() as usize] += 1;
    }

    let vbeta = v as f64 * cfg.beta;
    let mut weights = vec![0.0f64; k];
    let mut acc_t = vec![0.0f64; k];
    let mut acc_wt = vec![vec![0.0f64; v]; k];
    let mut samples = 0usize;

    for sweep in 0..cfg.sweeps {
        for (idx, (b, _)) in corpus.instances.iter().enumerate() {
            let wi = b.w_i() as usize;
            let wj = b.w_j() as usize;
            let old = z[idx];
            n_t[old] -= 1;
            n_wt[old][wi] -= 1;
            n_wt[old][wj] -= 1;

            let mut sum = 0.0;
            for (t, w) in weights.iter_mut().enumerate() {
                let denom = 2.0 * n_t[t] as f64 + vbeta;
                *w = (n_t[t] as f64 + cfg.alpha)
                    * (n_wt[t][wi] as f64 + cfg.beta)
                    * (n_wt[t][wj] as f64 + cfg.beta)
                    / (denom * denom);
                sum += *w;
            }
            let mut dart = rng.gen::<f64>() * sum;
            let mut new = k - 1;
            for (t, &w) in weights.iter().enumerate() {
                dart -= w;
                if dart <= 0.0 {
                    new = t;
                    break;
                }
            }

            z[idx] = new;
            n_t[new] += 1;
            n_wt[new][wi] += 1;
            n_wt[new][wj] += 1;
        }

        if sweep >= cfg.burn_in && (sweep - cfg.burn_in) % cfg.thin == 0 {
            for t in 0..k {
                acc_t[t] += n_t[t] as f64;
                for w in 0..v {
                    acc_wt[t][w] += n_wt[t][w] as f64;
                }
            }
            samples += 1;
        }

        progress(SweepStats {
            sweep,
            log_likelihood: corpus_log_likelihood(corpus, &n_t, &n_wt, cfg, vbeta),
        });
    }

    debug_assert!(samples > 0);
    let inv = 1.0 / samples as f64;
    let mean_t: Vec<f64> = acc_t.iter().map(|&x| x * inv).collect();
    let mean_wt: Vec<Vec<f64>> = acc_wt
        .iter()
        .map(|row| row.iter().map(|&x| x * inv).collect())
        .collect();

    let mut phi = vec![vec![0.0f64; v]; k];
    let mut theta = vec![0.0f64; k];
    for t in 0..k {
        let denom = 2.0 * mean_t[t] + vbeta;
        for w in 0..v {
            phi[t][w] = (mean_wt[t][w] + cfg.beta) / denom;
        }
        theta[t] = (mean_t[t] + cfg.alpha) / (b_total as f64 + k as f64 * cfg.alpha);
    }

    Ok(BtmModel {
        k,
        v,
        alpha: cfg.alpha,
        beta: cfg.beta,
        theta,
        phi,
        counts: Some(GibbsCounts {
            word_topic: mean_wt,
            topic: mean_t,
        }),
    })
}

fn corpus_log_likelihood(
    corpus: &BtmCorpus,
    n_t: &[u64],
    n_wt: &[Vec<u64>],
    cfg: &GibbsConfig,
    vbeta: f64,
) -> f64 {
    let b_total = corpus.total_biterms() as f64;
    let k = cfg.topics as f64;
    let mut ll = 0.0;
    for (b, _) in &corpus.instances {
        let wi = b.w_i() as usize;
        let wj = b.w_j() as usize;
        let mut p = 0.0;
        for t in 0..cfg.topics {
            let denom = 2.0 * n_t[t] as f64 + vbeta;
            let pt = (n_t[t] as f64 + cfg.alpha) / (b_total + k * cfg.alpha);
            p += pt * (n_wt[t][wi] as f64 + cfg.beta) / denom
                * ((n_wt[t][wj] as f64 + cfg.beta) / denom);
        }
        ll += p.ln();
    }
    ll / b_total
}

/// A normalized distribution over topics.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicPosterior {
    dist: Vec<f64>,
}

impl TopicPosterior {
    /// Normalize nonnegative weights into a posterior. Panics on a zero or
    /// non-finite total (precluded by smoothing for model-derived weights).
    pub fn from_weights(weights: Vec<f64>) -> TopicPosterior {
        let sum: f64 = weights.iter().sum();
        assert!(
            sum.is_finite() && sum > 0.0,
            "topic posterior weights must have a positive finite sum"
        );
        TopicPosterior {
            dist: weights.iter().map(|w| w / sum).collect(),
        }
    }

    pub fn dist(&self) -> &[f64] {
        &self.dist
    }

    /// Argmax topic, ties broken by the lowest id.
    pub fn argmax(&self) -> usize {
        argmax_low(&self.dist)
    }
}

fn argmax_low(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `P(t|b) = P(t)P(w_i|t)P(w_j|t) / Σ_t P(t)P(w_i|t)P(w_j|t)`.
pub fn topic_given_biterm(model: &BtmModel, b: Biterm) -> TopicPosterior {
    let wi = b.w_i() as usize;
    let wj = b.w_j() as usize;
    assert!(wi < model.v && wj < model.v, "biterm word id out of range");
    let weights: Vec<f64> = (0..model.k)
        .map(|t| model.theta[t] * model.phi[t][wi] * model.phi[t][wj])
        .collect();
    TopicPosterior::from_weights(weights)
}

/// `P(t|d) = Σ_b P(t|b) P(b|d)` with `P(b|d) = n_d(b) / Σ_b n_d(b)`.
pub fn infer_doc_topics(model: &BtmModel, doc: &[u32]) -> Result<TopicPosterior> {
    let biterms = extract_biterms(doc);
    infer_from_biterms(model, &biterms)
}

/// Eq-1 mixture over an already-extracted biterm multiset.
pub fn infer_from_biterms(model: &BtmModel, biterms: &BitermSet) -> Result<TopicPosterior> {
    if biterms.is_empty() {
        return Err(Error::DegenerateDocument);
    }
    let total = biterms.total() as f64;
    let mut acc = vec![0.0f64; model.k];
    for (b, count) in biterms.iter() {
        let post = topic_given_biterm(model, b);
        let w = count as f64 / total;
        for (a, p) in acc.iter_mut().zip(post.dist()) {
            *a += w * p;
        }
    }
    Ok(TopicPosterior { dist: acc })
}

/// Hard topic assignment: argmax of the Eq-1 posterior; sentences with no
/// biterms fall back to the argmax of the prior θ.
pub fn assign_topic(model: &BtmModel, sentence: &[u32]) -> usize {
    match infer_doc_topics(model, sentence) {
        Ok(post) => post.argmax(),
        Err(_) => argmax_low(&model.theta),
    }
}

/// The `k` highest-probability words of topic `t`, descending, ties by the
/// lowest word id. Returns at most V entries.
pub fn top_words(model: &BtmModel, t: usize, k: usize) -> Vec<(u32, f64)> {
    assert!(t < model.k, "topic id out of range");
    let mut words: Vec<(u32, f64)> = model.phi[t]
        .iter()
        .enumerate()
        .map(|(w, &p)| (w as u32, p))
        .collect();
    words.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    words.truncate(k);
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UNK;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn extract_all_position_pairs() {
        let set = extract_biterms(&[5, 6, 7]);
        let got: Vec<(Biterm, u32)> = set.iter().collect();
        assert_eq!(
            got,
            vec![
                (Biterm::new(5, 6), 1),
                (Biterm::new(5, 7), 1),
                (Biterm::new(6, 7), 1)
            ]
        );
    }

    #[test]
    fn extract_repeated_word_self_pair() {
        let set = extract_biterms(&[5, 5]);
        let got: Vec<(Biterm, u32)> = set.iter().collect();
        assert_eq!(got, vec![(Biterm::new(5, 5), 1)]);
    }

    #[test]
    fn extract_drops_reserved_ids() {
        assert!(extract_biterms(&[UNK, 5]).is_empty());
        assert!(extract_biterms(&[5]).is_empty());
    }

    #[test]
    fn biterm_is_unordered() {
        assert_eq!(Biterm::new(7, 3), Biterm::new(3, 7));
        let b = Biterm::new(9, 4);
        assert!(b.w_i() <= b.w_j());
    }

    fn tiny_corpus() -> BtmCorpus {
        // docs over word ids {4..8}
        let bags: Vec<Vec<u32>> = vec![
            vec![4, 5, 6],
            vec![4, 4, 5],
            vec![6, 7, 8],
            vec![7, 8, 8],
        ];
        BtmCorpus::from_token_bags(bags.iter().map(|b| b.as_slice()))
    }

    #[test]
    fn single_topic_phi_is_smoothed_word_frequency() {
        let corpus = tiny_corpus();
        let cfg = GibbsConfig::new(1, 10, 5, 42);
        let model = gibbs_train(&corpus, &cfg).unwrap();
        assert_eq!(model.theta, vec![1.0]);

        // With K=1 every biterm is in topic 0: counts are fixed, so phi is
        // the smoothed empirical word frequency over biterm slots.
        let v = model.v;
        let mut slot_counts = vec![0.0f64; v];
        let mut total = 0.0;
        for doc in &corpus.docs {
            for (b, c) in doc.iter() {
                slot_counts[b.w_i() as usize] += c as f64;
                slot_counts[b.w_j() as usize] += c as f64;
                total += c as f64;
            }
        }
        for w in 0..v {
            let expected = (slot_counts[w] + cfg.beta) / (2.0 * total + v as f64 * cfg.beta);
            assert!(close(model.phi[0][w], expected, 1e-12), "word {w}");
        }
    }

    #[test]
    fn gibbs_is_seed_deterministic() {
        let corpus = tiny_corpus();
        let cfg = GibbsConfig::new(2, 20, 10, 7);
        let a = gibbs_train(&corpus, &cfg).unwrap();
        let b = gibbs_train(&corpus, &cfg).unwrap();
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn gibbs_empty_corpus_errors() {
        let corpus = BtmCorpus::from_token_bags(std::iter::empty());
        let err = gibbs_train(&corpus, &GibbsConfig::new(2, 10, 5, 1)).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn gibbs_count_identities() {
        let corpus = tiny_corpus();
        let model = gibbs_train(&corpus, &GibbsConfig::new(3, 30, 10, 11)).unwrap();
        let counts = model.counts.as_ref().unwrap();
        let total: f64 = counts.topic.iter().sum();
        assert!(close(total, corpus.total_biterms() as f64, 1e-9));
        for t in 0..model.k {
            let word_sum: f64 = counts.word_topic[t].iter().sum();
            assert!(close(word_sum, 2.0 * counts.topic[t], 1e-9), "topic {t}");
        }
    }

    #[test]
    fn posterior_identical_rows_returns_prior() {
        let phi = vec![vec![0.25; 4]; 2];
        let model = BtmModel::from_parts(2, 4, 1.0, 0.01, vec![0.7, 0.3], phi);
        let post = topic_given_biterm(&model, Biterm::new(1, 2));
        assert!(close(post.dist()[0], 0.7, 1e-12));
        assert!(close(post.dist()[1], 0.3, 1e-12));
    }

    #[test]
    fn posterior_direct_arithmetic() {
        // theta uniform; phi_0 gives both words 0.2, phi_1 gives both 0.1
        let phi = vec![vec![0.2, 0.2, 0.6], vec![0.1, 0.1, 0.8]];
        let model = BtmModel::from_parts(2, 3, 1.0, 0.01, vec![0.5, 0.5], phi);
        let post = topic_given_biterm(&model, Biterm::new(0, 1));
        assert!(close(post.dist()[0], 0.8, 1e-12));
        assert!(close(post.dist()[1], 0.2, 1e-12));
    }

    fn random_model(k: usize, v: usize, seed: u64) -> BtmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.05).collect();
        let s: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|x| *x /= s);
        let phi: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let mut row: Vec<f64> = (0..v).map(|_| rng.gen::<f64>() + 0.01).collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
                row
            })
            .collect();
        BtmModel::from_parts(k, v, 1.0, 0.01, theta, phi)
    }

    #[test]
    fn posterior_matches_bayes_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..50 {
            let k = rng.gen_range(1..6);
            let v = rng.gen_range(5..12);
            let model = random_model(k, v, 1000 + trial);
            let b = Biterm::new(
                rng.gen_range(0..v as u32),
                rng.gen_range(0..v as u32),
            );
            let post = topic_given_biterm(&model, b);
            // direct formula evaluation
            let mut denom = 0.0;
            for t in 0..k {
                denom += model.theta[t]
                    * model.phi[t][b.w_i() as usize]
                    * model.phi[t][b.w_j() as usize];
            }
            for t in 0..k {
                let direct = model.theta[t]
                    * model.phi[t][b.w_i() as usize]
                    * model.phi[t][b.w_j() as usize]
                    / denom;
                assert!(close(post.dist()[t], direct, 1e-12));
            }
        }
    }

    #[test]
    fn doc_inference_single_biterm_equals_biterm_posterior() {
        let model = random_model(3, 8, 5);
        let doc = vec![4, 6];
        let post = infer_doc_topics(&model, &doc).unwrap();
        let direct = topic_given_biterm(&model, Biterm::new(4, 6));
        for t in 0..3 {
            assert!(close(post.dist()[t], direct.dist()[t], 1e-12));
        }
    }

    #[test]
    fn doc_inference_symmetric_mixture_is_even() {
        // Construction symmetric under (swap topics, swap word halves):
        // the posterior of [4,5,6,7] must be exactly even.
        let phi = vec![
            vec![0.0, 0.0, 0.0, 0.0, 0.45, 0.45, 0.05, 0.05],
            vec![0.0, 0.0, 0.0, 0.0, 0.05, 0.05, 0.45, 0.45],
        ];
        let model = BtmModel::from_parts(2, 8, 1.0, 0.01, vec![0.5, 0.5], phi);
        let post = infer_doc_topics(&model, &[4, 5, 6, 7]).unwrap();
        assert!(close(post.dist()[0], 0.5, 1e-12));
        assert!(close(post.dist()[1], 0.5, 1e-12));
    }

    #[test]
    fn doc_inference_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for trial in 0..50 {
            let k = rng.gen_range(1..5);
            let v = rng.gen_range(6..14);
            let model = random_model(k, v, 2000 + trial);
            let len = rng.gen_range(2..7);
            let doc: Vec<u32> = (0..len)
                .map(|_| rng.gen_range(4..v as u32))
                .collect();
            let post = match infer_doc_topics(&model, &doc) {
                Ok(p) => p,
                Err(_) => continue,
            };

            // independent double loop over biterms and topics
            let set = extract_biterms(&doc);
            let total = set.total() as f64;
            let mut expected = vec![0.0f64; k];
            for (b, c) in set.iter() {
                let mut denom = 0.0;
                for t in 0..k {
                    denom += model.theta[t]
                        * model.phi[t][b.w_i() as usize]
                        * model.phi[t][b.w_j() as usize];
                }
                for (t, e) in expected.iter_mut().enumerate() {
                    let ptb = model.theta[t]
                        * model.phi[t][b.w_i() as usize]
                        * model.phi[t][b.w_j() as usize]
                        / denom;
                    *e += ptb * c as f64 / total;
                }
            }
            for t in 0..k {
                assert!(close(post.dist()[t], expected[t], 1e-12));
            }
        }
    }

    #[test]
    fn doc_inference_degenerate_errors() {
        let model = random_model(2, 8, 3);
        let err = infer_doc_topics(&model, &[5]).unwrap_err();
        assert!(matches!(err, Error::DegenerateDocument));
    }

    #[test]
    fn assign_topic_prefers_matching_half() {
        let phi = vec![
            vec![0.0, 0.0, 0.0, 0.0, 0.18, 0.18, 0.18, 0.18, 0.18, 0.02, 0.02, 0.02, 0.02, 0.02],
            vec![0.0, 0.0, 0.0, 0.0, 0.02, 0.02, 0.02, 0.02, 0.02, 0.18, 0.18, 0.18, 0.18, 0.18],
        ];
        let model = BtmModel::from_parts(2, 14, 1.0, 0.01, vec![0.5, 0.5], phi);
        assert_eq!(assign_topic(&model, &[5, 6, 7]), 0);
        assert_eq!(assign_topic(&model, &[9, 10, 11]), 1);
    }

    #[test]
    fn assign_topic_single_topic_is_zero() {
        let model = BtmModel::from_parts(1, 6, 1.0, 0.01, vec![1.0], vec![vec![1.0 / 6.0; 6]]);
        assert_eq!(assign_topic(&model, &[4, 5]), 0);
    }

    #[test]
    fn assign_topic_degenerate_falls_back_to_prior() {
        let phi = vec![vec![0.125; 8]; 2];
        let model = BtmModel::from_parts(2, 8, 1.0, 0.01, vec![0.2, 0.8], phi);
        // single token: no biterms, so argmax of theta
        assert_eq!(assign_topic(&model, &[5]), 1);
    }

    #[test]
    fn top_words_order_and_bounds() {
        let phi = vec![vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.3, 0.1, 0.1]];
        let model = BtmModel::from_parts(1, 8, 1.0, 0.01, vec![1.0], phi);
        let top = top_words(&model, 0, 3);
        assert_eq!(top[0].0, 4);
        assert_eq!(top[1].0, 5);
        // tie between ids 6 and 7 at 0.1 -> lowest id wins
        assert_eq!(top[2].0, 6);

        assert!(top_words(&model, 0, 0).is_empty());
        assert_eq!(top_words(&model, 0, 100).len(), 8);
    }

    #[test]
    fn model_roundtrip_and_corruption() {
        let model = random_model(4, 9, 77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = BtmModel::load(&path).unwrap();
        assert_eq!(loaded.k, model.k);
        assert_eq!(loaded.v, model.v);
        assert_eq!(loaded.alpha, model.alpha);
        assert_eq!(loaded.beta, model.beta);
        assert_eq!(loaded.theta, model.theta);
        assert_eq!(loaded.phi, model.phi);

        std::fs::write(&path, br#"{"version":1,"kind":"other"}"#).unwrap();
        let err = BtmModel::load(&path).unwrap_err();
        assert!(err.to_string().contains("not a BTM model file"));

        std::fs::write(&path, b"garbage").unwrap();
        let err = BtmModel::load(&path).unwrap_err();
        assert!(err.to_string().contains("not a BTM model file"));
    }

    #[test]
    fn model_preserves_k_and_shape() {
        let model = random_model(8, 12, 13);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = BtmModel::load(&path).unwrap();
        assert_eq!(loaded.k, 8);
        assert_eq!(loaded.phi.len(), 8);
        assert!(loaded.phi.iter().all(|r| r.len() == 12));
    }

    proptest! {
        #[test]
        fn posterior_sums_to_one(seed in 0u64..500, wi in 0u32..10, wj in 0u32..10) {
            let model = random_model(4, 10, seed);
            let post = topic_given_biterm(&model, Biterm::new(wi, wj));
            let sum: f64 = post.dist().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(post.dist().iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn doc_inference_order_invariant(seed in 0u64..200) {
            let model = random_model(3, 10, seed);
            let doc = vec![4u32, 5, 6, 7, 5];
            let mut shuffled = doc.clone();
            shuffled.reverse();
            let a = infer_doc_topics(&model, &doc).unwrap();
            let b = infer_doc_topics(&model, &shuffled).unwrap();
            prop_assert_eq!(a.dist(), b.dist());
        }
    }
}
