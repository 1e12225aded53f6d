//! Synthetic paired corpus with planted rewrite behaviour.
//!
//! Each pair gets a casual "human" answer and a formal "machine" answer.
//! Their mock rewrites are computed up front and every text, original or
//! rewrite, is given a log-perplexity in a [`TableScorer`]. Human rewrites
//! sit clearly below the original (mean MSD around 0.34). Machine rewrites
//! scatter tightly around it with a slight upward drift (mean MSD around
//! 0.009). A small share of human answers gets deviations of machine size,
//! still drifting downward, so the classes overlap.
//!
//! Running the normal pipeline with [`MockRewriter`](crate::rewriter::MockRewriter)
//! seeded with [`SynthStudy::rewrite_seed`] and the table as scorer
//! reproduces the planted values.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::PairedSample;
use crate::error::{Error, Result};
use crate::rewriter::mock_rewrite;
use crate::scorer::{TableEntry, TableScorer};
use crate::types::{text_digest, GenerationParams, Label, TextSample};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub pairs: usize,
    /// Rewrites planted per text.
    pub k: usize,
    pub seed: u64,
    /// Share of human answers given machine-like deviations.
    pub overlap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pairs: 400,
            k: 3,
            seed: 0,
            overlap: 0.04,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthStudy {
    pub pairs: Vec<PairedSample>,
    pub table: TableScorer,
    pub rewrite_seed: u64,
    pub k: usize,
}

impl SynthStudy {
    /// Generation parameters that make the mock rewriter hit the table.
    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            seed: Some(self.rewrite_seed),
            ..Default::default()
        }
    }

    pub fn samples(&self) -> Vec<TextSample> {
        crate::dataset::flatten_pairs(&self.pairs)
    }
}

const SHARED: &[&str] = &[
    "big",
    "small",
    "fast",
    "begin",
    "happy",
    "help",
    "use",
    "get",
    "make",
    "think",
    "often",
    "maybe",
    "very",
    "many",
    "important",
    "difficult",
    "easy",
    "problem",
    "idea",
    "way",
    "people",
    "need",
    "also",
    "good",
    "new",
    "house",
    "car",
    "keep",
    "look",
];

const CASUAL: &[&str] = &[
    "honestly", "i", "my", "yeah", "kinda", "stuff", "guess", "friend", "weekend", "tried", "lol", "pretty", "dunno",
    "mom", "boss", "last", "year", "we", "just", "totally",
];

const FORMAL: &[&str] = &[
    "furthermore",
    "overall",
    "typically",
    "generally",
    "factors",
    "approach",
    "consider",
    "various",
    "ensure",
    "essential",
    "significant",
    "process",
    "individuals",
    "benefits",
    "context",
    "outcome",
    "effective",
    "additionally",
    "aspects",
    "recommended",
];

const TOPICS: &[&str] = &[
    "gardening",
    "saving money",
    "learning piano",
    "sleeping well",
    "cooking rice",
    "fixing bikes",
    "writing essays",
    "running",
    "moving house",
    "training dogs",
    "painting walls",
    "studying maths",
];

fn sentence(rng: &mut ChaCha8Rng, style: &[&str]) -> String {
    let len = rng.random_range(8..13);
    let mut words: Vec<String> = (0..len)
        .map(|_| {
            let pool = if rng.random_bool(0.4) { SHARED } else { style };
            pool.choose(rng).expect("non-empty pool").to_string()
        })
        .collect();
    if let Some(first) = words.first_mut() {
        let mut c = first.chars();
        *first = c
            .next()
            .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
            .unwrap_or_default();
    }
    words.join(" ") + "."
}

fn answer(rng: &mut ChaCha8Rng, pair: usize, role: &str, style: &[&str]) -> String {
    let sentences = rng.random_range(3..6);
    let mut parts = vec![format!("Answer {role} {pair}.")];
    parts.extend((0..sentences).map(|_| sentence(rng, style)));
    parts.join(" ")
}

/// Centered, unit-population-variance offsets.
fn spread(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    if k < 2 {
        return vec![0.0; k];
    }
    loop {
        let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let mean = z.iter().sum::<f64>() / k as f64;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
        if sd > 1e-3 {
            return z.iter().map(|v| (v - mean) / sd).collect();
        }
    }
}

/// Rewrite log-perplexities `l0 + direction * (shift + spread * z_i)`.
fn planted(
    rng: &mut ChaCha8Rng,
    l0: f64,
    k: usize,
    shift: (f64, f64),
    spread_sd: (f64, f64),
    direction: f64,
) -> Vec<f64> {
    let m = rng.random_range(shift.0..shift.1);
    let sd = rng.random_range(spread_sd.0..spread_sd.1);
    spread(rng, k)
        .into_iter()
        .map(|z| l0 + direction * (m + sd * z))
        .collect()
}

const HUMAN_SHIFT: (f64, f64) = (0.46, 0.70);
const HUMAN_SPREAD: (f64, f64) = (0.05, 0.15);
const MACHINE_SHIFT: (f64, f64) = (0.01, 0.05);
const MACHINE_SPREAD: (f64, f64) = (0.08, 0.10);

/// Original plus its k mock rewrites, all distinct, or `None`.
fn with_rewrites(text: String, k: usize, seed: u64) -> Option<Vec<String>> {
    let mut texts = vec![text];
    for i in 1..=k {
        let r = mock_rewrite(&texts[0], i, seed);
        if texts.contains(&r) {
            return None;
        }
        texts.push(r);
    }
    Some(texts)
}

/// Builds the planted corpus and its scorer table.
pub fn synthesize(cfg: &SynthConfig) -> Result<SynthStudy> {
    if cfg.pairs == 0 || cfg.k == 0 {
        return Err(Error::InvalidConfig(
            "synthetic study needs pairs >= 1 and k >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.overlap) {
        return Err(Error::InvalidConfig(format!(
            "overlap must be in [0, 1], got {}",
            cfg.overlap
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rewrite_seed = cfg.seed;
    let mut table: HashMap<String, f64> = HashMap::new();
    let mut plant = |texts: &[String], values: &[f64]| -> bool {
        let digests: Vec<String> = texts.iter().map(|t| text_digest(t)).collect();
        if digests.iter().any(|d| table.contains_key(d)) {
            return false;
        }
        for (d, v) in digests.into_iter().zip(values) {
            table.insert(d, *v);
        }
        true
    };

    let mut pairs = Vec::with_capacity(cfg.pairs);
    for i in 0..cfg.pairs {
        let topic = TOPICS.choose(&mut rng).expect("topics");
        let question = format!("Question {}: what is the best way to get started with {topic}?", i + 1);

        let human = loop {
            let Some(texts) = with_rewrites(answer(&mut rng, i + 1, "h", CASUAL), cfg.k, rewrite_seed) else {
                continue;
            };
            let l0 = rng.random_range(2.6..3.8);
            let (shift, spread_sd) = if rng.random_bool(cfg.overlap) {
                (MACHINE_SHIFT, MACHINE_SPREAD)
            } else {
                (HUMAN_SHIFT, HUMAN_SPREAD)
            };
            let rw = planted(&mut rng, l0, cfg.k, shift, spread_sd, -1.0);
            let values: Vec<f64> = std::iter::once(l0).chain(rw).collect();
            if plant(&texts, &values) {
                break texts.into_iter().next().expect("original");
            }
        };
        let machine = loop {
            let Some(texts) = with_rewrites(answer(&mut rng, i + 1, "m", FORMAL), cfg.k, rewrite_seed) else {
                continue;
            };
            let l0 = rng.random_range(1.6..3.0);
            let rw = planted(&mut rng, l0, cfg.k, MACHINE_SHIFT, MACHINE_SPREAD, 1.0);
            let values: Vec<f64> = std::iter::once(l0).chain(rw).collect();
            if plant(&texts, &values) {
                break texts.into_iter().next().expect("original");
            }
        };

        let pair_id = format!("p{:04}", i + 1);
        pairs.push(PairedSample {
            question,
            human: TextSample::new(format!("{pair_id}-h"), human, Label::Human)
                .with_language("en")
                .with_source("synthetic"),
            machine: TextSample::new(format!("{pair_id}-m"), machine, Label::Machine)
                .with_language("en")
                .with_source("synthetic"),
            pair_id,
        });
    }

    let mut entries: Vec<TableEntry> = table
        .into_iter()
        .map(|(text_digest, log_ppl)| TableEntry { text_digest, log_ppl })
        .collect();
    entries.sort_by(|a, b| a.text_digest.cmp(&b.text_digest));
    Ok(SynthStudy {
        pairs,
        table: TableScorer::from_entries(entries)?,
        rewrite_seed,
        k: cfg.k,
    })
}
