//! Deterministic offline providers.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{GenerationProvider, RewriteProvider};
use crate::error::ProviderError;
use crate::types::GenerationParams;

const SYNONYMS: &[(&str, &str)] = &[
    ("big", "large"),
    ("small", "little"),
    ("fast", "quick"),
    ("begin", "start"),
    ("began", "started"),
    ("end", "finish"),
    ("happy", "glad"),
    ("sad", "unhappy"),
    ("help", "assist"),
    ("show", "demonstrate"),
    ("use", "utilize"),
    ("buy", "purchase"),
    ("get", "obtain"),
    ("make", "create"),
    ("think", "believe"),
    ("often", "frequently"),
    ("maybe", "perhaps"),
    ("very", "really"),
    ("many", "numerous"),
    ("important", "crucial"),
    ("difficult", "hard"),
    ("easy", "simple"),
    ("answer", "response"),
    ("problem", "issue"),
    ("idea", "notion"),
    ("way", "method"),
    ("people", "individuals"),
    ("need", "require"),
    ("about", "regarding"),
    ("also", "additionally"),
    ("but", "however"),
    ("good", "fine"),
    ("bad", "poor"),
    ("old", "aged"),
    ("new", "novel"),
    ("house", "home"),
    ("car", "vehicle"),
    ("walk", "stroll"),
    ("ran", "sprinted"),
    ("said", "stated"),
    ("look", "appear"),
    ("keep", "retain"),
];

fn synonym(word: &str) -> Option<&'static str> {
    SYNONYMS.iter().find_map(|&(a, b)| {
        if a == word {
            Some(b)
        } else if b == word {
            Some(a)
        } else {
            None
        }
    })
}

fn mix_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

/// Splits at `.`, `!` or `?` followed by whitespace or the end of text.
fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        let boundary = matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace());
        if boundary {
            let s = current.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            current.clear();
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

/// Word, its lowercase core, and the surrounding punctuation.
fn split_word(word: &str) -> (&str, &str, &str) {
    let start = word.find(|c: char| c.is_alphanumeric()).unwrap_or(word.len());
    let end = word
        .rfind(|c: char| c.is_alphanumeric())
        .map(|i| i + word[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(start);
    (&word[..start], &word[start..end.max(start)], &word[end.max(start)..])
}

fn substitute(word: &str) -> Option<String> {
    let (pre, core, post) = split_word(word);
    let lower = core.to_lowercase();
    let replacement = synonym(&lower)?;
    let capitalized = core.chars().next().is_some_and(char::is_uppercase);
    let mut rep = replacement.to_string();
    if capitalized {
        let mut cs = rep.chars();
        rep = cs
            .next()
            .map(|f| f.to_uppercase().collect::<String>() + cs.as_str())
            .unwrap_or_default();
    }
    Some(format!("{pre}{rep}{post}"))
}

/// Deterministic stand-in for an LLM rewrite.
///
/// Driven by `(text, index, seed)`: each synonym-table word is swapped with
/// probability 1/2 and multi-sentence texts have their sentences shuffled.
/// Texts with fewer than two perturbable units (swappable words plus
/// sentences, when there are at least two) come back unchanged. Otherwise
/// the result always differs from the input.
pub fn mock_rewrite(text: &str, index: usize, seed: u64) -> String {
    let mut sents: Vec<Vec<String>> = sentences(text)
        .iter()
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .collect();
    let swappable: Vec<(usize, usize)> = sents
        .iter()
        .enumerate()
        .flat_map(|(si, ws)| {
            ws.iter()
                .enumerate()
                .filter(|(_, w)| substitute(w).is_some())
                .map(move |(wi, _)| (si, wi))
        })
        .collect();
    let shuffle_units = if sents.len() >= 2 { sents.len() } else { 0 };
    if swappable.len() + shuffle_units < 2 {
        return text.to_string();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
        text.as_bytes(),
        &(index as u64).to_le_bytes(),
        &seed.to_le_bytes(),
    ]));
    for &(si, wi) in &swappable {
        if rng.random_bool(0.5) {
            sents[si][wi] = substitute(&sents[si][wi]).expect("swappable");
        }
    }
    if shuffle_units > 0 {
        sents.shuffle(&mut rng);
    }
    let join = |sents: &[Vec<String>]| sents.iter().map(|ws| ws.join(" ")).collect::<Vec<_>>().join(" ");
    let mut out = join(&sents);
    if out == text {
        if let Some(&(si, wi)) = swappable.get(rng.random_range(0..swappable.len().max(1))) {
            sents[si][wi] = substitute(&sents[si][wi]).expect("swappable");
        } else {
            sents.rotate_left(1);
        }
        out = join(&sents);
    }
    out
}

const ANSWER_OPENERS: &[&str] = &[
    "There are several factors to consider here.",
    "This is a common question with a fairly clear answer.",
    "It depends on the context, but the general idea is simple.",
    "In short, the answer involves a few key points.",
];

const ANSWER_BODIES: &[&str] = &[
    "First, it is important to understand the basic principles involved.",
    "Many people find that a step by step approach works best.",
    "The main reason is that the underlying process follows predictable rules.",
    "Experts generally agree that consistency matters more than speed.",
    "It is also helpful to consider how the situation might change over time.",
    "Different sources may describe this in slightly different ways.",
];

const ANSWER_CLOSERS: &[&str] = &[
    "Overall, keeping these points in mind should make things clearer.",
    "I hope this helps clarify the question.",
    "In conclusion, a careful and balanced view is usually the best approach.",
];

/// Deterministic stand-in for answering `prompt`.
pub fn mock_generate(prompt: &str, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[b"generate", prompt.as_bytes(), &seed.to_le_bytes()]));
    let topic: String = prompt
        .trim()
        .trim_end_matches(['?', '.', '!'])
        .split_whitespace()
        .take(12)
        .collect::<Vec<_>>()
        .join(" ");
    let mut parts = vec![ANSWER_OPENERS[rng.random_range(0..ANSWER_OPENERS.len())].to_string()];
    parts.push(format!(
        "Regarding \"{topic}\", the short version is that it can be explained clearly."
    ));
    let mut bodies: Vec<&str> = ANSWER_BODIES.to_vec();
    bodies.shuffle(&mut rng);
    parts.extend(bodies.iter().take(2).map(|s| s.to_string()));
    parts.push(ANSWER_CLOSERS[rng.random_range(0..ANSWER_CLOSERS.len())].to_string());
    parts.join(" ")
}

/// Offline rewriter/generator built on [`mock_rewrite`] and [`mock_generate`].
/// Counts every call.
#[derive(Debug, Default)]
pub struct MockRewriter {
    calls: AtomicU64,
}

impl MockRewriter {
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl RewriteProvider for MockRewriter {
    fn provider_id(&self) -> &str {
        "mock"
    }

    fn model_id(&self) -> &str {
        "perturb-v1"
    }

    fn rewrite(
        &self,
        text: &str,
        _prompt: &str,
        params: &GenerationParams,
        index: usize,
    ) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(mock_rewrite(text, index, params.seed.unwrap_or(0)))
    }
}

impl GenerationProvider for MockRewriter {
    fn provider_id(&self) -> &str {
        "mock"
    }

    fn model_id(&self) -> &str {
        "answer-v1"
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(mock_generate(prompt, params.seed.unwrap_or(0)))
    }
}

/// Returns the original text as every rewrite.
#[derive(Debug, Default)]
pub struct IdentityRewriter {
    calls: AtomicU64,
}

impl IdentityRewriter {
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl RewriteProvider for IdentityRewriter {
    fn provider_id(&self) -> &str {
        "identity"
    }

    fn model_id(&self) -> &str {
        "v1"
    }

    fn rewrite(&self, text: &str, _: &str, _: &GenerationParams, _: usize) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(text.to_string())
    }
}
