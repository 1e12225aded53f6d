//! Corpus files, paired question/answer sets and calibration splits.
//!
//! Corpora are JSON lines with `id` and `text` required and `label`, `lang`
//! and `source` optional. Paired files add `pair_id`, `question` and a
//! `role` of `human` or `machine`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{CacheKey, CacheKind};
use crate::context::RunContext;
use crate::error::{Error, Result};
use crate::rewriter::{fetch_text, GenerationProvider};
use crate::types::{text_digest, GenerationParams, Label, TextSample};

fn parse_lines<T, R: Read>(reader: R, mut each: impl FnMut(usize, T) -> Result<()>) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
{
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        each(i + 1, record)?;
    }
    Ok(())
}

fn check_sample(line: usize, sample: &TextSample) -> Result<()> {
    let message = if sample.id.trim().is_empty() {
        "empty id"
    } else if sample.content.trim().is_empty() {
        "empty text"
    } else {
        return Ok(());
    };
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

/// Reads a JSON-lines corpus. Blank lines are skipped.
pub fn read_corpus(reader: impl Read) -> Result<Vec<TextSample>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    parse_lines(reader, |line, sample: TextSample| {
        check_sample(line, &sample)?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId(sample.id));
        }
        out.push(sample);
        Ok(())
    })?;
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<TextSample>> {
    read_corpus(fs::File::open(path)?)
}

pub fn corpus_to_jsonl(samples: &[TextSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_corpus(path: impl AsRef<Path>, samples: &[TextSample]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(corpus_to_jsonl(samples)?.as_bytes())?;
    Ok(())
}

/// A human and a machine answer to the same question.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub pair_id: String,
    pub question: String,
    pub human: TextSample,
    pub machine: TextSample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairedRecord {
    #[serde(flatten)]
    sample: TextSample,
    pair_id: String,
    #[serde(default)]
    question: String,
    role: Label,
}

/// Reads a paired corpus; every pair id needs exactly one human and one
/// machine row. Labels are taken from `role`.
pub fn read_paired(reader: impl Read) -> Result<Vec<PairedSample>> {
    let mut seen = HashSet::new();
    let mut order = Vec::new();
    let mut groups: HashMap<String, (String, Option<TextSample>, Option<TextSample>)> = HashMap::new();
    parse_lines(reader, |line, rec: PairedRecord| {
        let PairedRecord {
            mut sample,
            pair_id,
            question,
            role,
        } = rec;
        check_sample(line, &sample)?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId(sample.id));
        }
        if sample.label.is_known() && sample.label != role {
            return Err(Error::Parse {
                line,
                message: format!("label {} contradicts role {}", sample.label.as_str(), role.as_str()),
            });
        }
        sample.label = role;
        let group = groups.entry(pair_id.clone()).or_insert_with(|| {
            order.push(pair_id.clone());
            (question.clone(), None, None)
        });
        if group.0 != question {
            return Err(Error::Parse {
                line,
                message: format!("pair {pair_id} has two different questions"),
            });
        }
        let slot = match role {
            Label::Human => &mut group.1,
            Label::Machine => &mut group.2,
            Label::Unknown => {
                return Err(Error::Parse {
                    line,
                    message: "role must be human or machine".into(),
                })
            }
        };
        if slot.is_some() {
            return Err(Error::Parse {
                line,
                message: format!("pair {pair_id} has two {} answers", role.as_str()),
            });
        }
        *slot = Some(sample);
        Ok(())
    })?;
    order
        .into_iter()
        .map(|pair_id| {
            let (question, human, machine) = groups.remove(&pair_id).expect("grouped");
            match (human, machine) {
                (Some(human), Some(machine)) => Ok(PairedSample {
                    pair_id,
                    question,
                    human,
                    machine,
                }),
                _ => Err(Error::Parse {
                    line: 0,
                    message: format!("pair {pair_id} lacks a human or a machine answer"),
                }),
            }
        })
        .collect()
}

pub fn load_paired(path: impl AsRef<Path>) -> Result<Vec<PairedSample>> {
    read_paired(fs::File::open(path)?)
}

pub fn paired_to_jsonl(pairs: &[PairedSample]) -> Result<String> {
    let mut out = String::new();
    for p in pairs {
        for (sample, role) in [(&p.human, Label::Human), (&p.machine, Label::Machine)] {
            let rec = PairedRecord {
                sample: sample.clone(),
                pair_id: p.pair_id.clone(),
                question: p.question.clone(),
                role,
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_paired(path: impl AsRef<Path>, pairs: &[PairedSample]) -> Result<()> {
    fs::write(path, paired_to_jsonl(pairs)?)?;
    Ok(())
}

/// Flattens pairs into one labelled corpus, human answer first.
pub fn flatten_pairs(pairs: &[PairedSample]) -> Vec<TextSample> {
    pairs
        .iter()
        .flat_map(|p| [p.human.clone(), p.machine.clone()])
        .collect()
}

/// Splits items into (calibration, test) per label.
///
/// Within each label the ids are sorted, shuffled with a ChaCha8 stream
/// seeded by `seed`, and the first `round(fraction * n)` go to calibration.
/// Both parts keep the input order.
pub fn stratified_partition<T>(
    items: Vec<T>,
    key: impl Fn(&T) -> (Label, String),
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let keys: Vec<(Label, String)> = items.iter().map(&key).collect();
    let mut by_label: BTreeMap<Label, Vec<&str>> = BTreeMap::new();
    for (label, id) in &keys {
        by_label.entry(*label).or_default().push(id);
    }
    let mut calibration_ids = HashSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (label, mut ids) in by_label {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let count = ids.len();
        let take = (fraction * count as f64).round() as usize;
        if take == 0 || take == count {
            return Err(Error::TooFewSamples {
                label: label.as_str().to_string(),
                count,
                fraction,
            });
        }
        calibration_ids.extend(ids[..take].iter().map(|id| (label, id.to_string())));
    }
    let (cal, test): (Vec<_>, Vec<_>) = items
        .into_iter()
        .zip(keys)
        .partition(|(_, k)| calibration_ids.contains(k));
    Ok((
        cal.into_iter().map(|(t, _)| t).collect(),
        test.into_iter().map(|(t, _)| t).collect(),
    ))
}

/// Stratified (calibration, test) split of a labelled corpus.
pub fn split(samples: &[TextSample], fraction: f64, seed: u64) -> Result<(Vec<TextSample>, Vec<TextSample>)> {
    stratified_partition(samples.to_vec(), |s| (s.label, s.id.clone()), fraction, seed)
}

/// Produces one machine answer per question, ids `gen-0001`, `gen-0002`, ...
///
/// The source field records the generator and its parameters.
pub fn generate_machine_answers(
    questions: &[String],
    provider: &dyn GenerationProvider,
    params: &GenerationParams,
    ctx: &RunContext,
) -> Result<Vec<TextSample>> {
    let params_json = serde_json::to_string(params)?;
    let source = format!("{} {}", provider.generator_id(), params_json);
    let params_digest = params.digest();
    questions
        .par_iter()
        .enumerate()
        .map(|(i, question)| {
            if question.trim().is_empty() {
                return Err(Error::InvalidText);
            }
            let key = CacheKey {
                kind: CacheKind::Generate,
                provider_id: provider.provider_id().to_string(),
                model_id: provider.model_id().to_string(),
                prompt: String::new(),
                params_digest: params_digest.clone(),
                text_digest: text_digest(question),
                index: 0,
            };
            let text = fetch_text(&key, ctx, &ctx.counters.generate, 0, || {
                provider.generate(question, params)
            })?;
            Ok(TextSample::new(format!("gen-{:04}", i + 1), text, Label::Machine).with_source(source.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::CacheStore;
    use crate::rewriter::MockRewriter;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(read_corpus("".as_bytes()).unwrap().is_empty());
        assert!(read_corpus("\n\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn parse_errors_carry_line() {
        let input = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\"}\n";
        match read_corpus(input.as_bytes()).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("text"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let blank = "{\"id\":\"a\",\"text\":\"  \"}\n";
        assert!(matches!(
            read_corpus(blank.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
        assert!(matches!(read_corpus(input.as_bytes()), Err(Error::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn optional_fields() {
        let input = r#"{"id":"a","text":"x","label":"human","lang":"en","source":"web"}
{"id":"b","text":"y","label":null}"#;
        let c = read_corpus(input.as_bytes()).unwrap();
        assert_eq!(c[0].label, Label::Human);
        assert_eq!(c[0].language, "en");
        assert_eq!(c[1].label, Label::Unknown);
    }

    fn pairs_input() -> &'static str {
        r#"{"id":"h1","text":"human one","pair_id":"p1","question":"q1","role":"human"}
{"id":"m1","text":"machine one","pair_id":"p1","question":"q1","role":"machine"}
{"id":"m2","text":"machine two","pair_id":"p2","question":"q2","role":"machine"}
{"id":"h2","text":"human two","pair_id":"p2","question":"q2","role":"human"}
"#
    }

    #[test]
    fn paired_round_trip() {
        let pairs = read_paired(pairs_input().as_bytes()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].human.id, "h2");
        assert_eq!(pairs[1].machine.label, Label::Machine);
        let again = read_paired(paired_to_jsonl(&pairs).unwrap().as_bytes()).unwrap();
        assert_eq!(again, pairs);
        assert_eq!(flatten_pairs(&pairs).len(), 4);
    }

    #[test]
    fn incomplete_pair_rejected() {
        let input = r#"{"id":"h1","text":"a","pair_id":"p1","question":"q","role":"human"}"#;
        assert!(read_paired(input.as_bytes()).is_err());
        let twice = r#"{"id":"h1","text":"a","pair_id":"p1","question":"q","role":"human"}
{"id":"h2","text":"b","pair_id":"p1","question":"q","role":"human"}"#;
        assert!(read_paired(twice.as_bytes()).is_err());
    }

    fn labelled(n_h: usize, n_m: usize) -> Vec<TextSample> {
        (0..n_h)
            .map(|i| TextSample::new(format!("h{i:03}"), "t", Label::Human))
            .chain((0..n_m).map(|i| TextSample::new(format!("m{i:03}"), "t", Label::Machine)))
            .collect()
    }

    #[test]
    fn split_counts_and_determinism() {
        let corpus = labelled(50, 50);
        let (cal, test) = split(&corpus, 0.2, 9).unwrap();
        assert_eq!(cal.len(), 20);
        assert_eq!(test.len(), 80);
        assert_eq!(cal.iter().filter(|s| s.label == Label::Human).count(), 10);
        let (cal2, _) = split(&corpus, 0.2, 9).unwrap();
        assert_eq!(cal, cal2);

        let mut reversed = corpus.clone();
        reversed.reverse();
        let (cal3, _) = split(&reversed, 0.2, 9).unwrap();
        let ids = |v: &[TextSample]| v.iter().map(|s| s.id.clone()).collect::<HashSet<_>>();
        assert_eq!(ids(&cal), ids(&cal3));
    }

    #[test]
    fn split_too_small() {
        let corpus = labelled(2, 50);
        assert!(matches!(split(&corpus, 0.2, 0), Err(Error::TooFewSamples { .. })));
        assert!(split(&corpus, 1.0, 0).is_err());
    }

    #[test]
    fn generation_cached_with_unique_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(CacheStore::open(dir.path()).unwrap());
        let questions = vec!["Why is the sky blue?".to_string(), "How do plants grow?".to_string()];
        let provider = MockRewriter::default();
        let params = GenerationParams::default();
        let ctx = RunContext::with_cache(store.clone());
        let a = generate_machine_answers(&questions, &provider, &params, &ctx).unwrap();
        assert_eq!(a[0].id, "gen-0001");
        assert_eq!(a[1].id, "gen-0002");
        assert!(a
            .iter()
            .all(|s| s.label == Label::Machine && s.source.starts_with("mock:answer-v1")));
        let ctx2 = RunContext::with_cache(store);
        let b = generate_machine_answers(&questions, &provider, &params, &ctx2).unwrap();
        assert_eq!(provider.calls(), 2);
        assert_eq!(a, b);
        assert_eq!(ctx2.counters.generate.snapshot().cache_hits, 2);
    }

    proptest! {
        #[test]
        fn corpus_round_trip(texts in prop::collection::vec("[a-zA-Z .,!?\"\\\\é]{1,40}", 0..20)) {
            let samples: Vec<TextSample> = texts
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.trim().is_empty())
                .map(|(i, t)| TextSample::new(format!("s{i}"), t.clone(), Label::Human).with_language("en"))
                .collect();
            let back = read_corpus(corpus_to_jsonl(&samples).unwrap().as_bytes()).unwrap();
            prop_assert_eq!(&back, &samples);
            for (a, b) in back.iter().zip(&samples) {
                prop_assert_eq!(&a.content, &b.content);
                prop_assert_eq!(a.label, b.label);
            }
        }

        #[test]
        fn split_partitions(n_h in 5usize..40, n_m in 5usize..40, seed in any::<u64>()) {
            let corpus = labelled(n_h, n_m);
            let (cal, test) = split(&corpus, 0.3, seed).unwrap();
            prop_assert_eq!(cal.len() + test.len(), corpus.len());
            let cal_ids: HashSet<_> = cal.iter().map(|s| &s.id).collect();
            prop_assert!(test.iter().all(|s| !cal_ids.contains(&s.id)));
        }
    }
}
