//! Detection metrics and study summaries.
//!
//! AUROC is the Mann-Whitney statistic with midranks for ties, which is the
//! same number as counting each tied positive/negative pair as one half. By
//! default humans are the positive class and the raw score is used, since a
//! higher score means "more likely human".

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::stratified_partition;
use crate::detector::{base_score, expansion_score};
use crate::error::{Error, Result};
use crate::types::{Label, Variant, VaryBalanceScore};

pub const HISTOGRAM_BINS: usize = 30;

fn check_finite(scores: &[f64]) -> Result<()> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            what: "evaluation score",
        });
    }
    Ok(())
}

fn check_classes(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() {
        return Err(Error::EmptyClass("positive"));
    }
    if neg.is_empty() {
        return Err(Error::EmptyClass("negative"));
    }
    check_finite(pos)?;
    check_finite(neg)
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auroc(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    check_classes(pos_scores, neg_scores)?;
    let mut all: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their midrank
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        let tied_pos = all[i..=j].iter().filter(|(_, p)| *p).count();
        pos_rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let n_pos = pos_scores.len() as f64;
    let n_neg = neg_scores.len() as f64;
    Ok((pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Samples with `score >= threshold` are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve swept over the distinct score values, from (0,0) to (1,1).
pub fn roc_curve(pos_scores: &[f64], neg_scores: &[f64]) -> Result<Vec<RocPoint>> {
    check_classes(pos_scores, neg_scores)?;
    let mut all: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (n_pos, n_neg) = (pos_scores.len() as f64, neg_scores.len() as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let value = all[i].0;
        while i < all.len() && all[i].0 == value {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: value,
            fpr: fp as f64 / n_neg,
            tpr: tp as f64 / n_pos,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub balanced_accuracy: f64,
}

/// Threshold maximizing balanced accuracy of the rule `score >= t ⇒ human`.
/// Candidates are the observed scores; ties keep the highest threshold.
pub fn calibrate_threshold(human_scores: &[f64], machine_scores: &[f64]) -> Result<Calibration> {
    let roc = roc_curve(human_scores, machine_scores)?;
    let best = roc
        .iter()
        .skip(1)
        .map(|p| Calibration {
            threshold: p.threshold,
            balanced_accuracy: (p.tpr + (1.0 - p.fpr)) / 2.0,
        })
        .fold(None::<Calibration>, |best, c| match best {
            Some(b) if b.balanced_accuracy >= c.balanced_accuracy => Some(b),
            _ => Some(c),
        });
    Ok(best.expect("roc has at least one finite threshold"))
}

/// Fraction of samples whose `score >= threshold` call matches the label.
pub fn accuracy(human_scores: &[f64], machine_scores: &[f64], threshold: f64) -> f64 {
    let correct = human_scores.iter().filter(|&&s| s >= threshold).count()
        + machine_scores.iter().filter(|&&s| s < threshold).count();
    correct as f64 / (human_scores.len() + machine_scores.len()) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; the top edge lands in the last bin.
    pub fn build(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        let width = hi - lo;
        for &v in values {
            let bin = if width > 0.0 {
                (((v - lo) / width) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
            } else {
                0
            };
            counts[bin] += 1;
        }
        Self { lo, hi, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
}

impl ClassStats {
    pub fn compute(values: &[f64], range: (f64, f64)) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            count: values.len(),
            mean,
            variance,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            histogram: Histogram::build(values, range.0, range.1, HISTOGRAM_BINS),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Every human sample against every machine sample.
    Cross,
    /// Human and machine answers to the same question.
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdSeparation {
    pub mean_msd_human: f64,
    pub mean_msd_machine: f64,
    /// Share of pairs where the human MSD is strictly larger.
    pub pair_fraction: f64,
    pub pairs: usize,
    pub pairing: Pairing,
}

fn mean_msd(scores: &[&VaryBalanceScore]) -> f64 {
    scores.iter().map(|s| s.msd).sum::<f64>() / scores.len() as f64
}

/// MSD summary over all human/machine cross-pairs.
pub fn msd_separation(human: &[&VaryBalanceScore], machine: &[&VaryBalanceScore]) -> Result<MsdSeparation> {
    if human.is_empty() {
        return Err(Error::EmptyClass("human"));
    }
    if machine.is_empty() {
        return Err(Error::EmptyClass("machine"));
    }
    let wins: usize = human
        .iter()
        .map(|h| machine.iter().filter(|m| h.msd > m.msd).count())
        .sum();
    let pairs = human.len() * machine.len();
    Ok(MsdSeparation {
        mean_msd_human: mean_msd(human),
        mean_msd_machine: mean_msd(machine),
        pair_fraction: wins as f64 / pairs as f64,
        pairs,
        pairing: Pairing::Cross,
    })
}

/// MSD summary over aligned (human, machine) pairs.
pub fn msd_separation_paired(pairs: &[(&VaryBalanceScore, &VaryBalanceScore)]) -> Result<MsdSeparation> {
    if pairs.is_empty() {
        return Err(Error::EmptyClass("pair"));
    }
    let human: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let machine: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let wins = pairs.iter().filter(|(h, m)| h.msd > m.msd).count();
    Ok(MsdSeparation {
        mean_msd_human: mean_msd(&human),
        mean_msd_machine: mean_msd(&machine),
        pair_fraction: wins as f64 / pairs.len() as f64,
        pairs: pairs.len(),
        pairing: Pairing::Aligned,
    })
}

/// Which number of a score record is evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreField {
    /// `score_e` for expansion records, `score` otherwise.
    #[default]
    Auto,
    Base,
    Expansion,
    /// The original's log-perplexity alone.
    LogPpl,
}

impl ScoreField {
    pub fn pick(self, s: &VaryBalanceScore) -> Result<f64> {
        match self {
            ScoreField::Auto => Ok(s.primary_score()),
            ScoreField::Base => Ok(s.score),
            ScoreField::Expansion => s
                .score_e
                .ok_or_else(|| Error::InvalidConfig(format!("record {} has no expansion score", s.sample_id))),
            ScoreField::LogPpl => Ok(s.log_ppl_0),
        }
    }
}

impl std::str::FromStr for ScoreField {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "auto" => Ok(ScoreField::Auto),
            "base" => Ok(ScoreField::Base),
            "expansion" => Ok(ScoreField::Expansion),
            "log-ppl" => Ok(ScoreField::LogPpl),
            other => Err(format!("unknown score field {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Class treated as positive: Human or Machine.
    pub positive: Label,
    pub field: ScoreField,
    /// Fixed decision threshold. Without one, a threshold is calibrated on a
    /// stratified split when `calibration_fraction` is set.
    pub threshold: Option<f64>,
    pub calibration_fraction: Option<f64>,
    pub seed: u64,
    /// Aligned (human id, machine id) pairs for the MSD summary.
    pub pairs: Option<Vec<(String, String)>>,
    pub rho_cap: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            positive: Label::Human,
            field: ScoreField::Auto,
            threshold: None,
            calibration_fraction: Some(0.2),
            seed: 0,
            pairs: None,
            rho_cap: crate::config::DEFAULT_RHO_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub value: f64,
    /// "given" or "calibrated".
    pub source: String,
    /// Balanced accuracy on the calibration split, when calibrated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration_balanced_accuracy: Option<f64>,
    pub evaluated_on: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub rewrites: usize,
    pub auroc_base: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc_expansion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub positive_class: String,
    pub score_field: ScoreField,
    pub auroc: f64,
    pub roc_points: Vec<RocPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_at_threshold: Option<f64>,
    pub class_stats: std::collections::BTreeMap<String, ClassStats>,
    pub msd_separation: MsdSeparation,
    /// AUROC of the original log-perplexity alone, same orientation.
    pub log_ppl_auroc: f64,
    /// AUROC when only the first j rewrites of each record are used.
    pub rewrite_count_ablation: Vec<AblationRow>,
}

fn oriented(positive: Label, human: Vec<f64>, machine: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    match positive {
        Label::Machine => (machine, human),
        _ => (human, machine),
    }
}

/// AUROC per rewrite count, recomputed from stored log-perplexities.
pub fn rewrite_count_ablation(
    human: &[&VaryBalanceScore],
    machine: &[&VaryBalanceScore],
    positive: Label,
    rho_cap: f64,
) -> Result<Vec<AblationRow>> {
    let max_k = human
        .iter()
        .chain(machine)
        .map(|s| s.rewrite_log_ppls.len())
        .min()
        .unwrap_or(0);
    let mut rows = Vec::new();
    for j in 1..=max_k {
        let base = |s: &&VaryBalanceScore| base_score(s.log_ppl_0, &s.rewrite_log_ppls[..j]);
        let hb = human.iter().map(base).collect::<Result<Vec<_>>>()?;
        let mb = machine.iter().map(base).collect::<Result<Vec<_>>>()?;
        let (p, n) = oriented(positive, hb, mb);
        let auroc_base = auroc(&p, &n)?;
        let auroc_expansion = if j >= 2 {
            let exp =
                |s: &&VaryBalanceScore| expansion_score(s.log_ppl_0, &s.rewrite_log_ppls[..j], rho_cap).map(|(e, _)| e);
            let he = human.iter().map(exp).collect::<Result<Vec<_>>>();
            let me = machine.iter().map(exp).collect::<Result<Vec<_>>>();
            match (he, me) {
                (Ok(he), Ok(me)) => {
                    let (p, n) = oriented(positive, he, me);
                    Some(auroc(&p, &n)?)
                }
                // an overflowing expansion score leaves this row without one
                _ => None,
            }
        } else {
            None
        };
        rows.push(AblationRow {
            rewrites: j,
            auroc_base,
            auroc_expansion,
        });
    }
    Ok(rows)
}

/// Full report over labelled score records.
pub fn evaluate(
    scores: &[VaryBalanceScore],
    labels: &HashMap<String, Label>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if !opts.positive.is_known() {
        return Err(Error::InvalidConfig("positive class must be human or machine".into()));
    }
    let mut human = Vec::new();
    let mut machine = Vec::new();
    for s in scores {
        match labels.get(&s.sample_id) {
            Some(Label::Human) => human.push(s),
            Some(Label::Machine) => machine.push(s),
            _ => return Err(Error::UnlabeledSample(s.sample_id.clone())),
        }
    }
    if human.is_empty() {
        return Err(Error::EmptyClass("human"));
    }
    if machine.is_empty() {
        return Err(Error::EmptyClass("machine"));
    }

    let pick = |v: &[&VaryBalanceScore]| v.iter().map(|s| opts.field.pick(s)).collect::<Result<Vec<_>>>();
    let human_vals = pick(&human)?;
    let machine_vals = pick(&machine)?;
    let (pos, neg) = oriented(opts.positive, human_vals.clone(), machine_vals.clone());
    let auroc_value = auroc(&pos, &neg)?;
    let roc_points = roc_curve(&pos, &neg)?;

    let (threshold, accuracy_at_threshold) = match (opts.threshold, opts.calibration_fraction) {
        (Some(t), _) => (
            Some(ThresholdReport {
                value: t,
                source: "given".into(),
                calibration_balanced_accuracy: None,
                evaluated_on: human_vals.len() + machine_vals.len(),
            }),
            Some(accuracy(&human_vals, &machine_vals, t)),
        ),
        (None, Some(fraction)) => calibrated(&human, &machine, opts, fraction)?,
        (None, None) => (None, None),
    };

    let lo = human_vals
        .iter()
        .chain(&machine_vals)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = human_vals
        .iter()
        .chain(&machine_vals)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let class_stats = [
        ("human".to_string(), ClassStats::compute(&human_vals, (lo, hi))),
        ("machine".to_string(), ClassStats::compute(&machine_vals, (lo, hi))),
    ]
    .into_iter()
    .collect();

    let msd_sep = match &opts.pairs {
        Some(pairs) => {
            let by_id: HashMap<&str, &VaryBalanceScore> = scores.iter().map(|s| (s.sample_id.as_str(), s)).collect();
            let aligned: Vec<_> = pairs
                .iter()
                .filter_map(|(h, m)| Some((*by_id.get(h.as_str())?, *by_id.get(m.as_str())?)))
                .collect();
            msd_separation_paired(&aligned)?
        }
        None => msd_separation(&human, &machine)?,
    };

    let (lp, ln) = oriented(
        opts.positive,
        human.iter().map(|s| s.log_ppl_0).collect(),
        machine.iter().map(|s| s.log_ppl_0).collect(),
    );

    Ok(EvalReport {
        positive_class: opts.positive.as_str().to_string(),
        score_field: opts.field,
        auroc: auroc_value,
        roc_points,
        threshold,
        accuracy_at_threshold,
        class_stats,
        msd_separation: msd_sep,
        log_ppl_auroc: auroc(&lp, &ln)?,
        rewrite_count_ablation: rewrite_count_ablation(&human, &machine, opts.positive, opts.rho_cap)?,
    })
}

fn calibrated(
    human: &[&VaryBalanceScore],
    machine: &[&VaryBalanceScore],
    opts: &EvalOptions,
    fraction: f64,
) -> Result<(Option<ThresholdReport>, Option<f64>)> {
    let items: Vec<(&VaryBalanceScore, Label)> = human
        .iter()
        .map(|s| (*s, Label::Human))
        .chain(machine.iter().map(|s| (*s, Label::Machine)))
        .collect();
    let (cal, test) = match stratified_partition(items, |(s, l)| (*l, s.sample_id.clone()), fraction, opts.seed) {
        Ok(parts) => parts,
        Err(Error::TooFewSamples { .. }) => {
            log::warn!("too few samples to calibrate a threshold; accuracy omitted");
            return Ok((None, None));
        }
        Err(e) => return Err(e),
    };
    let split = |part: &[(&VaryBalanceScore, Label)], want: Label| -> Result<Vec<f64>> {
        part.iter()
            .filter(|(_, l)| *l == want)
            .map(|(s, _)| opts.field.pick(s))
            .collect()
    };
    let cal_h = split(&cal, Label::Human)?;
    let cal_m = split(&cal, Label::Machine)?;
    let c = calibrate_threshold(&cal_h, &cal_m)?;
    let test_h = split(&test, Label::Human)?;
    let test_m = split(&test, Label::Machine)?;
    Ok((
        Some(ThresholdReport {
            value: c.threshold,
            source: "calibrated".into(),
            calibration_balanced_accuracy: Some(c.balanced_accuracy),
            evaluated_on: test.len(),
        }),
        Some(accuracy(&test_h, &test_m, c.threshold)),
    ))
}

/// Writes ROC points as `threshold,fpr,tpr` CSV.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out
}

/// Convenience for callers holding a variant rather than a field.
pub fn field_for(variant: Variant) -> ScoreField {
    match variant {
        Variant::Base => ScoreField::Base,
        Variant::Expansion => ScoreField::Expansion,
    }
}
