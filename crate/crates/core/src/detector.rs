//! Scoring math and per-sample detection.
//!
//! With `L0` the original's log-perplexity and `L1..Ln` those of its
//! rewrites:
//!
//! ```text
//! msd     = (1/n) Σ (Li - L0)²
//! sign    = sgn(L0 - mean(Li))            (0 on an exact tie)
//! score   = exp(sign · msd) · L0
//! rho     = msd / Var(L1..Ln)             (population variance, rewrites only)
//! score_e = exp(sign · rho · msd) · L0
//! ```
//!
//! The base score is read as `exp(sign · msd) · L0`, the same shape as the
//! expansion score. `rho` is clamped to `[0, rho_cap]`, and a zero rewrite
//! variance maps to `rho_cap`. Higher scores point to human authorship.

use rayon::prelude::*;

use crate::config::DetectorConfig;
use crate::context::RunContext;
use crate::error::{Error, Result, Stage};
use crate::rewriter::{rewrite_k, RewriteProvider};
use crate::scorer::{log_ppl, score_tokens_cached, ScorerProvider};
use crate::types::{Label, RewriteBundle, TextSample, Variant, VaryBalanceScore};

fn check_inputs(log_ppl_0: f64, rewrites: &[f64]) -> Result<()> {
    if rewrites.is_empty() {
        return Err(Error::EmptyRewrites);
    }
    if !log_ppl_0.is_finite() || rewrites.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "log-perplexity input",
        });
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean squared deviation of the rewrite log-perplexities from the original's.
pub fn msd(log_ppl_0: f64, rewrite_log_ppls: &[f64]) -> Result<f64> {
    check_inputs(log_ppl_0, rewrite_log_ppls)?;
    let sq: f64 = rewrite_log_ppls.iter().map(|l| (l - log_ppl_0).powi(2)).sum();
    Ok(sq / rewrite_log_ppls.len() as f64)
}

/// Sign of `log_ppl_0 - mean(rewrites)`, taken from the summed differences
/// so rewrites equal to the original give exactly 0.
pub fn sign_term(log_ppl_0: f64, rewrite_log_ppls: &[f64]) -> Result<i8> {
    check_inputs(log_ppl_0, rewrite_log_ppls)?;
    let diff: f64 = rewrite_log_ppls.iter().map(|l| log_ppl_0 - l).sum();
    Ok(if diff > 0.0 {
        1
    } else if diff < 0.0 {
        -1
    } else {
        0
    })
}

pub fn base_score(log_ppl_0: f64, rewrite_log_ppls: &[f64]) -> Result<f64> {
    let m = msd(log_ppl_0, rewrite_log_ppls)?;
    let s = sign_term(log_ppl_0, rewrite_log_ppls)?;
    let score = (f64::from(s) * m).exp() * log_ppl_0;
    if !score.is_finite() {
        return Err(Error::NonFinite { what: "score" });
    }
    Ok(score)
}

/// Population variance (divides by n).
pub fn population_variance(values: &[f64]) -> f64 {
    let mu = mean(values);
    values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / values.len() as f64
}

/// Returns `(score_e, rho)`.
pub fn expansion_score(log_ppl_0: f64, rewrite_log_ppls: &[f64], rho_cap: f64) -> Result<(f64, f64)> {
    if rewrite_log_ppls.len() < 2 {
        return Err(Error::TooFewRewrites {
            n: rewrite_log_ppls.len(),
        });
    }
    if !(rho_cap.is_finite() && rho_cap > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "rho_cap must be finite and > 0, got {rho_cap}"
        )));
    }
    let m = msd(log_ppl_0, rewrite_log_ppls)?;
    let s = sign_term(log_ppl_0, rewrite_log_ppls)?;
    let var = population_variance(rewrite_log_ppls);
    let rho = if var > 0.0 {
        (m / var).clamp(0.0, rho_cap)
    } else {
        rho_cap
    };
    let score_e = (f64::from(s) * rho * m).exp() * log_ppl_0;
    if !score_e.is_finite() {
        return Err(Error::NonFinite {
            what: "expansion score",
        });
    }
    Ok((score_e, rho))
}

/// Builds the full score record from already-computed log-perplexities.
/// The expansion fields are filled only for [`Variant::Expansion`].
pub fn combine(
    sample_id: &str,
    log_ppl_0: f64,
    rewrite_log_ppls: Vec<f64>,
    variant: Variant,
    rho_cap: f64,
) -> Result<VaryBalanceScore> {
    let msd = msd(log_ppl_0, &rewrite_log_ppls)?;
    let sign = sign_term(log_ppl_0, &rewrite_log_ppls)?;
    let score = base_score(log_ppl_0, &rewrite_log_ppls)?;
    let (score_e, rho) = match variant {
        Variant::Base => (None, None),
        Variant::Expansion => {
            let (e, r) = expansion_score(log_ppl_0, &rewrite_log_ppls, rho_cap)?;
            (Some(e), Some(r))
        }
    };
    Ok(VaryBalanceScore {
        sample_id: sample_id.to_string(),
        log_ppl_0,
        rewrite_log_ppls,
        msd,
        sign,
        rho,
        score,
        score_e,
        variant,
    })
}

/// `score >= threshold` is Human.
pub fn classify(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::Human
    } else {
        Label::Machine
    }
}

/// Rewrites, scores and combines one sample.
pub fn detect(
    sample: &TextSample,
    cfg: &DetectorConfig,
    rewriter: &dyn RewriteProvider,
    scorer: &dyn ScorerProvider,
    ctx: &RunContext,
) -> Result<VaryBalanceScore> {
    detect_with_bundle(sample, cfg, rewriter, scorer, ctx).map(|(_, score)| score)
}

/// As [`detect`], also returning the rewrite bundle.
pub fn detect_with_bundle(
    sample: &TextSample,
    cfg: &DetectorConfig,
    rewriter: &dyn RewriteProvider,
    scorer: &dyn ScorerProvider,
    ctx: &RunContext,
) -> Result<(RewriteBundle, VaryBalanceScore)> {
    let id = sample.id.as_str();
    sample.validate().map_err(|e| e.at(id, Stage::Validate))?;
    cfg.validate().map_err(|e| e.at(id, Stage::Validate))?;

    let bundle = rewrite_k(sample, cfg.n_rewrites, rewriter, &cfg.prompt, &cfg.params, ctx)
        .map_err(|e| e.at(id, Stage::Rewrite))?;

    let score_one = |text: &str| -> Result<f64> {
        let tlp = score_tokens_cached(text, scorer, cfg.min_tokens, ctx.cache(), Some(&ctx.counters.score))?;
        log_ppl(&tlp, cfg.min_tokens)
    };
    let log_ppl_0 = score_one(&sample.content).map_err(|e| e.at(id, Stage::ScoreOriginal))?;
    let rewrite_log_ppls = bundle
        .rewrites
        .par_iter()
        .map(|rw| score_one(&rw.text).map_err(|e| e.at(id, Stage::ScoreRewrite(rw.index))))
        .collect::<Result<Vec<_>>>()?;

    let score =
        combine(id, log_ppl_0, rewrite_log_ppls, cfg.variant, cfg.rho_cap).map_err(|e| e.at(id, Stage::Combine))?;
    Ok((bundle, score))
}

/// Runs [`detect_with_bundle`] over `samples` in parallel; results keep input order.
pub fn detect_all(
    samples: &[TextSample],
    cfg: &DetectorConfig,
    rewriter: &dyn RewriteProvider,
    scorer: &dyn ScorerProvider,
    ctx: &RunContext,
) -> Vec<Result<(RewriteBundle, VaryBalanceScore)>> {
    samples
        .par_iter()
        .map(|s| detect_with_bundle(s, cfg, rewriter, scorer, ctx))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn msd_examples() {
        assert_eq!(msd(2.0, &[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(msd(3.0, &[2.0, 2.5]).unwrap(), 0.625);
        assert_eq!(msd(0.0, &[1.7]).unwrap(), 1.7 * 1.7);
        assert!(matches!(msd(1.0, &[]), Err(Error::EmptyRewrites)));
    }

    #[test]
    fn sign_examples() {
        assert_eq!(sign_term(3.0, &[2.0, 2.5]).unwrap(), 1);
        assert_eq!(sign_term(2.0, &[2.0, 2.0]).unwrap(), 0);
        assert_eq!(sign_term(1.0, &[2.0, 3.0]).unwrap(), -1);
        assert!(matches!(sign_term(1.0, &[]), Err(Error::EmptyRewrites)));
    }

    #[test]
    fn base_examples() {
        let s = base_score(3.0, &[2.0, 2.5]).unwrap();
        assert!((s - 0.625f64.exp() * 3.0).abs() < 1e-12);
        assert!((s - 5.604737872296667).abs() < 1e-12);
        assert_eq!(base_score(2.0, &[2.0, 2.0]).unwrap(), 2.0);
        let s = base_score(1.0, &[2.0, 3.0]).unwrap();
        assert!((s - (-2.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn expansion_examples() {
        let (e, rho) = expansion_score(3.0, &[2.0, 2.5], 1000.0).unwrap();
        assert!((rho - 10.0).abs() < 1e-12);
        assert!((e - 6.25f64.exp() * 3.0).abs() < 1e-9);
        assert!((e - 1554.0384740050258).abs() < 1e-9);

        let (e, _) = expansion_score(2.5, &[2.5, 2.5, 2.5], 1000.0).unwrap();
        assert_eq!(e, 2.5);

        // zero rewrite variance: rho = cap
        let (e, rho) = expansion_score(3.0, &[2.0, 2.0], 5.0).unwrap();
        assert_eq!(rho, 5.0);
        assert!((e - 5.0f64.exp() * 3.0).abs() < 1e-9);
        // with the default cap, exp(1000) overflows
        assert!(matches!(
            expansion_score(3.0, &[2.0, 2.0], 1000.0),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            expansion_score(3.0, &[2.0], 1000.0),
            Err(Error::TooFewRewrites { n: 1 })
        ));
    }

    #[test]
    fn classify_tie_is_human() {
        assert_eq!(classify(5.6, 1.0), Label::Human);
        assert_eq!(classify(0.08, 1.0), Label::Machine);
        assert_eq!(classify(1.0, 1.0), Label::Human);
    }

    #[test]
    fn combine_fills_expansion_only_when_asked() {
        let base = combine("a", 3.0, vec![2.0, 2.5], Variant::Base, 1000.0).unwrap();
        assert!(base.rho.is_none() && base.score_e.is_none());
        let exp = combine("a", 3.0, vec![2.0, 2.5], Variant::Expansion, 1000.0).unwrap();
        assert_eq!(exp.rho, Some(10.0));
        assert_eq!(exp.score, base.score);
        assert_eq!(exp.primary_score(), exp.score_e.unwrap());
    }

    proptest! {
        #[test]
        fn msd_nonnegative_zero_iff_equal(l0 in 0.0f64..10.0, rw in prop::collection::vec(0.0f64..10.0, 1..8)) {
            let m = msd(l0, &rw).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert_eq!(m == 0.0, rw.iter().all(|v| *v == l0));
            prop_assert_eq!(msd(l0, &vec![l0; rw.len()]).unwrap(), 0.0);
        }

        #[test]
        fn rho_one_agrees_with_base(l0 in 0.0f64..10.0, ds in prop::collection::vec(0.01f64..2.0, 1..4)) {
            // rewrites mirrored around L0: msd equals the rewrite variance, so rho = 1
            let rw: Vec<f64> = ds.iter().flat_map(|d| [l0 - d, l0 + d]).collect();
            let (e, rho) = expansion_score(l0, &rw, 1000.0).unwrap();
            let base = base_score(l0, &rw).unwrap();
            prop_assert!((rho - 1.0).abs() < 1e-9);
            prop_assert!((e - base).abs() <= 1e-9 * base.abs().max(1e-12));
        }

        #[test]
        fn base_monotone_in_msd(l0 in 0.1f64..10.0, d1 in 0.01f64..3.0, extra in 0.01f64..3.0) {
            // sign +1: rewrites below the original
            let near = base_score(l0, &[l0 - d1]).unwrap();
            let far = base_score(l0, &[l0 - d1 - extra]).unwrap();
            prop_assert!(far > near);
            // sign -1: rewrites above
            let near = base_score(l0, &[l0 + d1]).unwrap();
            let far = base_score(l0, &[l0 + d1 + extra]).unwrap();
            prop_assert!(far < near);
        }

        #[test]
        fn classify_permutation_invariant(
            l0 in 0.0f64..10.0,
            mut rw in prop::collection::vec(0.0f64..10.0, 1..8),
            t in 0.0f64..20.0,
        ) {
            let a = classify(base_score(l0, &rw).unwrap(), t);
            rw.reverse();
            rw.rotate_left(1);
            let b = classify(base_score(l0, &rw).unwrap(), t);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn expansion_equals_base_at_rho_one() {
        // rewrites symmetric around L0 ⇒ mean = L0, msd = var ⇒ rho = 1, sign = 0
        let (e, rho) = expansion_score(2.0, &[1.5, 2.5], 1000.0).unwrap();
        assert_eq!(rho, 1.0);
        assert_eq!(e, base_score(2.0, &[1.5, 2.5]).unwrap());
    }
}
