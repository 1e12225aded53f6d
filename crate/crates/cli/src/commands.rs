use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use varybalance::config::DetectorConfig;
use varybalance::dataset::{flatten_pairs, generate_machine_answers, load_corpus, load_paired, PairedSample};
use varybalance::detector::classify;
use varybalance::evaluation::{evaluate, field_for, msd_separation_paired, roc_csv, EvalOptions, ScoreField};
use varybalance::rewriter::rewrite_k;
use varybalance::scorer::{fit_ngram, log_ppl, score_tokens_cached};
use varybalance::synth::{synthesize, SynthConfig};
use varybalance::{
    detect_all, CacheStore, InflightLimiter, Label, RewriteBundle, RunContext, ScorerProvider, TextSample, Variant,
    VaryBalanceScore,
};

use crate::args::{CacheCommand, CorpusArgs, DetectArgs, EvalArgs, FitArgs, StudyArgs, SynthArgs};
use crate::run::Run;
use crate::settings;

/// Reference values from the original preliminary study, shown next to ours.
const REFERENCE_MSD_HUMAN: f64 = 0.34;
const REFERENCE_MSD_MACHINE: f64 = 0.009;
const REFERENCE_PAIR_FRACTION: f64 = 0.96;

fn config_json(cfg: &DetectorConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(cfg)?)
}

/// Runs the detector over `samples`; on any failure prints every
/// stage-tagged error, records the failure and writes nothing else.
fn run_detector(
    samples: &[TextSample],
    cfg: &DetectorConfig,
    run: &mut Run,
    ctx: &RunContext,
    limiter: &InflightLimiter,
) -> Result<(Vec<RewriteBundle>, Vec<VaryBalanceScore>)> {
    let rewriter = cfg.rewriter.build(limiter);
    let scorer = settings::require_scorer(cfg)?.build(limiter)?;
    run.manifest.rewriter_id = Some(rewriter.rewriter_id());
    run.manifest.scorer_id = Some(scorer.scorer_id());

    let mut bundles = Vec::with_capacity(samples.len());
    let mut scores = Vec::with_capacity(samples.len());
    let mut failures = Vec::new();
    for r in detect_all(samples, cfg, rewriter.as_ref(), scorer.as_ref(), ctx) {
        match r {
            Ok((b, s)) => {
                bundles.push(b);
                scores.push(s);
            }
            Err(e) => failures.push(e),
        }
    }
    if failures.is_empty() {
        return Ok((bundles, scores));
    }
    for e in &failures {
        eprintln!("error: {e}");
    }
    bail!(
        "{} of {} samples failed; first: {}",
        failures.len(),
        samples.len(),
        failures[0]
    )
}

fn fail_run(run: Run, ctx: &RunContext, err: anyhow::Error) -> anyhow::Error {
    match run.fail(Some(ctx), format!("{err:#}")) {
        Ok(dir) => err.context(format!("run recorded in {}", dir.display())),
        Err(e) => err.context(format!("could not record failed run: {e:#}")),
    }
}

#[derive(Serialize)]
struct Prediction<'a> {
    sample_id: &'a str,
    score: f64,
    label: Label,
}

pub fn detect(args: DetectArgs) -> Result<()> {
    let mut cfg = settings::resolve(&args.provider)?;
    if args.threshold.is_some() {
        cfg.threshold = args.threshold;
        cfg.validate()?;
    }
    settings::require_scorer(&cfg)?;
    let samples = load_corpus(&args.corpus).with_context(|| format!("loading {}", args.corpus.display()))?;
    if samples.is_empty() {
        bail!("corpus {} is empty", args.corpus.display());
    }
    let mut run = Run::start(&args.out.out, "detect", Some(config_json(&cfg)?), &[&args.corpus])?;
    let limiter = InflightLimiter::new(cfg.max_inflight);
    let ctx = settings::run_context(&cfg)?;

    let (bundles, scores) = match run_detector(&samples, &cfg, &mut run, &ctx, &limiter) {
        Ok(out) => out,
        Err(e) => return Err(fail_run(run, &ctx, e)),
    };
    run.write_jsonl("scores.jsonl", &scores)?;
    run.write_jsonl("rewrites.jsonl", &bundles)?;
    if let Some(t) = cfg.threshold {
        let preds: Vec<_> = scores
            .iter()
            .map(|s| Prediction {
                sample_id: &s.sample_id,
                score: s.primary_score(),
                label: classify(s.primary_score(), t),
            })
            .collect();
        run.write_jsonl("predictions.jsonl", &preds)?;
    }
    let dir = run.finish(Some(&ctx))?;

    let counts = ctx.counters.snapshot();
    println!("run directory: {}", dir.display());
    println!("samples: {}", scores.len());
    println!("variant: {}", variant_name(cfg.variant));
    println!(
        "provider calls: {} (rewrite {}, score {}); cache hits: {}",
        counts.provider_calls(),
        counts.rewrite.provider_calls,
        counts.score.provider_calls,
        counts.rewrite.cache_hits + counts.score.cache_hits
    );
    Ok(())
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Base => "base",
        Variant::Expansion => "expansion",
    }
}

pub fn read_scores(path: &Path) -> Result<Vec<VaryBalanceScore>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}: bad score record", path.display(), i + 1))
        })
        .collect()
}

fn aligned_ids(pairs: &[PairedSample]) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|p| (p.human.id.clone(), p.machine.id.clone()))
        .collect()
}

pub fn eval(args: EvalArgs) -> Result<()> {
    if !args.positive.is_known() {
        bail!("--positive must be human or machine");
    }
    let scores = read_scores(&args.scores)?;
    let mut inputs: Vec<&Path> = vec![&args.scores];
    let (labels, pairs): (HashMap<String, Label>, _) = match (&args.pairs, &args.labels) {
        (Some(path), _) => {
            inputs.push(path);
            let pairs = load_paired(path).with_context(|| format!("loading {}", path.display()))?;
            let labels = flatten_pairs(&pairs).into_iter().map(|s| (s.id, s.label)).collect();
            (labels, Some(aligned_ids(&pairs)))
        }
        (None, Some(path)) => {
            inputs.push(path);
            let corpus = load_corpus(path).with_context(|| format!("loading {}", path.display()))?;
            (corpus.into_iter().map(|s| (s.id, s.label)).collect(), None)
        }
        (None, None) => bail!("pass --labels or --pairs"),
    };
    let opts = EvalOptions {
        positive: args.positive,
        field: args.field,
        threshold: args.threshold,
        calibration_fraction: Some(args.calibration_fraction),
        seed: args.seed,
        pairs,
        rho_cap: args.rho_cap,
    };
    let report = evaluate(&scores, &labels, &opts)?;

    let config = serde_json::json!({
        "positive": args.positive.as_str(),
        "field": args.field,
        "threshold": args.threshold,
        "calibration_fraction": args.calibration_fraction,
        "seed": args.seed,
        "rho_cap": args.rho_cap,
    });
    let mut run = Run::start(&args.out.out, "eval", Some(config), &inputs)?;
    run.write_json("report.json", &report)?;
    run.write("roc.csv", roc_csv(&report.roc_points).as_bytes())?;
    let dir = run.finish(None)?;

    println!("run directory: {}", dir.display());
    println!("positive class: {}", report.positive_class);
    println!("auroc: {:.12}", report.auroc);
    println!("log-ppl auroc: {:.12}", report.log_ppl_auroc);
    if let (Some(t), Some(acc)) = (&report.threshold, report.accuracy_at_threshold) {
        println!(
            "threshold: {} ({}), accuracy {:.4} on {} samples",
            t.value, t.source, acc, t.evaluated_on
        );
    }
    let sep = &report.msd_separation;
    println!(
        "mean msd human {:.4}, machine {:.4}, pair fraction {:.4}",
        sep.mean_msd_human, sep.mean_msd_machine, sep.pair_fraction
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct StudyReport {
    pairs: usize,
    variant: Variant,
    mean_msd_human: f64,
    mean_msd_machine: f64,
    pair_fraction: f64,
    auroc_base: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    auroc_expansion: Option<f64>,
    log_ppl_auroc: f64,
    reference: Reference,
    rewrite_count_ablation: Vec<varybalance::evaluation::AblationRow>,
}

#[derive(Debug, Serialize)]
struct Reference {
    mean_msd_human: f64,
    mean_msd_machine: f64,
    pair_fraction: f64,
}

pub fn study(args: StudyArgs) -> Result<()> {
    let cfg = settings::resolve(&args.provider)?;
    settings::require_scorer(&cfg)?;
    let mut pairs = load_paired(&args.pairs).with_context(|| format!("loading {}", args.pairs.display()))?;
    if pairs.is_empty() {
        bail!("paired corpus {} is empty", args.pairs.display());
    }
    let mut run = Run::start(&args.out.out, "study", Some(config_json(&cfg)?), &[&args.pairs])?;
    let limiter = InflightLimiter::new(cfg.max_inflight);
    let ctx = settings::run_context(&cfg)?;

    if args.regenerate {
        let generated = (|| -> Result<()> {
            let generator = cfg.rewriter.build_generator(&limiter)?;
            run.manifest.generator_id = Some(generator.generator_id());
            let questions: Vec<String> = pairs.iter().map(|p| p.question.clone()).collect();
            let answers = generate_machine_answers(&questions, generator.as_ref(), &cfg.params, &ctx)?;
            for (p, mut a) in pairs.iter_mut().zip(answers) {
                a.id = format!("{}-gen", p.pair_id);
                p.machine = a;
            }
            Ok(())
        })();
        if let Err(e) = generated {
            return Err(fail_run(run, &ctx, e));
        }
    }

    let samples = flatten_pairs(&pairs);
    let (_, scores) = match run_detector(&samples, &cfg, &mut run, &ctx, &limiter) {
        Ok(out) => out,
        Err(e) => return Err(fail_run(run, &ctx, e)),
    };

    let by_id: HashMap<&str, &VaryBalanceScore> = scores.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let aligned: Vec<_> = pairs
        .iter()
        .map(|p| (by_id[p.human.id.as_str()], by_id[p.machine.id.as_str()]))
        .collect();
    let sep = msd_separation_paired(&aligned)?;
    let labels: HashMap<String, Label> = samples.iter().map(|s| (s.id.clone(), s.label)).collect();
    let opts = EvalOptions {
        field: ScoreField::Base,
        calibration_fraction: None,
        rho_cap: cfg.rho_cap,
        ..Default::default()
    };
    let base = evaluate(&scores, &labels, &opts)?;
    let expansion = match cfg.variant {
        Variant::Expansion => Some(
            evaluate(
                &scores,
                &labels,
                &EvalOptions {
                    field: field_for(Variant::Expansion),
                    ..opts.clone()
                },
            )?
            .auroc,
        ),
        Variant::Base => None,
    };
    let report = StudyReport {
        pairs: pairs.len(),
        variant: cfg.variant,
        mean_msd_human: sep.mean_msd_human,
        mean_msd_machine: sep.mean_msd_machine,
        pair_fraction: sep.pair_fraction,
        auroc_base: base.auroc,
        auroc_expansion: expansion,
        log_ppl_auroc: base.log_ppl_auroc,
        reference: Reference {
            mean_msd_human: REFERENCE_MSD_HUMAN,
            mean_msd_machine: REFERENCE_MSD_MACHINE,
            pair_fraction: REFERENCE_PAIR_FRACTION,
        },
        rewrite_count_ablation: base.rewrite_count_ablation,
    };
    run.write_jsonl("scores.jsonl", &scores)?;
    if args.regenerate {
        run.write("pairs.jsonl", varybalance::dataset::paired_to_jsonl(&pairs)?.as_bytes())?;
    }
    run.write_json("study.json", &report)?;
    let dir = run.finish(Some(&ctx))?;

    println!("run directory: {}", dir.display());
    println!("pairs: {}", report.pairs);
    println!("{:<28}{:>10}{:>12}", "", "measured", "reference");
    println!(
        "{:<28}{:>10.4}{:>12}",
        "mean MSD, human", report.mean_msd_human, REFERENCE_MSD_HUMAN
    );
    println!(
        "{:<28}{:>10.4}{:>12}",
        "mean MSD, machine", report.mean_msd_machine, REFERENCE_MSD_MACHINE
    );
    println!(
        "{:<28}{:>9.2}%{:>11}%",
        "pairs with MSD_h > MSD_m",
        report.pair_fraction * 100.0,
        REFERENCE_PAIR_FRACTION * 100.0
    );
    println!("auroc (base): {:.6}", report.auroc_base);
    if let Some(a) = report.auroc_expansion {
        println!("auroc (expansion): {a:.6}");
    }
    Ok(())
}

pub fn rewrite(args: CorpusArgs) -> Result<()> {
    let cfg = settings::resolve(&args.provider)?;
    let samples = load_corpus(&args.corpus).with_context(|| format!("loading {}", args.corpus.display()))?;
    let mut run = Run::start(&args.out.out, "rewrite", Some(config_json(&cfg)?), &[&args.corpus])?;
    let limiter = InflightLimiter::new(cfg.max_inflight);
    let ctx = settings::run_context(&cfg)?;
    let rewriter = cfg.rewriter.build(&limiter);
    run.manifest.rewriter_id = Some(rewriter.rewriter_id());

    let bundles = samples
        .iter()
        .map(|s| {
            rewrite_k(s, cfg.n_rewrites, rewriter.as_ref(), &cfg.prompt, &cfg.params, &ctx)
                .with_context(|| format!("rewriting sample {}", s.id))
        })
        .collect::<Result<Vec<_>>>();
    let bundles = match bundles {
        Ok(b) => b,
        Err(e) => return Err(fail_run(run, &ctx, e)),
    };
    run.write_jsonl("rewrites.jsonl", &bundles)?;
    let dir = run.finish(Some(&ctx))?;
    println!("run directory: {}", dir.display());
    println!("rewrites: {} samples x {}", bundles.len(), cfg.n_rewrites);
    Ok(())
}

#[derive(Serialize)]
struct LogPplRecord {
    sample_id: String,
    scorer_id: String,
    log_ppl: f64,
    tokens: usize,
}

pub fn score(args: CorpusArgs) -> Result<()> {
    let cfg = settings::resolve(&args.provider)?;
    let scorer_settings = settings::require_scorer(&cfg)?;
    let samples = load_corpus(&args.corpus).with_context(|| format!("loading {}", args.corpus.display()))?;
    let mut run = Run::start(&args.out.out, "score", Some(config_json(&cfg)?), &[&args.corpus])?;
    let limiter = InflightLimiter::new(cfg.max_inflight);
    let ctx = settings::run_context(&cfg)?;
    let scorer = scorer_settings.build(&limiter)?;
    run.manifest.scorer_id = Some(scorer.scorer_id());

    let records = samples
        .iter()
        .map(|s| -> Result<LogPplRecord> {
            let tlp = score_tokens_cached(
                &s.content,
                scorer.as_ref(),
                cfg.min_tokens,
                ctx.cache(),
                Some(&ctx.counters.score),
            )
            .with_context(|| format!("scoring sample {}", s.id))?;
            Ok(LogPplRecord {
                sample_id: s.id.clone(),
                scorer_id: tlp.scorer_id.clone(),
                log_ppl: log_ppl(&tlp, cfg.min_tokens)?,
                tokens: tlp.logprobs.len(),
            })
        })
        .collect::<Result<Vec<_>>>();
    let records = match records {
        Ok(r) => r,
        Err(e) => return Err(fail_run(run, &ctx, e)),
    };
    run.write_jsonl("log_ppl.jsonl", &records)?;
    let dir = run.finish(Some(&ctx))?;
    println!("run directory: {}", dir.display());
    println!("scored: {}", records.len());
    Ok(())
}

pub fn cache(action: CacheCommand) -> Result<()> {
    match action {
        CacheCommand::Stats { cache_dir, json } => {
            let dir = cache_dir.unwrap_or_else(|| settings::DEFAULT_CACHE_DIR.into());
            if !dir.exists() {
                bail!("no cache at {}", dir.display());
            }
            let stats = CacheStore::open(&dir)?.stats()?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
                return Ok(());
            }
            println!("cache: {}", dir.display());
            for (kind, n) in &stats.entries {
                println!("  {kind:<10}{n:>8}");
            }
            println!("  {:<10}{:>8}", "total", stats.total_entries);
            println!("quarantined: {}", stats.quarantined);
            println!(
                "runs: {}, hits {}, misses {}, writes {}",
                stats.runs, stats.lifetime.hits, stats.lifetime.misses, stats.lifetime.writes
            );
            if let Some(rate) = stats.lifetime.hit_rate() {
                println!("hit rate: {:.2}%", rate * 100.0);
            }
            Ok(())
        }
    }
}

pub fn fit(args: FitArgs) -> Result<()> {
    let mut docs = Vec::new();
    for path in &args.train {
        if path.extension().is_some_and(|e| e == "jsonl") {
            docs.extend(load_corpus(path)?.into_iter().map(|s| s.content));
        } else {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            docs.extend(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
        }
    }
    let model = fit_ngram(&docs, args.order, args.smoothing, args.tokenizer)?;
    model.save(&args.output)?;
    println!("model: {}", model.model_id());
    println!("documents: {}, vocabulary: {}", docs.len(), model.vocabulary().len());
    println!("written: {}", args.output.display());
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let study = synthesize(&SynthConfig {
        pairs: args.pairs,
        k: args.k,
        seed: args.seed,
        overlap: args.overlap,
    })?;
    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let out = &args.output;
    crate::run::write_atomic(
        &out.join("pairs.jsonl"),
        varybalance::dataset::paired_to_jsonl(&study.pairs)?.as_bytes(),
    )?;
    crate::run::write_atomic(
        &out.join("corpus.jsonl"),
        varybalance::dataset::corpus_to_jsonl(&study.samples())?.as_bytes(),
    )?;
    study.table.save(&out.join("table.jsonl"))?;
    let variant = if study.k >= 2 { "expansion" } else { "base" };
    let config = format!(
        "# Mock rewriter plus the planted table scorer.\nn_rewrites = {}\nvariant = \"{variant}\"\n\n[params]\nseed = {}\n\n[rewriter]\nkind = \"mock\"\n\n[scorer]\nkind = \"table\"\npath = \"table.jsonl\"\n",
        study.k, study.rewrite_seed
    );
    crate::run::write_atomic(&out.join("config.toml"), config.as_bytes())?;
    println!("pairs: {}", study.pairs.len());
    println!("table entries: {}", study.table.len());
    println!("written: {}", out.display());
    Ok(())
}
