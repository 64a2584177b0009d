use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use chrono::Utc;
use gramprompt::analysis::{Group, PairedComparison};
use gramprompt::corpus::{ingest as ingest_corpus, write_canonical, Dataset, MinimalPair};
use gramprompt::digest::digest_json;
use gramprompt::explain::{
    cache_key, check_hygiene, control_instruction, export_explanations, generate_explanation,
    import_explanations, instruction_for, ExplanationCache, GenerationSettings, GrammarExplanation,
    CONTROL_PARADIGM,
};
use gramprompt::report::{build_report, load_runs, ReportOptions};
use gramprompt::runner::{self, execute, read_manifest, ConditionInputs, RunError, RunSpec};
use gramprompt::templates::{Audience, ConditionKind, ConditionSpec, TemplateSet};
use serde::Serialize;

use crate::backend::{client_for, spec_for};
use crate::config::{resolve_seed, HygieneMode, RunConfig};
use crate::error::CliError;
use crate::workspace::{load_corpora, LoadedCorpus};
use crate::{CompareArgs, ExplainArgs, ExportArgs, ImportArgs, IngestArgs, ReportArgs, RunArgs};

pub struct Globals {
    pub cfg: RunConfig,
}

impl Globals {
    pub fn new(config: Option<&Path>, out: Option<PathBuf>, cache: Option<PathBuf>) -> Result<Self, CliError> {
        let mut cfg = match config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = out {
            cfg.out_dir = out;
        }
        if let Some(cache) = cache {
            cfg.cache_dir = cache;
        }
        Ok(Self { cfg })
    }

    fn templates(&self) -> Result<TemplateSet, CliError> {
        let t = match &self.cfg.templates_dir {
            Some(dir) => TemplateSet::from_dir(dir).map_err(CliError::usage)?,
            None => TemplateSet::bundled(),
        };
        Ok(t.with_system_text(self.cfg.system_text.clone()))
    }

    fn cache(&self) -> Result<ExplanationCache, CliError> {
        Ok(ExplanationCache::open(&self.cfg.cache_dir)?)
    }

    fn runs_dir(&self) -> PathBuf {
        self.cfg.out_dir.join("runs")
    }
}

pub fn ingest(g: &Globals, args: &IngestArgs) -> Result<(), CliError> {
    let format = args.format.parse().map_err(|e: String| CliError::usage(anyhow!(e)))?;
    let mut ingested = ingest_corpus(&args.path, format)?;
    for r in &ingested.rejected {
        log::warn!("rejected record {r}");
    }
    if args.strict && !ingested.rejected.is_empty() {
        return Err(CliError::data(anyhow!("{} record(s) rejected", ingested.rejected.len())));
    }
    if let Some(path) = &args.emit_canonical {
        let file = fs::File::create(path)
            .with_context(|| format!("cannot create {}", path.display()))
            .map_err(CliError::usage)?;
        write_canonical(&ingested.pairs, io::BufWriter::new(file))
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(CliError::data)?;
    }
    ingested.manifest.ingested_at = Some(Utc::now());
    let dir = g.cfg.out_dir.join("corpora").join(ingested.manifest.dataset.as_str().to_lowercase());
    let persist = || -> anyhow::Result<()> {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&ingested.manifest)? + "\n")?;
        let mut pairs = Vec::new();
        write_canonical(&ingested.pairs, &mut pairs)?;
        fs::write(dir.join("pairs.jsonl"), pairs)?;
        Ok(())
    };
    persist()
        .with_context(|| format!("cannot write corpus files under {}", dir.display()))
        .map_err(CliError::data)?;

    let m = &ingested.manifest;
    if args.json {
        println!("{}", serde_json::to_string_pretty(m).expect("manifest serializes"));
        return Ok(());
    }
    let mut categories: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &m.paradigms {
        *categories.entry(p.category.as_str()).or_default() += 1;
    }
    println!("dataset: {}", m.dataset);
    println!("pairs: {}", ingested.pairs.len());
    println!("paradigms: {}", m.paradigms.len());
    println!("categories: {}", categories.len());
    for (c, n) in &categories {
        println!("  {c} ({n})");
    }
    println!("rejected: {}", ingested.rejected.len());
    println!("corpus digest: {}", m.corpus_digest);
    println!("source digest: {}", m.source_digest);
    println!("wrote {}", dir.display());
    Ok(())
}

fn explanation_key(
    dataset: Dataset,
    paradigm: &str,
    audience: Audience,
    generator: &str,
    templates: &TemplateSet,
) -> String {
    cache_key(dataset, paradigm, audience, generator, templates.version())
}

struct ExplainJob {
    dataset: Dataset,
    paradigm: String,
    audience: Audience,
    generator: String,
}

pub fn explain(mut g: Globals, args: &ExplainArgs) -> Result<(), CliError> {
    if !args.generators.is_empty() {
        g.cfg.generators = args.generators.clone();
    }
    if !args.audiences.is_empty() {
        g.cfg.audiences = args
            .audiences
            .iter()
            .map(|a| a.parse().map_err(|e: String| CliError::usage(anyhow!(e))))
            .collect::<Result<_, _>>()?;
    }
    let hygiene = args.check_hygiene.unwrap_or(g.cfg.hygiene);
    g.cfg.validate()?;
    let conditions = g.cfg.parsed_conditions()?;
    if g.cfg.generators.is_empty() {
        return Err(CliError::usage(anyhow!("no generator given (use --generator or `generators`)")));
    }
    let templates = g.templates()?;
    let cache = g.cache()?;
    let corpora = load_corpora(&g.cfg, &conditions)?;

    let mut audiences = g.cfg.audiences.clone();
    for c in &conditions {
        if let Some(a) = c.audience {
            if !audiences.contains(&a) {
                audiences.push(a);
            }
        }
    }
    let textbook = conditions.iter().any(|c| c.kind == ConditionKind::Textbook);
    let control = conditions.iter().any(|c| c.kind == ConditionKind::Control);
    let primary = g.cfg.generators[0].clone();

    let mut jobs = Vec::new();
    for corpus in &corpora {
        for generator in &g.cfg.generators {
            for &audience in &audiences {
                for paradigm in &corpus.selected {
                    jobs.push(ExplainJob {
                        dataset: corpus.dataset(),
                        paradigm: paradigm.clone(),
                        audience,
                        generator: generator.clone(),
                    });
                }
            }
        }
        if textbook {
            for paradigm in corpus.all_paradigms() {
                if !corpus.selected.contains(&paradigm) || !audiences.contains(&Audience::Beginner) {
                    jobs.push(ExplainJob {
                        dataset: corpus.dataset(),
                        paradigm,
                        audience: Audience::Beginner,
                        generator: primary.clone(),
                    });
                }
            }
        }
    }

    let mut clients = BTreeMap::new();
    for generator in &g.cfg.generators {
        let spec = spec_for(&g.cfg, generator, args.backend.as_deref())?;
        clients.insert(generator.clone(), client_for(&g.cfg, generator, &spec, &[])?);
    }
    let settings = GenerationSettings::default();
    let mut fetched = 0usize;
    let mut leaks = 0usize;
    let by_dataset: BTreeMap<Dataset, &LoadedCorpus> = corpora.iter().map(|c| (c.dataset(), c)).collect();
    for job in &jobs {
        let corpus = by_dataset[&job.dataset];
        let spec = instruction_for(
            &templates,
            &job.paradigm,
            corpus.language(),
            job.audience,
            &corpus.references(&job.paradigm),
            g.cfg.target_words,
        );
        let out = generate_explanation(
            &clients[&job.generator],
            &cache,
            &templates,
            &spec,
            (job.dataset, &job.paradigm),
            &job.generator,
            settings,
        )
        .map_err(|e| CliError::from(e).context(format!("explaining {} {}", job.dataset, job.paradigm)))?;
        fetched += out.fetched as usize;
        let e = &out.explanation;
        let mut line = format!(
            "{} {} {} {} {} {} ({} words)",
            if out.fetched { "fetched" } else { "cached " },
            job.dataset,
            job.paradigm,
            job.generator,
            job.audience,
            &e.cache_key[..12],
            e.text.split_whitespace().count()
        );
        if hygiene != HygieneMode::Off {
            let report = check_hygiene(e, &corpus.evaluation_pool(&job.paradigm));
            if !report.passed {
                leaks += 1;
                line.push_str(&format!("; leaks {} test sentence(s)", report.leaked_sentences.len()));
                for s in &report.leaked_sentences {
                    log::warn!("{} {}: explanation {} contains test sentence {s:?}", job.dataset, job.paradigm, &e.cache_key[..12]);
                }
            }
        }
        println!("{line}");
    }
    if control {
        let spec = control_instruction(&templates, Audience::Beginner);
        let out = generate_explanation(
            &clients[&primary],
            &cache,
            &templates,
            &spec,
            (Dataset::Custom, CONTROL_PARADIGM),
            &primary,
            settings,
        )?;
        fetched += out.fetched as usize;
        println!(
            "{} control {} {}",
            if out.fetched { "fetched" } else { "cached " },
            primary,
            &out.explanation.cache_key[..12]
        );
    }
    println!("{} explanation(s), {fetched} fetched, {leaks} with hygiene findings", jobs.len() + control as usize);
    if leaks > 0 && hygiene == HygieneMode::Strict {
        return Err(CliError::data(anyhow!(
            "{leaks} explanation(s) contain test sentences (hygiene mode strict)"
        )));
    }
    Ok(())
}

fn cached(
    cache: &ExplanationCache,
    key: &str,
    what: impl FnOnce() -> String,
) -> Result<GrammarExplanation, CliError> {
    cache.get(key)?.ok_or_else(|| {
        CliError::from(RunError::MissingExplanation(what())).context("run `gramprompt explain` first")
    })
}

fn condition_inputs(
    cfg: &RunConfig,
    corpus: &LoadedCorpus,
    condition: &ConditionSpec,
    templates: &TemplateSet,
    cache: &ExplanationCache,
) -> Result<ConditionInputs, CliError> {
    let mut inputs = ConditionInputs::default();
    let dataset = corpus.dataset();
    match condition.kind {
        ConditionKind::Gp | ConditionKind::GpCot => {
            let generator = condition.explanation_source.as_deref().unwrap_or_default();
            let audience = condition.audience.unwrap_or(Audience::Beginner);
            for p in &corpus.selected {
                let key = explanation_key(dataset, p, audience, generator, templates);
                let e = cached(cache, &key, || format!("{p} ({generator}, {audience})"))?;
                inputs.explanations.insert(p.clone(), e);
            }
        }
        ConditionKind::Control => {
            let generator = cfg.primary_generator().map_err(CliError::usage)?;
            let key = explanation_key(Dataset::Custom, CONTROL_PARADIGM, Audience::Beginner, generator, templates);
            inputs.control = Some(cached(cache, &key, || format!("{CONTROL_PARADIGM} ({generator})"))?);
        }
        ConditionKind::Textbook => {
            let generator = cfg.primary_generator().map_err(CliError::usage)?;
            for p in corpus.all_paradigms() {
                let key = explanation_key(dataset, &p, Audience::Beginner, generator, templates);
                inputs.textbook.push(cached(cache, &key, || format!("{p} ({generator}, beginner)"))?);
            }
        }
        ConditionKind::FewShot => {
            let k = condition.shots.unwrap_or(gramprompt::templates::DEFAULT_SHOTS) as usize;
            for p in &corpus.selected {
                let held = &corpus.held_out[p];
                let shots = held[held.len().saturating_sub(k)..]
                    .iter()
                    .map(|s| (s.good.clone(), s.bad.clone()))
                    .collect();
                inputs.shots.insert(p.clone(), shots);
            }
        }
        ConditionKind::Base | ConditionKind::Cot => {}
    }
    Ok(inputs)
}

/// Everything that determines one run's judgments.
#[derive(Serialize)]
struct Fingerprint<'a> {
    dataset: Dataset,
    corpus_digest: &'a str,
    slice: Vec<&'a str>,
    per_paradigm_n: usize,
    condition: String,
    target_model: &'a str,
    backend: String,
    run_seed: u64,
    template_version: &'a str,
    system_text: Option<&'a str>,
    target_words: u32,
    generators: &'a [String],
}

pub fn run_dir_id(dataset: Dataset, target: &str, condition: &ConditionSpec) -> String {
    format!("{}__{}", dataset.as_str().to_lowercase(), runner::run_id(target, condition))
}

pub fn run(mut g: Globals, args: &RunArgs) -> Result<(), CliError> {
    if !args.conditions.is_empty() {
        g.cfg.conditions = args.conditions.clone();
    }
    if !args.targets.is_empty() {
        let known = g.cfg.targets.clone();
        g.cfg.targets = args
            .targets
            .iter()
            .map(|m| {
                known
                    .iter()
                    .find(|t| &t.model == m)
                    .cloned()
                    .unwrap_or(crate::config::TargetModel { model: m.clone(), group: None })
            })
            .collect();
    }
    if let Some(w) = args.workers {
        g.cfg.workers = w;
    }
    if let Some(n) = args.per_paradigm_n {
        g.cfg.per_paradigm_n = n;
    }
    if args.seed.is_some() {
        g.cfg.run_seed = args.seed;
    }
    g.cfg.validate()?;
    let conditions = g.cfg.parsed_conditions()?;
    if conditions.is_empty() {
        return Err(CliError::usage(anyhow!("no conditions given (use --conditions or `conditions`)")));
    }
    if g.cfg.targets.is_empty() {
        return Err(CliError::usage(anyhow!("no target models given (use --targets or `targets`)")));
    }
    let seed = resolve_seed(&mut g.cfg)?;
    let templates = g.templates()?;
    let cache = g.cache()?;
    let corpora = load_corpora(&g.cfg, &conditions)?;
    let runs_dir = g.runs_dir();
    fs::create_dir_all(&runs_dir)
        .with_context(|| format!("cannot create {}", runs_dir.display()))
        .map_err(CliError::data)?;
    fs::write(
        g.cfg.out_dir.join("config.resolved.json"),
        serde_json::to_string_pretty(&g.cfg).expect("config serializes") + "\n",
    )
    .context("cannot write resolved config")
    .map_err(CliError::data)?;

    let mut failed_trials = 0usize;
    let mut skipped = 0usize;
    let mut executed = 0usize;
    for corpus in &corpora {
        if corpus.slice.is_empty() {
            log::warn!("{}: no paradigms selected; skipping", corpus.dataset());
            continue;
        }
        for target in &g.cfg.targets {
            let backend = spec_for(&g.cfg, &target.model, args.backend.as_deref())?;
            let backend_label = args
                .backend
                .clone()
                .or_else(|| g.cfg.models.get(&target.model).and_then(|r| r.backend.clone()))
                .or_else(|| g.cfg.default_backend.clone())
                .unwrap_or_default();
            let mut client = None;
            for condition in &conditions {
                let id = run_dir_id(corpus.dataset(), &target.model, condition);
                let fingerprint = digest_json(&Fingerprint {
                    dataset: corpus.dataset(),
                    corpus_digest: &corpus.manifest.corpus_digest,
                    slice: corpus.slice.iter().map(|p| p.id.as_str()).collect(),
                    per_paradigm_n: g.cfg.per_paradigm_n,
                    condition: condition.label(),
                    target_model: &target.model,
                    backend: backend_label.clone(),
                    run_seed: seed,
                    template_version: templates.version(),
                    system_text: g.cfg.system_text.as_deref(),
                    target_words: g.cfg.target_words,
                    generators: &g.cfg.generators,
                });
                let dir = runs_dir.join(&id);
                if let Ok(existing) = read_manifest(&dir) {
                    if existing.is_finished() && dir.join("judgments.jsonl").is_file() {
                        if existing.config_fingerprint == fingerprint {
                            println!("{id}: up to date");
                            skipped += 1;
                            continue;
                        }
                        return Err(CliError::usage(anyhow!(
                            "run {id} already exists with a different configuration; use a new --out directory"
                        )));
                    }
                }
                let inputs = condition_inputs(&g.cfg, corpus, condition, &templates, &cache)?;
                if client.is_none() {
                    client = Some(client_for(&g.cfg, &target.model, &backend, &all_pairs(&corpora))?);
                }
                let spec = RunSpec {
                    run_id: id.clone(),
                    condition: condition.clone(),
                    target_model: target.model.clone(),
                    run_seed: seed,
                    corpus_digest: corpus.manifest.corpus_digest.clone(),
                    config_fingerprint: fingerprint,
                    sampling: None,
                    workers: g.cfg.workers,
                };
                let out = execute(
                    &corpus.slice,
                    &spec,
                    &inputs,
                    &templates,
                    client.as_ref().expect("client built above"),
                    Some(&runs_dir),
                )
                .map_err(|e| CliError::from(e).context(format!("run {id}")))?;
                executed += 1;
                let n = out.judgments.len();
                let correct = out.judgments.iter().filter(|j| j.correct).count();
                let unparsed = out
                    .judgments
                    .iter()
                    .filter(|j| j.choice == gramprompt::runner::Choice::Unparseable)
                    .count();
                let errors = out.judgments.iter().filter(|j| j.error.is_some()).count();
                failed_trials += errors;
                println!(
                    "{id}: {n} judgments, accuracy {:.1}%, unparseable {:.1}%{}",
                    100.0 * correct as f64 / n as f64,
                    100.0 * unparsed as f64 / n as f64,
                    if errors > 0 { format!(", {errors} backend failure(s)") } else { String::new() }
                );
            }
        }
    }
    println!("{executed} run(s) executed, {skipped} up to date; seed {seed}");
    if failed_trials > 0 {
        return Err(CliError::backend(anyhow!(
            "{failed_trials} trial(s) failed at the backend; they are logged as unparseable"
        )));
    }
    Ok(())
}

fn all_pairs(corpora: &[LoadedCorpus]) -> Vec<MinimalPair> {
    corpora.iter().flat_map(|c| c.slice.iter().cloned()).collect()
}

fn parse_groups(cfg: &RunConfig, flags: &[String]) -> Result<BTreeMap<String, Group>, CliError> {
    let mut groups = cfg.groups();
    for raw in flags {
        let (model, group) = raw
            .rsplit_once('=')
            .ok_or_else(|| CliError::usage(anyhow!("--group expects model=SLM or model=LLM, got `{raw}`")))?;
        let group = match group.to_ascii_uppercase().as_str() {
            "SLM" => Group::Slm,
            "LLM" => Group::Llm,
            other => return Err(CliError::usage(anyhow!("unknown group `{other}` (expected SLM or LLM)"))),
        };
        groups.insert(model.to_string(), group);
    }
    Ok(groups)
}

fn report_options(g: &Globals, groups: BTreeMap<String, Group>, force_mix: bool) -> ReportOptions {
    ReportOptions {
        model_order: g.cfg.targets.iter().map(|t| t.model.clone()).collect(),
        generator_order: g.cfg.generators.clone(),
        groups,
        gap: false,
        compare: Vec::new(),
        force_mix,
    }
}

pub fn report(g: &Globals, args: &ReportArgs) -> Result<(), CliError> {
    let runs_dir = args.runs.clone().unwrap_or_else(|| g.runs_dir());
    let runs = load_runs(&runs_dir)?;
    let mut options = report_options(g, parse_groups(&g.cfg, &args.groups)?, args.force_mix);
    options.gap = args.gap;
    options.compare = args
        .compare
        .chunks(2)
        .map(|c| (c[0].clone(), c[1].clone()))
        .collect();
    let bundle = build_report(&runs, &options)?;
    let dir = g.cfg.out_dir.join("report");
    bundle.write_to(&dir)?;
    for c in &bundle.comparisons {
        print_comparison(&c.a, &c.b, &c.comparison);
    }
    println!("{} run(s) scored; wrote {}", runs.len(), dir.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "undefined".into())
}

fn print_comparison(a: &str, b: &str, c: &PairedComparison) {
    println!(
        "{a} vs {b}: n={} mean_diff={:.3} sd_diff={:.3} t={} p={} d={}",
        c.n,
        c.mean_diff,
        c.sd_diff,
        fmt_opt(c.t_statistic, 3),
        fmt_opt(c.p_value, 4),
        fmt_opt(c.cohens_d, 3)
    );
}

pub fn compare(g: &Globals, args: &CompareArgs) -> Result<(), CliError> {
    let runs_dir = args.runs.clone().unwrap_or_else(|| g.runs_dir());
    let runs = load_runs(&runs_dir)?;
    let mut options = report_options(g, BTreeMap::new(), args.force_mix);
    options.compare = vec![(args.a.clone(), args.b.clone())];
    let bundle = build_report(&runs, &options)?;
    let c = &bundle.comparisons[0];
    print_comparison(&c.a, &c.b, &c.comparison);
    Ok(())
}

pub fn export_cache(g: &Globals, args: &ExportArgs) -> Result<(), CliError> {
    let cache = g.cache()?;
    let count = if args.archive.as_os_str() == "-" {
        export_explanations(&cache, io::stdout().lock())?
    } else {
        let file = fs::File::create(&args.archive)
            .with_context(|| format!("cannot create {}", args.archive.display()))
            .map_err(CliError::usage)?;
        let mut w = io::BufWriter::new(file);
        let n = export_explanations(&cache, &mut w)?;
        w.flush()
            .with_context(|| format!("cannot write {}", args.archive.display()))
            .map_err(CliError::data)?;
        n
    };
    eprintln!("exported {count} explanation(s)");
    Ok(())
}

pub fn import_cache(g: &Globals, args: &ImportArgs) -> Result<(), CliError> {
    let cache = g.cache()?;
    let count = import_explanations(&cache, &args.archive)?;
    println!("imported {count} explanation(s) into {}", cache.root().display());
    Ok(())
}
