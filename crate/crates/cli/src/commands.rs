use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde_json::json;
use trimkit::costmodel::{break_even, min_gain, profile_from_results, CostParams, Pricing, UsageProfile};
use trimkit::distill::{
    make_pairs, read_pairs_jsonl, write_pairs_jsonl, PairLine, PairRecord, PromptTemplate, TermSet, TermSource,
};
use trimkit::http::EndpointConfig;
use trimkit::inferability::{level_set, rank_terms, Averaging, InferabilityReport, RankOptions};
use trimkit::lmscore::{ExternalScorer, MaskedScorer, NGramModel};
use trimkit::metrics::{write_pair_csv, Embedder, ExternalEmbedder, TfIdf};
use trimkit::pipeline::{
    exploratory_count, extra_instruction_tokens, run_level_sweep, run_offline_eval, run_trim, write_sweep_csv,
    BeamReconstructor, Config, GenerationClient, IdentityReconstructor, PerfectOracle, Reconstructor, SweepMode,
    SweepOptions,
};
use trimkit::reconstruct::{reconstruct, reconstruct_batch, ReconstructError, Reconstruction, ReconstructionConfig};
use trimkit::textcore::{detokenize, load_corpus, load_lexicon, tokenize, Corpus, CorpusFormat, Lexicon};

use crate::args::*;

/// A problem with how the tool was invoked; reported with exit status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

pub struct Ctx {
    pub cfg: Config,
    pub workers: Option<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::resolve(cli.config.as_deref()).map_err(|e| usage(e.to_string()))?;
    let workers = cli.workers.or(cfg.workers);
    if workers == Some(0) {
        return Err(usage("--workers must be at least 1"));
    }
    let ctx = Ctx { cfg, workers };
    match cli.command {
        Command::TrainLm(a) => train_lm(&ctx, a),
        Command::Rank(a) => rank(&ctx, a),
        Command::Distill(a) => distill(&ctx, a),
        Command::Reconstruct(a) => reconstruct_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Cost(a) => cost(&ctx, a),
        Command::Trim(a) => trim(&ctx, a),
        Command::Count(a) => count(&ctx, a),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn optional_corpus(args: &CorpusArgs, ctx: &Ctx) -> Result<Option<Corpus>> {
    let Some(path) = args.corpus.as_ref().or(ctx.cfg.corpus.path.as_ref()) else {
        return Ok(None);
    };
    let format = match (args.format, &ctx.cfg.corpus.format) {
        (Some(FormatArg::Plain), _) => CorpusFormat::Plain,
        (Some(FormatArg::Jsonl), _) => CorpusFormat::Jsonl,
        (None, Some(name)) => name.parse().map_err(|e: trimkit::textcore::CorpusError| usage(e.to_string()))?,
        (None, None) => CorpusFormat::from_path(path),
    };
    let loaded = load_corpus(path, format, args.strict || ctx.cfg.corpus.strict)?;
    for w in &loaded.warnings {
        log::warn!("{}:{}: {}", path.display(), w.line, w.message);
    }
    log::info!("loaded {} fragment(s) from {}", loaded.corpus.len(), path.display());
    Ok(Some(loaded.corpus))
}

fn required_corpus(args: &CorpusArgs, ctx: &Ctx) -> Result<Corpus> {
    optional_corpus(args, ctx)?.ok_or_else(|| usage("no corpus: pass --corpus or set [corpus] path in the config"))
}

fn language_model(args: &LmArgs, corpus: Option<&Corpus>, ctx: &Ctx) -> Result<NGramModel> {
    if let Some(path) = args.lm.as_ref().or(ctx.cfg.scorer.model.as_ref()) {
        return NGramModel::load(path).with_context(|| format!("cannot load model {}", path.display()));
    }
    let Some(corpus) = corpus else {
        return Err(usage("no language model: pass --lm, or --corpus to train one"));
    };
    let order = args.order.unwrap_or(ctx.cfg.scorer.order);
    let k = args.smoothing_k.unwrap_or(ctx.cfg.scorer.smoothing_k);
    log::info!("training an order-{order} model on {}", corpus.name());
    Ok(NGramModel::train(corpus, order, k)?)
}

fn read_report(path: &Path) -> Result<InferabilityReport> {
    InferabilityReport::read_csv(open(path)?, &file_stem(path))
        .with_context(|| format!("cannot read ranking {}", path.display()))
}

fn optional_terms(args: &TermsArgs, ctx: &Ctx) -> Result<Option<TermSet>> {
    if let Some(path) = &args.report {
        let level = args.level.ok_or_else(|| usage("--report needs --level"))?;
        let step = args.step.unwrap_or(ctx.cfg.inferability.step);
        let report = read_report(path)?;
        let lexicon = level_set(&report, level, step)?;
        let source = TermSource::Report {
            report_id: file_stem(path),
            level,
        };
        return Ok(Some(TermSet::new(lexicon, source)?));
    }
    match args.terms.as_ref().or(ctx.cfg.terms.as_ref()) {
        Some(spec) => Ok(Some(TermSet::new(load_lexicon(spec)?, TermSource::Manual)?)),
        None => Ok(None),
    }
}

fn required_terms(args: &TermsArgs, ctx: &Ctx) -> Result<TermSet> {
    optional_terms(args, ctx)?.ok_or_else(|| usage("no term set: pass --terms, or --report with --level"))
}

fn recon_config(args: &ReconArgs, ctx: &Ctx) -> Result<ReconstructionConfig> {
    let mut cfg = ctx.cfg.reconstruction.clone();
    if let Some(w) = args.beam_width {
        cfg.beam_width = w;
    }
    if let Some(m) = args.max_consecutive {
        cfg.max_consecutive_insertions = m;
    }
    if let Some(p) = args.penalty {
        cfg.insertion_penalty = p;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn embedder_for(url: Option<&str>, docs: &[trimkit::textcore::TokenSeq]) -> Embedder {
    match url {
        Some(url) => Embedder::External(ExternalEmbedder::new(EndpointConfig::new(url))),
        None => Embedder::TfIdf(TfIdf::fit(docs)),
    }
}

fn train_lm(ctx: &Ctx, a: TrainLmArgs) -> Result<()> {
    let corpus = required_corpus(&a.corpus, ctx)?;
    let order = a.order.unwrap_or(ctx.cfg.scorer.order);
    let k = a.smoothing_k.unwrap_or(ctx.cfg.scorer.smoothing_k);
    let model = NGramModel::train(&corpus, order, k).map_err(|e| usage(e.to_string()))?;
    log::info!("vocabulary size {}", model.vocab_size());
    model.write_to(output(&a.out)?)?;
    Ok(())
}

fn rank(ctx: &Ctx, a: RankArgs) -> Result<()> {
    let corpus = required_corpus(&a.corpus, ctx)?;
    let spec = a.lexicon.as_deref().or(ctx.cfg.lexicon.as_deref()).unwrap_or("extended");
    let wordset = load_lexicon(spec)?;
    let timeout = a.timeout.unwrap_or(30.0);
    let retries = a.retries.unwrap_or(0);
    let scorer: Box<dyn MaskedScorer> = if let Some(url) = a.scorer_url.as_ref().or(ctx.cfg.scorer.external_url.as_ref())
    {
        let mut ep = EndpointConfig::new(url.clone());
        ep.timeout_secs = timeout;
        ep.retries = retries;
        Box::new(ExternalScorer::http(ep))
    } else if let Some(cmd) = &a.scorer_cmd {
        Box::new(ExternalScorer::spawn(cmd, &a.scorer_args, Duration::from_secs_f64(timeout), retries)?)
    } else {
        Box::new(language_model(&a.lm, Some(&corpus), ctx)?)
    };
    let opts = RankOptions {
        window: a.window.unwrap_or(ctx.cfg.inferability.window),
        min_occurrences: a.min_occurrences.unwrap_or(ctx.cfg.inferability.min_occurrences),
        averaging: if a.per_fragment {
            Averaging::PerFragment
        } else {
            Averaging::PerOccurrence
        },
        workers: ctx.workers,
    };
    let report = rank_terms(&corpus, &wordset, scorer.as_ref(), &opts)?;
    if !report.skipped.is_empty() {
        log::info!("{} word(s) never occur: {}", report.skipped.len(), report.skipped.join(" "));
    }
    let low = report.entries.iter().filter(|e| e.low_confidence).count();
    if low > 0 {
        log::warn!("{low} word(s) occur fewer than {} times", opts.min_occurrences);
    }
    report.write_csv(output(&a.out)?)?;
    Ok(())
}

fn distill(ctx: &Ctx, a: DistillArgs) -> Result<()> {
    let corpus = required_corpus(&a.corpus, ctx)?;
    let terms = required_terms(&a.terms, ctx)?;
    let lines: Vec<PairLine> = make_pairs(&corpus, &terms).map(|r| PairLine::from_record(&r)).collect();
    let saved: Vec<f64> = lines.iter().filter_map(|l| l.saved_pct).collect();
    if !saved.is_empty() {
        let mean = saved.iter().sum::<f64>() / saved.len() as f64;
        log::info!("{} pair(s), mean saved tokens {mean:.2}%", lines.len());
    }
    write_pairs_jsonl(output(&a.out)?, &lines)?;
    Ok(())
}

fn read_records(path: &Path) -> Result<(Vec<PairLine>, Vec<PairRecord>)> {
    let lines = read_pairs_jsonl(open(path)?).with_context(|| format!("cannot read pairs {}", path.display()))?;
    let mut records = Vec::with_capacity(lines.len());
    for line in &lines {
        let pair = line.to_pair()?;
        records.push(PairRecord {
            id: line.id,
            no_removal: pair.removed_positions.is_empty(),
            pair,
        });
    }
    Ok((lines, records))
}

fn reconstruct_cmd(ctx: &Ctx, a: ReconstructArgs) -> Result<()> {
    let terms = required_terms(&a.terms, ctx)?;
    let cfg = recon_config(&a.recon, ctx)?;
    let corpus = optional_corpus(&a.corpus, ctx)?;
    let model = language_model(&a.lm, corpus.as_ref(), ctx)?;
    let mut out = output(&a.out)?;
    if let Some(text) = &a.text {
        let r = reconstruct(&tokenize(text), &terms, &model, &cfg)?;
        log::info!("inserted {} word(s), log-probability {:.4}", r.inserted_positions.len(), r.score);
        writeln!(out, "{}", detokenize(&r.output))?;
        out.flush()?;
        return Ok(());
    }
    let path = a.pairs.as_ref().expect("clap requires --pairs without --text");
    let (mut lines, records) = read_records(path)?;
    let inputs: Vec<_> = records.iter().map(|r| r.pair.distilled.clone()).collect();
    let results = reconstruct_batch(&inputs, terms.lexicon(), &model, &cfg, ctx.workers);
    for (line, result) in lines.iter_mut().zip(results) {
        let r = result.with_context(|| format!("pair {}", line.id))?;
        line.reconstructed = Some(detokenize(&r.output));
        line.inserted_positions = Some(r.inserted_positions);
        line.score = Some(r.score);
    }
    write_pairs_jsonl(out, &lines)?;
    Ok(())
}

/// Serves reconstructions already stored in a pairs file.
struct FileReconstructor(HashMap<usize, Reconstruction>);

impl FileReconstructor {
    fn from_lines(lines: &[PairLine]) -> Result<Self> {
        let mut map = HashMap::with_capacity(lines.len());
        for line in lines {
            let Some(text) = &line.reconstructed else {
                bail!("pair {} has no reconstructed text; run `trimkit reconstruct` first", line.id);
            };
            let r = Reconstruction {
                output: tokenize(text),
                inserted_positions: line.inserted_positions.clone().unwrap_or_default(),
                score: line.score.unwrap_or(0.0),
            };
            if map.insert(line.id, r).is_some() {
                bail!("pair id {} occurs twice", line.id);
            }
        }
        Ok(FileReconstructor(map))
    }
}

impl Reconstructor for FileReconstructor {
    fn name(&self) -> &str {
        "file"
    }

    fn reconstruct_pair(&self, record: &PairRecord) -> Result<Reconstruction, ReconstructError> {
        Ok(self.0[&record.id].clone())
    }
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let (lines, records) = read_records(&a.pairs)?;
    let terms = optional_terms(&a.terms, ctx)?;
    let theta = match (&a.theta_lexicon, &terms) {
        (Some(spec), _) => load_lexicon(spec)?,
        (None, Some(t)) => t.lexicon().clone(),
        (None, None) => return Err(usage("no Θ lexicon: pass --theta-lexicon or --terms")),
    };
    let corpus = optional_corpus(&a.corpus, ctx)?;
    let model = match language_model(&a.lm, corpus.as_ref(), ctx) {
        Ok(m) => m,
        Err(e) if e.is::<UsageError>() => {
            log::info!("no --lm or --corpus; training the model on the pair originals");
            let originals = Corpus::from_texts(file_stem(&a.pairs), lines.iter().map(|l| l.original.clone()));
            language_model(&a.lm, Some(&originals), ctx)?
        }
        Err(e) => return Err(e),
    };
    let beam;
    let file;
    let reconstructor: &dyn Reconstructor = match a.reconstructor {
        ReconstructorArg::Beam => {
            let t = terms
                .as_ref()
                .ok_or_else(|| usage("the beam reconstructor needs --terms or --report"))?;
            beam = BeamReconstructor {
                model: &model,
                terms: t.lexicon(),
                config: recon_config(&a.recon, ctx)?,
            };
            &beam
        }
        ReconstructorArg::Identity => &IdentityReconstructor,
        ReconstructorArg::Oracle => &PerfectOracle,
        ReconstructorArg::File => {
            file = FileReconstructor::from_lines(&lines)?;
            &file
        }
    };
    let originals: Vec<_> = records.iter().map(|r| r.pair.original.clone()).collect();
    let embedder = embedder_for(a.embed_url.as_deref(), &originals);
    let result = run_offline_eval(&records, reconstructor, &theta, &model, &embedder, ctx.workers)?;
    if !result.skipped.is_empty() {
        log::warn!("{} pair(s) with an empty original skipped", result.skipped.len());
    }
    for col in &result.summary.columns {
        log::info!("{:<22} mean {:>10.4}  std {:>10.4}", col.name, col.mean, col.std);
    }
    write_pair_csv(output(&a.out)?, &result.rows())?;
    Ok(())
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> Result<()> {
    let corpus = required_corpus(&a.corpus, ctx)?;
    let report = read_report(&a.report)?;
    let model = language_model(&a.lm, Some(&corpus), ctx)?;
    let theta_lexicon = a.theta_lexicon.as_deref().map(load_lexicon).transpose()?;
    let opts = SweepOptions {
        max_level: a.levels.unwrap_or(12),
        step: a.step.unwrap_or(ctx.cfg.inferability.step),
        reconstruction: recon_config(&a.recon, ctx)?,
        mode: match a.mode {
            SweepModeArg::Beam => SweepMode::Beam,
            SweepModeArg::Identity => SweepMode::Identity,
            SweepModeArg::Oracle => SweepMode::Oracle,
        },
        theta_lexicon,
        workers: ctx.workers,
    };
    if opts.max_level == 0 || opts.step == 0 {
        return Err(usage("--levels and --step must be at least 1"));
    }
    let docs: Vec<_> = corpus.iter().map(|f| tokenize(&f.text)).collect();
    let embedder = embedder_for(a.embed_url.as_deref(), &docs);
    let rows = run_level_sweep(&corpus, &report, &model, &embedder, &opts)?;
    write_sweep_csv(output(&a.out)?, &rows)?;
    Ok(())
}

fn cost_params(
    ctx: &Ctx,
    file: Option<&Path>,
    overrides: [Option<f64>; 4],
) -> Result<(CostParams, String)> {
    let p = &ctx.cfg.pricing;
    let file = file.or(p.file.as_deref());
    let (base, currency) = match file {
        Some(path) => {
            let pricing = Pricing::load(path).with_context(|| format!("cannot read pricing {}", path.display()))?;
            (Some(pricing.params), pricing.currency)
        }
        None => (None, "USD".to_string()),
    };
    let pick = |cli: Option<f64>, cfg: Option<f64>, base: Option<f64>| cli.or(cfg).or(base);
    let [gi, go, ri, ro] = overrides;
    let gen_input_price = pick(gi, p.gen_input_price, base.map(|b| b.gen_input_price));
    let gen_output_price = pick(go, p.gen_output_price, base.map(|b| b.gen_output_price));
    let (Some(gen_input_price), Some(gen_output_price)) = (gen_input_price, gen_output_price) else {
        return Err(usage(
            "no generation prices: pass --pricing or --gen-input-price and --gen-output-price",
        ));
    };
    let params = CostParams {
        gen_input_price,
        gen_output_price,
        recon_input_price: pick(ri, p.recon_input_price, base.map(|b| b.recon_input_price)).unwrap_or(0.0),
        recon_output_price: pick(ro, p.recon_output_price, base.map(|b| b.recon_output_price)).unwrap_or(0.0),
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    Ok((params, currency))
}

fn cost(ctx: &Ctx, a: CostArgs) -> Result<()> {
    let (params, currency) = cost_params(
        ctx,
        a.pricing.as_deref(),
        [a.gen_input_price, a.gen_output_price, a.recon_input_price, a.recon_output_price],
    )?;
    let extra_input = a.extra_input.unwrap_or(0.0);
    let profile = match &a.results {
        Some(path) => profile_from_results(open(path)?, extra_input)?,
        None => UsageProfile {
            extra_input,
            gained_output: a.gain.unwrap_or(0.0),
            recon_input: a.recon_input.unwrap_or(0.0),
            recon_output: a.recon_output.unwrap_or(0.0),
        },
    };
    profile.validate().map_err(|e| usage(e.to_string()))?;
    let wtt = a.words_to_tokens.unwrap_or(ctx.cfg.pricing.words_to_tokens);
    let profile = profile.scaled(wtt).map_err(|e| usage(e.to_string()))?;
    let verdict = break_even(&params, &profile);
    let threshold = min_gain(&params, profile.extra_input, profile.recon_input, profile.recon_output);
    let mut out = output(&None)?;
    writeln!(out, "saves={}", verdict.saves)?;
    writeln!(out, "margin={}", verdict.margin)?;
    writeln!(out, "lhs={}", verdict.lhs)?;
    writeln!(out, "rhs={}", verdict.rhs)?;
    writeln!(out, "gain={}", profile.gained_output)?;
    match threshold {
        Ok(g) => writeln!(out, "min_gain={g}")?,
        Err(e) => {
            log::warn!("{e}");
            writeln!(out, "min_gain=undefined")?
        }
    }
    writeln!(out, "currency={currency}")?;
    out.flush()?;
    Ok(())
}

fn trim(ctx: &Ctx, a: TrimArgs) -> Result<()> {
    let terms = required_terms(&a.terms, ctx)?;
    let template = PromptTemplate::resolve(a.template.as_deref().unwrap_or("distilled"))?;
    let plain = PromptTemplate::builtin("plain")?;
    let extra = extra_instruction_tokens(&terms, &a.question, &template, &plain).map_err(|e| usage(e.to_string()))?;
    let mut out = output(&None)?;
    if a.dry_run {
        let prompt = trimkit::distill::build_prompt(terms.lexicon(), &a.question, &template)?;
        serde_json::to_writer_pretty(
            &mut out,
            &json!({ "prompt": prompt, "extra_instruction_tokens": extra }),
        )?;
        writeln!(out)?;
        out.flush()?;
        return Ok(());
    }
    let section = ctx.cfg.endpoint.as_ref();
    let url = a
        .endpoint_url
        .clone()
        .or_else(|| section.map(|s| s.url.clone()))
        .ok_or_else(|| usage("no endpoint: pass --endpoint-url or set [endpoint] url in the config"))?;
    let endpoint = EndpointConfig {
        url,
        auth_header: a.auth_header.clone().or_else(|| section.and_then(|s| s.auth_header.clone())),
        auth_value: a.auth_value.clone().or_else(|| section.and_then(|s| s.auth_value.clone())),
        timeout_secs: a.timeout.or(section.map(|s| s.timeout_secs)).unwrap_or(30.0),
        retries: a.retries.or(section.map(|s| s.retries)).unwrap_or(0),
    };
    let temperature = a.temperature.or(section.map(|s| s.temperature)).unwrap_or(0.0);
    let concurrency = a.max_concurrency.or(section.map(|s| s.max_concurrency)).unwrap_or(4);
    let recon = recon_config(&a.recon, ctx)?;
    let corpus = optional_corpus(&a.corpus, ctx)?;
    let model = language_model(&a.lm, corpus.as_ref(), ctx)?;
    let client = GenerationClient::new(endpoint, concurrency.max(1));
    let outcome = run_trim(
        &a.question,
        &terms,
        &template,
        &client,
        temperature,
        a.session.as_deref(),
        &model,
        &recon,
    )?;
    let mut value = serde_json::to_value(&outcome)?;
    value["extra_instruction_tokens"] = json!(extra);
    if a.pricing.is_some() || ctx.cfg.pricing.file.is_some() || ctx.cfg.pricing.gen_output_price.is_some() {
        let (params, currency) = cost_params(ctx, a.pricing.as_deref(), [None; 4])?;
        let profile = outcome
            .usage_profile(extra as f64)
            .scaled(ctx.cfg.pricing.words_to_tokens)
            .map_err(|e| usage(e.to_string()))?;
        value["break_even"] = serde_json::to_value(break_even(&params, &profile))?;
        value["currency"] = json!(currency);
    }
    serde_json::to_writer_pretty(&mut out, &value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn count(ctx: &Ctx, a: CountArgs) -> Result<()> {
    let corpus = required_corpus(&a.corpus, ctx)?;
    let spec = a.lexicon.as_deref().or(ctx.cfg.lexicon.as_deref()).unwrap_or("exploratory23");
    let lexicon: Lexicon = load_lexicon(spec)?;
    let stats = exploratory_count(&corpus, &lexicon)?;
    let mut out = output(&None)?;
    serde_json::to_writer(&mut out, &stats)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
