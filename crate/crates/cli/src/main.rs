use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::info;

use lexlab_core::audit::{AuditFinding, AuditReport, Verdict, DEFAULT_SIM_THRESHOLD};
use lexlab_core::consult::{ConsultService, JsonlStore};
use lexlab_core::corpus::{ingest_statutes, read_statute_jsonl, RecordSchema};
use lexlab_core::evaluator::{
    aggregate_rankings, eval_multichoice, hallucination_proportions, HallucinationRates, pairwise_winrate, render_accuracy_table,
    render_hallucination_table, render_pairwise, render_rankings, EvalOptions, EvalRunMeta, PairwiseRecord,
};
use lexlab_core::forge::{
    assemble_consult_sft, build_charge_benchmark, build_distill_prompt, build_icl_transform_prompt, build_jem_items,
    confusable_charge_names, read_jsonl, render_charge_summary, write_jsonl, ChargeDocument, ConsultSeed, ConsultSftOptions,
    DistillMode, Exemplar, ForgeRecord, JemConfig, OptionLabel, PatternTable, QualityGate, SeedMeta, SftKind, TransformStats,
};
use lexlab_core::gateway::{BackendConfig, BackendKind, ChatRequest};
use lexlab_core::retriever::{evaluate_retrieval, DistractorPolicy, GoldAnnotation, DEFAULT_K};
use lexlab_core::{ArticleIndex, Auditor, EvalChoiceItem, EvalReport, Gateway, HumanRankRecord, LexicalIndex, MCQItem, TitleAliases};

#[derive(Parser)]
#[command(name = "lexlab", version, about = "Statute retrieval, dataset forging, evaluation and consultation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build an article index from statute JSONL.
    Ingest {
        #[arg(long, alias = "input")]
        statutes: PathBuf,
        #[arg(long)]
        aliases: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-k articles for a query.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(short, long)]
        query: String,
        #[arg(short, long, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Macro-Recall@k over annotated queries (`{query, gold: [{title, article}]}` JSONL).
    RetrieverEval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(short, long = "k", alias = "ks", value_delimiter = ',', default_value = "1,3,5")]
        ks: Vec<usize>,
    },
    #[command(subcommand)]
    Forge(ForgeCmd),
    /// Perplexity-based multiple-choice evaluation.
    Eval {
        #[arg(long)]
        items: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        /// Run metadata, e.g. `stage=s3,retrieval=false`.
        #[arg(long, default_value = "")]
        meta: String,
        #[arg(long, default_value = "run")]
        run_id: String,
        /// Dataset name; defaults to the items file stem.
        #[arg(long)]
        dataset: Option<String>,
        /// Count failed items as wrong instead of skipping them.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(subcommand)]
    Report(ReportCmd),
    /// Check the article citations in responses.
    Audit {
        #[arg(long)]
        index: PathBuf,
        /// `{id, text}` JSONL; one finding per line plus a summary record go to `--out`.
        #[arg(long, conflicts_with = "input")]
        responses: Option<PathBuf>,
        /// A single plain-text response; stdin when neither this nor `--responses` is given.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SIM_THRESHOLD)]
        threshold: f64,
        #[arg(long, requires = "responses")]
        out: Option<PathBuf>,
    },
    /// Answer one question with retrieval.
    Consult {
        #[arg(short, long)]
        question: String,
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(short, long, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Answer questions (one per line) with and without retrieval.
    ConsultBatch {
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        questions: PathBuf,
        #[arg(short, long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-turn session over stdin, one message per line.
    Chat {
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(short, long, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Serve the consultation API.
    Serve {
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Persist sessions as JSONL under this directory.
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        systems: Vec<String>,
    },
}

#[derive(Subcommand)]
enum ForgeCmd {
    /// Regex-transform MCQ options into true/false queries.
    Transform {
        #[arg(long, alias = "in")]
        items: PathBuf,
        #[arg(long)]
        patterns: Option<PathBuf>,
        #[arg(long)]
        gate: Option<PathBuf>,
        /// Three exemplars; pairs no pattern covers get an ICL prompt record.
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distillation prompts (or, with a backend, SFT examples) for true/false queries.
    Distill {
        #[command(flatten)]
        io: DistillIo,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// `distill --mode q2ea`.
    Q2ea(DistillIo),
    /// `distill --mode qa2e`.
    Qa2e(DistillIo),
    /// Consultation SFT examples with sampled distractor articles.
    Consult {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, alias = "in")]
        seeds: PathBuf,
        #[arg(long, default_value_t = 2)]
        distractors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_disclaimer: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// One two-choice evaluation item per MCQ option.
    Jem {
        #[arg(long, alias = "in")]
        items: PathBuf,
        #[arg(long)]
        english: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nine-way charge prediction benchmark.
    Charges {
        #[arg(long, alias = "in")]
        docs: PathBuf,
        #[arg(long, value_delimiter = ',')]
        charges: Option<Vec<String>>,
        #[arg(long, default_value_t = 10)]
        per_charge: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DistillIo {
    /// True/false query records from `forge transform`.
    #[arg(long, alias = "in")]
    queries: PathBuf,
    /// Call this backend and write SFT examples instead of prompt records.
    #[arg(long)]
    backend: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Q2ea,
    Qa2e,
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Accuracy table from eval reports.
    Accuracy { reports: Vec<PathBuf> },
    /// Rank proportions from ranking ballots.
    Rankings {
        #[arg(long, alias = "in")]
        ballots: PathBuf,
        #[arg(long, value_delimiter = ',')]
        systems: Vec<String>,
        /// Also write the aggregate as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Win rates from pairwise judgments.
    Pairwise {
        #[arg(long, alias = "in")]
        records: PathBuf,
        #[arg(long, default_value = "A")]
        a: String,
        #[arg(long, default_value = "B")]
        b: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// H1/H2 proportions per system, as `label=responses.jsonl` (a bare path is labelled by its stem).
    Hallu {
        #[arg(long = "in")]
        flagged: Vec<String>,
        inputs: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BackendArgs {
    /// Backend config JSON; the LEXLAB_LLM_* environment when absent.
    #[arg(long)]
    backend: Option<PathBuf>,
}

fn load_backend(path: Option<&Path>, kind: BackendKind) -> Result<Gateway> {
    let cfg = match path {
        Some(p) => {
            let mut cfg = BackendConfig::from_json(&std::fs::read_to_string(p).with_context(|| p.display().to_string())?)?;
            // mock tables are relative to the config file
            if let Some(table) = cfg.mock.as_mut().and_then(|m| m.table.as_mut()) {
                if table.is_relative() {
                    *table = p.parent().unwrap_or(Path::new(".")).join(&*table);
                }
            }
            cfg
        }
        None => BackendConfig::from_env(kind)?,
    };
    let gw = cfg.connect()?;
    info!(backend = %gw.describe(), "connected");
    Ok(gw)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| path.display().to_string())?))
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(open(path)?).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| path.display().to_string())?);
    write_jsonl(&mut w, records)?;
    w.flush()?;
    Ok(())
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_json<T: Serialize>(path: Option<&Path>, v: &T) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, serde_json::to_string_pretty(v)?).with_context(|| p.display().to_string())?;
    }
    Ok(())
}

fn load_index(path: &Path) -> Result<(Arc<ArticleIndex>, Arc<LexicalIndex>)> {
    let idx = Arc::new(ArticleIndex::load(path).with_context(|| path.display().to_string())?);
    let lex = Arc::new(LexicalIndex::with_defaults(&idx)?);
    Ok((idx, lex))
}

fn service(index: &Path, backend: &BackendArgs, k: usize) -> Result<ConsultService> {
    let (idx, lex) = load_index(index)?;
    let gw = Arc::new(load_backend(backend.backend.as_deref(), BackendKind::HttpChat)?);
    let auditor = Auditor::new(idx.clone(), DEFAULT_SIM_THRESHOLD)?;
    Ok(ConsultService::new(idx, lex, gw, auditor).with_default_k(k))
}

/// Eval items may be plain or wrapped as forge records.
#[derive(Deserialize)]
#[serde(untagged)]
enum ItemLine {
    Plain(EvalChoiceItem),
    Record(ForgeRecord),
}

fn read_eval_items(path: &Path) -> Result<Vec<EvalChoiceItem>> {
    read_lines::<ItemLine>(path)?
        .into_iter()
        .map(|l| match l {
            ItemLine::Plain(i) | ItemLine::Record(ForgeRecord::EvalItem(i)) => Ok(i),
            ItemLine::Record(_) => bail!("{}: not an eval item", path.display()),
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct AuditedResponse {
    id: String,
    #[serde(default)]
    audit: Option<AuditReport>,
}

#[derive(Deserialize)]
struct ResponseLine {
    id: String,
    text: String,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum FindingLine<'a> {
    Finding {
        response_id: &'a str,
        #[serde(flatten)]
        finding: &'a AuditFinding,
    },
    Summary {
        responses: usize,
        findings: usize,
        valid: usize,
        h1: usize,
        h2: usize,
        #[serde(flatten)]
        rates: HallucinationRates,
    },
}

fn audit_responses(auditor: &Auditor, responses: &Path, out: Option<&Path>) -> Result<()> {
    let responses: Vec<ResponseLine> = read_lines(responses)?;
    let reports = responses
        .iter()
        .map(|r| auditor.audit(&r.text).with_context(|| format!("response {}", r.id)))
        .collect::<Result<Vec<_>>>()?;
    let mut lines = Vec::new();
    for (r, report) in responses.iter().zip(&reports) {
        lines.extend(report.findings.iter().map(|finding| FindingLine::Finding { response_id: &r.id, finding }));
    }
    let all = || reports.iter().flat_map(|r| &r.findings);
    let count = |v: Verdict| all().filter(|f| f.verdict == v).count();
    let paired: Vec<(&str, AuditReport)> = responses.iter().map(|r| r.id.as_str()).zip(reports.iter().cloned()).collect();
    let summary = FindingLine::Summary {
        responses: responses.len(),
        findings: all().count(),
        valid: count(Verdict::Valid),
        h1: count(Verdict::H1),
        h2: count(Verdict::H2),
        rates: hallucination_proportions(&paired)?,
    };
    match out {
        Some(p) => {
            lines.push(summary);
            write_lines(p, &lines)?;
            println!("{} findings over {} responses", lines.len() - 1, responses.len());
        }
        None => print_json(&summary)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Ingest { statutes, aliases, out } => {
            let aliases = match aliases {
                Some(p) => TitleAliases::from_json(&std::fs::read_to_string(&p)?)?,
                None => TitleAliases::new(),
            };
            let records = read_statute_jsonl(open(&statutes)?, &RecordSchema::default())?;
            let idx = ingest_statutes(records, aliases)?;
            idx.save(&out)?;
            print_json(idx.build_stats())?;
        }
        Cmd::Retrieve { index, query, k } => {
            let (_, lex) = load_index(&index)?;
            print_json(&lex.retrieve(&query, k)?)?;
        }
        Cmd::RetrieverEval { index, gold, ks } => {
            let (_, lex) = load_index(&index)?;
            let gold: Vec<GoldAnnotation> = read_lines(&gold)?;
            let kmax = ks.iter().copied().max().unwrap_or(DEFAULT_K);
            let runs = gold
                .into_iter()
                .map(|g| Ok((lex.retrieve(&g.query, kmax)?, g)))
                .collect::<Result<Vec<_>>>()?;
            print_json(&evaluate_retrieval(&runs, &ks)?.macro_recall_at)?;
        }
        Cmd::Forge(f) => forge(f)?,
        Cmd::Eval { items, backend, meta, run_id, dataset, strict, out } => {
            let dataset = dataset.unwrap_or_else(|| items.file_stem().unwrap_or_default().to_string_lossy().into_owned());
            let meta = EvalRunMeta::new(run_id, dataset).apply_spec(&meta)?;
            let items = read_eval_items(&items)?;
            let gw = load_backend(backend.backend.as_deref(), BackendKind::HttpScore)?;
            let report = eval_multichoice(&gw, &items, meta, EvalOptions { strict })?;
            println!(
                "accuracy {:.4} ({} / {} evaluated, {} failed)",
                report.accuracy, report.correct, report.evaluated, report.failed
            );
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            }
        }
        Cmd::Report(r) => report(r)?,
        Cmd::Audit { index, responses, input, threshold, out } => {
            let (idx, _) = load_index(&index)?;
            let auditor = Auditor::new(idx, threshold)?;
            if let Some(responses) = responses {
                return audit_responses(&auditor, &responses, out.as_deref());
            }
            let mut text = String::new();
            match input {
                Some(p) => text = std::fs::read_to_string(p)?,
                None => {
                    std::io::stdin().read_to_string(&mut text)?;
                }
            }
            print_json(&auditor.audit(&text)?)?;
        }
        Cmd::Consult { question, index, backend, k } => {
            let svc = service(&index, &backend, k)?;
            let session = svc.create_session()?;
            let turn = svc.consult(&session.session_id, &question, &Default::default())?;
            println!("{}", turn.answer);
            for f in &turn.audit.findings {
                eprintln!("  {} {:?}", f.citation.render_zh(), f.verdict);
            }
        }
        Cmd::ConsultBatch { index, backend, questions, k, out } => {
            let svc = service(&index, &backend, k)?;
            let qs: Vec<String> = open(&questions)?
                .lines()
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
            let mut all = svc.run_condition_batch(&qs, false)?;
            all.extend(svc.run_condition_batch(&qs, true)?);
            let failed = all.iter().filter(|r| r.error.is_some()).count();
            write_lines(&out, &all)?;
            println!("{} responses, {failed} failed", all.len());
        }
        Cmd::Chat { index, backend, k } => {
            let svc = service(&index, &backend, k)?;
            let session = svc.create_session()?;
            eprintln!("session {}", session.session_id);
            for line in std::io::stdin().lock().lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match svc.consult(&session.session_id, &line, &Default::default()) {
                    Ok(turn) => {
                        println!("{}", turn.answer);
                        for f in &turn.audit.findings {
                            eprintln!("  {} {:?}", f.citation.render_zh(), f.verdict);
                        }
                    }
                    Err(e) => eprintln!("error: {e}"),
                }
            }
        }
        Cmd::Serve { index, backend, host, port, sessions, systems } => {
            let addr = SocketAddr::new(host, port);
            let mut svc = service(&index, &backend, DEFAULT_K)?;
            if let Some(dir) = sessions {
                svc = svc.with_store(Arc::new(JsonlStore::open(dir)?));
            }
            let state = lexlab_server::AppState::new(svc).with_ballots(lexlab_server::BallotBox::new(systems));
            tokio::runtime::Runtime::new()?.block_on(lexlab_server::serve(addr, state))?;
        }
    }
    Ok(())
}

fn forge(cmd: ForgeCmd) -> Result<()> {
    match cmd {
        ForgeCmd::Transform { items, patterns, gate, exemplars, out } => {
            let items: Vec<MCQItem> = read_lines(&items)?;
            for it in &items {
                it.validate()?;
            }
            let table = match patterns {
                Some(p) => PatternTable::from_json(&std::fs::read_to_string(p)?)?,
                None => PatternTable::default(),
            };
            let gate: QualityGate = match gate {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => QualityGate::default(),
            };
            let (queries, stats) = table.transform_all(&items, &gate);
            let mut records: Vec<ForgeRecord> = queries.into_iter().map(ForgeRecord::TrueFalseQuery).collect();
            if let Some(p) = exemplars {
                let ex: Vec<Exemplar> = serde_json::from_str(&std::fs::read_to_string(p)?)?;
                for it in &items {
                    for label in OptionLabel::ALL {
                        if table.apply(&it.stem, it.option(label)).is_none() {
                            records.push(ForgeRecord::Prompt {
                                id: format!("{}-{label}", it.id),
                                purpose: "icl_transform".into(),
                                prompt: build_icl_transform_prompt(it, label, &ex)?,
                            });
                        }
                    }
                }
            }
            write_lines(&out, &records)?;
            let TransformStats { pairs, transformed, no_pattern, dropped } = stats;
            println!("{pairs} pairs: {transformed} transformed, {no_pattern} without pattern, {dropped} dropped");
        }
        ForgeCmd::Distill { io, mode } => distill(io, mode)?,
        ForgeCmd::Q2ea(io) => distill(io, Mode::Q2ea)?,
        ForgeCmd::Qa2e(io) => distill(io, Mode::Qa2e)?,
        ForgeCmd::Consult { index, seeds, distractors, seed, no_disclaimer, out } => {
            let (idx, lex) = load_index(&index)?;
            let seeds: Vec<ConsultSeed> = read_lines(&seeds)?;
            let opts = ConsultSftOptions { disclaimer: !no_disclaimer, ..Default::default() };
            let policy = DistractorPolicy::default();
            let examples = seeds
                .iter()
                .enumerate()
                .map(|(i, s)| assemble_consult_sft(&idx, lex.as_ref(), s, distractors, seed.wrapping_add(i as u64), &policy, &opts))
                .collect::<Result<Vec<_>, _>>()?;
            write_lines(&out, &examples)?;
            println!("{} examples", examples.len());
        }
        ForgeCmd::Jem { items, english, out } => {
            let items: Vec<MCQItem> = read_lines(&items)?;
            let cfg = if english { JemConfig::english() } else { JemConfig::default() };
            let mut evals = Vec::with_capacity(items.len() * 4);
            for it in &items {
                evals.extend(build_jem_items(it, &cfg)?);
            }
            write_lines(&out, &evals)?;
            println!("{} items", evals.len());
        }
        ForgeCmd::Charges { docs, charges, per_charge, seed, out } => {
            let docs: Vec<ChargeDocument> = read_lines(&docs)?;
            let charges = charges.unwrap_or_else(confusable_charge_names);
            let items = build_charge_benchmark(&docs, &charges, per_charge, seed)?;
            write_lines(&out, &items)?;
            print!("{}", render_charge_summary(&items));
        }
    }
    Ok(())
}

fn distill(io: DistillIo, mode: Mode) -> Result<()> {
    let DistillIo { queries, backend, out } = io;
    let (mode, kind, purpose) = match mode {
        Mode::Q2ea => (DistillMode::Q2EA, SftKind::Q2EA, "q2ea"),
        Mode::Qa2e => (DistillMode::QA2E, SftKind::QA2E, "qa2e"),
    };
    let queries: Vec<_> = read_lines::<ForgeRecord>(&queries)?
        .into_iter()
        .filter_map(|r| match r {
            ForgeRecord::TrueFalseQuery(q) => Some(q),
            _ => None,
        })
        .collect();
    let gw = backend.as_deref().map(|p| load_backend(Some(p), BackendKind::HttpChat)).transpose()?;
    let mut lines = Vec::with_capacity(queries.len());
    for q in &queries {
        let id = format!("{}-{}", q.source_id, q.option_label);
        let prompt = build_distill_prompt(&q.query_text, Some(q.gold), mode)?;
        let line = match &gw {
            None => serde_json::to_value(ForgeRecord::Prompt { id, purpose: purpose.into(), prompt })?,
            Some(gw) => {
                let answer = gw.chat(&ChatRequest::user(prompt))?;
                serde_json::to_value(lexlab_core::SFTExample {
                    kind,
                    input_text: q.query_text.clone(),
                    target_text: Some(answer),
                    context_articles: Vec::new(),
                    seed_meta: SeedMeta { source: format!("distill:{id}"), seed: None },
                })?
            }
        };
        lines.push(line);
    }
    write_lines(&out, &lines)?;
    println!("{} records", lines.len());
    Ok(())
}

fn report(cmd: ReportCmd) -> Result<()> {
    match cmd {
        ReportCmd::Accuracy { reports } => {
            let reports = reports
                .iter()
                .map(|p| Ok(serde_json::from_str::<EvalReport>(&std::fs::read_to_string(p)?)?))
                .collect::<Result<Vec<_>>>()?;
            print!("{}", render_accuracy_table(&reports));
        }
        ReportCmd::Rankings { ballots, systems, out } => {
            let records: Vec<HumanRankRecord> = read_lines(&ballots)?;
            let systems = if systems.is_empty() {
                let all: BTreeSet<String> = records.iter().flat_map(|r| r.entries.iter().map(|e| e.system_id.clone())).collect();
                all.into_iter().collect()
            } else {
                systems
            };
            let summary = aggregate_rankings(&records, &systems)?;
            write_json(out.as_deref(), &summary)?;
            print!("{}", render_rankings(&summary));
        }
        ReportCmd::Pairwise { records, a, b, out } => {
            let records: Vec<PairwiseRecord> = read_lines(&records)?;
            let rates = pairwise_winrate(&records)?;
            write_json(out.as_deref(), &rates)?;
            print!("{}", render_pairwise(&rates, &a, &b));
        }
        ReportCmd::Hallu { flagged, inputs, out } => {
            let mut rows = Vec::new();
            for input in flagged.iter().chain(&inputs) {
                let (label, path) = match input.split_once('=') {
                    Some((l, p)) => (l.to_string(), Path::new(p)),
                    None => {
                        let p = Path::new(input);
                        (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p)
                    }
                };
                let responses: Vec<AuditedResponse> = read_lines(path)?;
                let audited: Vec<(String, AuditReport)> =
                    responses.into_iter().filter_map(|r| Some((r.id, r.audit?))).collect();
                rows.push((label, hallucination_proportions(&audited)?));
            }
            if rows.is_empty() {
                bail!("no inputs");
            }
            let json: BTreeMap<&str, _> = rows.iter().map(|(l, r)| (l.as_str(), r)).collect();
            write_json(out.as_deref(), &json)?;
            let rows: Vec<(&str, _)> = rows.iter().map(|(l, r)| (l.as_str(), *r)).collect();
            print!("{}", render_hallucination_table(&rows));
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_max_level(std::env::var("LEXLAB_LOG").ok().and_then(|v| v.parse().ok()).unwrap_or(tracing::Level::WARN))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
