use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use cgt_core::alignment::{alignment_report, register_gt_codes, write_query_sets_csv, CodeEntry, CurationEdit, Exclusion};
use cgt_core::annotation::{read_annotations_csv, AnnotationSession, TopicAnnotation};
use cgt_core::corpus::{apply_min_df, ingest_corpus, preprocess, sample_subset, SubsetSelector};
use cgt_core::lda::{sweep, train_lda, write_summary_csv, ModelReport};
use cgt_core::project::{init_project, load_project, Project, MANIFEST};
use cgt_core::qdtm::{
    build_concept_set, expand_embedding, expand_frequency, expand_kld, export_annotation_bundle, prune_tree,
    train_embeddings, train_qdtm, write_bundle_csv, dedupe, Expansion, ExpansionSource,
};
use cgt_core::sampling::{classify_corpus, label_frequencies, Classifier, LexiconClassifier, PluginInfo, SubprocessClassifier};
use cgt_core::{Corpus, EmbeddingTable, PreprocessConfig, QueryTermSet, TopicTree, WorkbenchConfig};
use serde::Deserialize;
use serde_json::json;

use crate::args::{AnnotateCommand, Cli, CodingCommand, Command, ExploreArgs, LdaCommand, PreprocessArgs, QdtmCommand, SampleCommand};
use crate::error::{CliError, Result};
use crate::ops;
use crate::store::{self, require, AlignmentInput};

/// Resolved global options.
pub struct Context {
    pub root: PathBuf,
    pub config: WorkbenchConfig,
    pub seed: u64,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(path) => WorkbenchConfig::load(path)?,
            None => WorkbenchConfig::default(),
        };
        let seed = cli.seed.unwrap_or(config.seed);
        Ok(Self { root: cli.project.clone(), config, seed })
    }

    pub fn open(&self) -> Result<Project> {
        Ok(load_project(&self.root)?)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(CliError::io(format!("creating {}", path.display())))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Invalid(e.to_string()))?;
    writeln!(out).map_err(CliError::io("writing stdout"))
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context::from_cli(&cli)?;
    match cli.command {
        Command::Ingest { input } => ingest(&ctx, &input),
        Command::Preprocess(args) => preprocess_cmd(&ctx, &args),
        Command::Explore(args) => explore(&ctx, &args),
        Command::Lda(cmd) => lda(&ctx, cmd),
        Command::Align { decisions } => align(&ctx, &decisions),
        Command::Terms { edits, out } => terms(&ctx, edits.as_deref(), out.as_deref()),
        Command::Qdtm(cmd) => qdtm(&ctx, cmd),
        Command::Annotate(cmd) => annotate(&ctx, cmd),
        Command::Sample(cmd) => sample(&ctx, cmd),
        Command::Coding(cmd) => coding(&ctx, cmd),
        Command::Status => print_json(&ctx.open()?.status()),
    }
}

fn ingest(ctx: &Context, input: &Path) -> Result<()> {
    let mut project = if ctx.root.join(MANIFEST).exists() { ctx.open()? } else { init_project(&ctx.root)? };
    let corpus = ingest_corpus(input)?;
    project.put_json(store::CORPUS, &corpus, "ingest", json!({"source": input.display().to_string(), "documents": corpus.len()}))?;
    println!("ingested {} documents", corpus.len());
    Ok(())
}

fn preprocess_cmd(ctx: &Context, args: &PreprocessArgs) -> Result<()> {
    let mut project = ctx.open()?;
    let raw: Corpus = require(&project, store::CORPUS)?;
    let mut config = ctx.config.preprocess.clone();
    if let Some(path) = &args.stopwords {
        config = config.with_stopwords(PreprocessConfig::parse_stopwords(&read_text(path)?));
    }
    if let Some(path) = &args.lemmas {
        config = config.with_lemma_dictionary(PreprocessConfig::parse_lemma_dictionary(&read_text(path)?));
    }
    let min_df = args.min_df.unwrap_or(ctx.config.min_df);
    let prepared = apply_min_df(&preprocess(&raw, &config), min_df)?;
    project.put_json(
        store::PREPARED,
        &prepared,
        "preprocess",
        json!({"min_df": min_df, "vocabulary": prepared.vocabulary.len(), "tokens": prepared.vocabulary.total_tokens()}),
    )?;
    println!(
        "{} documents, {} terms, {} tokens (min_df {min_df})",
        prepared.len(),
        prepared.vocabulary.len(),
        prepared.vocabulary.total_tokens()
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CodesFile {
    codes: Vec<CodeEntry>,
    #[serde(default)]
    exclusions: Vec<Exclusion>,
}

fn explore(ctx: &Context, args: &ExploreArgs) -> Result<()> {
    let mut project = ctx.open()?;
    if args.subset.is_none() && args.sources.is_empty() && args.codes.is_none() {
        return Err(CliError::Invalid("nothing to do: pass --subset, --sources or --codes".into()));
    }
    if args.subset.is_some() || !args.sources.is_empty() {
        let corpus: Corpus = require(&project, store::CORPUS)?;
        let selector = match args.subset {
            Some(n) => SubsetSelector::Random { n, seed: ctx.seed },
            None => SubsetSelector::BySource(args.sources.clone()),
        };
        let subset = sample_subset(&corpus, &selector)?;
        project.put_json(store::SUBSET, &subset, "explore.subset", json!({"selector": selector, "documents": subset.len()}))?;
        if let Some(out) = &args.out {
            let mut w = create(out)?;
            for d in &subset.documents {
                serde_json::to_writer(&mut w, &json!({"id": d.id, "source": d.source, "text": d.text}))
                    .map_err(|e| CliError::Invalid(e.to_string()))?;
                writeln!(w).map_err(CliError::io("writing subset"))?;
            }
            w.flush().map_err(CliError::io("writing subset"))?;
        }
        println!("subset of {} documents", subset.len());
    }
    if let Some(path) = &args.codes {
        let file: CodesFile = read_json(path)?;
        let codebook = register_gt_codes(&file.codes, &file.exclusions)?;
        let comparable = codebook.comparable().count();
        project.put_json(store::CODEBOOK, &codebook, "explore.codes", json!({"codes": codebook.codes.len(), "comparable": comparable}))?;
        println!("{} codes registered, {comparable} comparable", codebook.codes.len());
    }
    Ok(())
}

fn lda(ctx: &Context, cmd: LdaCommand) -> Result<()> {
    let mut project = ctx.open()?;
    let corpus: Corpus = require(&project, store::PREPARED)?;
    let lda = &ctx.config.lda;
    match cmd {
        LdaCommand::Sweep { k, iterations } => {
            let ks = if k.is_empty() { lda.k_values.clone() } else { k };
            let mut config = lda.sweep.clone();
            if let Some(n) = iterations {
                config.iterations = n;
            }
            let results = sweep(&corpus, &ks, &config, ctx.seed)?;
            let mut reports: Vec<ModelReport> = Vec::new();
            println!("{:>4} {:>16} {:>12} {:>10}", "K", "mean coherence", "perplexity", "ms");
            for (k, r) in results {
                match r {
                    Ok(rep) => {
                        let ppl = rep.perplexity.map_or("-".to_string(), |p| format!("{p:.2}"));
                        println!("{k:>4} {:>16.4} {ppl:>12} {:>10}", rep.mean_coherence, rep.runtime_ms);
                        reports.push(rep);
                    }
                    Err(e) => println!("{k:>4} failed: {e}"),
                }
            }
            project.put_json(store::SWEEP, &reports, "lda.sweep", json!({"k": ks, "config": config, "seed": ctx.seed}))?;
        }
        LdaCommand::Train { k, iterations } => {
            let mut params = lda.sweep.params(k);
            if let Some(n) = iterations {
                params.iterations = n;
            }
            let model = train_lda(&corpus, &params, ctx.seed)?;
            let id = store::model_id(k);
            project.put_json(&store::model_artifact(&id), &model, "lda.train", json!({"model": id, "params": params, "seed": ctx.seed}))?;
            println!("trained {id}");
        }
        LdaCommand::Summaries { k, terms, docs, out } => {
            let model = ops::load_model(&project, &store::model_id(k), &corpus)?;
            let summaries = model.summaries(&corpus.vocabulary, terms.unwrap_or(lda.summary_terms), docs.unwrap_or(lda.summary_docs));
            match out {
                Some(path) => write_summary_csv(&summaries, create(&path)?).map_err(CliError::csv(path.display().to_string()))?,
                None => {
                    for s in &summaries {
                        let words: Vec<&str> = s.top_terms.iter().map(|(w, _)| w.as_str()).collect();
                        println!("topic {}: {}", s.topic, words.join(" "));
                    }
                }
            }
        }
    }
    Ok(())
}

fn align(ctx: &Context, decisions: &Path) -> Result<()> {
    let mut project = ctx.open()?;
    let input: AlignmentInput = read_json(decisions)?;
    let state = ops::record_alignment_input(&mut project, input)?;
    let report = alignment_report(&state.matrix);
    println!(
        "{} comparable codes: {} matched, {} GT-only, {} LDA-only; roster {}",
        report.comparable_codes,
        report.matched,
        report.gt_only,
        report.lda_only,
        report.roster.len()
    );
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn terms(ctx: &Context, edits: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let mut project = ctx.open()?;
    let edits: Option<Vec<CurationEdit>> = edits.map(read_json).transpose()?;
    let sets = ops::derive_terms(&mut project, edits)?;
    match out {
        Some(path) => write_query_sets_csv(&sets, create(path)?).map_err(CliError::csv(path.display().to_string()))?,
        None => write_query_sets_csv(&sets, io::stdout().lock()).map_err(CliError::csv("stdout"))?,
    }
    for s in &sets {
        for t in &s.out_of_vocabulary {
            log::warn!("{}: proposed term {t} is not in the vocabulary", s.label);
        }
    }
    Ok(())
}

fn qdtm(ctx: &Context, cmd: QdtmCommand) -> Result<()> {
    let mut project = ctx.open()?;
    let q = &ctx.config.qdtm;
    match cmd {
        QdtmCommand::Train { embeddings } => {
            let corpus: Corpus = require(&project, store::PREPARED)?;
            let sets: Vec<QueryTermSet> = require(&project, store::QUERY_SETS)?;
            let table = if embeddings {
                let table = match project.try_get_json::<EmbeddingTable>(store::EMBEDDINGS)? {
                    Some(t) if t.terms == corpus.vocabulary.terms() && t.params == q.embedding && t.seed == ctx.seed => t,
                    _ => {
                        let t = train_embeddings(&corpus, &q.embedding, ctx.seed)?;
                        project.put_json(store::EMBEDDINGS, &t, "qdtm.embed", json!({"dim": t.dim, "seed": ctx.seed}))?;
                        t
                    }
                };
                Some(table)
            } else {
                None
            };
            let mut concept_sets = Vec::new();
            for (i, s) in sets.iter().enumerate() {
                let seeds: Vec<String> =
                    s.seed_terms().into_iter().filter(|t| corpus.vocabulary.id(t).is_some()).collect();
                let mut expansions = vec![
                    Expansion { source: ExpansionSource::Frequency, terms: expand_frequency(&seeds, &corpus, q.expansion_size)? },
                    Expansion { source: ExpansionSource::Kld, terms: expand_kld(&seeds, &corpus, q.expansion_size)? },
                ];
                if let Some(table) = &table {
                    let (terms, warnings) = expand_embedding(&seeds, table, q.expansion_size)?;
                    for w in warnings {
                        log::warn!("{}: {w}", s.label);
                    }
                    expansions.push(Expansion { source: ExpansionSource::Embedding, terms });
                }
                concept_sets.push(build_concept_set(i, &s.label, &seeds, &expansions, &q.source_caps, &q.source_weights)?);
            }
            let fit = train_qdtm(&corpus, &concept_sets, &q.sampler, ctx.seed)?;
            for w in &fit.warnings {
                log::warn!("{w}");
            }
            project.put_json(store::CONCEPT_SETS, &concept_sets, "qdtm.expand", json!({"sets": concept_sets.len(), "embeddings": embeddings}))?;
            project.put_json(
                store::TREE_RAW,
                &fit.tree,
                "qdtm.train",
                json!({"params": q.sampler, "seed": ctx.seed, "warnings": fit.warnings}),
            )?;
            println!("{} main topics, {} subtopics", fit.tree.mains.len(), fit.tree.subtopic_count());
        }
        QdtmCommand::Prune { min_prevalence } => {
            let raw: TopicTree = require(&project, store::TREE_RAW)?;
            let min = min_prevalence.unwrap_or(q.min_prevalence);
            let (pruned, warnings) = prune_tree(&raw, min)?;
            let (tree, report) = dedupe(&pruned, q.dedupe_posts);
            for w in &warnings {
                log::warn!("{w}");
            }
            project.put_json(
                store::TREE,
                &tree,
                "qdtm.prune",
                json!({"min_prevalence": min, "warnings": warnings, "dedupe": report}),
            )?;
            println!(
                "{} of {} subtopics kept; {} merged; {} duplicate posts removed",
                tree.subtopic_count(),
                raw.subtopic_count(),
                report.merged_subtopics.len(),
                report.duplicate_posts.len()
            );
        }
        QdtmCommand::Export { posts, terms, out } => {
            let tree: TopicTree = require(&project, store::TREE)?;
            let corpus: Corpus = require(&project, store::PREPARED)?;
            let bundle = export_annotation_bundle(&tree, &corpus, posts.unwrap_or(q.bundle_posts), terms.unwrap_or(q.bundle_terms))?;
            for w in &bundle.warnings {
                log::warn!("{w}");
            }
            project.put_json(store::BUNDLE, &bundle, "qdtm.export", json!({"topics": bundle.entries.len()}))?;
            if let Some(path) = out {
                write_bundle_csv(&bundle, create(&path)?).map_err(CliError::csv(path.display().to_string()))?;
            }
            println!("bundle of {} topics", bundle.entries.len());
        }
    }
    Ok(())
}

fn annotate(ctx: &Context, cmd: AnnotateCommand) -> Result<()> {
    let mut project = ctx.open()?;
    match cmd {
        AnnotateCommand::Create { annotators, stages } => {
            let annotators = if annotators.is_empty() { ctx.config.annotation.annotators.clone() } else { annotators };
            let groups: Vec<Vec<String>> = stages
                .iter()
                .map(|s| s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect())
                .collect();
            let session = ops::open_session(&mut project, &annotators, &groups)?;
            let auth = ops::ensure_auth(&mut project)?;
            for s in 0..session.stage_count() {
                println!("stage {}: {} topics", s + 1, session.topics.iter().filter(|t| t.stage == s).count());
            }
            for a in &session.annotators {
                println!("annotator {} token {}", a.id, a.token);
            }
            println!("researcher token {}", auth.researcher_token);
        }
        AnnotateCommand::Serve { address } => {
            let address = address.unwrap_or_else(|| ctx.config.server.address.clone());
            let auth = ops::ensure_auth(&mut project)?;
            println!("researcher token {}", auth.researcher_token);
            crate::server::serve(project, ctx.config.clone(), &address)?;
        }
        AnnotateCommand::Import { input } => {
            let records: Vec<TopicAnnotation> = if input.extension().is_some_and(|e| e == "json") {
                read_json(&input)?
            } else {
                read_annotations_csv(File::open(&input).map_err(CliError::io(format!("reading {}", input.display())))?)?
            };
            let mut session: AnnotationSession = require(&project, store::SESSION)?;
            for r in records.iter().cloned() {
                session.submit(r)?;
            }
            project.put_json(
                store::SESSION,
                &session,
                "annotate.import",
                json!({"source": input.display().to_string(), "records": records.len()}),
            )?;
            let remaining: usize = session.annotators.iter().map(|a| session.remaining(&a.id).len()).sum();
            println!("imported {} annotations; {remaining} remaining", records.len());
        }
        AnnotateCommand::Adjudicate => {
            let (adj, final_set) = ops::adjudicate_session(&mut project)?;
            print!("{}", adj.report.to_table());
            print!("{}", final_set.to_table());
        }
    }
    Ok(())
}

fn sample(ctx: &Context, cmd: SampleCommand) -> Result<()> {
    let mut project = ctx.open()?;
    match cmd {
        SampleCommand::Classify { lexicon, plugin, plugin_args, labels } => {
            let classifier: Box<dyn Classifier> = match (lexicon, plugin) {
                (Some(path), _) => Box::new(LexiconClassifier::load(path)?),
                (None, Some(program)) => Box::new(SubprocessClassifier {
                    info: PluginInfo { name: program.clone(), version: "external".into(), labels },
                    program,
                    args: plugin_args,
                }),
                (None, None) => return Err(CliError::Invalid("pass --lexicon or --plugin".into())),
            };
            let corpus: Corpus = require(&project, store::CORPUS)?;
            let table = classify_corpus(&corpus, classifier.as_ref());
            project.put_json(
                store::CLASSIFICATION,
                &table,
                "sample.classify",
                json!({"plugin": table.plugin, "documents": table.documents, "failures": table.failures}),
            )?;
            println!("classified {} documents ({} failures)", table.documents, table.failures);
        }
        SampleCommand::Hist { out } => {
            let table = require(&project, store::CLASSIFICATION)?;
            let hist = label_frequencies(&table)?;
            project.put_json(store::HISTOGRAM, &hist, "sample.hist", json!({"labels": hist.labels.len()}))?;
            match out {
                Some(path) => hist.write_csv(create(&path)?)?,
                None => {
                    for l in &hist.labels {
                        println!("{:<20} {:>8} {:>8.4}", l.label, l.count, l.fraction);
                    }
                }
            }
        }
        SampleCommand::Draw { labels, n, out } => {
            let n = n.unwrap_or(ctx.config.sampling.sample_size);
            for label in &labels {
                let records = ops::draw(&mut project, label, n, ctx.seed)?;
                if let Some(dir) = &out {
                    let path = dir.join(format!("{label}.jsonl"));
                    fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
                    fs::write(&path, project.get_bytes(&store::sample_artifact(label))?)
                        .map_err(CliError::io(format!("writing {}", path.display())))?;
                }
                println!("{label}: {} documents", records.len());
            }
        }
    }
    Ok(())
}

fn coding(ctx: &Context, cmd: CodingCommand) -> Result<()> {
    let mut project = ctx.open()?;
    match cmd {
        CodingCommand::Report => print_json(&ops::coding_report(&mut project, &ctx.config)?),
        CodingCommand::Export { out } => {
            let wb = ops::ensure_workbook(&mut project, &ctx.config)?;
            let written = wb.write_csv(&out)?;
            project.log("coding.export", json!({"dir": out.display().to_string(), "sheets": written.len()}))?;
            println!("{} sheets written to {}", written.len(), out.display());
            Ok(())
        }
    }
}
