use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use greg_core::augment::{make_noisy_corpus, NeighborTables};
use greg_core::corpus::{
    build_vocabulary, embedding_words, load_embeddings, read_jsonl, split_train_test, tokenize_documents,
    unite_vocabularies, Corpus, EmbeddingTable, Tokenizer,
};
use greg_core::eval::{evaluate, format_table, transfer_eval, EvalConfig, EvalMeta, EvalReport, RandomForestConfig};
use greg_core::ntm::{infer_corpus, train_with, Checkpoint};
use greg_core::synthetic::{domain_shift, DomainShiftConfig};
use greg_core::topical::topics_from_decoder;
use greg_core::Embeddings;
use serde_json::json;

use crate::config::{resolve, ConfigFile};
use crate::manifest::{ensure_distinct, Recorder};
use crate::{AugmentArgs, EvalArgs, EvalOptions, InferArgs, PreprocessArgs, SynthArgs, TopicsArgs, TrainArgs, TransferArgs};

const ARCHIVE_FILES: [&str; 4] = ["vocab.tsv", "bow.tsv", "labels.tsv", "meta.json"];
const EMBEDDINGS_FILE: &str = "embeddings.txt";

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn archive_outputs(dir: &Path) -> Vec<PathBuf> {
    ARCHIVE_FILES.iter().map(|f| dir.join(f)).collect()
}

fn read_corpus(dir: &Path) -> Result<Corpus> {
    Ok(Corpus::read_archive(dir).with_context(|| format!("corpus {}", dir.display()))?.0)
}

fn load_model(path: &Path) -> Result<Checkpoint<f64>> {
    Ok(Checkpoint::<f64>::load(path).with_context(|| format!("model {}", path.display()))?)
}

fn checked_model(path: &Path, corpus: &Corpus) -> Result<Checkpoint<f64>> {
    let ck = load_model(path)?;
    ck.check_vocabulary(&corpus.vocabulary.hash(), corpus.vocabulary.len())
        .with_context(|| format!("model {} does not match the corpus vocabulary", path.display()))?;
    Ok(ck)
}

fn embeddings_path(explicit: &Option<PathBuf>, corpus: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| corpus.join(EMBEDDINGS_FILE))
}

fn write_embeddings(path: &Path, table: &Embeddings) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for (word, row) in table.words().iter().zip(table.vectors().rows()) {
        write!(w, "{word}")?;
        for x in row {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .with_context(|| format!("no file name in {}", path.display()))
}

pub fn preprocess(a: &PreprocessArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let names = a.inputs.iter().map(|p| stem(p)).collect::<Result<Vec<_>>>()?;
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != names.len() {
        bail!("input file stems must be distinct, got {names:?}");
    }
    let mut outputs: Vec<PathBuf> = Vec::new();
    for n in &names {
        let dir = a.out.join(n);
        outputs.extend(archive_outputs(&dir));
        outputs.push(dir.join(EMBEDDINGS_FILE));
    }
    outputs.push(a.out.join("manifest.json"));
    let mut inputs: Vec<&Path> = a.inputs.iter().map(PathBuf::as_path).collect();
    inputs.push(&a.embeddings);
    if let Some(s) = &a.stopwords {
        inputs.push(s);
    }
    ensure_distinct(&inputs, &outputs)?;
    let recorder = Recorder::start("preprocess", &inputs)?;

    let tokenizer = match &a.stopwords {
        Some(p) => Tokenizer::from_stopword_file(p)?,
        None => Tokenizer::default(),
    };
    let known = embedding_words(&a.embeddings)?;
    let mut tokenised = Vec::new();
    let mut vocabs = Vec::new();
    for path in &a.inputs {
        let raw = read_jsonl(path)?;
        let (docs, labels) = tokenize_documents(&raw, &tokenizer);
        let vocab = build_vocabulary(&docs, a.min_df, a.max_df, &known)
            .with_context(|| format!("vocabulary of {}", path.display()))?;
        vocabs.push(vocab);
        tokenised.push((docs, labels));
    }
    let vocabulary = if vocabs.len() == 1 {
        vocabs.pop().unwrap()
    } else {
        unite_vocabularies(&vocabs.iter().collect::<Vec<_>>())?
    };
    let table: Embeddings = load_embeddings(&a.embeddings, Some(&vocabulary))?;
    let mut summaries = Vec::new();
    for ((docs, labels), name) in tokenised.into_iter().zip(&names) {
        let (corpus, summary) = Corpus::from_documents(&docs, vocabulary.clone(), labels)?;
        let corpus = split_train_test(&corpus, a.split, seed)?;
        let dir = a.out.join(name);
        let extra = json!({
            "min_df": a.min_df,
            "max_df": a.max_df,
            "split": a.split,
            "seed": seed,
            "stoplist_hash": tokenizer.stoplist_hash(),
            "summary": summary,
        });
        corpus.write_archive(&dir, extra)?;
        write_embeddings(&dir.join(EMBEDDINGS_FILE), &table)?;
        println!(
            "{name}: {} of {} documents kept, vocabulary {}",
            summary.kept_docs,
            summary.input_docs,
            vocabulary.len()
        );
        summaries.push(json!({ "name": name, "summary": summary }));
    }
    let config = json!({
        "min_df": a.min_df,
        "max_df": a.max_df,
        "split": a.split,
        "stopwords": a.stopwords,
        "corpora": summaries,
    });
    recorder.finish(&a.out, config, &outputs, seed)
}

pub fn augment(a: &AugmentArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let emb_path = embeddings_path(&a.embeddings, &a.corpus);
    let mut outputs = archive_outputs(&a.out);
    outputs.push(a.out.join("traces.jsonl"));
    outputs.push(a.out.join(EMBEDDINGS_FILE));
    outputs.push(a.out.join("manifest.json"));
    let inputs: Vec<&Path> = vec![&a.corpus, &emb_path];
    ensure_distinct(&inputs, &outputs)?;
    let recorder = Recorder::start("augment", &inputs)?;

    let corpus = read_corpus(&a.corpus)?;
    let table: Embeddings = load_embeddings(&emb_path, Some(&corpus.vocabulary))?;
    let neighbors = NeighborTables::build(&table, a.neighbor_pool);
    let noisy = make_noisy_corpus(&corpus, a.strength, seed, a.neighbor_pool, &neighbors)?;
    create_out(&a.out)?;
    noisy.corpus.write_archive(
        &a.out,
        json!({ "source_hash": corpus.hash(), "strength": a.strength, "seed": seed }),
    )?;
    write_embeddings(&a.out.join(EMBEDDINGS_FILE), &table)?;
    let mut w = BufWriter::new(File::create(a.out.join("traces.jsonl"))?);
    for (id, trace) in noisy.corpus.ids.iter().zip(&noisy.traces) {
        let kinds: Vec<&str> = trace.iter().map(|k| k.name()).collect();
        writeln!(w, "{}", json!({ "id": id, "operators": kinds }))?;
    }
    w.flush()?;
    let config = json!({ "strength": a.strength, "neighbor_pool": a.neighbor_pool });
    recorder.finish(&a.out, config, &outputs, seed)
}

fn flag_config(a: &TrainArgs, seed: Option<u64>) -> ConfigFile {
    let mut f = ConfigFile::default();
    f.model.topics = a.topics;
    f.model.hidden = a.hidden;
    f.train.epochs = a.epochs;
    f.train.max_steps = a.max_steps;
    f.train.batch_size = a.batch_size;
    f.train.learning_rate = a.learning_rate;
    f.train.seed = seed;
    f.regulariser.gamma = a.gamma;
    f.regulariser.top_words = a.top_words;
    f.sinkhorn.lambda = a.lambda;
    f.sinkhorn.max_iters = a.max_iters;
    f.sinkhorn.stop_threshold = a.stop_threshold;
    f.augment.kind = a.augment.clone();
    f.augment.beta = a.beta;
    f.augment.neighbor_pool = a.neighbor_pool;
    f
}

pub fn train(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let file = a.config.as_deref().map(ConfigFile::load).transpose()?;
    let cfg = resolve(file.as_ref(), &flag_config(a, seed))?;
    let emb_path = embeddings_path(&a.embeddings, &a.corpus);
    let model_path = a.out.join("model.ckpt");
    let log_path = a.out.join("train_log.jsonl");
    let outputs = vec![model_path.clone(), log_path.clone(), a.out.join("manifest.json")];
    let mut inputs: Vec<&Path> = vec![&a.corpus, &emb_path];
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    ensure_distinct(&inputs, &outputs)?;
    let recorder = Recorder::start("train", &inputs)?;

    let corpus = read_corpus(&a.corpus)?;
    let table: Embeddings = load_embeddings(&emb_path, Some(&corpus.vocabulary))?;
    let neighbors = match (&a.cache_dir, cfg.gamma > 0.0) {
        (Some(dir), true) => {
            create_out(dir)?;
            Some(NeighborTables::load_or_build(dir, &table, cfg.augment.top_words)?)
        }
        _ => None,
    };
    create_out(&a.out)?;
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut write_err = None;
    let outcome = train_with(&corpus, &cfg, &table, neighbors.as_ref(), |s| {
        if write_err.is_none() {
            if let Err(e) = serde_json::to_string(s).map_err(anyhow::Error::from).and_then(|l| Ok(writeln!(log, "{l}")?)) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    log.flush()?;
    let ck = Checkpoint {
        params: outcome.params,
        vocab_hash: corpus.vocabulary.hash(),
    };
    ck.save(&model_path)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "{} steps, final loss {:.4} (elbo {:.4}, regulariser {:.4})",
            outcome.log.len(),
            last.total,
            last.elbo,
            last.greg
        );
    }
    let mut config = serde_json::to_value(&cfg)?;
    config["optimizer"] = json!(outcome.optimizer);
    config["model_digest"] = json!(ck.digest());
    recorder.finish(&a.out, config, &outputs, cfg.seed)?;
    if let Some(e) = outcome.diverged {
        return Err(anyhow::Error::from(e).context(format!("last finite parameters saved to {}", model_path.display())));
    }
    Ok(())
}

pub fn infer(a: &InferArgs, seed: Option<u64>) -> Result<()> {
    let out_path = a.out.join("theta.tsv");
    let outputs = vec![out_path.clone(), a.out.join("manifest.json")];
    let inputs: Vec<&Path> = vec![&a.model, &a.corpus];
    ensure_distinct(&inputs, &outputs)?;
    let recorder = Recorder::start("infer", &inputs)?;

    let corpus = read_corpus(&a.corpus)?;
    let ck = checked_model(&a.model, &corpus)?;
    let idx: Vec<usize> = match a.split.as_str() {
        "all" => (0..corpus.len()).collect(),
        "train" => corpus.train.clone(),
        "test" => corpus.test.clone(),
        other => bail!("unknown split {other:?}, expected all, train or test"),
    };
    let z = infer_corpus(&ck.params, &corpus, &idx)?;
    create_out(&a.out)?;
    let mut w = BufWriter::new(File::create(&out_path)?);
    for (&i, row) in idx.iter().zip(z.rows()) {
        write!(w, "{}", corpus.ids[i])?;
        for x in row {
            write!(w, "\t{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    recorder.finish(&a.out, json!({ "split": a.split }), &outputs, seed.unwrap_or(0))
}

fn eval_config(o: &EvalOptions, seed: Option<u64>) -> EvalConfig {
    EvalConfig {
        forest: RandomForestConfig {
            trees: o.trees,
            seed: seed.unwrap_or(0),
            ..Default::default()
        },
        npmi_top_words: (o.npmi_top > 0).then_some(o.npmi_top),
        npmi_fraction: o.npmi_fraction,
    }
}

fn run_name(path: &Path) -> String {
    path.display().to_string()
}

pub fn eval(a: &EvalArgs, seed: Option<u64>) -> Result<()> {
    let out_path = a.out.join("report.json");
    let outputs = vec![out_path.clone(), a.out.join("manifest.json")];
    let mut inputs: Vec<&Path> = a.models.iter().map(PathBuf::as_path).collect();
    inputs.push(&a.corpus);
    ensure_distinct(&inputs, &outputs)?;
    let recorder = Recorder::start("eval", &inputs)?;

    let cfg = eval_config(&a.options, seed);
    let corpus = read_corpus(&a.corpus)?;
    let mut runs = Vec::new();
    let mut hashes = Vec::new();
    let mut topics = 0;
    for m in &a.models {
        let ck = checked_model(m, &corpus)?;
        topics = ck.params.num_topics();
        hashes.push(ck.digest());
        runs.push(evaluate(&ck.params, &corpus, &run_name(m), &cfg)?);
    }
    let name = stem(&a.corpus)?;
    let meta = EvalMeta {
        corpus_hash: corpus.hash(),
        model_hashes: hashes,
        num_topics: topics,
    };
    let report = EvalReport::from_runs(&name, runs, meta);
    print!("{}", format_table(std::slice::from_ref(&report)));
    create_out(&a.out)?;
    fs::write(&out_path, serde_json::to_string_pretty(&report)?)?;
    recorder.finish(&a.out, serde_json::to_value(&cfg)?, &outputs, cfg.forest.seed)
}

pub fn transfer(a: &TransferArgs, seed: Option<u64>) -> Result<()> {
    let out_path = a.out.join("reports.json");
    let outputs = vec![out_path.clone(), a.out.join("manifest.json")];
    let mut inputs: Vec<&Path> = a.models.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.targets.iter().map(PathBuf::as_path));
    ensure_distinct(&inputs, &outputs)?;
    let recorder = Recorder::start("transfer", &inputs)?;

    let cfg = eval_config(&a.options, seed);
    let names = a.targets.iter().map(|p| stem(p)).collect::<Result<Vec<_>>>()?;
    let corpora = a.targets.iter().map(|p| read_corpus(p)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<(&str, &Corpus)> = names.iter().map(String::as_str).zip(&corpora).collect();
    let mut per_target: Vec<Vec<_>> = vec![Vec::new(); targets.len()];
    let mut hashes = Vec::new();
    let mut topics = 0;
    for m in &a.models {
        let ck = load_model(m)?;
        if let Some((_, c)) = targets.first() {
            ck.check_vocabulary(&c.vocabulary.hash(), c.vocabulary.len())
                .with_context(|| format!("model {} does not match the target vocabulary", m.display()))?;
        }
        topics = ck.params.num_topics();
        hashes.push(ck.digest());
        let runs = transfer_eval(&ck.params, &targets, &run_name(m), &cfg)?;
        for (slot, r) in per_target.iter_mut().zip(runs) {
            slot.push(r);
        }
    }
    let reports: Vec<EvalReport> = targets
        .iter()
        .zip(per_target)
        .map(|((name, c), runs)| {
            let meta = EvalMeta {
                corpus_hash: c.hash(),
                model_hashes: hashes.clone(),
                num_topics: topics,
            };
            EvalReport::from_runs(name, runs, meta)
        })
        .collect();
    print!("{}", format_table(&reports));
    create_out(&a.out)?;
    fs::write(&out_path, serde_json::to_string_pretty(&reports)?)?;
    recorder.finish(&a.out, serde_json::to_value(&cfg)?, &outputs, cfg.forest.seed)
}

pub fn topics(a: &TopicsArgs, seed: Option<u64>) -> Result<()> {
    let inputs: Vec<&Path> = vec![&a.model, &a.corpus];
    let outputs = a
        .out
        .as_ref()
        .map(|d| vec![d.join("topics.txt"), d.join("manifest.json")])
        .unwrap_or_default();
    ensure_distinct(&inputs, &outputs)?;
    let recorder = Recorder::start("topics", &inputs)?;

    if a.top == 0 {
        bail!("--top must be at least 1");
    }
    let corpus = read_corpus(&a.corpus)?;
    let ck = checked_model(&a.model, &corpus)?;
    let set = topics_from_decoder(ck.params.decoder_weight())?;
    let lines: Vec<String> = (0..set.num_topics())
        .map(|k| {
            set.top_words(k, a.top)
                .into_iter()
                .map(|w| corpus.vocabulary.word(w))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let text = lines.join("\n") + "\n";
    print!("{text}");
    if let Some(dir) = &a.out {
        create_out(dir)?;
        fs::write(&outputs[0], &text)?;
        recorder.finish(dir, json!({ "top": a.top }), &outputs, seed.unwrap_or(0))?;
    }
    Ok(())
}

fn write_jsonl(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for (i, doc) in corpus.docs.iter().enumerate() {
        let words: Vec<&str> = doc.occurrences().into_iter().map(|id| corpus.vocabulary.word(id)).collect();
        let label = corpus.labels[i].map(|l| corpus.label_names[l].clone());
        writeln!(w, "{}", json!({ "id": corpus.ids[i], "text": words.join(" "), "label": label }))?;
    }
    w.flush()?;
    Ok(())
}

/// Tokenisation splits on underscores, so generated word names drop them.
fn plain_words(corpus: &mut Corpus, table: &EmbeddingTable<f64>) -> Result<Embeddings> {
    let rename = |w: &str| w.replace('_', "w");
    let words: Vec<String> = corpus.vocabulary.words().iter().map(|w| rename(w)).collect();
    corpus.vocabulary = greg_core::corpus::Vocabulary::new(words, None)?;
    let words: Vec<String> = table.words().iter().map(|w| rename(w)).collect();
    Ok(EmbeddingTable::new(words, table.vectors().clone())?)
}

pub fn synth(a: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let outputs = vec![
        a.out.join("source.jsonl"),
        a.out.join("target.jsonl"),
        a.out.join(EMBEDDINGS_FILE),
        a.out.join("manifest.json"),
    ];
    let recorder = Recorder::start("synth", &[])?;
    let cfg = DomainShiftConfig {
        themes: a.themes,
        docs_per_domain: a.docs,
        seed,
        ..Default::default()
    };
    let mut pair = domain_shift(&cfg)?;
    let table = plain_words(&mut pair.source, &pair.embeddings)?;
    plain_words(&mut pair.target, &pair.embeddings)?;
    create_out(&a.out)?;
    write_jsonl(&outputs[0], &pair.source)?;
    write_jsonl(&outputs[1], &pair.target)?;
    write_embeddings(&outputs[2], &table)?;
    recorder.finish(&a.out, serde_json::to_value(&cfg)?, &outputs, seed)
}
