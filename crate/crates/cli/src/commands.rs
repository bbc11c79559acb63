//! Command implementations.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dualamr::config::{Profile, RunConfig};
use dualamr::corpus::{gold_graphs, parse_corpus, read_sidecar, write_corpus, CorpusRecord, Sidecar};
use dualamr::experiments::{
    beam_sweep, beam_tsv, parse_buckets, steps_table, steps_tsv, tercile_buckets, EvalItem, StepsMode,
};
use dualamr::preprocess::{examples, preprocess};
use dualamr::training::{empty_graph, train, Example, TrainState};
use dualamr::{parse, DecodeOptions, Model, Vocabularies};
use dualamr_graph::{
    fine_grained, parse_penman, read_penman_blocks, serialize_penman, AmrGraph, Prf, RelationFrequency, SenseTable,
    SmatchConfig,
};
use dualamr_numeric::Checkpoint;
use rayon::prelude::*;
use serde_json::json;

use crate::failure::{Classify, Failure};
use crate::{Cli, Command, Global};

const VOCAB_FILE: &str = "vocab.json";
const SENSES_FILE: &str = "senses.tsv";
const RELATIONS_FILE: &str = "relations.tsv";
const DEFAULT_BEAM: usize = 8;
const DEFAULT_N_LIST: [usize; 6] = [1, 2, 3, 4, 5, 6];

pub fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Preprocess { input, out_dir } => cmd_preprocess(&input, &out_dir),
        Command::Train {
            train,
            dev,
            vocab,
            out_dir,
            sidecar,
            resume,
        } => cmd_train(g, &train, dev.as_deref(), &vocab, &out_dir, sidecar.as_deref(), resume),
        Command::Parse {
            checkpoint,
            input,
            output,
            sidecar,
            vocab,
            diagnostics_out,
        } => cmd_parse(
            g,
            &checkpoint,
            &input,
            output.as_deref(),
            sidecar.as_deref(),
            vocab.as_deref(),
            diagnostics_out.as_deref(),
        ),
        Command::Eval {
            pred,
            gold,
            restarts,
            json,
        } => cmd_eval(g, &pred, &gold, restarts, json),
        Command::ExperimentSteps {
            checkpoints,
            input,
            n_list,
            buckets,
            sidecar,
            output,
        } => cmd_experiment_steps(
            g,
            &checkpoints,
            &input,
            n_list,
            buckets.as_deref(),
            sidecar.as_deref(),
            output.as_deref(),
        ),
        Command::ExperimentBeam {
            checkpoint,
            input,
            beams,
            sidecar,
            output,
        } => cmd_experiment_beam(g, &checkpoint, &input, &beams, sidecar.as_deref(), output.as_deref()),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).data(|| format!("cannot read {}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).data(|| format!("cannot write {}", path.display()))
}

fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, Failure> {
    parse_corpus(&read_text(path)?).data(|| format!("in {}", path.display()))
}

fn read_optional_sidecar(path: Option<&Path>) -> Result<Option<Sidecar>, Failure> {
    path.map(|p| {
        let bytes = fs::read(p).data(|| format!("cannot read {}", p.display()))?;
        read_sidecar(&bytes).data(|| format!("in {}", p.display()))
    })
    .transpose()
}

/// Standard output, or a file created only once there is something to write.
fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).data(|| "cannot write to standard output".into())?;
            out.flush().data(|| "cannot write to standard output".into())
        }
    }
}

/// Flags layered over the config file layered over the profile.
fn resolve_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut run = match &g.config {
        Some(p) => RunConfig::from_text(&read_text(p)?, g.profile).usage(|| format!("in {}", p.display()))?,
        None => RunConfig::for_profile(g.profile.unwrap_or(Profile::Desk)),
    };
    apply_overrides(g, &mut run)?;
    Ok(run)
}

fn apply_overrides(g: &Global, run: &mut RunConfig) -> Result<(), Failure> {
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        run.set(k.trim(), v.trim()).usage(|| format!("--set {kv}"))?;
    }
    if let Some(s) = g.seed {
        run.train.seed = s;
    }
    if let Some(b) = g.beam {
        run.decode.beam = b;
    }
    if let Some(n) = g.steps {
        run.decode.steps = n;
    }
    run.validate().usage(|| "invalid configuration".into())
}

fn decode_options(g: &Global, trained_steps: usize, diagnostics: bool) -> Result<DecodeOptions, Failure> {
    let opts = DecodeOptions {
        steps: g.steps.unwrap_or(trained_steps),
        beam: g.beam.unwrap_or(DEFAULT_BEAM),
        diagnostics,
    };
    if opts.steps == 0 || opts.beam == 0 {
        return Err(Failure::usage("--steps and --beam must be positive"));
    }
    Ok(opts)
}

struct VocabDir {
    vocabs: Vocabularies,
    senses: SenseTable,
    relations: RelationFrequency,
}

fn load_vocab_dir(dir: &Path) -> Result<VocabDir, Failure> {
    let path = |f: &str| dir.join(f);
    let vocabs: Vocabularies = serde_json::from_str(&read_text(&path(VOCAB_FILE))?)
        .data(|| format!("in {}", path(VOCAB_FILE).display()))?;
    let senses = SenseTable::from_tsv(&read_text(&path(SENSES_FILE))?)
        .map_err(|e| Failure::data(format!("in {}: {e}", path(SENSES_FILE).display())))?;
    let relations = RelationFrequency::from_tsv(&read_text(&path(RELATIONS_FILE))?)
        .map_err(|e| Failure::data(format!("in {}: {e}", path(RELATIONS_FILE).display())))?;
    Ok(VocabDir {
        vocabs,
        senses,
        relations,
    })
}

fn load_model(path: &Path) -> Result<(Model, RunConfig), Failure> {
    let (model, meta) = Model::load(path).map_err(|e| {
        let f = Failure::from(e);
        Failure::new(f.kind, f.error.context(format!("loading {}", path.display())))
    })?;
    log::info!("loaded {} ({} parameters, step {})", path.display(), model.parameter_count(), meta.step);
    Ok((model, meta.config))
}

fn cmd_preprocess(input: &Path, out_dir: &Path) -> Result<(), Failure> {
    let records = read_corpus(input)?;
    let p = preprocess(&records).data(|| format!("in {}", input.display()))?;
    fs::create_dir_all(out_dir).data(|| format!("cannot create {}", out_dir.display()))?;
    let vocab = serde_json::to_string_pretty(&p.vocabs).expect("vocabularies serialize");
    write_file(&out_dir.join("corpus.jsonl"), write_corpus(&p.records))?;
    write_file(&out_dir.join(VOCAB_FILE), vocab + "\n")?;
    write_file(&out_dir.join(SENSES_FILE), p.senses.to_tsv())?;
    write_file(&out_dir.join(RELATIONS_FILE), p.relations.to_tsv())?;
    log::info!(
        "{} sentences; {} concepts, {} labels, {} lemmas",
        p.records.len(),
        p.vocabs.concept.len(),
        p.vocabs.labels.len(),
        p.vocabs.lemma.len()
    );
    Ok(())
}

fn to_examples(model: &Model, records: &[CorpusRecord], sidecar: Option<&Sidecar>, path: &Path) -> Result<Vec<Example>, Failure> {
    examples(model, records, sidecar).map_err(|e| Failure::data(format!("in {}: {e}", path.display())))
}

fn cmd_train(
    g: &Global,
    train_path: &Path,
    dev_path: Option<&Path>,
    vocab_dir: &Path,
    out_dir: &Path,
    sidecar: Option<&Path>,
    resume: bool,
) -> Result<(), Failure> {
    // everything is read and checked before the first byte is written
    let tables = load_vocab_dir(vocab_dir)?;
    let train_records = read_corpus(train_path)?;
    if train_records.is_empty() {
        return Err(Failure::data(format!("{} holds no sentences", train_path.display())));
    }
    let dev_records = dev_path.map(read_corpus).transpose()?.unwrap_or_default();
    let sidecar = read_optional_sidecar(sidecar)?;
    let last_path = out_dir.join("last.ckpt");
    let state_path = out_dir.join("state.ckpt");
    let (mut model, mut state, run) = if resume {
        if g.config.is_some() || g.profile.is_some() {
            log::warn!("--resume keeps the stored configuration; --config and --profile are ignored");
        }
        let (model, mut run) = load_model(&last_path)?;
        if model.vocabs.hash() != tables.vocabs.hash() {
            return Err(Failure::data(format!(
                "vocabulary in {} does not match {}",
                vocab_dir.display(),
                last_path.display()
            )));
        }
        apply_overrides(g, &mut run)?;
        let ck = Checkpoint::load(&state_path).data(|| format!("loading {}", state_path.display()))?;
        let state = TrainState::from_checkpoint(&model, &ck)?;
        (model, state, run)
    } else {
        let run = resolve_config(g)?;
        let model = Model::new(
            run.model.clone(),
            tables.vocabs,
            tables.senses,
            tables.relations,
            run.train.seed,
        );
        let state = TrainState::new(&model, &run);
        (model, state, run)
    };
    let data = to_examples(&model, &train_records, sidecar.as_ref(), train_path)?;
    let dev = match dev_path {
        Some(p) => to_examples(&model, &dev_records, sidecar.as_ref(), p)?,
        None => Vec::new(),
    };

    fs::create_dir_all(out_dir).data(|| format!("cannot create {}", out_dir.display()))?;
    write_file(&out_dir.join("config.txt"), run.to_text())?;
    let log_path = out_dir.join("train.log.jsonl");
    let log_file = fs::OpenOptions::new()
        .create(true)
        .append(resume)
        .write(true)
        .truncate(!resume)
        .open(&log_path)
        .data(|| format!("cannot open {}", log_path.display()))?;
    let mut log = BufWriter::new(log_file);
    let header = json!({
        "config": &run,
        "parameters": model.parameter_count(),
        "start_step": state.step,
        "train_sentences": data.len(),
        "dev_sentences": dev.len(),
    });
    writeln!(log, "{header}").data(|| format!("cannot write {}", log_path.display()))?;
    log::info!("{} parameters; training from step {}", model.parameter_count(), state.step);

    let mut io_error = None;
    let result = train(&mut model, &mut state, &run, &data, &dev, |r| {
        if let Err(e) = writeln!(log, "{}", serde_json::to_string(r).expect("record serializes")) {
            io_error.get_or_insert(e);
        }
        if r.step % 100 == 0 || r.dev_smatch.is_some() {
            let dev = r.dev_smatch.map(|s| format!(" dev {s:.4}")).unwrap_or_default();
            log::info!("step {} loss {:.4} lr {:.2e}{dev}", r.step, r.loss, r.lr);
        }
    });
    log.flush().data(|| format!("cannot write {}", log_path.display()))?;
    if let Some(e) = io_error {
        return Err(Failure::data(format!("cannot write {}: {e}", log_path.display())));
    }
    let outcome = result?;
    outcome.last.save(&last_path).data(|| format!("cannot write {}", last_path.display()))?;
    state
        .to_checkpoint(&model)
        .save(&state_path)
        .data(|| format!("cannot write {}", state_path.display()))?;
    let best_path = out_dir.join("best.ckpt");
    match &outcome.best {
        Some(best) => best.save(&best_path).data(|| format!("cannot write {}", best_path.display()))?,
        None => log::info!("no improvement over the stored best; {} kept", best_path.display()),
    }
    log::info!("done at step {}; best dev Smatch {:?}", state.step, state.best);
    Ok(())
}

fn penman_block(rec: &CorpusRecord, graph: &AmrGraph) -> String {
    format!(
        "# ::id {}\n# ::snt {}\n{}\n\n",
        rec.id,
        rec.tokens.join(" "),
        serialize_penman(graph)
    )
}

fn cmd_parse(
    g: &Global,
    checkpoint: &Path,
    input: &Path,
    output: Option<&Path>,
    sidecar: Option<&Path>,
    vocab_dir: Option<&Path>,
    diagnostics_out: Option<&Path>,
) -> Result<(), Failure> {
    let (model, stored) = load_model(checkpoint)?;
    if let Some(dir) = vocab_dir {
        let tables = load_vocab_dir(dir)?;
        if tables.vocabs.hash() != model.vocabs.hash() {
            return Err(Failure::data(format!(
                "vocabulary in {} does not match {}",
                dir.display(),
                checkpoint.display()
            )));
        }
    }
    let records = read_corpus(input)?;
    let sidecar = read_optional_sidecar(sidecar)?;
    let opts = decode_options(g, stored.decode.steps, diagnostics_out.is_some())?;
    log::info!("parsing {} sentences with beam {} and N = {}", records.len(), opts.beam, opts.steps);
    let inputs = records
        .iter()
        .map(|r| model.input(r, sidecar.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let parsed = inputs
        .par_iter()
        .map(|i| parse(&model, i, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = String::new();
    let mut diagnostics = String::new();
    for (rec, d) in records.iter().zip(&parsed) {
        if d.hit_cap {
            log::warn!("{}: stopped at the node cap", rec.id);
        }
        let graph = d.restored(&model).unwrap_or_else(empty_graph);
        text.push_str(&penman_block(rec, &graph));
        if opts.diagnostics {
            let line = json!({
                "id": rec.id,
                "score": d.score,
                "hit_cap": d.hit_cap,
                "calls": {"concept": d.calls.concept, "relation": d.calls.relation},
                "steps": d.diagnostics,
            });
            diagnostics.push_str(&format!("{line}\n"));
        }
    }
    emit(output, &text)?;
    if let Some(p) = diagnostics_out {
        write_file(p, diagnostics)?;
    }
    Ok(())
}

/// Graphs of a Penman file, or of a corpus when the name ends in `.jsonl`.
fn read_graphs(path: &Path) -> Result<(Vec<Option<String>>, Vec<AmrGraph>), Failure> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let records = read_corpus(path)?;
        let graphs = gold_graphs(&records).data(|| format!("in {}", path.display()))?;
        return Ok((records.into_iter().map(|r| Some(r.id)).collect(), graphs));
    }
    let mut ids = Vec::new();
    let mut graphs = Vec::new();
    for (k, (id, block)) in read_penman_blocks(&read_text(path)?).into_iter().enumerate() {
        let g = parse_penman(&block).data(|| format!("{} graph {}", path.display(), k + 1))?;
        ids.push(id);
        graphs.push(g);
    }
    Ok((ids, graphs))
}

fn prf_json(p: &Prf) -> serde_json::Value {
    json!({"precision": p.precision(), "recall": p.recall(), "f1": p.f1()})
}

fn cmd_eval(g: &Global, pred: &Path, gold: &Path, restarts: Option<usize>, as_json: bool) -> Result<(), Failure> {
    let (pred_ids, pred_graphs) = read_graphs(pred)?;
    let (gold_ids, gold_graphs) = read_graphs(gold)?;
    if pred_graphs.len() != gold_graphs.len() {
        return Err(Failure::data(format!(
            "{} has {} graphs but {} has {}",
            pred.display(),
            pred_graphs.len(),
            gold.display(),
            gold_graphs.len()
        )));
    }
    for (k, (a, b)) in pred_ids.iter().zip(&gold_ids).enumerate() {
        if let (Some(a), Some(b)) = (a, b) {
            if a != b {
                return Err(Failure::data(format!("graph {}: id {a} does not match gold id {b}", k + 1)));
            }
        }
    }
    let config = SmatchConfig {
        restarts: restarts.unwrap_or(RunConfig::for_profile(Profile::Desk).decode.smatch_restarts),
        seed: g.seed.unwrap_or(0),
    };
    if config.restarts == 0 {
        return Err(Failure::usage("--restarts must be positive"));
    }
    let m = fine_grained(&pred_graphs, &gold_graphs, &config).data(|| "scoring".into())?;
    let report = if as_json {
        let record = json!({
            "sentences": gold_graphs.len(),
            "restarts": config.restarts,
            "seed": config.seed,
            "smatch": prf_json(&m.smatch),
            "unlabeled": prf_json(&m.unlabeled),
            "no_wsd": prf_json(&m.no_wsd),
            "concepts": prf_json(&m.concepts),
        });
        format!("{record}\n")
    } else {
        let mut out = format!(
            "sentences {}\nrestarts {}\nseed {}\nmetric\tprecision\trecall\tf1\n",
            gold_graphs.len(),
            config.restarts,
            config.seed
        );
        for (name, p) in [
            ("smatch", &m.smatch),
            ("unlabeled", &m.unlabeled),
            ("no-wsd", &m.no_wsd),
            ("concepts", &m.concepts),
        ] {
            out.push_str(&format!("{name}\t{:.4}\t{:.4}\t{:.4}\n", p.precision(), p.recall(), p.f1()));
        }
        out
    };
    emit(None, &report)
}

fn eval_items(model: &Model, records: &[CorpusRecord], sidecar: Option<&Sidecar>, path: &Path) -> Result<Vec<EvalItem>, Failure> {
    let golds = gold_graphs(records).data(|| format!("in {}", path.display()))?;
    records
        .iter()
        .zip(golds)
        .map(|(r, gold)| {
            Ok(EvalItem {
                input: model.input(r, sidecar)?,
                gold,
            })
        })
        .collect()
}

fn checkpoint_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_experiment_steps(
    g: &Global,
    checkpoints: &[PathBuf],
    input: &Path,
    n_list: Option<Vec<usize>>,
    buckets: Option<&str>,
    sidecar: Option<&Path>,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let run = resolve_config(g)?;
    let records = read_corpus(input)?;
    let sidecar = read_optional_sidecar(sidecar)?;
    let mut models = Vec::new();
    for p in checkpoints {
        let (model, stored) = load_model(p)?;
        if let Some((first, _, _)) = models.first() {
            let first: &Model = first;
            if first.vocabs.hash() != model.vocabs.hash() {
                return Err(Failure::data(format!(
                    "{} and {} were trained with different vocabularies",
                    checkpoints[0].display(),
                    p.display()
                )));
            }
        }
        models.push((model, checkpoint_name(p), stored.decode.steps));
    }
    let mode = if models.len() == 1 {
        StepsMode::Single
    } else {
        if n_list.is_some() {
            return Err(Failure::usage("--n-list applies to a single checkpoint; a family uses each model's own N"));
        }
        StepsMode::Family
    };
    let entries: Vec<(String, &Model, usize)> = match mode {
        StepsMode::Single => {
            let (model, name, _) = &models[0];
            n_list
                .unwrap_or_else(|| DEFAULT_N_LIST.to_vec())
                .into_iter()
                .map(|n| (name.clone(), model, n))
                .collect()
        }
        StepsMode::Family => models.iter().map(|(m, name, n)| (name.clone(), m, *n)).collect(),
    };
    if entries.iter().any(|e| e.2 == 0) {
        return Err(Failure::usage("N must be positive"));
    }
    let items = eval_items(&models[0].0, &records, sidecar.as_ref(), input)?;
    let buckets = match buckets {
        Some(text) => parse_buckets(text).map_err(Failure::usage)?,
        None => tercile_buckets(&items.iter().map(EvalItem::tokens).collect::<Vec<_>>()),
    };
    let beam = g.beam.unwrap_or(DEFAULT_BEAM);
    log::info!("{mode} mode, {} runs, beam {beam}", entries.len());
    let rows = steps_table(mode, &entries, &items, &buckets, beam, run.decode.smatch_restarts)?;
    emit(output, &steps_tsv(&rows))
}

fn cmd_experiment_beam(
    g: &Global,
    checkpoint: &Path,
    input: &Path,
    beams: &[usize],
    sidecar: Option<&Path>,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let run = resolve_config(g)?;
    if beams.contains(&0) {
        return Err(Failure::usage("beam sizes must be positive"));
    }
    let (model, stored) = load_model(checkpoint)?;
    let records = read_corpus(input)?;
    let sidecar = read_optional_sidecar(sidecar)?;
    let items = eval_items(&model, &records, sidecar.as_ref(), input)?;
    let steps = g.steps.unwrap_or(stored.decode.steps);
    let rows = beam_sweep(&model, &items, beams, steps, run.decode.smatch_restarts)?;
    emit(output, &beam_tsv(&rows))
}
