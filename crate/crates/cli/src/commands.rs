use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use subrank::candidates::CandidateError;
use subrank::data::{load_all, sample_corpus, write_canonical, DataError, DatasetRecord};
use subrank::eval::{evaluate_model, evaluate_pool, stratify_records, Evaluation};
use subrank::llm::{prompt_many, to_decisions, Archive, HttpClient, SuggestionMap};
use subrank::metrics::{aggregate, histogram_csv};
use subrank::model::{TinyMlm, TrainableMlm};
use subrank::scorer::{ScoreCache, Scorer};
use subrank::stats::{significance_proportion, GroupLabel, StratificationRecord, StratificationTable};
use subrank::subst::{suggest, SubstError, SuggestionRecord};
use subrank::toy::ToyWorld;
use subrank::train::fine_tune;
use subrank::{tokenize, Sentence};

use crate::config::RunConfig;
use crate::error::CliError;

pub const METRICS_FILE: &str = "metrics.json";
pub const STAT_SUMMARY_FILE: &str = "stat_summary.json";
pub const STRATIFICATION_FILE: &str = "stratification.jsonl";

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::from)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn load_mlm(cfg: &RunConfig) -> Result<TinyMlm, CliError> {
    Ok(TinyMlm::load(cfg.require(&cfg.model.checkpoint, "model.checkpoint")?)?)
}

fn model_name(cfg: &RunConfig) -> String {
    cfg.model.name.clone().unwrap_or_else(|| stem(cfg.model.checkpoint.as_deref(), "model"))
}

fn dataset_name(cfg: &RunConfig) -> String {
    cfg.data.name.clone().unwrap_or_else(|| stem(cfg.data.path.as_deref(), "dataset"))
}

fn stem(path: Option<&Path>, fallback: &str) -> String {
    path.and_then(Path::file_stem)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| fallback.to_string())
}

fn build_scorer(cfg: &RunConfig) -> Result<Scorer, CliError> {
    let path = cfg.require(&cfg.scorer.checkpoint, "scorer.checkpoint")?;
    let cache = match &cfg.scorer.cache {
        Some(p) => ScoreCache::open(p)?,
        None => ScoreCache::in_memory(),
    };
    Ok(Scorer::from_checkpoint(cfg.scorer.scorer_config(), path)?.with_cache(Arc::new(cache)))
}

fn load_records(cfg: &RunConfig) -> Result<Vec<DatasetRecord>, CliError> {
    Ok(load_all(cfg.require(&cfg.data.path, "data.path")?, cfg.dataset_format())?)
}

fn id_sentences(records: &[DatasetRecord]) -> Vec<(String, Arc<Sentence>)> {
    records.iter().map(|r| (r.sentence_id.clone(), r.sentence.clone())).collect()
}

/// Writes the toy models, a train and a held-out split and a config file
/// that points at them.
pub fn init_models(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let toy = &cfg.toy;
    let world = ToyWorld::new(toy.world.clone());
    world.base_mlm(&toy.training, toy.seed).save(&out.join("mlm.json"))?;
    world
        .scorer_model(&toy.training, toy.seed.wrapping_add(1))
        .save(&out.join("scorer.json"))?;
    let mut files = vec!["mlm.json".to_string(), "scorer.json".to_string()];
    if toy.training.causal_pairs > 0 {
        world
            .causal_model(&toy.training, toy.seed.wrapping_add(2))
            .save(&out.join("causal.json"))?;
        files.push("causal.json".into());
    }
    let split = |n: usize, seed: u64, prefix: &str| -> Vec<DatasetRecord> {
        world
            .corpus(n, seed)
            .into_iter()
            .enumerate()
            .map(|(i, sentence)| DatasetRecord {
                sentence_id: format!("{prefix}-{i}"),
                sentence,
                annotations: Vec::new(),
            })
            .collect()
    };
    std::fs::write(
        out.join("train.jsonl"),
        write_canonical(&split(toy.train_sentences, toy.seed.wrapping_add(100), "train")),
    )?;
    std::fs::write(
        out.join("heldout.jsonl"),
        write_canonical(&split(toy.heldout_sentences, toy.seed.wrapping_add(200), "held")),
    )?;
    files.extend(["train.jsonl".to_string(), "heldout.jsonl".to_string()]);

    let mut generated = RunConfig::default();
    generated.model.checkpoint = Some("mlm.json".into());
    generated.model.name = Some("toy-mlm".into());
    generated.scorer.checkpoint = Some("scorer.json".into());
    generated.scorer.model_id = "toy-paraphrase".into();
    generated.data.path = Some("train.jsonl".into());
    generated.data.heldout = Some("heldout.jsonl".into());
    generated.toy = toy.clone();
    let text = toml::to_string(&generated).map_err(|e| CliError::Report(e.to_string()))?;
    std::fs::write(out.join("config.toml"), text)?;
    files.push("config.toml".into());
    Ok(files)
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let mut mlm = load_mlm(cfg)?;
    let scorer = build_scorer(cfg)?;
    let records = load_records(cfg)?;
    let sample = sample_corpus(&records, cfg.train.corpus_sample, cfg.train.rng_seed);
    let corpus: Vec<Arc<Sentence>> = sample.iter().map(|r| r.sentence.clone()).collect();
    let heldout = match &cfg.data.heldout {
        Some(p) => id_sentences(&load_all(p, cfg.dataset_format())?),
        None => Vec::new(),
    };
    let report = fine_tune(&mut mlm, &corpus, &heldout, &scorer, &cfg.train, Some(out))?;
    mlm.save(&out.join("model.json"))?;
    write_json(&out.join("train_report.json"), &report)?;
    log::info!("trained {} steps; final epoch loss {:?}", report.steps.len(), report.epoch_losses.last());
    let mut files = vec!["model.json".to_string(), "train_report.json".to_string()];
    files.extend(
        report
            .checkpoints
            .iter()
            .filter_map(|p| p.strip_prefix(out).ok())
            .map(|p| p.display().to_string()),
    );
    Ok(files)
}

pub fn suggest_cmd(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let mlm = load_mlm(cfg)?;
    let mut lines = Vec::new();
    for rec in load_records(cfg)? {
        match suggest(&rec.sentence, &mlm, &cfg.sampling) {
            Ok(sites) => lines.extend(sites.iter().map(|s| SuggestionRecord::new(&rec.sentence_id, s))),
            Err(SubstError::Candidates(CandidateError::NoEligibleSites)) => {
                log::info!("{}: no eligible sites", rec.sentence_id)
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_jsonl(&out.join("suggestions.jsonl"), &lines)?;
    Ok(vec!["suggestions.jsonl".into()])
}

/// Writes `sites.jsonl`, one histogram CSV per metric and `metrics.json`.
fn write_evaluation(cfg: &RunConfig, eval: &Evaluation, model: &str, out: &Path) -> Result<Vec<String>, CliError> {
    write_jsonl(&out.join("sites.jsonl"), &eval.sites)?;
    let mut dist = Vec::new();
    for (name, values) in [
        ("cs", eval.cs_values()),
        ("abr", eval.abr_values()),
        ("top2_ratio", eval.top2_values()),
    ] {
        if values.is_empty() {
            continue;
        }
        let summary = aggregate(&values, cfg.eval.bins).map_err(subrank::eval::EvalError::from)?;
        let file = format!("{name}_hist.csv");
        std::fs::write(out.join(&file), histogram_csv(&summary.histogram))?;
        dist.push(file);
    }
    let report = eval.report(&dataset_name(cfg), model, dist.clone());
    write_json(&out.join(METRICS_FILE), &report)?;
    let mut files = vec!["sites.jsonl".to_string(), METRICS_FILE.to_string()];
    files.extend(dist);
    Ok(files)
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let mlm = load_mlm(cfg)?;
    let scorer = build_scorer(cfg)?;
    let sentences = id_sentences(&load_records(cfg)?);
    let eval = evaluate_model(&mlm, &sentences, &scorer, &cfg.sampling, cfg.eval.cs_probabilities)?;
    if eval.skipped_sentences > 0 {
        log::warn!("{} sentences had no eligible sites", eval.skipped_sentences);
    }
    write_evaluation(cfg, &eval, &model_name(cfg), out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub row_proportion: Option<f64>,
    pub with_p_value: usize,
    /// Fraction of this group's p-values below alpha.
    pub significant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub dataset: String,
    pub model: String,
    pub k_s: usize,
    pub alpha: f64,
    pub n_tokens: usize,
    pub significant: Option<f64>,
    pub groups: BTreeMap<GroupLabel, GroupSummary>,
}

pub fn summarize(records: &[StratificationRecord], k_s: usize, alpha: f64) -> Result<StatSummary, CliError> {
    let table = StratificationTable::from_labels(records.iter().map(|r| r.group));
    let proportion = |ps: Vec<f64>| -> Result<Option<f64>, CliError> {
        if ps.is_empty() {
            return Ok(None);
        }
        significance_proportion(&ps, alpha)
            .map(Some)
            .map_err(|e| CliError::Eval(e.into()))
    };
    let mut groups = BTreeMap::new();
    for g in GroupLabel::ALL {
        let ps: Vec<f64> = records.iter().filter(|r| r.group == g).filter_map(|r| r.p_value).collect();
        groups.insert(
            g,
            GroupSummary {
                count: table.count(g),
                row_proportion: table.row_proportion(g),
                with_p_value: ps.len(),
                significant: proportion(ps)?,
            },
        );
    }
    Ok(StatSummary {
        dataset: String::new(),
        model: String::new(),
        k_s,
        alpha,
        n_tokens: table.total(),
        significant: proportion(records.iter().filter_map(|r| r.p_value).collect())?,
        groups,
    })
}

pub fn stat(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let mlm = load_mlm(cfg)?;
    let scorer = build_scorer(cfg)?;
    let records = load_records(cfg)?;
    let strata = stratify_records(&mlm, &records, &scorer, &cfg.sampling, cfg.stat.k_s)?;
    write_jsonl(&out.join(STRATIFICATION_FILE), &strata)?;
    let mut summary = summarize(&strata, cfg.stat.k_s, cfg.stat.alpha)?;
    summary.dataset = dataset_name(cfg);
    summary.model = model_name(cfg);
    write_json(&out.join(STAT_SUMMARY_FILE), &summary)?;
    Ok(vec![STRATIFICATION_FILE.into(), STAT_SUMMARY_FILE.into()])
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScorePair {
    original: String,
    modified: String,
}

#[derive(Debug, Serialize)]
struct ScoreLine<'a> {
    original: &'a str,
    modified: &'a str,
    scorer: &'a str,
    score: f64,
}

/// Scores `{"original": .., "modified": ..}` lines.
pub fn score(cfg: &RunConfig, input: &Path, out: &Path) -> Result<Vec<String>, CliError> {
    let scorer = build_scorer(cfg)?;
    let reader = BufReader::new(File::open(input)?);
    let parse_error = |line: usize, message: String| DataError::Parse {
        path: input.display().to_string(),
        line,
        message,
    };
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ScorePair = serde_json::from_str(&line).map_err(|e| parse_error(i + 1, e.to_string()))?;
        let original = tokenize(&pair.original).map_err(|e| parse_error(i + 1, e.to_string()))?;
        let modified = tokenize(&pair.modified).map_err(|e| parse_error(i + 1, e.to_string()))?;
        pairs.push((pair, original, modified));
    }
    let mut lines = Vec::with_capacity(pairs.len());
    for (p, original, modified) in &pairs {
        lines.push(ScoreLine {
            original: &p.original,
            modified: &p.modified,
            scorer: scorer.scorer_id(),
            score: scorer.score(original, modified)?,
        });
    }
    write_jsonl(&out.join("scores.jsonl"), &lines)?;
    Ok(vec!["scores.jsonl".into()])
}

#[derive(Debug, Serialize)]
struct LlmLine<'a> {
    sentence_id: &'a str,
    #[serde(flatten)]
    suggestions: &'a SuggestionMap,
}

/// Prompts the configured chat model for every sentence and, when a scorer
/// is configured, evaluates the resulting pools.
pub fn baseline_llm(cfg: &RunConfig, ranked: bool, out: &Path) -> Result<Vec<String>, CliError> {
    let records = load_records(cfg)?;
    let client = HttpClient::from_env(cfg.llm.clone())?;
    let archive_path = cfg.llm.archive.clone().unwrap_or_else(|| out.join("llm_archive.jsonl"));
    let archive = Archive::open(&archive_path)?;
    let sentences: Vec<Arc<Sentence>> = records.iter().map(|r| r.sentence.clone()).collect();
    let maps = prompt_many(&client, &sentences, ranked, &cfg.llm, Some(&archive))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    write_jsonl(
        &out.join("llm_suggestions.jsonl"),
        records.iter().zip(&maps).map(|(r, m)| LlmLine {
            sentence_id: &r.sentence_id,
            suggestions: m,
        }),
    )?;
    let mut files = vec!["llm_suggestions.jsonl".to_string(), archive_path.display().to_string()];
    if cfg.scorer.checkpoint.is_some() {
        let scorer = build_scorer(cfg)?;
        let mut eval = Evaluation::default();
        for (rec, map) in records.iter().zip(&maps) {
            for d in to_decisions(map, &rec.sentence) {
                if let Some(pool) = d.pool {
                    eval.sites
                        .push(evaluate_pool(&rec.sentence_id, &pool, &scorer, cfg.eval.cs_probabilities)?);
                }
            }
        }
        let name = format!("{}{}", cfg.llm.model, if ranked { "-ranked" } else { "" });
        files.extend(write_evaluation(cfg, &eval, &name, out)?);
    }
    Ok(files)
}

pub fn run_dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}
