//! Python bindings: losses with gradients, the p-value statistic, metrics,
//! masked-LM suggestions and sentence-pair scoring.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use subrank::losses::{LossBatch, LossMode};
use subrank::model::{TinyMlm, TrainableMlm};
use subrank::scorer::{ScoreCache, Scorer as CoreScorer, ScorerConfig};
use subrank::subst::suggest;
use subrank::toy::{ToyConfig, ToyTraining, ToyWorld};
use subrank::{metrics, stats, SamplingPlan};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> Result<LossMode, String> {
    serde_json::from_value(serde_json::Value::String(mode.to_uppercase().replace(['+', '-'], "_")))
        .map_err(|_| format!("unknown loss mode {mode:?}"))
}

/// Loss value and gradient with respect to `logits`, in input order.
#[allow(clippy::too_many_arguments)]
pub fn loss_in_input_order(
    mode: &str,
    logits: &[f64],
    scores: &[f64],
    original_score: f64,
    ref_logits: Option<&[f64]>,
    margin: f64,
    mix: f64,
    dpo_scale: f64,
) -> Result<(f64, Vec<f64>), String> {
    let mode = parse_mode(mode)?;
    let (batch, order) =
        LossBatch::from_unsorted(logits, ref_logits, scores, original_score).map_err(|e| e.to_string())?;
    let batch = batch.with_margin(margin).with_mix(mix).with_dpo_scale(dpo_scale);
    let out = mode.evaluate(&batch).map_err(|e| e.to_string())?;
    let mut grad = vec![0.0; logits.len()];
    for (sorted, &orig) in order.iter().enumerate() {
        grad[orig] = out.grad[sorted];
    }
    Ok((out.value, grad))
}

/// Evaluates a training loss. `mode` is one of CE, MR, MR_AS, MR_BS, DPO,
/// DPO_STAR, SIGMA_DPO_STAR. Candidates may be in any order.
#[pyfunction]
#[pyo3(signature = (mode, logits, scores, original_score=0.0, ref_logits=None, margin=0.5, mix=1.0, dpo_scale=1.0))]
#[allow(clippy::too_many_arguments)]
fn loss(
    mode: &str,
    logits: Vec<f64>,
    scores: Vec<f64>,
    original_score: f64,
    ref_logits: Option<Vec<f64>>,
    margin: f64,
    mix: f64,
    dpo_scale: f64,
) -> PyResult<(f64, Vec<f64>)> {
    loss_in_input_order(
        mode,
        &logits,
        &scores,
        original_score,
        ref_logits.as_deref(),
        margin,
        mix,
        dpo_scale,
    )
    .map_err(PyValueError::new_err)
}

/// Fraction of reference scores strictly above the target score.
#[pyfunction]
fn reference_pvalue(target_score: f64, reference_scores: Vec<f64>) -> PyResult<f64> {
    stats::reference_pvalue(target_score, &reference_scores)
        .map(|r| r.p_value)
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (p_values, alpha=stats::DEFAULT_ALPHA))]
fn significance_proportion(p_values: Vec<f64>, alpha: f64) -> PyResult<f64> {
    stats::significance_proportion(&p_values, alpha).map_err(value_err)
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    stats::spearman(&a, &b).map_err(value_err)
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::cosine(&a, &b).map_err(value_err)
}

/// Mean ratio of candidate scores to the original sentence's score.
#[pyfunction]
fn abr(original_score: f64, scores: Vec<f64>) -> PyResult<f64> {
    let record = subrank::ScoreRecord::new(original_score, scores, "python").map_err(value_err)?;
    metrics::abr(&record).map_err(value_err)
}

#[pyfunction]
fn top2_ratio(original_score: f64, top2_score: f64) -> PyResult<f64> {
    metrics::top2_ratio(original_score, top2_score).map_err(value_err)
}

#[pyfunction]
fn tokenize(text: &str) -> PyResult<Vec<String>> {
    Ok(subrank::tokenize(text).map_err(value_err)?.tokens().to_vec())
}

#[pyfunction]
#[pyo3(signature = (text, ranked=false))]
fn build_prompt(text: &str, ranked: bool) -> PyResult<String> {
    let s = subrank::tokenize(text).map_err(value_err)?;
    Ok(subrank::llm::build_prompt(&s, ranked))
}

/// Trains the small synthetic masked LM and scorer and saves them as
/// `mlm.json` and `scorer.json` under `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, mlm_sentences=400, scorer_pairs=600, epochs=3, seed=1))]
fn write_toy_models(
    out_dir: PathBuf,
    mlm_sentences: usize,
    scorer_pairs: usize,
    epochs: usize,
    seed: u64,
) -> PyResult<(String, String)> {
    std::fs::create_dir_all(&out_dir).map_err(|e| PyOSError::new_err(e.to_string()))?;
    let world = ToyWorld::new(ToyConfig::default());
    let budget = ToyTraining {
        mlm_sentences,
        mlm_epochs: epochs,
        scorer_pairs,
        scorer_epochs: epochs,
        ..ToyTraining::default()
    };
    let mlm = out_dir.join("mlm.json");
    let scorer = out_dir.join("scorer.json");
    world.base_mlm(&budget, seed).save(&mlm).map_err(value_err)?;
    world
        .scorer_model(&budget, seed.wrapping_add(1))
        .save(&scorer)
        .map_err(value_err)?;
    Ok((mlm.display().to_string(), scorer.display().to_string()))
}

/// Toy sentences from the synthetic language used by [`write_toy_models`].
#[pyfunction]
#[pyo3(signature = (n, seed=0))]
fn toy_sentences(n: usize, seed: u64) -> Vec<String> {
    ToyWorld::new(ToyConfig::default())
        .corpus(n, seed)
        .iter()
        .map(|s| s.text().to_string())
        .collect()
}

#[pyclass]
struct MaskedLm {
    model: TinyMlm,
}

#[pymethods]
impl MaskedLm {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            model: TinyMlm::load(&path).map_err(value_err)?,
        })
    }

    /// Substitution decisions for sampled sites of `text`.
    #[pyo3(signature = (text, sites=5, pool_size=5, seed=0))]
    fn suggest<'py>(
        &self,
        py: Python<'py>,
        text: &str,
        sites: usize,
        pool_size: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyList>> {
        let sentence = Arc::new(subrank::tokenize(text).map_err(value_err)?);
        let plan = SamplingPlan {
            sites_per_sentence: sites,
            pool_size,
            ..SamplingPlan::default()
        }
        .with_seed(seed);
        let out = PyList::empty_bound(py);
        for s in suggest(&sentence, &self.model, &plan).map_err(value_err)? {
            let d = PyDict::new_bound(py);
            d.set_item("position", s.site.position())?;
            d.set_item("original", s.site.original_token())?;
            d.set_item("replacement", s.decision.replacement())?;
            let cands: Vec<(String, f64)> = s
                .pool
                .candidates()
                .iter()
                .cloned()
                .zip(s.pool.probabilities().iter().copied())
                .collect();
            d.set_item("candidates", cands)?;
            out.append(d)?;
        }
        Ok(out)
    }

    fn num_params(&self) -> usize {
        self.model.params().len()
    }
}

#[pyclass]
struct Scorer {
    inner: CoreScorer,
}

#[pymethods]
impl Scorer {
    /// Loads a sequence-to-sequence scoring checkpoint.
    #[staticmethod]
    #[pyo3(signature = (path, model_id="scorer", cache=None))]
    fn load(path: PathBuf, model_id: &str, cache: Option<PathBuf>) -> PyResult<Self> {
        let mut inner = CoreScorer::from_checkpoint(ScorerConfig::seq2seq(model_id), &path).map_err(value_err)?;
        inner = match cache {
            Some(p) => inner.with_cache(Arc::new(ScoreCache::open(p).map_err(value_err)?)),
            None => inner.with_cache(Arc::new(ScoreCache::in_memory())),
        };
        Ok(Self { inner })
    }

    /// Log-likelihood of `modified` given `original`.
    fn score(&self, original: &str, modified: &str) -> PyResult<f64> {
        let o = subrank::tokenize(original).map_err(value_err)?;
        let m = subrank::tokenize(modified).map_err(value_err)?;
        self.inner.score(&o, &m).map_err(value_err)
    }

    #[getter]
    fn scorer_id(&self) -> String {
        self.inner.scorer_id().to_string()
    }

    fn cache_hit_rate(&self) -> f64 {
        self.inner.cache().map_or(0.0, |c| c.hit_rate())
    }
}

#[pymodule]
fn subrank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", subrank::VERSION)?;
    m.add("GPTSCORE_PARAPHRASE_TEMPLATE", subrank::scorer::GPTSCORE_PARAPHRASE_TEMPLATE)?;
    m.add("PROMPT_UNRANKED", subrank::llm::PROMPT_UNRANKED)?;
    m.add("PROMPT_RANKED", subrank::llm::PROMPT_RANKED)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(reference_pvalue, m)?)?;
    m.add_function(wrap_pyfunction!(significance_proportion, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(abr, m)?)?;
    m.add_function(wrap_pyfunction!(top2_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(write_toy_models, m)?)?;
    m.add_function(wrap_pyfunction!(toy_sentences, m)?)?;
    m.add_class::<MaskedLm>()?;
    m.add_class::<Scorer>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_accept_common_spellings() {
        assert_eq!(parse_mode("mr+as").unwrap(), LossMode::MrAs);
        assert_eq!(parse_mode("SIGMA_DPO_STAR").unwrap(), LossMode::SigmaDpoStar);
        assert!(parse_mode("hinge").is_err());
    }

    #[test]
    fn gradient_returns_in_input_order() {
        let (v, g) = loss_in_input_order("MR", &[2.0, 1.0], &[-4.0, -2.0], 0.0, None, 0.5, 1.0, 1.0).unwrap();
        assert!((v - 1.5).abs() < 1e-12);
        assert_eq!(g, vec![1.0, -1.0]);
    }
}
