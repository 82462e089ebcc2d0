//! Python bindings. Layouts, hierarchies and reports cross the boundary as
//! JSON strings; matrices as nested lists.

use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use layoutgroup_core::eval::evaluate;
use layoutgroup_core::grouping::{group_layout, GroupingHierarchy, GroupingParams};
use layoutgroup_core::layout::parse_layout;
use layoutgroup_core::model::{ModelCheckpoint, PairModel, RelatednessModel};
use layoutgroup_core::render::render_svg;
use layoutgroup_core::synth::{generate_corpus, load_corpus, write_corpus, GeneratorSpec};
use layoutgroup_core::train::{train, TrainConfig};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn params_from(json: Option<&str>) -> PyResult<GroupingParams> {
    match json {
        Some(s) => serde_json::from_str(s).map_err(err),
        None => Ok(GroupingParams::default()),
    }
}

/// A trained relatedness model.
#[pyclass]
struct Model {
    inner: RelatednessModel,
}

#[pymethods]
impl Model {
    /// Untrained model with the default architecture.
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> PyResult<Self> {
        let cfg = TrainConfig::default().model_config();
        Ok(Model {
            inner: RelatednessModel::new(cfg, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(err)?;
        let ck = ModelCheckpoint::from_json(&text).map_err(err)?;
        Ok(Model {
            inner: RelatednessModel::from_checkpoint(&ck).map_err(err)?,
        })
    }

    #[pyo3(signature = (path, seed = 0))]
    fn save(&self, path: &str, seed: u64) -> PyResult<()> {
        std::fs::write(path, self.inner.to_checkpoint(seed, false).to_json()).map_err(err)
    }

    /// Trains in place on a corpus directory; returns the report as JSON.
    #[pyo3(signature = (corpus_dir, config_json = None))]
    fn train(&mut self, corpus_dir: &str, config_json: Option<&str>) -> PyResult<String> {
        let cfg: TrainConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(err)?,
            None => TrainConfig::default(),
        };
        if cfg.model_config() != self.inner.config {
            self.inner = RelatednessModel::new(cfg.model_config(), cfg.seed).map_err(err)?;
        }
        let corpus = load_corpus(Path::new(corpus_dir)).map_err(err)?;
        let report = train(&mut self.inner, &corpus, &cfg).map_err(err)?;
        serde_json::to_string(&report).map_err(err)
    }

    /// Symmetric association matrix of a layout document.
    fn predict(&self, layout_json: &str) -> PyResult<Vec<Vec<f64>>> {
        let layout = parse_layout(layout_json).map_err(err)?;
        Ok(self.inner.predict(&layout).map_err(err)?.scores)
    }

    /// Grouping hierarchy of a layout document, as JSON.
    #[pyo3(signature = (layout_json, params_json = None))]
    fn group(&self, layout_json: &str, params_json: Option<&str>) -> PyResult<String> {
        let layout = parse_layout(layout_json).map_err(err)?;
        let (_, h) = group_layout(&self.inner, &layout, &params_from(params_json)?).map_err(err)?;
        Ok(h.to_json())
    }

    /// Pairwise accuracy report on a corpus directory, as JSON.
    #[pyo3(signature = (corpus_dir, threshold = 0.5, ordered_pairs = false))]
    fn evaluate(&self, corpus_dir: &str, threshold: f64, ordered_pairs: bool) -> PyResult<String> {
        let corpus = load_corpus(Path::new(corpus_dir)).map_err(err)?;
        let report = evaluate(&self.inner, "model", &corpus, threshold, ordered_pairs).map_err(err)?;
        serde_json::to_string(&report).map_err(err)
    }
}

/// Writes a synthetic labeled corpus; returns the number of layouts.
#[pyfunction]
#[pyo3(signature = (out_dir, n, seed = 7))]
fn generate(out_dir: &str, n: usize, seed: u64) -> PyResult<usize> {
    let corpus = generate_corpus(&GeneratorSpec::new(seed, n)).map_err(err)?;
    write_corpus(Path::new(out_dir), &corpus).map_err(err)?;
    Ok(corpus.len())
}

/// SVG of a layout with the groups of one hierarchy level.
#[pyfunction]
fn render(layout_json: &str, hierarchy_json: &str, level: usize) -> PyResult<String> {
    let layout = parse_layout(layout_json).map_err(err)?;
    let ids: Vec<String> = layout.elements().iter().map(|e| e.id.clone()).collect();
    let h = GroupingHierarchy::from_json(hierarchy_json, &ids).map_err(err)?;
    render_svg(&layout, &h, level).map_err(err)
}

#[pymodule]
fn layoutgroup(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    Ok(())
}
