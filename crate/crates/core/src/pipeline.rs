//! Step sequencing from synthesis to model comparison, and the artifact
//! bundle each step writes.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{MlpMode, PipelineConfig};
use crate::dataio::{self, augment_with_noise_ref, Dataset, Provenance};
use crate::doe::{self, SensitivityReport};
use crate::error::{Error, Result};
use crate::features::{self, Domain, FeatureId, FeatureMatrix};
use crate::mlp::{self, GridResult, Metrics, Samples, TrainedModel};
use crate::selection::{self, CorrelationResult, SelectionOutcome};
use crate::synthgen::{self, PanelConfig};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// A failure tagged with the pipeline step it came from.
#[derive(Debug)]
pub struct StepError {
    pub step: &'static str,
    pub error: Error,
}

impl StepError {
    pub fn hint(&self) -> &'static str {
        match &self.error {
            Error::NoIndicators => {
                "return to feature extraction: refine the candidate features or relax the selection thresholds"
            }
            Error::Config(_) => "check the config file and PIPELINE_* environment overrides",
            Error::Io { .. } | Error::Csv { .. } | Error::Record { .. } => {
                "check dataset paths and file formats"
            }
            Error::Diverged { .. } => "lower mlp.learning_rate",
            Error::RankDeficient { .. } => "drop aliased terms from the factorial model",
            _ => "",
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "error": {
                "step": self.step,
                "message": self.error.to_string(),
                "hint": self.hint(),
            }
        })
    }
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.step, self.error)
    }
}

impl std::error::Error for StepError {}

pub type StepResult<T> = std::result::Result<T, StepError>;

trait AtStep<T> {
    fn at(self, step: &'static str) -> StepResult<T>;
}

impl<T> AtStep<T> for Result<T> {
    fn at(self, step: &'static str) -> StepResult<T> {
        self.map_err(|error| StepError { step, error })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ModelKind {
    /// Selected indicators.
    Selected = 1,
    /// One representative per correlation cluster over all candidates.
    Filtered = 2,
    /// All candidates.
    Full = 3,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Selected, ModelKind::Filtered, ModelKind::Full];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.number() == n)
    }

    pub fn description(self) -> &'static str {
        match self {
            ModelKind::Selected => "selected indicators",
            ModelKind::Filtered => "correlation-filtered candidates",
            ModelKind::Full => "all candidates",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelRun {
    pub kind: ModelKind,
    pub inputs: Vec<FeatureId>,
    pub model: TrainedModel,
    pub grid: Option<GridResult>,
    pub metrics: Metrics,
    pub test_ids: Vec<String>,
    pub test_truth: Vec<f64>,
    pub test_pred: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
}

/// Lazily evaluated pipeline; each stage runs at most once and pulls in
/// whatever it depends on.
pub struct Pipeline {
    cfg: PipelineConfig,
    hash: String,
    out: PathBuf,
    panel: PanelConfig,
    confirmation: OnceCell<Dataset>,
    training: OnceCell<Dataset>,
    confirmation_features: OnceCell<FeatureMatrix>,
    training_features: OnceCell<FeatureMatrix>,
    clean_norm: OnceCell<features::NormParams>,
    sensitivity: OnceCell<SensitivityReport>,
    selection: OnceCell<SelectionOutcome>,
    filtered: OnceCell<CorrelationResult>,
    models: [OnceCell<ModelRun>; 3],
    written: Vec<ArtifactEntry>,
    datasets: Vec<String>,
    steps: Vec<&'static str>,
}

fn rel(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> StepResult<Self> {
        cfg.validate().at("config")?;
        let panel = PanelConfig {
            sensor_quantity: cfg.synth_sensor_quantity,
            ..PanelConfig::default()
        };
        Ok(Self {
            hash: cfg.hash(),
            out: cfg.output_dir.clone(),
            cfg,
            panel,
            confirmation: OnceCell::new(),
            training: OnceCell::new(),
            confirmation_features: OnceCell::new(),
            training_features: OnceCell::new(),
            clean_norm: OnceCell::new(),
            sensitivity: OnceCell::new(),
            selection: OnceCell::new(),
            filtered: OnceCell::new(),
            models: Default::default(),
            written: Vec::new(),
            datasets: Vec::new(),
            steps: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    // ---- stages -------------------------------------------------------

    pub fn confirmation(&self) -> StepResult<&Dataset> {
        if let Some(d) = self.confirmation.get() {
            return Ok(d);
        }
        let ds = match &self.cfg.confirmation_dataset {
            Some(p) => dataio::load_dataset(p),
            None => synthgen::generate_confirmation_dataset(&self.panel, self.cfg.synth_seed()),
        }
        .at("synth")?;
        if ds.len() != doe::build_confirmation_matrix().len() {
            return Err(Error::invalid(format!(
                "confirmation dataset has {} records, the design has 8",
                ds.len()
            )))
            .at("synth");
        }
        Ok(self.confirmation.get_or_init(|| ds))
    }

    /// Clean records followed by their noisy copies.
    pub fn training(&self) -> StepResult<&Dataset> {
        if let Some(d) = self.training.get() {
            return Ok(d);
        }
        let clean = match &self.cfg.training_dataset {
            Some(p) => dataio::load_dataset(p).and_then(|d| {
                let records = d
                    .records
                    .into_iter()
                    .filter(|r| r.provenance != Provenance::Augmented)
                    .collect();
                Dataset::new(records)
            }),
            None => synthgen::generate_training_dataset(
                &self.panel,
                self.cfg.synth_n_training,
                (self.cfg.synth_energy_min, self.cfg.synth_energy_max),
                self.cfg.synth_seed(),
            ),
        }
        .at("synth")?;
        let all = augment_with_noise_ref(
            &clean,
            self.cfg.noise_level,
            self.cfg.noise_reference,
            self.cfg.noise_seed(),
        )
        .at("synth")?;
        Ok(self.training.get_or_init(|| all))
    }

    fn n_clean(&self) -> StepResult<usize> {
        Ok(self.training()?.len() / 2)
    }

    pub fn confirmation_features(&self) -> StepResult<&FeatureMatrix> {
        if let Some(m) = self.confirmation_features.get() {
            return Ok(m);
        }
        let m = features::extract_dataset(self.confirmation()?, &self.cfg.feature_config()).at("extract")?;
        Ok(self.confirmation_features.get_or_init(|| m))
    }

    /// Raw features of every training record, clean rows first.
    pub fn training_features(&self) -> StepResult<&FeatureMatrix> {
        if let Some(m) = self.training_features.get() {
            return Ok(m);
        }
        let m = features::extract_dataset(self.training()?, &self.cfg.feature_config()).at("extract")?;
        Ok(self.training_features.get_or_init(|| m))
    }

    fn clean_rows(&self) -> StepResult<Vec<usize>> {
        Ok((0..self.n_clean()?).collect())
    }

    fn noisy_rows(&self) -> StepResult<Vec<usize>> {
        let n = self.n_clean()?;
        Ok((n..2 * n).collect())
    }

    /// Min-max params of the clean training records.
    pub fn clean_norm(&self) -> StepResult<&features::NormParams> {
        if let Some(p) = self.clean_norm.get() {
            return Ok(p);
        }
        let clean = self.training_features()?.select_rows(&self.clean_rows()?);
        let p = features::minmax_normalize(&clean).at("extract")?.norm_params.expect("set by normalize");
        Ok(self.clean_norm.get_or_init(|| p))
    }

    fn normalized_training(&self) -> StepResult<FeatureMatrix> {
        self.training_features()?.apply_norm(self.clean_norm()?).at("extract")
    }

    pub fn sensitivity(&self) -> StepResult<&SensitivityReport> {
        if let Some(r) = self.sensitivity.get() {
            return Ok(r);
        }
        let r = doe::evaluate_sensitivity_with(
            self.confirmation_features()?,
            &doe::build_confirmation_matrix(),
            self.cfg.combiner,
        )
        .at("evaluate")?;
        if r.sensitive_ids().is_empty() {
            return Err(StepError { step: "evaluate", error: Error::NoIndicators });
        }
        Ok(self.sensitivity.get_or_init(|| r))
    }

    pub fn selection(&self) -> StepResult<&SelectionOutcome> {
        if let Some(s) = self.selection.get() {
            return Ok(s);
        }
        let ids = self.sensitivity()?.sensitive_ids();
        let norm = self.normalized_training()?.select(&ids).at("select")?;
        let clean = norm.select_rows(&self.clean_rows()?);
        let noisy = norm.select_rows(&self.noisy_rows()?);
        let s = selection::run_selection(&clean, &noisy, &self.cfg.thresholds()).at("select")?;
        Ok(self.selection.get_or_init(|| s))
    }

    /// Clustering of all candidates without domain grouping.
    pub fn filtered(&self) -> StepResult<&CorrelationResult> {
        if let Some(c) = self.filtered.get() {
            return Ok(c);
        }
        let clean = self.normalized_training()?.select_rows(&self.clean_rows()?);
        let c = selection::correlation_clusters_with(&clean, self.cfg.correlation_threshold, false).at("select")?;
        Ok(self.filtered.get_or_init(|| c))
    }

    pub fn model_inputs(&self, kind: ModelKind) -> StepResult<Vec<FeatureId>> {
        Ok(match kind {
            ModelKind::Selected => self.selection()?.report.selected.clone(),
            ModelKind::Filtered => self.filtered()?.representatives(),
            ModelKind::Full => FeatureId::ALL.to_vec(),
        })
    }

    pub fn model(&self, kind: ModelKind) -> StepResult<&ModelRun> {
        let cell = &self.models[kind.number() as usize - 1];
        if let Some(m) = cell.get() {
            return Ok(m);
        }
        let inputs = self.model_inputs(kind)?;
        let run = self.train_model(kind, inputs).at("train")?;
        Ok(cell.get_or_init(|| run))
    }

    fn train_model(&self, kind: ModelKind, inputs: Vec<FeatureId>) -> Result<ModelRun> {
        let raw = self
            .training_features()
            .map_err(|e| e.error)?
            .select(&inputs)?;
        let (tr, va, te) = self.cfg.split_spec().partition_indices(raw.n_rows())?;
        let params = features::minmax_normalize(&raw.select_rows(&tr))?
            .norm_params
            .expect("set by normalize");
        let norm = raw.apply_norm(&params)?;
        let energies = self.training().map_err(|e| e.error)?.energies();
        let samples = |rows: &[usize]| {
            Samples::new(
                rows.iter().map(|&i| norm.row_ids[i].clone()).collect(),
                norm.values.select(ndarray::Axis(0), rows),
                rows.iter().map(|&i| energies[i]).collect(),
            )
        };
        let (train_set, val_set, test_set) = (samples(&tr)?, samples(&va)?, samples(&te)?);

        let base = self.cfg.mlp_config(inputs.len());
        let (cfg, grid) = match self.cfg.mlp_mode {
            MlpMode::Fixed => (base, None),
            MlpMode::Grid => {
                let g = mlp::grid_search(
                    &self.cfg.grid_space(),
                    &base,
                    &train_set,
                    self.cfg.grid_folds,
                    base.seed,
                )?;
                (g.best, Some(g))
            }
        };
        let mut model = mlp::init_model(&cfg)?;
        model.feature_ids = inputs.clone();
        model.input_norm = Some(params);
        let model = mlp::train(model, &train_set, &val_set)?;
        let test_pred = model.predict(test_set.x.view())?;
        let metrics = Metrics::from_predictions(&test_set.ids, &test_pred, &test_set.y)?;
        log::info!(
            "model {}: {} inputs, test MAPE {:.2}%, R2 {:.3}",
            kind.number(),
            inputs.len(),
            metrics.mape,
            metrics.r2
        );
        Ok(ModelRun {
            kind,
            inputs,
            model,
            grid,
            metrics,
            test_ids: test_set.ids,
            test_truth: test_set.y,
            test_pred,
        })
    }

    // ---- artifact writing ---------------------------------------------

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write_file(&mut self, rel_path: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel_path);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        self.written.retain(|a| a.path != rel_path);
        self.written.push(ArtifactEntry {
            path: rel_path.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    /// CSV with a leading `# config_hash=` comment line.
    fn write_csv(
        &mut self,
        rel_path: &str,
        body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "# config_hash={}", self.hash).expect("in-memory write");
        body(&mut buf).map_err(|e| Error::io(self.path(rel_path), e))?;
        self.write_file(rel_path, &buf)
    }

    fn write_json(&mut self, rel_path: &str, mut value: Value) -> Result<()> {
        if let Value::Object(map) = &mut value {
            map.insert("config_hash".into(), Value::String(self.hash.clone()));
        }
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        self.write_file(rel_path, text.as_bytes())
    }

    pub fn write_synth(&mut self) -> StepResult<()> {
        let conf = self.confirmation()?.clone();
        let train = self.training()?.clone();
        for (name, ds) in [("confirmation", &conf), ("training", &train)] {
            let dir = self.path(&format!("datasets/{name}"));
            let manifest = dataio::write_dataset(ds, &dir).at("synth")?;
            let r = rel(&manifest, &self.out);
            if !self.datasets.contains(&r) {
                self.datasets.push(r);
            }
        }
        self.steps.push("synth");
        Ok(())
    }

    pub fn write_extract(&mut self) -> StepResult<()> {
        let conf = self.confirmation_features()?.clone();
        let train = self.training_features()?.clone();
        let norm = self.normalized_training()?;
        let fcfg = self.cfg.feature_config();
        let w = |p: &mut Self, path: &str, m: &FeatureMatrix| p.write_csv(path, |b| m.write_csv(b)).at("extract");
        w(self, "features/confirmation.csv", &conf)?;
        w(self, "features/training.csv", &train)?;
        w(self, "features/training_normalized.csv", &norm)?;
        let meta = json!({
            "confirmation": conf.metadata_json(&fcfg),
            "training": norm.metadata_json(&fcfg),
            "normalization": "min-max over the clean training records",
        });
        self.write_json("features/features.json", meta).at("extract")?;
        self.steps.push("extract");
        Ok(())
    }

    /// Features of an arbitrary dataset, raw.
    pub fn write_extract_dataset(&mut self, manifest: &Path) -> StepResult<()> {
        let ds = dataio::load_dataset(manifest).at("extract")?;
        let fcfg = self.cfg.feature_config();
        let m = features::extract_dataset(&ds, &fcfg).at("extract")?;
        self.write_csv("features/dataset.csv", |b| m.write_csv(b)).at("extract")?;
        self.write_json("features/dataset.json", m.metadata_json(&fcfg)).at("extract")?;
        self.steps.push("extract");
        Ok(())
    }

    pub fn write_evaluate(&mut self) -> StepResult<()> {
        let r = self.sensitivity()?.clone();
        self.write_csv("reports/sensitivity.csv", |b| r.write_csv(b)).at("evaluate")?;
        let json = json!({
            "f_crit": r.f_crit,
            "alpha": doe::ALPHA,
            "combiner": r.combiner.as_str(),
            "evaluations": doe::EVALUATION_FACTORS.iter().map(|f| format!("energy x {f}")).collect::<Vec<_>>(),
            "sensitive": r.sensitive_ids(),
            "features": r.features.iter().map(|f| json!({
                "id": f.id,
                "domain": f.id.domain().name(),
                "f_per_evaluation": f.f_per_evaluation.iter().map(|v| json_f64(*v)).collect::<Vec<_>>(),
                "f_reported": json_f64(f.f_reported),
                "energy_sensitive": f.energy_sensitive,
            })).collect::<Vec<_>>(),
        });
        self.write_json("reports/sensitivity.json", json).at("evaluate")?;
        self.steps.push("evaluate");
        Ok(())
    }

    pub fn write_select(&mut self) -> StepResult<()> {
        let s = self.selection()?.clone();
        let filtered = self.filtered()?.clone();
        let ids = self.sensitivity()?.sensitive_ids();
        let norm = self.normalized_training()?.select(&ids).at("select")?;
        let energies = self.training()?.energies();
        let eda = selection::emit_eda(&norm, &energies).at("select")?;

        self.write_csv("reports/selection.csv", |b| s.report.write_csv(b)).at("select")?;
        let json = json!({
            "thresholds": {
                "correlation": self.cfg.correlation_threshold,
                "variance_target": self.cfg.variance_target,
                "r_min": self.cfg.r_min,
            },
            "candidates": ids,
            "clusters": s.correlation.clusters,
            "dropped": s.report.dropped,
            "n_components_retained": s.pca.n_retained,
            "selected": s.report.selected,
            "filtered_candidates": filtered.representatives(),
            "filtered_clusters": filtered.clusters,
            "features": s.report.scores,
        });
        self.write_json("reports/selection.json", json).at("select")?;
        self.write_csv("plots/eda.csv", |b| selection::write_eda_csv(&eda, b)).at("select")?;

        for (domain, name) in [
            (Domain::Time, "time"),
            (Domain::Frequency, "frequency"),
            (Domain::TimeFrequency, "time_frequency"),
        ] {
            let sub = domain_correlation(&s.correlation, domain);
            self.write_csv(&format!("plots/correlation_{name}.csv"), |b| sub.write_csv(b))
                .at("select")?;
        }
        self.write_csv("plots/correlation_all.csv", |b| filtered.write_csv(b)).at("select")?;

        let pca = &s.pca;
        self.write_csv("plots/explained_variance.csv", |b| {
            writeln!(b, "component,eigenvalue,explained_variance_ratio,cumulative,retained")?;
            let mut acc = 0.0;
            for (i, (e, r)) in pca.eigenvalues.iter().zip(&pca.explained_variance_ratio).enumerate() {
                acc += r;
                writeln!(b, "{},{},{},{},{}", i + 1, e, r, acc, i < pca.n_retained)?;
            }
            Ok(())
        })
        .at("select")?;
        self.write_csv("plots/loadings.csv", |b| {
            let header: Vec<String> = (1..=pca.ids.len()).map(|i| format!("pc{i}")).collect();
            writeln!(b, "id,{}", header.join(","))?;
            for (id, row) in pca.ids.iter().zip(pca.loadings.rows()) {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(b, "{},{}", id, cells.join(","))?;
            }
            Ok(())
        })
        .at("select")?;
        let r_min = self.cfg.r_min;
        self.write_csv("plots/robustness.csv", |b| {
            writeln!(b, "id,r,r_min,stable")?;
            for f in &s.report.scores {
                writeln!(b, "{},{},{},{}", f.id, f.r, r_min, f.stable)?;
            }
            Ok(())
        })
        .at("select")?;
        self.steps.push("select");
        Ok(())
    }

    pub fn write_train(&mut self, kind: ModelKind) -> StepResult<()> {
        let run = self.model(kind)?.clone();
        let n = kind.number();
        let model_json = serde_json::to_value(&run.model).map_err(Error::from).at("train")?;
        self.write_json(&format!("models/model{n}.json"), json!({ "model": model_json })).at("train")?;
        self.write_json(
            &format!("models/model{n}_metrics.json"),
            json!({
                "model": n,
                "description": kind.description(),
                "inputs": run.inputs,
                "mse": run.metrics.mse,
                "mape": run.metrics.mape,
                "r2": run.metrics.r2,
                "n_test": run.test_ids.len(),
                "stopped_epoch": run.model.stopped_epoch,
                "best_epoch": run.model.best_epoch,
            }),
        )
        .at("train")?;
        self.write_csv(&format!("models/model{n}_residuals.csv"), |b| {
            writeln!(b, "id,true,predicted,residual")?;
            for ((id, t), p) in run.test_ids.iter().zip(&run.test_truth).zip(&run.test_pred) {
                writeln!(b, "{id},{t},{p},{}", p - t)?;
            }
            Ok(())
        })
        .at("train")?;
        self.write_csv(&format!("models/model{n}_history.csv"), |b| {
            writeln!(b, "epoch,train_loss,val_loss")?;
            for h in &run.model.history {
                writeln!(b, "{},{},{}", h.epoch, h.train, h.val)?;
            }
            Ok(())
        })
        .at("train")?;
        if let Some(g) = &run.grid {
            self.write_csv(&format!("models/model{n}_grid.csv"), |b| g.write_csv(b)).at("train")?;
        }
        self.steps.push("train");
        Ok(())
    }

    pub fn write_compare(&mut self) -> StepResult<()> {
        let runs: Vec<ModelRun> = ModelKind::ALL
            .iter()
            .map(|&k| self.model(k).cloned())
            .collect::<StepResult<_>>()?;
        self.write_csv("reports/compare.csv", |b| {
            writeln!(b, "model,description,n_inputs,inputs,mape,mse,r2")?;
            for r in &runs {
                let ids: Vec<&str> = r.inputs.iter().map(|i| i.as_str()).collect();
                writeln!(
                    b,
                    "{},{},{},{},{:.6},{:.6},{:.6}",
                    r.kind.number(),
                    r.kind.description(),
                    r.inputs.len(),
                    ids.join(";"),
                    r.metrics.mape,
                    r.metrics.mse,
                    r.metrics.r2
                )?;
            }
            Ok(())
        })
        .at("compare")?;
        self.write_json(
            "reports/compare.json",
            json!({
                "models": runs.iter().map(|r| json!({
                    "model": r.kind.number(),
                    "description": r.kind.description(),
                    "inputs": r.inputs,
                    "mape": r.metrics.mape,
                    "mse": r.metrics.mse,
                    "r2": r.metrics.r2,
                })).collect::<Vec<_>>(),
            }),
        )
        .at("compare")?;
        self.write_csv("plots/predictions.csv", |b| {
            writeln!(b, "id,true,model1,model2,model3")?;
            for i in 0..runs[0].test_ids.len() {
                writeln!(
                    b,
                    "{},{},{},{},{}",
                    runs[0].test_ids[i], runs[0].test_truth[i], runs[0].test_pred[i], runs[1].test_pred[i], runs[2].test_pred[i]
                )?;
            }
            Ok(())
        })
        .at("compare")?;
        self.steps.push("compare");
        Ok(())
    }

    pub fn write_all(&mut self) -> StepResult<()> {
        self.write_synth()?;
        self.write_extract()?;
        self.write_evaluate()?;
        self.write_select()?;
        for k in ModelKind::ALL {
            self.write_train(k)?;
        }
        self.write_compare()
    }

    /// Merges this invocation's files into `run_manifest.json`.
    pub fn write_manifest(&mut self, started_unix: u64) -> StepResult<()> {
        let path = self.path(MANIFEST_FILE);
        let mut reports: BTreeMap<String, String> = BTreeMap::new();
        let mut datasets: Vec<String> = Vec::new();
        let mut steps: Vec<String> = Vec::new();
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(old) = serde_json::from_str::<Value>(&text) {
                if old["config_hash"] == Value::String(self.hash.clone()) {
                    for r in old["reports"].as_array().into_iter().flatten() {
                        if let (Some(p), Some(h)) = (r["path"].as_str(), r["sha256"].as_str()) {
                            reports.insert(p.into(), h.into());
                        }
                    }
                    datasets.extend(old["datasets"].as_array().into_iter().flatten().filter_map(|d| d.as_str().map(String::from)));
                    steps.extend(old["steps"].as_array().into_iter().flatten().filter_map(|d| d.as_str().map(String::from)));
                }
            }
        }
        for a in &self.written {
            reports.insert(a.path.clone(), a.sha256.clone());
        }
        for d in &self.datasets {
            if !datasets.contains(d) {
                datasets.push(d.clone());
            }
        }
        datasets.sort();
        for s in &self.steps {
            if !steps.iter().any(|x| x == s) {
                steps.push(s.to_string());
            }
        }
        let config: BTreeMap<&str, String> = crate::config::KEYS
            .iter()
            .map(|k| (*k, self.cfg.get(k).expect("known key")))
            .collect();
        let finished = unix_now();
        let manifest = json!({
            "config_hash": self.hash,
            "crate_version": env!("CARGO_PKG_VERSION"),
            "schema_version": dataio::SCHEMA_VERSION,
            "config": config,
            "seeds": {
                "base": self.cfg.seed,
                "synth": self.cfg.synth_seed(),
                "noise": self.cfg.noise_seed(),
                "split": self.cfg.split_seed(),
                "mlp": self.cfg.mlp_seed(),
            },
            "steps": steps,
            "reports": reports.iter().map(|(p, h)| json!({"path": p, "sha256": h})).collect::<Vec<_>>(),
            "datasets": datasets,
            "started_unix": started_unix,
            "finished_unix": finished,
        });
        let mut text = serde_json::to_string_pretty(&manifest).map_err(Error::from).at("manifest")?;
        text.push('\n');
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e)).at("manifest")?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e)).at("manifest")?;
        Ok(())
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// JSON has no infinity; the F sentinel is written as the string "inf".
fn json_f64(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

fn domain_correlation(cr: &CorrelationResult, domain: Domain) -> CorrelationResult {
    let idx: Vec<usize> = (0..cr.ids.len()).filter(|&i| cr.ids[i].domain() == domain).collect();
    CorrelationResult {
        ids: idx.iter().map(|&i| cr.ids[i]).collect(),
        matrix: cr.matrix.select(ndarray::Axis(0), &idx).select(ndarray::Axis(1), &idx),
        clusters: cr
            .clusters
            .iter()
            .filter(|c| c.members[0].domain() == domain)
            .cloned()
            .collect(),
        threshold: cr.threshold,
        dropped: Vec::new(),
    }
}
