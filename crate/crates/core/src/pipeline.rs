//! End-to-end orchestration: load -> filter -> activate -> participant
//! screen -> fit/evaluate -> statistics, with a deterministic output bundle
//! and a manifest of config and input/output digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_model::{load_cohort, Cohort, CohortPaths, SCORE_MODELS};
use crate::error::{Error, Result};
use crate::fitting::{
    lopo_evaluate, Dataset, ExclusionPolicy, FitResult, GridSpec, IntegrationBase, Protocol,
};
use crate::frame_filter::FilterThresholds;
use crate::scoring::{au4_valence, mean_std, standardize};
use crate::stats::{
    correlation_report, multiple_linear_regression, ImageObservation, Regression, TestReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Input files; `None` means the cohort is supplied in memory.
    pub inputs: Option<CohortPaths>,
    pub thresholds: FilterThresholds,
    pub grid: GridSpec,
    /// Penalty on incorrect predictions in the fitting objective.
    pub penalty: i64,
    /// Recorded in the manifest; all synthetic-data randomness flows from it.
    pub seed: u64,
    pub protocols: Vec<Protocol>,
    pub exclusion_policy: ExclusionPolicy,
    /// k used for the reference valence column in the regression report.
    pub reference_k: f64,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: None,
            thresholds: FilterThresholds::default(),
            grid: GridSpec::default(),
            penalty: 2,
            seed: 0,
            protocols: vec![
                Protocol::ValenceOnly,
                Protocol::Ensemble,
                Protocol::Integrated(IntegrationBase::Imagereward),
                Protocol::Integrated(IntegrationBase::Pickscore),
                Protocol::Integrated(IntegrationBase::Hpsv2),
                Protocol::Integrated(IntegrationBase::Ensemble),
            ],
            exclusion_policy: ExclusionPolicy::default(),
            reference_k: 0.4,
            output_dir: "out".to_string(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.grid.validate()?;
        if self.penalty < 0 {
            return Err(Error::validation("penalty must be non-negative"));
        }
        if self.protocols.is_empty() {
            return Err(Error::validation("at least one protocol is required"));
        }
        if self.reference_k <= 0.0 {
            return Err(Error::validation("reference_k must be positive"));
        }
        if self.output_dir.is_empty() {
            return Err(Error::validation("output_dir must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub participants_included: Vec<String>,
    pub participants_excluded: Vec<String>,
    pub n_valid_images: usize,
    pub n_pairs: usize,
    pub n_clips_total: usize,
    pub n_clips_excluded: usize,
}

/// One regression of a standardized score column on (alignment, fidelity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub target: String,
    pub n: usize,
    pub regression: Option<Regression>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub config: RunConfig,
    pub summary: DatasetSummary,
    pub fits: Vec<FitResult>,
    pub correlations: Vec<TestReport>,
    pub regressions: Vec<RegressionRow>,
}

pub fn protocol_label(protocol: Protocol) -> &'static str {
    match protocol {
        Protocol::ValenceOnly => "valence_only",
        Protocol::Ensemble => "ensemble",
        Protocol::Integrated(IntegrationBase::Imagereward) => "integrated_imagereward",
        Protocol::Integrated(IntegrationBase::Pickscore) => "integrated_pickscore",
        Protocol::Integrated(IntegrationBase::Hpsv2) => "integrated_hpsv2",
        Protocol::Integrated(IntegrationBase::Ensemble) => "integrated_ensemble",
    }
}

/// Runs every analysis stage on an in-memory cohort. Pure: no file I/O.
pub fn analyze(cohort: &Cohort, config: &RunConfig) -> Result<ReportBundle> {
    config.validate()?;
    let dataset = Dataset::prepare(cohort, config.exclusion_policy)
        .map_err(|e| stage("filter/activate", e))?;

    let mut fits = Vec::new();
    for &protocol in &config.protocols {
        fits.push(
            lopo_evaluate(&dataset, protocol, &config.grid, config.penalty)
                .map_err(|e| stage(protocol_label(protocol), e))?,
        );
    }

    let observations: Vec<ImageObservation> = dataset
        .images
        .values()
        .map(|info| ImageObservation {
            activations: info.activations.clone(),
            overall: info.overall,
            emotions: info.emotions.clone(),
        })
        .collect();
    let correlations = correlation_report(&observations).map_err(|e| stage("stats", e))?;
    let regressions = regression_report(&dataset, config.reference_k)?;

    Ok(ReportBundle {
        config: config.clone(),
        summary: DatasetSummary {
            participants_included: dataset.included_participants.clone(),
            participants_excluded: dataset.excluded_participants.clone(),
            n_valid_images: dataset.images.len(),
            n_pairs: dataset.total_pairs(),
            n_clips_total: dataset.clip_log.len(),
            n_clips_excluded: dataset.clip_log.iter().filter(|c| !c.5).count(),
        },
        fits,
        correlations,
        regressions,
    })
}

/// Regresses each standardized score column, and the reference valence
/// score, on (intercept, alignment, fidelity). Columns with too little data
/// are reported with a note rather than failing the run.
fn regression_report(dataset: &Dataset, reference_k: f64) -> Result<Vec<RegressionRow>> {
    let mut rows = Vec::new();
    let targets: Vec<(String, Vec<(String, f64)>)> = SCORE_MODELS
        .iter()
        .map(|&model| {
            let col: Vec<(String, f64)> = dataset
                .images
                .iter()
                .filter_map(|(id, info)| info.scores.get(model).map(|s| (id.clone(), s)))
                .collect();
            (model.to_string(), col)
        })
        .chain(std::iter::once((
            "au4_valence".to_string(),
            dataset
                .alpha4()
                .into_iter()
                .map(|(id, a)| Ok((id, au4_valence(a, reference_k)?)))
                .collect::<Result<_>>()?,
        )))
        .collect();

    for (target, column) in targets {
        let values: Vec<f64> = column.iter().map(|(_, v)| *v).collect();
        let row = match mean_std(&values).and_then(|(m, s)| standardize(&values, m, s)) {
            Ok(y) => {
                let alignment: Vec<f64> = column
                    .iter()
                    .map(|(id, _)| dataset.images[id].alignment as f64)
                    .collect();
                let fidelity: Vec<f64> = column
                    .iter()
                    .map(|(id, _)| dataset.images[id].fidelity as f64)
                    .collect();
                match multiple_linear_regression(&alignment, &fidelity, &y) {
                    Ok(regression) => RegressionRow {
                        target,
                        n: column.len(),
                        regression: Some(regression),
                        note: None,
                    },
                    Err(e) => RegressionRow {
                        target,
                        n: column.len(),
                        regression: None,
                        note: Some(e.to_string()),
                    },
                }
            }
            Err(e) => RegressionRow {
                target,
                n: column.len(),
                regression: None,
                note: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    /// Input path -> SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output file name -> SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn stage(name: &str, err: Error) -> Error {
    Error::data(format!("stage {name}: {err}"))
}

fn outcomes_csv(fits: &[FitResult]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "protocol",
        "held_out",
        "n_correct",
        "n_incorrect",
        "n_abstain",
        "accuracy",
        "selection_rate",
        "objective",
    ])?;
    let mut write = |protocol: &str, held_out: &str, o: &crate::preference::PredictionOutcome| {
        writer.write_record([
            protocol,
            held_out,
            &o.n_correct.to_string(),
            &o.n_incorrect.to_string(),
            &o.n_abstain.to_string(),
            &format!("{}", o.accuracy),
            &format!("{}", o.selection_rate),
            &o.objective.to_string(),
        ])
    };
    for fit in fits {
        let label = protocol_label(fit.protocol);
        for fold in &fit.folds {
            write(label, &fold.held_out, &fold.outcome)?;
        }
        write(label, "(pooled)", &fit.pooled)?;
        if let Some(forced) = &fit.pooled_forced {
            write(label, "(pooled_forced)", forced)?;
        }
    }
    writer
        .into_inner()
        .map_err(|e| Error::data(format!("csv buffer: {e}")))
}

/// Serializes the bundle into the output directory, writing a manifest of
/// config and input/output digests last. On any write error the files
/// created by this call are removed.
pub fn write_bundle(bundle: &ReportBundle, config: &RunConfig) -> Result<Manifest> {
    let dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&dir)?;

    let mut inputs = BTreeMap::new();
    if let Some(paths) = &config.inputs {
        for path in [&paths.traces, &paths.annotations, &paths.scores] {
            inputs.insert(path.clone(), sha256_hex(&std::fs::read(path)?));
        }
    }

    let files: Vec<(&str, Vec<u8>)> = vec![
        ("fit.json", serde_json::to_vec_pretty(&bundle.fits)?),
        ("outcomes.csv", outcomes_csv(&bundle.fits)?),
        (
            "stats.json",
            serde_json::to_vec_pretty(&serde_json::json!({
                "correlations": bundle.correlations,
                "regressions": bundle.regressions,
            }))?,
        ),
        ("summary.json", serde_json::to_vec_pretty(&bundle.summary)?),
    ];

    let manifest = Manifest {
        config_sha256: sha256_hex(&serde_json::to_vec(config)?),
        inputs,
        outputs: files
            .iter()
            .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
            .collect(),
    };

    let mut written: Vec<PathBuf> = Vec::new();
    let mut write_one = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    let result = (|| {
        for (name, bytes) in &files {
            write_one(name, bytes)?;
        }
        write_one("manifest.json", &serde_json::to_vec_pretty(&manifest)?)
    })();
    if let Err(e) = result {
        for path in &written {
            let _ = std::fs::remove_file(path);
        }
        return Err(e);
    }
    Ok(manifest)
}

/// Loads the configured inputs, runs every stage, and writes the bundle.
pub fn run_pipeline(config: &RunConfig) -> Result<(ReportBundle, Manifest)> {
    config.validate()?;
    let paths = config
        .inputs
        .as_ref()
        .ok_or_else(|| Error::validation("run_pipeline requires input paths"))?;
    let cohort = load_cohort(paths, config.thresholds).map_err(|e| stage("load", e))?;
    let bundle = analyze(&cohort, config)?;
    let manifest = write_bundle(&bundle, config)?;
    Ok((bundle, manifest))
}

/// Reads every file in `dir` into (name -> bytes); used by determinism checks.
pub fn read_dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            out.insert(
                entry.file_name().to_string_lossy().to_string(),
                std::fs::read(entry.path())?,
            );
        }
    }
    Ok(out)
}
