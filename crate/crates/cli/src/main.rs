//! Command-line front end: each subcommand is a pure function of
//! (inputs, config, seed) to output bytes.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use aupref::au_activation::activation_value;
use aupref::data_model::{load_cohort, write_cohort, AuId, CohortPaths};
use aupref::error::{Error, Result};
use aupref::fitting::{lopo_evaluate, Dataset, IntegrationBase, Protocol};
use aupref::frame_filter::filter_clip;
use aupref::pipeline::{analyze, protocol_label, run_pipeline, RunConfig};
use aupref::scoring::au4_valence;
use aupref::synth::{generate_synthetic_cohort, SynthSpec};

#[derive(Parser)]
#[command(name = "aupref", version, about = "AU-trace preference annotation pipeline")]
struct Cli {
    /// JSON run configuration; individual flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: ConfigOverrides,

    #[command(subcommand)]
    command: Command,
}

/// Flag-level overrides for every RunConfig field.
#[derive(Args, Debug, Default)]
struct ConfigOverrides {
    #[arg(long, global = true)]
    fdcs_min: Option<f64>,
    #[arg(long, global = true)]
    yir_min: Option<f64>,
    #[arg(long, global = true)]
    yir_max: Option<f64>,
    #[arg(long, global = true)]
    pir_min: Option<f64>,
    #[arg(long, global = true)]
    pir_max: Option<f64>,
    #[arg(long, global = true)]
    clip_exclusion_fraction: Option<f64>,
    #[arg(long, global = true)]
    penalty: Option<i64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// either_clip or reaction_only
    #[arg(long, global = true)]
    exclusion_policy: Option<String>,
    #[arg(long, global = true)]
    reference_k: Option<f64>,
    #[arg(long, global = true)]
    output_dir: Option<String>,
    #[arg(long, global = true)]
    traces: Option<String>,
    #[arg(long, global = true)]
    annotations: Option<String>,
    #[arg(long, global = true)]
    scores: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and write its input files.
    Synth {
        #[arg(long, default_value_t = 30)]
        participants: usize,
        #[arg(long, default_value_t = 10)]
        sessions: usize,
        #[arg(long, default_value_t = 5)]
        images: usize,
        #[arg(long, default_value_t = 0)]
        unreliable: usize,
        /// Directory receiving traces.csv, annotations.json, scores.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load and validate the input files; print a summary.
    Ingest,
    /// Print the per-clip filter log as CSV.
    Filter,
    /// Print per-image AU activation values as CSV.
    Activate,
    /// Print AU4 valence scores as CSV.
    Score {
        #[arg(long, default_value_t = 0.4)]
        k: f64,
    },
    /// Fit one protocol with LOPO and print the per-fold parameters.
    Fit {
        #[arg(long, default_value = "valence_only")]
        protocol: String,
    },
    /// Fit and evaluate one protocol; print the full fit result.
    Evaluate {
        #[arg(long, default_value = "valence_only")]
        protocol: String,
    },
    /// Print the correlation and regression reports.
    Stats,
    /// Run the loss-kit gradient and weight checks; print pass/fail lines.
    Losscheck {
        #[arg(long, default_value_t = 100)]
        batches: usize,
    },
    /// Run the full pipeline and write the report bundle.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config: RunConfig = match &cli.config {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => RunConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(v) = o.fdcs_min {
        config.thresholds.fdcs_min = v;
    }
    if let Some(v) = o.yir_min {
        config.thresholds.yir_range[0] = v;
    }
    if let Some(v) = o.yir_max {
        config.thresholds.yir_range[1] = v;
    }
    if let Some(v) = o.pir_min {
        config.thresholds.pir_range[0] = v;
    }
    if let Some(v) = o.pir_max {
        config.thresholds.pir_range[1] = v;
    }
    if let Some(v) = o.clip_exclusion_fraction {
        config.thresholds.clip_exclusion_fraction = v;
    }
    if let Some(v) = o.penalty {
        config.penalty = v;
    }
    if let Some(v) = o.seed {
        config.seed = v;
    }
    if let Some(v) = &o.exclusion_policy {
        config.exclusion_policy = serde_json::from_value(serde_json::Value::String(v.clone()))?;
    }
    if let Some(v) = o.reference_k {
        config.reference_k = v;
    }
    if let Some(v) = &o.output_dir {
        config.output_dir = v.clone();
    }
    if o.traces.is_some() || o.annotations.is_some() || o.scores.is_some() {
        let base = config.inputs.clone().unwrap_or(CohortPaths {
            traces: String::new(),
            annotations: String::new(),
            scores: String::new(),
        });
        config.inputs = Some(CohortPaths {
            traces: o.traces.clone().unwrap_or(base.traces),
            annotations: o.annotations.clone().unwrap_or(base.annotations),
            scores: o.scores.clone().unwrap_or(base.scores),
        });
    }
    config.validate()?;
    Ok(config)
}

fn parse_protocol(name: &str) -> Result<Protocol> {
    let all = [
        Protocol::ValenceOnly,
        Protocol::Ensemble,
        Protocol::Integrated(IntegrationBase::Imagereward),
        Protocol::Integrated(IntegrationBase::Pickscore),
        Protocol::Integrated(IntegrationBase::Hpsv2),
        Protocol::Integrated(IntegrationBase::Ensemble),
    ];
    all.into_iter()
        .find(|&p| protocol_label(p) == name)
        .ok_or_else(|| {
            Error::validation(format!(
                "unknown protocol {name}; expected one of {}",
                all.map(protocol_label).join(", ")
            ))
        })
}

fn cohort_from(config: &RunConfig) -> Result<aupref::Cohort> {
    let paths = config
        .inputs
        .as_ref()
        .ok_or_else(|| Error::validation("input paths required: --traces/--annotations/--scores"))?;
    load_cohort(paths, config.thresholds)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Synth {
            participants,
            sessions,
            images,
            unreliable,
            out,
        } => {
            let spec = SynthSpec {
                participants: *participants,
                sessions_per_participant: *sessions,
                images_per_session: *images,
                unreliable_participants: *unreliable,
                ..SynthSpec::default()
            };
            let cohort = generate_synthetic_cohort(&spec, config.seed)?;
            let paths = write_cohort(&cohort, out)?;
            print_json(&paths)?;
        }
        Command::Ingest => {
            let cohort = cohort_from(&config)?;
            print_json(&serde_json::json!({
                "participants": cohort.participants().len(),
                "sessions": cohort.sessions.len(),
                "traces": cohort.traces.len(),
                "scored_images": cohort.scores.by_image.len(),
            }))?;
        }
        Command::Filter => {
            let cohort = cohort_from(&config)?;
            let dataset = Dataset::prepare(&cohort, config.exclusion_policy)?;
            let mut writer = csv::Writer::from_writer(std::io::stdout().lock());
            writer.write_record([
                "participant_id",
                "session_id",
                "image_id",
                "clip_kind",
                "excluded_fraction",
                "retained",
            ])?;
            for (p, s, i, kind, frac, retained) in &dataset.clip_log {
                writer.write_record([p, s, i, kind, &format!("{frac}"), &retained.to_string()])?;
            }
            writer.flush()?;
        }
        Command::Activate => {
            let cohort = cohort_from(&config)?;
            let mut writer = csv::Writer::from_writer(std::io::stdout().lock());
            let mut header = vec![
                "participant_id".to_string(),
                "session_id".to_string(),
                "image_id".to_string(),
                "clip_kind".to_string(),
            ];
            header.extend(AuId::ALL.iter().map(|au| au.column()));
            writer.write_record(&header)?;
            for trace in &cohort.traces {
                let clip = filter_clip(trace, &cohort.thresholds)?;
                let Ok(features) = activation_value(&clip) else {
                    continue;
                };
                let mut row = vec![
                    trace.participant_id.clone(),
                    trace.session_id.clone(),
                    trace.image_id.clone(),
                    trace.clip_kind.label().to_string(),
                ];
                row.extend(AuId::ALL.iter().map(|au| format!("{}", features.activation[au])));
                writer.write_record(&row)?;
            }
            writer.flush()?;
        }
        Command::Score { k } => {
            let cohort = cohort_from(&config)?;
            let dataset = Dataset::prepare(&cohort, config.exclusion_policy)?;
            let mut writer = csv::Writer::from_writer(std::io::stdout().lock());
            writer.write_record(["image_id", "alpha4", "valence"])?;
            for (image_id, alpha4) in dataset.alpha4() {
                writer.write_record([
                    image_id.as_str(),
                    &format!("{alpha4}"),
                    &format!("{}", au4_valence(alpha4, *k)?),
                ])?;
            }
            writer.flush()?;
        }
        Command::Fit { protocol } => {
            let protocol = parse_protocol(protocol)?;
            let cohort = cohort_from(&config)?;
            let dataset = Dataset::prepare(&cohort, config.exclusion_policy)?;
            let result = lopo_evaluate(&dataset, protocol, &config.grid, config.penalty)?;
            let params: Vec<_> = result
                .folds
                .iter()
                .map(|f| serde_json::json!({"held_out": f.held_out, "params": f.params}))
                .collect();
            print_json(&params)?;
        }
        Command::Evaluate { protocol } => {
            let protocol = parse_protocol(protocol)?;
            let cohort = cohort_from(&config)?;
            let dataset = Dataset::prepare(&cohort, config.exclusion_policy)?;
            print_json(&lopo_evaluate(&dataset, protocol, &config.grid, config.penalty)?)?;
        }
        Command::Stats => {
            let cohort = cohort_from(&config)?;
            let bundle = analyze(&cohort, &config)?;
            print_json(&serde_json::json!({
                "correlations": bundle.correlations,
                "regressions": bundle.regressions,
            }))?;
        }
        Command::Losscheck { batches } => {
            let failures = losscheck::run(config.seed, *batches)?;
            if failures > 0 {
                return Err(Error::data(format!("losscheck: {failures} checks failed")));
            }
        }
        Command::Report => {
            let (_, manifest) = run_pipeline(&config)?;
            print_json(&manifest)?;
        }
    }
    Ok(())
}

mod losscheck;

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
