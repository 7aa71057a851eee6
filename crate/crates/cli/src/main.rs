use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use phasorwatch::corpus::{build_corpus, CorpusConfig};
use phasorwatch::features::{read_feature_csv, write_feature_csv, FeatureRow};
use phasorwatch::hyperlab::{
    drift_experiment, lag_depth_experiment, retrain_error_experiment, ExperimentReport,
    GroundTruth, LabConfig,
};
use phasorwatch::ingest::{coarse_grain, derive_channels, parse_csv_stream, write_csv};
use phasorwatch::synth::to_samples;
use phasorwatch::tree::{cross_validate, train_tree};
use phasorwatch::{ChannelVector, SyntheticScenario, TrainConfig};
use phasorwatch_service::api::{serve, AppState};
use phasorwatch_service::config::InputKind;
use phasorwatch_service::pipeline::{load_classifier, Control};
use phasorwatch_service::store::EVENTS_FILE;
use phasorwatch_service::{Pipeline, PipelineConfig, RunState};

#[derive(Parser)]
#[command(name = "phasorwatch", version, about = "Streaming anomaly detection for PMU telemetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the live pipeline and serve the operator API.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Stop once the input is exhausted instead of waiting for Ctrl-C.
        #[arg(long)]
        exit_when_finished: bool,
    },
    /// Replay a PMU CSV file through the pipeline.
    Replay {
        #[arg(long)]
        input: PathBuf,
        /// Replay speed relative to real time; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Base configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sample rate of the CSV.
        #[arg(long)]
        rate_hz: Option<f64>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Keep serving the API after the replay until Ctrl-C.
        #[arg(long)]
        serve: bool,
    },
    /// Retraining-error, drift and lag-depth experiments.
    Hyperlab {
        #[arg(long, value_enum, default_value_t = MetricArg::D1Retrain)]
        metric: MetricArg,
        /// Training lengths in minutes.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 2.0, 8.0, 10.0])]
        tau_grid: Vec<f64>,
        /// `p:tau` pairs for the lag-depth metric.
        #[arg(long, value_delimiter = ',', default_values_t = ["1:10".to_string(), "2:20".to_string()])]
        pairs: Vec<String>,
        #[arg(long, default_value_t = 50)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ambient PMU CSV; synthetic ambient data is used when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        rate_hz: f64,
        #[arg(long, default_value_t = 0.5)]
        resolution_s: f64,
        /// Report CSV; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train and evaluate the event classifier.
    Classify {
        /// Labeled feature CSV; a synthetic corpus is used when omitted.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Held-out labeled feature CSV.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 750)]
        corpus_events: usize,
        #[arg(long, default_value_t = 8)]
        max_depth: usize,
        #[arg(long, default_value_t = 5)]
        min_leaf: usize,
        /// Write the trained tree as JSON.
        #[arg(long)]
        export_tree: Option<PathBuf>,
        /// Print the tree.
        #[arg(long)]
        show_tree: bool,
    },
    /// Generate a PMU CSV from a scenario file.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a labeled synthetic feature corpus.
    Corpus {
        #[arg(long, default_value_t = 750)]
        events: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    #[value(name = "D1_retrain", alias = "d1")]
    D1Retrain,
    #[value(name = "D2_drift", alias = "d2")]
    D2Drift,
    #[value(name = "D1_lag_depth", alias = "lag")]
    D1LagDepth,
}

fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            exit_when_finished,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            run_service(cfg, exit_when_finished)
        }
        Command::Replay {
            input,
            speed,
            config,
            rate_hz,
            data_dir,
            threshold,
            serve,
        } => {
            let mut cfg = match config {
                Some(path) => PipelineConfig::load(&path)?,
                None => PipelineConfig::from_toml_with_env("", std::env::vars())?,
            };
            cfg.input.kind = InputKind::Csv;
            cfg.input.path = Some(input);
            cfg.input.speed = speed;
            if let Some(r) = rate_hz {
                cfg.input.rate_hz = r;
            }
            if let Some(d) = data_dir {
                cfg.data_dir = d;
            }
            if let Some(t) = threshold {
                cfg.threshold_t = t;
            }
            cfg.validate()?;
            if serve {
                run_service(cfg, false)
            } else {
                replay(cfg)
            }
        }
        Command::Hyperlab {
            metric,
            tau_grid,
            pairs,
            replicates,
            seed,
            input,
            rate_hz,
            resolution_s,
            output,
        } => {
            let lab = LabConfig {
                resolution_s,
                ..LabConfig::default()
            };
            let pairs = parse_pairs(&pairs)?;
            let report = hyperlab(metric, &tau_grid, &pairs, replicates, seed, input.as_deref(), rate_hz, &lab)?;
            for (d, m) in report.distributions.iter().zip(report.medians()) {
                eprintln!("{} p={} tau={} min: median {m:.6} over {}", report.metric, d.p, d.tau_minutes, d.values.len());
            }
            write_output(output.as_deref(), report.to_csv().as_bytes())
        }
        Command::Classify {
            train,
            eval,
            folds,
            seed,
            corpus_events,
            max_depth,
            min_leaf,
            export_tree,
            show_tree,
        } => {
            let cfg = TrainConfig {
                max_depth,
                min_leaf,
                seed,
                ..TrainConfig::default()
            };
            let rows = match train {
                Some(path) => labeled_rows(&path)?,
                None => build_corpus(&CorpusConfig {
                    events: corpus_events,
                    seed,
                    ..CorpusConfig::default()
                })?
                .feature_rows(),
            };
            classify(&rows, eval.as_deref(), folds, &cfg, export_tree.as_deref(), show_tree)
        }
        Command::Synth { scenario, output } => {
            let text = std::fs::read_to_string(&scenario)
                .with_context(|| format!("reading {}", scenario.display()))?;
            let s = SyntheticScenario::parse(&text)?;
            let series = s.generate()?;
            let mut out = BufWriter::new(File::create(&output)?);
            write_csv(&mut out, &to_samples(&series))?;
            out.flush()?;
            for e in s.injected_events() {
                eprintln!("{} at sample {} ({} samples)", e.class, e.start, e.duration);
            }
            Ok(())
        }
        Command::Corpus {
            events,
            seed,
            output,
        } => {
            let corpus = build_corpus(&CorpusConfig {
                events,
                seed,
                ..CorpusConfig::default()
            })?;
            eprintln!(
                "{} events from {} injections ({} missed, {} unmatched)",
                corpus.events.len(),
                corpus.injected,
                corpus.missed.len(),
                corpus.unmatched
            );
            let mut out = BufWriter::new(File::create(&output)?);
            write_feature_csv(&mut out, &corpus.feature_rows())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn run_service(cfg: PipelineConfig, exit_when_finished: bool) -> Result<()> {
    let classifier = load_classifier(&cfg)?;
    let pipeline = Pipeline::start(cfg.clone(), classifier)?;
    let shared = pipeline.shared();
    let control = pipeline.control();
    let state = AppState {
        shared: pipeline.shared(),
        control: pipeline.control(),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let stop = async move {
            let finished = async {
                loop {
                    if !matches!(shared.status().state, RunState::Warming | RunState::Running) {
                        return;
                    }
                    tokio::time::sleep(Duration::from_millis(100)).await;
                }
            };
            if exit_when_finished {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = finished => {}
                }
            } else {
                let _ = tokio::signal::ctrl_c().await;
            }
            log::info!("shutting down");
            // Closing the stream hub ends open stream connections.
            let _ = control.send(Control::Shutdown);
        };
        serve(state, &cfg.listen, stop).await
    })?;
    let status = pipeline.shutdown();
    log::info!(
        "stopped: {} samples, {} events stored",
        status.detector.samples,
        status.events_stored
    );
    match status.error {
        Some(e) => bail!("pipeline failed: {e}"),
        None => Ok(()),
    }
}

fn replay(cfg: PipelineConfig) -> Result<()> {
    let classifier = load_classifier(&cfg)?;
    let pipeline = Pipeline::start(cfg.clone(), classifier)?;
    let status = pipeline.wait_finished();
    let events = pipeline.shared().store.read().views_since(0);
    drop(pipeline);
    let mut out = std::io::stdout().lock();
    for e in &events {
        let ev = &e.record.event;
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            ev.event_id,
            ev.start_timestamp.to_rfc3339(),
            ev.trigger_set,
            ev.class_label.map_or("-", |c| c.name())
        )?;
    }
    eprintln!(
        "{} samples, {} scored, {} events; log in {}",
        status.detector.samples,
        status.detector.scored,
        events.len(),
        cfg.data_dir.join(EVENTS_FILE).display()
    );
    match status.error {
        Some(e) => bail!("replay failed: {e}"),
        None => Ok(()),
    }
}

fn parse_pairs(raw: &[String]) -> Result<Vec<(usize, f64)>> {
    raw.iter()
        .map(|s| {
            let (p, tau) = s
                .split_once(':')
                .with_context(|| format!("pair `{s}` is not `p:tau`"))?;
            Ok((p.trim().parse()?, tau.trim().parse()?))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn hyperlab(
    metric: MetricArg,
    tau_grid: &[f64],
    pairs: &[(usize, f64)],
    replicates: usize,
    seed: u64,
    input: Option<&Path>,
    rate_hz: f64,
    lab: &LabConfig,
) -> Result<ExperimentReport> {
    let longest = match metric {
        MetricArg::D1LagDepth => pairs.iter().map(|p| p.1).fold(0.0, f64::max),
        _ => tau_grid.iter().copied().fold(0.0, f64::max),
    };
    let series = match input {
        Some(path) => {
            let samples = parse_csv_stream(BufReader::new(File::open(path)?))?;
            let channels: Vec<ChannelVector> = samples.iter().map(derive_channels).collect();
            coarse_grain(&channels, rate_hz, lab.resolution_s)?
        }
        None => {
            // Disjoint segments for every replicate; drift needs window pairs.
            let per = match metric {
                MetricArg::D2Drift => 2.0,
                _ => 1.0,
            };
            let minutes = longest * replicates as f64 * per;
            let rate = 1.0 / lab.resolution_s;
            SyntheticScenario::new(minutes * 60.0, rate, seed).synthesize_ambient(seed)?
        }
    };
    let source = GroundTruth::Series(&series);
    Ok(match metric {
        MetricArg::D1Retrain => retrain_error_experiment(&source, tau_grid, replicates, seed, lab)?,
        MetricArg::D1LagDepth => lag_depth_experiment(&source, pairs, replicates, seed, lab)?,
        MetricArg::D2Drift => drift_experiment(&series, tau_grid, lab)?,
    })
}

fn labeled_rows(path: &Path) -> Result<Vec<FeatureRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let rows: Vec<FeatureRow> = read_feature_csv(BufReader::new(file))?
        .into_iter()
        .filter(|r| r.label.is_some())
        .collect();
    if rows.is_empty() {
        bail!("{} has no labeled rows", path.display());
    }
    Ok(rows)
}

fn classify(
    rows: &[FeatureRow],
    eval: Option<&Path>,
    folds: usize,
    cfg: &TrainConfig,
    export: Option<&Path>,
    show_tree: bool,
) -> Result<()> {
    let x: Vec<_> = rows.iter().map(|r| r.features.to_array()).collect();
    let y: Vec<_> = rows.iter().map(|r| r.label.expect("rows are labeled")).collect();
    let mut out = std::io::stdout().lock();
    writeln!(out, "training rows: {}", rows.len())?;
    if folds > 1 {
        let report = cross_validate(&x, &y, folds, cfg)?;
        write!(out, "{}", report.render())?;
    }
    let tree = train_tree(&x, &y, cfg)?;
    writeln!(out, "tree: {} nodes, {} leaves, depth {}", tree.node_count(), tree.leaf_count(), tree.depth())?;
    if let Some(path) = eval {
        let held = labeled_rows(path)?;
        let correct = held
            .iter()
            .filter(|r| Some(tree.predict_class(&r.features.to_array())) == r.label)
            .count();
        writeln!(
            out,
            "eval_accuracy: {:.6} ({correct}/{})",
            correct as f64 / held.len() as f64,
            held.len()
        )?;
    }
    if show_tree {
        write!(out, "{}", tree.render())?;
    }
    if let Some(path) = export {
        std::fs::write(path, serde_json::to_string_pretty(&tree)?)?;
    }
    Ok(())
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().lock().write_all(bytes)?),
    }
}
