use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mtmc_core::annotate::measure_storage;
use mtmc_core::evaluate::{self, EvalConfig};
use mtmc_core::ids::CameraId;
use mtmc_core::ingest::{self, CameraVideoMeta, SamplingConfig};
use mtmc_core::scenario::{self, GroundTruth, ScenarioConfig};
use mtmc_core::tracker::{self, AssociationConfig, Trajectory};
use mtmc_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "mtmc", version, about = "Multi-camera vehicle annotation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scenario (detections, features, metadata, graph,
    /// ground truth) to a directory.
    Generate {
        /// Scenario config as JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track one camera's detections and print trajectories as JSON lines.
    Track {
        /// Detection CSV; the feature sidecar must sit next to it.
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long, default_value_t = 1)]
        interval: u32,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predicted trajectories against ground truth, one CSV row per camera.
    Evaluate {
        /// JSON-lines trajectory files, any number of cameras each, or a
        /// scenario's ground_truth.json.
        #[arg(long, required = true, num_args = 1..)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        gt: Vec<PathBuf>,
        #[arg(long, default_value = "scene")]
        scene: String,
    },
    /// Track a generated scenario at several key-frame intervals.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
        intervals: Vec<u32>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Storage footprint of a fully annotated scenario versus rendered frames.
    Storage {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the annotation service.
    Serve {
        /// TOML or JSON service config; `MTMC_*` variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn scenario_config(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::from_json(&fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_trajectory_files(paths: &[PathBuf]) -> Result<BTreeMap<CameraId, Vec<Trajectory>>> {
    let mut out: BTreeMap<CameraId, Vec<Trajectory>> = BTreeMap::new();
    for p in paths {
        let text = fs::read_to_string(p).with_context(|| p.display().to_string())?;
        // A scenario's ground_truth.json is one object; everything else is JSON lines.
        let trajs: Vec<Trajectory> = match serde_json::from_str::<GroundTruth>(&text) {
            Ok(gt) => gt.trajectories.into_values().flatten().collect(),
            Err(_) => tracker::read_trajectories(&text).with_context(|| p.display().to_string())?,
        };
        for t in trajs {
            out.entry(t.camera_id.clone()).or_default().push(t);
        }
    }
    Ok(out)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| p.display().to_string()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let cfg = scenario_config(config.as_deref(), seed)?;
            let s = scenario::generate(&cfg)?;
            s.write(&out)?;
            let n: usize = s.ground_truth.trajectories.values().map(Vec::len).sum();
            eprintln!("{} cameras, {} trajectories -> {}", s.metas.len(), n, out.display());
        }
        Command::Track {
            csv,
            meta,
            interval,
            threshold,
            out,
        } => {
            let meta = CameraVideoMeta::load(&meta)?;
            let sampling = SamplingConfig {
                interval,
                fps: meta.fps,
                confidence_threshold: threshold,
            };
            sampling.validate()?;
            let dets = ingest::parse_detections(&csv, &meta, None)?;
            let kept = ingest::sample_and_filter(&dets, &sampling);
            let frames = ingest::key_frames(&kept, interval, meta.frame_count);
            let trajs = tracker::track_camera(&frames, interval, &AssociationConfig::default(), meta.fps)?;
            emit(&tracker::write_trajectories(&trajs), out.as_deref())?;
        }
        Command::Evaluate { pred, gt, scene } => {
            let preds = read_trajectory_files(&pred)?;
            let gts = read_trajectory_files(&gt)?;
            let report = evaluate::evaluate(&scene, &preds, &gts, &EvalConfig::default())?;
            print!("{}", report.to_csv());
            println!("total,,,,{:.2},{:.2}", report.precision * 100.0, report.recall * 100.0);
        }
        Command::Sweep {
            config,
            intervals,
            repeats,
        } => {
            let s = scenario::generate(&scenario_config(config.as_deref(), None)?)?;
            let rows = scenario::sweep_intervals(
                &s,
                &intervals,
                &AssociationConfig::default(),
                &EvalConfig::default(),
                repeats,
            )?;
            print!("{}", scenario::sweep_csv(&rows));
        }
        Command::Storage { config } => {
            let s = scenario::generate(&scenario_config(config.as_deref(), None)?)?;
            let report = measure_storage(&s.annotated_store()?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Serve { config } => {
            let cfg = ServiceConfig::load(config.as_deref())?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(mtmc_service::serve(&cfg))?;
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sweep_intervals_parse_as_list() {
        let cli = Cli::try_parse_from(["mtmc", "sweep", "--intervals", "1,3"]).unwrap();
        match cli.command {
            Command::Sweep { intervals, .. } => assert_eq!(intervals, [1, 3]),
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn missing_scenario_config_is_an_error() {
        assert!(scenario_config(Some(Path::new("/nonexistent/cfg.json")), None).is_err());
    }
}
