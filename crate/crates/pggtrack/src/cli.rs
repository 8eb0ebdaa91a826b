//! Command-line surface.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use pggtrack_core::heatmap::pose_mask;
use pggtrack_core::metrics::Evaluator;
use pggtrack_core::pipeline::{decode_frame, grouping_fields, track_sequence, PipelineConfig};
use pggtrack_core::simulator::{calibrated_tracker, generate_scene, scenario_preset, synth_sequence, PRESET_NAMES};
use pggtrack_core::train::{evaluate_ablation, toy_dataset, toy_pipeline, train, ToyPredictor, TrainConfig};
use pggtrack_core::{FrameBundle, GridShape, Pose, Skeleton};

use crate::atomic::{read_json, write_atomic, write_json};
use crate::bench::bench_pgg;
use crate::config::RunConfig;
use crate::dataset::{
    frame_file_name, read_ground_truth, read_manifest, read_sequence, sequence_dirs, write_sequence, FrameRef, GridSize,
    SequenceManifest, GROUND_TRUTH_FILE, RUN_CONFIG_FILE,
};
use crate::error::CliError;
use crate::gradsuite::{check_loss, LossKind};
use crate::plot::{bar_chart, line_chart, scatter, Series};
use crate::records::{
    check_joint_names, poses_by_frame, pose_to_record, tracks_to_record, FrameRecord, PosesDocument, SequencePoses,
    TracksDocument,
};
use crate::report::MetricsTable;

#[derive(Debug, Parser)]
#[command(name = "pggtrack", version, about = "Multi-person pose grouping and tracking on simulated dense fields")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Also write SVG plots into this directory.
    #[arg(long, global = true)]
    pub plot: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic sequence into a directory.
    Simulate {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Override the preset's frame count.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// List scenario presets.
    Presets,
    /// Decode every frame of one or more sequences into poses.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        /// Run configuration; defaults to the sequence's own run_config.json.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode and associate poses over time.
    Track {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score tracks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of each loss.
    GradCheck {
        /// `all` or one of det, pull, push, aux, svf, tvf, triplet, pgg.
        #[arg(long, default_value = "all")]
        loss: String,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Peak memory of masked against full-image refinement.
    BenchPgg {
        #[arg(long, default_value_t = 0.1)]
        occupancy: f64,
        #[arg(long, default_value = "128x128")]
        shape: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the full-image run (it needs N^2 memory).
        #[arg(long)]
        skip_full: bool,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy predictor with and without refinement and compare.
    TrainToy {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long, default_value_t = 8)]
        held_out: usize,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::invalid("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::invalid(format!("cannot start thread pool: {e}")))?;
    let plot = cli.plot.clone();
    pool.install(|| dispatch(cli.command, plot.as_deref()))
}

fn dispatch(command: Command, plot: Option<&Path>) -> Result<(), CliError> {
    match command {
        Command::Simulate { preset, seed, out, frames } => simulate(&preset, seed, frames, &out),
        Command::Presets => {
            for p in PRESET_NAMES {
                println!("{p}");
            }
            Ok(())
        }
        Command::Decode { input, config, out } => decode(&input, config.as_deref(), &out, plot),
        Command::Track { input, config, out } => track(&input, config.as_deref(), &out),
        Command::Eval { pred, gt, out, config } => eval(&pred, &gt, &out, config.as_deref(), plot),
        Command::GradCheck { loss, instances, seed } => grad_check(&loss, instances, seed),
        Command::BenchPgg {
            occupancy,
            shape,
            seed,
            skip_full,
            out,
        } => bench(occupancy, &shape, seed, skip_full, out.as_deref()),
        Command::TrainToy {
            seed,
            steps,
            out,
            learning_rate,
            scenes,
            held_out,
        } => train_toy(seed, steps, learning_rate, scenes, held_out, &out, plot),
    }
}

fn simulate(preset: &str, seed: u64, frames: Option<usize>, out: &Path) -> Result<(), CliError> {
    let (mut scene_cfg, noise) = scenario_preset(preset, seed)?;
    if let Some(n) = frames {
        scene_cfg.frames = n;
    }
    let scene = generate_scene(&scene_cfg)?;
    let bundles = synth_sequence(&scene, &noise)?;
    let manifest = SequenceManifest {
        sequence_id: format!("{preset}_{seed}"),
        frame_count: bundles.len(),
        grid: GridSize {
            width: scene_cfg.width,
            height: scene_cfg.height,
        },
        skeleton: scene_cfg.skeleton.clone(),
        frames: bundles
            .iter()
            .map(|f| FrameRef {
                time_index: f.time_index,
                file: frame_file_name(f.time_index),
            })
            .collect(),
        ground_truth: Some(GROUND_TRUTH_FILE.into()),
        preset: Some(preset.into()),
        scene: Some(scene_cfg.clone()),
        noise: Some(noise.clone()),
        seed: Some(seed),
    };
    write_sequence(out, &manifest, &bundles)?;
    let run_cfg = RunConfig::from_pipeline(&PipelineConfig {
        tracker: calibrated_tracker(&scene_cfg, &noise),
        ..PipelineConfig::default()
    });
    write_json(&out.join(RUN_CONFIG_FILE), &run_cfg)?;
    println!("wrote {} frames to {}", bundles.len(), out.display());
    Ok(())
}

/// Explicit config, else the sequence's run_config.json, else defaults.
fn load_config(explicit: Option<&Path>, dir: &Path) -> Result<RunConfig, CliError> {
    match explicit {
        Some(p) => RunConfig::load(p),
        None if dir.join(RUN_CONFIG_FILE).is_file() => RunConfig::load(&dir.join(RUN_CONFIG_FILE)),
        None => Ok(RunConfig::default()),
    }
}

/// All sequences under `input` must share one skeleton.
fn common_skeleton<'a>(skeletons: impl IntoIterator<Item = &'a Skeleton>) -> Result<Skeleton, CliError> {
    let mut it = skeletons.into_iter();
    let first = it.next().ok_or_else(|| CliError::invalid("no sequences"))?;
    if it.any(|s| s.joint_names() != first.joint_names()) {
        return Err(CliError::invalid("sequences use different skeletons"));
    }
    Ok(first.clone())
}

fn decode(input: &Path, config: Option<&Path>, out: &Path, plot: Option<&Path>) -> Result<(), CliError> {
    let dirs = sequence_dirs(input)?;
    let mut sequences = Vec::new();
    let mut first_frame: Option<(FrameBundle, PipelineConfig)> = None;
    for dir in &dirs {
        let cfg = load_config(config, dir)?.pipeline()?;
        let seq = read_sequence(dir)?;
        let skeleton = &seq.manifest.skeleton;
        let decoded = seq
            .frames
            .par_iter()
            .map(|f| decode_frame(f, &cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let frames = seq
            .frames
            .iter()
            .zip(decoded)
            .map(|(f, dets)| FrameRecord {
                time_index: f.time_index,
                poses: dets.iter().map(|d| pose_to_record(&d.pose, skeleton)).collect(),
            })
            .collect();
        if first_frame.is_none() {
            first_frame = seq.frames.first().cloned().map(|f| (f, cfg.clone()));
        }
        sequences.push((
            seq.manifest.skeleton.clone(),
            SequencePoses {
                sequence_id: seq.manifest.sequence_id.clone(),
                frames,
            },
        ));
    }
    let skeleton = common_skeleton(sequences.iter().map(|(s, _)| s))?;
    let doc = PosesDocument {
        joint_names: skeleton.joint_names().to_vec(),
        sequences: sequences.into_iter().map(|(_, s)| s).collect(),
    };
    write_json(out, &doc)?;
    let count: usize = doc.sequences.iter().flat_map(|s| &s.frames).map(|f| f.poses.len()).sum();
    println!("decoded {count} poses in {} sequences", doc.sequences.len());
    if let (Some(dir), Some((frame, cfg))) = (plot, first_frame) {
        plot_embeddings(dir, &frame, &cfg)?;
    }
    Ok(())
}

/// Spatial embeddings of masked pixels before and after refinement.
fn plot_embeddings(dir: &Path, frame: &FrameBundle, cfg: &PipelineConfig) -> Result<(), CliError> {
    let mask = pose_mask(&frame.heatmaps, cfg.mask_tau)?;
    let raw = grouping_fields(&frame.ke, &frame.svf, &frame.heatmaps, &PipelineConfig { use_pgg: false, ..cfg.clone() })?;
    let refined = grouping_fields(&frame.ke, &frame.svf, &frame.heatmaps, &PipelineConfig { use_pgg: true, ..cfg.clone() })?;
    let pts = |f: &pggtrack_core::VectorField2| mask.indices().into_iter().map(|i| f.at(i)).collect::<Vec<_>>();
    let svg = scatter(
        "spatial embedding of masked pixels",
        &[
            Series { label: "raw", points: pts(&raw.1) },
            Series { label: "refined", points: pts(&refined.1) },
        ],
    );
    write_plot(dir, "embeddings.svg", &svg)
}

fn write_plot(dir: &Path, name: &str, svg: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_atomic(&dir.join(name), svg.as_bytes())
}

fn track(input: &Path, config: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let dirs = sequence_dirs(input)?;
    let results = dirs
        .par_iter()
        .map(|dir| {
            let cfg = load_config(config, dir)?.pipeline()?;
            let seq = read_sequence(dir)?;
            let skeleton = seq.manifest.skeleton.clone();
            let tracks = track_sequence(&seq.frames, &cfg, &skeleton)?;
            Ok((skeleton.clone(), tracks_to_record(&seq.manifest.sequence_id, &tracks, &skeleton)))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let skeleton = common_skeleton(results.iter().map(|(s, _)| s))?;
    let doc = TracksDocument {
        joint_names: skeleton.joint_names().to_vec(),
        sequences: results.into_iter().map(|(_, s)| s).collect(),
    };
    write_json(out, &doc)?;
    let count: usize = doc.sequences.iter().map(|s| s.tracks.len()).sum();
    println!("{count} tracks in {} sequences", doc.sequences.len());
    Ok(())
}

fn eval(pred: &Path, gt: &Path, out: &Path, config: Option<&Path>, plot: Option<&Path>) -> Result<(), CliError> {
    let doc: TracksDocument = read_json(pred)?;
    let factor = match config {
        Some(p) => RunConfig::load(p)?.eval.pckh_factor,
        None => RunConfig::default().eval.pckh_factor,
    };
    let dirs = sequence_dirs(gt)?;
    let manifests = dirs.iter().map(|d| read_manifest(d)).collect::<Result<Vec<_>, _>>()?;
    let skeleton = common_skeleton(manifests.iter().map(|m| &m.skeleton))?;
    check_joint_names(&doc.joint_names, &skeleton)?;
    let mut ev = Evaluator::new(skeleton.clone(), factor)?;
    for (dir, manifest) in dirs.iter().zip(&manifests) {
        let truth = read_ground_truth(dir, manifest)?
            .ok_or_else(|| CliError::invalid(format!("{} has no ground truth", dir.display())))?;
        let tracks = doc
            .sequences
            .iter()
            .find(|s| s.sequence_id == manifest.sequence_id)
            .ok_or_else(|| CliError::invalid(format!("no tracks for sequence {:?}", manifest.sequence_id)))?;
        let predicted: BTreeMap<usize, Vec<Pose>> = poses_by_frame(tracks, &skeleton)?;
        for (r, g) in manifest.frames.iter().zip(&truth) {
            let p = predicted.get(&r.time_index).map(Vec::as_slice).unwrap_or(&[]);
            ev.add_frame(p, g)?;
        }
        ev.next_sequence();
    }
    let report = ev.report();
    let table = MetricsTable::from_report(&report);
    write_atomic(out, table.to_csv()?.as_bytes())?;
    print!("{}", table.display());
    if let Some(dir) = plot {
        let rows: Vec<(&str, Vec<Option<f64>>)> = table.rows.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        write_plot(dir, "metrics.svg", &bar_chart("AP and MOTA", &table.columns, &rows))?;
    }
    Ok(())
}

fn grad_check(loss: &str, instances: usize, seed: u64) -> Result<(), CliError> {
    let kinds: Vec<LossKind> = if loss == "all" {
        LossKind::ALL.to_vec()
    } else {
        vec![loss.parse()?]
    };
    if instances == 0 {
        return Err(CliError::invalid("--instances must be at least 1"));
    }
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut stdout = std::io::stdout().lock();
    for k in kinds {
        let r = check_loss(k, instances, seed)?;
        let _ = writeln!(
            stdout,
            "{:<8} max_rel_error={:.3e} checked={} excluded={} {}",
            k.name(),
            r.max_rel_error,
            r.checked,
            r.excluded,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if !r.passed() {
            failed.push(k.name());
        }
    }
    let _ = writeln!(stdout, "elapsed {:.2}s", start.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::invalid(format!("gradient mismatch in {}", failed.join(", "))))
    }
}

fn parse_shape(s: &str) -> Result<GridShape, CliError> {
    let bad = || CliError::invalid(format!("shape {s:?} is not WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    Ok(GridShape::new(w, h)?)
}

fn bench(occupancy: f64, shape: &str, seed: u64, skip_full: bool, out: Option<&Path>) -> Result<(), CliError> {
    let shape = parse_shape(shape)?;
    let r = bench_pgg(shape, occupancy, seed, skip_full)?;
    println!("grid {}x{}, {} masked pixels", r.width, r.height, r.masked_pixels);
    println!("affinity element ratio {:.6}", r.affinity_ratio);
    println!("masked peak bytes {}", r.masked_peak_bytes);
    if let (Some(f), Some(p)) = (r.full_peak_bytes, r.peak_ratio) {
        println!("full peak bytes {f}");
        println!("peak memory ratio {p:.6}");
    }
    if let Some(path) = out {
        write_json(path, &r)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Predictors<'a> {
    with_pgg: &'a ToyPredictor,
    without_pgg: &'a ToyPredictor,
}

/// First seed of the held-out frames, well clear of the training range.
fn held_out_seed(seed: u64) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(500)
}

fn train_toy(
    seed: u64,
    steps: usize,
    learning_rate: Option<f64>,
    scenes: Option<usize>,
    held_out: usize,
    out: &Path,
    plot: Option<&Path>,
) -> Result<(), CliError> {
    let base = TrainConfig::default();
    let cfg = TrainConfig {
        seed,
        steps,
        learning_rate: learning_rate.unwrap_or(base.learning_rate),
        scenes: scenes.unwrap_or(base.scenes),
        ..base
    };
    if held_out == 0 {
        return Err(CliError::invalid("--held-out must be at least 1"));
    }
    // the two runs are independent
    let (with, without) = rayon::join(
        || train(&TrainConfig { with_pgg: true, ..cfg.clone() }),
        || train(&TrainConfig { with_pgg: false, ..cfg.clone() }),
    );
    let (with, without) = (with?, without?);
    let held = toy_dataset(held_out_seed(seed), held_out)?;
    let skeleton = toy_skeleton(&held)?;
    let ablation = evaluate_ablation(&with, &without, &held, &toy_pipeline(), &skeleton)?;

    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut curve = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::invalid(format!("csv: {e}"));
    curve.write_record(["step", "loss_with_pgg", "loss_without_pgg"]).map_err(csv_err)?;
    for (i, (a, b)) in with.losses.iter().zip(&without.losses).enumerate() {
        curve
            .write_record([i.to_string(), format!("{a}"), format!("{b}")])
            .map_err(csv_err)?;
    }
    let curve = curve.into_inner().map_err(|e| CliError::invalid(format!("csv: {e}")))?;
    write_atomic(&out.join("loss_curve.csv"), &curve)?;
    let table = MetricsTable::from_ablation(&ablation);
    write_atomic(&out.join("ablation.csv"), table.to_csv()?.as_bytes())?;
    write_json(
        &out.join("predictors.json"),
        &Predictors {
            with_pgg: &with.predictor,
            without_pgg: &without.predictor,
        },
    )?;

    let (l0, ln) = (with.losses[0], with.losses[with.losses.len() - 1]);
    let (b0, bn) = (without.losses[0], without.losses[without.losses.len() - 1]);
    println!("with_pgg loss {l0:.6} -> {ln:.6}");
    println!("without_pgg loss {b0:.6} -> {bn:.6}");
    print!("{}", table.display());
    if let Some(dir) = plot {
        let pts = |l: &[f64]| l.iter().enumerate().map(|(i, v)| [i as f64, *v]).collect::<Vec<_>>();
        let svg = line_chart(
            "training loss",
            &[
                Series { label: "with_pgg", points: pts(&with.losses) },
                Series { label: "without_pgg", points: pts(&without.losses) },
            ],
        );
        write_plot(dir, "loss_curve.svg", &svg)?;
        let rows: Vec<(&str, Vec<Option<f64>>)> = table.rows.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        write_plot(dir, "ablation.svg", &bar_chart("held-out AP", &table.columns, &rows))?;
    }
    Ok(())
}

fn toy_skeleton(frames: &[FrameBundle]) -> Result<Skeleton, CliError> {
    let (scene, _) = pggtrack_core::train::toy_fixture(0);
    if frames.iter().any(|f| f.heatmaps.joint_count() != scene.skeleton.joint_count()) {
        return Err(CliError::invalid("held-out frames disagree with the fixture skeleton"));
    }
    Ok(scene.skeleton)
}
