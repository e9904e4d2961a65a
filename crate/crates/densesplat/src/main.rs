use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use densesplat::baseline::BaselineMode;
use densesplat::compare::{
    heldout_frames, run_comparison, scene_extent, train_arm, view_schedule, SharedInputs, Source, DENSE_LABEL,
    SPARSE_LABEL,
};
use densesplat::config::Config;
use densesplat::core::odometry::{run_odometry, PointStatus};
use densesplat::io::{load_dataset, ply, tum, write_dataset};
use densesplat::metrics::trajectory_error;
use densesplat::outputs::write_outputs;
use densesplat::reference::{desk_reference_gap, reference_gap, REFERENCE_RESULTS};
use densesplat::synth::generate_synthetic_scene;
use densesplat::{Error, Result};

#[derive(Parser)]
#[command(name = "densesplat", version, about = "Dense photometric odometry clouds for Gaussian splatting")]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic room sequence with ground truth.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        frames: Option<usize>,
        /// Resolution as WxH.
        #[arg(long, value_parser = parse_resolution)]
        res: Option<(usize, usize)>,
        /// Fraction of each wall painted flat.
        #[arg(long)]
        textureless: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a sequence and export its point cloud and trajectory.
    Odometry {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_cloud: PathBuf,
        #[arg(long)]
        out_traj: PathBuf,
        /// Keep extra and fill points (the default unless the config says otherwise).
        #[arg(long, conflicts_with = "tracking_only")]
        dense: bool,
        /// Keep pose-tracking points only.
        #[arg(long)]
        tracking_only: bool,
        /// Write every frame's pose instead of keyframes only.
        #[arg(long)]
        all_frames: bool,
    },
    /// Train a splat scene from a cloud and trajectory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        /// TUM trajectory; timestamps are frame indices.
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
        /// Seed for the view order.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dense versus sparse initialisation over several seeds.
    Compare {
        /// Dataset directory; without it every seed renders its own synthetic room.
        #[arg(long)]
        data: Option<PathBuf>,
        /// `a..b` (both ends included), `a..=b` or a comma list.
        #[arg(long, value_parser = parse_seeds, default_value = "0..4")]
        seeds: Seeds,
        /// Comma-separated checkpoint iterations.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        /// `tracking-only` or `ratio R`.
        #[arg(long)]
        baseline: Option<BaselineMode>,
        /// Parallel seed jobs (0: one per core).
        #[arg(long)]
        workers: Option<usize>,
        /// Record wall-clock milliseconds (outputs then differ between runs).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    Ok((w.trim().parse().map_err(|_| "bad width")?, h.trim().parse().map_err(|_| "bad height")?))
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("bad seed '{t}'"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=").or_else(|| s.split_once("..")) {
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(format!("empty seed range {s}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<std::result::Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("no seeds".into());
    }
    Ok(Seeds(seeds))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn synth(config: &Config, seed: u64, frames: Option<usize>, res: Option<(usize, usize)>, flat: Option<f64>, out: &Path) -> Result<()> {
    let mut sc = config.harness.synth.clone();
    if let Some(f) = frames {
        sc.frames = f;
    }
    if let Some((w, h)) = res {
        sc.width = w;
        sc.height = h;
    }
    if let Some(t) = flat {
        sc.textureless_fraction = t;
    }
    let scene = generate_synthetic_scene(seed, &sc)?;
    write_dataset(out, &scene.to_dataset())?;
    eprintln!("wrote {} frames ({}x{}) to {}", sc.frames, sc.width, sc.height, out.display());
    Ok(())
}

fn odometry(config: &Config, data: &Path, cloud: &Path, traj: &Path, dense: bool, all_frames: bool) -> Result<()> {
    let ds = load_dataset(data)?;
    let odo_config = densesplat::core::odometry::OdometryConfig { dense, ..config.odometry.clone() };
    let result = run_odometry(&ds.frames, &ds.camera, &odo_config, &config.selection)?;
    let points = result.cloud(&ds.camera)?;
    ply::write_cloud(cloud, &points)?;
    let ids: Vec<usize> = if all_frames { (0..result.poses.len()).collect() } else { result.keyframe_ids.clone() };
    tum::write(traj, &tum::indexed(ids.iter().map(|&i| (i, result.poses[i]))))?;
    let count = |s| points.iter().filter(|p| p.status == s).count();
    eprintln!(
        "{} points ({} tracking, {} position-only, {} fill), {} keyframes",
        points.len(),
        count(PointStatus::PoseTracking),
        count(PointStatus::PositionOnly),
        count(PointStatus::GradientFill),
        result.keyframe_ids.len()
    );
    if let Some(truth) = &ds.trajectory {
        let e = trajectory_error(&result.poses, truth)?;
        eprintln!("ATE {:.5} over path {:.4} ({:.3}% after similarity alignment)", e.ate_rmse, e.path_length, 100.0 * e.relative());
    }
    Ok(())
}

fn train(config: &Config, data: &Path, cloud_path: &Path, traj_path: &Path, iters: Option<usize>, seed: u64, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let cloud = ply::read_cloud(cloud_path)?;
    let stamped = tum::read(traj_path)?;
    let mut frames = Vec::with_capacity(stamped.len());
    for s in &stamped {
        let i = s.timestamp.round();
        if (s.timestamp - i).abs() > 1e-6 || i < 0.0 || i as usize >= ds.frames.len() {
            return Err(Error::format(traj_path, format!("timestamp {} is not a frame index below {}", s.timestamp, ds.frames.len())));
        }
        frames.push(i as usize);
    }
    let mut splat = config.splat.clone();
    if let Some(n) = iters {
        splat.iterations = n;
    }
    splat.validate()?;
    let heldout = heldout_frames(frames.len(), config.harness.holdout_every);
    let training: Vec<usize> = (0..frames.len()).filter(|i| !heldout.contains(i)).collect();
    if training.is_empty() || heldout.is_empty() {
        return Err(Error::Config(format!("{} posed frames are too few to hold out every {}", frames.len(), config.harness.holdout_every)));
    }
    let poses: Vec<_> = stamped.iter().map(|s| s.pose).collect();
    let training_poses: Vec<_> = training.iter().map(|&i| poses[i]).collect();
    let mut checkpoints: Vec<usize> = config.harness.checkpoints.iter().copied().filter(|&c| c < splat.iterations).collect();
    checkpoints.push(splat.iterations);
    let inputs = SharedInputs {
        camera: ds.camera,
        images: frames.iter().map(|&f| ds.color(f).clone()).collect(),
        extent: scene_extent(&training_poses, &cloud),
        schedule: view_schedule(&training, splat.iterations, seed),
        poses,
        config: splat,
        heldout,
        checkpoints,
        record_timing: config.harness.record_timing,
    };
    let run = train_arm("train", seed, &cloud, &inputs)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    ply::write_scene(&out.join("scene.ply"), &run.scene)?;
    write_outputs(std::slice::from_ref(&run.trace), None, out)?;
    if let Some(last) = run.trace.rows.last() {
        eprintln!("iteration {}: held-out PSNR {:.2} dB, {} gaussians", last.iteration, last.psnr, last.count);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn compare(
    mut config: Config,
    data: Option<&Path>,
    seeds: &[u64],
    checkpoints: Option<Vec<usize>>,
    baseline: Option<BaselineMode>,
    workers: Option<usize>,
    timing: bool,
    out: &Path,
) -> Result<()> {
    if let Some(c) = checkpoints {
        config.harness.checkpoints = c;
    }
    if let Some(b) = baseline {
        config.harness.baseline = b;
    }
    if let Some(w) = workers {
        config.harness.workers = w;
    }
    config.harness.record_timing |= timing;
    config.validate()?;
    let dataset = data.map(load_dataset).transpose()?;
    let synth = config.harness.synth.clone();
    let source = match &dataset {
        Some(d) => Source::Dataset(d),
        None => Source::Synthetic(&synth),
    };
    let result = run_comparison(source, seeds, &config)?;
    let paths = write_outputs(&result.traces(), Some(&result.summary), out)?;

    println!("{:>9} {:>10} {:>10} {:>8} {:>8}", "iteration", DENSE_LABEL, SPARSE_LABEL, "gap", "desk ref");
    for &it in &config.harness.checkpoints {
        let d = result.summary.psnr_mean(DENSE_LABEL, it).unwrap_or(f64::NAN);
        let s = result.summary.psnr_mean(SPARSE_LABEL, it).unwrap_or(f64::NAN);
        let reference = reference_gap(it).map(|g| format!("  (published full-scale gap {g:+.2})")).unwrap_or_default();
        let desk = desk_reference_gap(it).map(|g| format!("{g:+8.2}")).unwrap_or_else(|| format!("{:>8}", "-"));
        println!("{it:>9} {d:>10.2} {s:>10.2} {:>+8.2} {desk}{reference}", d - s);
    }
    println!("published full-scale averages, for context only:");
    for r in REFERENCE_RESULTS {
        println!("  {:<13} @{:<4} {:.2} dB", r.method, r.iteration, r.average);
    }
    println!("wrote {}, {}, {}", paths.traces.display(), paths.summary.display(), paths.chart.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth { seed, frames, res, textureless, out } => synth(&config, seed, frames, res, textureless, &out),
        Command::Odometry { data, out_cloud, out_traj, dense, tracking_only, all_frames } => {
            let dense = !tracking_only && (dense || config.odometry.dense);
            odometry(&config, &data, &out_cloud, &out_traj, dense, all_frames)
        }
        Command::Train { data, cloud, traj, iters, seed, out } => train(&config, &data, &cloud, &traj, iters, seed, &out),
        Command::Compare { data, seeds, checkpoints, baseline, workers, timing, out } => {
            compare(config, data.as_deref(), &seeds.0, checkpoints, baseline, workers, timing, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
