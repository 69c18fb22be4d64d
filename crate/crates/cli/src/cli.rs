//! Command-line interface: `group`, `sample`, `pool`, `bench` and
//! `gradcheck` subcommands over KITTI-format or synthetic scenes.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use roigraph_core::config::PipelineConfig;
use roigraph_core::gradcheck;
use roigraph_core::grouping::{exhaustive_group, patch_search, PatchIndex};
use roigraph_core::pipeline::{box_seed, refine_group, RefineParams};
use roigraph_core::sampling::sample_with_strategy;

use crate::bench::{bench_grouping, bench_sampling, write_csv};
use crate::config_file::{apply_overrides, load_config};
use crate::formats::{load_bundle, load_feature_map, save_bundle};
use crate::kitti;
use crate::records::{to_json_lines, GroupRecord, PoolRecord, SampleRecord};
use crate::scene::Scene;
use crate::synth::{synth_scene, SynthSpec};

#[derive(Parser)]
#[command(name = "roigraph", version, about = "Second-stage RoI refinement pipeline for 3D detection proposals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config overrides, e.g. `--set sigma=0.6` (flags win over the file).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => PipelineConfig::default(),
        };
        apply_overrides(&mut cfg, &self.overrides)?;
        cfg.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SceneArgs {
    /// KITTI velodyne point cloud (.bin).
    #[arg(long, requires = "labels")]
    cloud: Option<PathBuf>,
    /// KITTI label file; its boxes become the proposals.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// KITTI calibration file.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Channel-reduced feature map (.rgf) for fusion.
    #[arg(long)]
    feature_map: Option<PathBuf>,
    /// Image extent used for projection validity, as WIDTHxHEIGHT.
    #[arg(long, default_value = "1280x384")]
    image_size: String,
    /// Synthetic scene preset: tiny | desk | paper-scale.
    #[arg(long, conflicts_with = "cloud")]
    synth: Option<String>,
    /// Seed of the synthetic scene.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SceneArgs {
    fn load(&self, cfg: &PipelineConfig) -> Result<Scene> {
        if let Some(preset) = &self.synth {
            let mut spec = SynthSpec::preset(preset)
                .with_context(|| format!("unknown synth preset `{preset}`"))?;
            spec.fusion = cfg.fusion;
            return Ok(synth_scene(&spec, self.seed)?);
        }
        let Some(cloud_path) = &self.cloud else {
            bail!("either --cloud/--labels or --synth must be given");
        };
        let labels_path = self.labels.as_ref().expect("clap enforces --labels");
        let cloud = kitti::load_cloud(cloud_path)?;
        let calib = match &self.calib {
            Some(p) => kitti::load_calib(p)?,
            None => kitti::KittiCalib::default(),
        };
        let labels = kitti::load_labels(labels_path, &calib)?;
        let (w, h) = self
            .image_size
            .split_once('x')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .with_context(|| format!("bad --image-size `{}`", self.image_size))?;
        let feature_map = match &self.feature_map {
            Some(p) => Some(load_feature_map(p)?),
            None => None,
        };
        Ok(Scene {
            cloud,
            proposals: labels.iter().map(|l| l.box3d).collect(),
            ground_truths: Vec::new(),
            feature_map,
            calibration: Some(calib.to_calibration(w, h)),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Group scene points into enlarged proposals (patch search).
    Group {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Use the exhaustive scan instead of the patch index.
        #[arg(long)]
        oracle: bool,
        /// Output file (JSON lines); stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample each proposal's group with a named strategy.
    Sample {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Sampling strategy: rps | fps | vs | dvs | dfvs.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full refinement pipeline and emit refined boxes and scores.
    Pool {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Parameter bundle to load; fresh seeded parameters when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write the parameter bundle that was used.
        #[arg(long)]
        save_weights: Option<PathBuf>,
        /// Worker threads (default 1; RG_THREADS overrides the default).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark grouping and sampling methods on a synthetic preset.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Synthetic preset: tiny | desk | paper-scale.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Timed runs per method; the median is reported.
        #[arg(long, default_value_t = 20)]
        runs: usize,
        /// Extra multi-threaded grouping rows with this many workers.
        #[arg(long)]
        threads: Option<usize>,
        /// CSV output file; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run every finite-difference gradient suite; nonzero exit on failure.
    Gradcheck {
        /// Seeds per suite (1..=n).
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_EPS)]
        eps: f64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOL)]
        tol: f64,
    },
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("RG_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(1)
    .max(1)
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_group(scene: &SceneArgs, config: &ConfigArgs, oracle: bool, out: &Option<PathBuf>) -> Result<()> {
    let cfg = config.build()?;
    let scene = scene.load(&cfg)?;
    let groups = if oracle {
        exhaustive_group(&scene.cloud, &scene.proposals, cfg.sigma)
    } else {
        let (groups, warnings) = patch_search(
            &scene.cloud,
            &scene.proposals,
            cfg.sigma,
            cfg.patch_size,
            cfg.k_max,
            cfg.grouping_mode,
        )?;
        if warnings > 0 {
            eprintln!("warning: {warnings} box claims exceeded the per-patch cap");
        }
        groups
    };
    let records: Vec<GroupRecord> = groups.iter().map(GroupRecord::from).collect();
    write_output(out, &to_json_lines(&records))
}

fn cmd_sample(
    scene: &SceneArgs,
    config: &ConfigArgs,
    strategy: &Option<String>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let mut cfg = config.build()?;
    if let Some(name) = strategy {
        cfg.set("strategy", name)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    let scene = scene.load(&cfg)?;
    let (groups, _) = patch_search(
        &scene.cloud,
        &scene.proposals,
        cfg.sigma,
        cfg.patch_size,
        cfg.k_max,
        cfg.grouping_mode,
    )?;
    let mut records = Vec::with_capacity(groups.len());
    for (group, b) in groups.iter().zip(&scene.proposals) {
        if group.is_empty() {
            records.push(SampleRecord::empty(group.box_index));
            continue;
        }
        let result = sample_with_strategy(
            cfg.strategy,
            group,
            b,
            cfg.t_s,
            cfg.lambda,
            cfg.delta,
            cfg.fixed_voxel_size,
            cfg.hash_capacity,
            box_seed(cfg.seed, group.box_index),
        )?;
        records.push(SampleRecord::from_result(group, &result));
    }
    write_output(out, &to_json_lines(&records))
}

fn cmd_pool(
    scene_args: &SceneArgs,
    config: &ConfigArgs,
    weights: &Option<PathBuf>,
    save_weights: &Option<PathBuf>,
    threads: Option<usize>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let cfg = config.build()?;
    let scene = scene_args.load(&cfg)?;
    let params = match weights {
        Some(path) => load_bundle(path, &cfg)?,
        None => RefineParams::seeded(&cfg, cfg.seed),
    };
    if let Some(path) = save_weights {
        save_bundle(path, &params)?;
    }
    let image = if cfg.fusion {
        match scene.image() {
            Some(pair) => Some(pair),
            None => bail!("fusion is enabled but the scene has no feature map and calibration"),
        }
    } else {
        None
    };
    let index = PatchIndex::build(
        &scene.cloud,
        &scene.proposals,
        cfg.sigma,
        cfg.patch_size,
        cfg.k_max,
        cfg.grouping_mode,
    )?;
    let workers = thread_count(threads);
    let refined = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("building worker pool")?;
        pool.install(|| {
            scene
                .proposals
                .par_iter()
                .enumerate()
                .map(|(i, b)| {
                    let group = index.group_box(&scene.cloud, b, i);
                    refine_group(&group, b, &cfg, &params, image)
                })
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        scene
            .proposals
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let group = index.group_box(&scene.cloud, b, i);
                refine_group(&group, b, &cfg, &params, image)
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let records: Vec<PoolRecord> = refined.iter().map(PoolRecord::from).collect();
    write_output(out, &to_json_lines(&records))
}

fn cmd_bench(
    config: &ConfigArgs,
    preset: &str,
    seed: u64,
    runs: usize,
    threads: Option<usize>,
    csv: &Option<PathBuf>,
) -> Result<()> {
    let cfg = config.build()?;
    let spec = SynthSpec::preset(preset)
        .with_context(|| format!("unknown synth preset `{preset}`"))?;
    let scene = synth_scene(&spec, seed)?;
    eprintln!(
        "bench preset `{preset}`: {} points, {} proposals, {} runs",
        scene.cloud.len(),
        scene.proposals.len(),
        runs
    );
    let mut rows = bench_grouping(&scene, &cfg, runs, thread_count(threads));
    rows.extend(bench_sampling(&scene, &cfg, runs));
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    match csv {
        Some(path) => {
            std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_gradcheck(seeds: u64, eps: f64, tol: f64) -> Result<()> {
    let seed_list: Vec<u64> = (1..=seeds.max(1)).collect();
    let reports = gradcheck::run_all(&seed_list, eps, tol);
    let mut failures = 0usize;
    for r in &reports {
        println!("{r}");
        if !r.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        bail!("{failures} gradient suite(s) failed");
    }
    println!("all {} gradient suites passed", reports.len());
    Ok(())
}

/// Parses `argv` and runs the selected subcommand, returning the process
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports --help/--version through Err as well; those are
            // successes with exit code 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Group { scene, config, oracle, out } => cmd_group(scene, config, *oracle, out),
        Command::Sample { scene, config, strategy, out } => cmd_sample(scene, config, strategy, out),
        Command::Pool { scene, config, weights, save_weights, threads, out } => {
            cmd_pool(scene, config, weights, save_weights, *threads, out)
        }
        Command::Bench { config, preset, seed, runs, threads, csv } => {
            cmd_bench(config, preset, *seed, *runs, *threads, csv)
        }
        Command::Gradcheck { seeds, eps, tol } => cmd_gradcheck(*seeds, *eps, *tol),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
