use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pget_core::accelerator::{Model, Networks, WeightStore};
use pget_core::error::{Error, Result};
use pget_core::forward::{add_noise, Bounds, ImagePair, Projector};
use pget_core::geometry::{build_ray_tables, disk_mask, build_grid};
use pget_core::io::batch::{batch_dir, BatchConfig};
use pget_core::io::formats::{read_imgpair, read_sino, write_atomic, write_imgpair, write_sino};
use pget_core::io::{
    advance_dataset, compute_metrics, export_training_batch, render, ExportOptions, JobConfig, Method,
};
use pget_core::phantom::{build_dataset, read_manifest, write_dataset, DatasetConfig, Split, TierPlan};
use pget_core::safeguard::accelerated_solve;
use pget_core::solver::{initial_guess, lm_solve, standard_problem};

#[derive(Parser)]
#[command(name = "pget", version, about = "Passive gamma emission tomography reconstruction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Geometry {
    /// Pixels per side.
    #[arg(long)]
    n_px: Option<usize>,
    /// Pixel size in mm.
    #[arg(long)]
    pixel_size: Option<f64>,
    /// Number of projection angles over 360 degrees.
    #[arg(long)]
    angles: Option<usize>,
    /// Collimator width in mm.
    #[arg(long)]
    collimator: Option<f64>,
}

impl Geometry {
    fn apply(&self, job: &mut JobConfig) {
        if let Some(n) = self.n_px {
            job.grid.n_px = n;
        }
        if let Some(p) = self.pixel_size {
            job.grid.pixel_size = p;
        }
        if self.angles.is_some() {
            job.detector.n_angles = self.angles;
        }
        if self.collimator.is_some() {
            job.detector.collimator_width = self.collimator;
        }
    }
}

#[derive(Args, Clone)]
struct BoundArgs {
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    mu_max: Option<f64>,
}

impl BoundArgs {
    fn get(&self, mut b: Bounds) -> Bounds {
        b.lambda_max = self.lambda_max.unwrap_or(b.lambda_max);
        b.mu_max = self.mu_max.unwrap_or(b.mu_max);
        b
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a phantom dataset and write its manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        geom: Geometry,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standard-tier sample count (default: the full 1200-sample plan).
        #[arg(long)]
        n_standard: Option<usize>,
        #[arg(long, default_value_t = 200)]
        n_validation: usize,
        #[arg(long, default_value_t = 0)]
        medium: usize,
        #[arg(long, default_value_t = 0)]
        hard: usize,
        /// Add the hand-made extreme layouts to the test split.
        #[arg(long)]
        extreme: bool,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 2)]
        supersample: usize,
    },
    /// Compute the sinogram of an image pair, optionally with noise.
    Project {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        geom: Geometry,
        /// Relative Gaussian noise level.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Reconstruct from a sinogram with plain or accelerated LM.
    Reconstruct {
        /// Job file; flags override its values.
        #[arg(long)]
        job: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, num_args = 1..)]
        nets: Vec<PathBuf>,
        #[arg(long)]
        sino: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        sample: Option<usize>,
        /// Output stem: writes <out>.imgpair and <out>.log.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        geom: Geometry,
    },
    /// Write training batches (u, s, truth) for iteration k.
    ExportBatch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        k: u32,
        #[arg(long)]
        work: PathBuf,
        #[arg(long, default_value_t = 100)]
        shard_size: usize,
        /// Solver / constraint configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Apply the k-th network to the iteration-k batches, writing iterates for k+1.
    Advance {
        #[arg(long)]
        work: PathBuf,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Masked relative errors of a reconstruction.
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Write the two channels as 8-bit PGM images.
    Render {
        #[arg(long)]
        input: PathBuf,
        /// Output stem: writes <out>_lambda.pgm and <out>_mu.pgm.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        bounds: BoundArgs,
    },
    /// Print the tensor inventory and parameter count of a weight file.
    DescribeWeights { path: PathBuf },
}

fn setup_threads() -> Result<()> {
    let Ok(v) = std::env::var("PGET_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| Error::Invalid(format!("PGET_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn gen_data(
    out: &Path,
    geom: &Geometry,
    seed: u64,
    plan: TierPlan,
    noise: f64,
    supersample: usize,
) -> Result<()> {
    let mut job = JobConfig::default();
    geom.apply(&mut job);
    let grid = job.grid_spec()?;
    let det = job.detector_spec(&grid)?;
    let mut cfg = DatasetConfig::new(grid, det, plan, seed);
    cfg.noise_level = noise;
    cfg.supersample = supersample;
    let ds = build_dataset(&cfg)?;
    let path = write_dataset(&ds, out)?;
    let count = |s| ds.samples.iter().filter(|x| x.meta.split == s).count();
    println!(
        "{}: {} samples (train {}, validation {}, test {})",
        path.display(),
        ds.samples.len(),
        count(Split::Train),
        count(Split::Validation),
        count(Split::Test)
    );
    Ok(())
}

fn project(input: &Path, out: &Path, geom: &Geometry, noise: f64, seed: u64) -> Result<()> {
    let u = read_imgpair(input, Bounds::default())?;
    let mut job = JobConfig::default();
    job.grid.n_px = u.n();
    geom.apply(&mut job);
    if job.grid.n_px != u.n() {
        return Err(Error::Invalid(format!("image is {} px but --n-px is {}", u.n(), job.grid.n_px)));
    }
    let grid = job.grid_spec()?;
    let proj = Projector::new(build_ray_tables(&grid, &job.detector_spec(&grid)?)?);
    u.validate(proj.mask())?;
    let y = proj.project(&u)?;
    let y = if noise > 0.0 { add_noise(&y, noise, seed) } else { y };
    write_sino(out, &y)?;
    println!("{}: {} offsets x {} angles", out.display(), proj.n_offsets(), proj.n_angles());
    Ok(())
}

fn reconstruct(mut job: JobConfig) -> Result<bool> {
    job.validate()?;
    let (grid, det, y, truth) = if let (Some(m), Some(id)) = (&job.manifest, job.sample) {
        let man = read_manifest(m)?;
        let meta = man.samples.get(id).ok_or_else(|| Error::Invalid(format!("manifest has no sample {id}")))?;
        job.bounds = man.config.bounds;
        job.assembly = man.config.assembly.clone();
        let truth = man.load_truth(meta)?;
        (man.config.grid.clone(), man.config.detector.clone(), man.load_sino(meta)?, Some(truth))
    } else {
        let grid = job.grid_spec()?;
        let det = job.detector_spec(&grid)?;
        let y = read_sino(job.sino.as_ref().unwrap())?;
        let truth = job.truth.as_ref().map(|p| read_imgpair(p, job.bounds)).transpose()?;
        (grid, det, y, truth)
    };
    let proj = Projector::new(build_ray_tables(&grid, &det)?);
    let problem = standard_problem(&proj, &y, &job.assembly, job.bounds, &job.constraints)?;
    let u0 = initial_guess(proj.mask(), job.bounds);
    let mut log = String::new();
    for line in job.to_toml().lines() {
        log.push_str("# ");
        log.push_str(line);
        log.push('\n');
    }
    log.push_str(&format!(
        "# initial guess: lambda = {} mu = {} inside the disk\n",
        u0.lambda[[grid.n_px / 2, grid.n_px / 2]],
        u0.mu[[grid.n_px / 2, grid.n_px / 2]]
    ));
    let (last, recs, stalled) = match job.method {
        Method::Lm => {
            let t = lm_solve(&problem, &u0, job.iters, &job.solver.solver, truth.as_ref())?;
            log.push_str(&t.log_text());
            (t.last().clone(), t.records, t.stalled)
        }
        Method::Dgn => {
            let models = job.nets.iter().map(|p| Model::load(p)).collect::<Result<Vec<_>>>()?;
            for (i, m) in models.iter().enumerate() {
                if m.k as usize != i {
                    eprintln!("warning: network {i} was trained for iteration {}", m.k);
                }
                if m.bounds != job.bounds {
                    return Err(Error::Invalid(format!("network {i} normalization bounds differ from the job bounds")));
                }
            }
            let run = accelerated_solve(&problem, &u0, job.iters, &job.solver, &Networks(models), truth.as_ref())?;
            log.push_str(&run.log_text());
            println!("accelerated steps accepted: {}/{}", run.accepted(), run.decisions.iter().flatten().count());
            (run.traj.last().clone(), run.traj.records, run.traj.stalled)
        }
    };
    write_imgpair(&with_ext(&job.out, ".imgpair"), &last)?;
    write_atomic(&with_ext(&job.out, ".log"), log.as_bytes())?;
    let r = recs.last().unwrap();
    print!("iterations {} f {:.6e}", r.k, r.f);
    if let (Some(a), Some(b)) = (r.rel_err_lambda, r.rel_err_mu) {
        print!(" rel_err_lambda {a:.6} rel_err_mu {b:.6}");
    }
    println!();
    if let Some(msg) = &stalled {
        eprintln!("stalled: {msg}");
    }
    Ok(stalled.is_none())
}

fn shards(work: &Path, k: u32) -> Result<Vec<PathBuf>> {
    let dir = batch_dir(work, k);
    let mut v: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::Invalid(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgtb"))
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(Error::Invalid(format!("no batch shards in {}", dir.display())));
    }
    Ok(v)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::GenData { out, geom, seed, n_standard, n_validation, medium, hard, extreme, noise, supersample } => {
            let mut plan = match n_standard {
                Some(n) => TierPlan::small(n, n_validation),
                None => TierPlan { n_validation, ..TierPlan::standard() },
            };
            plan.medium = medium;
            plan.hard = hard;
            plan.extreme = extreme;
            gen_data(&out, &geom, seed, plan, noise, supersample)?;
        }
        Cmd::Project { input, out, geom, noise, seed } => project(&input, &out, &geom, noise, seed)?,
        Cmd::Reconstruct { job, method, iters, nets, sino, truth, manifest, sample, out, geom } => {
            let mut cfg = match &job {
                Some(p) => JobConfig::load(p)?,
                None => JobConfig::default(),
            };
            if let Some(m) = method {
                cfg.method = Method::parse(&m)?;
            }
            if let Some(i) = iters {
                cfg.iters = i;
            }
            if !nets.is_empty() {
                cfg.nets = nets;
            }
            if sino.is_some() {
                cfg.sino = sino;
                cfg.manifest = None;
            }
            cfg.truth = truth.or(cfg.truth);
            if manifest.is_some() {
                cfg.manifest = manifest;
                cfg.sino = None;
            }
            cfg.sample = sample.or(cfg.sample);
            if let Some(o) = out {
                cfg.out = o;
            }
            geom.apply(&mut cfg);
            return reconstruct(cfg);
        }
        Cmd::ExportBatch { manifest, k, work, shard_size, config } => {
            let man = read_manifest(&manifest)?;
            let config = match config {
                Some(p) => toml::from_str::<BatchConfig>(&std::fs::read_to_string(&p)?)
                    .map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?,
                None => BatchConfig::default(),
            };
            let paths = export_training_batch(&man, &ExportOptions { k, shard_size, config }, &work)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Cmd::Advance { work, k, weights } => {
            let model = Model::load(&weights)?;
            let n = advance_dataset(&shards(&work, k)?, &model, &work)?;
            println!("advanced {n} samples to k={}", k + 1);
        }
        Cmd::Eval { recon, truth } => {
            let t = read_imgpair(&truth, Bounds::default())?;
            let u = read_imgpair(&recon, Bounds::default())?;
            let m = compute_metrics(&u, &t, &disk_mask(&build_grid(t.n(), 1.0)?))?;
            println!("rel_err_lambda {:.9e}\nrel_err_mu {:.9e}", m.rel_err_lambda, m.rel_err_mu);
        }
        Cmd::Render { input, out, bounds } => {
            let u: ImagePair = read_imgpair(&input, bounds.get(Bounds::default()))?;
            let (a, b) = render(&u, &out)?;
            println!("{}\n{}", a.display(), b.display());
        }
        Cmd::DescribeWeights { path } => print!("{}", WeightStore::load(&path)?.describe()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match setup_threads().and_then(|_| run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
