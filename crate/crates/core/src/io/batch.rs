//! Training batches (`.pgtb`): per training sample the iterate u, the LM
//! step s computed at u, and the ground truth u†, for one outer iteration k.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accelerator::Model;
use crate::error::{format_err, invalid, Error, Result};
use crate::forward::{Bounds, ImagePair, Projector};
use crate::geometry::{build_grid, build_ray_tables, disk_mask, geometry_hash};
use crate::io::formats::{put_f64s, read_imgpair, write_atomic, write_imgpair, Reader};
use crate::phantom::{Manifest, Split};
use crate::solver::{initial_guess, lm_step, standard_problem, ConstraintConfig, Constraints, SolverConfig, TrustRegionState};

pub const PGTB_MAGIC: &[u8; 4] = b"PGTB";

/// Configuration recorded in every batch header (TOML text).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    pub solver: SolverConfig,
    pub constraints: ConstraintConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchSample {
    pub id: u64,
    pub u: ImagePair,
    pub s: ImagePair,
    pub truth: ImagePair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingBatch {
    pub k: u32,
    pub n_px: usize,
    pub manifest_hash: u64,
    /// Rotation augmentation; always off for engine-written batches.
    pub augmentation: bool,
    pub bounds: Bounds,
    pub config: BatchConfig,
    pub samples: Vec<BatchSample>,
}

impl TrainingBatch {
    pub fn encode(&self) -> Vec<u8> {
        let cfg = toml::to_string(&self.config).expect("batch config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(PGTB_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_px as u32).to_le_bytes());
        out.extend_from_slice(&self.manifest_hash.to_le_bytes());
        out.push(self.augmentation as u8);
        put_f64s(&mut out, [self.bounds.lambda_max, self.bounds.mu_max]);
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.id.to_le_bytes());
            for p in [&s.u, &s.s, &s.truth] {
                put_f64s(&mut out, p.lambda.iter().copied());
                put_f64s(&mut out, p.mu.iter().copied());
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<TrainingBatch> {
        let mut r = Reader::new(buf, "pgtb");
        r.magic(PGTB_MAGIC)?;
        r.version()?;
        let k = r.u32()?;
        let count = r.u32()? as usize;
        let n_px = r.u32()? as usize;
        let manifest_hash = r.u64()?;
        let augmentation = match r.u8()? {
            0 => false,
            1 => true,
            v => return format_err(format!("pgtb: bad augmentation flag {v}")),
        };
        let bounds = Bounds { lambda_max: r.f64()?, mu_max: r.f64()? };
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("pgtb: config is not UTF-8".into()))?;
        let config: BatchConfig = toml::from_str(text).map_err(|e| Error::Format(format!("pgtb: bad config: {e}")))?;
        let nn = n_px * n_px;
        let mut samples = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let id = r.u64()?;
            let mut planes = (0..3).map(|_| r.f64s(2 * nn).map(|v| ImagePair::from_vec(n_px, &v, bounds)));
            let u = planes.next().unwrap()?;
            let s = planes.next().unwrap()?;
            let truth = planes.next().unwrap()?;
            samples.push(BatchSample { id, u, s, truth });
        }
        r.finish()?;
        Ok(TrainingBatch { k, n_px, manifest_hash, augmentation, bounds, config, samples })
    }

    pub fn read(path: &Path) -> Result<TrainingBatch> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportOptions {
    pub k: u32,
    /// Samples per shard; 0 puts everything in one file.
    pub shard_size: usize,
    pub config: BatchConfig,
}

/// Location of the iterate of sample `id` at iteration k under `work`.
pub fn iterate_path(work: &Path, k: u32, id: usize) -> PathBuf {
    work.join("iterates").join(format!("k{k}")).join(format!("sample_{id:05}.imgpair"))
}

pub fn batch_dir(work: &Path, k: u32) -> PathBuf {
    work.join("batches").join(format!("k{k}"))
}

/// Computes s = LM step at the current iterate of every training sample
/// and writes the shards. Returns the shard paths.
pub fn export_training_batch(manifest: &Manifest, opts: &ExportOptions, work: &Path) -> Result<Vec<PathBuf>> {
    let cfg = &manifest.config;
    let bounds = cfg.bounds;
    opts.config.solver.validate()?;
    let grid = build_grid(cfg.grid.n_px, cfg.grid.pixel_size)?;
    if geometry_hash(&grid, &cfg.detector) != manifest.geometry_hash {
        return format_err("manifest geometry hash does not match its grid / detector");
    }
    let projector = Projector::new(build_ray_tables(&grid, &cfg.detector)?);
    let mask = projector.mask().clone();
    let k = opts.k;
    let train: Vec<_> = manifest.split(Split::Train).collect();
    if train.is_empty() {
        return invalid("dataset has no training samples");
    }
    let samples = train
        .par_iter()
        .map(|m| -> Result<BatchSample> {
            let truth = manifest.load_truth(m)?;
            let y = manifest.load_sino(m)?;
            let u = if k == 0 {
                initial_guess(&mask, bounds)
            } else {
                let p = iterate_path(work, k, m.id);
                if !p.exists() {
                    return invalid(format!("missing prior iterate {} (run advance for k={})", p.display(), k - 1));
                }
                read_imgpair(&p, bounds)?
            };
            let problem = standard_problem(&projector, &y, &cfg.assembly, bounds, &opts.config.constraints)?;
            let mut state = TrustRegionState::at(&problem, &u, k as usize, &opts.config.solver)?;
            let model = problem.linearize(&state.x, state.alphas)?;
            let s = match lm_step(&mut state, &model, &opts.config.solver) {
                Ok(p) => problem.to_physical(&p.s),
                Err(Error::Stall(_)) => ImagePair::zeros(grid.n_px, bounds),
                Err(e) => return Err(e),
            };
            Ok(BatchSample { id: m.id as u64, u, s, truth })
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = batch_dir(work, k);
    std::fs::create_dir_all(&dir)?;
    let shard = if opts.shard_size == 0 { samples.len() } else { opts.shard_size };
    let mut paths = Vec::new();
    for (j, chunk) in samples.chunks(shard).enumerate() {
        let batch = TrainingBatch {
            k,
            n_px: grid.n_px,
            manifest_hash: manifest.hash,
            augmentation: false,
            bounds,
            config: opts.config.clone(),
            samples: chunk.to_vec(),
        };
        let p = dir.join(format!("shard_{j:03}.pgtb"));
        batch.write(&p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Projects a physical pair onto the feasible set.
pub fn project_pair(u: &ImagePair, c: &Constraints, bounds: Bounds) -> ImagePair {
    let nn = c.n_pixels();
    let mut x: Vec<f64> = u.lambda.iter().map(|v| v / bounds.lambda_max).chain(u.mu.iter().map(|v| v / bounds.mu_max)).collect();
    c.project(&mut x);
    for (k, v) in x.iter_mut().enumerate() {
        *v *= if k < nn { bounds.lambda_max } else { bounds.mu_max };
    }
    ImagePair::from_vec(u.n(), &x, u.bounds)
}

/// Applies the k-th network to every sample of the batch shards and writes
/// the (projected) iterates for k+1. Returns the number of samples advanced.
pub fn advance_dataset(shards: &[PathBuf], model: &Model, work: &Path) -> Result<usize> {
    let mut total = 0;
    for path in shards {
        let b = TrainingBatch::read(path)?;
        if b.augmentation {
            return invalid(format!("{}: batch has rotation augmentation enabled", path.display()));
        }
        if model.k != b.k {
            return invalid(format!("network is for iteration {} but batch {} is for k={}", model.k, path.display(), b.k));
        }
        if model.bounds != b.bounds {
            return invalid("network normalization bounds differ from the batch bounds");
        }
        let mask = disk_mask(&build_grid(b.n_px, 1.0)?);
        let constraints = Constraints::new(&mask, b.bounds.mu_max, &b.config.constraints);
        b.samples.par_iter().try_for_each(|s| -> Result<()> {
            let ut = model.apply(&s.u, &s.s, &mask)?.u_tilde;
            let next = project_pair(&ut, &constraints, b.bounds);
            write_imgpair(&iterate_path(work, b.k + 1, s.id as usize), &next)
        })?;
        total += b.samples.len();
    }
    Ok(total)
}
