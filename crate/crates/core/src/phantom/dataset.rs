use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{dataset_tier, rasterize_fine, sample_assembly, Assembly, AssemblySpec, Branch, RodState, Tier};
use crate::error::{format_err, invalid, Error, Result};
use crate::forward::{add_noise, Bounds, ImagePair, Projector, Sinogram};
use crate::geometry::{build_ray_tables, disk_mask, geometry_hash, DetectorSpec, GridSpec, VerticalModel};
use crate::io::formats::{read_imgpair, read_sino, write_atomic, write_imgpair, write_sino};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierPlan {
    pub all_present: usize,
    pub missing: usize,
    pub replaced: usize,
    pub n_validation: usize,
    /// Added to the training split.
    pub medium: usize,
    /// Test split.
    pub hard: usize,
    /// Include the four hand-made layouts in the test split.
    pub extreme: bool,
}

impl TierPlan {
    pub fn standard() -> TierPlan {
        TierPlan { all_present: 200, missing: 500, replaced: 500, n_validation: 200, medium: 0, hard: 0, extreme: false }
    }

    /// Scaled-down plan keeping the standard proportions.
    pub fn small(n_standard: usize, n_validation: usize) -> TierPlan {
        let all = n_standard / 6;
        let missing = (n_standard - all) / 2;
        TierPlan { all_present: all, missing, replaced: n_standard - all - missing, n_validation, medium: 0, hard: 0, extreme: false }
    }

    pub fn n_standard(&self) -> usize {
        self.all_present + self.missing + self.replaced
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_validation > self.n_standard() {
            return invalid("validation split larger than the standard tier");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => format_err(format!("manifest: unknown split '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub grid: GridSpec,
    pub detector: DetectorSpec,
    pub assembly: AssemblySpec,
    pub plan: TierPlan,
    pub noise_level: f64,
    pub supersample: usize,
    pub master_seed: u64,
    pub bounds: Bounds,
}

impl DatasetConfig {
    pub fn new(grid: GridSpec, detector: DetectorSpec, plan: TierPlan, master_seed: u64) -> DatasetConfig {
        DatasetConfig {
            grid,
            detector,
            assembly: AssemblySpec::default(),
            plan,
            noise_level: 0.02,
            supersample: 2,
            master_seed,
            bounds: Bounds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub id: usize,
    pub tier: String,
    pub branch: String,
    pub split: Split,
    pub seed: u64,
    pub n_missing: usize,
    pub n_replaced: usize,
    /// Present-rod emission span; zeros when no rod is present.
    pub emission_min: f64,
    pub emission_max: f64,
    pub truth: PathBuf,
    pub sino: PathBuf,
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub meta: SampleMeta,
    pub assembly: Assembly,
    pub truth: ImagePair,
    pub sino: Sinogram,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<Sample>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample seed derived from the master seed.
pub fn derive_seed(master: u64, id: u64) -> u64 {
    splitmix64(master ^ splitmix64(id.wrapping_add(1)))
}

fn noise_seed(sample_seed: u64) -> u64 {
    splitmix64(sample_seed ^ 0x6e6f_6973_65)
}

/// Simulator for one geometry: projects at the supersampled resolution
/// with the coarse detector, so the reconstruction model is never used to
/// generate its own data.
pub struct Simulator {
    pub grid: GridSpec,
    pub detector: DetectorSpec,
    pub supersample: usize,
    fine: Projector,
    coarse_hash: u64,
}

impl Simulator {
    pub fn new(grid: &GridSpec, det: &DetectorSpec, supersample: usize) -> Result<Simulator> {
        if supersample == 0 {
            return invalid("supersample factor must be ≥ 1");
        }
        let fine_grid = grid.supersampled(supersample);
        let fine = Projector::new(build_ray_tables(&fine_grid, det)?);
        Ok(Simulator { grid: *grid, detector: det.clone(), supersample, fine, coarse_hash: geometry_hash(grid, det) })
    }

    /// Returns (coarse ground truth, noiseless sinogram).
    pub fn simulate(&self, a: &Assembly, spec: &AssemblySpec, bounds: Bounds) -> Result<(ImagePair, Sinogram)> {
        let f = self.supersample;
        let fine = rasterize_fine(a, spec, &self.grid, f, bounds)?;
        let mut y = self.fine.project(&fine)?;
        // emission values are per coarse pixel: each fine pixel carries 1/f² of it
        let w = 1.0 / (f * f) as f64;
        y.y.mapv_inplace(|v| v * w);
        y.grid_hash = self.coarse_hash;
        let mut truth = ImagePair {
            lambda: super::downsample(&fine.lambda, f),
            mu: super::downsample(&fine.mu, f),
            bounds,
        };
        truth.apply_mask(&disk_mask(&self.grid));
        Ok((truth, y))
    }
}

fn branch_name(t: &Tier) -> &'static str {
    match t {
        Tier::Standard(Branch::AllPresent) => "all_present",
        Tier::Standard(Branch::Missing) => "missing",
        Tier::Standard(Branch::Replaced) => "replaced",
        Tier::Medium | Tier::Hard => "mixed",
        Tier::Extreme(_) => "layout",
    }
}

pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.plan.validate()?;
    cfg.assembly.validate(&cfg.grid)?;
    if !(cfg.noise_level >= 0.0) {
        return invalid("noise level must be ≥ 0");
    }
    let sim = Simulator::new(&cfg.grid, &cfg.detector, cfg.supersample)?;
    let plan = &cfg.plan;
    let n_std = plan.n_standard();
    let n_extreme = if plan.extreme { 4 } else { 0 };
    let total = n_std + plan.medium + plan.hard + n_extreme;

    let mut validation = vec![false; n_std];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, u64::MAX));
    for i in rand::seq::index::sample(&mut rng, n_std, plan.n_validation) {
        validation[i] = true;
    }

    let samples: Vec<Result<Sample>> = (0..total)
        .into_par_iter()
        .map(|id| {
            let tier = dataset_tier(plan, id);
            let split = match tier {
                Tier::Standard(_) if validation[id] => Split::Validation,
                Tier::Standard(_) | Tier::Medium => Split::Train,
                _ => Split::Test,
            };
            let seed = derive_seed(cfg.master_seed, id as u64);
            let assembly = sample_assembly(&cfg.assembly, &tier, seed);
            let (truth, clean) = sim.simulate(&assembly, &cfg.assembly, cfg.bounds)?;
            let sino = add_noise(&clean, cfg.noise_level, noise_seed(seed));
            let (emission_min, emission_max) = assembly.emission_span().unwrap_or((0.0, 0.0));
            let meta = SampleMeta {
                id,
                tier: tier.tag().to_string(),
                branch: branch_name(&tier).to_string(),
                split,
                seed,
                n_missing: assembly.count(RodState::Missing),
                n_replaced: assembly.count(RodState::Replaced),
                emission_min,
                emission_max,
                truth: PathBuf::from(format!("truth/sample_{id:05}.imgpair")),
                sino: PathBuf::from(format!("sino/sample_{id:05}.sino")),
            };
            Ok(Sample { meta, assembly, truth, sino })
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset { config: cfg.clone(), samples })
}

pub const MANIFEST_NAME: &str = "manifest.txt";
const MANIFEST_COLUMNS: &str = "id tier branch split seed n_missing n_replaced emission_min emission_max truth sino";

pub fn manifest_text(cfg: &DatasetConfig, samples: &[SampleMeta]) -> String {
    let mut s = String::new();
    let g = &cfg.grid;
    let d = &cfg.detector;
    let a = &cfg.assembly;
    writeln!(s, "# pget dataset manifest").unwrap();
    writeln!(s, "version 1").unwrap();
    writeln!(s, "noise_level {}", cfg.noise_level).unwrap();
    writeln!(s, "master_seed {}", cfg.master_seed).unwrap();
    writeln!(s, "supersample {}", cfg.supersample).unwrap();
    writeln!(s, "grid {} {}", g.n_px, g.pixel_size).unwrap();
    let vertical = match d.vertical {
        VerticalModel::Planar => "planar".to_string(),
        VerticalModel::Geometric { half_height, detector_distance } => format!("geometric {half_height} {detector_distance}"),
    };
    writeln!(s, "detector {} {} {} {} {}", d.n_offsets, d.offset_pitch, d.n_angles, d.collimator_width, vertical).unwrap();
    writeln!(s, "geometry_hash {:016x}", geometry_hash(g, d)).unwrap();
    writeln!(s, "bounds {} {}", cfg.bounds.lambda_max, cfg.bounds.mu_max).unwrap();
    writeln!(s, "rods {} {} {}", a.rod_pitch, a.rod_radius, a.position_jitter_sigma).unwrap();
    writeln!(s, "emission_range {} {}", a.emission_range.0, a.emission_range.1).unwrap();
    writeln!(s, "attenuation_range {} {}", a.attenuation_range.0, a.attenuation_range.1).unwrap();
    writeln!(s, "water_attenuation {}", a.water_attenuation).unwrap();
    let p = &cfg.plan;
    writeln!(
        s,
        "plan {} {} {} {} {} {} {}",
        p.all_present, p.missing, p.replaced, p.n_validation, p.medium, p.hard, p.extreme as u8
    )
    .unwrap();
    writeln!(s, "columns {MANIFEST_COLUMNS}").unwrap();
    for m in samples {
        writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {}",
            m.id,
            m.tier,
            m.branch,
            m.split.as_str(),
            m.seed,
            m.n_missing,
            m.n_replaced,
            m.emission_min,
            m.emission_max,
            m.truth.display(),
            m.sino.display()
        )
        .unwrap();
    }
    s
}

/// Writes sample files and the manifest under `dir`; returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("truth"))?;
    fs::create_dir_all(dir.join("sino"))?;
    ds.samples.par_iter().try_for_each(|s| -> Result<()> {
        write_imgpair(&dir.join(&s.meta.truth), &s.truth)?;
        write_sino(&dir.join(&s.meta.sino), &s.sino)
    })?;
    let metas: Vec<SampleMeta> = ds.samples.iter().map(|s| s.meta.clone()).collect();
    let path = dir.join(MANIFEST_NAME);
    write_atomic(&path, manifest_text(&ds.config, &metas).as_bytes())?;
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub geometry_hash: u64,
    pub samples: Vec<SampleMeta>,
    /// Directory the sample paths are relative to.
    pub root: PathBuf,
    /// SHA-256 prefix of the manifest bytes.
    pub hash: u64,
}

fn bad(line: &str) -> Error {
    Error::Format(format!("manifest: cannot parse line '{line}'"))
}

fn num<T: std::str::FromStr>(tok: Option<&&str>, line: &str) -> Result<T> {
    tok.ok_or_else(|| bad(line))?.parse().map_err(|_| bad(line))
}

pub fn bytes_hash(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn parse_manifest(text: &str, root: &Path) -> Result<Manifest> {
    let mut cfg = DatasetConfig::new(
        GridSpec { n_px: 0, pixel_size: 0.0, r_domain: 0.0 },
        DetectorSpec { n_offsets: 0, offset_pitch: 0.0, n_angles: 0, collimator_width: 0.0, vertical: VerticalModel::Planar },
        TierPlan::standard(),
        0,
    );
    let mut hash = None;
    let mut in_body = false;
    let mut samples = Vec::new();
    let mut seen_version = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if in_body {
            if t.len() != 11 {
                return Err(bad(line));
            }
            samples.push(SampleMeta {
                id: num(t.first(), line)?,
                tier: t[1].to_string(),
                branch: t[2].to_string(),
                split: Split::parse(t[3])?,
                seed: num(t.get(4), line)?,
                n_missing: num(t.get(5), line)?,
                n_replaced: num(t.get(6), line)?,
                emission_min: num(t.get(7), line)?,
                emission_max: num(t.get(8), line)?,
                truth: PathBuf::from(t[9]),
                sino: PathBuf::from(t[10]),
            });
            continue;
        }
        match t[0] {
            "version" => {
                if t.get(1) != Some(&"1") {
                    return format_err("manifest: unsupported version");
                }
                seen_version = true;
            }
            "noise_level" => cfg.noise_level = num(t.get(1), line)?,
            "master_seed" => cfg.master_seed = num(t.get(1), line)?,
            "supersample" => cfg.supersample = num(t.get(1), line)?,
            "grid" => {
                let n: usize = num(t.get(1), line)?;
                let h: f64 = num(t.get(2), line)?;
                cfg.grid = GridSpec { n_px: n, pixel_size: h, r_domain: n as f64 * h / 2.0 };
            }
            "detector" => {
                cfg.detector.n_offsets = num(t.get(1), line)?;
                cfg.detector.offset_pitch = num(t.get(2), line)?;
                cfg.detector.n_angles = num(t.get(3), line)?;
                cfg.detector.collimator_width = num(t.get(4), line)?;
                cfg.detector.vertical = match t.get(5) {
                    Some(&"planar") => VerticalModel::Planar,
                    Some(&"geometric") => VerticalModel::Geometric {
                        half_height: num(t.get(6), line)?,
                        detector_distance: num(t.get(7), line)?,
                    },
                    _ => return Err(bad(line)),
                };
            }
            "geometry_hash" => {
                hash = Some(u64::from_str_radix(t.get(1).ok_or_else(|| bad(line))?, 16).map_err(|_| bad(line))?)
            }
            "bounds" => {
                cfg.bounds = Bounds { lambda_max: num(t.get(1), line)?, mu_max: num(t.get(2), line)? };
            }
            "rods" => {
                cfg.assembly.rod_pitch = num(t.get(1), line)?;
                cfg.assembly.rod_radius = num(t.get(2), line)?;
                cfg.assembly.position_jitter_sigma = num(t.get(3), line)?;
            }
            "emission_range" => cfg.assembly.emission_range = (num(t.get(1), line)?, num(t.get(2), line)?),
            "attenuation_range" => cfg.assembly.attenuation_range = (num(t.get(1), line)?, num(t.get(2), line)?),
            "water_attenuation" => cfg.assembly.water_attenuation = num(t.get(1), line)?,
            "plan" => {
                let v: Vec<usize> = (1..8).map(|i| num(t.get(i), line)).collect::<Result<_>>()?;
                cfg.plan = TierPlan {
                    all_present: v[0],
                    missing: v[1],
                    replaced: v[2],
                    n_validation: v[3],
                    medium: v[4],
                    hard: v[5],
                    extreme: v[6] != 0,
                };
            }
            "columns" => {
                if t[1..].join(" ") != MANIFEST_COLUMNS {
                    return format_err("manifest: unexpected column layout");
                }
                in_body = true;
            }
            _ => return Err(bad(line)),
        }
    }
    if !seen_version || !in_body {
        return format_err("manifest: missing header");
    }
    let geometry_hash = hash.ok_or_else(|| Error::Format("manifest: missing geometry_hash".into()))?;
    Ok(Manifest { config: cfg, geometry_hash, samples, root: root.to_path_buf(), hash: bytes_hash(text.as_bytes()) })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &root)
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleMeta> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn load_truth(&self, m: &SampleMeta) -> Result<ImagePair> {
        read_imgpair(&self.root.join(&m.truth), self.config.bounds)
    }

    pub fn load_sino(&self, m: &SampleMeta) -> Result<Sinogram> {
        let s = read_sino(&self.root.join(&m.sino))?;
        if s.grid_hash != self.geometry_hash {
            return format_err(format!("sinogram {} does not match the manifest geometry", m.sino.display()));
        }
        Ok(s)
    }
}
