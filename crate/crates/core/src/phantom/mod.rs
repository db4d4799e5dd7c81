//! Synthetic 9×9 fuel assemblies, supersampled rasterization and the
//! training / validation / test datasets.

mod dataset;

pub use dataset::*;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::forward::{Bounds, ImagePair};
use crate::geometry::{disk_mask, rotate_image, GridSpec};

pub const LATTICE: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblySpec {
    pub rod_pitch: f64,
    pub rod_radius: f64,
    pub position_jitter_sigma: f64,
    pub emission_range: (f64, f64),
    pub attenuation_range: (f64, f64),
    pub water_attenuation: f64,
}

impl Default for AssemblySpec {
    fn default() -> Self {
        AssemblySpec {
            rod_pitch: 12.5,
            rod_radius: 5.5,
            position_jitter_sigma: 0.5,
            emission_range: (6.5e5, 7.0e5),
            attenuation_range: (0.12, 0.14),
            water_attenuation: 0.0085,
        }
    }
}

impl AssemblySpec {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let pos = [self.rod_pitch, self.rod_radius, self.water_attenuation];
        if pos.iter().any(|v| !(*v > 0.0)) || self.position_jitter_sigma < 0.0 {
            return invalid("assembly dimensions and water attenuation must be positive");
        }
        if 9.0 * self.rod_pitch + 2.0 * self.rod_radius >= 2.0 * grid.r_domain {
            return invalid("9x9 lattice does not fit the reconstruction disk");
        }
        for (lo, hi) in [self.emission_range, self.attenuation_range] {
            if !(lo > 0.0 && lo <= hi) {
                return invalid("value ranges must be nonempty and positive");
            }
        }
        Ok(())
    }

    /// Nominal (unjittered) lattice centre of rod (row, col); row 0 on top.
    pub fn lattice_center(&self, row: usize, col: usize) -> (f64, f64) {
        let c = (LATTICE as f64 - 1.0) / 2.0;
        ((col as f64 - c) * self.rod_pitch, (c - row as f64) * self.rod_pitch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RodState {
    Present,
    Missing,
    Replaced,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rod {
    pub center: (f64, f64),
    pub state: RodState,
    pub emission: f64,
    pub attenuation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assembly {
    pub rods: Vec<Rod>,
}

impl Assembly {
    pub fn count(&self, state: RodState) -> usize {
        self.rods.iter().filter(|r| r.state == state).count()
    }

    /// (min, max) emission over present rods.
    pub fn emission_span(&self) -> Option<(f64, f64)> {
        let v: Vec<f64> = self.rods.iter().filter(|r| r.state == RodState::Present).map(|r| r.emission).collect();
        if v.is_empty() {
            return None;
        }
        Some((v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(0.0, f64::max)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    AllPresent,
    Missing,
    Replaced,
}

/// Explicit 9×9 layout of rod states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout(pub Vec<RodState>);

impl Layout {
    /// 9 lines of 9 characters: `P` present, `.` missing, `R` replaced.
    /// Lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Layout> {
        let mut states = Vec::with_capacity(81);
        let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
        if rows.len() != LATTICE {
            return invalid(format!("layout needs {LATTICE} rows, found {}", rows.len()));
        }
        for row in rows {
            if row.chars().count() != LATTICE {
                return invalid(format!("layout row '{row}' must have {LATTICE} cells"));
            }
            for ch in row.chars() {
                states.push(match ch {
                    'P' => RodState::Present,
                    '.' => RodState::Missing,
                    'R' => RodState::Replaced,
                    _ => return invalid(format!("unknown layout cell '{ch}'")),
                });
            }
        }
        Ok(Layout(states))
    }
}

const EXTREME_FILES: [&str; 4] = [
    include_str!("../../data/extreme_1.txt"),
    include_str!("../../data/extreme_2.txt"),
    include_str!("../../data/extreme_3.txt"),
    include_str!("../../data/extreme_4.txt"),
];

/// The four shipped hand-made layouts.
pub fn extreme_layouts() -> Vec<Layout> {
    EXTREME_FILES.iter().map(|t| Layout::parse(t).expect("shipped layout")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tier {
    Standard(Branch),
    Medium,
    Hard,
    Extreme(Layout),
}

impl Tier {
    pub fn tag(&self) -> &'static str {
        match self {
            Tier::Standard(_) => "standard",
            Tier::Medium => "medium",
            Tier::Hard => "hard",
            Tier::Extreme(_) => "extreme",
        }
    }

    /// Parses tier names used on the command line: `standard:all`,
    /// `standard:missing`, `standard:replaced`, `medium`, `hard`, `extreme:<1-4>`.
    pub fn parse(name: &str) -> Result<Tier> {
        Ok(match name {
            "standard" | "standard:all" => Tier::Standard(Branch::AllPresent),
            "standard:missing" => Tier::Standard(Branch::Missing),
            "standard:replaced" => Tier::Standard(Branch::Replaced),
            "medium" => Tier::Medium,
            "hard" => Tier::Hard,
            other => {
                if let Some(idx) = other.strip_prefix("extreme:") {
                    let k: usize = idx.parse().map_err(|_| crate::Error::Invalid(format!("unknown tier '{other}'")))?;
                    let layouts = extreme_layouts();
                    if k == 0 || k > layouts.len() {
                        return invalid(format!("unknown tier '{other}'"));
                    }
                    Tier::Extreme(layouts[k - 1].clone())
                } else {
                    return invalid(format!("unknown tier '{other}'"));
                }
            }
        })
    }
}

/// Fraction of the maximum value that medium / hard tiers may drop to.
pub const LOW_VALUE_FRACTION: f64 = 0.7;

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn choose_distinct(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}

pub fn sample_assembly(spec: &AssemblySpec, tier: &Tier, seed: u64) -> Assembly {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter_scale = if matches!(tier, Tier::Hard) { 2.0 } else { 1.0 };
    let sigma = spec.position_jitter_sigma * jitter_scale;
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut centers = Vec::with_capacity(81);
    for row in 0..LATTICE {
        for col in 0..LATTICE {
            let (x, y) = spec.lattice_center(row, col);
            if sigma > 0.0 {
                centers.push((x + normal.sample(&mut rng), y + normal.sample(&mut rng)));
            } else {
                centers.push((x, y));
            }
        }
    }

    let n = LATTICE * LATTICE;
    let mut states = vec![RodState::Present; n];
    let low_values = matches!(tier, Tier::Medium | Tier::Hard);
    match tier {
        Tier::Standard(Branch::AllPresent) => {}
        Tier::Standard(Branch::Missing) => {
            let k = rng.random_range(1..=6);
            for i in choose_distinct(&mut rng, k, n) {
                states[i] = RodState::Missing;
            }
        }
        Tier::Standard(Branch::Replaced) => {
            let k = rng.random_range(5..=6);
            for i in choose_distinct(&mut rng, k, n) {
                states[i] = RodState::Replaced;
            }
        }
        Tier::Medium | Tier::Hard => {
            let (lo, hi) = if matches!(tier, Tier::Medium) { (1, 20) } else { (10, 30) };
            let k = rng.random_range(lo..=hi);
            for i in choose_distinct(&mut rng, k, n) {
                states[i] = if rng.random::<bool>() { RodState::Missing } else { RodState::Replaced };
            }
        }
        Tier::Extreme(layout) => states.clone_from(&layout.0),
    }

    let (e_lo, e_hi) = spec.emission_range;
    let (a_lo, a_hi) = spec.attenuation_range;
    let rods = centers
        .into_iter()
        .zip(states)
        .map(|(center, state)| {
            let (emission, attenuation) = match state {
                RodState::Present => {
                    let e = if low_values { uniform(&mut rng, LOW_VALUE_FRACTION * e_hi, e_hi) } else { uniform(&mut rng, e_lo, e_hi) };
                    (e, uniform(&mut rng, a_lo, a_hi))
                }
                RodState::Missing => (0.0, spec.water_attenuation),
                RodState::Replaced => {
                    let a = if low_values { uniform(&mut rng, LOW_VALUE_FRACTION * a_hi, a_hi) } else { uniform(&mut rng, a_lo, a_hi) };
                    (0.0, a)
                }
            };
            Rod { center, state, emission, attenuation }
        })
        .collect();
    Assembly { rods }
}

/// Fine-resolution image (grid supersampled by `factor`) before any
/// downsampling; pixels whose centre lies outside the disk are zero.
pub fn rasterize_fine(a: &Assembly, spec: &AssemblySpec, grid: &GridSpec, factor: usize, bounds: Bounds) -> Result<ImagePair> {
    if factor == 0 {
        return invalid("supersample factor must be ≥ 1");
    }
    for rod in &a.rods {
        let d = (rod.center.0.powi(2) + rod.center.1.powi(2)).sqrt();
        if d + spec.rod_radius > grid.r_domain {
            return invalid(format!("rod at ({:.2}, {:.2}) lies outside the disk", rod.center.0, rod.center.1));
        }
    }
    let fine = grid.supersampled(factor);
    let nf = fine.n_px;
    let r2 = spec.rod_radius * spec.rod_radius;
    let mut lambda = Array2::zeros((nf, nf));
    let mut mu = Array2::zeros((nf, nf));
    for i in 0..nf {
        for j in 0..nf {
            let (x, y) = fine.pixel_center(i, j);
            if x * x + y * y > grid.r_domain * grid.r_domain {
                continue;
            }
            let mut l = 0.0;
            let mut m = spec.water_attenuation;
            for rod in &a.rods {
                if rod.state == RodState::Missing {
                    continue;
                }
                let (dx, dy) = (x - rod.center.0, y - rod.center.1);
                if dx * dx + dy * dy <= r2 {
                    l = rod.emission;
                    m = rod.attenuation;
                    break;
                }
            }
            lambda[[i, j]] = l;
            mu[[i, j]] = m;
        }
    }
    Ok(ImagePair { lambda, mu, bounds })
}

/// Box-filter average of factor×factor blocks.
pub fn downsample(img: &Array2<f64>, factor: usize) -> Array2<f64> {
    let n = img.nrows() / factor;
    let w = 1.0 / (factor * factor) as f64;
    Array2::from_shape_fn((n, n), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..factor {
            for b in 0..factor {
                acc += img[[i * factor + a, j * factor + b]];
            }
        }
        acc * w
    })
}

pub fn rasterize(a: &Assembly, spec: &AssemblySpec, grid: &GridSpec, supersample: usize) -> Result<ImagePair> {
    rasterize_with_bounds(a, spec, grid, supersample, Bounds::default())
}

pub fn rasterize_with_bounds(a: &Assembly, spec: &AssemblySpec, grid: &GridSpec, supersample: usize, bounds: Bounds) -> Result<ImagePair> {
    let fine = rasterize_fine(a, spec, grid, supersample, bounds)?;
    let mask = disk_mask(grid);
    let mut out = ImagePair {
        lambda: downsample(&fine.lambda, supersample),
        mu: downsample(&fine.mu, supersample),
        bounds,
    };
    out.apply_mask(&mask);
    Ok(out)
}

pub const MAX_AUGMENT_DEG: f64 = 5.0;

/// Rotates every input channel and the target by one angle φ ~ U[−5°, 5°].
/// Returns the angle used (radians).
pub fn random_rotation_pair(inputs: &mut [Array2<f64>], target: &mut ImagePair, rng: &mut impl Rng) -> f64 {
    let phi = rng.random_range(-MAX_AUGMENT_DEG..=MAX_AUGMENT_DEG).to_radians();
    rotate_pair_by(inputs, target, phi);
    phi
}

pub fn rotate_pair_by(inputs: &mut [Array2<f64>], target: &mut ImagePair, phi: f64) {
    if phi == 0.0 {
        return;
    }
    for ch in inputs.iter_mut() {
        *ch = rotate_image(ch, phi);
    }
    target.lambda = rotate_image(&target.lambda, phi);
    target.mu = rotate_image(&target.mu, phi);
}

/// Tier of sample `id` under a plan: standard branches first (all present,
/// missing, replaced), then medium, hard and the extreme layouts.
pub fn dataset_tier(plan: &TierPlan, id: usize) -> Tier {
    let mut k = id;
    for (count, tier) in [
        (plan.all_present, Tier::Standard(Branch::AllPresent)),
        (plan.missing, Tier::Standard(Branch::Missing)),
        (plan.replaced, Tier::Standard(Branch::Replaced)),
        (plan.medium, Tier::Medium),
        (plan.hard, Tier::Hard),
    ] {
        if k < count {
            return tier;
        }
        k -= count;
    }
    Tier::Extreme(extreme_layouts()[k % 4].clone())
}
