//! Pixel grid, detector sampling, reference-angle ray tables and the
//! bilinear rotation operator.
//!
//! Coordinates: pixel (i, j) has its centre at x = (j - c)·h, y = (c - i)·h
//! with c = (n - 1)/2, so row 0 is the top of the image. At the reference
//! angle the detector lies in the +y direction and offsets run along x.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_px: usize,
    pub pixel_size: f64,
    pub r_domain: f64,
}

pub fn build_grid(n_px: usize, pixel_size: f64) -> Result<GridSpec> {
    if n_px < 3 {
        return invalid(format!("grid too small: n_px = {n_px}"));
    }
    if n_px % 2 == 0 {
        return invalid(format!("even grid: n_px = {n_px}"));
    }
    if !(pixel_size > 0.0 && pixel_size.is_finite()) {
        return invalid(format!("pixel_size must be positive, got {pixel_size}"));
    }
    Ok(GridSpec { n_px, pixel_size, r_domain: n_px as f64 * pixel_size / 2.0 })
}

impl GridSpec {
    /// Finer grid covering the same disk, used for simulation. The pixel
    /// count may be even; fine pixels tile coarse pixels exactly.
    pub fn supersampled(&self, factor: usize) -> GridSpec {
        let factor = factor.max(1);
        GridSpec {
            n_px: self.n_px * factor,
            pixel_size: self.pixel_size / factor as f64,
            r_domain: self.r_domain,
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.n_px * self.n_px
    }

    pub fn center(&self) -> f64 {
        (self.n_px as f64 - 1.0) / 2.0
    }

    /// Physical centre of pixel (i, j).
    pub fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        let c = self.center();
        ((j as f64 - c) * self.pixel_size, (c - i as f64) * self.pixel_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub n: usize,
    pub data: Array2<bool>,
}

impl Mask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[[i, j]]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Row-major indices of pixels inside the disk.
    pub fn indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(k, &b)| if b { Some(k) } else { None })
            .collect()
    }

    pub fn apply(&self, img: &mut Array2<f64>) {
        for (v, &m) in img.iter_mut().zip(self.data.iter()) {
            if !m {
                *v = 0.0;
            }
        }
    }
}

pub fn disk_mask(grid: &GridSpec) -> Mask {
    let n = grid.n_px;
    // compare in index units so the test is exact for the usual grids
    let c = grid.center();
    let r = grid.r_domain / grid.pixel_size;
    let data = Array2::from_shape_fn((n, n), |(i, j)| {
        let dx = j as f64 - c;
        let dy = c - i as f64;
        dx * dx + dy * dy <= r * r
    });
    Mask { n, data }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum VerticalModel {
    Planar,
    /// c = sec(arctan(half_height / distance to the detector face)).
    Geometric { half_height: f64, detector_distance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub n_offsets: usize,
    pub offset_pitch: f64,
    pub n_angles: usize,
    pub collimator_width: f64,
    pub vertical: VerticalModel,
}

impl DetectorSpec {
    /// Defaults for a grid: 2 mm pitch, 120 angles, offsets covering the disk.
    pub fn default_for(grid: &GridSpec) -> DetectorSpec {
        Self::with_angles(grid, 120)
    }

    pub fn with_angles(grid: &GridSpec, n_angles: usize) -> DetectorSpec {
        let pitch = 2.0;
        let mut n_off = (2.0 * grid.r_domain / pitch - 1e-9).ceil() as usize;
        if n_off % 2 == 0 {
            n_off += 1;
        }
        DetectorSpec {
            n_offsets: n_off,
            offset_pitch: pitch,
            n_angles,
            collimator_width: 2.0 * pitch,
            vertical: VerticalModel::Planar,
        }
    }

    /// Uniform angles over [0, 2π).
    pub fn angles(&self) -> Vec<f64> {
        (0..self.n_angles)
            .map(|a| 2.0 * std::f64::consts::PI * a as f64 / self.n_angles as f64)
            .collect()
    }

    pub fn offset_position(&self, n: usize) -> f64 {
        (n as f64 - (self.n_offsets as f64 - 1.0) / 2.0) * self.offset_pitch
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.n_angles == 0 {
            return invalid("n_angles must be ≥ 1");
        }
        if !(self.offset_pitch > 0.0) || !(self.collimator_width > 0.0) {
            return invalid("offset_pitch and collimator_width must be positive");
        }
        if (self.n_offsets as f64) * self.offset_pitch < 2.0 * grid.r_domain - 1e-9 {
            return invalid(format!(
                "detector span {} mm smaller than disk diameter {} mm",
                self.n_offsets as f64 * self.offset_pitch,
                2.0 * grid.r_domain
            ));
        }
        if let VerticalModel::Geometric { half_height, detector_distance } = self.vertical {
            if !(half_height >= 0.0) || !(detector_distance > grid.r_domain) {
                return invalid("geometric vertical model needs half_height ≥ 0 and detector outside the disk");
            }
        }
        Ok(())
    }
}

/// Stable 64-bit hash of the acquisition geometry, stored in sinogram headers.
pub fn geometry_hash(grid: &GridSpec, det: &DetectorSpec) -> u64 {
    let mut h = Sha256::new();
    h.update(b"pget-geometry-v1");
    h.update((grid.n_px as u64).to_le_bytes());
    h.update(grid.pixel_size.to_le_bytes());
    h.update((det.n_offsets as u64).to_le_bytes());
    h.update(det.offset_pitch.to_le_bytes());
    h.update((det.n_angles as u64).to_le_bytes());
    h.update(det.collimator_width.to_le_bytes());
    match det.vertical {
        VerticalModel::Planar => h.update([0u8]),
        VerticalModel::Geometric { half_height, detector_distance } => {
            h.update([1u8]);
            h.update(half_height.to_le_bytes());
            h.update(detector_distance.to_le_bytes());
        }
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Intersection lengths of the segment p + t·dir, t ∈ [0, length], with
/// the pixels of `grid` (incremental voxel traversal). `dir` must be unit.
pub fn trace_segment(grid: &GridSpec, p: (f64, f64), dir: (f64, f64), length: f64) -> Vec<(usize, f64)> {
    let n = grid.n_px as i64;
    let h = grid.pixel_size;
    let c = grid.center();
    // continuous index coordinates: column u = x/h + c + 0.5, row v = c + 0.5 - y/h
    let u0 = p.0 / h + c + 0.5;
    let v0 = c + 0.5 - p.1 / h;
    let du = dir.0 / h;
    let dv = -dir.1 / h;
    let mut out = Vec::new();
    if length <= 0.0 {
        return out;
    }
    let mut j = u0.floor() as i64;
    let mut i = v0.floor() as i64;
    let step_j: i64 = if du > 0.0 { 1 } else { -1 };
    let step_i: i64 = if dv > 0.0 { 1 } else { -1 };
    let next_boundary = |x0: f64, cell: i64, d: f64| -> f64 {
        if d > 0.0 {
            ((cell + 1) as f64 - x0) / d
        } else if d < 0.0 {
            (cell as f64 - x0) / d
        } else {
            f64::INFINITY
        }
    };
    let mut t_max_j = next_boundary(u0, j, du);
    let mut t_max_i = next_boundary(v0, i, dv);
    let t_delta_j = if du != 0.0 { 1.0 / du.abs() } else { f64::INFINITY };
    let t_delta_i = if dv != 0.0 { 1.0 / dv.abs() } else { f64::INFINITY };
    let mut t = 0.0;
    while t < length {
        let t_next = t_max_j.min(t_max_i).min(length);
        let seg = t_next - t;
        if seg > 0.0 && (0..n).contains(&i) && (0..n).contains(&j) {
            out.push(((i * n + j) as usize, seg));
        }
        t = t_next;
        if t >= length {
            break;
        }
        if t_max_j < t_max_i {
            j += step_j;
            t_max_j += t_delta_j;
        } else if t_max_i < t_max_j {
            i += step_i;
            t_max_i += t_delta_i;
        } else {
            j += step_j;
            i += step_i;
            t_max_j += t_delta_j;
            t_max_i += t_delta_i;
        }
    }
    out
}

/// Distance from p along unit `dir` to the boundary of the disk of radius r.
pub fn chord_to_edge(p: (f64, f64), dir: (f64, f64), r: f64) -> f64 {
    let b = p.0 * dir.0 + p.1 * dir.1;
    let cc = p.0 * p.0 + p.1 * p.1 - r * r;
    let disc = b * b - cc;
    if disc <= 0.0 {
        return 0.0;
    }
    (-b + disc.sqrt()).max(0.0)
}

/// Reference-angle tables. Because rays are parallel, the traced path of a
/// source pixel is shared by all offsets; footprints are stored per source.
#[derive(Clone, Debug)]
pub struct RayTables {
    pub grid: GridSpec,
    pub det: DetectorSpec,
    pub mask: Mask,
    /// dense [n_px², n_offsets]
    pub r: Array2<f64>,
    /// dense [n_px², n_offsets]
    pub c: Array2<f64>,
    /// pixel index of each source (pixels inside the disk)
    pub sources: Vec<usize>,
    pub path_ptr: Vec<usize>,
    pub path_pix: Vec<u32>,
    pub path_len: Vec<f64>,
    pub fp_ptr: Vec<usize>,
    pub fp_off: Vec<u32>,
    pub fp_r: Vec<f64>,
    pub fp_c: Vec<f64>,
    pub chain: PathChain,
}

/// Incremental form of the per-source paths: the path of a source equals
/// the path of its parent (the next pixel along the beam) plus a couple
/// of correction entries, so all path integrals cost O(n_px²).
#[derive(Clone, Debug)]
pub struct PathChain {
    parent: Vec<u32>,
    ptr: Vec<usize>,
    pix: Vec<u32>,
    len: Vec<f64>,
}

const NO_PARENT: u32 = u32::MAX;

impl PathChain {
    fn build(sources: &[usize], n_pixels: usize, paths: &[Vec<(usize, f64)>]) -> PathChain {
        let mut source_of = vec![NO_PARENT; n_pixels];
        for (s, &m) in sources.iter().enumerate() {
            source_of[m] = s as u32;
        }
        let mut parent = Vec::with_capacity(sources.len());
        let mut ptr = vec![0usize];
        let (mut pix, mut len) = (Vec::new(), Vec::new());
        for (s, p) in paths.iter().enumerate() {
            let mut chained = false;
            if p.len() >= 2 {
                let q = source_of[p[1].0];
                if q != NO_PARENT && (q as usize) < s {
                    let pq = &paths[q as usize];
                    let tail_matches = pq.len() + 1 == p.len()
                        && pq[0].0 == p[1].0
                        && pq[1..].iter().zip(&p[2..]).all(|(a, b)| a.0 == b.0 && a.1 == b.1);
                    if tail_matches {
                        parent.push(q);
                        pix.push(p[0].0 as u32);
                        len.push(p[0].1);
                        let corr = p[1].1 - pq[0].1;
                        if corr != 0.0 {
                            pix.push(p[1].0 as u32);
                            len.push(corr);
                        }
                        chained = true;
                    }
                }
            }
            if !chained {
                parent.push(NO_PARENT);
                for &(k, l) in p {
                    pix.push(k as u32);
                    len.push(l);
                }
            }
            ptr.push(pix.len());
        }
        PathChain { parent, ptr, pix, len }
    }

    /// out[s] = Σ_k d[s,k]·img[k] for every source s.
    pub fn integrate(&self, img: &[f64], out: &mut [f64]) {
        for s in 0..self.parent.len() {
            let mut a = if self.parent[s] == NO_PARENT { 0.0 } else { out[self.parent[s] as usize] };
            for t in self.ptr[s]..self.ptr[s + 1] {
                a += self.len[t] * img[self.pix[t] as usize];
            }
            out[s] = a;
        }
    }

    /// Transpose of `integrate`: img += Σ_s g[s]·d[s,·]. Consumes g.
    pub fn scatter(&self, g: &mut [f64], img: &mut [f64]) {
        for s in (0..self.parent.len()).rev() {
            let v = g[s];
            if v == 0.0 {
                continue;
            }
            for t in self.ptr[s]..self.ptr[s + 1] {
                img[self.pix[t] as usize] += self.len[t] * v;
            }
            if self.parent[s] != NO_PARENT {
                g[self.parent[s] as usize] += v;
            }
        }
    }
}

impl RayTables {
    /// Intersection list d[m, n, ·] for source pixel m (independent of n).
    pub fn path(&self, source: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.path_ptr[source], self.path_ptr[source + 1]);
        self.path_pix[a..b].iter().zip(&self.path_len[a..b]).map(|(&k, &l)| (k as usize, l))
    }

    /// d entries for offset n as (source pixel m, pixel k, length).
    pub fn d_for_offset(&self, n: usize) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (s, &m) in self.sources.iter().enumerate() {
            if self.r[[m, n]] > 0.0 {
                out.extend(self.path(s).map(|(k, l)| (m, k, l)));
            }
        }
        out
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }
}

/// Triangular collimator response clamp(1 − |x − s|/(w/2), 0, 1) averaged
/// over the pixel width h, so that coarse and fine grids see the same
/// detector.
pub fn footprint(x: f64, s: f64, width: f64, h: f64) -> f64 {
    let a = width / 2.0;
    // antiderivative of the triangle
    let prim = |t: f64| {
        if t.abs() >= a {
            0.5 * a * t.signum()
        } else {
            t - t * t.abs() / (2.0 * a)
        }
    };
    let v = (prim(x - s + 0.5 * h) - prim(x - s - 0.5 * h)) / h;
    if v < 1e-15 { 0.0 } else { v.min(1.0) }
}

pub fn build_ray_tables(grid: &GridSpec, det: &DetectorSpec) -> Result<RayTables> {
    det.validate(grid)?;
    let n = grid.n_px;
    let mask = disk_mask(grid);
    let sources = mask.indices();
    let n_off = det.n_offsets;
    let beam = (0.0, 1.0);

    let paths: Vec<Vec<(usize, f64)>> = sources
        .par_iter()
        .map(|&m| {
            let p = grid.pixel_center(m / n, m % n);
            let len = chord_to_edge(p, beam, grid.r_domain);
            trace_segment(grid, p, beam, len)
        })
        .collect();

    let mut r = Array2::<f64>::zeros((n * n, n_off));
    let mut c = Array2::<f64>::ones((n * n, n_off));
    let mut fp_ptr = vec![0usize];
    let (mut fp_off, mut fp_r, mut fp_c) = (Vec::new(), Vec::new(), Vec::new());
    for &m in &sources {
        let (x, y) = grid.pixel_center(m / n, m % n);
        for o in 0..n_off {
            let s = det.offset_position(o);
            let cv = match det.vertical {
                VerticalModel::Planar => 1.0,
                VerticalModel::Geometric { half_height, detector_distance } => {
                    let dist = ((detector_distance - y).powi(2) + (x - s).powi(2)).sqrt();
                    (1.0 + (half_height / dist).powi(2)).sqrt()
                }
            };
            c[[m, o]] = cv;
            let rv = footprint(x, s, det.collimator_width, grid.pixel_size);
            if rv > 0.0 {
                r[[m, o]] = rv;
                fp_off.push(o as u32);
                fp_r.push(rv);
                fp_c.push(cv);
            }
        }
        fp_ptr.push(fp_off.len());
    }

    let mut path_ptr = vec![0usize];
    let (mut path_pix, mut path_len) = (Vec::new(), Vec::new());
    for p in &paths {
        for &(k, l) in p {
            path_pix.push(k as u32);
            path_len.push(l);
        }
        path_ptr.push(path_pix.len());
    }
    let chain = PathChain::build(&sources, n * n, &paths);

    Ok(RayTables {
        grid: *grid,
        det: det.clone(),
        mask,
        r,
        c,
        sources,
        path_ptr,
        path_pix,
        path_len,
        fp_ptr,
        fp_off,
        fp_r,
        fp_c,
        chain,
    })
}

/// Bilinear rotation about the grid centre as a sparse linear operator.
/// Output pixel p samples the input at R(-θ)p; samples outside the input
/// extent contribute zero.
#[derive(Clone, Copy, Debug)]
pub struct Rotation {
    n: usize,
    cos: f64,
    sin: f64,
}

impl Rotation {
    pub fn new(n: usize, theta: f64) -> Rotation {
        Rotation { n, cos: theta.cos(), sin: theta.sin() }
    }

    #[inline]
    fn taps(&self, i: usize, j: usize) -> [(usize, f64); 4] {
        let n = self.n;
        let c = (n as f64 - 1.0) / 2.0;
        let x = j as f64 - c;
        let y = c - i as f64;
        let sx = self.cos * x + self.sin * y;
        let sy = -self.sin * x + self.cos * y;
        let fj = sx + c;
        let fi = c - sy;
        let j0 = fj.floor();
        let i0 = fi.floor();
        let tj = fj - j0;
        let ti = fi - i0;
        let (j0, i0) = (j0 as i64, i0 as i64);
        let mut out = [(0usize, 0.0f64); 4];
        let cand = [
            (i0, j0, (1.0 - ti) * (1.0 - tj)),
            (i0, j0 + 1, (1.0 - ti) * tj),
            (i0 + 1, j0, ti * (1.0 - tj)),
            (i0 + 1, j0 + 1, ti * tj),
        ];
        for (slot, &(ii, jj, w)) in out.iter_mut().zip(cand.iter()) {
            if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n && w != 0.0 {
                *slot = (ii as usize * n + jj as usize, w);
            }
        }
        out
    }

    pub fn apply_into(&self, src: &[f64], dst: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (k, w) in self.taps(i, j) {
                    acc += w * src[k];
                }
                dst[i * n + j] = acc;
            }
        }
    }

    /// dst += Rᵀ src
    pub fn apply_transpose_add(&self, src: &[f64], dst: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                let v = src[i * n + j];
                if v == 0.0 {
                    continue;
                }
                for (k, w) in self.taps(i, j) {
                    dst[k] += w * v;
                }
            }
        }
    }

    /// Explicit sparse form (CSR over output pixels).
    pub fn to_sparse(&self) -> SparseRotation {
        let n = self.n;
        let mut ptr = Vec::with_capacity(n * n + 1);
        let mut idx = Vec::with_capacity(4 * n * n);
        let mut w = Vec::with_capacity(4 * n * n);
        ptr.push(0u32);
        for i in 0..n {
            for j in 0..n {
                for (k, wt) in self.taps(i, j) {
                    if wt != 0.0 {
                        idx.push(k as u32);
                        w.push(wt);
                    }
                }
                ptr.push(idx.len() as u32);
            }
        }
        SparseRotation { ptr, idx, w }
    }
}

#[derive(Clone, Debug)]
pub struct SparseRotation {
    ptr: Vec<u32>,
    idx: Vec<u32>,
    w: Vec<f64>,
}

impl SparseRotation {
    pub fn apply_into(&self, src: &[f64], dst: &mut [f64]) {
        for (p, d) in dst.iter_mut().enumerate() {
            let (a, b) = (self.ptr[p] as usize, self.ptr[p + 1] as usize);
            let mut acc = 0.0;
            for t in a..b {
                acc += self.w[t] * src[self.idx[t] as usize];
            }
            *d = acc;
        }
    }

    pub fn apply_transpose_add(&self, src: &[f64], dst: &mut [f64]) {
        for (p, &v) in src.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let (a, b) = (self.ptr[p] as usize, self.ptr[p + 1] as usize);
            for t in a..b {
                dst[self.idx[t] as usize] += self.w[t] * v;
            }
        }
    }
}

/// Rotation that caches its sparse form when small enough.
#[derive(Clone, Debug)]
pub enum RotationOp {
    Cached(SparseRotation),
    OnTheFly(Rotation),
}

impl RotationOp {
    pub fn new(n: usize, theta: f64, cache: bool) -> RotationOp {
        let r = Rotation::new(n, theta);
        if cache {
            RotationOp::Cached(r.to_sparse())
        } else {
            RotationOp::OnTheFly(r)
        }
    }

    #[inline]
    pub fn apply_into(&self, src: &[f64], dst: &mut [f64]) {
        match self {
            RotationOp::Cached(s) => s.apply_into(src, dst),
            RotationOp::OnTheFly(r) => r.apply_into(src, dst),
        }
    }

    #[inline]
    pub fn apply_transpose_add(&self, src: &[f64], dst: &mut [f64]) {
        match self {
            RotationOp::Cached(s) => s.apply_transpose_add(src, dst),
            RotationOp::OnTheFly(r) => r.apply_transpose_add(src, dst),
        }
    }
}

pub fn rotate_image(img: &Array2<f64>, theta: f64) -> Array2<f64> {
    let (n, m) = img.dim();
    assert_eq!(n, m, "rotate_image expects a square image");
    let src: Vec<f64> = img.iter().copied().collect();
    let mut dst = vec![0.0; n * n];
    Rotation::new(n, theta).apply_into(&src, &mut dst);
    Array2::from_shape_vec((n, n), dst).unwrap()
}
