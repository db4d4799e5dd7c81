//! `.pgwt` weight container and the per-architecture tensor inventory.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{format_err, invalid, Result};
use crate::forward::Bounds;
use crate::io::formats::{write_atomic, Reader};

pub const PGWT_MAGIC: &[u8; 4] = b"PGWT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    Cnn,
    Fno,
    Wno,
}

impl Arch {
    pub fn tag(self) -> u8 {
        match self {
            Arch::Cnn => 0,
            Arch::Fno => 1,
            Arch::Wno => 2,
        }
    }

    pub fn from_tag(t: u8) -> Result<Arch> {
        match t {
            0 => Ok(Arch::Cnn),
            1 => Ok(Arch::Fno),
            2 => Ok(Arch::Wno),
            _ => format_err(format!("pgwt: unknown architecture tag {t}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Cnn => "cnn",
            Arch::Fno => "fno",
            Arch::Wno => "wno",
        }
    }

    pub fn parse(s: &str) -> Result<Arch> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Arch::Cnn),
            "fno" => Ok(Arch::Fno),
            "wno" => Ok(Arch::Wno),
            _ => invalid(format!("unknown architecture '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    /// Complex64 stored as interleaved (re, im) f32 pairs.
    C64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::C64 => 1,
        }
    }

    fn lanes(self) -> usize {
        match self {
            DType::F32 => 1,
            DType::C64 => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    /// Row-major; 2·numel values for C64.
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
}

fn spec(name: impl Into<String>, dtype: DType, dims: &[usize]) -> TensorSpec {
    TensorSpec { name: name.into(), dtype, dims: dims.to_vec() }
}

pub const HIDDEN: usize = 12;
pub const FNO_RANK: usize = 2;
pub const FNO_MODES: usize = 20;
pub const FNO_LAYERS: usize = 3;
pub const WNO_LAYERS: usize = 2;
pub const WNO_LEVELS: usize = 3;
pub const SUBBANDS: [&str; 4] = ["aa", "da", "ad", "dd"];

/// Expected tensors for an architecture, in canonical file order.
pub fn tensor_specs(arch: Arch) -> Vec<TensorSpec> {
    use DType::*;
    let mut v = Vec::new();
    match arch {
        Arch::Cnn => {
            let plan = [(2, 8), (8, 16), (16, 32)];
            for (l, &(ci, co)) in plan.iter().enumerate() {
                v.push(spec(format!("enc_u.{l}.weight"), F32, &[co, ci, 3, 3]));
                v.push(spec(format!("enc_u.{l}.bias"), F32, &[co]));
            }
            for (l, &(ci, co)) in plan.iter().enumerate() {
                v.push(spec(format!("enc_s.{l}.weight"), F32, &[co, ci, 3, 3]));
            }
            v.push(spec("dec.0.weight", F32, &[16, 32, 5, 5]));
            v.push(spec("dec.0.bias", F32, &[16]));
            v.push(spec("dec.1.weight", F32, &[8, 16, 5, 5]));
            v.push(spec("dec.1.bias", F32, &[8]));
            v.push(spec("dec.2.weight", F32, &[2, 8, 1, 1]));
            v.push(spec("dec.3.weight", F32, &[2, 2, 5, 5]));
            v.push(spec("lop.weight", F32, &[2, 2, 5, 5]));
        }
        Arch::Fno => {
            let (h, m) = (HIDDEN, FNO_MODES);
            v.push(spec("lift.0.weight", F32, &[8, 4]));
            v.push(spec("lift.0.bias", F32, &[8]));
            v.push(spec("lift.1.weight", F32, &[h, 8]));
            for l in 0..FNO_LAYERS {
                v.push(spec(format!("layers.{l}.spectral.u"), C64, &[h, FNO_RANK]));
                v.push(spec(format!("layers.{l}.spectral.v"), C64, &[FNO_RANK, h, m, m]));
                v.push(spec(format!("layers.{l}.spectral.bias"), F32, &[h]));
                v.push(spec(format!("layers.{l}.mix.weight"), F32, &[h, h]));
                v.push(spec(format!("layers.{l}.mix.bias"), F32, &[h]));
            }
            v.push(spec("proj.0.weight", F32, &[8, h]));
            v.push(spec("proj.1.weight", F32, &[2, 8]));
            v.push(spec("proj.1.bias", F32, &[2]));
            v.push(spec("lop.spectral.u", C64, &[2, 1]));
            v.push(spec("lop.spectral.v", C64, &[1, 2, m, m]));
            v.push(spec("lop.conv.weight", F32, &[2, 2, 5, 5]));
            v.push(spec("lop.skip.weight", F32, &[2, 2]));
        }
        Arch::Wno => {
            let h = HIDDEN;
            v.push(spec("lift.weight", F32, &[h, 4]));
            v.push(spec("lift.bias", F32, &[h]));
            for l in 0..WNO_LAYERS {
                for b in SUBBANDS {
                    v.push(spec(format!("layers.{l}.kernel.{b}"), F32, &[h, h, 5, 5]));
                }
                v.push(spec(format!("layers.{l}.mix.weight"), F32, &[h, h]));
            }
            v.push(spec("proj.0.weight", F32, &[h, h]));
            v.push(spec("proj.0.bias", F32, &[h]));
            v.push(spec("proj.1.weight", F32, &[2, h]));
            v.push(spec("proj.1.bias", F32, &[2]));
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    pub arch: Arch,
    pub k: u32,
    pub bounds: Bounds,
    pub tensors: Vec<Tensor>,
}

impl WeightStore {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| crate::Error::Format(format!("pgwt: missing tensor '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Number of scalar parameters (a complex entry counts once).
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Checks names, payload sizes and the inventory for the architecture.
    pub fn validate(&self) -> Result<()> {
        if !(self.bounds.lambda_max > 0.0 && self.bounds.mu_max > 0.0) {
            return format_err("pgwt: bounds must be positive");
        }
        let mut seen = HashSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return format_err(format!("pgwt: duplicate tensor '{}'", t.name));
            }
            if t.data.len() != t.numel() * t.dtype.lanes() {
                return format_err(format!("pgwt: tensor '{}' payload does not match dims", t.name));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return format_err(format!("pgwt: tensor '{}' has non-finite values", t.name));
            }
        }
        let expected = tensor_specs(self.arch);
        for t in &self.tensors {
            match expected.iter().find(|s| s.name == t.name) {
                None => return format_err(format!("pgwt: unknown tensor name '{}' for {}", t.name, self.arch.name())),
                Some(s) if s.dtype != t.dtype || s.dims != t.dims => {
                    return format_err(format!(
                        "pgwt: dim mismatch for '{}': expected {:?} {:?}, found {:?} {:?}",
                        t.name, s.dtype, s.dims, t.dtype, t.dims
                    ))
                }
                _ => {}
            }
        }
        if let Some(s) = expected.iter().find(|s| !seen.contains(s.name.as_str())) {
            return format_err(format!("pgwt: missing tensor '{}'", s.name));
        }
        Ok(())
    }

    fn from_fn(arch: Arch, k: u32, bounds: Bounds, mut fill: impl FnMut(&TensorSpec) -> Vec<f32>) -> WeightStore {
        let tensors = tensor_specs(arch)
            .into_iter()
            .map(|s| {
                let data = fill(&s);
                Tensor { name: s.name, dtype: s.dtype, dims: s.dims, data }
            })
            .collect();
        WeightStore { arch, k, bounds, tensors }
    }

    pub fn zeros(arch: Arch, k: u32, bounds: Bounds) -> WeightStore {
        Self::from_fn(arch, k, bounds, |s| vec![0.0; s.dims.iter().product::<usize>() * s.dtype.lanes()])
    }

    /// Uniform(±1/√fan_in) initialization; spectral factors use ±1/C.
    pub fn random(arch: Arch, k: u32, bounds: Bounds, seed: u64) -> WeightStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(arch, k, bounds, |s| {
            let numel: usize = s.dims.iter().product();
            let scale = match s.dtype {
                DType::C64 => 1.0 / s.dims[0].max(s.dims[1]) as f64,
                DType::F32 if s.dims.len() == 1 => 0.1,
                DType::F32 => 1.0 / ((numel / s.dims[0]) as f64).sqrt(),
            };
            (0..numel * s.dtype.lanes()).map(|_| (rng.random_range(-1.0..1.0) * scale) as f32).collect()
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PGWT_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.push(self.arch.tag());
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&self.bounds.lambda_max.to_le_bytes());
        out.extend_from_slice(&self.bounds.mu_max.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype.tag());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<WeightStore> {
        let mut r = Reader::new(buf, "pgwt");
        r.magic(PGWT_MAGIC)?;
        r.version()?;
        let arch = Arch::from_tag(r.u8()?)?;
        let k = r.u32()?;
        let bounds = Bounds { lambda_max: r.f64()?, mu_max: r.f64()? };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| crate::Error::Format("pgwt: tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = match r.u8()? {
                0 => DType::F32,
                1 => DType::C64,
                t => return format_err(format!("pgwt: unknown dtype {t} for '{name}'")),
            };
            let ndim = r.u8()? as usize;
            let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(dtype.lanes(), |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| crate::Error::Format("pgwt: size overflow".into()))?;
            let data = r.take(n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Tensor { name, dtype, dims, data });
        }
        r.finish()?;
        let store = WeightStore { arch, k, bounds, tensors };
        store.validate()?;
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<WeightStore> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_atomic(path, &self.encode())
    }

    /// Tensor inventory for `describe-weights`.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "arch {}  k {}  bounds lambda_max={} mu_max={}\n",
            self.arch.name(),
            self.k,
            self.bounds.lambda_max,
            self.bounds.mu_max
        );
        for t in &self.tensors {
            let dt = if t.dtype == DType::C64 { "c64" } else { "f32" };
            s.push_str(&format!("{:<28} {dt} {:?} {}\n", t.name, t.dims, t.numel()));
        }
        s.push_str(&format!("total parameters {}\n", self.parameter_count()));
        s
    }
}
