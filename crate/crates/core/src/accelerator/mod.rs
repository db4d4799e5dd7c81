//! Learned update operators G(u, s) = u + L(s) ⊙ g(u, s): input
//! normalization, the three architectures, and the accelerators the
//! safeguarded loop consults.

pub mod cnn;
pub mod fno;
pub mod nn;
pub mod wavelet;
pub mod weights;
pub mod wno;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::forward::{Bounds, ImagePair};
use crate::geometry::Mask;

pub use cnn::Cnn;
pub use fno::Fno;
pub use nn::Feat;
pub use weights::{tensor_specs, Arch, DType, Tensor, TensorSpec, WeightStore};
pub use wno::Wno;

/// Normalized channels (λ, μ, s_λ, s_μ), zero outside the disk.
#[derive(Clone, Debug, PartialEq)]
pub struct AcceleratorInput {
    pub x: Feat,
    pub bounds: Bounds,
}

/// Network output in normalized units: ũ_n = ReLU(u_n + ls ⊙ g).
#[derive(Clone, Debug, PartialEq)]
pub struct NetOutput {
    pub g: Feat,
    pub ls: Feat,
}

pub fn normalize(u: &ImagePair, s: &ImagePair, mask: &Mask, bounds: Bounds) -> Result<AcceleratorInput> {
    if !(bounds.lambda_max > 0.0 && bounds.mu_max > 0.0) {
        return invalid("normalization bounds must be positive");
    }
    let n = u.n();
    if mask.n != n || s.n() != n {
        return invalid("accelerator input shape mismatch");
    }
    let m = mask.data.as_slice().unwrap();
    let scale = |a: &[f64], b: f64| -> Vec<f64> { a.iter().zip(m).map(|(v, &k)| if k { v / b } else { 0.0 }).collect() };
    let planes = [
        scale(u.lambda_slice(), bounds.lambda_max),
        scale(u.mu_slice(), bounds.mu_max),
        scale(s.lambda_slice(), bounds.lambda_max),
        scale(s.mu_slice(), bounds.mu_max),
    ];
    let refs: Vec<&[f64]> = planes.iter().map(|p| p.as_slice()).collect();
    Ok(AcceleratorInput { x: Feat::from_planes(&refs, n, n), bounds })
}

/// Multiplies back by the bounds and zeroes outside the disk.
pub fn denormalize(out: &Feat, mask: &Mask, bounds: Bounds) -> ImagePair {
    let n = out.h;
    let m = mask.data.as_slice().unwrap();
    let plane = |c: usize, b: f64| -> Vec<f64> { out.plane(c).iter().zip(m).map(|(v, &k)| if k { v * b } else { 0.0 }).collect() };
    let mut v = plane(0, bounds.lambda_max);
    v.extend(plane(1, bounds.mu_max));
    ImagePair::from_vec(n, &v, bounds)
}

/// ũ = mask·max(u + bound·(L(s) ⊙ g), 0), evaluated in f64 so that L(s) = 0
/// leaves u untouched.
pub fn combine(u: &ImagePair, out: &NetOutput, mask: &Mask, bounds: Bounds) -> ImagePair {
    let n = u.n();
    let m = mask.data.as_slice().unwrap();
    let mut res = ImagePair::zeros(n, u.bounds);
    let chans = [(u.lambda_slice(), bounds.lambda_max), (u.mu_slice(), bounds.mu_max)];
    for (c, (src, b)) in chans.into_iter().enumerate() {
        let (g, ls) = (out.g.plane(c), out.ls.plane(c));
        let dst: Vec<f64> =
            (0..n * n).map(|k| if m[k] { (src[k] + b * (ls[k] * g[k])).max(0.0) } else { 0.0 }).collect();
        let arr = if c == 0 { &mut res.lambda } else { &mut res.mu };
        arr.as_slice_mut().unwrap().copy_from_slice(&dst);
    }
    res
}

pub enum Network {
    Cnn(Cnn),
    Fno(Fno),
    Wno(Wno),
}

/// A loaded network together with its store metadata.
pub struct Model {
    pub arch: Arch,
    pub k: u32,
    pub bounds: Bounds,
    pub net: Network,
}

#[derive(Clone, Debug)]
pub struct Applied {
    pub u_tilde: ImagePair,
    pub out: NetOutput,
}

impl Model {
    pub fn from_store(store: &WeightStore) -> Result<Model> {
        store.validate()?;
        let net = match store.arch {
            Arch::Cnn => Network::Cnn(Cnn::from_store(store)?),
            Arch::Fno => Network::Fno(Fno::from_store(store)?),
            Arch::Wno => Network::Wno(Wno::from_store(store)?),
        };
        Ok(Model { arch: store.arch, k: store.k, bounds: store.bounds, net })
    }

    pub fn load(path: &std::path::Path) -> Result<Model> {
        Self::from_store(&WeightStore::load(path)?)
    }

    pub fn forward(&self, input: &AcceleratorInput) -> Result<NetOutput> {
        if input.x.c != 4 || input.x.h != input.x.w {
            return invalid("accelerator input must be 4 × n × n");
        }
        let out = match &self.net {
            Network::Cnn(m) => m.forward(&input.x),
            Network::Fno(m) => m.forward(&input.x)?,
            Network::Wno(m) => m.forward(&input.x),
        };
        if !out.g.is_finite() || !out.ls.is_finite() {
            return Err(Error::NonFinite("network output"));
        }
        Ok(out)
    }

    pub fn apply(&self, u: &ImagePair, s: &ImagePair, mask: &Mask) -> Result<Applied> {
        let input = normalize(u, s, mask, self.bounds)?;
        let out = self.forward(&input)?;
        Ok(Applied { u_tilde: combine(u, &out, mask, self.bounds), out })
    }
}

/// Source of candidate iterates for the safeguarded loop.
pub trait Accelerator: Sync {
    fn label(&self) -> String;
    /// ũ_k for iterate u and LM step s (physical units); `None` when no
    /// operator is available for iteration k.
    fn propose(&self, k: usize, u: &ImagePair, s: &ImagePair, mask: &Mask) -> Result<Option<ImagePair>>;
}

/// Trained networks, the k-th entry serving iteration k.
pub struct Networks(pub Vec<Model>);

impl Accelerator for Networks {
    fn label(&self) -> String {
        match self.0.first() {
            Some(m) => format!("{}x{}", m.arch.name(), self.0.len()),
            None => "none".into(),
        }
    }

    fn propose(&self, k: usize, u: &ImagePair, s: &ImagePair, mask: &Mask) -> Result<Option<ImagePair>> {
        match self.0.get(k) {
            Some(m) => Ok(Some(m.apply(u, s, mask)?.u_tilde)),
            None => Ok(None),
        }
    }
}

/// u + s: coincides with the LM step.
pub struct Mimic;

impl Accelerator for Mimic {
    fn label(&self) -> String {
        "mimic".into()
    }

    fn propose(&self, _k: usize, u: &ImagePair, s: &ImagePair, _mask: &Mask) -> Result<Option<ImagePair>> {
        let v: Vec<f64> = u.to_vec().iter().zip(s.to_vec()).map(|(a, b)| a + b).collect();
        Ok(Some(ImagePair::from_vec(u.n(), &v, u.bounds)))
    }
}

/// u plus Gaussian noise of `scale`·bound per pixel; deterministic in (seed, k).
pub struct Adversarial {
    pub seed: u64,
    pub scale: f64,
}

impl Accelerator for Adversarial {
    fn label(&self) -> String {
        format!("adversarial(seed={}, scale={})", self.seed, self.scale)
    }

    fn propose(&self, k: usize, u: &ImagePair, _s: &ImagePair, mask: &Mask) -> Result<Option<ImagePair>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut out = u.clone();
        for (v, b) in [(&mut out.lambda, u.bounds.lambda_max), (&mut out.mu, u.bounds.mu_max)] {
            v.iter_mut().for_each(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += self.scale * b * z;
            });
        }
        out.apply_mask(mask);
        Ok(Some(out))
    }
}

/// Always proposes the ground truth.
pub struct Oracle(pub ImagePair);

impl Accelerator for Oracle {
    fn label(&self) -> String {
        "oracle".into()
    }

    fn propose(&self, _k: usize, _u: &ImagePair, _s: &ImagePair, _mask: &Mask) -> Result<Option<ImagePair>> {
        Ok(Some(self.0.clone()))
    }
}

/// Never proposes anything.
pub struct NoAccelerator;

impl Accelerator for NoAccelerator {
    fn label(&self) -> String {
        "none".into()
    }

    fn propose(&self, _k: usize, _u: &ImagePair, _s: &ImagePair, _mask: &Mask) -> Result<Option<ImagePair>> {
        Ok(None)
    }
}
