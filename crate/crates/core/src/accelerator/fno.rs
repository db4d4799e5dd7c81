//! Fourier neural operator: pointwise lifting P, three spectral layers,
//! pointwise projection Q; L is one local layer (rank-1 spectral part,
//! 5×5 convolution and linear skip) with no bias.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

use super::nn::{conv2d, gelu, pointwise, Feat};
use super::weights::{Arch, Tensor, WeightStore, FNO_LAYERS, FNO_MODES};
use super::NetOutput;

/// 2-D DFT on n×n row-major planes, X[kx,ky] = Σ x[i,j]·e^{−2πi(kx·i+ky·j)/n}.
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn transpose(a: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut t = vec![Complex64::default(); n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

impl Fft2 {
    pub fn new(n: usize) -> Fft2 {
        let mut p = FftPlanner::new();
        Fft2 { n, fwd: p.plan_fft_forward(n), inv: p.plan_fft_inverse(n) }
    }

    fn run(&self, mut buf: Vec<Complex64>, plan: &Arc<dyn Fft<f64>>) -> Vec<Complex64> {
        plan.process(&mut buf);
        let mut t = transpose(&buf, self.n);
        plan.process(&mut t);
        transpose(&t, self.n)
    }

    pub fn forward(&self, plane: &[f64]) -> Vec<Complex64> {
        self.run(plane.iter().map(|&v| Complex64::new(v, 0.0)).collect(), &self.fwd)
    }

    /// Re of the normalized inverse transform.
    pub fn inverse_real(&self, spec: Vec<Complex64>) -> Vec<f64> {
        let s = 1.0 / (self.n * self.n) as f64;
        self.run(spec, &self.inv).into_iter().map(|c| c.re * s).collect()
    }
}

/// Materialized mode weights R[o, i, p, q]; mode p ↔ frequency p − m/2.
#[derive(Clone, Debug)]
pub struct SpectralWeights {
    pub c_out: usize,
    pub c_in: usize,
    pub modes: usize,
    pub r: Vec<Complex64>,
}

fn complex(t: &Tensor) -> Vec<Complex64> {
    t.data.chunks_exact(2).map(|c| Complex64::new(c[0] as f64, c[1] as f64)).collect()
}

impl SpectralWeights {
    pub fn zeros(c_out: usize, c_in: usize, modes: usize) -> SpectralWeights {
        SpectralWeights { c_out, c_in, modes, r: vec![Complex64::default(); c_out * c_in * modes * modes] }
    }

    /// R = U·V with U [c_out, rank] and V [rank, c_in, m, m].
    pub fn from_factors(u: &Tensor, v: &Tensor) -> SpectralWeights {
        let (c_out, rank) = (u.dims[0], u.dims[1]);
        let (c_in, m) = (v.dims[1], v.dims[2]);
        let (uc, vc) = (complex(u), complex(v));
        let blk = c_in * m * m;
        let mut r = vec![Complex64::default(); c_out * blk];
        for o in 0..c_out {
            for q in 0..rank {
                let f = uc[o * rank + q];
                for (dst, src) in r[o * blk..(o + 1) * blk].iter_mut().zip(&vc[q * blk..(q + 1) * blk]) {
                    *dst += f * src;
                }
            }
        }
        SpectralWeights { c_out, c_in, modes: m, r }
    }

    pub fn get(&self, o: usize, i: usize, p: usize, q: usize) -> Complex64 {
        self.r[((o * self.c_in + i) * self.modes + p) * self.modes + q]
    }
}

/// Retained frequency index for mode slot p on an n-point axis.
pub fn mode_index(p: usize, m: usize, n: usize) -> usize {
    (p as isize - (m / 2) as isize).rem_euclid(n as isize) as usize
}

/// InverseSpectral(R ⊙ Spectral(v)) restricted to the retained modes.
pub fn spectral_conv(v: &Feat, w: &SpectralWeights) -> Result<Feat> {
    if v.c != w.c_in {
        return invalid("spectral conv: channel mismatch");
    }
    if v.h != v.w {
        return invalid("spectral conv: square input required");
    }
    let n = v.h;
    if w.modes > n {
        return invalid(format!("spectral conv: {} modes exceed grid size {n}", w.modes));
    }
    let fft = Fft2::new(n);
    let m = w.modes;
    let idx: Vec<usize> = (0..m).map(|p| mode_index(p, m, n)).collect();
    let specs: Vec<Vec<Complex64>> = (0..v.c).map(|c| fft.forward(v.plane(c))).collect();
    let mut out = Feat::zeros(w.c_out, n, n);
    for o in 0..w.c_out {
        let mut y = vec![Complex64::default(); n * n];
        for (i, x) in specs.iter().enumerate() {
            for p in 0..m {
                for q in 0..m {
                    let k = idx[p] * n + idx[q];
                    y[k] += w.get(o, i, p, q) * x[k];
                }
            }
        }
        out.plane_mut(o).copy_from_slice(&fft.inverse_real(y));
    }
    Ok(out)
}

/// v' = GELU(A·v + a_bias + spectral(v) + s_bias).
pub fn fno_layer(v: &Feat, r: &SpectralWeights, a: &[f64], a_bias: &[f64], s_bias: &[f64]) -> Result<Feat> {
    let mut z = pointwise(v, a, Some(a_bias), r.c_out);
    let mut sp = spectral_conv(v, r)?;
    for (c, b) in s_bias.iter().enumerate() {
        sp.plane_mut(c).iter_mut().for_each(|x| *x += b);
    }
    z.add_assign(&sp);
    z.map_inplace(gelu);
    Ok(z)
}

struct Layer {
    r: SpectralWeights,
    a: Vec<f64>,
    a_bias: Vec<f64>,
    s_bias: Vec<f64>,
}

pub struct Fno {
    lift0: (Vec<f64>, Vec<f64>),
    lift1: Vec<f64>,
    layers: Vec<Layer>,
    proj0: Vec<f64>,
    proj1: (Vec<f64>, Vec<f64>),
    lop_r: SpectralWeights,
    lop_conv: Vec<f64>,
    lop_skip: Vec<f64>,
}

impl Fno {
    pub fn from_store(store: &WeightStore) -> Result<Fno> {
        if store.arch != Arch::Fno {
            return invalid("weight store is not tagged fno");
        }
        let g = |n: &str| store.get(n).map(|t| t.to_f64());
        let layers = (0..FNO_LAYERS)
            .map(|l| {
                let p = format!("layers.{l}");
                Ok(Layer {
                    r: SpectralWeights::from_factors(store.get(&format!("{p}.spectral.u"))?, store.get(&format!("{p}.spectral.v"))?),
                    a: g(&format!("{p}.mix.weight"))?,
                    a_bias: g(&format!("{p}.mix.bias"))?,
                    s_bias: g(&format!("{p}.spectral.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Fno {
            lift0: (g("lift.0.weight")?, g("lift.0.bias")?),
            lift1: g("lift.1.weight")?,
            layers,
            proj0: g("proj.0.weight")?,
            proj1: (g("proj.1.weight")?, g("proj.1.bias")?),
            lop_r: SpectralWeights::from_factors(store.get("lop.spectral.u")?, store.get("lop.spectral.v")?),
            lop_conv: g("lop.conv.weight")?,
            lop_skip: g("lop.skip.weight")?,
        })
    }

    pub fn forward(&self, x: &Feat) -> Result<NetOutput> {
        if x.h < FNO_MODES {
            return invalid(format!("fno needs n_px >= {FNO_MODES}"));
        }
        let mut h = pointwise(x, &self.lift0.0, Some(&self.lift0.1), 8);
        h.map_inplace(gelu);
        let mut v = pointwise(&h, &self.lift1, None, self.layers[0].r.c_in);
        for l in &self.layers {
            v = fno_layer(&v, &l.r, &l.a, &l.a_bias, &l.s_bias)?;
        }
        let mut q = pointwise(&v, &self.proj0, None, 8);
        q.map_inplace(gelu);
        let g = pointwise(&q, &self.proj1.0, Some(&self.proj1.1), 2);

        let s = x.channels(2, 4);
        let mut ls = spectral_conv(&s, &self.lop_r)?;
        ls.add_assign(&conv2d(&s, &self.lop_conv, None, 2, 5, 1));
        ls.add_assign(&pointwise(&s, &self.lop_skip, None, 2));
        Ok(NetOutput { g, ls })
    }
}
