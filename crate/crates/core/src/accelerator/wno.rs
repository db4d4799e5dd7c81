//! Wavelet neural operator: 5×5 kernels on the four coarsest db3 subbands,
//! finer details discarded; L is the identity.

use ndarray::Array2;

use crate::error::{invalid, Result};

use super::nn::{conv2d, gelu, pointwise, Feat};
use super::wavelet::{wavedec2, waverec2, Mode, WaveDec2};
use super::weights::{Arch, WeightStore, HIDDEN, SUBBANDS, WNO_LAYERS, WNO_LEVELS};
use super::NetOutput;

/// Per-subband kernels [c_out, c_in, 5, 5] in the order aa, da, ad, dd.
pub struct SubbandKernels {
    pub c_out: usize,
    pub k: [Vec<f64>; 4],
}

fn to_array(p: &[f64], h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_vec((h, w), p.to_vec()).unwrap()
}

/// Coarsest-level subbands of every channel, stacked as [C, h, w] per band.
pub fn coarse_subbands(v: &Feat) -> ([Feat; 4], Vec<WaveDec2>) {
    let decs: Vec<WaveDec2> = (0..v.c).map(|c| wavedec2(&to_array(v.plane(c), v.h, v.w), WNO_LEVELS, Mode::Symmetric)).collect();
    let (h, w) = decs[0].approx.dim();
    let band = |b: usize| {
        let mut f = Feat::zeros(v.c, h, w);
        for (c, d) in decs.iter().enumerate() {
            let src = if b == 0 { &d.approx } else { &d.details[0][b - 1] };
            f.plane_mut(c).copy_from_slice(src.as_slice().unwrap());
        }
        f
    };
    ([band(0), band(1), band(2), band(3)], decs)
}

/// Kernel-transformed coarsest subbands (what the inverse transform sees).
pub fn subband_response(v: &Feat, kern: &SubbandKernels) -> [Feat; 4] {
    let (bands, _) = coarse_subbands(v);
    let f = |b: usize| conv2d(&bands[b], &kern.k[b], None, kern.c_out, 5, 1);
    [f(0), f(1), f(2), f(3)]
}

/// idwt2 of the kernel-transformed coarsest level, finer details zero.
pub fn wavelet_conv(v: &Feat, kern: &SubbandKernels) -> Feat {
    let (bands, decs) = coarse_subbands(v);
    let resp: Vec<Feat> = (0..4).map(|b| conv2d(&bands[b], &kern.k[b], None, kern.c_out, 5, 1)).collect();
    let (h, w) = (bands[0].h, bands[0].w);
    let template = &decs[0];
    let mut out = Feat::zeros(kern.c_out, v.h, v.w);
    for o in 0..kern.c_out {
        let mut details: Vec<[Array2<f64>; 3]> =
            template.details.iter().map(|d| [Array2::zeros(d[0].dim()), Array2::zeros(d[1].dim()), Array2::zeros(d[2].dim())]).collect();
        details[0] = [to_array(resp[1].plane(o), h, w), to_array(resp[2].plane(o), h, w), to_array(resp[3].plane(o), h, w)];
        let dec = WaveDec2 { approx: to_array(resp[0].plane(o), h, w), details, shape: (v.h, v.w) };
        let rec = waverec2(&dec, Mode::Symmetric);
        out.plane_mut(o).copy_from_slice(rec.as_slice().unwrap());
    }
    out
}

/// v' = GELU(A·v + wavelet_conv(v)).
pub fn wno_layer(v: &Feat, kern: &SubbandKernels, a: &[f64]) -> Feat {
    let mut z = pointwise(v, a, None, kern.c_out);
    z.add_assign(&wavelet_conv(v, kern));
    z.map_inplace(gelu);
    z
}

pub struct Wno {
    lift: (Vec<f64>, Vec<f64>),
    layers: Vec<(SubbandKernels, Vec<f64>)>,
    proj0: (Vec<f64>, Vec<f64>),
    proj1: (Vec<f64>, Vec<f64>),
}

impl Wno {
    pub fn from_store(store: &WeightStore) -> Result<Wno> {
        if store.arch != Arch::Wno {
            return invalid("weight store is not tagged wno");
        }
        let g = |n: &str| store.get(n).map(|t| t.to_f64());
        let layers = (0..WNO_LAYERS)
            .map(|l| {
                let k = |b: &str| g(&format!("layers.{l}.kernel.{b}"));
                let kern = SubbandKernels { c_out: HIDDEN, k: [k(SUBBANDS[0])?, k(SUBBANDS[1])?, k(SUBBANDS[2])?, k(SUBBANDS[3])?] };
                Ok((kern, g(&format!("layers.{l}.mix.weight"))?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Wno {
            lift: (g("lift.weight")?, g("lift.bias")?),
            layers,
            proj0: (g("proj.0.weight")?, g("proj.0.bias")?),
            proj1: (g("proj.1.weight")?, g("proj.1.bias")?),
        })
    }

    pub fn forward(&self, x: &Feat) -> NetOutput {
        let mut v = pointwise(x, &self.lift.0, Some(&self.lift.1), HIDDEN);
        for (kern, a) in &self.layers {
            v = wno_layer(&v, kern, a);
        }
        let mut q = pointwise(&v, &self.proj0.0, Some(&self.proj0.1), HIDDEN);
        q.map_inplace(gelu);
        let g = pointwise(&q, &self.proj1.0, Some(&self.proj1.1), 2);
        NetOutput { g, ls: x.channels(2, 4) }
    }
}
