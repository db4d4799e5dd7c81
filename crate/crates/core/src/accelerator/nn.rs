//! Minimal f64 feature-map ops in torch conventions ([C, H, W], conv
//! weights [C_out, C_in, kH, kW], linear weights [out, in]).

#[derive(Clone, Debug, PartialEq)]
pub struct Feat {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Feat {
    pub fn zeros(c: usize, h: usize, w: usize) -> Feat {
        Feat { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn from_planes(planes: &[&[f64]], h: usize, w: usize) -> Feat {
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            assert_eq!(p.len(), h * w);
            data.extend_from_slice(p);
        }
        Feat { c: planes.len(), h, w, data }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let s = self.h * self.w;
        &self.data[c * s..(c + 1) * s]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let s = self.h * self.w;
        &mut self.data[c * s..(c + 1) * s]
    }

    /// Channel slice [from, to).
    pub fn channels(&self, from: usize, to: usize) -> Feat {
        let s = self.h * self.w;
        Feat { c: to - from, h: self.h, w: self.w, data: self.data[from * s..to * s].to_vec() }
    }

    pub fn add_assign(&mut self, o: &Feat) {
        assert_eq!((self.c, self.h, self.w), (o.c, o.h, o.w));
        self.data.iter_mut().zip(&o.data).for_each(|(a, b)| *a += b);
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Exact (erf) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// 2-D cross-correlation with zero padding k/2 ("same" at stride 1).
pub fn conv2d(x: &Feat, weight: &[f64], bias: Option<&[f64]>, c_out: usize, k: usize, stride: usize) -> Feat {
    assert_eq!(weight.len(), c_out * x.c * k * k);
    let pad = (k / 2) as isize;
    let ho = (x.h + 2 * pad as usize - k) / stride + 1;
    let wo = (x.w + 2 * pad as usize - k) / stride + 1;
    let mut out = Feat::zeros(c_out, ho, wo);
    for o in 0..c_out {
        let b = bias.map_or(0.0, |b| b[o]);
        let dst = out.plane_mut(o);
        dst.iter_mut().for_each(|v| *v = b);
        for ci in 0..x.c {
            let src = x.plane(ci);
            let wk = &weight[(o * x.c + ci) * k * k..(o * x.c + ci + 1) * k * k];
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for di in 0..k {
                        let si = (i * stride) as isize + di as isize - pad;
                        if si < 0 || si >= x.h as isize {
                            continue;
                        }
                        let row = &src[si as usize * x.w..(si as usize + 1) * x.w];
                        for dj in 0..k {
                            let sj = (j * stride) as isize + dj as isize - pad;
                            if sj >= 0 && sj < x.w as isize {
                                acc += wk[di * k + dj] * row[sj as usize];
                            }
                        }
                    }
                    dst[i * wo + j] += acc;
                }
            }
        }
    }
    out
}

/// Per-pixel linear map over channels.
pub fn pointwise(x: &Feat, weight: &[f64], bias: Option<&[f64]>, c_out: usize) -> Feat {
    assert_eq!(weight.len(), c_out * x.c);
    let s = x.h * x.w;
    let mut out = Feat::zeros(c_out, x.h, x.w);
    for o in 0..c_out {
        let b = bias.map_or(0.0, |b| b[o]);
        let dst = &mut out.data[o * s..(o + 1) * s];
        dst.iter_mut().for_each(|v| *v = b);
        for ci in 0..x.c {
            let wv = weight[o * x.c + ci];
            if wv == 0.0 {
                continue;
            }
            for (d, v) in dst.iter_mut().zip(x.plane(ci)) {
                *d += wv * v;
            }
        }
    }
    out
}

/// Nearest-neighbour resize, source index ⌊i·in/out⌋.
pub fn upsample_nearest(x: &Feat, ho: usize, wo: usize) -> Feat {
    let mut out = Feat::zeros(x.c, ho, wo);
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for i in 0..ho {
            let si = i * x.h / ho;
            for j in 0..wo {
                dst[i * wo + j] = src[si * x.w + j * x.w / wo];
            }
        }
    }
    out
}
