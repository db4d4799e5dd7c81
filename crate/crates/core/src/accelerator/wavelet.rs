//! Daubechies-3 discrete wavelet transform, separable in 2-D, with the
//! PyWavelets `symmetric` and `periodization` boundary conventions.

use ndarray::{Array2, Axis};

pub const DB3_DEC_LO: [f64; 6] = [
    0.03522629188570953,
    -0.08544127388202666,
    -0.13501102001025458,
    0.45987750211849154,
    0.8068915093110925,
    0.33267055295008263,
];

const F: usize = 6;

fn dec_hi() -> [f64; F] {
    let mut h = [0.0; F];
    for (j, v) in h.iter_mut().enumerate() {
        let c = DB3_DEC_LO[F - 1 - j];
        *v = if j % 2 == 0 { -c } else { c };
    }
    h
}

fn rev(f: [f64; F]) -> [f64; F] {
    let mut r = f;
    r.reverse();
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Half-sample symmetric extension (redundant, length ⌊(N+5)/2⌋).
    Symmetric,
    /// Periodic, critically sampled and orthogonal (N even).
    Periodization,
}

fn reflect(mut i: isize, n: isize) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

pub fn coeff_len(n: usize, mode: Mode) -> usize {
    match mode {
        Mode::Symmetric => (n + F - 1) / 2,
        Mode::Periodization => n.div_ceil(2),
    }
}

/// Single-level 1-D analysis → (approximation, detail).
pub fn dwt1(x: &[f64], mode: Mode) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let hi = dec_hi();
    let lo = DB3_DEC_LO;
    match mode {
        Mode::Symmetric => {
            let l = coeff_len(n, mode);
            let mut a = vec![0.0; l];
            let mut d = vec![0.0; l];
            for k in 0..l {
                for j in 0..F {
                    let v = x[reflect(2 * k as isize + 1 - j as isize, n as isize)];
                    a[k] += lo[j] * v;
                    d[k] += hi[j] * v;
                }
            }
            (a, d)
        }
        Mode::Periodization => {
            assert!(n % 2 == 0, "periodization needs an even length");
            let l = n / 2;
            let mut a = vec![0.0; l];
            let mut d = vec![0.0; l];
            for k in 0..l {
                for j in 0..F {
                    let v = x[(2 * k + 3 + n * F - j) % n];
                    a[k] += lo[j] * v;
                    d[k] += hi[j] * v;
                }
            }
            (a, d)
        }
    }
}

/// Single-level 1-D synthesis; symmetric mode returns 2L−4 samples.
pub fn idwt1(a: &[f64], d: &[f64], mode: Mode) -> Vec<f64> {
    assert_eq!(a.len(), d.len());
    let l = a.len();
    match mode {
        Mode::Symmetric => {
            let (rlo, rhi) = (rev(DB3_DEC_LO), rev(dec_hi()));
            let n = 2 * l + 2 - F;
            let mut x = vec![0.0; n];
            for (i, xi) in x.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..l {
                    let j = i as isize + F as isize - 2 - 2 * k as isize;
                    if (0..F as isize).contains(&j) {
                        acc += a[k] * rlo[j as usize] + d[k] * rhi[j as usize];
                    }
                }
                *xi = acc;
            }
            x
        }
        Mode::Periodization => {
            let (lo, hi) = (DB3_DEC_LO, dec_hi());
            let n = 2 * l;
            let mut x = vec![0.0; n];
            for k in 0..l {
                for j in 0..F {
                    x[(2 * k + 3 + n * F - j) % n] += lo[j] * a[k] + hi[j] * d[k];
                }
            }
            x
        }
    }
}

fn along(x: &Array2<f64>, axis: usize, mode: Mode) -> (Array2<f64>, Array2<f64>) {
    let n = x.len_of(Axis(axis));
    let l = coeff_len(n, mode);
    let mut shape = [x.nrows(), x.ncols()];
    shape[axis] = l;
    let mut a = Array2::zeros(shape);
    let mut d = Array2::zeros(shape);
    let lanes = a.lanes_mut(Axis(axis)).into_iter().zip(d.lanes_mut(Axis(axis)));
    for ((oa, od), lane) in lanes.zip(x.lanes(Axis(axis))) {
        let (ca, cd) = dwt1(&lane.to_vec(), mode);
        oa.into_iter().zip(ca).for_each(|(o, v)| *o = v);
        od.into_iter().zip(cd).for_each(|(o, v)| *o = v);
    }
    (a, d)
}

fn along_inv(a: &Array2<f64>, d: &Array2<f64>, axis: usize, mode: Mode) -> Array2<f64> {
    let l = a.len_of(Axis(axis));
    let n = match mode {
        Mode::Symmetric => 2 * l + 2 - F,
        Mode::Periodization => 2 * l,
    };
    let mut shape = [a.nrows(), a.ncols()];
    shape[axis] = n;
    let mut x = Array2::zeros(shape);
    let lanes = a.lanes(Axis(axis)).into_iter().zip(d.lanes(Axis(axis)));
    for (out, (la, ld)) in x.lanes_mut(Axis(axis)).into_iter().zip(lanes) {
        let r = idwt1(&la.to_vec(), &ld.to_vec(), mode);
        out.into_iter().zip(r).for_each(|(o, v)| *o = v);
    }
    x
}

/// One 2-D level. Subband names give the filter along axis 0 then axis 1:
/// `aa` approximation, `da` / `ad` / `dd` details (PyWavelets cH, cV, cD).
#[derive(Clone, Debug, PartialEq)]
pub struct Dwt2 {
    pub aa: Array2<f64>,
    pub da: Array2<f64>,
    pub ad: Array2<f64>,
    pub dd: Array2<f64>,
}

impl Dwt2 {
    pub fn bands(&self) -> [&Array2<f64>; 4] {
        [&self.aa, &self.da, &self.ad, &self.dd]
    }
}

pub fn dwt2(x: &Array2<f64>, mode: Mode) -> Dwt2 {
    let (a, d) = along(x, 0, mode);
    let (aa, ad) = along(&a, 1, mode);
    let (da, dd) = along(&d, 1, mode);
    Dwt2 { aa, da, ad, dd }
}

pub fn idwt2(c: &Dwt2, mode: Mode) -> Array2<f64> {
    let a = along_inv(&c.aa, &c.ad, 1, mode);
    let d = along_inv(&c.da, &c.dd, 1, mode);
    along_inv(&a, &d, 0, mode)
}

/// Multi-level decomposition; `details[0]` is the coarsest level
/// (da, ad, dd).
#[derive(Clone, Debug, PartialEq)]
pub struct WaveDec2 {
    pub approx: Array2<f64>,
    pub details: Vec<[Array2<f64>; 3]>,
    pub shape: (usize, usize),
}

pub fn wavedec2(x: &Array2<f64>, levels: usize, mode: Mode) -> WaveDec2 {
    let mut a = x.clone();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let c = dwt2(&a, mode);
        details.push([c.da, c.ad, c.dd]);
        a = c.aa;
    }
    details.reverse();
    WaveDec2 { approx: a, details, shape: x.dim() }
}

pub fn waverec2(c: &WaveDec2, mode: Mode) -> Array2<f64> {
    let mut a = c.approx.clone();
    for [da, ad, dd] in &c.details {
        let (r, q) = da.dim();
        if a.dim() != (r, q) {
            a = a.slice(ndarray::s![..r, ..q]).to_owned();
        }
        a = idwt2(&Dwt2 { aa: a, da: da.clone(), ad: ad.clone(), dd: dd.clone() }, mode);
    }
    let (r, q) = c.shape;
    a.slice(ndarray::s![..r, ..q]).to_owned()
}
