//! Two-branch encoder–decoder CNN: g from stride-2 encoders of u and s
//! (latent codes summed), L = 5×5 bias-free convolution of s.

use crate::error::{invalid, Result};

use super::nn::{conv2d, relu, upsample_nearest, Feat};
use super::weights::{Arch, WeightStore};
use super::NetOutput;

struct Conv {
    w: Vec<f64>,
    b: Option<Vec<f64>>,
    c_out: usize,
    k: usize,
}

impl Conv {
    fn load(store: &WeightStore, name: &str, bias: bool) -> Result<Conv> {
        let t = store.get(&format!("{name}.weight"))?;
        let b = if bias { Some(store.get(&format!("{name}.bias"))?.to_f64()) } else { None };
        Ok(Conv { w: t.to_f64(), b, c_out: t.dims[0], k: t.dims[2] })
    }

    fn apply(&self, x: &Feat, stride: usize) -> Feat {
        conv2d(x, &self.w, self.b.as_deref(), self.c_out, self.k, stride)
    }
}

pub struct Cnn {
    enc_u: Vec<Conv>,
    enc_s: Vec<Conv>,
    dec: Vec<Conv>,
    lop: Conv,
}

impl Cnn {
    pub fn from_store(store: &WeightStore) -> Result<Cnn> {
        if store.arch != Arch::Cnn {
            return invalid("weight store is not tagged cnn");
        }
        let enc = |p: &str, bias| (0..3).map(|l| Conv::load(store, &format!("{p}.{l}"), bias)).collect::<Result<Vec<_>>>();
        Ok(Cnn {
            enc_u: enc("enc_u", true)?,
            enc_s: enc("enc_s", false)?,
            dec: vec![
                Conv::load(store, "dec.0", true)?,
                Conv::load(store, "dec.1", true)?,
                Conv::load(store, "dec.2", false)?,
                Conv::load(store, "dec.3", false)?,
            ],
            lop: Conv::load(store, "lop", false)?,
        })
    }

    /// `x` holds the normalized channels (λ, μ, s_λ, s_μ).
    pub fn forward(&self, x: &Feat) -> NetOutput {
        let u = x.channels(0, 2);
        let s = x.channels(2, 4);
        let mut sizes = vec![(x.h, x.w)];
        let (mut eu, mut es) = (u, s.clone());
        for (cu, cs) in self.enc_u.iter().zip(&self.enc_s) {
            eu = cu.apply(&eu, 2);
            eu.map_inplace(relu);
            es = cs.apply(&es, 2);
            es.map_inplace(relu);
            sizes.push((eu.h, eu.w));
        }
        let mut z = eu;
        z.add_assign(&es);
        for (l, conv) in self.dec[..2].iter().enumerate() {
            let (h, w) = sizes[2 - l];
            z = conv.apply(&upsample_nearest(&z, h, w), 1);
            z.map_inplace(relu);
        }
        z = self.dec[2].apply(&upsample_nearest(&z, x.h, x.w), 1);
        z.map_inplace(relu);
        let g = self.dec[3].apply(&z, 1);
        let ls = self.lop.apply(&s, 1);
        NetOutput { g, ls }
    }
}
