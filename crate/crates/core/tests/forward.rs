mod common;

use common::*;
use ndarray::Array2;
use pget_core::forward::*;
use pget_core::geometry::rotate_image;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct re-evaluation: offsets outer, sources inner, explicit
/// per-source path lists and freshly rotated images.
fn dense_forward(p: &Projector, u: &ImagePair) -> Array2<f64> {
    let t = &p.tables;
    let n = p.n_px();
    let mut y = Array2::zeros((p.n_offsets(), p.n_angles()));
    for (a, th) in t.det.angles().into_iter().enumerate() {
        let la = rotate_image(&u.lambda, th);
        let ma = rotate_image(&u.mu, th);
        for o in 0..p.n_offsets() {
            let mut acc = 0.0;
            for (s, &m) in t.sources.iter().enumerate().rev() {
                let r = t.r[[m, o]];
                if r == 0.0 {
                    continue;
                }
                let path: f64 = t.path(s).map(|(k, l)| l * ma[[k / n, k % n]]).sum();
                acc += la[[m / n, m % n]] * r * (-t.c[[m, o]] * path).exp();
            }
            y[[o, a]] = acc;
        }
    }
    y
}

#[test]
fn zero_emission_gives_zero() {
    let p = projector(33, 5.0, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut u = random_pair(p.mask(), &mut rng, 7e5, 0.14);
    u.lambda.fill(0.0);
    assert!(p.project(&u).unwrap().y.iter().all(|&v| v == 0.0));
}

#[test]
fn single_pixel_without_attenuation() {
    let p = projector(33, 5.0, 8);
    let n = 33;
    let mut u = ImagePair::zeros(n, Bounds::default());
    let (i, j) = (10, 20);
    u.lambda[[i, j]] = 3.0;
    let y = p.project(&u).unwrap();
    for (a, th) in p.tables.det.angles().into_iter().enumerate() {
        // rotated source distribution, then footprint
        let rot = rotate_image(&u.lambda, th);
        for o in 0..p.n_offsets() {
            let expect: f64 = p.tables.sources.iter().map(|&m| rot[[m / n, m % n]] * p.tables.r[[m, o]]).sum();
            assert!((y.y[[o, a]] - expect).abs() <= 1e-12 * 3.0);
        }
    }
    // at θ = 0 the rotated source is the pixel itself
    for o in 0..p.n_offsets() {
        assert!((y.y[[o, 0]] - 3.0 * p.tables.r[[i * n + j, o]]).abs() < 1e-12);
    }
}

#[test]
fn project_matches_dense_oracle() {
    let p = projector(33, 5.0, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let u = random_pair(p.mask(), &mut rng, 7e5, 0.14);
        let y = p.project(&u).unwrap();
        let yd = dense_forward(&p, &u);
        let e = rel_err(y.y.as_slice().unwrap(), yd.as_slice().unwrap());
        assert!(e <= 1e-12, "{e}");
        let lin = p.linearize(&u).unwrap();
        assert!(rel_err(lin.value().y.as_slice().unwrap(), yd.as_slice().unwrap()) <= 1e-12);
    }
}

#[test]
fn jvp_special_cases() {
    let p = projector(33, 5.0, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = random_pair(p.mask(), &mut rng, 7e5, 0.14);
    let mut du = random_dir(p.mask(), &mut rng, 1e5, 0.01);
    du.mu.fill(0.0);
    let j = jvp(&u, &du, &p).unwrap();
    let mut v = du.clone();
    v.mu = u.mu.clone();
    let f = p.project(&v).unwrap();
    assert!(rel_err(j.y.as_slice().unwrap(), f.y.as_slice().unwrap()) < 1e-12);

    let mut u0 = u.clone();
    u0.lambda.fill(0.0);
    let mut dm = random_dir(p.mask(), &mut rng, 1e5, 0.01);
    dm.lambda.fill(0.0);
    assert!(jvp(&u0, &dm, &p).unwrap().y.iter().all(|&x| x == 0.0));
}

#[test]
fn vjp_zero_weights() {
    let p = projector(17, 10.0, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = random_pair(p.mask(), &mut rng, 7e5, 0.14);
    let w = Sinogram { y: Array2::zeros((p.n_offsets(), p.n_angles())), grid_hash: p.hash() };
    let (gl, gm) = vjp(&u, &w, &p).unwrap();
    assert!(gl.iter().chain(gm.iter()).all(|&x| x == 0.0));
}

#[test]
fn jvp_matches_central_differences() {
    let p = projector(33, 5.0, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = random_pair(p.mask(), &mut rng, 7e5, 0.14);
    let lin = p.linearize(&u).unwrap();
    for _ in 0..5 {
        let du = random_dir(p.mask(), &mut rng, 7e5, 0.14);
        let h = 1e-6;
        let plus = ImagePair { lambda: &u.lambda + &(&du.lambda * h), mu: &u.mu + &(&du.mu * h), bounds: u.bounds };
        let minus = ImagePair { lambda: &u.lambda - &(&du.lambda * h), mu: &u.mu - &(&du.mu * h), bounds: u.bounds };
        let fd = (p.project(&plus).unwrap().y - p.project(&minus).unwrap().y) / (2.0 * h);
        let j = lin.jvp(&du).unwrap();
        let e = rel_err(j.y.as_slice().unwrap(), fd.as_slice().unwrap());
        assert!(e <= 1e-6, "{e}");
    }
}

#[test]
fn adjoint_identity() {
    let p = projector(33, 5.0, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let u = random_pair(p.mask(), &mut rng, 7e5, 0.14);
        let du = random_dir(p.mask(), &mut rng, 1.0, 1e-6);
        let lin = p.linearize(&u).unwrap();
        let w = Sinogram {
            y: Array2::from_shape_fn((p.n_offsets(), p.n_angles()), |_| rand::Rng::random::<f64>(&mut rng) - 0.5),
            grid_hash: 0,
        };
        let jv = lin.jvp(&du).unwrap();
        let (gl, gm) = lin.vjp_raw(&w).unwrap();
        let lhs = dot(jv.y.as_slice().unwrap(), w.y.as_slice().unwrap());
        let rhs = dot(du.lambda_slice(), &gl) + dot(du.mu_slice(), &gm);
        let scale = norm(jv.y.as_slice().unwrap()) * w.norm();
        assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }
}

#[test]
fn vjp_matches_dense_jacobian_transpose() {
    let p = projector(9, 10.0, 4);
    let nn = 81;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u = random_pair(p.mask(), &mut rng, 7e5, 0.05);
    let lin = p.linearize(&u).unwrap();
    let rows = p.n_offsets() * p.n_angles();
    // dense J by unit perturbations
    let mut jac = vec![vec![0.0; 2 * nn]; rows];
    for col in 0..2 * nn {
        let mut e = vec![0.0; 2 * nn];
        e[col] = 1.0;
        let jv = lin.jvp_raw(&e[..nn], &e[nn..]).unwrap();
        for (r, &v) in jv.y.iter().enumerate() {
            jac[r][col] = v;
        }
    }
    let w = Sinogram {
        y: Array2::from_shape_fn((p.n_offsets(), p.n_angles()), |_| rand::Rng::random::<f64>(&mut rng) - 0.5),
        grid_hash: 0,
    };
    let mut jtw = vec![0.0; 2 * nn];
    for (r, &wv) in w.y.iter().enumerate() {
        for c in 0..2 * nn {
            jtw[c] += jac[r][c] * wv;
        }
    }
    let (gl, gm) = lin.vjp_raw(&w).unwrap();
    let g: Vec<f64> = gl.into_iter().chain(gm).collect();
    assert!(rel_err(&g, &jtw) <= 1e-10);
}

#[test]
fn noise_examples() {
    let p = projector(33, 5.0, 121);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = random_pair(p.mask(), &mut rng, 7e5, 0.14);
    let y = p.project(&u).unwrap();
    assert!(y.len() >= 10_000);
    assert_eq!(add_noise(&y, 0.0, 1), y);
    assert_eq!(add_noise(&y, 0.02, 11), add_noise(&y, 0.02, 11));
    assert_ne!(add_noise(&y, 0.02, 11), add_noise(&y, 0.02, 12));
    for seed in 0..100 {
        let yd = add_noise(&y, 0.02, seed);
        let rel = rel_err(yd.y.as_slice().unwrap(), y.y.as_slice().unwrap());
        let diff: Vec<f64> = yd.y.iter().zip(y.y.iter()).map(|(a, b)| a - b).collect();
        assert!((0.018..=0.022).contains(&(norm(&diff) / y.norm())), "{rel}");
    }
}

#[test]
fn mismatched_tables_rejected() {
    let p = projector(33, 5.0, 4);
    let u = ImagePair::zeros(31, Bounds::default());
    assert!(p.project(&u).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn linear_in_emission(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let p = projector(17, 10.0, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u1 = random_pair(p.mask(), &mut rng, 7e5, 0.14);
        let mut u2 = random_pair(p.mask(), &mut rng, 7e5, 0.14);
        u2.mu = u1.mu.clone();
        let mix = ImagePair { lambda: &u1.lambda * a + &u2.lambda * b, mu: u1.mu.clone(), bounds: u1.bounds };
        let lhs = p.project(&mix).unwrap().y;
        let rhs = p.project(&u1).unwrap().y * a + p.project(&u2).unwrap().y * b;
        let scale = (p.project(&u1).unwrap().norm() * a.abs() + p.project(&u2).unwrap().norm() * b.abs()).max(1.0);
        let d: Vec<f64> = lhs.iter().zip(rhs.iter()).map(|(x, y)| x - y).collect();
        prop_assert!(norm(&d) <= 1e-12 * scale);
    }

    #[test]
    fn attenuation_never_increases_counts(seed in 0u64..10_000, pix in 0usize..289, bump in 0.0f64..0.1) {
        let p = projector(17, 10.0, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_pair(p.mask(), &mut rng, 7e5, 0.14);
        let mut v = u.clone();
        if p.mask().data.as_slice().unwrap()[pix] {
            v.mu.as_slice_mut().unwrap()[pix] += bump;
        }
        let y0 = p.project(&u).unwrap();
        let y1 = p.project(&v).unwrap();
        for (a, b) in y1.y.iter().zip(y0.y.iter()) {
            prop_assert!(*a <= *b * (1.0 + 1e-14));
        }
    }
}
