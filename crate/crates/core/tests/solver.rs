mod common;

use common::*;
use pget_core::forward::{add_noise, Bounds, ImagePair, Projector};
use pget_core::geometry::{build_grid, build_ray_tables, disk_mask, DetectorSpec, Mask};
use pget_core::phantom::{sample_assembly, AssemblySpec, Branch, Simulator, Tier};
use pget_core::solver::*;
use pget_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ones(mask: &Mask) -> Vec<f64> {
    mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

fn wedge(mask: &Mask) -> Constraints {
    Constraints::new(mask, 0.2, &ConstraintConfig::default())
}

/// Feasible random iterate in normalized space strictly inside the wedge.
fn random_x(p: &Problem<'_>, rng: &mut impl Rng) -> Vec<f64> {
    let nn = p.n_px() * p.n_px();
    let mut x = vec![0.0; 2 * nn];
    for k in 0..nn {
        if p.constraints.free[k] {
            let b = 0.2 + 0.6 * rng.random::<f64>();
            x[nn + k] = b;
            x[k] = 0.1 + 0.6 * rng.random::<f64>();
        }
    }
    p.constraints.project(&mut x);
    x
}

#[test]
fn objective_trivial_values() {
    let proj = projector(9, 5.0, 8);
    let mask = proj.mask().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y0 = proj.project(&ImagePair::zeros(9, Bounds::default())).unwrap();
    let x = random_x(&Problem::new(&proj, &y0, Bounds::default(), ones(&mask), wedge(&mask)).unwrap(), &mut rng);
    let y = {
        let p0 = Problem::new(&proj, &y0, Bounds::default(), ones(&mask), wedge(&mask)).unwrap();
        proj.project(&p0.to_physical(&x)).unwrap()
    };
    let p = Problem::new(&proj, &y, Bounds::default(), ones(&mask), wedge(&mask)).unwrap();
    assert!(p.eval(&x, (0.0, 0.0)).unwrap().f.abs() < 1e-20);
    let o = p.eval(&vec![0.0; p.n_vars()], (1.0, 1.0)).unwrap();
    let ny = y.norm();
    assert!((o.f * p.sigma * p.sigma - 0.5 * ny * ny).abs() <= 1e-12 * ny * ny);
}

#[test]
fn objective_matches_separate_terms() {
    let proj = projector(9, 5.0, 8);
    let mask = proj.mask().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = add_noise(&proj.project(&random_pair(&mask, &mut rng, 6e5, 0.12)).unwrap(), 0.05, 3);
    let w: Vec<f64> = ones(&mask).iter().map(|v| v * rng.random::<f64>()).collect();
    let p = Problem::new(&proj, &y, Bounds::default(), w.clone(), wedge(&mask)).unwrap();
    let x = random_x(&p, &mut rng);
    let (a1, a2) = (0.7, 0.3);
    let o = p.eval(&x, (a1, a2)).unwrap();
    let u = p.to_physical(&x);
    let fx = proj.project(&u).unwrap();
    let data: f64 = fx.y.iter().zip(y.y.iter()).map(|(a, b)| ((a - b) / p.sigma).powi(2)).sum::<f64>() * 0.5;
    let nn = 81;
    let r1: f64 = (0..nn).map(|k| (w[k] * x[k]).powi(2)).sum::<f64>() * a1;
    let r2: f64 = (0..nn).map(|k| (w[k] * x[nn + k]).powi(2)).sum::<f64>() * a2;
    let f = data + r1 + r2;
    assert!((o.f - f).abs() <= 1e-14 * f, "{} vs {}", o.f, f);
    assert!((o.f - 0.5 * dot(&o.r, &o.r)).abs() <= 1e-14 * f);
}

#[test]
fn eval_rejects_infeasible() {
    let proj = projector(9, 5.0, 4);
    let mask = proj.mask().clone();
    let y = proj.project(&ImagePair::zeros(9, Bounds::default())).unwrap();
    let p = Problem::new(&proj, &y, Bounds::default(), ones(&mask), wedge(&mask)).unwrap();
    let mut x = vec![0.0; p.n_vars()];
    x[40] = 0.9; // high emission without attenuation
    assert!(matches!(p.eval(&x, (1.0, 1.0)), Err(Error::Invalid(_))));
}

#[test]
fn model_identities_and_taylor() {
    let proj = projector(9, 5.0, 12);
    let mask = proj.mask().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = proj.project(&random_pair(&mask, &mut rng, 6e5, 0.12)).unwrap();
    let p = Problem::new(&proj, &y, Bounds::default(), ones(&mask), wedge(&mask)).unwrap();
    let x = random_x(&p, &mut rng);
    let m = p.linearize(&x, (0.5, 0.2)).unwrap();
    assert_eq!(m.model_value(&vec![0.0; p.n_vars()]).unwrap(), m.f());
    assert!((m.f() - p.eval(&x, (0.5, 0.2)).unwrap().f).abs() <= 1e-13 * m.f());
    let dir: Vec<f64> = (0..p.n_vars()).map(|k| if p.constraints.free[k % 81] { rng.random::<f64>() - 0.5 } else { 0.0 }).collect();
    let js = m.jvp(&dir).unwrap();
    let direct: f64 = 0.5 * js.iter().zip(m.residual()).map(|(a, b)| (a + b).powi(2)).sum::<f64>();
    let mv = m.model_value(&dir).unwrap();
    assert!((mv - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    // m(ts) − f(x + ts) = O(t²)
    let mut ratios = Vec::new();
    for e in 2..6 {
        let t = 10f64.powi(-e) * 0.05;
        let s: Vec<f64> = dir.iter().map(|v| v * t).collect();
        let xs: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        let gap = (m.model_value(&s).unwrap() - p.eval(&xs, (0.5, 0.2)).unwrap().f).abs();
        ratios.push(gap / (t * t));
    }
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi < 10.0 * lo.max(1e-12) && hi < 1e8, "{ratios:?}");
}

#[test]
fn gradient_matches_finite_differences() {
    let proj = projector(9, 5.0, 12);
    let mask = proj.mask().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = add_noise(&proj.project(&random_pair(&mask, &mut rng, 6e5, 0.12)).unwrap(), 0.02, 1);
    let p = Problem::new(&proj, &y, Bounds::default(), ones(&mask), wedge(&mask)).unwrap();
    let x = random_x(&p, &mut rng);
    let al = (0.3, 0.6);
    let g = p.linearize(&x, al).unwrap().gradient().unwrap();
    let mut fd = vec![0.0; p.n_vars()];
    let h = 1e-6;
    for k in 0..p.n_vars() {
        if !p.constraints.free[k % 81] {
            continue;
        }
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[k] += h;
        xm[k] -= h;
        fd[k] = (p.eval(&xp, al).unwrap().f - p.eval(&xm, al).unwrap().f) / (2.0 * h);
    }
    let e = rel_err(&g, &fd);
    assert!(e <= 1e-6, "{e}");
}

#[test]
fn sgp_zero_residual_gives_zero_step() {
    let proj = projector(9, 5.0, 8);
    let mask = proj.mask().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y0 = proj.project(&ImagePair::zeros(9, Bounds::default())).unwrap();
    let x = random_x(&Problem::new(&proj, &y0, Bounds::default(), ones(&mask), wedge(&mask)).unwrap(), &mut rng);
    let y = {
        let p0 = Problem::new(&proj, &y0, Bounds::default(), ones(&mask), wedge(&mask)).unwrap();
        proj.project(&p0.to_physical(&x)).unwrap()
    };
    let p = Problem::new(&proj, &y, Bounds::default(), ones(&mask), wedge(&mask)).unwrap();
    let m = p.linearize(&x, (0.0, 0.0)).unwrap();
    let r = sgp_solve(&m, 1.0, 1.0, &InnerConfig::default()).unwrap();
    assert!(r.s.iter().all(|v| *v == 0.0));
    assert_eq!(r.model_decrease, 0.0);
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

#[test]
fn sgp_matches_normal_equations_when_unconstrained() {
    let proj = projector(5, 5.0, 6);
    let mask = proj.mask().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = proj.project(&random_pair(&mask, &mut rng, 6e5, 0.12)).unwrap();
    let p = Problem::new(&proj, &y, Bounds::default(), ones(&mask), Constraints::box_only(&mask)).unwrap();
    let nn = 25;
    let mut x = vec![0.0; 2 * nn];
    for k in 0..nn {
        if p.constraints.free[k] {
            x[k] = 0.5;
            x[nn + k] = 0.5;
        }
    }
    let m = p.linearize(&x, (0.1, 0.1)).unwrap();
    let free: Vec<usize> = (0..2 * nn).filter(|k| p.constraints.free[k % nn]).collect();
    let cols: Vec<Vec<f64>> = free
        .iter()
        .map(|&k| {
            let mut e = vec![0.0; 2 * nn];
            e[k] = 1.0;
            m.jvp(&e).unwrap()
        })
        .collect();
    let g = m.gradient().unwrap();
    let nf = free.len();
    // β big enough that the unconstrained minimizer stays inside the box
    let mut beta = 1e-3;
    let (s_ref, beta) = loop {
        let a: Vec<Vec<f64>> = (0..nf)
            .map(|i| (0..nf).map(|j| dot(&cols[i], &cols[j]) + if i == j { beta } else { 0.0 }).collect())
            .collect();
        let b: Vec<f64> = free.iter().map(|&k| -g[k]).collect();
        let s = solve_dense(a, b);
        if free.iter().zip(&s).all(|(&k, sv)| (0.02..=0.98).contains(&(x[k] + sv))) {
            break (s, beta);
        }
        beta *= 4.0;
    };
    let cfg = InnerConfig { tol: 1e-12, max_inner: 20000, ..InnerConfig::default() };
    let r = sgp_solve(&m, beta, 1e6, &cfg).unwrap();
    let s: Vec<f64> = free.iter().map(|&k| r.s[k]).collect();
    let e = rel_err(&s, &s_ref);
    assert!(e <= 1e-6, "beta {beta}: rel err {e}");
    assert!(r.model_decrease >= r.cauchy_bound(1e6));
}

#[test]
fn sgp_active_box_lands_on_boundary() {
    let proj = projector(9, 5.0, 8);
    let mask = proj.mask().clone();
    let nn = 81;
    // data wants twice the maximal emission
    let mut big = ImagePair::constant(&mask, 2e6, 0.0, Bounds { lambda_max: 4e6, mu_max: 0.2 });
    big.bounds = Bounds::default();
    let y = proj.project(&big).unwrap();
    let p = Problem::new(&proj, &y, Bounds::default(), ones(&mask), Constraints::box_only(&mask)).unwrap();
    let mut x = vec![0.0; 2 * nn];
    for k in 0..nn {
        if p.constraints.free[k] {
            x[k] = 0.9;
        }
    }
    let m = p.linearize(&x, (0.0, 0.0)).unwrap();
    let r = sgp_solve(&m, 1e-6, 1e6, &InnerConfig::default()).unwrap();
    let xs: Vec<f64> = x.iter().zip(&r.s).map(|(a, b)| a + b).collect();
    assert!(p.constraints.is_feasible(&xs, 1e-12));
    let at_bound = (0..nn).filter(|&k| p.constraints.free[k] && (xs[k] - 1.0).abs() < 1e-12).count();
    assert!(at_bound > 0, "no active bound");
    assert!(r.model_decrease > 0.0);
}

fn tiny_mu_problem<'a>(proj: &'a Projector, y: &'a pget_core::Sinogram, mask: &Mask) -> Problem<'a> {
    // μ_max so small that exp(−A) == 1: the residual is affine in λ
    let b = Bounds { lambda_max: 1e6, mu_max: 1e-300 };
    Problem::new(proj, y, b, ones(mask), Constraints::box_only(mask)).unwrap()
}

#[test]
fn linear_toy_gives_unit_rho() {
    let proj = projector(9, 5.0, 8);
    let mask = proj.mask().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut u = random_pair(&mask, &mut rng, 8e5, 0.0);
    u.mu.fill(0.0);
    let y = add_noise(&proj.project(&u).unwrap(), 0.01, 2);
    let p = tiny_mu_problem(&proj, &y, &mask);
    let u0 = ImagePair::constant(&mask, 5e5, 0.0, p.bounds);
    let cfg = SolverConfig::default();
    let mut st = TrustRegionState::initial(&p, &u0, &cfg).unwrap();
    let m = p.linearize(&st.x, st.alphas).unwrap();
    let prop = lm_step(&mut st, &m, &cfg).unwrap();
    assert!(prop.accepted);
    assert!((prop.rho - 1.0).abs() < 1e-9, "rho = {}", prop.rho);
    assert!(prop.f_new < prop.f_old);
    let r = rho(prop.f_old, prop.f_new, prop.model_decrease).unwrap();
    assert_eq!(r, prop.rho);
}

#[test]
fn rho_examples() {
    assert_eq!(rho(3.0, 3.0, 0.5).unwrap(), 0.0);
    assert_eq!(rho(3.0, 2.0, 1.0).unwrap(), 1.0);
    assert!(matches!(rho(3.0, 2.0, 0.0), Err(Error::Stall(_))));
}

#[test]
fn rho_matches_recomputation() {
    let proj = projector(9, 5.0, 8);
    let mask = proj.mask().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y = proj.project(&random_pair(&mask, &mut rng, 6e5, 0.12)).unwrap();
    let p = Problem::new(&proj, &y, Bounds::default(), ones(&mask), wedge(&mask)).unwrap();
    let x = random_x(&p, &mut rng);
    let m = p.linearize(&x, (0.1, 0.1)).unwrap();
    let r = sgp_solve(&m, 1.0, 0.5, &InnerConfig::default()).unwrap();
    let xs: Vec<f64> = x.iter().zip(&r.s).map(|(a, b)| a + b).collect();
    let f1 = p.eval(&xs, (0.1, 0.1)).unwrap().f;
    let dec = m.f() - m.model_value(&r.s).unwrap();
    let direct = (m.f() - f1) / dec;
    let got = rho(m.f(), f1, r.model_decrease).unwrap();
    assert!((got - direct).abs() <= 1e-12 * direct.abs().max(1.0));
}

fn standard_problem_inputs(seed: u64, n_angles: usize) -> (Projector, pget_core::Sinogram, ImagePair, Vec<f64>) {
    let grid = build_grid(33, 5.0).unwrap();
    let det = DetectorSpec::with_angles(&grid, n_angles);
    let spec = AssemblySpec::default();
    let sim = Simulator::new(&grid, &det, 2).unwrap();
    let a = sample_assembly(&spec, &Tier::Standard(Branch::Missing), seed);
    let (truth, y) = sim.simulate(&a, &spec, Bounds::default()).unwrap();
    let y = add_noise(&y, 0.02, seed);
    let proj = Projector::new(build_ray_tables(&grid, &det).unwrap());
    let w = geometry_weights(&grid, &spec, proj.mask());
    (proj, y, truth, w)
}

#[test]
fn lm_solve_basics() {
    let (proj, y, truth, w) = standard_problem_inputs(3, 24);
    let mask = proj.mask().clone();
    let p = Problem::new(&proj, &y, Bounds::default(), w, wedge(&mask)).unwrap();
    let u0 = initial_guess(&mask, Bounds::default());
    let cfg = SolverConfig::default();
    let t0 = lm_solve(&p, &u0, 0, &cfg, None).unwrap();
    assert_eq!(t0.iterates, vec![u0.clone()]);
    let t = lm_solve(&p, &u0, 5, &cfg, Some(&truth)).unwrap();
    assert_eq!(t.iterates.len(), 6);
    for (rec, u) in t.records.iter().zip(&t.iterates).skip(1) {
        assert!(rec.rho > cfg.eta);
        assert!(rec.actual_decrease > 0.0);
        assert!(rec.actual_decrease >= cfg.eta * rec.model_decrease);
        u.validate(&mask).unwrap();
        assert!(p.constraints.is_feasible(&p.to_normalized(u), 1e-12));
    }
    assert!(t.records.last().unwrap().rel_err_lambda.unwrap() < t.records[0].rel_err_lambda.unwrap());
    let log = t.log_text();
    assert_eq!(log.lines().count(), 7);
    assert!(log.starts_with("k\tf\trho\tbeta"));
}

#[test]
fn beta_mostly_non_increasing() {
    let mut good = 0;
    let seeds = 5;
    for seed in 0..seeds {
        let (proj, y, _, w) = standard_problem_inputs(100 + seed, 24);
        let mask = proj.mask().clone();
        let p = Problem::new(&proj, &y, Bounds::default(), w, wedge(&mask)).unwrap();
        let t = lm_solve(&p, &initial_guess(&mask, Bounds::default()), 6, &SolverConfig::default(), None).unwrap();
        let betas: Vec<f64> = t.records.iter().skip(1).map(|r| r.beta).collect();
        if betas.windows(2).all(|w| w[1] <= w[0]) {
            good += 1;
        }
    }
    assert!(good * 10 >= seeds * 8, "{good}/{seeds}");
}

#[test]
fn alpha_schedule() {
    let r = RegularizationConfig::default();
    assert_eq!(r.alphas_at(0), (1.0, 1.0));
    assert_eq!(r.alphas_at(1), (0.2, 0.2));
    assert_eq!(r.alphas_at(3), r.alphas_at(7));
    assert!(RegularizationConfig { alpha1: -1.0, ..r.clone() }.validate().is_err());
}

#[test]
fn geometry_weights_follow_lattice() {
    let g = build_grid(165, 1.0).unwrap();
    let spec = AssemblySpec::default();
    let mask = disk_mask(&g);
    let w = geometry_weights(&g, &spec, &mask);
    let c = 82;
    assert_eq!(w[c * 165 + c], 0.0);
    // near the disk edge, far from the lattice
    assert_eq!(w[c * 165 + 2], 1.0);
    assert_eq!(w[0], 0.0);
    let on = w.iter().filter(|v| **v == 1.0).count();
    assert!(on > 0 && on < mask.count());
}

fn polygon_check(c: &Constraints, a: f64, b: f64) {
    let (pa, pb) = c.project_pixel(a, b);
    let (qa, qb) = c.project_pixel(pa, pb);
    assert!((qa - pa).abs() < 1e-14 && (qb - pb).abs() < 1e-14, "not idempotent");
    // variational inequality against a grid of feasible points
    for i in 0..=20 {
        for j in 0..=20 {
            let (fa, fb) = (i as f64 / 20.0, j as f64 / 20.0);
            if c.project_pixel(fa, fb) != (fa, fb) {
                continue;
            }
            let v = (a - pa) * (fa - pa) + (b - pb) * (fb - pb);
            assert!(v <= 1e-12, "({a},{b}) -> ({pa},{pb}) fails at ({fa},{fb}): {v}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn projection_is_nearest_feasible_point(a in -1.0f64..2.0, b in -1.0f64..2.0) {
        let mask = disk_mask(&build_grid(3, 1.0).unwrap());
        polygon_check(&wedge(&mask), a, b);
        polygon_check(&Constraints::box_only(&mask), a, b);
    }

    #[test]
    fn projected_vectors_are_feasible(seed in 0u64..1000) {
        let mask = disk_mask(&build_grid(9, 1.0).unwrap());
        let c = wedge(&mask);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..162).map(|_| 3.0 * rng.random::<f64>() - 1.0).collect();
        c.project(&mut x);
        prop_assert!(c.is_feasible(&x, 1e-14));
        let mut y = x.clone();
        c.project(&mut y);
        prop_assert_eq!(x, y);
        prop_assert!(c.is_feasible(&vec![0.0; 162], 0.0));
    }
}
