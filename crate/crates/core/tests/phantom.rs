use ndarray::Array2;
use pget_core::forward::Bounds;
use pget_core::geometry::{build_grid, disk_mask, DetectorSpec};
use pget_core::phantom::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn standard_branches() {
    let spec = AssemblySpec::default();
    for seed in 0..50 {
        let a = sample_assembly(&spec, &Tier::Standard(Branch::AllPresent), seed);
        assert_eq!(a.rods.len(), 81);
        assert_eq!(a.count(RodState::Present), 81);
        let m = sample_assembly(&spec, &Tier::Standard(Branch::Missing), seed);
        assert!((1..=6).contains(&m.count(RodState::Missing)));
        assert_eq!(m.count(RodState::Replaced), 0);
        let r = sample_assembly(&spec, &Tier::Standard(Branch::Replaced), seed);
        assert!((5..=6).contains(&r.count(RodState::Replaced)));
        for rod in a.rods.iter().chain(&m.rods).chain(&r.rods) {
            match rod.state {
                RodState::Present => {
                    assert!((6.5e5..=7e5).contains(&rod.emission));
                    assert!((0.12..=0.14).contains(&rod.attenuation));
                }
                RodState::Missing => {
                    assert_eq!(rod.emission, 0.0);
                    assert_eq!(rod.attenuation, 0.0085);
                }
                RodState::Replaced => {
                    assert_eq!(rod.emission, 0.0);
                    assert!((0.12..=0.14).contains(&rod.attenuation));
                }
            }
        }
    }
}

#[test]
fn zero_jitter_gives_lattice() {
    let spec = AssemblySpec { position_jitter_sigma: 0.0, ..Default::default() };
    let a = sample_assembly(&spec, &Tier::Standard(Branch::AllPresent), 5);
    for (k, rod) in a.rods.iter().enumerate() {
        assert_eq!(rod.center, spec.lattice_center(k / 9, k % 9));
    }
}

#[test]
fn medium_and_hard_value_floors() {
    let spec = AssemblySpec::default();
    let (mut min_e, mut min_a) = (f64::INFINITY, f64::INFINITY);
    for seed in 0..1000 {
        let a = sample_assembly(&spec, &Tier::Medium, seed);
        let changed = 81 - a.count(RodState::Present);
        assert!((1..=20).contains(&changed));
        for rod in &a.rods {
            match rod.state {
                RodState::Present => {
                    min_e = min_e.min(rod.emission);
                    assert!((0.12..=0.14).contains(&rod.attenuation));
                }
                RodState::Replaced => min_a = min_a.min(rod.attenuation),
                RodState::Missing => {}
            }
        }
    }
    assert!(min_e >= 0.7 * 7e5 && min_e < 6.5e5, "{min_e}");
    assert!(min_a >= 0.7 * 0.14 && min_a < 0.12, "{min_a}");
    for seed in 0..100 {
        let a = sample_assembly(&spec, &Tier::Hard, seed);
        assert!((10..=30).contains(&(81 - a.count(RodState::Present))));
    }
}

#[test]
fn tier_names() {
    assert!(Tier::parse("standard:missing").is_ok());
    assert!(matches!(Tier::parse("extreme:3").unwrap(), Tier::Extreme(_)));
    assert!(Tier::parse("nightmare").is_err());
    assert!(Tier::parse("extreme:9").is_err());
    let layouts = extreme_layouts();
    assert_eq!(layouts.len(), 4);
    let spec = AssemblySpec::default();
    let a = sample_assembly(&spec, &Tier::Extreme(layouts[0].clone()), 1);
    let states: Vec<RodState> = a.rods.iter().map(|r| r.state).collect();
    assert_eq!(states, layouts[0].0);
    assert!(Layout::parse("PPP").is_err());
}

#[test]
fn empty_assembly_is_water() {
    let grid = build_grid(33, 5.0).unwrap();
    let spec = AssemblySpec::default();
    let mut a = sample_assembly(&spec, &Tier::Standard(Branch::AllPresent), 1);
    for rod in a.rods.iter_mut() {
        rod.state = RodState::Missing;
    }
    let mask = disk_mask(&grid);
    let u = rasterize(&a, &spec, &grid, 1).unwrap();
    for ((l, m), &inside) in u.lambda.iter().zip(u.mu.iter()).zip(mask.data.iter()) {
        assert_eq!(*l, 0.0);
        assert_eq!(*m, if inside { 0.0085 } else { 0.0 });
    }
}

#[test]
fn total_emission_matches_rod_area() {
    let grid = build_grid(165, 1.0).unwrap();
    let spec = AssemblySpec::default();
    let a = sample_assembly(&spec, &Tier::Standard(Branch::Missing), 3);
    let u = rasterize(&a, &spec, &grid, 2).unwrap();
    let total: f64 = u.lambda.sum() * grid.pixel_size.powi(2);
    let expect: f64 = a
        .rods
        .iter()
        .filter(|r| r.state == RodState::Present)
        .map(|r| r.emission * std::f64::consts::PI * spec.rod_radius.powi(2))
        .sum();
    assert!((total - expect).abs() <= 0.02 * expect, "{total} vs {expect}");
    assert!(u.lambda.iter().all(|&v| v <= 7e5));
}

#[test]
fn supersampling_changes_only_boundaries() {
    let grid = build_grid(33, 5.0).unwrap();
    let spec = AssemblySpec::default();
    let a = sample_assembly(&spec, &Tier::Standard(Branch::Replaced), 8);
    let u1 = rasterize(&a, &spec, &grid, 1).unwrap();
    let u4 = rasterize(&a, &spec, &grid, 4).unwrap();
    let h = grid.pixel_size;
    let mut interior = 0;
    for i in 0..33 {
        for j in 0..33 {
            let (x, y) = grid.pixel_center(i, j);
            let corners = [(x - h / 2.0, y - h / 2.0), (x + h / 2.0, y - h / 2.0), (x - h / 2.0, y + h / 2.0), (x + h / 2.0, y + h / 2.0)];
            if corners.iter().any(|c| c.0.hypot(c.1) > grid.r_domain) {
                continue;
            }
            let mut boundary = false;
            for rod in a.rods.iter().filter(|r| r.state != RodState::Missing) {
                let inside: Vec<bool> = corners.iter().map(|c| (c.0 - rod.center.0).hypot(c.1 - rod.center.1) <= spec.rod_radius).collect();
                // closest point of the square to the rod centre
                let cx = rod.center.0.clamp(x - h / 2.0, x + h / 2.0);
                let cy = rod.center.1.clamp(y - h / 2.0, y + h / 2.0);
                let touches = (cx - rod.center.0).hypot(cy - rod.center.1) <= spec.rod_radius;
                if touches && !inside.iter().all(|&b| b) {
                    boundary = true;
                }
            }
            if !boundary {
                interior += 1;
                assert!((u1.lambda[[i, j]] - u4.lambda[[i, j]]).abs() <= 1e-14 * 7e5, "pixel {i} {j}");
                assert!((u1.mu[[i, j]] - u4.mu[[i, j]]).abs() < 1e-15);
            }
        }
    }
    assert!(interior > 100);
}

#[test]
fn rods_outside_disk_rejected() {
    let grid = build_grid(33, 5.0).unwrap();
    let spec = AssemblySpec { rod_pitch: 14.0, ..Default::default() };
    let a = sample_assembly(&spec, &Tier::Standard(Branch::AllPresent), 1);
    assert!(rasterize(&a, &spec, &grid, 2).is_err());
    assert!(spec.validate(&grid).is_ok());
    let tight = AssemblySpec { rod_pitch: 18.0, ..Default::default() };
    assert!(tight.validate(&grid).is_err());
}

#[test]
fn rotation_pair_uses_one_angle() {
    let n = 33;
    let mut marker = Array2::zeros((n, n));
    marker[[4, 20]] = 1.0;
    let mut inputs = vec![marker.clone(), marker.clone(), Array2::zeros((n, n)), Array2::zeros((n, n))];
    let mut target = pget_core::ImagePair { lambda: marker.clone(), mu: marker.clone(), bounds: Bounds::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let mut x = inputs.clone();
        let mut t = target.clone();
        let phi = random_rotation_pair(&mut x, &mut t, &mut rng);
        assert!(phi.abs() <= 5f64.to_radians() + 1e-15);
        assert_eq!(x[0], t.lambda);
        assert_eq!(x[1], t.mu);
    }
    let before = inputs.clone();
    rotate_pair_by(&mut inputs, &mut target, 0.0);
    assert_eq!(inputs, before);
}

#[test]
fn small_dataset_is_deterministic_and_consistent() {
    let grid = build_grid(17, 10.0).unwrap();
    let det = DetectorSpec::with_angles(&grid, 16);
    let spec = AssemblySpec { rod_pitch: 12.5, rod_radius: 5.5, ..Default::default() };
    let mut cfg = DatasetConfig::new(grid, det.clone(), TierPlan::small(12, 2), 99);
    cfg.assembly = spec;
    cfg.plan.medium = 2;
    cfg.plan.hard = 1;
    cfg.plan.extreme = true;
    let a = build_dataset(&cfg).unwrap();
    let b = build_dataset(&cfg).unwrap();
    assert_eq!(a.samples.len(), 12 + 2 + 1 + 4);
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let m1 = write_dataset(&a, d1.path()).unwrap();
    let m2 = write_dataset(&b, d2.path()).unwrap();
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    for s in &a.samples {
        assert_eq!(std::fs::read(d1.path().join(&s.meta.sino)).unwrap(), std::fs::read(d2.path().join(&s.meta.sino)).unwrap());
    }
    let man = read_manifest(&m1).unwrap();
    assert_eq!(man.config, cfg);
    assert_eq!(man.samples.len(), a.samples.len());
    assert_eq!(man.split(Split::Validation).count(), 2);
    assert_eq!(man.split(Split::Test).count(), 5);
    let s0 = &man.samples[3];
    let truth = man.load_truth(s0).unwrap();
    assert_eq!(truth, a.samples[3].truth);
    assert_eq!(man.load_sino(s0).unwrap(), a.samples[3].sino);
    // a different master seed changes the data
    let mut other = cfg.clone();
    other.master_seed = 100;
    let c = build_dataset(&other).unwrap();
    assert_ne!(c.samples[0].sino, a.samples[0].sino);
}
