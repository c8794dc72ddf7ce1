use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::bvp::SolverConfig;
use crate::cell::solve_cell;
use crate::coeff::CoefficientModel;
use crate::mesh::{build_grid, build_l_shape, norm_l2, Topology};

fn cube(n: usize) -> GridRef {
    build_grid(3, &[n, n, n], Topology::Bounded, Extent::unit(), None).unwrap()
}

fn square(n: usize) -> GridRef {
    build_grid(2, &[n, n], Topology::Bounded, Extent::unit(), None).unwrap()
}

fn periodic(dims: usize, n: usize) -> GridRef {
    build_grid(dims, &vec![n; dims], Topology::Periodic, Extent::unit(), None).unwrap()
}

fn cell_3d(model: &CoefficientModel, n: usize) -> CellSolution {
    let cfg = SolverConfig::with_tol(1e-11);
    solve_cell(Some(model), model, [0.0; 3], &periodic(3, n), &cfg).unwrap().solution
}

fn cell_2d(model: &CoefficientModel, n: usize) -> CellSolution {
    let cfg = SolverConfig::with_tol(1e-11);
    solve_cell(None, model, [0.0; 3], &periodic(2, n), &cfg).unwrap().solution
}

fn smooth_edge(g: &GridRef) -> DiscreteField {
    let mut u = DiscreteField::from_fn(g, Location::Edge, |c, x| {
        let s = [(PI * x[0]).sin(), (PI * x[1]).sin(), (PI * x[2]).sin()];
        s[(c + 1) % 3] * s[(c + 2) % 3] * (1.0 + x[c])
    });
    mask_inactive(&mut u);
    u
}

#[test]
fn constant_coefficients_give_u0() {
    let g = cube(8);
    let cell = cell_3d(&CoefficientModel::constant_scalar(2.0), 4);
    let u0 = smooth_edge(&g);
    let fo = classical_first_order(&u0, &cell, 0.25, true).unwrap();
    assert!(fo.field_approx.sub(&u0).unwrap().max_abs() < 1e-12);
    let cu = curl(&u0).unwrap();
    let mut cu_m = cu.clone();
    mask_inactive(&mut cu_m);
    assert!(fo.curl_approx.sub(&cu_m).unwrap().max_abs() < 1e-12);
    assert!(fo.pieces.assemble().unwrap().sub(&u0).unwrap().max_abs() < 1e-12);
}

#[test]
fn zero_u0_gives_zero() {
    let g = cube(8);
    let m = CoefficientModel::trig(3.0, 1.0, vec![0, 1]);
    let cell = cell_3d(&m, 4);
    let u0 = DiscreteField::zeros(&g, Location::Edge);
    let fo = classical_first_order(&u0, &cell, 0.5, true).unwrap();
    assert_eq!(fo.field_approx.max_abs(), 0.0);
    assert_eq!(fo.curl_approx.max_abs(), 0.0);
    assert_eq!(fo.pieces.assemble().unwrap().max_abs(), 0.0);
}

#[test]
fn averaged_matches_classical_for_constant_u0() {
    let g = cube(16);
    let m = CoefficientModel::trig(2.0, 1.0, vec![0]);
    let cell = cell_3d(&m, 8);
    let u0 = DiscreteField::constant(&g, Location::Edge, &[0.3, -1.2, 0.7]);
    let classical = classical_first_order(&u0, &cell, 0.5, true).unwrap();
    let p = build_partition(&g, 1.0, 0.5, None).unwrap();
    let av = local_averages(&u0, &curl(&u0).unwrap(), &p).unwrap();
    for v in &av.v {
        assert!((v[0] - 0.3).abs() < 1e-12 && (v[1] + 1.2).abs() < 1e-12 && (v[2] - 0.7).abs() < 1e-12);
    }
    let averaged = averaged_first_order(&u0, &cell, &p, &av, 0.5, None).unwrap();
    let d = averaged.pieces.assemble().unwrap().sub(&classical.pieces.assemble().unwrap()).unwrap();
    assert!(d.max_abs() <= 1e-10, "{}", d.max_abs());
    assert!(averaged.field_approx.sub(&classical.field_approx).unwrap().max_abs() <= 1e-10);
}

#[test]
fn cutoff_ramp_properties() {
    let g = cube(16);
    let c = boundary_cutoff(&g, 0.25).unwrap();
    let tau = c.tau();
    for flat in 0..g.entity_count(Location::Node) {
        let (_, x) = g.entity_position(Location::Node, flat);
        let d = g.distance_to_boundary(&x);
        let v = tau.values()[flat];
        assert!((0.0..=1.0).contains(&v));
        if d >= 0.25 {
            assert_eq!(v, 1.0);
        }
        if d == 0.0 {
            assert_eq!(v, 0.0);
        }
    }
    let gmax = c.scaled_gradient_max();
    assert!(gmax <= 2.0, "{gmax}");
    assert!(matches!(boundary_cutoff(&g, 0.01), Err(Error::Unresolvable { .. })));
}

#[test]
fn cutoff_on_l_shape_is_bounded() {
    let g = build_l_shape(2, &[32, 32], Extent::unit()).unwrap();
    let c = boundary_cutoff(&g, 0.125).unwrap();
    assert!(c.scaled_gradient_max() <= 2.0);
    let act = g.active(Location::Node);
    for (v, a) in c.tau().values().iter().zip(act) {
        if !a {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn cutoff_corrector_has_zero_trace_and_is_idempotent() {
    let g = cube(16);
    let m = CoefficientModel::trig(3.0, 1.0, vec![0, 2]);
    let cell = cell_3d(&m, 4);
    let u0 = smooth_edge(&g);
    let eps = 0.25;
    let fo = classical_first_order(&u0, &cell, eps, true).unwrap();
    let ct = boundary_cutoff(&g, eps).unwrap();
    let once = apply_cutoff(&fo.pieces, &ct).unwrap();
    let twice = apply_cutoff(&once, &ct).unwrap();
    let w1 = once.assemble().unwrap();
    assert_eq!(w1.values(), twice.assemble().unwrap().values());
    for idx in g.boundary_entities(Location::Edge) {
        assert_eq!(w1.values()[idx], 0.0);
    }
    // uncut corrector is nonzero on the boundary, so the zero trace is not vacuous
    let u1 = fo.pieces.assemble().unwrap();
    assert!(g.boundary_entities(Location::Edge).iter().any(|&i| u1.values()[i] != 0.0));
    // away from the boundary the cutoff changes nothing
    for flat in 0..g.entity_count(Location::Edge) {
        let (_, x) = g.entity_position(Location::Edge, flat);
        if g.distance_to_boundary(&x) > eps + 0.1 {
            assert!((w1.values()[flat] - u1.values()[flat]).abs() < 1e-13);
        }
    }
}

#[test]
fn partition_normalization_and_overlap() {
    let g = square(64);
    let p = build_partition(&g, 1.0, 1.0 / 16.0, None).unwrap();
    assert!((p.delta() - 0.25).abs() < 1e-14);
    let (defect, cover) = p.normalization_defect(&g);
    assert!(defect <= 1e-12);
    assert!(cover <= 4);
    let p = build_partition(&g, 2.0 / 3.0, 1.0 / 64.0, None).unwrap();
    assert!((p.exponent() - 0.6).abs() < 1e-14);
    assert!((p.delta() - 64f64.powf(-0.6)).abs() < 1e-14);
    let gc = p.gradient_constant(&g);
    assert!(gc <= 8.0, "{gc}");
    let (defect, cover) = p.normalization_defect(&g);
    assert!(defect <= 1e-12 && cover <= 4);
}

#[test]
fn partition_support_and_gradient_oracle() {
    let g = cube(32);
    let p = build_partition(&g, 0.5, 0.1, None).unwrap();
    let x = [0.31, 0.77, 0.05];
    let w = p.weights_with_gradient(&x);
    assert!(!w.is_empty() && w.len() <= 8);
    for (i, rho, grad) in w {
        let (c, half) = p.cube(i);
        for a in 0..3 {
            assert!((x[a] - c[a]).abs() < half[a]);
        }
        assert!(rho > 0.0);
        // central differences
        let h = 1e-6;
        for a in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += h;
            xm[a] -= h;
            let f = |y: &[f64; 3]| p.weights(y).into_iter().find(|q| q.0 == i).map_or(0.0, |q| q.1);
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - grad[a]).abs() < 1e-5, "{fd} vs {}", grad[a]);
        }
    }
}

#[test]
fn global_partition() {
    let g = square(16);
    let p = build_partition(&g, 0.5, 0.1, Some(0.0)).unwrap();
    assert!(p.is_global());
    assert_eq!(p.len(), 1);
    assert_eq!(p.weights(&[0.3, 0.9, 0.0]), vec![(0, 1.0)]);
    let u = DiscreteField::from_fn(&g, Location::Node, |_, x| x[0]);
    let av = cube_averages(&u, &p).unwrap();
    assert!((av[0][0] - 0.5).abs() < 1e-12);
}

#[test]
fn partition_rejects_unresolved_cubes() {
    let g = square(16);
    assert!(matches!(build_partition(&g, 1.0, 0.01, None), Err(Error::Unresolvable { .. })));
    assert!(build_partition(&g, 0.0, 0.1, None).is_err());
    assert!(build_partition(&g, 0.5, 1.5, None).is_err());
}

#[test]
fn averages_of_constant_and_linear_fields() {
    let g = square(64);
    let p = build_partition(&g, 1.0, 1.0 / 16.0, None).unwrap();
    let c = DiscreteField::constant(&g, Location::Node, &[2.5]);
    for v in cube_averages(&c, &p).unwrap() {
        assert_eq!(v[0], 2.5);
    }
    let lin = DiscreteField::from_fn(&g, Location::Node, |_, x| x[0]);
    let av = cube_averages(&lin, &p).unwrap();
    let mut interior = 0;
    for (i, v) in av.iter().enumerate() {
        let (c, half) = p.cube(i);
        if c[0] - half[0] >= 0.0 && c[0] + half[0] <= 1.0 && c[1] - half[1] >= 0.0 && c[1] + half[1] <= 1.0 {
            interior += 1;
            assert!((v[0] - c[0]).abs() < 1e-12, "{} vs {}", v[0], c[0]);
        }
    }
    assert!(interior > 0);
}

#[test]
fn averages_of_smooth_field_are_second_order() {
    let f = |x: &[f64; 3]| (2.0 * x[0]).sin() * (1.5 * x[1]).cos();
    let mut ratios = vec![];
    for eps in [1.0 / 8.0, 1.0 / 32.0] {
        let g = square(256);
        let p = build_partition(&g, 1.0, eps, None).unwrap();
        let u = DiscreteField::from_fn(&g, Location::Node, |_, x| f(&x));
        let av = cube_averages(&u, &p).unwrap();
        let mut worst: f64 = 0.0;
        for (i, v) in av.iter().enumerate() {
            let (c, half) = p.cube(i);
            if c[0] - half[0] < 0.0 || c[0] + half[0] > 1.0 || c[1] - half[1] < 0.0 || c[1] + half[1] > 1.0 {
                continue;
            }
            worst = worst.max((v[0] - f(&c)).abs());
        }
        ratios.push(worst / p.delta().powi(2));
    }
    // |f''| <= 4 and the Taylor remainder of a cube average is |f''| delta^2 / 24 per axis
    for r in ratios {
        assert!(r <= 4.0 / 12.0, "{r}");
    }
}

#[test]
fn reflection_lands_in_region() {
    let g = build_l_shape(2, &[16, 16], Extent::unit()).unwrap();
    for x in [[1.2, 0.3, 0.0], [-0.1, -0.4, 0.0], [0.9, 0.6, 0.0], [0.55, 0.95, 0.0], [2.7, 0.1, 0.0]] {
        let y = reflect_into(&g, &x);
        assert!(g.contains_point(&y), "{x:?} -> {y:?}");
    }
    let b = square(8);
    assert_eq!(reflect_into(&b, &[1.25, -0.25, 0.0]), [0.75, 0.25, 0.0]);
}

#[test]
fn interpolation_constant_is_stable() {
    // ||phi - sum_j avg_j rho_j|| <= C delta ||phi||_H1 with C independent of eps
    let g = square(256);
    let phi = DiscreteField::from_fn(&g, Location::Node, |_, x| (PI * x[0]).sin() * (2.0 * PI * x[1]).sin());
    let h1 = (norm_l2(&phi).powi(2) + norm_l2(&grad(&phi).unwrap()).powi(2)).sqrt();
    let mut cs = vec![];
    for eps in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
        let p = build_partition(&g, 1.0, eps, None).unwrap();
        let av = cube_averages(&phi, &p).unwrap();
        let blended = DiscreteField::from_fn(&g, Location::Node, |_, x| p.blend(&av, &x)[0]);
        let e = norm_l2(&phi.sub(&blended).unwrap());
        cs.push(e / (p.delta() * h1));
    }
    let (lo, hi) = cs.iter().fold((f64::MAX, 0.0f64), |a, &c| (a.0.min(c), a.1.max(c)));
    assert!(hi / lo < 2.0, "{cs:?}");
}

#[test]
fn averaged_tends_to_classical_as_cubes_shrink() {
    let g = square(128);
    let m = CoefficientModel::trig(3.0, 1.0, vec![0, 1]);
    let eps = 1.0 / 8.0;
    let cell = cell_2d(&m, 16);
    let u0 = DiscreteField::from_fn(&g, Location::Node, |_, x| (PI * x[0]).sin() * (PI * x[1]).sin());
    let classical = classical_first_order_elliptic(&u0, &cell, eps, true).unwrap();
    let mut diffs = vec![];
    for t in [0.25, 0.5, 0.75, 1.0, 1.5] {
        let p = build_partition(&g, 1.0, eps, Some(t)).unwrap();
        let av = local_gradient_averages(&u0, &p).unwrap();
        let a = averaged_first_order_elliptic(&u0, &cell, &p, &av, eps, None).unwrap();
        diffs.push(norm_l2(&a.grad_approx.sub(&classical.grad_approx).unwrap()));
    }
    for w in diffs.windows(2) {
        assert!(w[1] < w[0], "{diffs:?}");
    }
    assert!(diffs[4] < 0.1 * diffs[0], "{diffs:?}");
}

#[test]
fn elliptic_cutoff_vanishes_on_boundary() {
    let g = build_l_shape(2, &[64, 64], Extent::unit()).unwrap();
    let m = CoefficientModel::laminate(0, [1.0, 4.0]);
    let eps = 1.0 / 8.0;
    let cell = cell_2d(&m, 8);
    let u0 = DiscreteField::from_fn(&g, Location::Node, |_, x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]));
    let mut u0 = u0;
    mask_inactive(&mut u0);
    let p = build_partition(&g, 2.0 / 3.0, eps, None).unwrap();
    let av = local_gradient_averages(&u0, &p).unwrap();
    let ct = boundary_cutoff(&g, eps).unwrap();
    let fo = averaged_first_order_elliptic(&u0, &cell, &p, &av, eps, Some(&ct)).unwrap();
    let w1 = fo.pieces.assemble().unwrap();
    for (v, a) in w1.values().iter().zip(g.active(Location::Node)) {
        if !a {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn mismatched_inputs_rejected() {
    let g = square(16);
    let m = CoefficientModel::trig(2.0, 1.0, vec![0]);
    let cell = cell_3d(&m, 4);
    let u0 = DiscreteField::zeros(&g, Location::Node);
    assert!(classical_first_order_elliptic(&u0, &cell, 0.25, true).is_err());
    let cell2 = cell_2d(&m, 4);
    assert!(matches!(classical_first_order_elliptic(&u0, &cell2, 0.01, true), Err(Error::Unresolvable { .. })));
    let p = build_partition(&g, 1.0, 0.25, None).unwrap();
    let bad = LocalAverages { u: vec![[0.0; 3]; 2], v: vec![[0.0; 3]; 2] };
    assert!(averaged_first_order_elliptic(&u0, &cell2, &p, &bad, 0.25, None).is_err());
    let u_edge = DiscreteField::zeros(&g, Location::Edge);
    assert!(classical_first_order_elliptic(&u_edge, &cell2, 0.25, true).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_sums_to_one(s in 0.1f64..1.0, k in 3u32..6, x0 in 0.0f64..1.0, x1 in 0.0f64..1.0, x2 in 0.0f64..1.0) {
        static GRID: std::sync::OnceLock<GridRef> = std::sync::OnceLock::new();
        let g = GRID.get_or_init(|| cube(128));
        let eps = 0.5f64.powi(k as i32);
        let p = build_partition(g, s, eps, None).unwrap();
        let w = p.weights(&[x0, x1, x2]);
        let total: f64 = w.iter().map(|q| q.1).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(w.len() <= 8);
        prop_assert!(w.iter().all(|q| q.1 >= 0.0 && q.1 <= 1.0));
    }
}
