use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::energy::{MaterialParams, SdfCollider, TermSet};

fn elastic() -> TermSet {
    TermSet::elastic()
}

/// Grid with interior vertices displaced, boundary pinned; coordinates are
/// multiples of 2^-20 so translations by dyadic offsets are exact.
fn wrinkled(q: usize, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = Mesh::grid(q, q, 0.5);
    let boundary = mesh.boundary_mask();
    for (p, &b) in mesh.positions.iter_mut().zip(&boundary) {
        if !b {
            for c in p.iter_mut() {
                *c += rng.gen_range(-0.08..0.08);
            }
        }
        for c in p.iter_mut() {
            *c = (*c * 1048576.0).round() / 1048576.0;
        }
    }
    mesh.with_pinned(boundary).unwrap()
}

fn small_model(seed: u64) -> NeuralIntegrator {
    let net = GraphNetConfig { latent: 12, iterations: 2, ..GraphNetConfig::new(1, 1) };
    let scales = FeatureScales { length: 0.5, force: 10.0, displacement: 0.01 };
    NeuralIntegrator::init(net, 3, scales, seed).unwrap()
}

#[test]
fn fresh_rollout_has_zero_differences_and_repeated_forces() {
    let x0 = vec![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]];
    let f0 = vec![[1.0, -1.0, 0.5], [0.0, 2.0, 0.0]];
    let state = RolloutState::new(x0, f0.clone(), 3);
    let v = build_node_features(&state, &FeatureScales::default());
    assert_eq!(v.shape(), (2, 18));
    for i in 0..2 {
        assert!(v.row(i)[..9].iter().all(|&d| d == 0.0));
        for j in 0..3 {
            assert_eq!(&v.row(i)[9 + 3 * j..12 + 3 * j], &f0[i]);
        }
    }
}

#[test]
fn node_feature_ordering_follows_history() {
    let mut state = RolloutState::new(vec![[0.0; 3]], vec![[0.0; 3]], 2);
    state.push(vec![[1.0, 0.0, 0.0]], vec![[0.0, 1.0, 0.0]]);
    state.push(vec![[3.0, 0.0, 0.0]], vec![[0.0, 2.0, 0.0]]);
    let v = build_node_features(&state, &FeatureScales { length: 2.0, force: 4.0, displacement: 1.0 });
    // X^1 - X^2, X^0 - X^1, then F^2, F^1
    assert_eq!(v.row(0), &[-1.0, 0.0, 0.0, -0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.25, 0.0]);
    assert_eq!(state.iteration(), 2);
}

#[test]
fn edge_features_at_rest_repeat_and_measure_lengths() {
    let mesh = Mesh::from_positions(vec![[0.0, 0.0, 0.0], [3.0, 4.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
    let e = build_edge_features(&mesh, &mesh.positions, &FeatureScales::default());
    assert_eq!(e.shape(), (6, 8));
    for r in 0..6 {
        assert_eq!(e.row(r)[..4], e.row(r)[4..]);
    }
    // mesh edge 0 is (0, 1); directed edge 0 runs 0 → 1
    assert_eq!(&e.row(0)[..4], &[3.0, 4.0, 0.0, 5.0]);
    assert_eq!(&e.row(1)[..4], &[-3.0, -4.0, 0.0, 5.0]);
}

#[test]
fn features_are_translation_invariant_bit_exact() {
    let mesh = wrinkled(4, 3);
    let t = [0.375, -1.25, 2.5];
    let shift = |x: &[[f64; 3]]| -> Vec<[f64; 3]> { x.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect() };
    let scales = FeatureScales { length: 0.5, force: 3.0, displacement: 1.0 };
    let e = build_edge_features(&mesh, &mesh.positions, &scales);
    let e2 = build_edge_features(&mesh, &shift(&mesh.positions), &scales);
    assert_eq!(e, e2);

    let set = PotentialSet::new(&mesh, &MaterialParams::default(), None, elastic()).unwrap();
    let f0 = set.evaluate(&mesh.positions).unwrap().masked_forces();
    let mut a = RolloutState::new(mesh.positions.clone(), f0.clone(), 3);
    let mut b = RolloutState::new(shift(&mesh.positions), f0.clone(), 3);
    let x1: Vec<[f64; 3]> = mesh.positions.iter().map(|p| [p[0] + 0.125, p[1], p[2] - 0.0625]).collect();
    a.push(x1.clone(), f0.clone());
    b.push(shift(&x1), f0);
    assert_eq!(build_node_features(&a, &scales), build_node_features(&b, &scales));
}

#[test]
fn zero_network_is_identity_rollout() {
    let mesh = wrinkled(3, 1);
    let mut model = small_model(1);
    model.weights = GraphNetWeights::zeros(&model.weights.config()).unwrap();
    let set = PotentialSet::new(&mesh, &MaterialParams::default(), None, elastic()).unwrap();
    let report = neural_solve(&mesh, &set, &model, 5).unwrap();
    assert_eq!(report.positions, mesh.positions);
    assert_eq!(report.potentials.len(), 6);
    assert!(report.potentials.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn decoder_bias_moves_only_free_vertices() {
    let mesh = wrinkled(3, 2);
    let mut model = small_model(1);
    model.weights = GraphNetWeights::zeros(&model.weights.config()).unwrap();
    model.weights.decoder.layers.last_mut().unwrap().bias = Tensor::row_vector(vec![1.0, 2.0, -1.0]);
    let set = PotentialSet::new(&mesh, &MaterialParams::default(), None, elastic()).unwrap();
    let report = neural_solve(&mesh, &set, &model, 2).unwrap();
    for (i, (p, q)) in report.positions.iter().zip(&mesh.positions).enumerate() {
        if mesh.pinned()[i] {
            assert_eq!(p, q);
        } else {
            assert!((p[1] - q[1] - 0.04).abs() < 1e-12);
        }
    }
}

#[test]
fn neural_solve_is_translation_equivariant() {
    let mesh = wrinkled(4, 5);
    let model = small_model(7);
    let params = MaterialParams { collision_margin: 0.0, ..Default::default() };
    let sphere = SdfCollider::sphere([1.0, 1.0, -0.75], 1.0);
    let terms = TermSet::all();
    let set = PotentialSet::new(&mesh, &params, Some(&sphere), terms).unwrap();
    let base = neural_solve(&mesh, &set, &model, 5).unwrap();

    let t = [0.5, -0.25, 1.75];
    let mut moved = mesh.clone();
    moved.translate(t);
    let set2 = PotentialSet::new(&moved, &params, Some(&sphere.translated(t)), terms).unwrap();
    let shifted = neural_solve(&moved, &set2, &model, 5).unwrap();
    for (p, q) in base.positions.iter().zip(&shifted.positions) {
        for c in 0..3 {
            assert!((p[c] + t[c] - q[c]).abs() < 1e-12, "{p:?} vs {q:?}");
        }
    }
    // gravity adds a constant under vertical translation
    for (a, b) in base.potentials.iter().zip(&shifted.potentials) {
        let (da, db) = (a - base.potentials[0], b - shifted.potentials[0]);
        assert!((da - db).abs() <= 1e-8 * base.potentials[0].abs(), "{da} vs {db}");
    }
}

#[test]
fn pinned_vertices_never_move_in_any_solver() {
    let mesh = wrinkled(4, 8);
    let set = PotentialSet::new(&mesh, &MaterialParams::default(), None, elastic()).unwrap();
    let reports = [
        neural_solve(&mesh, &set, &small_model(3), 5).unwrap(),
        gd_solve(&mesh, &set, 1e-3, 5).unwrap(),
        adam_solve(&mesh, &set, AdamParams::with_lr(1e-2), 5).unwrap(),
    ];
    for r in &reports {
        assert_eq!(r.potentials.len(), r.iterations + 1);
        assert!(r.potentials.iter().all(|p| p.is_finite()));
        for (i, (p, q)) in r.positions.iter().zip(&mesh.positions).enumerate() {
            if mesh.pinned()[i] {
                assert_eq!(p, q, "{} moved pinned vertex {i}", r.method);
            }
        }
    }
}

/// One free vertex tied to two pinned ones.
fn single_free_vertex() -> Mesh {
    let rest = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.8, 0.0]];
    let mut pos = rest.clone();
    pos[2] = [0.6, 1.1, 0.1];
    let mut mesh = Mesh::new(pos, rest, vec![[0, 1, 2]]).unwrap();
    mesh.set_pinned(vec![true, true, false]).unwrap();
    mesh
}

#[test]
fn gd_single_spring_decreases_strictly() {
    let mesh = single_free_vertex();
    let params = MaterialParams { stretch_stiffness: 1.0, ..Default::default() };
    let set = PotentialSet::new(&mesh, &params, None, TermSet::empty().with(Term::Stretch)).unwrap();
    let report = gd_solve(&mesh, &set, 0.1, 20).unwrap();
    assert!(!report.diverged);
    assert!(report.potentials.windows(2).all(|w| w[1] < w[0]), "{:?}", report.potentials);
}

#[test]
fn gd_zero_lr_and_fixed_point() {
    let mesh = wrinkled(3, 4);
    let set = PotentialSet::new(&mesh, &MaterialParams::default(), None, elastic()).unwrap();
    assert_eq!(gd_solve(&mesh, &set, 0.0, 3).unwrap().positions, mesh.positions);
    let rest = Mesh::grid(3, 3, 0.5);
    let set = PotentialSet::new(&rest, &MaterialParams::default(), None, elastic()).unwrap();
    assert_eq!(gd_solve(&rest, &set, 0.1, 3).unwrap().positions, rest.positions);
    assert_eq!(adam_solve(&rest, &set, AdamParams::default(), 3).unwrap().positions, rest.positions);
    assert!(gd_solve(&rest, &set, -1.0, 3).is_err());
}

#[test]
fn gd_below_stability_limit_is_monotone() {
    let mesh = wrinkled(4, 9);
    let params = MaterialParams::default();
    let set = PotentialSet::new(&mesh, &params, None, TermSet::empty().with(Term::Stretch)).unwrap();
    // largest Hessian eigenvalue by power iteration on finite-difference
    // Hessian-vector products
    let free = |v: &mut Vec<[f64; 3]>| {
        for (p, &pin) in v.iter_mut().zip(mesh.pinned()) {
            if pin {
                *p = [0.0; 3];
            }
        }
    };
    let hv = |v: &[[f64; 3]]| -> Vec<[f64; 3]> {
        let h = 1e-6;
        let a: Vec<[f64; 3]> = mesh.positions.iter().zip(v).map(|(p, d)| [p[0] + h * d[0], p[1] + h * d[1], p[2] + h * d[2]]).collect();
        let b: Vec<[f64; 3]> = mesh.positions.iter().zip(v).map(|(p, d)| [p[0] - h * d[0], p[1] - h * d[1], p[2] - h * d[2]]).collect();
        let fa = set.evaluate(&a).unwrap().forces;
        let fb = set.evaluate(&b).unwrap().forces;
        fa.iter().zip(&fb).map(|(x, y)| [-(x[0] - y[0]) / (2.0 * h), -(x[1] - y[1]) / (2.0 * h), -(x[2] - y[2]) / (2.0 * h)]).collect()
    };
    let norm = |v: &[[f64; 3]]| v.iter().flat_map(|p| p.iter()).map(|x| x * x).sum::<f64>().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut v: Vec<[f64; 3]> = (0..mesh.num_vertices()).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    free(&mut v);
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut w = hv(&v);
        free(&mut w);
        lambda = norm(&w) / norm(&v);
        let n = norm(&w);
        v = w.iter().map(|p| [p[0] / n, p[1] / n, p[2] / n]).collect();
    }
    let report = gd_solve(&mesh, &set, 1.0 / lambda, 30).unwrap();
    assert!(report.potentials.windows(2).all(|w| w[1] <= w[0]), "{:?}", report.potentials);
    assert!(report.final_potential() < report.initial_potential());
}

#[test]
fn adam_first_step_is_bounded_by_lr() {
    let mesh = wrinkled(3, 6);
    let set = PotentialSet::new(&mesh, &MaterialParams::default(), None, elastic()).unwrap();
    let lr = 1e-3;
    let report = adam_solve(&mesh, &set, AdamParams::with_lr(lr), 1).unwrap();
    for (p, q) in report.positions.iter().zip(&mesh.positions) {
        for c in 0..3 {
            assert!((p[c] - q[c]).abs() <= lr * (1.0 + 1e-9));
        }
    }
}

#[test]
fn divergence_is_flagged_not_raised() {
    let mesh = wrinkled(4, 2);
    let set = PotentialSet::new(&mesh, &MaterialParams::default(), None, elastic()).unwrap();
    let report = gd_solve(&mesh, &set, 10.0, 50).unwrap();
    assert!(report.diverged);
    assert!(report.iterations < 50);
    assert_eq!(report.potentials.len(), report.iterations + 1);
    assert_eq!(report.potential_at(5), f64::INFINITY);
}

#[test]
fn csv_has_one_row_per_state() {
    let mesh = wrinkled(3, 1);
    let set = PotentialSet::new(&mesh, &MaterialParams::default(), None, elastic()).unwrap();
    let report = gd_solve(&mesh, &set, 1e-3, 4).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,potential,stretch,bend,gravity,contact,self");
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("4,"));
}

#[test]
fn width_mismatch_between_model_and_history() {
    let mut model = small_model(1);
    model.history = 2;
    assert!(model.validate().is_err());
    let mesh = wrinkled(3, 1);
    let set = PotentialSet::new(&mesh, &MaterialParams::default(), None, elastic()).unwrap();
    assert!(neural_solve(&mesh, &set, &model, 5).is_err());
    assert!(neural_solve(&mesh, &set, &small_model(1), 0).is_err());
}
