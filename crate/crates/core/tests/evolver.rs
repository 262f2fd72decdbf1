mod common;

use common::{k2, random_connected, random_tree, rng};
use nalgebra::{DMatrix, DVector};
use pamtree::evolver::{evolve, growth_curve, log_total_mass, total_mass, Method};
use pamtree::graph::{ball, regular_tree, sample_gw_tree, OffspringLaw, RootedGraph};
use pamtree::potential::sample_potential;
use pamtree::spectral::{full_spectrum, principal_eigenpair, DirichletWindow};
use proptest::prelude::*;
use rand::Rng;

const METHODS: [Method; 3] = [Method::Uniformization, Method::RungeKutta, Method::Spectral];

/// `M^T` on the window, built from the definition.
fn adjoint(g: &RootedGraph, window: &[usize], q: &[f64]) -> DMatrix<f64> {
    let n = window.len();
    DMatrix::from_fn(n, n, |i, j| {
        let (x, y) = (window[i], window[j]);
        if i == j {
            q[x] - 1.0
        } else if g.has_edge(x, y) {
            1.0 / g.degree(y) as f64
        } else {
            0.0
        }
    })
}

/// Classical fixed-step RK4 for `u' = M^T u`, `u(0) = delta_y`.
fn rk4_row(g: &RootedGraph, window: &[usize], q: &[f64], y: usize, t: f64, steps: usize) -> Vec<f64> {
    let a = adjoint(g, window, q);
    let mut u = DVector::zeros(window.len());
    u[window.iter().position(|&v| v == y).unwrap()] = 1.0;
    let h = t / steps as f64;
    for _ in 0..steps {
        let k1 = &a * &u;
        let k2 = &a * (&u + &k1 * (h / 2.0));
        let k3 = &a * (&u + &k2 * (h / 2.0));
        let k4 = &a * (&u + &k3 * h);
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    u.iter().copied().collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    max_abs(&d) / max_abs(b)
}

fn random_q(n: usize, hi: f64, r: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(0.0..hi)).collect()
}

#[test]
fn time_zero_is_a_point_mass() {
    let g = regular_tree(3, 2).unwrap();
    let w = DirichletWindow::whole(&g);
    let q = vec![0.4; g.n()];
    for m in METHODS {
        let u = evolve(&w, &q, 3, 0.0, m).unwrap();
        for (i, &v) in w.vertices().iter().enumerate() {
            assert_eq!(u[i], if v == 3 { 1.0 } else { 0.0 });
        }
    }
    assert!(evolve(&w, &q, 3, -1.0, Method::Spectral).is_err());
    assert!(evolve(&w, &q, 3, f64::NAN, Method::RungeKutta).is_err());
}

#[test]
fn mass_is_conserved_without_boundary() {
    let g = random_tree(25, &mut rng(3));
    let w = DirichletWindow::whole(&g);
    let q = vec![0.0; g.n()];
    for t in [0.5, 3.0, 20.0] {
        for m in METHODS {
            assert!((total_mass(&w, &q, 7, t, m).unwrap() - 1.0).abs() < 1e-9, "{m:?} at t = {t}");
        }
    }
}

#[test]
fn constant_potential_grows_exponentially() {
    let g = random_tree(20, &mut rng(4));
    let w = DirichletWindow::whole(&g);
    let c = 0.7;
    let q = vec![c; g.n()];
    for t in [1.0, 5.0, 40.0] {
        assert!((log_total_mass(&w, &q, 2, t).unwrap() - c * t).abs() < 1e-9);
    }
    for (t, v) in growth_curve(&w, &q, 0, &[1.0, 2.0, 10.0, 100.0]).unwrap() {
        assert!((v - c).abs() < 1e-10, "t = {t}");
    }
}

#[test]
fn two_vertex_closed_form() {
    let g = k2();
    let w = DirichletWindow::whole(&g);
    for t in [0.1f64, 1.0, 4.0] {
        let exact = (1.0 + (-2.0 * t).exp()) / 2.0;
        for m in METHODS {
            let u = evolve(&w, &[0.0, 0.0], 0, t, m).unwrap();
            assert!((u[0] - exact).abs() < 1e-10, "{m:?}");
            assert!((u[1] - (1.0 - exact)).abs() < 1e-10, "{m:?}");
        }
    }
}

#[test]
fn methods_agree_with_independent_integrator() {
    let mut r = rng(11);
    for trial in 0..20 {
        let n = r.gen_range(2..=50);
        let g = random_connected(n, n / 5, &mut r);
        let q = random_q(n, 3.0, &mut r);
        // a strict sub-window keeps the boundary in play
        let k = r.gen_range(1..=n);
        let window: Vec<usize> = ball(&g, 0, g.n()).unwrap().vertices()[..k].to_vec();
        let w = DirichletWindow::new(&g, &window).unwrap();
        let y = window[r.gen_range(0..k)];
        let t = r.gen_range(0.1..10.0);
        let oracle = rk4_row(&g, w.vertices(), &q, y, t, 4000);
        for m in METHODS {
            let u = evolve(&w, &q, y, t, m).unwrap();
            let gap = rel_gap(&u, &oracle);
            assert!(gap < 1e-8, "trial {trial}, {m:?}: {gap}");
        }
    }
}

#[test]
fn total_mass_is_the_row_sum() {
    let mut r = rng(12);
    for _ in 0..30 {
        let n = r.gen_range(1..=40);
        let g = random_tree(n, &mut r);
        let q = random_q(n, 2.0, &mut r);
        let w = DirichletWindow::new(&g, &(0..r.gen_range(1..=n)).collect::<Vec<_>>()).unwrap();
        let t = r.gen_range(0.0..8.0);
        let mass = total_mass(&w, &q, 0, t, Method::Uniformization).unwrap();
        for m in METHODS {
            let row: f64 = evolve(&w, &q, 0, t, m).unwrap().iter().sum();
            assert!((mass - row).abs() <= 1e-10 * mass, "{m:?}: {mass} vs {row}");
        }
    }
}

#[test]
fn long_time_slope_matches_principal_eigenvalue() {
    let g = sample_gw_tree(&OffspringLaw::uniform(&[3, 4]).unwrap(), 4, 21);
    let vertices: Vec<usize> = ball(&g, 0, 4).unwrap().vertices()[..30].to_vec();
    let w = DirichletWindow::new(&g, &vertices).unwrap();
    let xi = sample_potential(&g, 1.0, 21).unwrap();
    let lambda = principal_eigenpair(&w, &xi.values).unwrap().lambda;
    let slope = log_total_mass(&w, &xi.values, 0, 50.0).unwrap() / 50.0;
    assert!((slope - lambda).abs() <= 0.1, "slope {slope}, lambda {lambda}");
}

#[test]
fn growth_curve_stays_below_the_maximum_and_settles() {
    let mut r = rng(13);
    for _ in 0..20 {
        let n = r.gen_range(5..=30);
        let g = random_tree(n, &mut r);
        let q = random_q(n, 4.0, &mut r);
        let w = DirichletWindow::new(&g, &(0..n - 1).collect::<Vec<_>>()).unwrap();
        let top = q.iter().cloned().fold(f64::MIN, f64::max);
        let times = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0];
        let curve = growth_curve(&w, &q, 0, &times).unwrap();
        assert!(curve.iter().all(|&(_, v)| v <= top + 1e-12));
        // t (curve - lambda) -> ln(phi(y) sum_x w phi), and the gap to it shrinks
        let sys = full_spectrum(&w, &q).unwrap();
        let phi = sys.vectors.column(0);
        let iy = sys.vertices.iter().position(|&v| v == 0).unwrap();
        let c = phi[iy] * (0..phi.len()).map(|i| sys.weights[i] * phi[i]).sum::<f64>();
        let offsets: Vec<f64> = curve.iter().map(|&(t, v)| (t * (v - sys.values[0]) - c.abs().ln()).abs()).collect();
        let tail = &offsets[4..];
        assert!(tail.windows(2).all(|p| p[1] <= p[0] + 1e-9), "{offsets:?}");
        assert!(*tail.last().unwrap() < 1e-6);
    }
}

#[test]
fn growth_curve_rejects_bad_grids() {
    let g = k2();
    let w = DirichletWindow::whole(&g);
    assert!(growth_curve(&w, &[0.0, 0.0], 0, &[0.0, 1.0]).is_err());
    assert!(growth_curve(&w, &[0.0, 0.0], 0, &[2.0, 1.0]).is_err());
    assert!(growth_curve(&w, &[0.0, 0.0], 0, &[1.0, 1.0]).is_err());
}

#[test]
fn deleted_vertices_are_excluded() {
    let g = common::path_graph(4);
    let q = vec![0.0, f64::NEG_INFINITY, 0.0, 0.0];
    let w = DirichletWindow::whole(&g);
    for m in METHODS {
        let u = evolve(&w, &q, 0, 2.0, m).unwrap();
        assert_eq!(u[w.index_of(1).unwrap()], 0.0);
        // vertex 0 is isolated by the deletion: pure decay at rate 1
        assert!((u[0] - (-2f64).exp()).abs() < 1e-10, "{m:?}");
        assert!(evolve(&w, &q, 1, 1.0, m).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn evolution_is_positive(seed in any::<u64>(), n in 1usize..30, t in 0.0f64..15.0) {
        let mut r = rng(seed);
        let g = random_connected(n, n / 4, &mut r);
        let q = random_q(n, 3.0, &mut r);
        let w = DirichletWindow::whole(&g);
        for m in [Method::Uniformization, Method::RungeKutta] {
            let u = evolve(&w, &q, 0, t, m).unwrap();
            prop_assert!(u.iter().all(|&x| x >= 0.0), "{:?}: {:?}", m, u);
        }
    }

    #[test]
    fn semigroup_property(seed in any::<u64>(), n in 1usize..25, s in 0.0f64..4.0, t in 0.0f64..4.0) {
        let mut r = rng(seed);
        let g = random_tree(n, &mut r);
        let q = random_q(n, 2.0, &mut r);
        let w = DirichletWindow::new(&g, &(0..r.gen_range(1..=n)).collect::<Vec<_>>()).unwrap();
        let y = w.vertices()[0];
        let direct = evolve(&w, &q, y, s + t, Method::Uniformization).unwrap();
        // u^y(x, s+t) = sum_z u^y(z, s) u^z(x, t)
        let first = evolve(&w, &q, y, s, Method::Uniformization).unwrap();
        let mut composed = vec![0.0; w.len()];
        for (iz, &z) in w.vertices().iter().enumerate() {
            let row = evolve(&w, &q, z, t, Method::Uniformization).unwrap();
            for i in 0..w.len() {
                composed[i] += first[iz] * row[i];
            }
        }
        let gap = rel_gap(&composed, &direct);
        prop_assert!(gap < 1e-9, "gap {}", gap);
    }

    #[test]
    fn reversibility(seed in any::<u64>(), n in 2usize..25, t in 0.0f64..6.0) {
        let mut r = rng(seed);
        let g = random_connected(n, n / 3, &mut r);
        let q = random_q(n, 2.0, &mut r);
        let w = DirichletWindow::new(&g, &(0..r.gen_range(2..=n)).collect::<Vec<_>>()).unwrap();
        let rows: Vec<Vec<f64>> =
            w.vertices().iter().map(|&y| evolve(&w, &q, y, t, Method::Uniformization).unwrap()).collect();
        let scale = rows.iter().map(|row| max_abs(row)).fold(0.0, f64::max);
        for (iy, &y) in w.vertices().iter().enumerate() {
            for (ix, &x) in w.vertices().iter().enumerate() {
                let lhs = g.degree(y) as f64 * rows[iy][ix];
                let rhs = g.degree(x) as f64 * rows[ix][iy];
                prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1.0), "{} vs {}", lhs, rhs);
            }
        }
    }
}
