mod common;

use common::{path_graph, rng};
use pamtree::graph::{ball, regular_tree, sample_gw_tree, OffspringLaw};
use pamtree::potential::{
    a_scale, build_islands, build_islands_with_radius, diagnostics_suite, island_radius,
    sample_double_exponential, sample_potential, DiagnosticsParams, PotentialField,
};
use proptest::prelude::*;
use rand::Rng;

fn survival_within(rho: f64, u: f64, n: usize, seed: u64, k_se: f64) {
    let mut r = rng(seed);
    let hits = (0..n).filter(|_| sample_double_exponential(rho, &mut r) > u).count();
    let p = (-(u / rho).exp()).exp();
    let se = (p * (1.0 - p) / n as f64).sqrt();
    let emp = hits as f64 / n as f64;
    assert!((emp - p).abs() <= k_se * se, "u={u}: empirical {emp} vs {p} (se {se})");
}

#[test]
fn survival_at_zero_and_rho() {
    // exp(-1) and exp(-e)
    assert!(((-1f64).exp() - 0.3679).abs() < 1e-4);
    assert!(((-std::f64::consts::E).exp() - 0.0660).abs() < 1e-4);
    survival_within(1.5, 0.0, 100_000, 1, 3.0);
    survival_within(1.5, 1.5, 100_000, 2, 3.0);
}

#[test]
fn survival_function_on_grid() {
    for (i, rho) in [0.5, 2.0].into_iter().enumerate() {
        for (j, u) in [0.0, rho / 2.0, rho, 2.0 * rho].into_iter().enumerate() {
            survival_within(rho, u, 100_000, 10 + (4 * i + j) as u64, 4.0);
        }
    }
}

#[test]
fn sampling_is_deterministic_and_nonnegative() {
    let g = sample_gw_tree(&OffspringLaw::uniform(&[2, 3]).unwrap(), 6, 3);
    let a = sample_potential(&g, 2.0, 7).unwrap();
    assert_eq!(a, sample_potential(&g, 2.0, 7).unwrap());
    assert_ne!(a.values, sample_potential(&g, 2.0, 8).unwrap().values);
    assert!(a.values.iter().all(|&v| v >= 0.0));
    assert_eq!(a.seed, Some(7));
    assert!(sample_potential(&g, 0.0, 7).is_err());
    assert!(PotentialField::prescribed(vec![-1.0], 1.0).is_err());
}

#[test]
fn scale_examples() {
    let e = std::f64::consts::E;
    assert!((a_scale(e.powf(e), 1.0).unwrap() - 1.0).abs() < 1e-12);
    assert!((a_scale(e.powf(3f64.exp()), 2.0).unwrap() - 6.0).abs() < 1e-9);
    assert!(a_scale(e, 1.0).is_err());
    assert!(a_scale(2.0, 1.0).is_err());
    let mut prev = a_scale(3.0, 1.5).unwrap();
    for r in [4.0, 10.0, 1e3, 1e8] {
        let next = a_scale(r, 1.5).unwrap();
        assert!(next > prev);
        assert!((next / (1.5 * f64::ln(f64::ln(r))) - 1.0).abs() < 1e-15);
        prev = next;
    }
}

#[test]
fn zero_field_has_no_islands() {
    let g = regular_tree(3, 3).unwrap();
    let xi = PotentialField::prescribed(vec![0.0; g.n()], 2.0).unwrap();
    let s = build_islands(&g, &xi, 3, 0.1, 0.5).unwrap();
    assert!(s.threshold > 0.0);
    assert!(s.high.is_empty() && s.region.is_empty() && s.islands.is_empty());
    assert_eq!(s.max_island_size(), 0);
}

#[test]
fn single_peak_island_is_a_clipped_ball() {
    // 10-vertex tree: path 0..6 with leaves 7, 8, 9 on vertices 1, 3, 5
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (1, 7), (3, 8), (5, 9)];
    let g = pamtree::graph::RootedGraph::from_edges(10, &edges, 0).unwrap();
    let mut values = vec![0.0; 10];
    values[3] = 5.0;
    let xi = PotentialField::prescribed(values, 1.0).unwrap();
    let s = build_islands_with_radius(&g, &xi, 4, 0.1, 2, 0.5).unwrap();
    assert_eq!(s.l_r, 7);
    assert_eq!(s.high, vec![3]);
    assert_eq!(s.islands.len(), 1);
    // radius 2 around 3 is {1,2,3,4,5,8}; 5 lies outside B_4(0)
    assert_eq!(s.islands[0].vertices, vec![1, 2, 3, 4, 8]);
    assert_eq!(s.islands[0].diameter, 3);
}

#[test]
fn neighbourhood_radius_rounds_up() {
    assert_eq!(island_radius(1, 0.5), 0);
    assert_eq!(island_radius(3, 0.5), 2);
    assert_eq!(island_radius(100, 0.5), 3);
    assert_eq!(island_radius(1000, 0.9), 6);
}

#[test]
fn regular_law_degree_diagnostic() {
    let g = regular_tree(3, 12).unwrap();
    let xi = sample_potential(&g, 1.0, 4).unwrap();
    let params = DiagnosticsParams { delta_degree: 1.0, ..Default::default() };
    let rep = diagnostics_suite(&g, &xi, 5, 0.5, 0.5, 2f64.ln(), &params).unwrap();
    let deg = rep.items.iter().find(|d| d.name == "max_degree_in_double_ball").unwrap();
    assert_eq!(deg.value, 3.0);
    assert!(deg.pass);
}

#[test]
fn zero_field_max_potential_reporter() {
    let g = regular_tree(3, 12).unwrap();
    let xi = PotentialField::prescribed(vec![0.0; g.n()], 2.0).unwrap();
    let rep = diagnostics_suite(&g, &xi, 6, 0.5, 0.5, 2f64.ln(), &DiagnosticsParams::default()).unwrap();
    let item = rep.items.iter().find(|d| d.name == "max_potential_band").unwrap();
    let a_l = a_scale(rep.l_r as f64, 2.0).unwrap();
    assert!((item.value - a_l).abs() < 1e-12);
    assert!(!item.pass);
}

#[test]
fn max_potential_band_frequency() {
    // D = 3 at r = 10 (the largest radius kept in memory for 100 trials)
    let r = 10;
    let g = regular_tree(3, 2 * r).unwrap();
    let theta = 2f64.ln();
    let mut fails = 0;
    for seed in 0..100 {
        let xi = sample_potential(&g, 1.0, seed).unwrap();
        let rep = diagnostics_suite(&g, &xi, r, 0.5, 0.5, theta, &DiagnosticsParams { paths: 10, ..Default::default() }).unwrap();
        let item = rep.items.iter().find(|d| d.name == "max_potential_band").unwrap();
        assert!(item.value.is_finite() && item.bound > 0.0);
        fails += usize::from(!item.pass);
    }
    // frequency is reported, not asserted as an almost-sure claim
    println!("max-potential band violated in {fails}/100 trials at r = {r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn islands_structure(seed in any::<u64>(), depth in 3usize..7, a in 0.05f64..2.0, alpha in 0.2f64..0.9) {
        let g = sample_gw_tree(&OffspringLaw::uniform(&[2, 3, 4]).unwrap(), depth, seed);
        let xi = sample_potential(&g, 1.0, seed ^ 9).unwrap();
        let r = depth - 1;
        let s = build_islands(&g, &xi, r, a, alpha).unwrap();
        prop_assume!(s.l_r > 3);
        let b = ball(&g, g.root(), r).unwrap();
        for &v in &s.high {
            prop_assert!(s.in_region(v));
            prop_assert!(xi[v] > s.threshold);
        }
        let mut seen = vec![0usize; g.n()];
        for (id, isl) in s.islands.iter().enumerate() {
            for &v in &isl.vertices {
                seen[v] += 1;
                prop_assert!(b.contains(v));
                prop_assert_eq!(s.component(v), Some(id));
                let near = s.high.iter().any(|&h| g.bfs_distances(h)[v] <= s.s_r);
                prop_assert!(near);
            }
            prop_assert!(!isl.high.is_empty());
            prop_assert!(isl.diameter <= 2 * isl.high.len() * s.s_r);
        }
        prop_assert!(seen.iter().all(|&c| c <= 1));
        prop_assert_eq!(seen.iter().sum::<usize>(), s.region.len());
        prop_assert_eq!(s.max_island_size(), s.islands.iter().map(|c| c.vertices.len()).max().unwrap_or(0));
    }

    #[test]
    fn high_set_grows_with_a(seed in any::<u64>(), a1 in 0.01f64..1.0, extra in 0.0f64..1.0) {
        let g = path_graph(60);
        let mut r = rng(seed);
        let xi = PotentialField::prescribed((0..60).map(|_| r.gen_range(0.0..3.0)).collect(), 1.0).unwrap();
        let small = build_islands(&g, &xi, 50, a1, 0.5).unwrap();
        let big = build_islands(&g, &xi, 50, a1 + extra, 0.5).unwrap();
        prop_assert!(small.high.iter().all(|v| big.high.contains(v)));
        prop_assert!(small.region.iter().all(|v| big.region.contains(v)));
    }
}
