use curlcurl_lod::falk_winther::{assemble_pi_e, ProjectionOptions};
use curlcurl_lod::fe_spaces::{coarse_to_fine_embedding, curl_incidence, divergence_incidence, gradient_incidence};
use curlcurl_lod::harness::{energy_error, fit_rate};
use curlcurl_lod::linsolve::{solve_saddle, Redundancy, SaddleSystem};
use curlcurl_lod::sparse::{max_abs, CsrMatrix};
use curlcurl_lod::{Family, Mesh, NestedPair};
use proptest::prelude::*;

fn mesh_case() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![(Just(2usize), 1usize..7), (Just(3usize), 1usize..3)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn discrete_complex_is_exact((dim, n) in mesh_case()) {
        let m = Mesh::structured(dim, n).unwrap();
        prop_assert_eq!(m.euler_characteristic(), 1);
        let cg = curl_incidence(&m).compose(&gradient_incidence(&m)).unwrap();
        prop_assert_eq!(cg.matrix.max_abs(), 0.0);
        if dim == 3 {
            let dc = divergence_incidence(&m).unwrap().compose(&curl_incidence(&m)).unwrap();
            prop_assert_eq!(dc.matrix.max_abs(), 0.0);
        }
    }

    #[test]
    fn cells_are_sorted_and_edges_point_up((dim, n) in mesh_case()) {
        let m = Mesh::structured(dim, n).unwrap();
        for c in 0..m.num_cells() {
            prop_assert!(m.cell(c).windows(2).all(|w| w[0] < w[1]));
        }
        for e in 0..m.num_edges() {
            prop_assert!(m.edge_head(e) > m.edge_tail(e));
        }
    }

    #[test]
    fn triplets_sum_duplicates(entries in prop::collection::vec((0usize..5, 0usize..4, -10.0f64..10.0), 0..30)) {
        let a = CsrMatrix::from_triplets(5, 4, &entries);
        let mut dense = [[0.0; 4]; 5];
        for &(i, j, v) in &entries {
            dense[i][j] += v;
        }
        for (i, row) in dense.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                prop_assert!((a.get(i, j) - v).abs() < 1e-12);
            }
        }
        prop_assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn saddle_solves_meet_residual_bounds(
        diag in prop::collection::vec(1.0f64..5.0, 6),
        c in prop::collection::vec(-1.0f64..1.0, 12),
        f in prop::collection::vec(-1.0f64..1.0, 6),
        g in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let mut t: Vec<(usize, usize, f64)> = diag.iter().enumerate().map(|(i, &d)| (i, i, d + 1.0)).collect();
        for i in 0..5 {
            t.push((i, i + 1, -0.5));
            t.push((i + 1, i, -0.5));
        }
        let ct: Vec<(usize, usize, f64)> = c.iter().enumerate().map(|(k, &v)| (k / 6, k % 6, v)).collect();
        let sys = SaddleSystem {
            a: CsrMatrix::from_triplets(6, 6, &t),
            c: CsrMatrix::from_triplets(2, 6, &ct),
            rhs_primal: f,
            rhs_multiplier: g,
        };
        // Nearly dependent random rows are legitimately rejected.
        if let Ok(sol) = solve_saddle(&sys, Redundancy::Reject) {
            prop_assert!(sol.residual_primal <= 1e-9);
            prop_assert!(sol.residual_constraint <= 1e-9);
        }
    }

    #[test]
    fn energy_error_scales_linearly(t in 1e-6f64..1e-1, w in prop::collection::vec(-1.0f64..1.0, 3)) {
        let b = CsrMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (1, 1, 1.0), (2, 2, 3.0), (0, 2, 0.5), (2, 0, 0.5)]);
        let r = [1.0, 0.5, -1.0];
        let u: Vec<f64> = r.iter().zip(&w).map(|(a, b)| a + t * b).collect();
        let bw = b.mul_vec(&w);
        let br = b.mul_vec(&r);
        let expect = t * (w.iter().zip(&bw).map(|(a, b)| a * b).sum::<f64>() / r.iter().zip(&br).map(|(a, b)| a * b).sum::<f64>()).sqrt();
        prop_assert!((energy_error(&u, &r, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn power_laws_fit_exactly(c in 0.01f64..100.0, rate in 0.1f64..3.0) {
        let hs = [0.7, 0.35, 0.18, 0.09];
        let errs: Vec<f64> = hs.iter().map(|h: &f64| c * h.powf(rate)).collect();
        prop_assert!((fit_rate(&hs, &errs).unwrap() - rate).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn projection_and_commuting_hold_on_random_data(
        coarse in prop::collection::vec(-1.0f64..1.0, 56),
        potential in prop::collection::vec(-1.0f64..1.0, 289),
    ) {
        let pair = NestedPair::from_levels(2, 2, 4).unwrap();
        let ps = assemble_pi_e(&pair, ProjectionOptions::default()).unwrap();
        let en = coarse_to_fine_embedding(&pair, Family::Nedelec).unwrap();
        let back = ps.p.apply(&en.apply(&coarse));
        let d: Vec<f64> = back.iter().zip(&coarse).map(|(a, b)| a - b).collect();
        prop_assert!(max_abs(&d) < 1e-9);
        let lhs = ps.p.apply(&gradient_incidence(&pair.fine).apply(&potential));
        let rhs = gradient_incidence(&pair.coarse).apply(&ps.pv.apply(&potential));
        let d: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        prop_assert!(max_abs(&d) < 1e-9);
    }
}
