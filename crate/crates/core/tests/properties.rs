use fcn_core::complementary::ComplementaryKernels;
use fcn_core::consistency::{truncation_error, ManufacturedFunction};
use fcn_core::fem::{solve_tridiagonal, SpatialGrid, Stencil};
use fcn_core::harness::{expected_order, orders, ExperimentConfig};
use fcn_core::kernels::KernelTable;
use fcn_core::mesh::{check_conditions, random_admissible_mesh, TimeMesh, RHO_MAX};
use fcn_core::special::{gamma, ln_gamma, omega};
use proptest::prelude::*;

fn admissible() -> impl Strategy<Value = (f64, TimeMesh)> {
    (0.1f64..0.95, 4usize..24, 0u64..1000).prop_map(|(alpha, n, seed)| {
        let mesh = random_admissible_mesh(1.0, n, RHO_MAX, seed, alpha / 2.0).unwrap();
        (alpha, mesh)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_matches_statrs(x in 0.05f64..30.0) {
        // statrs itself is good to roughly 1e-13 for large arguments
        let want = statrs::function::gamma::gamma(x);
        prop_assert!((gamma(x) - want).abs() <= 1e-12 * want.abs());
        let lw = statrs::function::gamma::ln_gamma(x);
        prop_assert!((ln_gamma(x) - lw).abs() <= 1e-12 * lw.abs().max(1.0));
    }

    #[test]
    fn omega_scales_homogeneously(beta in 0.1f64..3.0, t in 0.01f64..5.0, c in 0.1f64..10.0) {
        let lhs = omega(beta, c * t).unwrap();
        let rhs = c.powf(beta - 1.0) * omega(beta, t).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
    }

    #[test]
    fn random_meshes_are_admissible((alpha, mesh) in admissible()) {
        let rep = check_conditions(&mesh, alpha, 1.0);
        prop_assert!(rep.m1_ok && rep.theta_matches);
        prop_assert_eq!(mesh.final_time(), 1.0);
    }

    #[test]
    fn mesh_text_round_trips((_, mesh) in admissible()) {
        let back = TimeMesh::from_text(&mesh.to_text()).unwrap();
        prop_assert_eq!(back.nodes(), mesh.nodes());
        prop_assert_eq!(back.theta(), mesh.theta());
    }

    #[test]
    fn kernels_are_positive_and_monotone((alpha, mesh) in admissible()) {
        let table = KernelTable::build(&mesh, alpha).unwrap();
        for row in table.rows() {
            prop_assert!(row.kernel.iter().all(|&a| a > 0.0));
            for k in 1..row.n {
                prop_assert!(row.kernel[k] >= row.kernel[k - 1]);
            }
        }
    }

    #[test]
    fn complementary_kernels_invert_the_operator((alpha, mesh) in admissible()) {
        let table = KernelTable::build(&mesh, alpha).unwrap();
        let comp = ComplementaryKernels::new(&table).unwrap();
        prop_assert!(comp.identity_residual() <= 1e-12);
    }

    #[test]
    fn quadratics_are_differentiated_exactly(
        (alpha, mesh) in admissible(),
        c in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let table = KernelTable::build(&mesh, alpha).unwrap();
        let v = ManufacturedFunction::polynomial([c[0], c[1], c[2], 0.0]);
        let tr = truncation_error(&table, &v).unwrap();
        for (u, s) in tr.upsilon.iter().zip(&tr.scale) {
            prop_assert!(u.abs() <= 1e-12 * s.max(1e-300));
        }
    }

    #[test]
    fn operator_forms_agree((alpha, mesh) in admissible(), seed in any::<u64>()) {
        let table = KernelTable::build(&mesh, alpha).unwrap();
        let v: Vec<f64> = (0..=mesh.len())
            .map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 11) as f64 / (1u64 << 53) as f64) - 0.5)
            .collect();
        let a = table.apply(&v).unwrap();
        let b = table.apply_rearranged(&v).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn thomas_solves_dominant_systems(
        diag in 2.1f64..10.0,
        off in -1.0f64..1.0,
        rhs in prop::collection::vec(-10.0f64..10.0, 2..64),
    ) {
        let s = Stencil { diag, off };
        let x = solve_tridiagonal(&s, &rhs, 0).unwrap();
        let mut y = vec![0.0; x.len()];
        s.apply(&x, &mut y);
        for (yi, ri) in y.iter().zip(&rhs) {
            prop_assert!((yi - ri).abs() <= 1e-12 * (1.0 + ri.abs()));
        }
    }

    #[test]
    fn ritz_projection_matches_nodes_in_1d(m in 4usize..200, k in 1u32..6) {
        let grid = SpatialGrid::new(m).unwrap();
        let kf = k as f64;
        let r = grid.ritz_projection(|x| kf * (kf * x).cos()).unwrap();
        // exact up to the 4-point Gauss error in the load
        let tol = 1e-12 + (kf * grid.h()).powi(8);
        for (i, v) in r.iter().enumerate() {
            prop_assert!((v - (kf * grid.x(i)).sin()).abs() <= tol);
        }
    }

    #[test]
    fn mass_and_stiffness_are_positive_definite(
        m in 2usize..50,
        x in prop::collection::vec(-1.0f64..1.0, 50),
    ) {
        let grid = SpatialGrid::new(m).unwrap();
        let x = &x[..m];
        prop_assume!(x.iter().any(|&v| v != 0.0));
        prop_assert!(grid.mass().quadratic_form(x) > 0.0);
        prop_assert!(grid.stiffness().quadratic_form(x) > 0.0);
    }

    #[test]
    fn expected_order_is_capped(sigma in 0.01f64..1.99, gamma in 1.0f64..8.0) {
        prop_assume!((sigma - 1.0).abs() > 1e-9);
        let q = expected_order(sigma, gamma).unwrap();
        prop_assert_eq!(q, (gamma * sigma).min(2.0));
    }

    #[test]
    fn orders_recover_geometric_rates(q in 0.2f64..3.0, e0 in 1e-8f64..1.0) {
        let e: Vec<f64> = (0..4).map(|i| e0 * 2f64.powf(-q * i as f64)).collect();
        let got = orders(&e);
        prop_assert!(got[0].is_none());
        for o in &got[1..] {
            prop_assert!((o.unwrap() - q).abs() <= 1e-10);
        }
    }

    #[test]
    fn config_flags_override_file(alpha in 0.05f64..0.95, n in 8usize..4096) {
        let mut c = ExperimentConfig::from_text("alpha=0.5\nN=64,128\n").unwrap();
        c.set("alpha", &format!("{alpha:?}")).unwrap();
        c.set("N", &n.to_string()).unwrap();
        prop_assert_eq!(c.alpha, alpha);
        prop_assert_eq!(&c.ns, &vec![n]);
        prop_assert!(c.validate().is_ok());
    }
}
