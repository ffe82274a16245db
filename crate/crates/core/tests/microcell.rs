use hmmflow::linalg::SolverKind;
use hmmflow::mesh::{CoarseMesh, Rect, TorusMesh};
use hmmflow::microcell::{
    assemble_cell_system, sample_coefficient, solve_cell, CellSolution, Coefficient, MicroConfig, Upscaler,
};
use hmmflow::{Error, Tensor2};
use proptest::prelude::*;

fn layered(eps: f64) -> Coefficient {
    Coefficient::Layered { wave: [1.0, 0.0], values: [1.0, 4.0], period: eps, fraction: 0.5 }
}

fn solve(field: &Coefficient, cfg: &MicroConfig) -> (CellSolution, TorusMesh) {
    let torus = TorusMesh::build(cfg.m).unwrap();
    (CellSolution::compute(field, [0.0, 0.0], cfg, &torus).unwrap(), torus)
}

fn rel_frob(a: Tensor2, b: Tensor2) -> f64 {
    (a - b).frobenius() / b.frobenius()
}

#[test]
fn constant_coefficient_has_zero_correctors() {
    let cfg = MicroConfig::new(0.1, 0.1, 8).unwrap();
    let (sol, _) = solve(&Coefficient::Constant(Tensor2::iso(3.0)), &cfg);
    assert!(sol.coeff.iter().all(|k| *k == Tensor2::iso(3.0)));
    assert!(sol.correctors.iter().flatten().all(|w| w.abs() < 1e-14));
    assert!(rel_frob(sol.tensor, Tensor2::iso(3.0)) < 1e-12);
    assert!(sol.jump < 1e-12);
}

#[test]
fn layered_correctors_match_one_dimensional_oracle() {
    let cfg = MicroConfig::new(0.25, 0.25, 8).unwrap();
    let (sol, torus) = solve(&layered(0.25), &cfg);
    assert!(sol.correctors[1].iter().all(|w| w.abs() < 1e-13));
    // slope q/k - 1 with q = 1.6
    for t in 0..torus.n_triangles() {
        let k = sol.coeff[t].xx;
        let expected = 1.6 / k - 1.0;
        let g = sol.gradients[0][t];
        assert!((g[0] - expected).abs() < 1e-12 && g[1].abs() < 1e-12, "triangle {t}: {g:?} vs {expected}");
    }
    assert!(rel_frob(sol.tensor, Tensor2::diag(1.6, 2.5)) < 1e-12);
}

#[test]
fn jump_indicator_on_two_by_two_torus() {
    // w¹ makes the e₁ flux constant; the e₂ flux (0, k) jumps by 3 across the
    // four vertical edges: m² = 4 · (√5/2) · 9 · (1/2) = 9√5
    let cfg = MicroConfig::new(1.0, 1.0, 2).unwrap();
    let (sol, torus) = solve(&layered(1.0), &cfg);
    assert!((torus.edges().len()) == 12);
    let expected = 3.0 * 5f64.powf(0.25);
    assert!((sol.jump - expected).abs() < 1e-12, "{} vs {expected}", sol.jump);
}

#[test]
fn discrepancy_against_swapped_layers() {
    // shifting x by ε/2 swaps the layers: K^ε - K_h = ±3I everywhere, so the
    // squared term is 9 (½·1.6² + ½·0.4² + 1) = 21.24
    let cfg = MicroConfig::new(1.0, 1.0, 2).unwrap();
    let field = layered(1.0);
    let (sol, torus) = solve(&field, &cfg);
    let d = sol.discrepancy_at(&field, [0.5, 0.0], &cfg, &torus).unwrap();
    assert!((d - 21.24f64.sqrt()).abs() < 1e-12, "{d}");
    assert!(sol.discrepancy_at(&field, [0.0, 0.0], &cfg, &torus).unwrap() < 1e-14);
    assert!(sol.discrepancy_at(&field, [1.0, 0.3], &cfg, &torus).unwrap() < 1e-12);
}

#[test]
fn checkerboard_approaches_geometric_mean() {
    let field = Coefficient::Checkerboard { values: [1.0, 4.0], period: 1.0 };
    let mut errors = Vec::new();
    for m in [8, 16, 32] {
        let cfg = MicroConfig::new(1.0, 1.0, m).unwrap();
        let (sol, _) = solve(&field, &cfg);
        let e = sol.tensor.eigenvalues();
        errors.push((e[0] - 2.0).abs().max((e[1] - 2.0).abs()) / 2.0);
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    assert!(errors[2] < 2e-2, "{errors:?}");
}

#[test]
fn symmetric_and_nonsymmetric_formulas_agree() {
    for field in [Coefficient::Checkerboard { values: [1.0, 4.0], period: 1.0 }, Coefficient::Smooth { period: 1.0 }] {
        let cfg = MicroConfig::new(1.0, 1.0, 16).unwrap();
        let (sol, torus) = solve(&field, &cfg);
        let ns = sol.effective_tensor_nonsymmetric(&torus);
        let k = sol.full_tensor;
        for (i, row) in ns.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((v - k.get(i, j)).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn bounds_and_energy_minimization() {
    for field in [
        Coefficient::Checkerboard { values: [1.0, 4.0], period: 1.0 },
        Coefficient::Smooth { period: 1.0 },
        Coefficient::Layered { wave: [1.0, 2.0], values: [0.5, 3.0], period: 1.0, fraction: 0.3 },
    ] {
        let cfg = MicroConfig::new(1.0, 1.0, 16).unwrap();
        let (sol, torus) = solve(&field, &cfg);
        let area = torus.triangle_area();
        let arith: f64 = sol.coeff.iter().map(|k| area * k.xx).sum();
        let harm: f64 = 1.0 / sol.coeff.iter().map(|k| area / k.xx).sum::<f64>();
        let e = sol.full_tensor.eigenvalues();
        assert!(harm - 1e-10 <= e[0] && e[1] <= arith + 1e-10, "{harm} {e:?} {arith}");
        assert!(sol.alpha <= e[0] && e[1] <= sol.beta);
        for xi in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            let mean: f64 = sol.coeff.iter().map(|k| area * k.quad(xi, xi)).sum();
            assert!(sol.full_tensor.quad(xi, xi) <= mean + 1e-12);
        }
    }
}

#[test]
fn correctors_are_zero_mean_galerkin_solutions() {
    let cfg = MicroConfig::new(1.0, 1.0, 16).unwrap();
    let (sol, torus) = solve(&Coefficient::Checkerboard { values: [1.0, 4.0], period: 1.0 }, &cfg);
    for i in 0..2 {
        assert!(sol.residual[i] <= 1e-12, "{:?}", sol.residual);
        // lumped P1 mass of a uniform mesh is uniform, so the mean is the plain average
        let mean = sol.correctors[i].iter().sum::<f64>() / torus.n_dofs() as f64;
        assert!(mean.abs() < 1e-12);
    }
}

#[test]
fn iterative_solver_matches_direct() {
    let field = Coefficient::Checkerboard { values: [1.0, 4.0], period: 1.0 };
    let cfg = MicroConfig::new(1.0, 1.0, 16).unwrap();
    let torus = TorusMesh::build(16).unwrap();
    let sample = sample_coefficient(&field, [0.1, 0.2], &cfg, &torus).unwrap();
    let direct = solve_cell(&sample.values, &torus, 0, &cfg).unwrap();
    let iter_cfg = MicroConfig { solver: SolverKind::Iterative, ..cfg };
    let iterative = solve_cell(&sample.values, &torus, 0, &iter_cfg).unwrap();
    let diff = direct.iter().zip(&iterative).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-9, "{diff}");
    let (a, rhs) = assemble_cell_system(&sample.values, &torus);
    assert!(a.is_symmetric(1e-14));
    assert!(rhs[0].iter().sum::<f64>().abs() < 1e-12);
}

#[test]
fn oversampling_over_whole_periods_is_exact() {
    let eps = 0.1;
    let cfg = MicroConfig::with_oversampling(eps, 2.0 * eps, eps, 8).unwrap();
    let (sol, torus) = solve(&layered(eps), &cfg);
    assert!(rel_frob(sol.tensor, Tensor2::diag(1.6, 2.5)) < 1e-12);
    assert!(
        rel_frob(sol.oversampled_tensor(&torus, &MicroConfig { kappa0: 2.0 * eps, ..cfg }), sol.full_tensor) == 0.0
    );
    let cfg = MicroConfig::with_oversampling(0.1, 0.3, 0.2, 12).unwrap();
    let (sol, _) = solve(&Coefficient::Constant(Tensor2::new(2.0, 0.5, 1.0)), &cfg);
    assert!(rel_frob(sol.tensor, Tensor2::new(2.0, 0.5, 1.0)) < 1e-12);
}

#[test]
fn sampling_error_decays_quadratically() {
    let field = Coefficient::Smooth { period: 1.0 };
    let mut errs = Vec::new();
    for m in [8, 16, 32] {
        let cfg = MicroConfig::new(1.0, 1.0, m).unwrap();
        let torus = TorusMesh::build(m).unwrap();
        let s = sample_coefficient(&field, [0.0, 0.0], &cfg, &torus).unwrap();
        let err = (0..torus.n_triangles())
            .map(|t| {
                let p = torus.triangle_points(t);
                let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
                (s.values[t].xx - field.eval(c).unwrap().xx).abs()
            })
            .fold(0.0, f64::max);
        errs.push(err);
    }
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 1.8 && rate < 2.2, "{errs:?}");
    }
}

#[test]
fn jump_indicator_decays_on_smooth_coefficient() {
    let field = Coefficient::Smooth { period: 1.0 };
    let jumps: Vec<f64> =
        [8, 16, 32, 64].into_iter().map(|m| solve(&field, &MicroConfig::new(1.0, 1.0, m).unwrap()).0.jump).collect();
    for w in jumps.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 0.5, "{jumps:?}");
    }
}

#[test]
fn cache_only_solves_new_vertices() {
    let up = Upscaler::new(layered(0.05), MicroConfig::new(0.05, 0.05, 8).unwrap()).unwrap();
    let mesh = CoarseMesh::build_structured(2, 2, Rect::UNIT).unwrap();
    let f = up.tensor_field(&mesh).unwrap();
    assert_eq!(up.solves(), mesh.n_vertices());
    for k in &f.tensors {
        let e = k.eigenvalues();
        assert!(k.xy.abs() < 1e-10 && e[0] >= f.alpha - 1e-12 && e[1] <= f.beta + 1e-12);
    }
    let fine = mesh.refine(&[0usize].into_iter().collect()).unwrap();
    up.tensor_field(&fine).unwrap();
    assert_eq!(up.solves(), fine.n_vertices());
    let d = up.discrepancies(&fine, &up.tensor_field(&fine).unwrap()).unwrap();
    assert_eq!(d.len(), fine.n_vertices());
    assert!(d.iter().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn configuration_is_validated() {
    assert!(matches!(MicroConfig::new(0.2, 0.1, 8), Err(Error::MicroConfig(_))));
    assert!(MicroConfig::with_oversampling(0.1, 0.3, 0.4, 8).is_err());
    assert!(MicroConfig::new(0.1, 0.1, 1).is_err());
    assert!(MicroConfig::new(0.0, 0.1, 8).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn coefficients_are_uniformly_elliptic(
        x in prop::array::uniform2(-5.0f64..5.0),
        xi in prop::array::uniform2(-1.0f64..1.0),
        pick in 0usize..3,
    ) {
        let field = [
            layered(0.3),
            Coefficient::Checkerboard { values: [1.0, 4.0], period: 0.2 },
            Coefficient::Smooth { period: 0.7 },
        ][pick].clone();
        let (a, b) = field.bounds();
        let k = field.eval(x).unwrap();
        let q = k.quad(xi, xi);
        let n2 = xi[0] * xi[0] + xi[1] * xi[1];
        prop_assert!(a * n2 - 1e-12 <= q && q <= b * n2 + 1e-12);
    }
}
