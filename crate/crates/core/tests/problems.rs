use basisfit::field::io::{CoefficientFile, NamedField};
use basisfit::problems::laplace::{in_domain_grid, oracle_laplace_harmonic};
use basisfit::problems::{self, error_metrics, ProblemId, ProblemParams};

fn tiny(id: ProblemId) -> ProblemParams {
    let mut p = ProblemParams::seeded(5).with_modes(3);
    for set in ["pde", "boundary", "initial", "data", "inflow", "walls", "front"] {
        p = p.with_points(set, 10);
    }
    if matches!(id, ProblemId::SsaSynthetic | ProblemId::LaplaceDataAssim) {
        p.reference_modes = Some(4);
    }
    if id == ProblemId::Transport {
        p.n_targets = Some(2);
    }
    p
}

#[test]
fn every_problem_builds_and_compiles() {
    for id in ProblemId::ALL {
        let built = problems::build(id, &tiny(id)).unwrap_or_else(|e| panic!("{id}: {e}"));
        let compiled = built.compile().unwrap();
        assert_eq!(compiled.fields().len(), built.axes.len(), "{id}");
        let x = vec![0.01; compiled.n_coeffs()];
        let losses = compiled.term_losses(&x).unwrap();
        assert_eq!(losses.len(), compiled.n_terms(), "{id}");
        assert!(losses.iter().all(|l| l.is_finite() && *l >= 0.0), "{id}: {losses:?}");
    }
}

#[test]
fn builds_are_deterministic_in_the_seed() {
    let a = problems::build(ProblemId::WavePeanut, &tiny(ProblemId::WavePeanut)).unwrap().compile().unwrap();
    let b = problems::build(ProblemId::WavePeanut, &tiny(ProblemId::WavePeanut)).unwrap().compile().unwrap();
    let x: Vec<f64> = (0..a.n_coeffs()).map(|i| (i as f64 * 0.37).sin()).collect();
    let w = a.default_weights();
    assert_eq!(a.residual_vector(&x, &w).unwrap(), b.residual_vector(&x, &w).unwrap());
}

#[test]
fn harmonic_laplace_solves_and_round_trips() {
    let mut p = ProblemParams::seeded(1).with_modes(8).with_points("pde", 600).with_points("boundary", 300);
    p.harmonic_boundary = true;
    let built = problems::build(ProblemId::LaplacePeanut, &p).unwrap();
    let (compiled, report) = problems::solve(&built).unwrap();
    assert!(!report.termination.is_failure(), "{:?}", report.termination);

    let grid = in_domain_grid(&built.domain, 40);
    let exact: Vec<f64> = grid.iter().map(|q| oracle_laplace_harmonic(q)).collect();
    let (_, linf) = error_metrics(&compiled.evaluate_field(&report.x, 0, &grid).unwrap(), &exact).unwrap();
    assert!(linf < 1e-8, "{linf:e}");

    let field = compiled.unpack(&report.x).unwrap().remove(0);
    let file = CoefficientFile {
        problem: Some(built.id.name().into()),
        domain: Some(built.domain.clone()),
        fields: vec![NamedField { name: "u".into(), axes: built.axes[0].clone(), field: field.clone() }],
    };
    let back = CoefficientFile::parse(&file.to_text()).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.fields[0].field.evaluate(&grid).unwrap(), field.evaluate(&grid).unwrap());
}
