use super::*;
use crate::conic::{Cone, ConicSolution};
use crate::geometry::{box_region, EnclosureMode};

fn settings() -> SolverSettings {
    SolverSettings::default()
}

fn interval(lo: f64, hi: f64) -> Region {
    box_region(&[lo], &[hi], EnclosureMode::Ball).unwrap()
}

fn scalar(a: f64) -> SquareMatrix {
    SquareMatrix::diag(&[a])
}

fn quad1(q: f64, b: f64, c: f64) -> QuadraticFunction {
    QuadraticFunction::new(nalgebra::DMatrix::from_element(1, 1, q), vec![b], c).unwrap()
}

/// Feasible EscapeOut point for A = −1, R = [1, 2], G = −V.
fn hand_built_out() -> EscapeCertificate {
    EscapeCertificate {
        model: ModelKind::Out,
        g: GChoice::MinusTwoGammaV { gamma: 0.5 },
        r: 0.2,
        v: quad1(0.25, 0.0, 0.0),
        w: None,
        lambda: vec![1.0],
        mu: vec![0.25],
        nu: vec![0.0],
        residuals: Vec::new(),
        solver_status: SolveStatus::Optimal,
        solve_time: 0.0,
    }
}

#[test]
fn escape_in_layout_for_one_dimension() {
    let p = build_escape_in(&scalar(-1.0), &interval(-1.0, 1.0), GChoice::MinusOne).unwrap();
    assert_eq!(p.conic.num_vars, 10);
    assert_eq!(p.conic.blocks.len(), 7);
    assert!(p.conic.validate().is_ok());
    let psd = p.conic.blocks.iter().filter(|b| matches!(b.cone, Cone::Psd(2))).count();
    assert_eq!(psd, 4);
    assert!(p.conic.blocks.iter().any(|b| b.cone == Cone::Psd(1)));
    assert!(p.conic.blocks.iter().any(|b| b.cone == Cone::Zero(1)));
}

#[test]
fn builders_check_origin_position() {
    let a = scalar(-1.0);
    assert!(matches!(build_escape_in(&a, &interval(1.0, 2.0), GChoice::MinusOne), Err(Error::Precondition(_))));
    assert!(matches!(build_escape_out(&a, &interval(-1.0, 1.0), GChoice::MinusOne), Err(Error::Precondition(_))));
    assert!(matches!(build_escape(&a, &interval(0.0, 1.0), GChoice::MinusOne), Err(Error::Precondition(_))));
    let a2 = SquareMatrix::diag(&[-1.0, -1.0]);
    assert!(matches!(build_escape(&a2, &interval(1.0, 2.0), GChoice::MinusOne), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn escape_out_on_unit_interval_is_sound() {
    let a = scalar(-1.0);
    let region = interval(1.0, 2.0);
    let g = GChoice::log(default_gamma(&a).unwrap()).unwrap();
    let cert = certify(&a, &region, g, &settings()).unwrap().expect("certificate");
    assert!(cert.r > 0.0);
    assert_eq!(cert.model, ModelKind::Out);
    // True exit time from x₀ = 2 is ln 2.
    let bound = cert.bound_at(&[2.0]).unwrap();
    assert!(bound >= 2f64.ln() - 1e-9, "bound {bound}");
    assert!(bound.is_finite());
    assert!(cert.bound_worst_case() >= bound - 1e-6);

    let cert1 = certify(&a, &region, GChoice::MinusOne, &settings()).unwrap().expect("certificate");
    assert!(cert1.bound_at(&[2.0]).unwrap() >= 2f64.ln() - 1e-9);
}

#[test]
fn escape_in_on_symmetric_interval_is_feasible() {
    let a = scalar(-1.0);
    let region = interval(-1.0, 1.0);
    let cert = certify(&a, &region, GChoice::MinusOne, &settings()).unwrap().expect("certificate");
    assert_eq!(cert.model, ModelKind::In);
    assert!(cert.w.is_some());
    assert!(cert.bound_worst_case() >= 0.0);
    assert!(cert.bound_at(&[0.5]).unwrap() >= 0.0);
}

#[test]
fn bound_formula_fixtures() {
    let mut c = hand_built_out();
    c.g = GChoice::MinusOne;
    c.r = 0.3;
    assert!((c.bound_from_value(1.0) - 0.7).abs() < 1e-15);
    c.r = 0.2;
    c.g = GChoice::MinusTwoGammaV { gamma: 0.5 };
    assert!((c.bound_from_value(0.2 * std::f64::consts::E) - 1.0).abs() < 1e-12);
    c.r = 0.0;
    assert_eq!(c.bound_from_value(1.0), f64::INFINITY);
    c.r = 0.5;
    assert_eq!(c.bound_from_value(0.4), 0.0);
    c.g = GChoice::MinusOne;
    c.r = 0.4;
    assert!((c.bound_worst_case() - 0.6).abs() < 1e-15);
}

#[test]
fn hand_built_certificate_validates() {
    let cert = hand_built_out();
    let res = validate_certificate(&cert, &scalar(-1.0), &interval(1.0, 2.0)).unwrap();
    assert_eq!(res.len(), 3);
    assert!(res.iter().all(|r| r.min_eigenvalue >= 0.0));
    assert!((cert.bound_at(&[2.0]).unwrap() - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn negative_multiplier_is_rejected() {
    let mut cert = hand_built_out();
    cert.lambda[0] = -0.1;
    assert!(matches!(
        validate_certificate(&cert, &scalar(-1.0), &interval(1.0, 2.0)),
        Err(Error::InvalidCertificate(_))
    ));
}

#[test]
fn violated_block_is_rejected() {
    let mut cert = hand_built_out();
    cert.r = 2.0;
    assert!(matches!(
        validate_certificate(&cert, &scalar(-1.0), &interval(1.0, 2.0)),
        Err(Error::InvalidCertificate(_))
    ));
    let mut cert = hand_built_out();
    cert.v = quad1(-0.25, 0.0, 0.0);
    assert!(validate_certificate(&cert, &scalar(-1.0), &interval(1.0, 2.0)).is_err());
}

#[test]
fn extraction_round_trips_the_solver_point() {
    let a = scalar(-1.0);
    let region = interval(1.0, 2.0);
    let problem = build_escape_out(&a, &region, GChoice::MinusTwoGammaV { gamma: 0.5 }).unwrap();
    let lay = problem.layout;
    let mut x = vec![0.0; lay.total];
    x[lay.v + svec_index(0, 0)] = 0.25;
    x[lay.lambda] = 1.0;
    x[lay.mu] = 0.25;
    x[lay.r] = 0.2;
    assert!(problem.conic.max_violation(&x) <= 1e-12);
    let sol = ConicSolution {
        status: SolveStatus::Optimal,
        primal: Some(x),
        objective_value: 0.2,
        solver_time: 0.0,
        iterations: 0,
        primal_violation: 0.0,
    };
    let cert = extract_certificate(&problem, &sol).unwrap();
    assert_eq!(cert.r, 0.2);
    assert_eq!(cert.v, quad1(0.25, 0.0, 0.0));
    assert_eq!(cert.lambda, vec![1.0]);
}

#[test]
fn certificate_json_round_trip() {
    let cert = hand_built_out();
    let back = EscapeCertificate::from_json(&cert.to_json().unwrap()).unwrap();
    assert_eq!(back, cert);
}

#[test]
fn default_gamma_fixtures() {
    assert!((default_gamma(&scalar(-1.0)).unwrap() - 0.5).abs() < 1e-12);
    let spiral = SquareMatrix::from_rows(&[&[-0.1, 1.0], &[-1.0, -0.1]]);
    assert!((default_gamma(&spiral).unwrap() - 0.05).abs() < 1e-12);
    let jordan = SquareMatrix::from_rows(&[&[-1.0, 3.0], &[0.0, -1.0]]);
    assert!((default_gamma(&jordan).unwrap() - 0.5).abs() < 1e-9);
    assert!(matches!(default_gamma(&scalar(0.5)), Err(Error::Precondition(_))));
    assert!(GChoice::log(0.0).is_err());
}

#[test]
fn baseline_on_unit_interval() {
    let b = baseline_bound(&scalar(-1.0), &interval(1.0, 2.0), &settings()).unwrap();
    assert!((b.p.as_matrix()[(0, 0)] - 0.5).abs() < 1e-14);
    assert!((b.c - 0.5).abs() < 1e-9, "c = {}", b.c);
    assert!((b.sup_enclosure - 2.0).abs() < 1e-9, "C = {}", b.sup_enclosure);
    assert!((b.worst_case - 1.5).abs() < 1e-9, "tau = {}", b.worst_case);
    assert!((b.at(&[2.0]) - 1.5).abs() < 1e-9);
}

#[test]
fn baseline_rejects_unstable_and_boundary() {
    assert!(matches!(
        baseline_bound(&scalar(1.0), &interval(1.0, 2.0), &settings()),
        Err(Error::Precondition(_))
    ));
    assert!(matches!(
        baseline_bound(&scalar(-1.0), &interval(0.0, 2.0), &settings()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn baseline_with_vertex_enclosure() {
    let region = box_region(&[1.0], &[2.0], EnclosureMode::Vertices).unwrap();
    let b = baseline_bound(&scalar(-1.0), &region, &settings()).unwrap();
    assert!((b.sup_enclosure - 2.0).abs() < 1e-14);
    assert!((b.worst_case - 1.5).abs() < 1e-9);
}

#[test]
fn interior_points_are_strictly_feasible() {
    let jordan = SquareMatrix::from_rows(&[&[-1.0, 3.0], &[0.0, -1.0]]);
    let cases = [
        (jordan.clone(), box_region(&[-2.0, -1.0], &[2.0, 1.0], EnclosureMode::Ball).unwrap()),
        (jordan.clone(), box_region(&[-2.0, -1.0], &[2.0, 1.0], EnclosureMode::Vertices).unwrap()),
        (jordan, box_region(&[1.0, -1.0], &[3.0, 1.0], EnclosureMode::Ball).unwrap()),
        (scalar(-1.0), interval(1.0, 2.0)),
    ];
    for (a, region) in &cases {
        let kind = if region.classify_origin() == OriginClass::Interior { ModelKind::In } else { ModelKind::Out };
        for g in [GChoice::MinusOne, GChoice::log(default_gamma(a).unwrap()).unwrap()] {
            let p = repair::interior_point(kind, g, a, region).unwrap();
            // The full block of L_A W has a zero corner, hence eigenvalue 0.
            let strict = |r: &Residual| r.min_eigenvalue > 0.0 || (r.constraint == "L_A W <= 0" && r.min_eigenvalue == 0.0);
            assert!(p.residuals.iter().all(strict), "{kind:?} {g:?}: {:?}", p.residuals);
            if g.gamma().is_some() {
                assert!(p.r > 0.0);
            }
        }
    }
}

#[test]
fn interior_point_needs_gamma_below_margin() {
    let res = repair::interior_point(ModelKind::Out, GChoice::log(1.5).unwrap(), &scalar(-1.0), &interval(1.0, 2.0));
    assert!(matches!(res, Err(Error::Precondition(_))));
}

#[test]
fn repair_recovers_a_perturbed_point() {
    let a = scalar(-1.0);
    let region = interval(1.0, 2.0);
    let mut bad = hand_built_out();
    bad.r = 0.3;
    bad.mu = vec![-1e-3];
    assert!(validate_certificate(&bad, &a, &region).is_err());
    let fixed = repair::repair(&bad, &a, &region).unwrap();
    assert!(fixed.r > 0.0);
    assert!(validate_certificate(&fixed, &a, &region).is_ok());
    assert!(fixed.bound_at(&[2.0]).unwrap() >= std::f64::consts::LN_2 - 1e-9);
}
