use exitbound::bench::{fixtures, gen_stable, run_benchmark, write_records_csv, BenchConfig, RngSeed};
use exitbound::conic::SolverSettings;
use exitbound::escape::{certify, default_gamma, EscapeCertificate, GChoice};
use exitbound::geometry::EnclosureMode;
use exitbound::linalg::{expm, solve_lyapunov, stability_margin};
use exitbound::oracle::{escape_time, Trajectory, DEFAULT_TOL};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn expm_is_a_semigroup(seed in any::<u64>(), half in 1usize..3, s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let a = gen_stable(2 * half, &mut RngSeed(seed).rng()).unwrap();
        let split = expm(&a, s).unwrap().as_matrix() * expm(&a, t).unwrap().as_matrix();
        let whole = expm(&a, s + t).unwrap();
        let err = (split - whole.as_matrix()).amax();
        prop_assert!(err <= 1e-9 * (1.0 + whole.as_matrix().amax()), "error {err}");
    }

    #[test]
    fn lyapunov_solution_is_positive_definite(seed in any::<u64>(), half in 1usize..4) {
        let a = gen_stable(2 * half, &mut RngSeed(seed).rng()).unwrap();
        let p = solve_lyapunov(&a).unwrap();
        let (am, pm) = (a.as_matrix(), p.as_matrix());
        let residual = am.transpose() * pm + pm * am + nalgebra::DMatrix::identity(am.nrows(), am.nrows());
        prop_assert!(residual.amax() <= 1e-8 * (1.0 + pm.amax()));
        prop_assert!(p.min_eigenvalue() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn planar_bounds_dominate_exit_time(seed in any::<u64>()) {
        let a = gen_stable(2, &mut RngSeed(seed).rng()).unwrap();
        let sigma = stability_margin(&a).unwrap();
        for f in fixtures(2, EnclosureMode::Ball).unwrap() {
            for g in [GChoice::MinusOne, GChoice::log(default_gamma(&a).unwrap()).unwrap()] {
                let cert = certify(&a, &f.region, g, &SolverSettings::default()).unwrap().unwrap();
                let bound = cert.bound_at(&f.x0).unwrap();
                let horizon = if bound.is_finite() { 10.0 * bound.max(0.1) } else { 100.0 / sigma };
                let tr = Trajectory::new(a.clone(), f.x0.clone()).unwrap();
                let t_star = escape_time(&tr, &f.region, horizon, 200_000, DEFAULT_TOL).unwrap().t_star();
                prop_assert!(t_star <= bound + 1e-6, "t* = {t_star}, bound = {bound}");
            }
        }
    }
}

#[test]
fn certificate_survives_a_file_round_trip() {
    let a = gen_stable(2, &mut RngSeed(5).rng()).unwrap();
    let [case_i, _] = fixtures(2, EnclosureMode::Ball).unwrap();
    let cert = certify(&a, &case_i.region, GChoice::MinusOne, &SolverSettings::default()).unwrap().unwrap();
    let file = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(file.path(), cert.to_json().unwrap()).unwrap();
    let back = EscapeCertificate::from_json(&std::fs::read_to_string(file.path()).unwrap()).unwrap();
    assert_eq!(back, cert);
}

#[test]
fn records_csv_has_one_row_per_record() {
    let records = run_benchmark(&BenchConfig::new(2, 2, 9)).unwrap();
    let file = tempfile::NamedTempFile::new().unwrap();
    write_records_csv(&records, std::fs::File::create(file.path()).unwrap()).unwrap();
    let text = std::fs::read_to_string(file.path()).unwrap();
    assert_eq!(text.lines().count(), 1 + records.len());
    assert!(text.lines().skip(1).all(|l| l.starts_with(|c: char| c.is_ascii_digit())));
}
