use trimlab::processes::{
    empirical_tail_check, read_path, sample_path_with, validate_example_conditions, write_path, LurothTail, MixingStatus,
    PiecewiseMapSpec, StepObservable,
};
use trimlab::rng::SeedRecord;
use trimlab::{sample_path, ProcessError, ProcessSpec, RegVaryingTail};

#[test]
fn luroth_map_passes_checklist() {
    let r = validate_example_conditions(&PiecewiseMapSpec::luroth(), &StepObservable::PowerIndex { alpha: 0.5 }, 4.0).unwrap();
    assert!(r.all_passed(), "{r:?}");
    assert_eq!(r.topological_mixing, MixingStatus::FullBranchSufficient);
}

#[test]
fn slope_mutant_fails_only_expansion() {
    let map = PiecewiseMapSpec::luroth().with_slope(1, 0.5);
    let r = validate_example_conditions(&map, &StepObservable::PowerIndex { alpha: 0.5 }, 4.0).unwrap();
    let failed: Vec<&str> = r.checks().iter().filter(|c| !c.passed).map(|c| c.name).collect();
    assert_eq!(failed, ["uniform_expansion"]);
}

#[test]
fn doubling_map_with_bounded_observable() {
    let obs = StepObservable::Explicit { values: vec![2.0, 1.0] };
    let r = validate_example_conditions(&PiecewiseMapSpec::doubling(), &obs, 4.0).unwrap();
    assert!(r.all_passed(), "{r:?}");
}

#[test]
fn marginals_match_exact_tails() {
    let grid = [1.5, 4.0, 16.0, 100.0, 1e4];
    let iid = sample_path(&ProcessSpec::iid(RegVaryingTail::pareto(0.5).unwrap()), 50_000, 1).unwrap();
    let r = empirical_tail_check(&iid.values, &RegVaryingTail::pareto(0.5).unwrap(), &grid).unwrap();
    assert!(r.max_z() < 4.5, "{r:?}");
    let lur = sample_path(&ProcessSpec::luroth(0.5), 50_000, 2).unwrap();
    let r = empirical_tail_check(&lur.values, &LurothTail { alpha: 0.5 }, &grid).unwrap();
    assert!(r.max_z() < 4.5, "{r:?}");
    let dbl = sample_path(&ProcessSpec::doubling(2.0), 50_000, 3).unwrap();
    let r = empirical_tail_check(&dbl.values, &RegVaryingTail::pareto(0.5).unwrap(), &grid).unwrap();
    assert!(r.max_z() < 4.5, "{r:?}");
    assert!(empirical_tail_check(&dbl.values[..10], &LurothTail { alpha: 0.5 }, &grid).is_err());
}

#[test]
fn path_dump_round_trips() {
    let spec = ProcessSpec::doubling(2.0);
    let path = sample_path_with(&spec, 500, SeedRecord::new(42, 7)).unwrap();
    let mut buf = Vec::new();
    write_path(&path, &mut buf).unwrap();
    let back = read_path(buf.as_slice()).unwrap();
    assert_eq!(back, path);
    assert!(matches!(read_path(&b"1.0\n2.0\n"[..]), Err(ProcessError::Parse(_))));
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let spec = ProcessSpec::luroth(0.5);
    let a = sample_path_with(&spec, 1000, SeedRecord::new(9, 0)).unwrap();
    let b = sample_path_with(&spec, 1000, SeedRecord::new(9, 0)).unwrap();
    let c = sample_path_with(&spec, 1000, SeedRecord::new(9, 1)).unwrap();
    assert_eq!(a.values, b.values);
    assert_ne!(a.values, c.values);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(ProcessSpec::luroth(1.0).validate().is_err());
    assert!(ProcessSpec::doubling(0.5).validate().is_err());
    assert!(ProcessSpec::DoublingPareto { gamma: 2.0, window_bits: 80, max_window_bits: 64 }.validate().is_err());
}
