use serde_json::Value;
use trimlab_web::{norming_curve_json, psi_lags_json, trimmed_trajectory_json};

fn parse(s: &str) -> Vec<Value> {
    serde_json::from_str::<Value>(s).unwrap().as_array().unwrap().clone()
}

#[test]
fn norming_curve_constant_tail() {
    let pts = parse(&norming_curve_json(0.5, "const:1", 0.5, 2.0, 4.0, 3).unwrap());
    assert_eq!(pts.len(), 3);
    let last = &pts[2];
    assert_eq!(last["n"], 10_000);
    assert_eq!(last["b"], 100);
    assert!((last["d"].as_f64().unwrap() / 1e6 - 1.0).abs() < 1e-12);
}

#[test]
fn norming_curve_rejects_bad_input() {
    assert!(norming_curve_json(1.5, "const:1", 0.5, 2.0, 4.0, 3).is_err());
    assert!(norming_curve_json(0.5, "nope", 0.5, 2.0, 4.0, 3).is_err());
    assert!(norming_curve_json(0.5, "const:1", 0.5, 4.0, 2.0, 3).is_err());
}

#[test]
fn trajectory_is_reproducible() {
    let a = trimmed_trajectory_json("luroth", 0.5, 0.7, 10_000, 3, 10).unwrap();
    let b = trimmed_trajectory_json("luroth", 0.5, 0.7, 10_000, 3, 10).unwrap();
    assert_eq!(a, b);
    let pts = parse(&a);
    assert_eq!(pts.last().unwrap()["n"], 10_000);
    for p in &pts {
        assert!(p["trimmed_ratio"].as_f64().unwrap() <= p["untrimmed_ratio"].as_f64().unwrap());
    }
    assert!(trimmed_trajectory_json("doubling-pareto", 2.0, 0.5, 1000, 1, 5).is_ok());
    assert!(trimmed_trajectory_json("other", 0.5, 0.7, 1000, 1, 5).is_err());
}

#[test]
fn psi_contrast() {
    let iid = parse(&psi_lags_json("iid", 0.5, "2,10", 2, 20_000, 1).unwrap());
    assert!(iid[0]["psi"].as_f64().unwrap() < 0.2);
    let dbl = parse(&psi_lags_json("doubling-pareto", 2.0, "4,16", 2, 20_000, 1).unwrap());
    assert!((dbl[0]["psi"].as_f64().unwrap() - 1.0).abs() < 0.15);
    assert!(dbl[1]["psi"].as_f64().unwrap() < 0.2);
}
