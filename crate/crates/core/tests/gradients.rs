use s2o_core::gradcheck::{standard_suite, SUITE_TOL};

#[test]
fn suite_passes_at_a_second_seed() {
    let cases = standard_suite(2024).unwrap();
    let names: Vec<&str> = cases.iter().map(|c| c.name.as_str()).collect();
    for needle in ["conv2d", "activation", "instance_norm", "resample", "block", "flt branch", "loss", "generator"] {
        assert!(names.iter().any(|n| n.starts_with(needle)), "missing {needle}");
    }
    for kind in ["plain", "tfd", "rk2", "poly2"] {
        assert!(names.contains(&format!("block {kind}").as_str()));
    }
    for c in &cases {
        assert!(c.report.max_rel_err < SUITE_TOL, "{}: {:?}", c.name, c.report);
    }
}
