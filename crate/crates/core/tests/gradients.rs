mod common;

use common::*;

#[test]
fn every_sublayer_matches_central_differences() {
    for (label, report) in gradient_suite() {
        assert!(report.checked > 0, "{label}: nothing checked");
        assert!(report.max_rel_err < GRAD_TOLERANCE, "{label}: {report:?}");
    }
}

#[test]
fn generator_parameters_have_no_rewriter_gradient() {
    let cfg = grad_config();
    let mut s = generator_store(&cfg);
    let r = check_rewriter(&mut s, &cfg, &["generator.decoder", "generator.output"]);
    assert!(r.max_rel_err < GRAD_TOLERANCE, "{r:?}");
}
