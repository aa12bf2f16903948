mod common;

#[test]
fn language_model_recovers_bigram_entropy() {
    let c = common::bigram_control(21, 3);
    let rel = (c.run.mean - c.entropy).abs() / c.entropy;
    assert!(
        rel < 0.05,
        "FCE {} vs entropy {} ({:.2}%)",
        c.run.mean,
        c.entropy,
        100.0 * rel
    );
    assert!(c.run.std > 0.0);
    assert_eq!(c.run.nll.len(), 3);
    assert_eq!(c.run.unk_generated, 0.0);
    assert_eq!(c.run.unk_test, 0.0);
}

#[test]
fn single_repeat_reports_zero_std() {
    let c = common::bigram_control(22, 1);
    assert_eq!(c.run.std, 0.0);
    assert_eq!(c.run.mean, c.run.nll[0]);
}
