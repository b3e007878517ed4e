use pinlab::bounds::{b_nb, compute_constants};
use pinlab::flow::FlowLevel;

const CAL_C: f64 = 1.595_714_336_904_309;

fn k_b(b: u64) -> i64 {
    FlowLevel::from_constants(b, CAL_C, &compute_constants(10_000)).k_b
}

#[test]
fn clustered_sum_bound_at_large_level() {
    let b = 10_000;
    let k = k_b(b);
    for n in 1..=3 {
        let x = 2 * b + 2 * k as u64;
        let check = b_nb(n, b, x, k, None).unwrap();
        assert!(check.holds, "n = {n}: {check:?}");
    }
    let far = b_nb(1, b, 3 * b, k, None).unwrap();
    assert!(far.holds, "{far:?}");
}

#[test]
fn clustered_sum_bound_fails_at_moderate_level() {
    let b = 2500;
    let k = k_b(b);
    let check = b_nb(1, b, 2 * b + 2 * k as u64, k, None).unwrap();
    assert!(!check.holds);
    assert!(check.ln_value - check.ln_bound > 10.0);
    assert!(check.sufficient_exponent > 0.0);
}
