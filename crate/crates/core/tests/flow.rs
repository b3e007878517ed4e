use pinlab::bounds::compute_constants;
use pinlab::environment::mu_beta;
use pinlab::flow::{dominated_rough_bound, domination_check, iterate, FlowMode, LevelPolicy};
use pinlab::renewal::{renewal_function, srw_first_return_law, DEFAULT_HORIZON};

#[test]
fn formula_level_flow_from_a_dominated_start() {
    let consts = compute_constants(10_000);
    let cal_c = renewal_function(&srw_first_return_law(DEFAULT_HORIZON).unwrap()).cal_c();
    let start = mu_beta(100.0, 0.8).unwrap();
    assert!(domination_check(&start) <= 1.0);
    let state = iterate(
        &start,
        cal_c,
        106,
        None,
        1e-12,
        LevelPolicy::LevelFormulas,
        &consts,
    )
    .unwrap();
    assert_eq!(state.history.len(), 7);
    assert!(!state.exhausted);
    assert!(state
        .history
        .iter()
        .all(|r| r.mode == FlowMode::LevelFormulas));
    let first = &state.history[0];
    assert!(first.rough_bound <= dominated_rough_bound(first.b, first.c_const, consts.a));
    for w in state.history.windows(2) {
        assert!(w[1].mu0 >= w[0].mu0);
        assert!(w[1].c_b <= w[0].c_b * (1.0 + 1e-12));
        assert!(w[1].c_const > w[0].c_const && w[1].c_const <= 2.0 * cal_c);
    }
    assert!(state.history.iter().all(|r| r.lost_mass <= 1e-10));
}

#[test]
fn dominated_tail_bound_vanishes() {
    let a = compute_constants(10_000).a;
    let values: Vec<f64> = [100, 200, 400, 800]
        .iter()
        .map(|&b| dominated_rough_bound(b, 3.2, a))
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0] * 1e-10));
    assert!(values[3] < 1e-200);
}
