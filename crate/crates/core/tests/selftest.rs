use gtlvm_core::selftest;

#[test]
fn gradients_match_finite_differences() {
    let err = selftest::gradient_check(11).unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn kl_matches_sampling() {
    let z = selftest::kl_monte_carlo(5, 20, 100_000);
    assert!(z <= 3.5, "{z}");
}

#[test]
fn masked_cells_are_never_read() {
    assert_eq!(selftest::mask_invariance(3, 1000).unwrap(), 0);
}

#[test]
fn dtw_agrees_with_enumeration() {
    assert_eq!(selftest::dtw_oracle(9, 200).unwrap(), 0);
}

#[test]
fn guidance_heads_see_only_their_block() {
    assert_eq!(selftest::guidance_leakage(2, 20).unwrap(), 0.0);
}
