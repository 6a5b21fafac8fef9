//! Randomized structural checks against independent oracles.

mod common;

#[test]
fn ten_thousand_mixed_operations_conserve_metadata() {
    common::ten_thousand_mixed_operations_conserve_metadata();
}

#[test]
fn find_successor_matches_linear_scan() {
    common::find_successor_matches_linear_scan();
}

#[test]
fn board_traces_keep_h_and_l_consistent() {
    common::board_traces_keep_h_and_l_consistent();
}

#[test]
fn equal_inputs_give_identical_csv() {
    common::equal_inputs_give_identical_csv();
}
