//! Every example runs to completion.

#[allow(dead_code)]
#[path = "../examples/fit_factor_model.rs"]
mod fit_factor_model;

#[allow(dead_code)]
#[path = "../examples/select_factors.rs"]
mod select_factors;

#[allow(dead_code)]
#[path = "../examples/bootstrap_tests.rs"]
mod bootstrap_tests;

#[allow(dead_code)]
#[path = "../examples/unbalanced_panel.rs"]
mod unbalanced_panel;

#[allow(dead_code)]
#[path = "../examples/out_of_sample.rs"]
mod out_of_sample;

#[allow(dead_code)]
#[path = "../examples/monte_carlo_table.rs"]
mod monte_carlo_table;

#[test]
fn fit_factor_model() {
    fit_factor_model::run_example().unwrap();
}

#[test]
fn select_factors() {
    select_factors::run_example().unwrap();
}

#[test]
fn bootstrap_tests() {
    bootstrap_tests::run_example().unwrap();
}

#[test]
fn unbalanced_panel() {
    unbalanced_panel::run_example().unwrap();
}

#[test]
fn out_of_sample() {
    out_of_sample::run_example().unwrap();
}

#[test]
fn monte_carlo_table() {
    monte_carlo_table::run_example(4).unwrap();
}
