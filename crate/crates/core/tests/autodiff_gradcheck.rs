mod common;

use common::gradcheck_random_graphs;

#[test]
fn random_graphs_match_finite_differences() {
    let r = gradcheck_random_graphs(50);
    eprintln!("worst first-order {:e}, hvp {:e}", r.first_order, r.second_order);
    assert!(r.first_order < 1e-5, "first-order rel err {:e}", r.first_order);
    assert!(r.second_order < 1e-4, "hvp rel err {:e}", r.second_order);
}
