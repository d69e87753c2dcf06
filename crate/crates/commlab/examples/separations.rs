//! Output models change the game: four problems that cost n bits in the
//! classical (open) setting collapse to 0 or 2 bits once the right side is
//! allowed to hold the answer. Every claim here is checked exhaustively.

use commlab::blocks::{
    cond_id_separation, id_a_separation, naive_protocol, split_id_separation, xor_separation,
};
use commlab::engine::analysis::full_domain;
use commlab::engine::{exact_error, OutputModel, Protocol};
use commlab::problems::{cond_id, id_a, split_id, xor_n, ProblemSpec};

fn check(spec: &ProblemSpec, p: &Protocol) -> (u64, String) {
    let inputs = full_domain(spec.input_len_a, spec.input_len_b);
    let truth = spec.truth();
    let err = exact_error(p, &truth, &inputs).expect("no tapes to enumerate");
    assert!(err.worst == num_rational::BigRational::default());
    let cost = inputs
        .iter()
        .map(|(x, y)| p.run_seeded(x, y, 0).cost)
        .max()
        .unwrap();
    (cost, format!("exact on all {} pairs", inputs.len()))
}

fn main() {
    let n = 6;
    let cases: Vec<(&str, ProblemSpec, Protocol, OutputModel)> = vec![
        ("XOR", xor_n(n), xor_separation(n), OutputModel::Open),
        ("SplitId", split_id(n), split_id_separation(n), OutputModel::Local),
        ("IdA", id_a(n), id_a_separation(n), OutputModel::Open),
        ("CondId", cond_id(n), cond_id_separation(n), OutputModel::Local),
    ];
    println!("n = {}", n);
    println!("{:<8} {:>12} {:>12}  verification", "problem", "model cost", "naive cost");
    for (name, spec, p, naive_model) in cases {
        let (cost, note) = check(&spec, &p);
        let naive = naive_protocol(&spec, naive_model).max_cost;
        println!("{:<8} {:>12} {:>12}  {}", name, cost, naive, note);
    }
}
