//! Rank certificates: the XOR table factors through k+1 sign columns, a
//! split-model table through a rank-2 product, and those per-leaf caps turn
//! matrix rank into a deterministic communication lower bound.

use commlab::blocks::deterministic_catalog;
use commlab::certify::{
    build_comm_matrix, exact_rank, rank_lower_bound, split_decomposition, xor_decomposition,
};
use commlab::engine::analysis::full_domain;
use commlab::engine::Bits;
use commlab::problems::xor_n;
use commlab::report::{certified_bits, model_name};

fn main() {
    for k in 1..=4usize {
        let d = xor_decomposition(k);
        let table = build_comm_matrix(&xor_n(k)).unwrap();
        assert_eq!(d.gram(), table, "k+1 columns reproduce the table");
        println!("XOR_{}: rank {} = k+1, Gram identity holds", k, exact_rank(&table));
    }

    // ownership pattern 1,0,1: Alice holds bits 0 and 2
    let mut pat = Bits::new(3);
    pat.set(0, true);
    pat.set(2, true);
    let d = split_decomposition(&pat);
    println!(
        "split pattern 101: table {}x{}, rank {}",
        d.s.rows(),
        d.s.cols(),
        exact_rank(&d.s)
    );

    let n = 4;
    println!("\ncatalog lower bounds at n = {}:", n);
    for entry in deterministic_catalog(n) {
        if entry.protocol.budgets.total() != 0 {
            continue;
        }
        let Ok(m) = build_comm_matrix(&entry.problem) else {
            continue;
        };
        let cert = rank_lower_bound(&m, entry.protocol.model, entry.problem.output_len);
        let cost = full_domain(entry.problem.input_len_a, entry.problem.input_len_b)
            .iter()
            .map(|(x, y)| entry.protocol.run_seeded(x, y, 0).cost)
            .max()
            .unwrap();
        println!(
            "  {:<10} {:<11} certified >= {:>2}, achieved {:>2}",
            entry.problem.name,
            model_name(entry.protocol.model),
            certified_bits(&cert),
            cost
        );
        assert!(cert.admits_cost(cost));
    }
}
