//! The promise search problem behind XOR-model amplification: N row pairs
//! whose XORs concentrate on one witness string. Public sampling answers it
//! for free; the clustering solver trades a little communication for an
//! arbitrarily small failure rate, independent of the row width k.

use commlab::engine::{derive_seed, rat_from_f64, Symbol};
use commlab::gapmaj::{sample_count, solve_randomgraph, solve_trivial, TrivialVariant};
use commlab::report::planted_instance;

fn main() {
    let (n_rows, k) = (60, 24);
    let eps = rat_from_f64(0.3);
    let seed = 17;
    let trials = 300;

    println!("N = {}, k = {}, eps = 0.3, {} planted instances", n_rows, k, trials);
    let variants = [
        TrivialVariant::XorPub,
        TrivialVariant::XorPriv,
        TrivialVariant::OpenPub,
        TrivialVariant::OpenPriv,
        TrivialVariant::DetUni,
    ];
    for v in variants {
        let (fails, cost) = sweep(n_rows, k, &eps, seed, trials, |inst, s| {
            solve_trivial(inst, v, s).unwrap()
        });
        println!(
            "{:<12} cost {:>6}  failures {:>3}/{}",
            v.name(),
            cost,
            fails,
            trials
        );
    }

    let eps_target = 0.1;
    let (fails, cost) = sweep(n_rows, k, &eps, seed, trials, |inst, s| {
        solve_randomgraph(inst, eps_target, s).unwrap()
    });
    println!(
        "randomgraph  cost {:>6}  failures {:>3}/{}  (T = {} samples)",
        cost,
        fails,
        trials,
        sample_count(eps_target)
    );
}

fn sweep(
    n_rows: usize,
    k: usize,
    eps: &num_rational::BigRational,
    seed: u64,
    trials: u64,
    solve: impl Fn(&commlab::problems::GapMajInstance, u64) -> commlab::gapmaj::SolveReport,
) -> (u64, u64) {
    let mut fails = 0;
    let mut cost = 0;
    for i in 0..trials {
        let iseed = derive_seed(seed, &[i]);
        let (inst, witness) = planted_instance(n_rows, k, eps, iseed);
        let rep = solve(&inst, derive_seed(iseed, &[1]));
        fails += (rep.answer != Some(Symbol::Value(witness))) as u64;
        cost = cost.max(rep.record.cost);
    }
    (fails, cost)
}
