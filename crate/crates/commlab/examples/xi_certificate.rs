//! The output-count bound: under the diagonal-uniform measure, an eps-error
//! open protocol for EQout must be able to name xi distinct answers, so it
//! needs log2(xi - 1) >= n - 1 bits. The local model dodges the bound: a
//! constant-cost digest test lets each player output their own input.

use commlab::blocks::{eqout_separation, naive_protocol};
use commlab::certify::{diagonal_uniform, wprt_feasible, xi, xi_certificate};
use commlab::engine::{derive_seed, rat_from_f64, OutputModel};
use commlab::problems::eqout;
use commlab::report::certified_bits;

fn main() {
    let eps = rat_from_f64(0.25);
    println!(
        "{:>2} {:>6} {:>10} {:>10} {:>11}",
        "n", "xi", "open >=", "open cost", "local cost"
    );
    for n in 3..=8usize {
        let spec = eqout(n);
        let x = xi(&spec, &diagonal_uniform(n), &eps);
        let cert = xi_certificate(x);
        let open = naive_protocol(&spec, OutputModel::Open);
        let local = eqout_separation(n, 0.25);
        let cost = |p: &commlab::engine::Protocol| {
            spec.probe_inputs(n as u64, 8)
                .iter()
                .enumerate()
                .map(|(i, (a, b))| p.run_seeded(a, b, derive_seed(3, &[i as u64])).cost)
                .max()
                .unwrap()
        };
        let (open_cost, local_cost) = (cost(&open), cost(&local));
        assert!(x as i64 - 1 >= 1 << (n - 1));
        assert!(cert.admits_cost(open_cost));
        println!(
            "{:>2} {:>6} {:>10} {:>10} {:>11}",
            n,
            x,
            certified_bits(&cert),
            open_cost,
            local_cost
        );
    }

    let sol = wprt_feasible(&eqout(3), &diagonal_uniform(3), &eps);
    println!(
        "\nweak partition relaxation at n = 3: alpha = {}, value = {} >= xi - 1 = {}",
        sol.alpha,
        sol.value,
        sol.xi - 1
    );
}
