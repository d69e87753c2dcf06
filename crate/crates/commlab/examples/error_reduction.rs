//! Driving a noisy XOR protocol's error from 0.3 down to 0.05 without
//! majority-voting the k-bit outputs directly. The repetition count and the
//! reconciliation overhead depend only on the error parameters, not on k:
//! the overhead line is identical for every output width.

use commlab::amplify::{amplify_xor, corrupted, xor_reps};
use commlab::blocks::xor_separation;
use commlab::engine::estimate_error;
use commlab::problems::xor_n;

fn main() {
    let (eps, eps_target) = (0.3125, 0.05); // 10/32, exact on a 5-bit tape
    let trials = 2_000;
    let reps = xor_reps(eps, eps_target);
    println!("repetitions at ({}, {}): {}", eps, eps_target, reps);

    for k in [4usize, 8, 16] {
        let base = corrupted(&xor_separation(k), 10, 5);
        let amp = amplify_xor(&base, eps, eps_target).unwrap();
        let spec = xor_n(k);
        let inputs = spec.probe_inputs(1, 4);
        let truth = spec.truth();
        let rep = estimate_error(&amp.protocol, &truth, &inputs, trials, 0.99, k as u64);
        let overhead = amp.plan.cost_bound - (reps as u64) * base.max_cost;
        println!(
            "k = {:>2}: cost bound {:>6}, overhead {:>6}, measured error {:.4} (radius {:.4})",
            k, amp.plan.cost_bound, overhead, rep.estimate, rep.radius
        );
        assert!(rep.estimate <= eps_target + rep.radius);
        for (name, share) in &amp.plan.ledger {
            println!("        budget {:<24} {}", name, share);
        }
    }
}
