//! Every private-coin protocol here is compiled into a deterministic one
//! with zero error, at a cost controlled by a closed-form ceiling in the
//! tree size and the error margin. The compile is checked exhaustively:
//! every input pair, every coin setting of the base.

use commlab::derand::derand;
use commlab::engine::exact_error;
use commlab::report::{ceiling_max_cost, model_name, ALL_MODELS};
use commlab::testkit::{random_protocol, TestProtocol};

fn main() {
    println!(
        "{:<11} {:<18} {:>9} {:>8} {:>8}  exact",
        "model", "layout", "base eps", "cost", "ceiling"
    );
    for (i, model) in ALL_MODELS.iter().enumerate() {
        let base = random_protocol(*model, 100 + i as u64);
        let d = derand(&base.protocol, &base.eps).unwrap();
        let truth = base.truth_fn();
        let err = exact_error(&d.protocol, &truth, &TestProtocol::inputs()).unwrap();
        let ceiling = ceiling_max_cost(*model, &d.plan.eps, d.plan.depth, d.plan.k);
        assert!(err.worst == num_rational::BigRational::default());
        assert!(d.plan.cost <= ceiling);
        println!(
            "{:<11} {:<18} {:>9} {:>8} {:>8}  yes",
            model_name(*model),
            d.plan.branch,
            base.eps,
            d.plan.cost,
            ceiling
        );
    }
}
