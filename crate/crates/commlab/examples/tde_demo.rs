//! Transcript distribution estimation: both players exchange fixed-point
//! words describing their halves of each leaf probability, giving a shared
//! estimate within delta of the true distribution, deterministically.

use commlab::derand::{tde, TdeMode};
use commlab::engine::analysis::leaf_distribution;
use commlab::engine::{Bits, TapeSet};
use commlab::testkit::random_protocol;
use num_bigint::BigInt;
use num_rational::BigRational;

fn main() {
    let base = random_protocol(commlab::engine::OutputModel::Open, 3);
    let p = &base.protocol;
    let (x, y) = (Bits::new(2), Bits::from_uint_be(2, 2));
    let truth = leaf_distribution(p, &x, &y).unwrap();
    println!("protocol {} with {} reachable transcripts", p.id, truth.len());

    for den in [4u64, 8, 16] {
        let delta = BigRational::new(BigInt::from(1), BigInt::from(den));
        for mode in [TdeMode::Unilateral, TdeMode::Open] {
            let est = tde(p, &x, &y, &delta, mode).unwrap();
            let dist = est.estimate.distance(&truth);
            println!(
                "delta 1/{:<3} {:?}: cost {:>4}, words {}x{} bits, distance {} <= {}",
                den,
                mode,
                est.cost,
                est.words_a.len(),
                est.word_bits,
                dist,
                delta
            );
            assert!(dist <= delta);
        }
    }

    // the estimate is a genuine distribution: both sides can sample from it
    let delta = BigRational::new(BigInt::from(1), BigInt::from(8));
    let est = tde(p, &x, &y, &delta, TdeMode::Open).unwrap();
    let total = est.estimate.total();
    println!("estimate mass totals {}", total);
    let mut tapes = TapeSet::from_seed(9);
    let rec = commlab::engine::execute(p, &x, &y, &mut tapes);
    println!("one real run reached transcript {:?}", rec.transcript);
}
