//! Error measurement and white-box distribution analyses.

use super::bits::Bits;
use super::model::{resolve, Player, RawOutput, Symbol};
use super::protocol::{execute, Protocol, ProtocolKind};
use super::tape::{derive_seed, Tape, TapeSet};
use super::EngineError;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Hard cap on enumerable tape bits for exact analyses.
pub const EXACT_TAPE_LIMIT: u64 = 24;

pub type TruthFn<'a> = &'a (dyn Fn(&Bits, &Bits) -> Symbol + Sync);

/// Leaves and depth of a tree protocol.
pub struct TreeShape {
    /// All leaf transcripts in lexicographic order.
    pub leaves: Vec<Bits>,
    /// Worst-case cost: the maximum leaf depth.
    pub depth: usize,
}

pub fn tree_shape(p: &Protocol) -> Result<TreeShape, EngineError> {
    let rules = match &p.kind {
        ProtocolKind::Tree(r) => r,
        ProtocolKind::Direct(_) => return Err(EngineError::NotTree),
    };
    let mut leaves = Vec::new();
    let mut stack = vec![Bits::empty()];
    while let Some(w) = stack.pop() {
        match (rules.owner)(&w) {
            None => leaves.push(w),
            Some(_) => {
                assert!(
                    w.len() as u64 + 1 <= p.max_cost,
                    "{}: tree deeper than declared max_cost",
                    p.id
                );
                let mut w1 = w.clone();
                w1.push(true);
                let mut w0 = w;
                w0.push(false);
                stack.push(w1);
                stack.push(w0);
            }
        }
        assert!(leaves.len() <= 1 << 22, "{}: tree too large", p.id);
    }
    leaves.sort();
    let depth = leaves.iter().map(|w| w.len()).max().unwrap_or(0);
    Ok(TreeShape { leaves, depth })
}

fn pow2_rat(bits: u64) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::from(2u64).pow(bits as u32))
}

fn enumerate_tapes(p: &Protocol) -> Result<Vec<(Bits, Bits, Bits)>, EngineError> {
    let b = p.budgets;
    if b.total() > EXACT_TAPE_LIMIT {
        return Err(EngineError::OracleInfeasible(b.total(), EXACT_TAPE_LIMIT));
    }
    let mut out = Vec::with_capacity(1 << b.total());
    for pv in 0..1u64 << b.public {
        let pb = Bits::from_uint_be(pv, b.public as usize);
        for av in 0..1u64 << b.private_a {
            let ab = Bits::from_uint_be(av, b.private_a as usize);
            for bv in 0..1u64 << b.private_b {
                out.push((
                    pb.clone(),
                    ab.clone(),
                    Bits::from_uint_be(bv, b.private_b as usize),
                ));
            }
        }
    }
    Ok(out)
}

/// Exact distribution of the transcript on one input pair, by enumerating
/// every tape assignment within the declared budgets. Probabilities sum to 1.
pub fn leaf_distribution(
    p: &Protocol,
    x: &Bits,
    y: &Bits,
) -> Result<Vec<(Bits, BigRational)>, EngineError> {
    let tapes = enumerate_tapes(p)?;
    let unit = pow2_rat(p.budgets.total());
    let mut acc: BTreeMap<Bits, u64> = BTreeMap::new();
    for (pb, ab, bb) in tapes {
        let mut ts = TapeSet::fixed(pb, ab, bb);
        let rec = execute(p, x, y, &mut ts);
        *acc.entry(rec.transcript).or_insert(0) += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(w, c)| (w, BigRational::from(BigInt::from(c)) * &unit))
        .collect())
}

/// Exact worst-case error over the given inputs.
pub struct ExactError {
    pub worst: BigRational,
    pub worst_idx: usize,
    pub per_input: Vec<BigRational>,
}

pub fn exact_error(
    p: &Protocol,
    truth: TruthFn,
    inputs: &[(Bits, Bits)],
) -> Result<ExactError, EngineError> {
    let tapes = enumerate_tapes(p)?;
    let unit = pow2_rat(p.budgets.total());
    let mut per_input = Vec::with_capacity(inputs.len());
    for (x, y) in inputs {
        let t = truth(x, y);
        let mut bad = 0u64;
        for (pb, ab, bb) in &tapes {
            let mut ts = TapeSet::fixed(pb.clone(), ab.clone(), bb.clone());
            let rec = execute(p, x, y, &mut ts);
            if !resolve(p.model, &rec, &t) {
                bad += 1;
            }
        }
        per_input.push(BigRational::from(BigInt::from(bad)) * &unit);
    }
    let (worst_idx, worst) = per_input
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1))
        .map(|(i, v)| (i, v.clone()))
        .unwrap_or((0, BigRational::zero()));
    Ok(ExactError {
        worst,
        worst_idx,
        per_input,
    })
}

/// Monte Carlo error report. The radius comes from a two-sided Hoeffding
/// bound at the requested confidence: radius = sqrt(ln(2/(1-conf))/(2 trials)).
#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub estimate: f64,
    pub radius: f64,
    pub trials: u64,
    pub confidence: f64,
    pub worst_idx: usize,
    pub per_input: Vec<f64>,
}

pub fn radius_for(trials: u64, confidence: f64) -> f64 {
    assert!(trials > 0 && (0.0..1.0).contains(&confidence));
    ((2.0 / (1.0 - confidence)).ln() / (2.0 * trials as f64)).sqrt()
}

/// Sampled worst-case error over the given inputs. Per-(input, trial) tapes
/// are derived from the seed, so results are reproducible and independent of
/// thread count or evaluation order.
pub fn estimate_error(
    p: &Protocol,
    truth: TruthFn,
    inputs: &[(Bits, Bits)],
    trials: u64,
    confidence: f64,
    seed: u64,
) -> ErrorReport {
    assert!(!inputs.is_empty());
    let per_input: Vec<f64> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, (x, y))| {
            let t = truth(x, y);
            let bad: u64 = (0..trials)
                .into_par_iter()
                .map(|trial| {
                    let s = derive_seed(seed, &[i as u64, trial]);
                    let mut ts = TapeSet::from_seed(s);
                    let rec = execute(p, x, y, &mut ts);
                    (!resolve(p.model, &rec, &t)) as u64
                })
                .sum();
            bad as f64 / trials as f64
        })
        .collect();
    let worst_idx = per_input
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    ErrorReport {
        estimate: per_input[worst_idx],
        radius: radius_for(trials, confidence),
        trials,
        confidence,
        worst_idx,
        per_input,
    }
}

/// Per-leaf reach probabilities contributed by one player.
///
/// For a private-coin tree protocol on a fixed input pair, the probability of
/// reaching leaf w factors as alpha(w) * beta(w), where alpha(w) is the
/// fraction of Alice's tapes consistent with her bits along w. `out_groups`
/// additionally splits each leaf's fraction by the raw output the player
/// would announce there.
pub struct FactorTable {
    pub leaves: Vec<Bits>,
    pub alpha: Vec<BigRational>,
    pub out_groups: Vec<BTreeMap<RawOutput, BigRational>>,
    /// Denominator-free view: counts over 2^budget tapes.
    pub counts: Vec<u64>,
    pub out_counts: Vec<BTreeMap<RawOutput, u64>>,
    pub tape_budget: u64,
}

pub fn factor_leaf_probabilities(
    p: &Protocol,
    side: Player,
    input: &Bits,
) -> Result<FactorTable, EngineError> {
    let rules = match &p.kind {
        ProtocolKind::Tree(r) => r,
        ProtocolKind::Direct(_) => return Err(EngineError::NotTree),
    };
    if p.budgets.public != 0 {
        return Err(EngineError::PublicCoins);
    }
    let shape = tree_shape(p)?;
    let budget = match side {
        Player::Alice => p.budgets.private_a,
        Player::Bob => p.budgets.private_b,
    };
    if budget > EXACT_TAPE_LIMIT {
        return Err(EngineError::OracleInfeasible(budget, EXACT_TAPE_LIMIT));
    }
    let out_fn = match side {
        Player::Alice => &rules.out_a,
        Player::Bob => &rules.out_b,
    };
    let n = shape.leaves.len();
    let mut counts = vec![0u64; n];
    let mut out_counts: Vec<BTreeMap<RawOutput, u64>> = vec![BTreeMap::new(); n];
    for tv in 0..1u64 << budget {
        for (li, leaf) in shape.leaves.iter().enumerate() {
            let mut tape = Tape::fixed(Bits::from_uint_be(tv, budget as usize));
            let mut pub_tape = Tape::none();
            let mut consistent = true;
            for j in 0..leaf.len() {
                let prefix = leaf.slice(0, j);
                match (rules.owner)(&prefix) {
                    Some(who) if who == side => {
                        let bit = (rules.message)(who, &prefix, input, &mut tape, &mut pub_tape);
                        if bit != leaf.get(j) {
                            consistent = false;
                            break;
                        }
                    }
                    Some(_) => {}
                    None => unreachable!("leaf prefix ended early"),
                }
            }
            if consistent {
                counts[li] += 1;
                if let Some(f) = out_fn {
                    let out = f(leaf, input, &mut tape, &mut pub_tape);
                    *out_counts[li].entry(out).or_insert(0) += 1;
                }
            }
        }
    }
    let unit = pow2_rat(budget);
    let alpha = counts
        .iter()
        .map(|&c| BigRational::from(BigInt::from(c)) * &unit)
        .collect();
    let out_groups = out_counts
        .iter()
        .map(|m| {
            m.iter()
                .map(|(z, &c)| (z.clone(), BigRational::from(BigInt::from(c)) * &unit))
                .collect()
        })
        .collect();
    Ok(FactorTable {
        leaves: shape.leaves,
        alpha,
        out_groups,
        counts,
        out_counts,
        tape_budget: budget,
    })
}

/// Deterministic open output per leaf for private-coin protocols.
pub fn open_leaf_output(p: &Protocol, leaf: &Bits) -> Option<RawOutput> {
    if let ProtocolKind::Tree(rules) = &p.kind {
        rules.out_open.as_ref().map(|f| {
            let mut pub_tape = Tape::none();
            f(leaf, &mut pub_tape)
        })
    } else {
        None
    }
}

/// All input pairs of the protocol's declared input lengths. Caller is
/// responsible for domain size.
pub fn full_domain(input_len_a: usize, input_len_b: usize) -> Vec<(Bits, Bits)> {
    assert!(input_len_a + input_len_b <= 22, "domain too large");
    let mut v = Vec::with_capacity(1 << (input_len_a + input_len_b));
    for xa in 0..1u64 << input_len_a {
        for yb in 0..1u64 << input_len_b {
            v.push((
                Bits::from_uint_be(xa, input_len_a),
                Bits::from_uint_be(yb, input_len_b),
            ));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::model::OutputModel;
    use crate::engine::protocol::{MessageFn, OutputFn, OwnerFn, TapeBudgets, TreeRules};
    use num_traits::One;
    use std::sync::Arc;

    /// Alice sends one random bit, Bob sends x-independent random bit.
    fn coin_pair() -> Protocol {
        let owner: OwnerFn = Arc::new(|w: &Bits| match w.len() {
            0 => Some(Player::Alice),
            1 => Some(Player::Bob),
            _ => None,
        });
        let message: MessageFn =
            Arc::new(|_, _, _: &Bits, tape: &mut Tape, _: &mut Tape| tape.draw());
        let out: OutputFn =
            Arc::new(|w: &Bits, _, _: &mut Tape, _: &mut Tape| RawOutput::Value(w.clone()));
        Protocol {
            id: "coin-pair".into(),
            model: OutputModel::Local,
            output_len: 2,
            top_in_range: false,
            input_len_a: 0,
            input_len_b: 0,
            budgets: TapeBudgets {
                public: 0,
                private_a: 1,
                private_b: 1,
            },
            max_cost: 2,
            kind: ProtocolKind::Tree(TreeRules {
                owner,
                message,
                out_a: Some(out.clone()),
                out_b: Some(out),
                out_open: None,
            }),
        }
    }

    #[test]
    fn uniform_leaves() {
        let p = coin_pair();
        let d = leaf_distribution(&p, &Bits::empty(), &Bits::empty()).unwrap();
        assert_eq!(d.len(), 4);
        let quarter = BigRational::new(BigInt::from(1), BigInt::from(4));
        for (_, pr) in &d {
            assert_eq!(*pr, quarter);
        }
        let total: BigRational = d.iter().map(|(_, pr)| pr.clone()).sum();
        assert!(total.is_one());
    }

    #[test]
    fn factors_multiply_to_leaf_distribution() {
        let p = coin_pair();
        let x = Bits::empty();
        let fa = factor_leaf_probabilities(&p, Player::Alice, &x).unwrap();
        let fb = factor_leaf_probabilities(&p, Player::Bob, &x).unwrap();
        let d = leaf_distribution(&p, &x, &x).unwrap();
        assert_eq!(fa.leaves, fb.leaves);
        for ((w, pr), i) in d.iter().zip(0..) {
            assert_eq!(&fa.leaves[i], w);
            assert_eq!(fa.alpha[i].clone() * fb.alpha[i].clone(), pr.clone());
        }
    }

    #[test]
    fn radius_formula() {
        // 10^4 trials at 99%: sqrt(ln(200)/20000)
        let r = radius_for(10_000, 0.99);
        assert!((r - 0.016277).abs() < 1e-5);
    }

    #[test]
    fn estimate_is_deterministic() {
        let p = coin_pair();
        let inputs = vec![(Bits::empty(), Bits::empty())];
        let truth = |_: &Bits, _: &Bits| Symbol::Value(Bits::parse("00"));
        let r1 = estimate_error(&p, &truth, &inputs, 2000, 0.99, 5);
        let r2 = estimate_error(&p, &truth, &inputs, 2000, 0.99, 5);
        assert_eq!(r1.estimate, r2.estimate);
        // both-agree-on-00 has probability 1/4
        assert!((r1.estimate - 0.75).abs() < 0.05);
    }
}
