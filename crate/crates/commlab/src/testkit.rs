//! Seeded generators of small random tree protocols with oracle-computed
//! truth tables, for exhaustive exactness tests.
//!
//! Every generated protocol has 2-bit inputs on both sides, answer length
//! k <= 3, tree depth <= 4, and 4+4 private tape bits, so the full
//! input x tape space (16 x 256 runs) enumerates in microseconds. The
//! intended answer of a protocol is defined as the strict per-input
//! plurality of its resolved outcomes; generation retries seeds until every
//! input has such a plurality and the worst error is inside the requested
//! range. That makes (truth, eps) an independent oracle: eps is measured,
//! never declared.

use crate::engine::model::{resolve_outcome, OutputModel, Player, RawOutput, Symbol};
use crate::engine::protocol::{
    execute, MessageFn, OpenOutputFn, OutputFn, OwnerFn, Protocol, ProtocolKind, TapeBudgets,
    TreeRules,
};
use crate::engine::tape::{derive_seed, TapeSet};
use crate::engine::{analysis::full_domain, Bits, SplitString};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

pub const INPUT_LEN: usize = 2;
const TAPE_BITS: u64 = 4;
/// Output tables are indexed by two positional tape bits.
const SLOTS: usize = 4;

/// A generated protocol together with its oracle truth table and measured
/// worst-case error.
pub struct TestProtocol {
    pub protocol: Protocol,
    /// Plurality answer per input pair, indexed x * 4 + y.
    pub truth: Vec<Symbol>,
    /// Exact worst-case error against `truth` (max over inputs).
    pub eps: BigRational,
    pub seed: u64,
    /// Seeds consumed before one attempt passed the plurality filter.
    pub attempts: u64,
}

impl TestProtocol {
    pub fn inputs() -> Vec<(Bits, Bits)> {
        full_domain(INPUT_LEN, INPUT_LEN)
    }

    pub fn truth_at(&self, x: &Bits, y: &Bits) -> Symbol {
        self.truth[(x.to_uint_be() * 4 + y.to_uint_be()) as usize].clone()
    }

    pub fn truth_fn(&self) -> impl Fn(&Bits, &Bits) -> Symbol + Sync + '_ {
        move |x: &Bits, y: &Bits| self.truth_at(x, y)
    }
}

struct Tables {
    k: usize,
    depth: usize,
    owners: BTreeMap<Bits, Player>,
    /// Per (internal node, speaker input value): 0 = send 0, 1 = coin, 2 = send 1.
    bias: BTreeMap<(Bits, u64), u8>,
    /// Per (leaf, input value, tape slot), one raw output per side.
    out_a: BTreeMap<(Bits, u64, usize), RawOutput>,
    out_b: BTreeMap<(Bits, u64, usize), RawOutput>,
    /// Per leaf (open model only).
    out_open: BTreeMap<Bits, RawOutput>,
}

fn random_bits(rng: &mut ChaCha12Rng, len: usize) -> Bits {
    Bits::from_uint_be(rng.gen_range(0..(1u64 << len)), len)
}

/// Random share of z against a random owner mask (conforming pairs weave
/// back to z).
fn share_of(z: &Bits, mask: &Bits) -> RawOutput {
    RawOutput::Share(SplitString::new(mask.clone(), z.and(mask)))
}

fn build_tables(model: OutputModel, rng: &mut ChaCha12Rng) -> Tables {
    let k = rng.gen_range(1..=3usize);
    let depth = rng.gen_range(1..=4usize);
    let mut owners = BTreeMap::new();
    let mut bias = BTreeMap::new();
    let mut leaves = Vec::new();
    // depth-first with fixed order so the rng stream is reproducible
    let mut stack = vec![Bits::empty()];
    while let Some(w) = stack.pop() {
        let early = !w.is_empty() && rng.gen_range(0..8u8) == 0;
        if w.len() == depth || early {
            leaves.push(w);
            continue;
        }
        let who = if rng.gen::<bool>() {
            Player::Alice
        } else {
            Player::Bob
        };
        for v in 0..4u64 {
            bias.insert((w.clone(), v), rng.gen_range(0..=2u8));
        }
        owners.insert(w.clone(), who);
        let mut w1 = w.clone();
        w1.push(true);
        let mut w0 = w;
        w0.push(false);
        stack.push(w1);
        stack.push(w0);
    }

    // A global target answer plus per-leaf conforming outputs; `strength`
    // conforming slots out of 4 set how noisy the protocol is.
    let target = random_bits(rng, k);
    let strength = rng.gen_range(2..=4usize);
    let mut out_a = BTreeMap::new();
    let mut out_b = BTreeMap::new();
    let mut out_open = BTreeMap::new();
    for leaf in &leaves {
        let speaker_a = rng.gen::<bool>();
        let owner_mask = random_bits(rng, k);
        let pad = random_bits(rng, k);
        if model == OutputModel::Open {
            let z = if rng.gen_range(0..8u8) < 7 {
                target.clone()
            } else {
                random_bits(rng, k)
            };
            out_open.insert(leaf.clone(), RawOutput::Value(z));
            continue;
        }
        for v in 0..4u64 {
            for s in 0..SLOTS {
                let conform = s < strength;
                let (a, b) = match model {
                    OutputModel::Open => unreachable!(),
                    OutputModel::Local | OutputModel::UniAlice | OutputModel::UniBob => {
                        let noise_a = RawOutput::Value(random_bits(rng, k));
                        let noise_b = RawOutput::Value(random_bits(rng, k));
                        if conform {
                            (
                                RawOutput::Value(target.clone()),
                                RawOutput::Value(target.clone()),
                            )
                        } else {
                            (noise_a, noise_b)
                        }
                    }
                    OutputModel::OneOutOfTwo => {
                        let noise = |rng: &mut ChaCha12Rng| {
                            if rng.gen::<bool>() {
                                RawOutput::Top
                            } else {
                                RawOutput::Value(random_bits(rng, k))
                            }
                        };
                        let (na, nb) = (noise(rng), noise(rng));
                        if conform {
                            if speaker_a {
                                (RawOutput::Value(target.clone()), RawOutput::Top)
                            } else {
                                (RawOutput::Top, RawOutput::Value(target.clone()))
                            }
                        } else {
                            (na, nb)
                        }
                    }
                    OutputModel::Split => {
                        let noise_a = share_of(&random_bits(rng, k), &random_bits(rng, k));
                        let noise_b = share_of(&random_bits(rng, k), &random_bits(rng, k));
                        if conform {
                            (
                                share_of(&target, &owner_mask),
                                share_of(&target, &owner_mask.not()),
                            )
                        } else {
                            (noise_a, noise_b)
                        }
                    }
                    OutputModel::Xor => {
                        let noise_a = RawOutput::Value(random_bits(rng, k));
                        let noise_b = RawOutput::Value(random_bits(rng, k));
                        if conform {
                            (
                                RawOutput::Value(pad.clone()),
                                RawOutput::Value(target.xor(&pad)),
                            )
                        } else {
                            (noise_a, noise_b)
                        }
                    }
                };
                out_a.insert((leaf.clone(), v, s), a);
                out_b.insert((leaf.clone(), v, s), b);
            }
        }
    }
    Tables {
        k,
        depth,
        owners,
        bias,
        out_a,
        out_b,
        out_open,
    }
}

fn to_protocol(model: OutputModel, t: Tables, seed: u64) -> Protocol {
    let owners = Arc::new(t.owners);
    let bias = Arc::new(t.bias);
    let owner: OwnerFn = {
        let owners = owners.clone();
        Arc::new(move |w: &Bits| owners.get(w).copied())
    };
    let message: MessageFn = Arc::new(move |_, w, input: &Bits, tape, _| {
        match bias[&(w.clone(), input.to_uint_be())] {
            0 => false,
            2 => true,
            _ => tape.draw(),
        }
    });
    let table_out = |tbl: BTreeMap<(Bits, u64, usize), RawOutput>| -> OutputFn {
        Arc::new(move |leaf, input: &Bits, tape, _| {
            let slot = ((tape.at(0) as usize) << 1) | tape.at(1) as usize;
            tbl[&(leaf.clone(), input.to_uint_be(), slot)].clone()
        })
    };
    let (out_a, out_b, out_open) = match model {
        OutputModel::Open => {
            let tbl = t.out_open;
            let f: OpenOutputFn = Arc::new(move |leaf: &Bits, _| tbl[leaf].clone());
            (None, None, Some(f))
        }
        OutputModel::UniAlice => (Some(table_out(t.out_a)), None, None),
        OutputModel::UniBob => (None, Some(table_out(t.out_b)), None),
        _ => (Some(table_out(t.out_a)), Some(table_out(t.out_b)), None),
    };
    let p = Protocol {
        id: format!("testkit:{}:{}", model.name(), seed),
        model,
        output_len: t.k,
        top_in_range: false,
        input_len_a: INPUT_LEN,
        input_len_b: INPUT_LEN,
        budgets: TapeBudgets {
            public: 0,
            private_a: TAPE_BITS,
            private_b: TAPE_BITS,
        },
        max_cost: t.depth as u64,
        kind: ProtocolKind::Tree(TreeRules {
            owner,
            message,
            out_a,
            out_b,
            out_open,
        }),
    };
    p.check_shape();
    p
}

/// Plurality truth table and its exact error by full enumeration. `None`
/// when some input lacks a strict-majority outcome.
pub fn plurality_oracle(p: &Protocol) -> Option<(Vec<Symbol>, BigRational)> {
    let total = 1u64 << p.budgets.total();
    let mut truth = Vec::with_capacity(16);
    let mut worst = BigRational::from(BigInt::from(0));
    for (x, y) in TestProtocol::inputs() {
        let mut counts: BTreeMap<Symbol, u64> = BTreeMap::new();
        for av in 0..1u64 << p.budgets.private_a {
            for bv in 0..1u64 << p.budgets.private_b {
                let mut ts = TapeSet::fixed(
                    Bits::empty(),
                    Bits::from_uint_be(av, p.budgets.private_a as usize),
                    Bits::from_uint_be(bv, p.budgets.private_b as usize),
                );
                let rec = execute(p, &x, &y, &mut ts);
                if let Ok(sym) = resolve_outcome(p.model, &rec) {
                    *counts.entry(sym).or_insert(0) += 1;
                }
            }
        }
        let (sym, cnt) = counts.into_iter().max_by_key(|(_, c)| *c)?;
        if 2 * cnt <= total {
            return None;
        }
        let err = BigRational::new(BigInt::from(total - cnt), BigInt::from(total));
        if err > worst {
            worst = err.clone();
        }
        truth.push(sym);
    }
    Some((truth, worst))
}

/// Generate a random private-coin protocol in the given model whose measured
/// error is inside [lo, hi). Retries derived seeds until the plurality filter
/// passes, so equal seeds always return identical protocols.
pub fn random_protocol_in(
    model: OutputModel,
    seed: u64,
    lo: &BigRational,
    hi: &BigRational,
) -> TestProtocol {
    for attempt in 0..10_000u64 {
        let s = derive_seed(seed, &[model as u64, attempt]);
        let mut rng = ChaCha12Rng::seed_from_u64(s);
        let tables = build_tables(model, &mut rng);
        let protocol = to_protocol(model, tables, s);
        if let Some((truth, eps)) = plurality_oracle(&protocol) {
            if eps >= *lo && eps < *hi {
                return TestProtocol {
                    protocol,
                    truth,
                    eps,
                    seed,
                    attempts: attempt + 1,
                };
            }
        }
    }
    panic!("no admissible protocol for {} at seed {}", model, seed);
}

/// Random protocol with measured error below 1/2 (below 3/8 for the split
/// and XOR models, keeping the general-case derandomization instances at
/// enumerable size).
pub fn random_protocol(model: OutputModel, seed: u64) -> TestProtocol {
    let zero = BigRational::from(BigInt::from(0));
    let hi = match model {
        OutputModel::Split | OutputModel::Xor => BigRational::new(3.into(), 8.into()),
        _ => BigRational::new(1.into(), 2.into()),
    };
    random_protocol_in(model, seed, &zero, &hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::analysis::exact_error;

    #[test]
    fn generator_is_reproducible() {
        for model in OutputModel::ALL {
            let a = random_protocol(model, 7);
            let b = random_protocol(model, 7);
            assert_eq!(a.truth, b.truth);
            assert_eq!(a.eps, b.eps);
            assert_eq!(a.protocol.id, b.protocol.id);
        }
    }

    #[test]
    fn oracle_matches_exact_error() {
        for model in OutputModel::ALL {
            for seed in 0..5u64 {
                let t = random_protocol(model, seed);
                let truth = t.truth_fn();
                let inputs = TestProtocol::inputs();
                let rep = exact_error(&t.protocol, &truth, &inputs).unwrap();
                assert_eq!(rep.worst, t.eps, "{}", t.protocol.id);
                assert!(t.eps < BigRational::new(1.into(), 2.into()));
            }
        }
    }

    #[test]
    fn error_band_generation() {
        // one-out-of-two protocols on both sides of the 1/3 threshold exist
        let third = BigRational::new(1.into(), 3.into());
        let half = BigRational::new(1.into(), 2.into());
        let zero = BigRational::from(BigInt::from(0));
        let low = random_protocol_in(OutputModel::OneOutOfTwo, 3, &zero, &third);
        let high = random_protocol_in(OutputModel::OneOutOfTwo, 3, &third, &half);
        assert!(low.eps < third);
        assert!(high.eps >= third && high.eps < half);
    }
}
