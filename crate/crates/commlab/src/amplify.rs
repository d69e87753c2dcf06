//! Error reduction for every output model and the conversion ladder between
//! models. Majority voting works whenever some party sees each run's
//! outcome; the XOR, split, and one-out-of-two models need the aggregation
//! machinery (clustering, compatibility gadgets, candidate hashing) because
//! no single party ever holds a full answer.

use crate::blocks::{ftfd_protocol, wire_decode, wire_encode, wire_len, HashScheme};
use crate::engine::bits::{Bits, SplitString};
use crate::engine::model::{OutputModel, Player, RawOutput, Symbol};
use crate::engine::protocol::{
    execute, DirectRun, Protocol, ProtocolKind, TapeBudgets, TreeRules,
};
use crate::engine::tape::{Tape, TapeSet};
use crate::engine::EngineError;
use crate::gapmaj::{randomgraph_protocol, er_constant, sample_count, UnionFind};
use crate::problems::GapMajInstance;
use num_bigint::BigInt;
use num_rational::BigRational;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// plans and repetition constants
// ---------------------------------------------------------------------------

/// Cost and error accounting for one amplification scheme.
#[derive(Clone, Debug)]
pub struct AmplifyPlan {
    pub scheme: &'static str,
    pub repetitions: usize,
    /// Named error budget pieces; their sum must stay within the target.
    pub ledger: Vec<(String, BigRational)>,
    pub eps_target: f64,
    pub cost_bound: u64,
}

impl AmplifyPlan {
    pub fn ledger_total(&self) -> BigRational {
        self.ledger.iter().map(|(_, r)| r.clone()).sum()
    }

    pub fn check(&self) {
        let total = self.ledger_total();
        let target = crate::engine::rat_from_f64(self.eps_target);
        assert!(
            total <= target,
            "{}: error ledger {} exceeds target",
            self.scheme,
            total
        );
    }
}

pub struct Amplified {
    pub protocol: Protocol,
    pub plan: AmplifyPlan,
}

fn check_range(eps: f64, eps_target: f64) {
    assert!(
        0.0 < eps_target && eps_target < eps && eps < 0.5,
        "need 0 < eps_target < eps < 1/2"
    );
}

/// Majority repetitions for models where a party sees each outcome.
pub fn standard_reps(eps: f64, eps_target: f64) -> usize {
    (2.0 * eps * (1.0 - eps) / (0.5 - eps).powi(2) * (2.0 / eps_target).ln()).ceil() as usize
}

/// Repetitions feeding the XOR aggregation instance.
pub fn xor_reps(eps: f64, eps_target: f64) -> usize {
    (2.0 * eps / (0.5 - eps).powi(2) * (4.0 / eps_target).ln()).ceil() as usize
}

/// Repetitions for the one-out-of-two candidate scheme.
pub fn oot_reps(eps: f64, eps_target: f64) -> usize {
    (8.0 * eps * (1.0 - eps) / (0.5 - eps).powi(2) * (4.0 / eps_target).ln()).ceil() as usize
}

/// Repetitions feeding the split aggregation.
pub fn split_reps(eps: f64, eps_target: f64) -> usize {
    (8.0 * eps / (0.5 - eps).powi(2) * (4.0 / eps_target).ln()).ceil() as usize
}

/// Hash range for the one-out-of-two candidate reconciliation.
pub fn oot_hash_range(eps_target: f64) -> usize {
    (12.0 / eps_target).ceil() as usize
}

/// Fresh stream tapes for one sub-run, seeded from the parent tapes so that
/// all randomness still flows from the root seed.
fn child_tapes(tapes: &mut TapeSet) -> TapeSet {
    TapeSet {
        public: Tape::stream(tapes.public.draw_word(64)),
        a: Tape::stream(tapes.a.draw_word(64)),
        b: Tape::stream(tapes.b.draw_word(64)),
    }
}

fn value_of(raw: &Option<RawOutput>) -> Option<Bits> {
    match raw {
        Some(RawOutput::Value(v)) => Some(v.clone()),
        _ => None,
    }
}

fn expect_value(raw: &Option<RawOutput>, what: &str) -> Bits {
    value_of(raw).unwrap_or_else(|| panic!("{} must output a value", what))
}

fn expect_share(raw: &Option<RawOutput>, what: &str) -> SplitString {
    match raw {
        Some(RawOutput::Share(s)) => s.clone(),
        _ => panic!("{} must output a share", what),
    }
}

// ---------------------------------------------------------------------------
// corrupted wrappers: exact protocols made eps-wrong on purpose
// ---------------------------------------------------------------------------

/// Nonzero k-bit corruption pattern derived from the tape word: the word's
/// bits repeated cyclically, with the all-zero case remapped to all ones.
fn expand_wrong(u: u64, t: u32, k: usize) -> Bits {
    let mut b = Bits::new(k);
    for i in 0..k {
        if (u >> (t as usize - 1 - (i % t as usize))) & 1 == 1 {
            b.set(i, true);
        }
    }
    // a pattern that truncates to zero would leave the answer unflipped
    if b.is_zero() {
        Bits::ones(k)
    } else {
        b
    }
}

/// Flip a protocol's answer with probability exactly c/2^t, driven by t tape
/// bits past the base protocol's budget. The wrong answer differs from the
/// right one on at least one bit in every flipped run. Which tape supplies
/// the bits depends on who must apply the flip consistently.
pub fn corrupted(base: &Protocol, c: u64, t: u32) -> Protocol {
    assert!(t >= 1 && t <= 32 && c < (1u64 << t), "rate must be c/2^t < 1");
    let k = base.output_len;
    use OutputModel::*;
    let model = base.model;
    assert!(
        matches!(model, Local | UniAlice | UniBob | OneOutOfTwo | Split | Xor),
        "corruption wraps player-output models"
    );
    let mut budgets = base.budgets;
    // Local and OneOutOfTwo flips must be visible to both players; private
    // flips stay on the flipping player's tape.
    let (pub_off, a_off, b_off) = (budgets.public, budgets.private_a, budgets.private_b);
    match model {
        Local | OneOutOfTwo => budgets.public += t as u64,
        UniAlice | Split => budgets.private_a += t as u64,
        UniBob | Xor => budgets.private_b += t as u64,
        Open => unreachable!(),
    }
    let inner = base.clone();
    let run = move |x: &Bits, y: &Bits, tapes: &mut TapeSet| -> DirectRun {
        let rec = execute(&inner, x, y, tapes);
        let word = |tape: &mut Tape, off: u64| tape.word_at(off as usize, t as usize);
        let (flip, u) = {
            let u = match model {
                Local | OneOutOfTwo => word(&mut tapes.public, pub_off),
                UniAlice | Split => word(&mut tapes.a, a_off),
                UniBob | Xor => word(&mut tapes.b, b_off),
                Open => unreachable!(),
            };
            (u < c, u)
        };
        let mut out_a = rec.out_a.clone();
        let mut out_b = rec.out_b.clone();
        if flip {
            let pat = expand_wrong(u, t, k);
            let flip_value = |o: &mut Option<RawOutput>| {
                if let Some(RawOutput::Value(v)) = o {
                    *o = Some(RawOutput::Value(v.xor(&pat)));
                }
            };
            match model {
                Local => {
                    flip_value(&mut out_a);
                    flip_value(&mut out_b);
                }
                UniAlice => flip_value(&mut out_a),
                UniBob | Xor => flip_value(&mut out_b),
                OneOutOfTwo => {
                    // the speaker's value is the answer
                    flip_value(&mut out_a);
                    flip_value(&mut out_b);
                }
                Split => {
                    if let Some(RawOutput::Share(s)) = &out_a {
                        // flipping every held symbol changes the weave
                        // wherever Alice covers at least one position
                        let flipped = SplitString::new(
                            s.mask.clone(),
                            s.vals.xor(&s.mask),
                        );
                        out_a = Some(RawOutput::Share(flipped));
                    }
                }
                Open => unreachable!(),
            }
        }
        DirectRun {
            transcript: rec.transcript,
            out_a,
            out_b,
            out_open: rec.out_open,
        }
    };
    Protocol {
        id: format!("{}~flip({}/{})", base.id, c, 1u64 << t),
        model,
        output_len: k,
        top_in_range: base.top_in_range,
        input_len_a: base.input_len_a,
        input_len_b: base.input_len_b,
        budgets,
        max_cost: base.max_cost,
        kind: ProtocolKind::Direct(Arc::new(run)),
    }
}

pub fn corruption_rate(c: u64, t: u32) -> f64 {
    c as f64 / (1u64 << t) as f64
}

/// Like `corrupted`, but every flipped run lands on the same wrong answer
/// (the bitwise complement). Useful for stressing aggregation paths where
/// wrong runs form a large coherent cluster.
pub fn corrupted_fixed(base: &Protocol, c: u64, t: u32) -> Protocol {
    let k = base.output_len;
    let mut p = corrupted(base, c, t);
    let base_model = base.model;
    let (pub_off, a_off, b_off) = (
        base.budgets.public,
        base.budgets.private_a,
        base.budgets.private_b,
    );
    let inner = base.clone();
    use OutputModel::*;
    let run = move |x: &Bits, y: &Bits, tapes: &mut TapeSet| -> DirectRun {
        let rec = execute(&inner, x, y, tapes);
        let u = match base_model {
            Local | OneOutOfTwo => tapes.public.word_at(pub_off as usize, t as usize),
            UniAlice | Split => tapes.a.word_at(a_off as usize, t as usize),
            UniBob | Xor => tapes.b.word_at(b_off as usize, t as usize),
            Open => unreachable!(),
        };
        let mut out_a = rec.out_a.clone();
        let mut out_b = rec.out_b.clone();
        if u < c {
            let pat = Bits::ones(k);
            let flip_value = |o: &mut Option<RawOutput>| {
                if let Some(RawOutput::Value(v)) = o {
                    *o = Some(RawOutput::Value(v.xor(&pat)));
                }
            };
            match base_model {
                Local | OneOutOfTwo => {
                    flip_value(&mut out_a);
                    flip_value(&mut out_b);
                }
                UniAlice => flip_value(&mut out_a),
                UniBob | Xor => flip_value(&mut out_b),
                Split => {
                    if let Some(RawOutput::Share(s)) = &out_a {
                        let flipped = SplitString::new(s.mask.clone(), s.vals.xor(&s.mask));
                        out_a = Some(RawOutput::Share(flipped));
                    }
                }
                Open => unreachable!(),
            }
        }
        DirectRun {
            transcript: rec.transcript,
            out_a,
            out_b,
            out_open: rec.out_open,
        }
    };
    p.id = format!("{}~flipfix({}/{})", base.id, c, 1u64 << t);
    p.kind = ProtocolKind::Direct(Arc::new(run));
    p
}

// ---------------------------------------------------------------------------
// majority amplification
// ---------------------------------------------------------------------------

/// Most frequent outcome; ties prefer values over silence and smaller values
/// first.
fn majority(outs: &[Option<Bits>]) -> RawOutput {
    let mut counts: std::collections::BTreeMap<&Option<Bits>, usize> =
        std::collections::BTreeMap::new();
    for o in outs {
        *counts.entry(o).or_insert(0) += 1;
    }
    let best = counts
        .into_iter()
        .max_by(|(va, ca), (vb, cb)| {
            ca.cmp(cb).then_with(|| match (va, vb) {
                (Some(a), Some(b)) => b.cmp(a),
                (Some(_), None) => std::cmp::Ordering::Greater,
                (None, Some(_)) => std::cmp::Ordering::Less,
                (None, None) => std::cmp::Ordering::Equal,
            })
        })
        .map(|(v, _)| v.clone())
        .expect("at least one repetition");
    match best {
        Some(v) => RawOutput::Value(v),
        None => RawOutput::Top,
    }
}

/// Independent repetitions plus per-outputter majority vote, for the models
/// where the outputting party (or the observer) sees each run's outcome.
pub fn amplify_standard(base: &Protocol, eps: f64, eps_target: f64) -> Result<Amplified, EngineError> {
    check_range(eps, eps_target);
    use OutputModel::*;
    if !matches!(base.model, Open | Local | UniAlice | UniBob) {
        return Err(EngineError::WrongModel(base.model));
    }
    let reps = standard_reps(eps, eps_target);
    let model = base.model;
    let inner = base.clone();
    let run = move |x: &Bits, y: &Bits, tapes: &mut TapeSet| -> DirectRun {
        let mut wire = Bits::empty();
        let mut alice = Vec::with_capacity(reps);
        let mut bob = Vec::with_capacity(reps);
        let mut open = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut sub = child_tapes(tapes);
            let rec = execute(&inner, x, y, &mut sub);
            wire = wire.concat(&rec.transcript);
            alice.push(value_of(&rec.out_a));
            bob.push(match &rec.out_b {
                Some(RawOutput::Value(v)) => Some(v.clone()),
                _ => None,
            });
            open.push(match &rec.out_open {
                Some(RawOutput::Value(v)) => Some(v.clone()),
                _ => None,
            });
        }
        let (out_a, out_b, out_open) = match model {
            Open => (None, None, Some(majority(&open))),
            Local => (Some(majority(&alice)), Some(majority(&bob)), None),
            UniAlice => (Some(majority(&alice)), Some(RawOutput::Top), None),
            UniBob => (Some(RawOutput::Top), Some(majority(&bob)), None),
            _ => unreachable!(),
        };
        DirectRun {
            transcript: wire,
            out_a,
            out_b,
            out_open,
        }
    };
    let plan = AmplifyPlan {
        scheme: "majority",
        repetitions: reps,
        ledger: vec![(
            "vote concentration (both outputters)".into(),
            crate::engine::rat_from_f64(eps_target),
        )],
        eps_target,
        cost_bound: reps as u64 * base.max_cost,
    };
    plan.check();
    Ok(Amplified {
        protocol: Protocol {
            id: format!("majority({}x {})", reps, base.id),
            model,
            output_len: base.output_len,
            top_in_range: base.top_in_range,
            input_len_a: base.input_len_a,
            input_len_b: base.input_len_b,
            budgets: TapeBudgets {
                public: 64 * reps as u64 + base.budgets.public * reps as u64,
                private_a: 64 * reps as u64 + base.budgets.private_a * reps as u64,
                private_b: 64 * reps as u64 + base.budgets.private_b * reps as u64,
            },
            max_cost: reps as u64 * base.max_cost,
            kind: ProtocolKind::Direct(Arc::new(run)),
        },
        plan,
    })
}

// ---------------------------------------------------------------------------
// one-out-of-two: normalization and candidate reconciliation
// ---------------------------------------------------------------------------

/// Force exactly one speaker per run at the price of one announce bit: Alice
/// says whether she speaks; on a silent run Bob speaks a uniform value from
/// his own tape. Valid correct runs are never altered, so error cannot grow.
pub fn oot_normalize(base: &Protocol) -> Protocol {
    assert_eq!(base.model, OutputModel::OneOutOfTwo);
    let k = base.output_len;
    let mut budgets = base.budgets;
    let z_off = budgets.private_b as usize;
    budgets.private_b += k as u64;
    match &base.kind {
        ProtocolKind::Tree(rules) => {
            let base_owner = rules.owner.clone();
            let inner_depth = move |w: &Bits| -> Option<usize> {
                // depth at which the base tree reaches a leaf along w
                for d in 0..=w.len() {
                    if base_owner(&w.slice(0, d)).is_none() {
                        return Some(d);
                    }
                }
                None
            };
            let owner = {
                let inner_depth = inner_depth.clone();
                let base_owner = rules.owner.clone();
                move |w: &Bits| match inner_depth(w) {
                    Some(d) if w.len() == d => Some(Player::Alice), // announce bit
                    Some(_) => None,
                    None => base_owner(w),
                }
            };
            let message = {
                let inner_depth = inner_depth.clone();
                let base_msg = rules.message.clone();
                let base_out_a = rules.out_a.clone().expect("oot protocols have out_a");
                move |who: Player,
                      w: &Bits,
                      input: &Bits,
                      own: &mut Tape,
                      public: &mut Tape|
                      -> bool {
                    if inner_depth(w) == Some(w.len()) {
                        base_out_a(w, input, own, public) != RawOutput::Top
                    } else {
                        base_msg(who, w, input, own, public)
                    }
                }
            };
            let out_a = {
                let base_out_a = rules.out_a.clone().unwrap();
                move |w: &Bits, input: &Bits, own: &mut Tape, public: &mut Tape| -> RawOutput {
                    let leaf = w.slice(0, w.len() - 1);
                    if w.get(w.len() - 1) {
                        base_out_a(&leaf, input, own, public)
                    } else {
                        RawOutput::Top
                    }
                }
            };
            let out_b = {
                let base_out_b = rules.out_b.clone().expect("oot protocols have out_b");
                move |w: &Bits, input: &Bits, own: &mut Tape, public: &mut Tape| -> RawOutput {
                    if w.get(w.len() - 1) {
                        return RawOutput::Top;
                    }
                    let leaf = w.slice(0, w.len() - 1);
                    match base_out_b(&leaf, input, own, public) {
                        RawOutput::Top => {
                            let mut z = Bits::new(k);
                            for j in 0..k {
                                z.set(j, own.at(z_off + j));
                            }
                            RawOutput::Value(z)
                        }
                        v => v,
                    }
                }
            };
            Protocol {
                id: format!("{}+speak", base.id),
                model: OutputModel::OneOutOfTwo,
                output_len: k,
                top_in_range: base.top_in_range,
                input_len_a: base.input_len_a,
                input_len_b: base.input_len_b,
                budgets,
                max_cost: base.max_cost + 1,
                kind: ProtocolKind::Tree(TreeRules {
                    owner: Arc::new(owner),
                    message: Arc::new(message),
                    out_a: Some(Arc::new(out_a)),
                    out_b: Some(Arc::new(out_b)),
                    out_open: None,
                }),
            }
        }
        ProtocolKind::Direct(f) => {
            let f = f.clone();
            let run = move |x: &Bits, y: &Bits, tapes: &mut TapeSet| -> DirectRun {
                let rec = f(x, y, tapes);
                let alice_speaks = matches!(rec.out_a, Some(RawOutput::Value(_)));
                let mut wire = rec.transcript.clone();
                wire.push(alice_speaks);
                let (out_a, out_b) = if alice_speaks {
                    (rec.out_a, Some(RawOutput::Top))
                } else {
                    let bob = match rec.out_b {
                        Some(RawOutput::Value(v)) => v,
                        _ => {
                            let mut z = Bits::new(k);
                            for j in 0..k {
                                z.set(j, tapes.b.at(z_off + j));
                            }
                            z
                        }
                    };
                    (Some(RawOutput::Top), Some(RawOutput::Value(bob)))
                };
                DirectRun {
                    transcript: wire,
                    out_a,
                    out_b,
                    out_open: None,
                }
            };
            Protocol {
                id: format!("{}+speak", base.id),
                model: OutputModel::OneOutOfTwo,
                output_len: k,
                top_in_range: base.top_in_range,
                input_len_a: base.input_len_a,
                input_len_b: base.input_len_b,
                budgets,
                max_cost: base.max_cost + 1,
                kind: ProtocolKind::Direct(Arc::new(run)),
            }
        }
    }
}

/// One-out-of-two amplification: T normalized runs, per-player candidate
/// values spoken more than T/4 times (at most two each), then a hashed
/// reconciliation where Alice ships her candidates' hashes and counts and
/// Bob announces the slot with the highest combined count.
pub fn amplify_oot(base: &Protocol, eps: f64, eps_target: f64) -> Result<Amplified, EngineError> {
    check_range(eps, eps_target);
    if base.model != OutputModel::OneOutOfTwo {
        return Err(EngineError::WrongModel(base.model));
    }
    let normalized = oot_normalize(base);
    let k = base.output_len;
    let reps = oot_reps(eps, eps_target);
    let m = oot_hash_range(eps_target);
    let hash_bits = crate::engine::ceil_log2_f64(m as f64) as usize;
    let count_bits = crate::engine::ceil_log2_f64((reps + 1) as f64) as usize;
    let layout = 2 + 2 * (hash_bits + count_bits) + 2;
    let bound = reps as u64 * (base.max_cost + 1)
        + 18
        + 4 * crate::engine::ceil_log2_f64(1.0 / eps_target)
        + 4 * crate::engine::ceil_log2_f64(reps as f64);
    assert!(
        reps as u64 * (base.max_cost + 1) + layout as u64 <= bound,
        "candidate exchange must fit the declared bound"
    );
    let inner = normalized.clone();
    let run = move |x: &Bits, y: &Bits, tapes: &mut TapeSet| -> DirectRun {
        let mut wire = Bits::empty();
        let mut spoke_a: std::collections::BTreeMap<Bits, usize> = Default::default();
        let mut spoke_b: std::collections::BTreeMap<Bits, usize> = Default::default();
        let mut first_run: Option<(Player, Bits)> = None;
        for _ in 0..reps {
            let mut sub = child_tapes(tapes);
            let rec = execute(&inner, x, y, &mut sub);
            wire = wire.concat(&rec.transcript);
            let (who, val) = match (&rec.out_a, &rec.out_b) {
                (Some(RawOutput::Value(v)), _) => (Player::Alice, v.clone()),
                (_, Some(RawOutput::Value(v))) => (Player::Bob, v.clone()),
                _ => unreachable!("normalized runs always have a speaker"),
            };
            if first_run.is_none() {
                first_run = Some((who, val.clone()));
            }
            match who {
                Player::Alice => *spoke_a.entry(val).or_insert(0) += 1,
                Player::Bob => *spoke_b.entry(val).or_insert(0) += 1,
            }
        }
        // candidates: spoken strictly more than T/4 times, top two per side
        let candidates = |m: &std::collections::BTreeMap<Bits, usize>| -> Vec<(Bits, usize)> {
            let mut c: Vec<(Bits, usize)> = m
                .iter()
                .filter(|(_, &n)| 4 * n > reps)
                .map(|(v, &n)| (v.clone(), n))
                .collect();
            c.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            c.truncate(2);
            c
        };
        let cand_a = candidates(&spoke_a);
        let cand_b = candidates(&spoke_b);
        debug_assert!(cand_a.len() <= 2 && cand_b.len() <= 2);
        // shared linear hash drawn after the runs
        let mut key = Vec::with_capacity(hash_bits);
        for _ in 0..hash_bits {
            let mut row = Bits::new(k);
            for j in 0..k {
                row.set(j, tapes.public.draw());
            }
            key.push(row);
        }
        let hash = |v: &Bits| -> Bits {
            let mut h = Bits::new(hash_bits);
            for (r, row) in key.iter().enumerate() {
                h.set(r, row.dot2(v));
            }
            h
        };
        // Alice: candidate count then per candidate hash and count
        wire.push(cand_a.len() > 1);
        wire.push(cand_a.len() % 2 == 1);
        for (v, n) in &cand_a {
            let hw = hash(v);
            for i in 0..hash_bits {
                wire.push(hw.get(i));
            }
            let cw = Bits::from_uint_be(*n as u64, count_bits);
            for i in 0..count_bits {
                wire.push(cw.get(i));
            }
        }
        // Bob combines: ties prefer the smaller hash, then Alice's side
        struct Entry {
            total: usize,
            hash: Bits,
            alice_side: bool,
            index: usize,
        }
        let a_entries: Vec<(Bits, usize)> =
            cand_a.iter().map(|(v, n)| (hash(v), *n)).collect();
        let mut entries: Vec<Entry> = Vec::new();
        for (i, (h, n)) in a_entries.iter().enumerate() {
            let cross: usize = cand_b
                .iter()
                .filter(|(v, _)| hash(v) == *h)
                .map(|(_, n)| n)
                .sum();
            entries.push(Entry {
                total: n + cross,
                hash: h.clone(),
                alice_side: true,
                index: i,
            });
        }
        for (j, (v, n)) in cand_b.iter().enumerate() {
            let hv = hash(v);
            let cross: usize = a_entries
                .iter()
                .filter(|(h, _)| *h == hv)
                .map(|(_, n)| n)
                .sum();
            entries.push(Entry {
                total: n + cross,
                hash: hv,
                alice_side: false,
                index: j,
            });
        }
        let winner = entries.into_iter().max_by(|a, b| {
            a.total
                .cmp(&b.total)
                .then_with(|| b.hash.cmp(&a.hash))
                .then_with(|| a.alice_side.cmp(&b.alice_side))
                .then_with(|| b.index.cmp(&a.index))
        });
        let (side_alice, index) = match winner {
            Some(e) => (e.alice_side, e.index),
            None => (first_run.as_ref().map(|(w, _)| *w) == Some(Player::Alice), 0),
        };
        wire.push(side_alice);
        wire.push(index == 1);
        let speak = |cands: &[(Bits, usize)], fallback_mine: bool| -> Bits {
            cands
                .get(index)
                .map(|(v, _)| v.clone())
                .or_else(|| {
                    if fallback_mine {
                        first_run.as_ref().map(|(_, v)| v.clone())
                    } else {
                        None
                    }
                })
                .unwrap_or_else(|| Bits::new(k))
        };
        let (out_a, out_b) = if side_alice {
            (
                Some(RawOutput::Value(speak(&cand_a, true))),
                Some(RawOutput::Top),
            )
        } else {
            (
                Some(RawOutput::Top),
                Some(RawOutput::Value(speak(&cand_b, true))),
            )
        };
        DirectRun {
            transcript: wire,
            out_a,
            out_b,
            out_open: None,
        }
    };
    let t = crate::engine::rat_from_f64(eps_target);
    let quarter = |n: u64| &t * BigRational::new(BigInt::from(n), BigInt::from(4));
    let plan = AmplifyPlan {
        scheme: "oot-candidates",
        repetitions: reps,
        ledger: vec![
            ("speak-count concentration".into(), quarter(2)),
            ("candidate hash collisions".into(), quarter(1)),
            ("slack".into(), quarter(1)),
        ],
        eps_target,
        cost_bound: bound,
    };
    plan.check();
    Ok(Amplified {
        protocol: Protocol {
            id: format!("oot-candidates({}x {})", reps, base.id),
            model: OutputModel::OneOutOfTwo,
            output_len: k,
            top_in_range: base.top_in_range,
            input_len_a: base.input_len_a,
            input_len_b: base.input_len_b,
            budgets: TapeBudgets {
                public: 64 * reps as u64 + (hash_bits * k) as u64,
                private_a: 64 * reps as u64,
                private_b: 64 * reps as u64,
            },
            max_cost: bound,
            kind: ProtocolKind::Direct(Arc::new(run)),
        },
        plan,
    })
}

// ---------------------------------------------------------------------------
// XOR: aggregation through the clustering solver
// ---------------------------------------------------------------------------

/// XOR-model amplification: C runs feed a gap-majority instance over the
/// output pairs (promised gap 1/4 + eps/2), solved by the clustering solver;
/// the players output their halves of the winning run. All aggregation
/// traffic is digests and verdicts, so the overhead never scales with k.
pub fn amplify_xor(base: &Protocol, eps: f64, eps_target: f64) -> Result<Amplified, EngineError> {
    check_range(eps, eps_target);
    if base.model != OutputModel::Xor {
        return Err(EngineError::WrongModel(base.model));
    }
    let reps = xor_reps(eps, eps_target);
    let k = base.output_len;
    let solver = randomgraph_protocol(reps, k, eps_target / 2.0);
    let solver_cost = solver.max_cost;
    let inner = base.clone();
    let run = move |x: &Bits, y: &Bits, tapes: &mut TapeSet| -> DirectRun {
        let mut wire = Bits::empty();
        let mut rows_a = Bits::new(reps * k);
        let mut rows_b = Bits::new(reps * k);
        for r in 0..reps {
            let mut sub = child_tapes(tapes);
            let rec = execute(&inner, x, y, &mut sub);
            wire = wire.concat(&rec.transcript);
            let va = expect_value(&rec.out_a, "xor base");
            let vb = expect_value(&rec.out_b, "xor base");
            for j in 0..k {
                rows_a.set(r * k + j, va.get(j));
                rows_b.set(r * k + j, vb.get(j));
            }
        }
        let mut sub = child_tapes(tapes);
        let rec = execute(&solver, &rows_a, &rows_b, &mut sub);
        DirectRun {
            transcript: wire.concat(&rec.transcript),
            out_a: rec.out_a,
            out_b: rec.out_b,
            out_open: None,
        }
    };
    let t = crate::engine::rat_from_f64(eps_target);
    let half = &t / BigRational::from(BigInt::from(2));
    let plan = AmplifyPlan {
        scheme: "xor-cluster",
        repetitions: reps,
        ledger: vec![
            ("run batch off promise".into(), half.clone()),
            ("cluster solver".into(), half),
        ],
        eps_target,
        cost_bound: reps as u64 * base.max_cost + solver_cost,
    };
    plan.check();
    Ok(Amplified {
        protocol: Protocol {
            id: format!("xor-cluster({}x {})", reps, base.id),
            model: OutputModel::Xor,
            output_len: k,
            top_in_range: false,
            input_len_a: base.input_len_a,
            input_len_b: base.input_len_b,
            budgets: TapeBudgets {
                public: 64 * (reps as u64 + 1),
                private_a: 64 * (reps as u64 + 1),
                private_b: 64 * (reps as u64 + 1),
            },
            max_cost: reps as u64 * base.max_cost + solver_cost,
            kind: ProtocolKind::Direct(Arc::new(run)),
        },
        plan,
    })
}

/// The instance an XOR amplification feeds to the solver, exposed for
/// promise checking in tests.
pub fn xor_run_instance(
    base: &Protocol,
    eps: f64,
    eps_target: f64,
    x: &Bits,
    y: &Bits,
    seed: u64,
) -> GapMajInstance {
    let reps = xor_reps(eps, eps_target);
    let mut tapes = TapeSet::from_seed(seed);
    let mut rows_a = Vec::with_capacity(reps);
    let mut rows_b = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut sub = child_tapes(&mut tapes);
        let rec = execute(base, x, y, &mut sub);
        rows_a.push(expect_value(&rec.out_a, "xor base"));
        rows_b.push(expect_value(&rec.out_b, "xor base"));
    }
    let gap = crate::engine::rat_from_f64(0.25)
        + crate::engine::rat_from_f64(eps) / BigRational::from(BigInt::from(2));
    GapMajInstance::uniform(rows_a, rows_b, gap)
}

// ---------------------------------------------------------------------------
// split: compatibility gadgets and the mirrored aggregation
// ---------------------------------------------------------------------------

/// One player's symbol in a split row: a bit or a hole.
pub type SplitSym = Option<bool>;

/// Per-position gadget applied by Alice to her symbols of two rows. Chosen
/// so that for valid row pairs g_a(a_i, a_j) = g_b(b_i, b_j) holds exactly
/// when the weaves agree at that position, and so that positions where a
/// row is invalid never masquerade as matches.
pub fn gadget_a(ai: SplitSym, aj: SplitSym) -> u8 {
    match (ai, aj) {
        (Some(x), Some(y)) => {
            if x == y {
                0
            } else {
                3
            }
        }
        (Some(false), None) | (None, Some(false)) => 1,
        (Some(true), None) | (None, Some(true)) => 2,
        (None, None) => 0,
    }
}

/// Bob's side of the gadget pair.
pub fn gadget_b(bi: SplitSym, bj: SplitSym) -> u8 {
    match (bi, bj) {
        (Some(x), Some(y)) => {
            if x == y {
                0
            } else {
                3
            }
        }
        (None, Some(false)) | (Some(false), None) => 1,
        (None, Some(true)) | (Some(true), None) => 2,
        (None, None) => 0,
    }
}

/// Both tables, as used by the split aggregation.
pub fn split_gadgets() -> (
    fn(SplitSym, SplitSym) -> u8,
    fn(SplitSym, SplitSym) -> u8,
) {
    (gadget_a, gadget_b)
}

/// Gadget symbols of a row pair, packed two bits per position for hashing.
pub fn gadget_string(g: fn(SplitSym, SplitSym) -> u8, ri: &SplitString, rj: &SplitString) -> Bits {
    let k = ri.len();
    assert_eq!(k, rj.len());
    let mut out = Bits::new(2 * k);
    for p in 0..k {
        let s = g(ri.get(p), rj.get(p));
        out.set(2 * p, s & 2 != 0);
        out.set(2 * p + 1, s & 1 != 0);
    }
    out
}

/// Split-model amplification mirroring the XOR scheme: C runs, clustering by
/// equality of gadget strings, majority vote against the first candidate,
/// and the winning run's shares as outputs.
pub fn amplify_split(base: &Protocol, eps: f64, eps_target: f64) -> Result<Amplified, EngineError> {
    check_range(eps, eps_target);
    if base.model != OutputModel::Split {
        return Err(EngineError::WrongModel(base.model));
    }
    let reps = split_reps(eps, eps_target);
    let k = base.output_len;
    let et = eps_target / 2.0; // clustering half of the budget
    let t_samples = sample_count(et);
    let edge_slots = (2.0 * er_constant() * t_samples as f64).floor() as usize;
    let fifth = crate::engine::rat_from_f64(et) / BigRational::from(BigInt::from(5));
    let digest = |m: usize| {
        crate::engine::ceil_log2_rat(&(BigRational::from(BigInt::from(3 * m as u64)) / &fifth))
            as usize
    };
    let edge_digest = digest(edge_slots);
    let vote_digest = digest(reps);
    let overhead =
        1 + (edge_slots * (edge_digest + 1)) as u64 + (reps * (vote_digest + 1)) as u64;
    let uniform_w = Arc::new(vec![1u128; reps]);
    let uniform_total = reps as u128;
    let inner = base.clone();
    let run = move |x: &Bits, y: &Bits, tapes: &mut TapeSet| -> DirectRun {
        let mut wire = Bits::empty();
        let mut rows_a: Vec<SplitString> = Vec::with_capacity(reps);
        let mut rows_b: Vec<SplitString> = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut sub = child_tapes(tapes);
            let rec = execute(&inner, x, y, &mut sub);
            wire = wire.concat(&rec.transcript);
            rows_a.push(expect_share(&rec.out_a, "split base"));
            rows_b.push(expect_share(&rec.out_b, "split base"));
        }
        let mut agg = child_tapes(tapes);
        let public = &mut agg.public;
        // sample T row indices
        let samples: Vec<usize> = (0..t_samples)
            .map(|j| {
                crate::gapmaj::mu_sample(
                    public,
                    j * crate::gapmaj::sample_block_bits(uniform_total),
                    &uniform_w,
                    uniform_total,
                )
            })
            .collect();
        // sparse graph coins, dense enough for a half-sample class
        let p_edge = 2.0 * er_constant() / t_samples as f64;
        let thresh = (p_edge * 4294967296.0).floor() as u64;
        let mut pos = t_samples * crate::gapmaj::sample_block_bits(uniform_total);
        let mut edges = Vec::new();
        for i in 0..t_samples {
            for j in (i + 1)..t_samples {
                if public.word_at(pos, 32) < thresh {
                    edges.push((i, j));
                }
                pos += 32;
            }
        }
        let abort = edges.len() > edge_slots;
        wire.push(abort);
        if abort {
            let empty = SplitString::holes(k);
            return DirectRun {
                transcript: wire,
                out_a: Some(RawOutput::Share(SplitString::full(Bits::new(k)))),
                out_b: Some(RawOutput::Share(empty)),
                out_open: None,
            };
        }
        let edge_scheme = HashScheme {
            input_len: 2 * k,
            output_len: edge_digest,
            tape_offset: pos,
        };
        let mut uf = UnionFind::new(t_samples);
        for slot in 0..edge_slots {
            let (ga, gb) = match edges.get(slot) {
                Some(&(i, j)) => (
                    gadget_string(gadget_a, &rows_a[samples[i]], &rows_a[samples[j]]),
                    gadget_string(gadget_b, &rows_b[samples[i]], &rows_b[samples[j]]),
                ),
                None => (Bits::new(2 * k), Bits::new(2 * k)),
            };
            let da = edge_scheme.apply(public, &ga);
            for r in 0..edge_digest {
                wire.push(da.get(r));
            }
            let verdict = edge_scheme.apply(public, &gb) == da;
            wire.push(verdict);
            if verdict {
                if let Some(&(i, j)) = edges.get(slot) {
                    uf.union(i, j);
                }
            }
        }
        let quorum = t_samples * 11 / 30 + 1;
        let reps_found = uf.component_reps(quorum);
        let cand1 = samples[*reps_found.first().unwrap_or(&0)];
        let cand2 = reps_found.get(1).map(|&r| samples[r]);
        let vote_scheme = HashScheme {
            input_len: 2 * k,
            output_len: vote_digest,
            tape_offset: pos + edge_digest * 2 * k,
        };
        let mut agree = 0usize;
        for i in 0..reps {
            let ga = gadget_string(gadget_a, &rows_a[i], &rows_a[cand1]);
            let gb = gadget_string(gadget_b, &rows_b[i], &rows_b[cand1]);
            let da = vote_scheme.apply(public, &ga);
            for r in 0..vote_digest {
                wire.push(da.get(r));
            }
            let verdict = vote_scheme.apply(public, &gb) == da;
            wire.push(verdict);
            agree += verdict as usize;
        }
        let winner = if 2 * agree >= reps {
            cand1
        } else {
            cand2.unwrap_or(cand1)
        };
        DirectRun {
            transcript: wire,
            out_a: Some(RawOutput::Share(rows_a[winner].clone())),
            out_b: Some(RawOutput::Share(rows_b[winner].clone())),
            out_open: None,
        }
    };
    let t = crate::engine::rat_from_f64(eps_target);
    let half = &t / BigRational::from(BigInt::from(2));
    let plan = AmplifyPlan {
        scheme: "split-cluster",
        repetitions: reps,
        ledger: vec![
            ("run batch off promise".into(), half.clone()),
            ("gadget clustering".into(), half),
        ],
        eps_target,
        cost_bound: reps as u64 * base.max_cost + overhead,
    };
    plan.check();
    Ok(Amplified {
        protocol: Protocol {
            id: format!("split-cluster({}x {})", reps, base.id),
            model: OutputModel::Split,
            output_len: k,
            top_in_range: false,
            input_len_a: base.input_len_a,
            input_len_b: base.input_len_b,
            budgets: TapeBudgets {
                public: 64 * (reps as u64 + 1),
                private_a: 64 * (reps as u64 + 1),
                private_b: 64 * (reps as u64 + 1),
            },
            max_cost: reps as u64 * base.max_cost + overhead,
            kind: ProtocolKind::Direct(Arc::new(run)),
        },
        plan,
    })
}

// ---------------------------------------------------------------------------
// direct sum: amplification priced at the single-coordinate problem
// ---------------------------------------------------------------------------

/// Cost decomposition of the direct-sum scheme. The expensive
/// (1/2-eps)^{-2} factor multiplies only the single-coordinate runs and the
/// final exchange, never the k-bit base runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DirectSumPlanParts {
    pub t_runs: usize,
    pub edge_slots: usize,
    pub edge_digest: usize,
    pub ftfd_cost: u64,
    pub coord_runs: usize,
}

impl DirectSumPlanParts {
    pub fn new(k: usize, eps: f64, eps_target: f64) -> Self {
        let t_runs = (50.0 * (12.0 / eps_target).ln()).ceil() as usize;
        let edge_slots = (2.0 * er_constant() * t_runs as f64).floor() as usize;
        let sixth = crate::engine::rat_from_f64(eps_target) / BigRational::from(BigInt::from(6));
        let edge_digest = crate::engine::ceil_log2_rat(
            &(BigRational::from(BigInt::from(3 * edge_slots as u64)) / &sixth),
        ) as usize;
        let ftfd_cost = ftfd_protocol(k, eps_target / 6.0).max_cost;
        let coord_runs =
            (8.0 * eps / (0.5 - eps).powi(2) * (12.0 / eps_target).ln()).ceil() as usize;
        DirectSumPlanParts {
            t_runs,
            edge_slots,
            edge_digest,
            ftfd_cost,
            coord_runs,
        }
    }

    /// Everything multiplied by the (1/2-eps)^{-2} scale: the coordinate
    /// runs plus the count exchange and its two routing bits.
    pub fn scaled_term(&self, coord_cost: u64) -> u64 {
        self.coord_runs as u64 * coord_cost + self.coord_runs as u64 + 2
    }

    pub fn cost_bound(&self, f_cost: u64, coord_cost: u64) -> u64 {
        self.t_runs as u64 * f_cost
            + 1
            + (self.edge_slots * (self.edge_digest + 1)) as u64
            + self.ftfd_cost
            + self.scaled_term(coord_cost)
    }
}

/// Amplify f = g XOR-composed over k coordinates by clustering whole-f runs,
/// locating a critical coordinate where the two surviving candidates differ,
/// and settling it with repeated g runs plus one count exchange.
pub fn amplify_xor_direct_sum(
    p_f: &Protocol,
    p_g: &Protocol,
    eps: f64,
    eps_target: f64,
) -> Result<Amplified, EngineError> {
    check_range(eps, eps_target);
    if p_f.model != OutputModel::Xor || p_g.model != OutputModel::Xor {
        return Err(EngineError::WrongModel(p_f.model));
    }
    let k = p_f.output_len;
    assert_eq!(p_g.output_len, 1, "coordinate protocol answers one bit");
    assert_eq!(p_f.input_len_a % k, 0, "f inputs split into k blocks");
    let (gla, glb) = (p_f.input_len_a / k, p_f.input_len_b / k);
    assert_eq!(p_g.input_len_a, gla);
    assert_eq!(p_g.input_len_b, glb);
    let parts = DirectSumPlanParts::new(k, eps, eps_target);
    let finder = ftfd_protocol(k, eps_target / 6.0);
    let inner_f = p_f.clone();
    let inner_g = p_g.clone();
    let parts_c = parts;
    let run = move |x: &Bits, y: &Bits, tapes: &mut TapeSet| -> DirectRun {
        let mut wire = Bits::empty();
        let mut rows_a: Vec<Bits> = Vec::with_capacity(parts_c.t_runs);
        let mut rows_b: Vec<Bits> = Vec::with_capacity(parts_c.t_runs);
        for _ in 0..parts_c.t_runs {
            let mut sub = child_tapes(tapes);
            let rec = execute(&inner_f, x, y, &mut sub);
            wire = wire.concat(&rec.transcript);
            rows_a.push(expect_value(&rec.out_a, "direct-sum base"));
            rows_b.push(expect_value(&rec.out_b, "direct-sum base"));
        }
        // cluster the runs themselves along a sparse graph, dense enough
        // that the correct runs stay one component even at eps near 1/2
        let mut agg = child_tapes(tapes);
        let p_edge = 2.0 * er_constant() / parts_c.t_runs as f64;
        let thresh = (p_edge * 4294967296.0).floor() as u64;
        let mut pos = 0usize;
        let mut edges = Vec::new();
        for i in 0..parts_c.t_runs {
            for j in (i + 1)..parts_c.t_runs {
                if agg.public.word_at(pos, 32) < thresh {
                    edges.push((i, j));
                }
                pos += 32;
            }
        }
        let abort = edges.len() > parts_c.edge_slots;
        wire.push(abort);
        if abort {
            return DirectRun {
                transcript: wire,
                out_a: Some(RawOutput::Value(Bits::new(k))),
                out_b: Some(RawOutput::Value(Bits::new(k))),
                out_open: None,
            };
        }
        let scheme = HashScheme {
            input_len: k,
            output_len: parts_c.edge_digest,
            tape_offset: pos,
        };
        let mut uf = UnionFind::new(parts_c.t_runs);
        for slot in 0..parts_c.edge_slots {
            let (sa, sb) = match edges.get(slot) {
                Some(&(i, j)) => (rows_a[i].xor(&rows_a[j]), rows_b[i].xor(&rows_b[j])),
                None => (Bits::new(k), Bits::new(k)),
            };
            let da = scheme.apply(&mut agg.public, &sa);
            for r in 0..parts_c.edge_digest {
                wire.push(da.get(r));
            }
            let verdict = scheme.apply(&mut agg.public, &sb) == da;
            wire.push(verdict);
            if verdict {
                if let Some(&(i, j)) = edges.get(slot) {
                    uf.union(i, j);
                }
            }
        }
        let quorum = parts_c.t_runs * 11 / 30 + 1;
        let found = uf.component_reps(quorum);
        let i1 = *found.first().unwrap_or(&0);
        let answer = |w: usize| DirectRun {
            transcript: Bits::empty(),
            out_a: Some(RawOutput::Value(rows_a[w].clone())),
            out_b: Some(RawOutput::Value(rows_b[w].clone())),
            out_open: None,
        };
        if found.len() < 2 {
            let mut out = answer(i1);
            out.transcript = wire;
            return out;
        }
        let i2 = found[1];
        // critical coordinate: where the two candidate values differ
        let (ua, ub) = (rows_a[i1].xor(&rows_a[i2]), rows_b[i1].xor(&rows_b[i2]));
        let mut sub = child_tapes(tapes);
        let rec = execute(&finder, &ua, &ub, &mut sub);
        wire = wire.concat(&rec.transcript);
        let l = expect_value(&rec.out_b, "index finder").to_uint_be() as usize;
        if l >= k {
            let mut out = answer(i1);
            out.transcript = wire;
            return out;
        }
        // settle coordinate l with repeated single-coordinate runs
        let (xl, yl) = (
            x.slice(l * gla, (l + 1) * gla),
            y.slice(l * glb, (l + 1) * glb),
        );
        let mut alpha = Bits::new(parts_c.coord_runs);
        let mut ones = 0usize;
        for r in 0..parts_c.coord_runs {
            let mut sub = child_tapes(tapes);
            let rec = execute(&inner_g, &xl, &yl, &mut sub);
            wire = wire.concat(&rec.transcript);
            let ga = expect_value(&rec.out_a, "coordinate base").get(0);
            let gb = expect_value(&rec.out_b, "coordinate base").get(0);
            alpha.set(r, ga);
            ones += (ga ^ gb) as usize;
        }
        // Alice ships her bits (the exchange half of the distance count),
        // plus her share of candidate 1 at coordinate l
        for r in 0..parts_c.coord_runs {
            wire.push(alpha.get(r));
        }
        wire.push(rows_a[i1].get(l));
        // Bob: the distance count decides g_l; candidate whose value agrees
        let g_l = 2 * ones >= parts_c.coord_runs;
        let v1_l = rows_a[i1].get(l) ^ rows_b[i1].get(l);
        let winner_is_i2 = v1_l != g_l;
        wire.push(winner_is_i2);
        let mut out = answer(if winner_is_i2 { i2 } else { i1 });
        out.transcript = wire;
        out
    };
    let sixth = crate::engine::rat_from_f64(eps_target) / BigRational::from(BigInt::from(6));
    let plan = AmplifyPlan {
        scheme: "direct-sum",
        repetitions: parts.t_runs,
        ledger: vec![
            ("run sampling tails".into(), sixth.clone()),
            ("clustering".into(), sixth.clone()),
            ("critical index".into(), sixth.clone()),
            ("coordinate votes".into(), sixth.clone()),
            (
                "slack".into(),
                BigRational::from(BigInt::from(2)) * &sixth,
            ),
        ],
        eps_target,
        cost_bound: parts.cost_bound(p_f.max_cost, p_g.max_cost),
    };
    plan.check();
    Ok(Amplified {
        protocol: Protocol {
            id: format!("direct-sum({}x {}; {})", parts.t_runs, p_f.id, p_g.id),
            model: OutputModel::Xor,
            output_len: k,
            top_in_range: false,
            input_len_a: p_f.input_len_a,
            input_len_b: p_f.input_len_b,
            budgets: TapeBudgets {
                public: 64 * (parts.t_runs + parts.coord_runs + 2) as u64,
                private_a: 64 * (parts.t_runs + parts.coord_runs + 2) as u64,
                private_b: 64 * (parts.t_runs + parts.coord_runs + 2) as u64,
            },
            max_cost: parts.cost_bound(p_f.max_cost, p_g.max_cost),
            kind: ProtocolKind::Direct(Arc::new(run)),
        },
        plan,
    })
}

// ---------------------------------------------------------------------------
// model conversions
// ---------------------------------------------------------------------------

/// Convert a protocol along one of the supported model edges, paying the
/// listed wire price and never increasing error:
/// Local/UniAlice/UniBob -> Open (+answer bits), OneOutOfTwo -> Open
/// (+answer bits + 1), Split -> OneOutOfTwo (+floor(k/2)+1),
/// Xor -> UniBob or UniAlice (+k).
pub fn convert(base: &Protocol, target: OutputModel) -> Result<Protocol, EngineError> {
    use OutputModel::*;
    let k = base.output_len;
    let w = wire_len(k, base.top_in_range);
    let inner = base.clone();
    let (extra, run): (u64, Box<dyn Fn(&Bits, &Bits, &mut TapeSet) -> DirectRun + Send + Sync>) =
        match (base.model, target) {
            (Local, Open) | (UniAlice, Open) | (UniBob, Open) => {
                let top = base.top_in_range;
                let side = base.model;
                (
                    w as u64,
                    Box::new(move |x, y, tapes| {
                        let rec = execute(&inner, x, y, tapes);
                        let sym = match if side == UniBob {
                            &rec.out_b
                        } else {
                            &rec.out_a
                        } {
                            Some(RawOutput::Value(v)) => Symbol::Value(v.clone()),
                            _ => Symbol::Top,
                        };
                        let coded = wire_encode(&sym, k, top);
                        let mut wire = rec.transcript.clone();
                        for i in 0..coded.len() {
                            wire.push(coded.get(i));
                        }
                        DirectRun {
                            transcript: wire,
                            out_a: None,
                            out_b: None,
                            out_open: Some(match wire_decode(&coded, k, top) {
                                Symbol::Value(v) => RawOutput::Value(v),
                                Symbol::Top => RawOutput::Top,
                            }),
                        }
                    }),
                )
            }
            (OneOutOfTwo, Open) => {
                let normalized = oot_normalize(base);
                (
                    (k + 1) as u64,
                    Box::new(move |x, y, tapes| {
                        let rec = execute(&normalized, x, y, tapes);
                        let val = match (&rec.out_a, &rec.out_b) {
                            (Some(RawOutput::Value(v)), _) => v.clone(),
                            (_, Some(RawOutput::Value(v))) => v.clone(),
                            _ => unreachable!("normalized runs always speak"),
                        };
                        let mut wire = rec.transcript.clone();
                        for i in 0..k {
                            wire.push(val.get(i));
                        }
                        DirectRun {
                            transcript: wire,
                            out_a: None,
                            out_b: None,
                            out_open: Some(RawOutput::Value(val)),
                        }
                    }),
                )
            }
            (Split, OneOutOfTwo) => {
                let half = k / 2;
                (
                    (half + 1) as u64,
                    Box::new(move |x, y, tapes| {
                        let rec = execute(&inner, x, y, tapes);
                        let sa = expect_share(&rec.out_a, "split base");
                        let sb = expect_share(&rec.out_b, "split base");
                        let alice_sends = sa.mask.count_ones() as usize <= half;
                        let mut wire = rec.transcript.clone();
                        wire.push(alice_sends);
                        let (sender, receiver) = if alice_sends { (&sa, &sb) } else { (&sb, &sa) };
                        let mut stream = Vec::new();
                        for p in 0..k {
                            if let Some(v) = sender.get(p) {
                                stream.push(v);
                            }
                        }
                        stream.truncate(half);
                        while stream.len() < half {
                            stream.push(false);
                        }
                        for &v in &stream {
                            wire.push(v);
                        }
                        // receiver fills own holes in order with the stream
                        let mut full = receiver.vals.clone();
                        let mut si = 0usize;
                        for p in 0..k {
                            if receiver.get(p).is_none() {
                                full.set(p, si < half && stream[si]);
                                si += 1;
                            }
                        }
                        let (out_a, out_b) = if alice_sends {
                            (Some(RawOutput::Top), Some(RawOutput::Value(full)))
                        } else {
                            (Some(RawOutput::Value(full)), Some(RawOutput::Top))
                        };
                        DirectRun {
                            transcript: wire,
                            out_a,
                            out_b,
                            out_open: None,
                        }
                    }),
                )
            }
            (Xor, UniBob) | (Xor, UniAlice) => {
                let to_bob = target == UniBob;
                (
                    k as u64,
                    Box::new(move |x, y, tapes| {
                        let rec = execute(&inner, x, y, tapes);
                        let va = expect_value(&rec.out_a, "xor base");
                        let vb = expect_value(&rec.out_b, "xor base");
                        let sent = if to_bob { &va } else { &vb };
                        let mut wire = rec.transcript.clone();
                        for i in 0..k {
                            wire.push(sent.get(i));
                        }
                        let combined = RawOutput::Value(va.xor(&vb));
                        let (out_a, out_b) = if to_bob {
                            (Some(RawOutput::Top), Some(combined))
                        } else {
                            (Some(combined), Some(RawOutput::Top))
                        };
                        DirectRun {
                            transcript: wire,
                            out_a,
                            out_b,
                            out_open: None,
                        }
                    }),
                )
            }
            _ => return Err(EngineError::WrongModel(base.model)),
        };
    let mut budgets = base.budgets;
    if base.model == OneOutOfTwo && target == Open {
        budgets.private_b += k as u64; // normalization fallback value
    }
    Ok(Protocol {
        id: format!("{}->{}", base.id, target),
        model: target,
        output_len: k,
        top_in_range: base.top_in_range && matches!(target, Open | Local | UniAlice | UniBob),
        input_len_a: base.input_len_a,
        input_len_b: base.input_len_b,
        budgets,
        max_cost: base.max_cost + extra,
        kind: ProtocolKind::Direct(Arc::new(move |x: &Bits, y: &Bits, t: &mut TapeSet| {
            run(x, y, t)
        })),
    })
}

/// Two unilateral protocols, one per side, welded into a local protocol.
/// Both answers are correct with probability at least 1 - 2 eps.
pub fn pair_to_local(p_a: &Protocol, p_b: &Protocol) -> Result<Protocol, EngineError> {
    if p_a.model != OutputModel::UniAlice {
        return Err(EngineError::WrongModel(p_a.model));
    }
    if p_b.model != OutputModel::UniBob {
        return Err(EngineError::WrongModel(p_b.model));
    }
    assert_eq!(p_a.output_len, p_b.output_len);
    assert_eq!(p_a.input_len_a, p_b.input_len_a);
    assert_eq!(p_a.input_len_b, p_b.input_len_b);
    let (ia, ib) = (p_a.clone(), p_b.clone());
    let run = move |x: &Bits, y: &Bits, tapes: &mut TapeSet| -> DirectRun {
        let mut sub = child_tapes(tapes);
        let ra = execute(&ia, x, y, &mut sub);
        let mut sub = child_tapes(tapes);
        let rb = execute(&ib, x, y, &mut sub);
        DirectRun {
            transcript: ra.transcript.concat(&rb.transcript),
            out_a: ra.out_a,
            out_b: rb.out_b,
            out_open: None,
        }
    };
    Ok(Protocol {
        id: format!("local({},{})", p_a.id, p_b.id),
        model: OutputModel::Local,
        output_len: p_a.output_len,
        top_in_range: p_a.top_in_range || p_b.top_in_range,
        input_len_a: p_a.input_len_a,
        input_len_b: p_a.input_len_b,
        budgets: TapeBudgets {
            public: 128,
            private_a: 128,
            private_b: 128,
        },
        max_cost: p_a.max_cost + p_b.max_cost,
        kind: ProtocolKind::Direct(Arc::new(run)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{cond_id_separation, split_id_separation, xor_separation};
    use crate::engine::analysis::{estimate_error, exact_error, full_domain};
    use crate::engine::model::resolve;
    use crate::engine::rat_from_f64;
    use crate::problems;
    use num_traits::Zero;

    #[test]
    fn repetition_pins() {
        assert_eq!(standard_reps(1.0 / 3.0, 0.1), 48);
        assert_eq!(xor_reps(1.0 / 3.0, 0.1), 89);
        assert_eq!(xor_reps(0.4, 0.05), 351);
        assert_eq!(oot_reps(0.45, 0.05), 3471);
        assert_eq!(oot_hash_range(0.05), 240);
        assert_eq!(split_reps(0.4, 0.05), 1403);
        let parts = DirectSumPlanParts::new(64, 0.48, 0.1);
        assert_eq!(parts.t_runs, 240);
        assert_eq!(parts.coord_runs, 45960);
    }

    #[test]
    fn corrupted_rate_is_exact() {
        let base = xor_separation(4);
        let p = corrupted(&base, 6, 4);
        let spec = problems::xor_n(4);
        let truth = spec.truth();
        let inputs = vec![
            (Bits::parse("0000"), Bits::parse("0000")),
            (Bits::parse("1010"), Bits::parse("0110")),
        ];
        let err = exact_error(&p, &truth, &inputs).unwrap();
        let six_sixteenths = BigRational::new(BigInt::from(6), BigInt::from(16));
        for e in &err.per_input {
            assert_eq!(*e, six_sixteenths);
        }
    }

    #[test]
    fn corrupted_local_stays_consistent() {
        // both players flip identically, so the local model never disagrees
        let base = crate::blocks::naive_protocol(&problems::eq(3), OutputModel::Local);
        let p = corrupted(&base, 1, 2);
        let spec = problems::eq(3);
        let truth = spec.truth();
        let inputs = full_domain(3, 3);
        let err = exact_error(&p, &truth, &inputs).unwrap();
        assert_eq!(err.worst, BigRational::new(1.into(), 4.into()));
    }

    #[test]
    fn standard_majority_reduces_error() {
        let base = corrupted(
            &crate::blocks::naive_protocol(&problems::eq(3), OutputModel::UniBob),
            2,
            3,
        );
        let amp = amplify_standard(&base, 0.25, 0.05).unwrap();
        assert_eq!(amp.plan.repetitions, 23);
        let spec = problems::eq(3);
        let truth = spec.truth();
        let inputs = spec.probe_inputs(1, 6);
        let rep = estimate_error(&amp.protocol, &truth, &inputs, 800, 0.99, 11);
        assert!(rep.estimate <= 0.05 + rep.radius, "err {}", rep.estimate);
    }

    #[test]
    fn xor_amplification_end_to_end() {
        let base = corrupted(&xor_separation(8), 6, 4);
        let amp = amplify_xor(&base, 0.4, 0.1).unwrap();
        let spec = problems::xor_n(8);
        let truth = spec.truth();
        let inputs = vec![(Bits::parse("10110100"), Bits::parse("01101001"))];
        let rep = estimate_error(&amp.protocol, &truth, &inputs, 400, 0.99, 3);
        assert!(rep.estimate <= 0.1 + rep.radius, "err {}", rep.estimate);
        // run transcripts are empty here, so everything on the wire is
        // aggregation overhead; it must not depend on k
        let amp16 = amplify_xor(&corrupted(&xor_separation(16), 6, 4), 0.4, 0.1).unwrap();
        assert_eq!(
            amp.protocol.max_cost,
            amp16.protocol.max_cost,
            "overhead must be k-free"
        );
    }

    #[test]
    fn xor_instance_promise() {
        let base = corrupted(&xor_separation(6), 6, 4);
        let x = Bits::parse("101101");
        let y = Bits::parse("010011");
        for seed in 0..40u64 {
            let inst = xor_run_instance(&base, 0.4, 0.1, &x, &y, seed);
            let chk = problems::check_gapmaj_promise(&inst);
            assert!(chk.holds, "promise failed at seed {}", seed);
            assert_eq!(chk.witness, Some(x.xor(&y)));
        }
    }

    #[test]
    fn normalize_forces_one_speaker() {
        // a broken base: both speak when x0=1, both silent when x0=0
        use crate::engine::protocol::{MessageFn, OutputFn, OwnerFn};
        let owner: OwnerFn = Arc::new(|w: &Bits| (w.len() < 1).then_some(Player::Alice));
        let message: MessageFn =
            Arc::new(|_, _, input: &Bits, _: &mut Tape, _: &mut Tape| input.get(0));
        let out = |_: usize| -> OutputFn {
            Arc::new(move |w: &Bits, input: &Bits, _: &mut Tape, _: &mut Tape| {
                if w.get(0) {
                    RawOutput::Value(input.clone())
                } else {
                    RawOutput::Top
                }
            })
        };
        let base = Protocol {
            id: "broken".into(),
            model: OutputModel::OneOutOfTwo,
            output_len: 1,
            top_in_range: false,
            input_len_a: 1,
            input_len_b: 1,
            budgets: TapeBudgets::none(),
            max_cost: 1,
            kind: ProtocolKind::Tree(TreeRules {
                owner,
                message,
                out_a: Some(out(0)),
                out_b: Some(out(1)),
                out_open: None,
            }),
        };
        let fixed = oot_normalize(&base);
        assert_eq!(fixed.max_cost, 2);
        let truth = |x: &Bits, _: &Bits| Symbol::Value(x.clone());
        let inputs = full_domain(1, 1);
        let before = exact_error(&base, &truth, &inputs).unwrap();
        let after = exact_error(&fixed, &truth, &inputs).unwrap();
        assert!(after.worst <= before.worst);
        // every run now resolves to a value
        for (x, y) in &inputs {
            for s in 0..8u64 {
                let rec = fixed.run_seeded(x, y, s);
                assert!(crate::engine::resolve_outcome(fixed.model, &rec).is_ok());
            }
        }
    }

    #[test]
    fn oot_amplification_end_to_end() {
        let base = corrupted(&cond_id_separation(4), 4, 4);
        let amp = amplify_oot(&base, 0.3, 0.1).unwrap();
        let spec = problems::cond_id(4);
        let truth = spec.truth();
        let inputs = vec![
            (Bits::parse("1011"), Bits::parse("1100")),
            (Bits::parse("1011"), Bits::parse("0100")),
        ];
        let rep = estimate_error(&amp.protocol, &truth, &inputs, 250, 0.99, 17);
        assert!(rep.estimate <= 0.1 + rep.radius, "err {}", rep.estimate);
        let bound = amp.plan.cost_bound;
        for s in 0..5u64 {
            let rec = amp.protocol.run_seeded(&inputs[0].0, &inputs[0].1, s);
            assert!(rec.cost <= bound);
        }
    }

    #[test]
    fn gadget_tables_satisfy_compatibility() {
        let syms = [Some(false), Some(true), None];
        let valid = |a: SplitSym, b: SplitSym| a.is_some() != b.is_some();
        let weave = |a: SplitSym, b: SplitSym| a.or(b).unwrap();
        let mut checked = 0;
        for &ai in &syms {
            for &aj in &syms {
                for &bi in &syms {
                    for &bj in &syms {
                        checked += 1;
                        if valid(ai, bi) && valid(aj, bj) {
                            let same_weave = weave(ai, bi) == weave(aj, bj);
                            let gadget_eq = gadget_a(ai, aj) == gadget_b(bi, bj);
                            assert_eq!(same_weave, gadget_eq);
                        } else if valid(ai, bi) != valid(aj, bj) {
                            // a valid row position never matches an invalid one
                            assert_ne!(gadget_a(ai, aj), gadget_b(bi, bj));
                        }
                    }
                }
            }
        }
        assert_eq!(checked, 81);
        // the pinned cases
        assert_eq!(gadget_a(None, None), gadget_b(Some(false), Some(false)));
        assert_eq!(gadget_a(None, None), gadget_b(Some(true), Some(true)));
        assert_eq!(gadget_a(None, Some(false)), gadget_b(Some(false), None));
    }

    #[test]
    fn gadget_strings_iff_equal_weaves() {
        // all valid rows of width <= 3
        for k in 1..=3usize {
            let mut rows = Vec::new();
            for mask_code in 0..(1u64 << k) {
                let mask = Bits::from_uint_be(mask_code, k);
                for va in 0..(1u64 << k) {
                    let vals = Bits::from_uint_be(va, k).and(&mask);
                    for vb in 0..(1u64 << k) {
                        let other = Bits::from_uint_be(vb, k).and(&mask.not());
                        rows.push((
                            SplitString::new(mask.clone(), vals.clone()),
                            SplitString::new(mask.not(), other),
                        ));
                    }
                }
            }
            rows.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
            for (xi, yi) in &rows {
                for (xj, yj) in &rows {
                    let wi = crate::engine::bits::weave_complete(xi, yi).unwrap();
                    let wj = crate::engine::bits::weave_complete(xj, yj).unwrap();
                    let ga = gadget_string(gadget_a, xi, xj);
                    let gb = gadget_string(gadget_b, yi, yj);
                    assert_eq!(wi == wj, ga == gb);
                }
            }
        }
    }

    #[test]
    fn split_amplification_end_to_end() {
        let base = corrupted(&split_id_separation(6), 6, 4);
        let amp = amplify_split(&base, 0.4, 0.1).unwrap();
        let spec = problems::split_id(6);
        let truth = spec.truth();
        let inputs = vec![(Bits::parse("101101"), Bits::parse("010011"))];
        let rep = estimate_error(&amp.protocol, &truth, &inputs, 250, 0.99, 23);
        assert!(rep.estimate <= 0.1 + rep.radius, "err {}", rep.estimate);
        let amp12 = amplify_split(&corrupted(&split_id_separation(12), 6, 4), 0.4, 0.1).unwrap();
        let overhead = |a: &Amplified, base_cost: u64| {
            a.plan.cost_bound - a.plan.repetitions as u64 * base_cost
        };
        assert_eq!(overhead(&amp, 0), overhead(&amp12, 0));
    }

    #[test]
    fn direct_sum_smoke() {
        let k = 8;
        let p_f = corrupted(&xor_separation(k), 7, 4);
        let p_g = corrupted(&xor_separation(1), 7, 4);
        let amp = amplify_xor_direct_sum(&p_f, &p_g, 0.45, 0.2).unwrap();
        let spec = problems::xor_n(k);
        let truth = spec.truth();
        let inputs = vec![(Bits::parse("10110100"), Bits::parse("01101001"))];
        let rep = estimate_error(&amp.protocol, &truth, &inputs, 150, 0.99, 29);
        assert!(rep.estimate <= 0.2 + rep.radius, "err {}", rep.estimate);
        // the expensive factor scales only coordinate-level terms
        let p16 = corrupted(&xor_separation(16), 7, 4);
        let parts8 = DirectSumPlanParts::new(8, 0.45, 0.2);
        let parts16 = DirectSumPlanParts::new(16, 0.45, 0.2);
        assert_eq!(
            parts8.scaled_term(p_g.max_cost),
            parts16.scaled_term(p_g.max_cost)
        );
        let _ = p16;
    }

    #[test]
    fn conversions_preserve_exactness() {
        let n = 4;
        // Xor -> UniBob on the zero-cost construction: cost n, exact
        let p = convert(&xor_separation(n), OutputModel::UniBob).unwrap();
        assert_eq!(p.max_cost, n as u64);
        let spec = problems::xor_n(n);
        let truth = spec.truth();
        let inputs = full_domain(n, n);
        assert!(exact_error(&p, &truth, &inputs).unwrap().worst.is_zero());
        // Split -> OneOutOfTwo on the interleaved identity: floor(n/2)+1
        let q = convert(&split_id_separation(n), OutputModel::OneOutOfTwo).unwrap();
        assert_eq!(q.max_cost, (n / 2 + 1) as u64);
        let spec = problems::split_id(n);
        let truth = spec.truth();
        assert!(exact_error(&q, &truth, &inputs).unwrap().worst.is_zero());
        // OneOutOfTwo -> Open on the two-bit exchange: 2 + 1 + n
        let r = convert(&cond_id_separation(n), OutputModel::Open).unwrap();
        assert_eq!(r.max_cost, (2 + 1 + n) as u64);
        let spec = problems::cond_id(n);
        let truth = spec.truth();
        assert!(exact_error(&r, &truth, &inputs).unwrap().worst.is_zero());
        // Local -> Open on a value-or-silence alphabet pays n+1
        let eqo = crate::blocks::eqout_separation(n, 0.25);
        let s = convert(&eqo, OutputModel::Open).unwrap();
        assert_eq!(s.max_cost, eqo.max_cost + n as u64 + 1);
        let spec = problems::eqout(n);
        let truth = spec.truth();
        let err = exact_error(&s, &truth, &inputs).unwrap();
        assert!(err.worst <= rat_from_f64(0.25));
    }

    #[test]
    fn pair_to_local_runs_both() {
        let pa = convert(&xor_separation(3), OutputModel::UniAlice).unwrap();
        let pb = convert(&xor_separation(3), OutputModel::UniBob).unwrap();
        let p = pair_to_local(&pa, &pb).unwrap();
        assert_eq!(p.max_cost, 6);
        let spec = problems::xor_n(3);
        let truth = spec.truth();
        for (x, y) in full_domain(3, 3) {
            let rec = p.run_seeded(&x, &y, 1);
            assert!(resolve(p.model, &rec, &truth(&x, &y)));
        }
    }
}
