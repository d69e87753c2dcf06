//! Building-block protocols: equality fingerprinting, batched equality,
//! binary-search first-difference, gap Hamming distance, and the
//! low-communication constructions separating the output models.

use crate::engine::bits::{Bits, SplitString};
use crate::engine::model::{OutputModel, Player, RawOutput, Symbol};
use crate::engine::protocol::{
    MessageFn, OutputFn, OwnerFn, Protocol, ProtocolKind, TapeBudgets, TreeRules,
};
use crate::engine::tape::Tape;
use crate::engine::{ceil_log2_rat, rat_from_f64, EngineError};
use crate::problems::{index_len, ProblemSpec};
use num_bigint::BigInt;
use num_rational::BigRational;
use std::sync::Arc;

/// Random-linear GF(2) fingerprinting. Key bits live on a tape at fixed
/// positions: row r of the key occupies [offset + r*input_len, +input_len).
/// For fixed x != y a uniform key collides with probability exactly
/// 2^-output_len.
#[derive(Clone, Copy, Debug)]
pub struct HashScheme {
    pub input_len: usize,
    pub output_len: usize,
    pub tape_offset: usize,
}

impl HashScheme {
    pub fn tape_bits(&self) -> u64 {
        (self.input_len * self.output_len) as u64
    }

    /// One digest bit: inner product of key row `r` with the first `m`
    /// coordinates of x, a word at a time.
    pub fn bit_prefix(&self, tape: &mut Tape, r: usize, x: &Bits, m: usize) -> bool {
        debug_assert!(r < self.output_len && m <= self.input_len && m <= x.len());
        let base = self.tape_offset + r * self.input_len;
        let mut acc = 0u32;
        let mut c = 0;
        while c < m {
            let w = (m - c).min(64);
            acc ^= (x.span(c, w) & tape.span(base + c, w)).count_ones();
            c += w;
        }
        acc & 1 == 1
    }

    pub fn bit(&self, tape: &mut Tape, r: usize, x: &Bits) -> bool {
        self.bit_prefix(tape, r, x, self.input_len)
    }

    pub fn apply(&self, tape: &mut Tape, x: &Bits) -> Bits {
        let mut d = Bits::new(self.output_len);
        for r in 0..self.output_len {
            d.set(r, self.bit(tape, r, x));
        }
        d
    }
}

/// Digest length for a target collision bound: smallest b with 2^-b <= eps.
pub fn digest_len(eps: f64) -> usize {
    let e = rat_from_f64(eps);
    assert!(
        e > BigRational::from(BigInt::from(0)) && e < BigRational::new(1.into(), 2.into()),
        "eps must lie in (0, 1/2)"
    );
    ceil_log2_rat(&e.recip()) as usize
}

// ---------------------------------------------------------------------------
// equality
// ---------------------------------------------------------------------------

/// Equality with one-sided error: Alice sends a b-bit random-linear digest of
/// x, Bob replies the comparison verdict, both output it. b = ceil(log 1/eps),
/// cost b + 1; equal inputs are never rejected.
pub fn eq_protocol(n: usize, eps: f64) -> Protocol {
    let b = digest_len(eps);
    let scheme = HashScheme {
        input_len: n,
        output_len: b,
        tape_offset: 0,
    };
    let owner: OwnerFn = Arc::new(move |w: &Bits| match w.len() {
        d if d < b => Some(Player::Alice),
        d if d == b => Some(Player::Bob),
        _ => None,
    });
    let message: MessageFn = Arc::new(
        move |who, w: &Bits, input: &Bits, _own: &mut Tape, public: &mut Tape| match who {
            Player::Alice => scheme.bit(public, w.len(), input),
            Player::Bob => (0..b).all(|r| scheme.bit(public, r, input) == w.get(r)),
        },
    );
    let out: OutputFn = Arc::new(move |w: &Bits, _, _: &mut Tape, _: &mut Tape| {
        RawOutput::Value(Bits::from_uint_be(w.get(b) as u64, 1))
    });
    Protocol {
        id: format!("eq(n={},eps={})", n, eps),
        model: OutputModel::Local,
        output_len: 1,
        top_in_range: false,
        input_len_a: n,
        input_len_b: n,
        budgets: TapeBudgets {
            public: scheme.tape_bits(),
            private_a: 0,
            private_b: 0,
        },
        max_cost: (b + 1) as u64,
        kind: ProtocolKind::Tree(TreeRules {
            owner,
            message,
            out_a: Some(out.clone()),
            out_b: Some(out),
            out_open: None,
        }),
    }
}

/// k simultaneous equality tests against one shared key. Per instance Alice
/// sends b digest bits and Bob replies the verdict; both output the k verdict
/// bits. b = ceil(log(3k/eps)) makes the union bound close with room; total
/// error <= k 2^-b <= eps/3, cost k(b+1), one-sided per instance.
pub fn eq_batch_protocol(k: usize, n: usize, eps: f64) -> Protocol {
    assert!(k >= 1);
    let ratio = BigRational::from(BigInt::from(3 * k as u64)) / rat_from_f64(eps);
    let b = ceil_log2_rat(&ratio) as usize;
    let scheme = HashScheme {
        input_len: n,
        output_len: b,
        tape_offset: 0,
    };
    let depth = k * (b + 1);
    let owner: OwnerFn = Arc::new(move |w: &Bits| {
        if w.len() >= depth {
            None
        } else if w.len() % (b + 1) < b {
            Some(Player::Alice)
        } else {
            Some(Player::Bob)
        }
    });
    let message: MessageFn = Arc::new(
        move |who, w: &Bits, input: &Bits, _: &mut Tape, public: &mut Tape| {
            let i = w.len() / (b + 1);
            let piece = input.slice(i * n, (i + 1) * n);
            match who {
                Player::Alice => scheme.bit(public, w.len() % (b + 1), &piece),
                Player::Bob => {
                    (0..b).all(|r| scheme.bit(public, r, &piece) == w.get(i * (b + 1) + r))
                }
            }
        },
    );
    let out: OutputFn = Arc::new(move |w: &Bits, _, _: &mut Tape, _: &mut Tape| {
        let mut v = Bits::new(k);
        for i in 0..k {
            v.set(i, w.get(i * (b + 1) + b));
        }
        RawOutput::Value(v)
    });
    Protocol {
        id: format!("eq-batch(k={},n={},eps={})", k, n, eps),
        model: OutputModel::Local,
        output_len: k,
        top_in_range: false,
        input_len_a: k * n,
        input_len_b: k * n,
        budgets: TapeBudgets {
            public: scheme.tape_bits(),
            private_a: 0,
            private_b: 0,
        },
        max_cost: depth as u64,
        kind: ProtocolKind::Tree(TreeRules {
            owner,
            message,
            out_a: Some(out.clone()),
            out_b: Some(out),
            out_open: None,
        }),
    }
}

// ---------------------------------------------------------------------------
// first difference
// ---------------------------------------------------------------------------

/// Shared plan for the prefix-hash binary search: `steps` probes, each a
/// b-bit digest of a prefix plus a verdict bit. The searched value is the
/// longest common prefix length in [0, n]; hash collisions only ever push
/// the result upward (one-sided overshoot).
#[derive(Clone, Copy, Debug)]
pub struct FirstDiffWalk {
    pub n: usize,
    pub steps: usize,
    pub digest: usize,
}

impl FirstDiffWalk {
    /// Per-step failure budget eps/steps.
    pub fn new(n: usize, eps: f64) -> Self {
        let steps = index_len(n);
        let ratio = BigRational::from(BigInt::from(steps as u64)) / rat_from_f64(eps);
        let digest = ceil_log2_rat(&ratio) as usize;
        FirstDiffWalk { n, steps, digest }
    }

    pub fn cost(&self) -> u64 {
        (self.steps * (self.digest + 1)) as u64
    }

    pub fn public_bits(&self) -> u64 {
        (self.steps * self.digest * self.n) as u64
    }

    fn scheme(&self, step: usize) -> HashScheme {
        // fresh key rows per step
        HashScheme {
            input_len: self.n,
            output_len: self.digest,
            tape_offset: step * self.digest * self.n,
        }
    }

    /// Interval after the first `steps_done` completed probes. Probes made
    /// after the interval collapses to one value are ignored.
    fn state(&self, w: &Bits, steps_done: usize) -> (usize, usize) {
        let (mut lo, mut hi) = (0usize, self.n + 1);
        for j in 0..steps_done {
            let v = w.get(j * (self.digest + 1) + self.digest);
            if hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if v {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        (lo, hi)
    }

    fn probe_len(&self, w: &Bits, step: usize) -> usize {
        let (lo, hi) = self.state(w, step);
        if hi - lo > 1 {
            (lo + hi) / 2
        } else {
            lo
        }
    }

    pub fn owner(&self, w: &Bits) -> Option<Player> {
        if w.len() as u64 >= self.cost() {
            None
        } else if w.len() % (self.digest + 1) < self.digest {
            Some(Player::Alice)
        } else {
            Some(Player::Bob)
        }
    }

    /// Next wire bit given the speaker's (already encoded) input.
    pub fn message(&self, who: Player, w: &Bits, enc: &Bits, public: &mut Tape) -> bool {
        let (b, j) = (self.digest, w.len() / (self.digest + 1));
        let m = self.probe_len(w, j);
        let scheme = self.scheme(j);
        match who {
            Player::Alice => scheme.bit_prefix(public, w.len() % (b + 1), enc, m),
            Player::Bob => {
                (0..b).all(|r| scheme.bit_prefix(public, r, enc, m) == w.get(j * (b + 1) + r))
            }
        }
    }

    /// Claimed first-difference position at a leaf.
    pub fn result(&self, leaf: &Bits) -> usize {
        self.state(leaf, self.steps).0
    }
}

type Encoder = Arc<dyn Fn(&Bits) -> Bits + Send + Sync>;

fn walk_rules(walk: FirstDiffWalk, encode: Encoder) -> (OwnerFn, MessageFn) {
    let owner: OwnerFn = Arc::new(move |w: &Bits| walk.owner(w));
    let message: MessageFn = Arc::new(
        move |who, w: &Bits, input: &Bits, _: &mut Tape, public: &mut Tape| {
            walk.message(who, w, &encode(input), public)
        },
    );
    (owner, message)
}

/// First differing index (n if equal) by binary search over prefix
/// fingerprints; error <= eps, never undershoots, outputs n on equal inputs
/// with probability 1. Cost steps*(digest+1) with steps = ceil(log(n+1)).
pub fn ftfd_protocol(n: usize, eps: f64) -> Protocol {
    let walk = FirstDiffWalk::new(n, eps);
    let k = index_len(n);
    let (owner, message) = walk_rules(walk, Arc::new(|x: &Bits| x.clone()));
    let out: OutputFn = Arc::new(move |w: &Bits, _, _: &mut Tape, _: &mut Tape| {
        RawOutput::Value(Bits::from_uint_be(walk.result(w) as u64, k))
    });
    Protocol {
        id: format!("ftfd(n={},eps={})", n, eps),
        model: OutputModel::Local,
        output_len: k,
        top_in_range: false,
        input_len_a: n,
        input_len_b: n,
        budgets: TapeBudgets {
            public: walk.public_bits(),
            private_a: 0,
            private_b: 0,
        },
        max_cost: walk.cost(),
        kind: ProtocolKind::Tree(TreeRules {
            owner,
            message,
            out_a: Some(out.clone()),
            out_b: Some(out),
            out_open: None,
        }),
    }
}

// ---------------------------------------------------------------------------
// gap Hamming distance
// ---------------------------------------------------------------------------

/// Full exchange: Alice sends x, Bob replies whether the distance reaches U.
/// Deterministic, exact on the promise, cost n+1, open model.
pub fn ghd_protocol(n: usize, l: u32, u: u32) -> Protocol {
    assert!(l < u && u as usize <= n);
    let owner: OwnerFn = Arc::new(move |w: &Bits| match w.len() {
        d if d < n => Some(Player::Alice),
        d if d == n => Some(Player::Bob),
        _ => None,
    });
    let message: MessageFn = Arc::new(
        move |who, w: &Bits, input: &Bits, _: &mut Tape, _: &mut Tape| match who {
            Player::Alice => input.get(w.len()),
            Player::Bob => w.slice(0, n).hamming(input) >= u,
        },
    );
    let out = Arc::new(move |w: &Bits, _: &mut Tape| {
        RawOutput::Value(Bits::from_uint_be(w.get(n) as u64, 1))
    });
    Protocol {
        id: format!("ghd(n={},L={},U={})", n, l, u),
        model: OutputModel::Open,
        output_len: 1,
        top_in_range: false,
        input_len_a: n,
        input_len_b: n,
        budgets: TapeBudgets::none(),
        max_cost: (n + 1) as u64,
        kind: ProtocolKind::Tree(TreeRules {
            owner,
            message,
            out_a: None,
            out_b: None,
            out_open: Some(out),
        }),
    }
}

// ---------------------------------------------------------------------------
// separations
// ---------------------------------------------------------------------------

fn zero_comm(id: String, model: OutputModel, n: usize, out_a: OutputFn, out_b: OutputFn) -> Protocol {
    Protocol {
        id,
        model,
        output_len: n,
        top_in_range: false,
        input_len_a: n,
        input_len_b: n,
        budgets: TapeBudgets::none(),
        max_cost: 0,
        kind: ProtocolKind::Tree(TreeRules {
            owner: Arc::new(|_| None),
            message: Arc::new(|_, _, _, _: &mut Tape, _: &mut Tape| false),
            out_a: Some(out_a),
            out_b: Some(out_b),
            out_open: None,
        }),
    }
}

/// Each player announces their own input; the XOR combiner does the rest.
pub fn xor_separation(n: usize) -> Protocol {
    let own: OutputFn =
        Arc::new(|_, input: &Bits, _: &mut Tape, _: &mut Tape| RawOutput::Value(input.clone()));
    let mut p = zero_comm(
        format!("xor-sep(n={})", n),
        OutputModel::Xor,
        n,
        own.clone(),
        own,
    );
    p.model = OutputModel::Xor;
    p
}

/// Alice fills the even positions, Bob the odd ones; the weave is complete
/// without any communication.
pub fn split_id_separation(n: usize) -> Protocol {
    let share = |parity: usize| -> OutputFn {
        Arc::new(move |_, input: &Bits, _: &mut Tape, _: &mut Tape| {
            let mut mask = Bits::new(input.len());
            let mut vals = Bits::new(input.len());
            for i in 0..input.len() {
                if i % 2 == parity {
                    mask.set(i, true);
                    vals.set(i, input.get(i));
                }
            }
            RawOutput::Share(SplitString::new(mask, vals))
        })
    };
    zero_comm(
        format!("splitid-sep(n={})", n),
        OutputModel::Split,
        n,
        share(0),
        share(1),
    )
}

/// Alice already holds the answer.
pub fn id_a_separation(n: usize) -> Protocol {
    let own: OutputFn =
        Arc::new(|_, input: &Bits, _: &mut Tape, _: &mut Tape| RawOutput::Value(input.clone()));
    let silent: OutputFn =
        Arc::new(|_, _: &Bits, _: &mut Tape, _: &mut Tape| RawOutput::Top);
    let mut p = zero_comm(
        format!("ida-sep(n={})", n),
        OutputModel::UniAlice,
        n,
        own,
        silent,
    );
    p.model = OutputModel::UniAlice;
    p
}

/// The players exchange their first bits; agreement selects Alice's input,
/// disagreement Bob's. Exactly one side speaks either way.
pub fn cond_id_separation(n: usize) -> Protocol {
    assert!(n >= 1);
    let owner: OwnerFn = Arc::new(|w: &Bits| match w.len() {
        0 => Some(Player::Alice),
        1 => Some(Player::Bob),
        _ => None,
    });
    let message: MessageFn =
        Arc::new(|_, _, input: &Bits, _: &mut Tape, _: &mut Tape| input.get(0));
    let speak_if = |alice: bool| -> OutputFn {
        Arc::new(move |w: &Bits, input: &Bits, _: &mut Tape, _: &mut Tape| {
            let agree = w.get(0) == w.get(1);
            if agree == alice {
                RawOutput::Value(input.clone())
            } else {
                RawOutput::Top
            }
        })
    };
    Protocol {
        id: format!("condid-sep(n={})", n),
        model: OutputModel::OneOutOfTwo,
        output_len: n,
        top_in_range: false,
        input_len_a: n,
        input_len_b: n,
        budgets: TapeBudgets::none(),
        max_cost: 2,
        kind: ProtocolKind::Tree(TreeRules {
            owner,
            message,
            out_a: Some(speak_if(true)),
            out_b: Some(speak_if(false)),
            out_open: None,
        }),
    }
}

/// Equality fingerprinting where a passing verdict lets both players output
/// their own (equal) input and a failing one makes both stay silent.
pub fn eqout_separation(n: usize, eps: f64) -> Protocol {
    let eq = eq_protocol(n, eps);
    let b = eq.max_cost as usize - 1;
    let out: OutputFn = Arc::new(move |w: &Bits, input: &Bits, _: &mut Tape, _: &mut Tape| {
        if w.get(b) {
            RawOutput::Value(input.clone())
        } else {
            RawOutput::Top
        }
    });
    let rules = match eq.kind {
        ProtocolKind::Tree(r) => r,
        _ => unreachable!(),
    };
    Protocol {
        id: format!("eqout-sep(n={},eps={})", n, eps),
        model: OutputModel::Local,
        output_len: n,
        top_in_range: true,
        input_len_a: n,
        input_len_b: n,
        budgets: eq.budgets,
        max_cost: eq.max_cost,
        kind: ProtocolKind::Tree(TreeRules {
            owner: rules.owner,
            message: rules.message,
            out_a: Some(out.clone()),
            out_b: Some(out),
            out_open: None,
        }),
    }
}

/// Maximum via the first-difference walk: at the claimed differing index the
/// holder of the 1 bit has the larger string and speaks it; index n means
/// equality and Alice speaks. No bits beyond the walk itself.
pub fn max_separation(n: usize, eps: f64) -> Protocol {
    let walk = FirstDiffWalk::new(n, eps);
    let (owner, message) = walk_rules(walk, Arc::new(|x: &Bits| x.clone()));
    let out = |alice: bool| -> OutputFn {
        Arc::new(move |w: &Bits, input: &Bits, _: &mut Tape, _: &mut Tape| {
            let i = walk.result(w);
            let speak = if i == input.len() {
                alice
            } else {
                input.get(i)
            };
            if speak {
                RawOutput::Value(input.clone())
            } else {
                RawOutput::Top
            }
        })
    };
    Protocol {
        id: format!("max-sep(n={},eps={})", n, eps),
        model: OutputModel::OneOutOfTwo,
        output_len: n,
        top_in_range: false,
        input_len_a: n,
        input_len_b: n,
        budgets: TapeBudgets {
            public: walk.public_bits(),
            private_a: 0,
            private_b: 0,
        },
        max_cost: walk.cost(),
        kind: ProtocolKind::Tree(TreeRules {
            owner,
            message,
            out_a: Some(out(true)),
            out_b: Some(out(false)),
            out_open: None,
        }),
    }
}

/// Sorted 1-indices, each as an index-length word, padded to t blocks with
/// all-ones words. All-ones exceeds every valid index, so padding sorts last.
pub fn sparse_encoding(x: &Bits, t: u32) -> Bits {
    let word = index_len(x.len());
    let mut e = Bits::new(t as usize * word);
    let mut block = 0usize;
    for i in 0..x.len() {
        if x.get(i) {
            assert!(block < t as usize, "weight exceeds t");
            let v = Bits::from_uint_be(i as u64, word);
            for r in 0..word {
                e.set(block * word + r, v.get(r));
            }
            block += 1;
        }
    }
    for b in block..t as usize {
        for r in 0..word {
            e.set(b * word + r, true);
        }
    }
    e
}

/// First-difference of inputs of weight <= t, via the walk on the sparse
/// encodings. At the first differing encoding bit the player holding the 0
/// has the smaller next index, which is the answer; equal encodings mean
/// equal inputs and Alice announces n.
pub fn t_ftfd_separation(n: usize, t: u32, eps: f64) -> Protocol {
    let word = index_len(n);
    let enc_len = t as usize * word;
    let walk = FirstDiffWalk::new(enc_len, eps);
    let encoder: Encoder = Arc::new(move |x: &Bits| sparse_encoding(x, t));
    let (owner, message) = walk_rules(walk, encoder.clone());
    let out = |alice: bool| -> OutputFn {
        let encoder = encoder.clone();
        Arc::new(move |w: &Bits, input: &Bits, _: &mut Tape, _: &mut Tape| {
            let d = walk.result(w);
            if d == enc_len {
                return if alice {
                    RawOutput::Value(Bits::from_uint_be(input.len() as u64, word))
                } else {
                    RawOutput::Top
                };
            }
            let e = encoder(input);
            if e.get(d) {
                RawOutput::Top
            } else {
                let block = d / word;
                RawOutput::Value(e.slice(block * word, (block + 1) * word))
            }
        })
    };
    Protocol {
        id: format!("tftfd-sep(n={},t={},eps={})", n, t, eps),
        model: OutputModel::OneOutOfTwo,
        output_len: word,
        top_in_range: false,
        input_len_a: n,
        input_len_b: n,
        budgets: TapeBudgets {
            public: walk.public_bits(),
            private_a: 0,
            private_b: 0,
        },
        max_cost: walk.cost(),
        kind: ProtocolKind::Tree(TreeRules {
            owner,
            message,
            out_a: Some(out(true)),
            out_b: Some(out(false)),
            out_open: None,
        }),
    }
}

/// Named dispatcher over the separating constructions.
pub fn separation_protocol(
    name: &str,
    n: usize,
    t: u32,
    eps: f64,
) -> Result<Protocol, EngineError> {
    Ok(match name {
        "xor" => xor_separation(n),
        "split-id" => split_id_separation(n),
        "id-a" => id_a_separation(n),
        "cond-id" => cond_id_separation(n),
        "eqout" => eqout_separation(n, eps),
        "max" => max_separation(n, eps),
        "t-ftfd" => t_ftfd_separation(n, t, eps),
        _ => return Err(EngineError::DomainError),
    })
}

// ---------------------------------------------------------------------------
// wire encodings and the naive deterministic catalog
// ---------------------------------------------------------------------------

/// Bits needed to name one answer on the wire.
pub fn wire_len(k: usize, top: bool) -> usize {
    k + top as usize
}

/// With a silence symbol, prefix 1 then zeros encodes silence and prefix 0
/// carries the value; without, the value stands alone.
pub fn wire_encode(sym: &Symbol, k: usize, top: bool) -> Bits {
    match (sym, top) {
        (Symbol::Value(v), false) => {
            assert_eq!(v.len(), k);
            v.clone()
        }
        (Symbol::Value(v), true) => {
            assert_eq!(v.len(), k);
            Bits::from_uint_be(0, 1).concat(v)
        }
        (Symbol::Top, true) => Bits::from_uint_be(1, 1).concat(&Bits::new(k)),
        (Symbol::Top, false) => panic!("silence not representable in this alphabet"),
    }
}

pub fn wire_decode(w: &Bits, k: usize, top: bool) -> Symbol {
    if !top {
        assert_eq!(w.len(), k);
        return Symbol::Value(w.clone());
    }
    assert_eq!(w.len(), k + 1);
    if w.get(0) {
        Symbol::Top
    } else {
        Symbol::Value(w.slice(1, k + 1))
    }
}

fn raw_from_symbol(sym: Symbol) -> RawOutput {
    match sym {
        Symbol::Value(v) => RawOutput::Value(v),
        Symbol::Top => RawOutput::Top,
    }
}

/// Deterministic exchange protocol for any catalog problem in a given model:
/// one side ships its whole input, the answer rides back when the model needs
/// it. A cost baseline, not a good protocol.
pub fn naive_protocol(spec: &ProblemSpec, model: OutputModel) -> Protocol {
    use OutputModel::*;
    let eval = spec.evaluator();
    let (na, nb, k, top) = (
        spec.input_len_a,
        spec.input_len_b,
        spec.output_len,
        spec.top_in_range,
    );
    if top {
        assert!(
            matches!(model, Open | Local | UniAlice | UniBob),
            "silence answers need a transcript-carrying model here"
        );
    }
    let w = wire_len(k, top);
    // Bob first when only Alice must learn the answer
    let bob_first = model == UniAlice;
    let first_len = if bob_first { nb } else { na };
    let reply_len = match model {
        UniBob | OneOutOfTwo | Xor | Split => 0,
        _ => w,
    };
    let depth = first_len + reply_len;
    let owner: OwnerFn = Arc::new(move |wt: &Bits| {
        if wt.len() >= depth {
            None
        } else if (wt.len() < first_len) != bob_first {
            Some(Player::Alice)
        } else {
            Some(Player::Bob)
        }
    });
    let ev = eval.clone();
    let message: MessageFn = Arc::new(
        move |who, wt: &Bits, input: &Bits, _: &mut Tape, _: &mut Tape| {
            if wt.len() < first_len {
                input.get(wt.len())
            } else {
                let sent = wt.slice(0, first_len);
                let f = match who {
                    Player::Alice => ev(input, &sent),
                    Player::Bob => ev(&sent, input),
                };
                wire_encode(&f, k, top).get(wt.len() - first_len)
            }
        },
    );
    let from_wire: OutputFn = {
        let top = top;
        Arc::new(move |wt: &Bits, _, _: &mut Tape, _: &mut Tape| {
            raw_from_symbol(wire_decode(&wt.slice(first_len, depth), k, top))
        })
    };
    let holder_out = |alice_holds: bool, silent_other: bool| -> OutputFn {
        let ev = eval.clone();
        Arc::new(move |wt: &Bits, input: &Bits, _: &mut Tape, _: &mut Tape| {
            let sent = wt.slice(0, first_len);
            let f = if alice_holds {
                ev(input, &sent)
            } else {
                ev(&sent, input)
            };
            let _ = silent_other;
            raw_from_symbol(f)
        })
    };
    let silent: OutputFn = Arc::new(|_, _: &Bits, _: &mut Tape, _: &mut Tape| RawOutput::Top);
    let zero_share: OutputFn = {
        Arc::new(move |_, _: &Bits, _: &mut Tape, _: &mut Tape| {
            RawOutput::Share(SplitString::holes(k))
        })
    };
    let full_share: OutputFn = {
        let ev = eval.clone();
        Arc::new(move |wt: &Bits, input: &Bits, _: &mut Tape, _: &mut Tape| {
            match ev(&wt.slice(0, first_len), input) {
                Symbol::Value(v) => RawOutput::Share(SplitString::full(v)),
                Symbol::Top => panic!("silence not representable as a share"),
            }
        })
    };
    let zero_val: OutputFn = {
        Arc::new(move |_, _: &Bits, _: &mut Tape, _: &mut Tape| RawOutput::Value(Bits::new(k)))
    };
    let (out_a, out_b, out_open): (Option<OutputFn>, Option<OutputFn>, _) = match model {
        Open => (
            None,
            None,
            Some({
                let top = top;
                let f: crate::engine::protocol::OpenOutputFn =
                    Arc::new(move |wt: &Bits, _: &mut Tape| {
                        raw_from_symbol(wire_decode(&wt.slice(first_len, depth), k, top))
                    });
                f
            }),
        ),
        Local => (Some(from_wire.clone()), Some(from_wire), None),
        UniAlice => (Some(holder_out(true, false)), Some(silent), None),
        UniBob => (Some(silent), Some(holder_out(false, false)), None),
        OneOutOfTwo => (Some(silent), Some(holder_out(false, true)), None),
        Xor => (Some(zero_val), Some(holder_out(false, false)), None),
        Split => (Some(zero_share), Some(full_share), None),
    };
    Protocol {
        id: format!("naive({},{})", spec.name, model),
        model,
        output_len: k,
        top_in_range: top,
        input_len_a: na,
        input_len_b: nb,
        budgets: TapeBudgets::none(),
        max_cost: depth as u64,
        kind: ProtocolKind::Tree(TreeRules {
            owner,
            message,
            out_a,
            out_b,
            out_open,
        }),
    }
}

/// One deterministic protocol per (problem, model) pair used by the rank
/// certificates: the zero-communication separations where they exist, naive
/// exchanges elsewhere.
pub struct CatalogEntry {
    pub problem: ProblemSpec,
    pub protocol: Protocol,
}

pub fn deterministic_catalog(n: usize) -> Vec<CatalogEntry> {
    use crate::problems;
    let t = ((n / 4).max(1)) as u32;
    let mut out = vec![
        CatalogEntry {
            problem: problems::xor_n(n),
            protocol: xor_separation(n),
        },
        CatalogEntry {
            problem: problems::split_id(n),
            protocol: split_id_separation(n),
        },
        CatalogEntry {
            problem: problems::id_a(n),
            protocol: id_a_separation(n),
        },
        CatalogEntry {
            problem: problems::cond_id(n),
            protocol: cond_id_separation(n),
        },
    ];
    let naive_pairs: Vec<(ProblemSpec, OutputModel)> = vec![
        (problems::eq(n), OutputModel::Local),
        (problems::eqout(n), OutputModel::Local),
        (problems::ftfd(n), OutputModel::Local),
        (problems::max_n(n), OutputModel::UniBob),
        (problems::t_ftfd(n, t), OutputModel::UniBob),
        (problems::t_int(n, t), OutputModel::Local),
        (problems::id_b(n), OutputModel::UniBob),
        (problems::xor_n(n), OutputModel::Open),
    ];
    out.extend(naive_pairs.into_iter().map(|(p, m)| CatalogEntry {
        protocol: naive_protocol(&p, m),
        problem: p,
    }));
    if n >= 2 {
        let g = problems::ghd(n, n as u32 / 4, (3 * n as u32) / 4);
        out.push(CatalogEntry {
            protocol: ghd_protocol(n, n as u32 / 4, (3 * n as u32) / 4),
            problem: g,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::analysis::{estimate_error, exact_error, full_domain};
    use crate::engine::model::{resolve, Symbol};
    use crate::engine::tape::TapeSet;
    use crate::engine::execute;
    use crate::problems;

    #[test]
    fn hash_collision_fraction_is_exact() {
        // 2-row key over 3 columns: 64 keys, collision fraction exactly 1/4
        let scheme = HashScheme {
            input_len: 3,
            output_len: 2,
            tape_offset: 0,
        };
        let x = Bits::parse("101");
        for y in ["011", "110", "111", "001"] {
            let y = Bits::parse(y);
            let mut collisions = 0;
            for key in 0u64..64 {
                let kb = Bits::from_uint_be(key, 6);
                let mut t = Tape::fixed(kb);
                let dx = scheme.apply(&mut t, &x);
                let dy = scheme.apply(&mut t, &y);
                if dx == dy {
                    collisions += 1;
                }
            }
            assert_eq!(collisions, 16, "exactly 2^-b of keys collide");
        }
    }

    #[test]
    fn eq_cost_formula() {
        assert_eq!(eq_protocol(8, 1.0 / 16.0).max_cost, 5);
        assert_eq!(eq_protocol(8, 0.125).max_cost, 4);
    }

    #[test]
    fn eq_exact_one_sided() {
        // 3x4 key: 12 tape bits, exhaustively enumerable
        let p = eq_protocol(4, 0.125);
        let spec = problems::eq(4);
        let truth = spec.truth();
        let inputs = full_domain(4, 4);
        let err = exact_error(&p, &truth, &inputs).unwrap();
        let an_eighth = BigRational::new(BigInt::from(1), BigInt::from(8));
        assert!(err.worst <= an_eighth);
        for (i, (x, y)) in inputs.iter().enumerate() {
            if x == y {
                assert!(err.per_input[i].numer().bits() == 0, "equal inputs never err");
            }
        }
    }

    #[test]
    fn eq_batch_cost_and_union_bound() {
        let p = eq_batch_protocol(4, 4, 0.25);
        // digest ceil(log 48) = 6, interleaved verdicts
        assert_eq!(p.max_cost, 4 * 7);
        let p2 = eq_batch_protocol(2, 2, 0.5);
        // b = ceil(log 12) = 4: 8 public bits
        assert_eq!(p2.budgets.public, 8);
        let spec_truth = |x: &Bits, y: &Bits| {
            let mut v = Bits::new(2);
            for i in 0..2 {
                v.set(i, x.slice(i * 2, i * 2 + 2) == y.slice(i * 2, i * 2 + 2));
            }
            Symbol::Value(v)
        };
        let inputs = full_domain(4, 4);
        let err = exact_error(&p2, &spec_truth, &inputs).unwrap();
        let bound = BigRational::new(BigInt::from(2), BigInt::from(16));
        assert!(err.worst <= bound, "union bound 2*2^-4");
    }

    #[test]
    fn ftfd_exact_small() {
        let p = ftfd_protocol(2, 0.49);
        let spec = problems::ftfd(2);
        let truth = spec.truth();
        let inputs = full_domain(2, 2);
        let err = exact_error(&p, &truth, &inputs).unwrap();
        assert!(err.worst <= rat_from_f64(0.49));
        for (i, (x, y)) in inputs.iter().enumerate() {
            if x == y {
                assert!(err.per_input[i].numer().bits() == 0);
            }
        }
    }

    #[test]
    fn ftfd_monte_carlo_and_cost() {
        let p = ftfd_protocol(4, 0.125);
        // steps = 3, digest = ceil(log 24) = 5
        assert_eq!(p.max_cost, 3 * 6);
        let x = Bits::parse("0110");
        let y = Bits::parse("0100");
        let mut hits = 0;
        for s in 0..2000u64 {
            let rec = p.run_seeded(&x, &y, s);
            if rec.out_a == Some(RawOutput::Value(Bits::from_uint_be(2, 3))) {
                hits += 1;
            }
        }
        assert!(hits as f64 / 2000.0 >= 7.0 / 8.0 - 0.03);
        // equal inputs: always n, any seed
        for s in 0..200u64 {
            let rec = p.run_seeded(&x, &x, s);
            assert_eq!(rec.out_b, Some(RawOutput::Value(Bits::from_uint_be(4, 3))));
        }
    }

    #[test]
    fn ghd_exact_on_promise() {
        let p = ghd_protocol(6, 1, 4);
        assert_eq!(p.max_cost, 7);
        let spec = problems::ghd(6, 1, 4);
        let truth = spec.truth();
        let inputs: Vec<(Bits, Bits)> = full_domain(6, 6)
            .into_iter()
            .filter(|(x, y)| spec.in_domain(x, y))
            .collect();
        let err = exact_error(&p, &truth, &inputs).unwrap();
        assert!(err.worst.numer().bits() == 0, "deterministic and exact");
    }

    #[test]
    fn zero_comm_separations_exact() {
        for n in 1..=4usize {
            for (p, spec) in [
                (xor_separation(n), problems::xor_n(n)),
                (split_id_separation(n), problems::split_id(n)),
                (id_a_separation(n), problems::id_a(n)),
                (cond_id_separation(n), problems::cond_id(n)),
            ] {
                let truth = spec.truth();
                let inputs = full_domain(n, n);
                let err = exact_error(&p, &truth, &inputs).unwrap();
                assert!(err.worst.numer().bits() == 0, "{}: nonzero error", p.id);
            }
        }
        assert_eq!(xor_separation(8).max_cost, 0);
        assert_eq!(cond_id_separation(8).max_cost, 2);
    }

    #[test]
    fn eqout_separation_behaviour() {
        let p = eqout_separation(5, 0.25);
        let spec = problems::eqout(5);
        let truth = spec.truth();
        let x = Bits::parse("10110");
        // equal: both speak the value
        let rec = p.run_seeded(&x, &x, 7);
        assert!(resolve(p.model, &rec, &truth(&x, &x)));
        // unequal: silence, up to hash luck
        let y = Bits::parse("10111");
        let mut ok = 0;
        for s in 0..1000 {
            let rec = p.run_seeded(&x, &y, s);
            ok += resolve(p.model, &rec, &truth(&x, &y)) as u64;
        }
        assert!(ok >= 700, "two-bit digest misses at most ~1/4");
    }

    #[test]
    fn max_matches_evaluator() {
        let p = max_separation(10, 0.05);
        let spec = problems::max_n(10);
        let truth = spec.truth();
        let inputs = spec.probe_inputs(11, 40);
        let rep = estimate_error(&p, &truth, &inputs, 400, 0.99, 5);
        assert!(rep.estimate <= 0.05 + rep.radius);
        assert!(p.max_cost <= ftfd_protocol(10, 0.05).max_cost + 2);
    }

    #[test]
    fn sparse_encoding_first_diff_is_min_asymmetric_one() {
        for n in 2..=10usize {
            for t in 1..=3u32 {
                let ball = problems::hamming_ball(n, t);
                let members: Vec<Bits> = (0..ball.size).map(|r| ball.unrank(r)).collect();
                let word = index_len(n);
                for x in &members {
                    for y in &members {
                        let (ex, ey) = (sparse_encoding(x, t), sparse_encoding(y, t));
                        let d = ex.first_diff(&ey);
                        if x == y {
                            assert_eq!(d, t as usize * word);
                            continue;
                        }
                        assert!(d < t as usize * word);
                        // exactly one holds a 0 at d, and their block value
                        // is the true first difference
                        assert_ne!(ex.get(d), ey.get(d));
                        let small = if ex.get(d) { &ey } else { &ex };
                        let block = d / word;
                        let claimed = small.slice(block * word, (block + 1) * word);
                        assert_eq!(claimed.to_uint_be() as usize, x.first_diff(y));
                    }
                }
            }
        }
    }

    #[test]
    fn t_ftfd_protocol_matches_evaluator() {
        let (n, t) = (32usize, 2u32);
        let p = t_ftfd_separation(n, t, 0.05);
        let spec = problems::t_ftfd(n, t);
        let truth = spec.truth();
        let ball = problems::hamming_ball(n, t);
        let mut inputs = Vec::new();
        for i in 0..12u128 {
            let x = ball.unrank((i * 37) % ball.size);
            let y = ball.unrank((i * 61 + 5) % ball.size);
            inputs.push((x, y));
        }
        let rep = estimate_error(&p, &truth, &inputs, 400, 0.99, 9);
        assert!(rep.estimate <= 0.05 + rep.radius);
        assert_eq!(
            p.max_cost,
            ftfd_protocol(t as usize * index_len(n), 0.05).max_cost
        );
    }

    #[test]
    fn naive_catalog_runs_clean() {
        for entry in deterministic_catalog(4) {
            let truth = entry.problem.truth();
            let inputs: Vec<_> = full_domain(4, 4)
                .into_iter()
                .filter(|(x, y)| entry.problem.in_domain(x, y))
                .collect();
            for (x, y) in &inputs {
                let mut ts = TapeSet::none();
                let rec = execute(&entry.protocol, x, y, &mut ts);
                assert!(
                    resolve(entry.protocol.model, &rec, &truth(x, y)),
                    "{} wrong on {} {}",
                    entry.protocol.id,
                    x,
                    y
                );
                assert!(rec.cost <= entry.protocol.max_cost);
            }
        }
    }

    #[test]
    fn separation_dispatch() {
        assert!(separation_protocol("xor", 4, 1, 0.1).is_ok());
        assert!(separation_protocol("nope", 4, 1, 0.1).is_err());
    }

    #[test]
    fn wire_roundtrip() {
        let v = Symbol::Value(Bits::parse("1011"));
        assert_eq!(wire_decode(&wire_encode(&v, 4, true), 4, true), v);
        assert_eq!(wire_decode(&wire_encode(&v, 4, false), 4, false), v);
        assert_eq!(
            wire_decode(&wire_encode(&Symbol::Top, 4, true), 4, true),
            Symbol::Top
        );
    }
}
