//! Protocol representation and execution.
//!
//! Tree protocols give the speaking order as a pure function of the
//! transcript prefix and emit one bit at a time; this is the white-box form
//! that distribution estimation and the certificates need. Direct protocols
//! run imperatively (composite schemes built from many sub-runs) but still
//! report their transcript and obey the same tape discipline.
//!
//! Tape discipline: message rules consume private/public bits sequentially
//! via `draw`; output maps read private bits positionally via `at` starting
//! at the declared message budget, so an output can be re-derived at any
//! point of the run without disturbing the cursor.

use super::bits::Bits;
use super::model::{OutputModel, Player, RawOutput};
use super::tape::{Tape, TapeSet};
use std::sync::Arc;

pub type OwnerFn = Arc<dyn Fn(&Bits) -> Option<Player> + Send + Sync>;
/// (speaker, prefix, speaker's input, speaker's tape, public tape) -> bit
pub type MessageFn = Arc<dyn Fn(Player, &Bits, &Bits, &mut Tape, &mut Tape) -> bool + Send + Sync>;
/// (leaf, own input, own tape, public tape) -> raw output
pub type OutputFn = Arc<dyn Fn(&Bits, &Bits, &mut Tape, &mut Tape) -> RawOutput + Send + Sync>;
/// (leaf transcript, public tape) -> raw output
pub type OpenOutputFn = Arc<dyn Fn(&Bits, &mut Tape) -> RawOutput + Send + Sync>;

#[derive(Clone)]
pub struct TreeRules {
    /// `None` marks a leaf. Must be a pure function of the prefix.
    pub owner: OwnerFn,
    pub message: MessageFn,
    pub out_a: Option<OutputFn>,
    pub out_b: Option<OutputFn>,
    pub out_open: Option<OpenOutputFn>,
}

/// Result of one imperative run.
pub struct DirectRun {
    pub transcript: Bits,
    pub out_a: Option<RawOutput>,
    pub out_b: Option<RawOutput>,
    pub out_open: Option<RawOutput>,
}

pub type DirectFn = Arc<dyn Fn(&Bits, &Bits, &mut TapeSet) -> DirectRun + Send + Sync>;

#[derive(Clone)]
pub enum ProtocolKind {
    Tree(TreeRules),
    Direct(DirectFn),
}

/// Declared tape budgets in bits. Enumeration-based analyses require the
/// total to be small; stream-backed runs may exceed nothing (fixed tapes
/// enforce the budget hard).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapeBudgets {
    pub public: u64,
    pub private_a: u64,
    pub private_b: u64,
}

impl TapeBudgets {
    pub fn none() -> Self {
        TapeBudgets {
            public: 0,
            private_a: 0,
            private_b: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.public + self.private_a + self.private_b
    }
}

#[derive(Clone)]
pub struct Protocol {
    pub id: String,
    pub model: OutputModel,
    /// Answer length in bits; share strings also have this length.
    pub output_len: usize,
    /// True when the answer alphabet contains the silence symbol besides
    /// values; wire encodings of answers then need output_len + 1 bits.
    pub top_in_range: bool,
    pub input_len_a: usize,
    pub input_len_b: usize,
    pub budgets: TapeBudgets,
    /// Worst-case number of transcript bits, as declared by the constructor.
    pub max_cost: u64,
    pub kind: ProtocolKind,
}

/// One finished run: the transcript (cost = its length) plus raw outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunRecord {
    pub transcript: Bits,
    pub cost: u64,
    pub out_a: Option<RawOutput>,
    pub out_b: Option<RawOutput>,
    pub out_open: Option<RawOutput>,
}

/// Run a protocol on one input pair with the given tapes.
pub fn execute(p: &Protocol, x: &Bits, y: &Bits, tapes: &mut TapeSet) -> RunRecord {
    assert_eq!(x.len(), p.input_len_a, "{}: wrong x length", p.id);
    assert_eq!(y.len(), p.input_len_b, "{}: wrong y length", p.id);
    match &p.kind {
        ProtocolKind::Direct(f) => {
            let run = f(x, y, tapes);
            RunRecord {
                cost: run.transcript.len() as u64,
                transcript: run.transcript,
                out_a: run.out_a,
                out_b: run.out_b,
                out_open: run.out_open,
            }
        }
        ProtocolKind::Tree(rules) => {
            let mut w = Bits::empty();
            while let Some(who) = (rules.owner)(&w) {
                let (input, tape) = match who {
                    Player::Alice => (x, &mut tapes.a),
                    Player::Bob => (y, &mut tapes.b),
                };
                let bit = (rules.message)(who, &w, input, tape, &mut tapes.public);
                w.push(bit);
                assert!(
                    w.len() as u64 <= p.max_cost,
                    "{}: transcript exceeded declared max_cost {}",
                    p.id,
                    p.max_cost
                );
            }
            let out_a = rules
                .out_a
                .as_ref()
                .map(|f| f(&w, x, &mut tapes.a, &mut tapes.public));
            let out_b = rules
                .out_b
                .as_ref()
                .map(|f| f(&w, y, &mut tapes.b, &mut tapes.public));
            let out_open = rules.out_open.as_ref().map(|f| f(&w, &mut tapes.public));
            RunRecord {
                cost: w.len() as u64,
                transcript: w,
                out_a,
                out_b,
                out_open,
            }
        }
    }
}

impl Protocol {
    /// Convenience: run with stream tapes derived from a seed.
    pub fn run_seeded(&self, x: &Bits, y: &Bits, seed: u64) -> RunRecord {
        let mut tapes = TapeSet::from_seed(seed);
        execute(self, x, y, &mut tapes)
    }

    pub fn is_tree(&self) -> bool {
        matches!(self.kind, ProtocolKind::Tree(_))
    }

    /// Output maps present for each side, as required by the model.
    pub fn check_shape(&self) {
        if let ProtocolKind::Tree(rules) = &self.kind {
            use OutputModel::*;
            match self.model {
                Open => assert!(rules.out_open.is_some(), "{}: open output missing", self.id),
                UniAlice => assert!(rules.out_a.is_some()),
                UniBob => assert!(rules.out_b.is_some()),
                Local | OneOutOfTwo | Split | Xor => {
                    assert!(rules.out_a.is_some() && rules.out_b.is_some())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::model::Symbol;
    use crate::engine::model::{resolve, resolve_outcome};

    /// Two-bit exchange: Alice sends x[0], Bob sends y[0]; both output the
    /// pair. A minimal deterministic local protocol.
    fn tiny() -> Protocol {
        let owner: OwnerFn = Arc::new(|w: &Bits| match w.len() {
            0 => Some(Player::Alice),
            1 => Some(Player::Bob),
            _ => None,
        });
        let message: MessageFn =
            Arc::new(|_, _, input: &Bits, _: &mut Tape, _: &mut Tape| input.get(0));
        let out: OutputFn = Arc::new(|w: &Bits, _, _: &mut Tape, _: &mut Tape| {
            RawOutput::Value(w.clone())
        });
        Protocol {
            id: "tiny".into(),
            model: OutputModel::Local,
            output_len: 2,
            top_in_range: false,
            input_len_a: 1,
            input_len_b: 1,
            budgets: TapeBudgets::none(),
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
    fn tiny_runs() {
        let p = tiny();
        let mut tapes = TapeSet::none();
        let rec = execute(&p, &Bits::parse("1"), &Bits::parse("0"), &mut tapes);
        assert_eq!(rec.cost, 2);
        assert_eq!(rec.transcript, Bits::parse("10"));
        assert_eq!(
            resolve_outcome(OutputModel::Local, &rec),
            Ok(Symbol::Value(Bits::parse("10")))
        );
        assert!(resolve(
            OutputModel::Local,
            &rec,
            &Symbol::Value(Bits::parse("10"))
        ));
    }
}
