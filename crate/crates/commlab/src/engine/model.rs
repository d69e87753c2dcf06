//! Output models and run resolution.
//!
//! The transcript is paid for; who must announce the answer, and in what
//! form, is the model. Silence (for the one-out-of-two model) is out of band:
//! it is an output state, not a message.

use super::bits::{weave_complete, Bits, SplitString};
use super::protocol::RunRecord;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Player {
    Alice,
    Bob,
}

impl Player {
    pub fn other(self) -> Player {
        match self {
            Player::Alice => Player::Bob,
            Player::Bob => Player::Alice,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutputModel {
    /// An observer computes the answer from transcript and public coins.
    Open,
    /// Both players must announce the same answer.
    Local,
    /// Alice alone announces.
    UniAlice,
    /// Bob alone announces.
    UniBob,
    /// Exactly one player announces the answer; the other stays silent.
    OneOutOfTwo,
    /// The players announce share strings whose weave is the answer.
    Split,
    /// The players announce XOR shares of the answer.
    Xor,
}

impl OutputModel {
    pub const ALL: [OutputModel; 7] = [
        OutputModel::Open,
        OutputModel::Local,
        OutputModel::UniAlice,
        OutputModel::UniBob,
        OutputModel::OneOutOfTwo,
        OutputModel::Split,
        OutputModel::Xor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutputModel::Open => "open",
            OutputModel::Local => "local",
            OutputModel::UniAlice => "alice",
            OutputModel::UniBob => "bob",
            OutputModel::OneOutOfTwo => "one-out-of-two",
            OutputModel::Split => "split",
            OutputModel::Xor => "xor",
        }
    }

    pub fn parse(s: &str) -> Option<OutputModel> {
        OutputModel::ALL.iter().copied().find(|m| m.name() == s)
    }
}

impl fmt::Display for OutputModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a single party emits at the end of a run.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum RawOutput {
    Value(Bits),
    /// Silence marker for the one-out-of-two model, also the "no answer"
    /// symbol in value-or-silence problem alphabets.
    Top,
    Share(SplitString),
}

/// A resolved answer: either a value or the silence symbol (for problems
/// whose range includes it).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum Symbol {
    Value(Bits),
    Top,
}

impl Symbol {
    pub fn value(v: Bits) -> Symbol {
        Symbol::Value(v)
    }

    pub fn as_value(&self) -> Option<&Bits> {
        match self {
            Symbol::Value(v) => Some(v),
            Symbol::Top => None,
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Value(v) => write!(f, "{}", v),
            Symbol::Top => write!(f, "T"),
        }
    }
}

/// Why a run failed to resolve to any answer.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum InvalidRun {
    /// Local model: the two announcements differ.
    Disagreement,
    /// One-out-of-two: both spoke or both stayed silent.
    WrongSpeakerCount,
    /// Split: the weave left holes (overlap or gap).
    IncompleteWeave,
    /// An output had the wrong form for the model.
    MalformedOutput,
}

/// Combine per-party raw outputs into the model's answer.
///
/// `Err` means the run is invalid under the model; invalid runs never count
/// as correct.
pub fn resolve_outcome(model: OutputModel, rec: &RunRecord) -> Result<Symbol, InvalidRun> {
    use InvalidRun::*;
    use OutputModel::*;
    let val = |o: &Option<RawOutput>| -> Result<Symbol, InvalidRun> {
        match o {
            Some(RawOutput::Value(v)) => Ok(Symbol::Value(v.clone())),
            Some(RawOutput::Top) => Ok(Symbol::Top),
            _ => Err(MalformedOutput),
        }
    };
    match model {
        Open => val(&rec.out_open),
        UniAlice => val(&rec.out_a),
        UniBob => val(&rec.out_b),
        Local => {
            let a = val(&rec.out_a)?;
            let b = val(&rec.out_b)?;
            if a == b {
                Ok(a)
            } else {
                Err(Disagreement)
            }
        }
        OneOutOfTwo => {
            let a = val(&rec.out_a)?;
            let b = val(&rec.out_b)?;
            match (a, b) {
                (Symbol::Value(v), Symbol::Top) => Ok(Symbol::Value(v)),
                (Symbol::Top, Symbol::Value(v)) => Ok(Symbol::Value(v)),
                _ => Err(WrongSpeakerCount),
            }
        }
        Split => {
            let (a, b) = match (&rec.out_a, &rec.out_b) {
                (Some(RawOutput::Share(a)), Some(RawOutput::Share(b))) => (a, b),
                _ => return Err(MalformedOutput),
            };
            weave_complete(a, b)
                .map(Symbol::Value)
                .ok_or(IncompleteWeave)
        }
        Xor => {
            let (a, b) = match (&rec.out_a, &rec.out_b) {
                (Some(RawOutput::Value(a)), Some(RawOutput::Value(b))) => (a, b),
                _ => return Err(MalformedOutput),
            };
            Ok(Symbol::Value(a.xor(b)))
        }
    }
}

/// Success predicate for one run against the intended answer.
pub fn resolve(model: OutputModel, rec: &RunRecord, truth: &Symbol) -> bool {
    matches!(resolve_outcome(model, rec), Ok(sym) if sym == *truth)
}
