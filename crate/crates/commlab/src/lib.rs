//! Laboratory for two-party communication protocols with multi-bit outputs.
//!
//! A protocol exchanges single bits between Alice and Bob; cost is the number
//! of bits on the wire (randomness tapes are free). The same conversation can
//! be charged under several output models: an external observer may have to
//! compute the answer from the transcript alone, both players may have to
//! announce it, one fixed player, exactly one of the two (the other stays
//! silent), the two may share it positionwise, or they may hold XOR shares.
//!
//! The crate provides
//! * an execution engine with exact (tape-enumerating) and sampled error
//!   measurement ([`engine`]),
//! * a catalog of problems and hand-rolled protocols separating the models
//!   ([`problems`], [`blocks`]),
//! * solvers for the gap-majority aggregation problem that powers error
//!   amplification without per-bit union bounds ([`gapmaj`], [`amplify`]),
//! * derandomization of private-coin protocols via transcript distribution
//!   estimation ([`derand`]),
//! * exact rank / feasibility certificates for lower bounds ([`certify`]),
//! * a small experiment CLI ([`report`] plus the `commlab` binary).

pub mod engine;
pub mod problems;
pub mod blocks;
pub mod gapmaj;
pub mod amplify;
pub mod derand;
pub mod certify;
pub mod report;
pub mod testkit;

pub use engine::bits::{Bits, SplitString};
pub use engine::model::{OutputModel, Player, RawOutput, Symbol};
pub use engine::protocol::{Protocol, ProtocolKind, RunRecord, TapeBudgets};
pub use engine::tape::{Tape, TapeSet};
