//! Removing private randomness from tree protocols.
//!
//! Every construction here runs on the same engine. For a fixed input pair,
//! the probability of reaching leaf w factors into per-player consistency
//! fractions. Each relevant player publishes an m-bit fixed-point word per
//! leaf for its fraction; the word products, renormalized to sum to one,
//! form a shared estimate of the leaf distribution whose error against the
//! truth is at most the leftover mass C (the spread). Any statistic obtained
//! by weighting the estimate with per-leaf conditionals in [0,1] inherits
//! that same spread bound, because both the underestimate part and the
//! uniformly redistributed part of the defect are nonnegative measures of
//! total mass C. Each output model then removes randomness with its own
//! decision rule on top of the shared estimate, and the word count is chosen
//! so that the spread stays inside the model's decision margin.

use crate::engine::analysis::{
    factor_leaf_probabilities, open_leaf_output, tree_shape, FactorTable, EXACT_TAPE_LIMIT,
};
use crate::engine::bits::weave_complete;
use crate::engine::{
    ceil_log2_rat, Bits, DirectRun, EngineError, OutputModel, Player, Protocol, ProtocolKind,
    RawOutput, SplitString, TapeBudgets,
};
use crate::gapmaj::{heavy_count, heavy_rows};
use crate::problems::GapMajInstance;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// exact log2 arithmetic
// ---------------------------------------------------------------------------

fn two_pow(e: u64) -> BigInt {
    BigInt::one() << (e as usize)
}

fn rq(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Smallest m >= 0 with 2^m strictly greater than r.
pub fn strict_log2(r: &BigRational) -> u64 {
    let b = ceil_log2_rat(r);
    if BigRational::from(two_pow(b)) == *r {
        b + 1
    } else {
        b
    }
}

fn ceil_log2_u64(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros() as u64
    }
}

/// Largest j with 2^j <= u, for positive rational u.
fn floor_log2(u: &BigRational) -> i64 {
    assert!(u.is_positive());
    let le = |j: i64| -> bool {
        // 2^j <= n/d
        if j >= 0 {
            (u.denom() << (j as usize)) <= *u.numer()
        } else {
            *u.denom() <= (u.numer() << ((-j) as usize))
        }
    };
    let mut j = u.numer().bits() as i64 - u.denom().bits() as i64;
    while !le(j) {
        j -= 1;
    }
    while le(j + 1) {
        j += 1;
    }
    j
}

fn rat_two_pow(j: i64) -> BigRational {
    if j >= 0 {
        BigRational::from(two_pow(j as u64))
    } else {
        BigRational::new(BigInt::one(), two_pow((-j) as u64))
    }
}

/// Rigorous enclosure lo <= log2(u) <= hi by squaring a fixed-point
/// bracket of the mantissa. The width (about 2^-126) is far below any
/// margin the ceiling comparisons can produce.
pub fn log2_interval(u: &BigRational) -> (BigRational, BigRational) {
    const F: usize = 512;
    const STEPS: u32 = 128;
    let l = floor_log2(u);
    // v = u / 2^l in [1, 2), bracketed as [a, b] / 2^F
    let v = u / rat_two_pow(l);
    let scaled_num = v.numer() << F;
    let mut a: BigInt = &scaled_num / v.denom();
    let mut b: BigInt = if (&scaled_num % v.denom()).is_zero() {
        a.clone()
    } else {
        &a + 1
    };
    let unit = BigInt::one() << F;
    let bound = &unit << 1usize;
    let mut bits = BigInt::zero();
    let mut done = 0u32;
    for _ in 0..STEPS {
        a = (&a * &a) >> F;
        b = ((&b * &b) + (&unit - 1)) >> F;
        let hi_bit = if a >= bound {
            true
        } else if b < bound {
            false
        } else {
            break; // bracket straddles the bit boundary
        };
        bits = (bits << 1) + BigInt::from(hi_bit as u8);
        if hi_bit {
            b += 1;
            a >>= 1;
            b >>= 1;
        }
        done += 1;
    }
    let step = BigRational::new(BigInt::one(), two_pow(done as u64));
    let base = BigRational::from(BigInt::from(l)) + BigRational::from(bits) * &step;
    // the residual mantissa bracket lies in [1, 4)
    (base.clone(), base + step * rq(2, 1))
}

/// Decide c + a * log2(u) >= 0 exactly, for positive rational u.
pub fn log_affine_nonneg(c: &BigRational, a: u64, u: &BigRational) -> bool {
    assert!(u.is_positive(), "log argument must be positive");
    let l = floor_log2(u);
    let a_rat = BigRational::from(BigInt::from(a));
    if *u == rat_two_pow(l) {
        return c + &a_rat * BigRational::from(BigInt::from(l)) >= BigRational::zero();
    }
    if !c.is_negative() && l >= 0 {
        return true;
    }
    let (lo, hi) = log2_interval(u);
    if c + &a_rat * lo >= BigRational::zero() {
        return true;
    }
    if c + &a_rat * hi < BigRational::zero() {
        return false;
    }
    // c + a log2(u) is irrational here, so a tighter bracket would decide;
    // at width 2^-126 this cannot trigger for integer costs.
    panic!("log2 enclosure too coarse to compare");
}

// ---------------------------------------------------------------------------
// cost ceilings
// ---------------------------------------------------------------------------

/// Whether a deterministic cost fits the compilation ceiling for the given
/// model, worst-case error eps, tree cost r and answer length k. For the
/// one-out-of-two model r counts the one extra announce bit when eps >= 1/3
/// (the compiled layout is built on the always-exactly-one-speaker form) and
/// the ceiling carries 4 bits of framing slack.
pub fn ceiling_allows(
    model: OutputModel,
    eps: &BigRational,
    r: u64,
    k: usize,
    cost: u64,
) -> bool {
    let q = rq(1, 2) - eps;
    if !q.is_positive() {
        return false;
    }
    let third = rq(1, 3);
    let cost_rat = BigRational::from(BigInt::from(cost));
    let int = |v: BigInt| BigRational::from(v);
    match model {
        OutputModel::UniAlice | OutputModel::UniBob => {
            // 2^r (r + log(1/q) + 1)
            let c = int(two_pow(r) * (r + 1)) - cost_rat;
            log_affine_nonneg(&c, 1 << r.min(62), &q.recip())
        }
        OutputModel::Open | OutputModel::Local => {
            // 2^(r+1) (r + log(1/q) + 2)
            let c = int(two_pow(r + 1) * (r + 2)) - cost_rat;
            log_affine_nonneg(&c, 1 << (r + 1).min(62), &q.recip())
        }
        OutputModel::OneOutOfTwo => {
            if *eps < third {
                // 2^(r+1) (r + log(4/(1/3 - eps)) + 1) + 4
                let c = int(two_pow(r + 1) * (r + 1)) + rq(4, 1) - cost_rat;
                let u = rq(4, 1) / (third - eps);
                log_affine_nonneg(&c, 1 << (r + 1).min(62), &u)
            } else {
                // (2^(r+1) + 2)(r + log(8/q) + 1) + log(k) + 4 + 4, with
                // floor(log k) as a conservative stand-in for log(k)
                let a = two_pow(r + 1) + 2;
                let a_u64 = (1u64 << (r + 1).min(62)) + 2;
                let logk = if k <= 1 {
                    0
                } else {
                    63 - (k as u64).leading_zeros() as u64
                };
                let c = int(a * (r + 1)) + int(BigInt::from(logk + 8)) - cost_rat;
                log_affine_nonneg(&c, a_u64, &(rq(8, 1) / &q))
            }
        }
        OutputModel::Split if *eps < third => {
            // 2^(r+1) (r + log(4/(1/3 - eps)) + 1) + k
            let c = int(two_pow(r + 1) * (r + 1)) + int(BigInt::from(k as u64)) - cost_rat;
            let u = rq(4, 1) / (third - eps);
            log_affine_nonneg(&c, 1 << (r + 1).min(62), &u)
        }
        OutputModel::Split | OutputModel::Xor => {
            // 2^(r+1) (r + log(8/q) + 1) + k ((5 - 2 eps)/4 M + 1),
            // M = 16 q^-2 2^r
            let m_rows = rq(16, 1) * (&q * &q).recip() * int(two_pow(r));
            let kterm = BigRational::from(BigInt::from(k as u64))
                * ((rq(5, 1) - rq(2, 1) * eps) / rq(4, 1) * m_rows + BigRational::one());
            let c = int(two_pow(r + 1) * (r + 1)) + kterm - cost_rat;
            log_affine_nonneg(&c, 1 << (r + 1).min(62), &(rq(8, 1) / &q))
        }
    }
}

// ---------------------------------------------------------------------------
// word tables and the shared leaf estimate
// ---------------------------------------------------------------------------

// fixed-point words must fit u64 products; real error rates never get close
const MAX_WORD_BITS: u64 = 56;

fn word_bits_guard(m: u64) -> Result<u64, EngineError> {
    if m > MAX_WORD_BITS {
        return Err(EngineError::BadParameter(format!(
            "word size {} exceeds the fixed-point limit {}",
            m, MAX_WORD_BITS
        )));
    }
    Ok(m)
}

/// floor(alpha 2^m) per leaf, capped at 2^m - 1 so every word fits in m
/// bits. The cap only binds at alpha = 1; the gap alpha - word/2^m stays in
/// [0, 2^-m] either way.
fn word_table(ft: &FactorTable, m: u64) -> Vec<u64> {
    let cap = (1u128 << m) - 1;
    ft.counts
        .iter()
        .map(|&c| {
            let d = ((c as u128) << m) >> ft.tape_budget;
            d.min(cap) as u64
        })
        .collect()
}

/// Renormalized leaf estimate over a common integer denominator 2^scale * T:
/// leaf i carries (raw[i] * T + slack) / (2^scale * T) where slack is the
/// mass the underestimates left on the table. The spread C = slack / 2^scale
/// bounds the estimate's deviation on every event.
struct LeafEstimate {
    num: Vec<BigInt>,
    den: BigInt,
    scale: u64,
    slack: BigInt,
}

impl LeafEstimate {
    fn from_products(raw: Vec<BigInt>, scale: u64) -> LeafEstimate {
        let t = raw.len() as u64;
        let cap = two_pow(scale);
        let total: BigInt = raw.iter().sum();
        assert!(total <= cap, "word products exceed unit mass");
        let slack = &cap - total;
        let num: Vec<BigInt> = raw.iter().map(|v| v * t + &slack).collect();
        LeafEstimate {
            num,
            den: cap * t,
            scale,
            slack,
        }
    }

    /// Both players' words quantized: raw = d_w e_w on the 2^(2m) grid.
    fn two_sided(words_a: &[u64], words_b: &[u64], m: u64) -> LeafEstimate {
        let raw = words_a
            .iter()
            .zip(words_b)
            .map(|(&d, &e)| BigInt::from(d) * BigInt::from(e))
            .collect();
        LeafEstimate::from_products(raw, 2 * m)
    }

    /// Only the sender quantized; the receiver contributes its exact tape
    /// counts. raw = d_w c_w on the 2^(m + budget) grid.
    fn one_sided(words: &[u64], receiver: &FactorTable, m: u64) -> LeafEstimate {
        let raw = words
            .iter()
            .zip(&receiver.counts)
            .map(|(&d, &c)| BigInt::from(d) * BigInt::from(c))
            .collect();
        LeafEstimate::from_products(raw, m + receiver.tape_budget)
    }

    fn value(&self, i: usize) -> BigRational {
        BigRational::new(self.num[i].clone(), self.den.clone())
    }

    fn spread(&self) -> BigRational {
        BigRational::new(self.slack.clone(), two_pow(self.scale))
    }
}

fn push_word(wire: &mut Bits, word: u64, width: u64) {
    for j in (0..width).rev() {
        wire.push((word >> j) & 1 == 1);
    }
}

/// One full two-way word exchange plus the estimate built from it.
struct Exchange {
    ft_a: FactorTable,
    ft_b: FactorTable,
    le: LeafEstimate,
    wire: Bits,
}

fn exchange(base: &Protocol, x: &Bits, y: &Bits, m: u64) -> Exchange {
    let ft_a = factor_leaf_probabilities(base, Player::Alice, x).expect("validated tree");
    let ft_b = factor_leaf_probabilities(base, Player::Bob, y).expect("validated tree");
    let words_a = word_table(&ft_a, m);
    let words_b = word_table(&ft_b, m);
    let mut wire = Bits::empty();
    for &w in &words_a {
        push_word(&mut wire, w, m);
    }
    for &w in &words_b {
        push_word(&mut wire, w, m);
    }
    let le = LeafEstimate::two_sided(&words_a, &words_b, m);
    Exchange {
        ft_a,
        ft_b,
        le,
        wire,
    }
}

/// q(o) = sum_w p''(w) cond_side(o | w). Leaves the side never reaches get a
/// point-mass conditional at `fallback`; that choice is free because the
/// true leaf probability there is zero, so the spread bound is unaffected.
fn side_estimate(
    le: &LeafEstimate,
    ft: &FactorTable,
    fallback: &RawOutput,
) -> BTreeMap<RawOutput, BigRational> {
    let mut acc: BTreeMap<RawOutput, BigRational> = BTreeMap::new();
    for i in 0..ft.counts.len() {
        if ft.counts[i] == 0 {
            let e = acc.entry(fallback.clone()).or_insert_with(BigRational::zero);
            *e += le.value(i);
            continue;
        }
        let c = BigInt::from(ft.counts[i]);
        for (o, &n) in &ft.out_counts[i] {
            let term = BigRational::new(&le.num[i] * BigInt::from(n), &le.den * &c);
            let e = acc.entry(o.clone()).or_insert_with(BigRational::zero);
            *e += term;
        }
    }
    acc
}

/// Heaviest key, ties toward the smaller key.
fn argmax<K: Ord + Clone, V: Ord>(map: &BTreeMap<K, V>) -> Option<K> {
    let mut best: Option<(&K, &V)> = None;
    for (k, v) in map {
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k.clone())
}

/// Value outputs at or above the threshold, heaviest first, value order
/// breaking ties.
fn value_candidates(
    est: &BTreeMap<RawOutput, BigRational>,
    threshold: &BigRational,
) -> Vec<(Bits, BigRational)> {
    let mut out: Vec<(Bits, BigRational)> = est
        .iter()
        .filter_map(|(o, p)| match o {
            RawOutput::Value(v) if p >= threshold => Some((v.clone(), p.clone())),
            _ => None,
        })
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

// ---------------------------------------------------------------------------
// transcript distribution estimation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TdeMode {
    /// Alice sends her words; Bob combines them with his exact fractions.
    Unilateral,
    /// Both send words; anyone seeing the wire can form the estimate.
    Open,
}

/// A probability vector over leaf transcripts. Entries sum to exactly 1.
/// `step` is the common grid of all entries when both sides were quantized;
/// a mixed word-times-exact estimate has no uniform grid and carries None.
pub struct TranscriptDistribution {
    pub entries: Vec<(Bits, BigRational)>,
    pub step: Option<BigRational>,
}

impl TranscriptDistribution {
    pub fn total(&self) -> BigRational {
        self.entries.iter().map(|(_, p)| p.clone()).sum()
    }

    /// Statistical distance against an exact leaf distribution (absent
    /// leaves count as zero).
    pub fn distance(&self, exact: &[(Bits, BigRational)]) -> BigRational {
        let map: BTreeMap<&Bits, &BigRational> = exact.iter().map(|(w, p)| (w, p)).collect();
        let mut l1 = BigRational::zero();
        for (w, p) in &self.entries {
            let truth = map.get(w).cloned().cloned().unwrap_or_else(BigRational::zero);
            l1 += (p - truth).abs();
        }
        l1 / rq(2, 1)
    }
}

pub struct TdeEstimate {
    pub mode: TdeMode,
    /// Fixed-point bits per word.
    pub word_bits: u64,
    pub words_a: Vec<u64>,
    pub words_b: Vec<u64>,
    /// The leftover mass C; deviation on any event is at most this.
    pub spread: BigRational,
    pub estimate: TranscriptDistribution,
    pub cost: u64,
    pub transcript: Bits,
}

/// Estimate the leaf distribution of a private-coin tree protocol on one
/// input pair to statistical distance delta, reporting the exact wire cost
/// of the words that would be exchanged.
pub fn tde(
    p: &Protocol,
    x: &Bits,
    y: &Bits,
    delta: &BigRational,
    mode: TdeMode,
) -> Result<TdeEstimate, EngineError> {
    if !delta.is_positive() {
        return Err(EngineError::BadParameter("estimation radius must be positive".into()));
    }
    let ft_a = factor_leaf_probabilities(p, Player::Alice, x)?;
    let ft_b = factor_leaf_probabilities(p, Player::Bob, y)?;
    let t = ft_a.leaves.len() as u64;
    let t_rat = BigRational::from(BigInt::from(t));
    let (m, words_a, words_b, le, cost) = match mode {
        TdeMode::Unilateral => {
            let m = word_bits_guard(ceil_log2_rat(&(&t_rat / delta)))?;
            let words_a = word_table(&ft_a, m);
            let le = LeafEstimate::one_sided(&words_a, &ft_b, m);
            (m, words_a, Vec::new(), le, t * m)
        }
        TdeMode::Open => {
            let m = word_bits_guard(ceil_log2_rat(&(rq(2, 1) * &t_rat / delta)))?;
            let words_a = word_table(&ft_a, m);
            let words_b = word_table(&ft_b, m);
            let le = LeafEstimate::two_sided(&words_a, &words_b, m);
            (m, words_a, words_b, le, 2 * t * m)
        }
    };
    let mut transcript = Bits::empty();
    for &w in words_a.iter().chain(&words_b) {
        push_word(&mut transcript, w, m);
    }
    let entries: Vec<(Bits, BigRational)> = ft_a
        .leaves
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), le.value(i)))
        .collect();
    let step = match mode {
        TdeMode::Unilateral => None,
        TdeMode::Open => Some(BigRational::new(BigInt::one(), le.den.clone())),
    };
    let spread = le.spread();
    debug_assert!(spread <= *delta);
    Ok(TdeEstimate {
        mode,
        word_bits: m,
        words_a,
        words_b,
        spread,
        estimate: TranscriptDistribution { entries, step },
        cost,
        transcript,
    })
}

// ---------------------------------------------------------------------------
// grid discretization of output distributions
// ---------------------------------------------------------------------------

/// A distribution restricted to multiples of 1/slots. weights[i] counts
/// slots, so they sum to exactly `slots`.
pub struct GridOutputDistribution {
    pub slots: u64,
    pub weights: Vec<u64>,
}

/// Round a distribution onto the 1/ceil(1/delta) grid: floor everything,
/// then hand the missing slots to the entries with the largest rounding
/// gap (index order breaking ties). Every entry moves by at most one slot.
pub fn discretize(probs: &[BigRational], delta: &BigRational) -> GridOutputDistribution {
    assert!(delta.is_positive());
    let total: BigRational = probs.iter().cloned().sum();
    assert!(total.is_one(), "discretize input must be a distribution");
    assert!(probs.iter().all(|p| !p.is_negative()));
    let d_int = delta.recip().ceil().to_integer();
    let slots = u64::try_from(&d_int).expect("grid fits u64");
    let d_rat = BigRational::from(d_int);
    let mut weights = Vec::with_capacity(probs.len());
    let mut gaps = Vec::with_capacity(probs.len());
    let mut used = 0u64;
    for (i, p) in probs.iter().enumerate() {
        let scaled = p * &d_rat;
        let fl = scaled.floor();
        weights.push(u64::try_from(&fl.to_integer()).expect("slot count fits"));
        used += weights[i];
        gaps.push((scaled - fl, i));
    }
    gaps.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (gap, i) in gaps.into_iter().take((slots - used) as usize) {
        debug_assert!(gap.is_positive());
        weights[i] += 1;
    }
    debug_assert_eq!(weights.iter().sum::<u64>(), slots);
    GridOutputDistribution { slots, weights }
}

/// Check the composition bound behind every estimate in this module: if U'
/// deviates from U by at most delta_u on every event and each conditional
/// row V'[u] deviates from V[u] by at most delta_v on every event, then the
/// composed output distributions deviate by at most delta_u + delta_v on
/// every event. Deviation on every event for vectors summing to a common
/// total equals half the L1 distance.
pub fn linf_compose_check(
    u: &[BigRational],
    u2: &[BigRational],
    v: &[Vec<BigRational>],
    v2: &[Vec<BigRational>],
    delta_u: &BigRational,
    delta_v: &BigRational,
) -> bool {
    if u.len() != u2.len() || v.len() != u.len() || v2.len() != u.len() {
        return false;
    }
    let half = rq(1, 2);
    let dev = |a: &[BigRational], b: &[BigRational]| -> BigRational {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .sum::<BigRational>()
            * &half
    };
    if dev(u, u2) > *delta_u {
        return false;
    }
    let outcomes = v.first().map_or(0, |r| r.len());
    for (r, r2) in v.iter().zip(v2) {
        if r.len() != outcomes || r2.len() != outcomes || dev(r, r2) > *delta_v {
            return false;
        }
    }
    let bound = delta_u + delta_v;
    for z in 0..outcomes {
        let mut diff = BigRational::zero();
        for i in 0..u.len() {
            diff += &u2[i] * &v2[i][z] - &u[i] * &v[i][z];
        }
        if diff.abs() > bound {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// compiled plans
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DerandPlan {
    pub model: OutputModel,
    /// Which decision layout was compiled.
    pub branch: &'static str,
    /// Leaf count of the tree the words describe (the always-one-speaker
    /// form for one-out-of-two above error 1/3).
    pub leaves: u64,
    /// Tree cost entering the ceiling, on the same form as `leaves`.
    pub depth: u64,
    pub word_bits: u64,
    pub cost: u64,
    pub eps: BigRational,
    pub k: usize,
    /// Grid slots per output distribution (split and XOR layouts).
    pub slots: Option<u64>,
    /// Virtual row count of the induced majority instance.
    pub rows: Option<u64>,
    /// Rows shipped by the heavy-row majority solver.
    pub heavy: Option<u64>,
    /// Bits per reconciliation word (one-out-of-two above 1/3).
    pub grid_bits: Option<u64>,
}

impl DerandPlan {
    pub fn ceiling_ok(&self) -> bool {
        ceiling_allows(self.model, &self.eps, self.depth, self.k, self.cost)
    }
}

pub struct Derandomized {
    pub protocol: Protocol,
    pub plan: DerandPlan,
}

fn deterministic(base: &Protocol, cost: u64, run: impl Fn(&Bits, &Bits) -> DirectRun + Send + Sync + 'static) -> Protocol {
    Protocol {
        id: format!("derand({})", base.id),
        model: base.model,
        output_len: base.output_len,
        top_in_range: base.top_in_range,
        input_len_a: base.input_len_a,
        input_len_b: base.input_len_b,
        budgets: TapeBudgets::none(),
        max_cost: cost,
        kind: ProtocolKind::Direct(Arc::new(move |x, y, _| run(x, y))),
    }
}

/// Compile a private-coin tree protocol with worst-case error eps into a
/// deterministic protocol in the same model that answers exactly like the
/// randomized plurality on every input. Errors at or above 1/2 leave no
/// majority to read off and are rejected.
pub fn derand(base: &Protocol, eps: &BigRational) -> Result<Derandomized, EngineError> {
    if !base.is_tree() {
        return Err(EngineError::NotTree);
    }
    if base.budgets.public != 0 {
        return Err(EngineError::PublicCoins);
    }
    let widest = base.budgets.private_a.max(base.budgets.private_b);
    if widest > EXACT_TAPE_LIMIT {
        return Err(EngineError::OracleInfeasible(widest, EXACT_TAPE_LIMIT));
    }
    if eps.is_negative() {
        return Err(EngineError::BadParameter("error rate below zero".into()));
    }
    if *eps >= rq(1, 2) {
        return Err(EngineError::NotDerandomizable(eps.clone()));
    }
    let shape = tree_shape(base)?;
    let t = shape.leaves.len() as u64;
    let r = shape.depth as u64;
    let third = rq(1, 3);
    let (plan, protocol) = match base.model {
        OutputModel::UniAlice | OutputModel::UniBob => build_uni(base, eps, t, r)?,
        OutputModel::Open => build_open(base, eps, t, r)?,
        OutputModel::Local => build_local(base, eps, t, r)?,
        OutputModel::OneOutOfTwo if *eps < third => build_oot_low(base, eps, t, r)?,
        OutputModel::OneOutOfTwo => build_oot_general(base, eps)?,
        OutputModel::Split if *eps < third => build_split_low(base, eps, t, r)?,
        OutputModel::Split => build_split_general(base, eps, t, r)?,
        OutputModel::Xor => build_xor(base, eps, t, r)?,
    };
    assert!(plan.ceiling_ok(), "{}: compiled cost misses ceiling", base.id);
    Ok(Derandomized { protocol, plan })
}

fn base_plan(model: OutputModel, branch: &'static str, t: u64, r: u64, m: u64, cost: u64, eps: &BigRational, k: usize) -> DerandPlan {
    DerandPlan {
        model,
        branch,
        leaves: t,
        depth: r,
        word_bits: m,
        cost,
        eps: eps.clone(),
        k,
        slots: None,
        rows: None,
        heavy: None,
        grid_bits: None,
    }
}

fn zeros(k: usize) -> Bits {
    Bits::new(k)
}

// ----- unilateral -----

fn build_uni(base: &Protocol, eps: &BigRational, t: u64, r: u64) -> Result<(DerandPlan, Protocol), EngineError> {
    let q = rq(1, 2) - eps;
    let t_rat = BigRational::from(BigInt::from(t));
    // spread strictly below the majority gap
    let m = word_bits_guard(strict_log2(&(&t_rat / &q)))?;
    let cost = t * m;
    let k = base.output_len;
    let receiver = if base.model == OutputModel::UniAlice {
        Player::Alice
    } else {
        Player::Bob
    };
    let captured = base.clone();
    let run = move |x: &Bits, y: &Bits| -> DirectRun {
        let ft_a = factor_leaf_probabilities(&captured, Player::Alice, x).expect("validated");
        let ft_b = factor_leaf_probabilities(&captured, Player::Bob, y).expect("validated");
        let (sender_ft, receiver_ft) = match receiver {
            Player::Alice => (&ft_b, &ft_a),
            Player::Bob => (&ft_a, &ft_b),
        };
        let words = word_table(sender_ft, m);
        let mut wire = Bits::empty();
        for &w in &words {
            push_word(&mut wire, w, m);
        }
        let le = LeafEstimate::one_sided(&words, receiver_ft, m);
        let est = side_estimate(&le, receiver_ft, &RawOutput::Value(zeros(k)));
        let out = argmax(&est).expect("nonempty estimate");
        let (out_a, out_b) = match receiver {
            Player::Alice => (Some(out), None),
            Player::Bob => (None, Some(out)),
        };
        DirectRun {
            transcript: wire,
            out_a,
            out_b,
            out_open: None,
        }
    };
    let plan = base_plan(base.model, "unilateral", t, r, m, cost, eps, k);
    Ok((plan, deterministic(base, cost, run)))
}

// ----- open and local -----

fn open_local_words(eps: &BigRational, t: u64) -> Result<u64, EngineError> {
    let q = rq(1, 2) - eps;
    let t_rat = BigRational::from(BigInt::from(t));
    word_bits_guard(strict_log2(&(rq(2, 1) * &t_rat / &q)))
}

fn build_open(base: &Protocol, eps: &BigRational, t: u64, r: u64) -> Result<(DerandPlan, Protocol), EngineError> {
    let m = open_local_words(eps, t)?;
    let cost = 2 * t * m;
    let captured = base.clone();
    let run = move |x: &Bits, y: &Bits| -> DirectRun {
        let ex = exchange(&captured, x, y, m);
        let mut est: BTreeMap<RawOutput, BigRational> = BTreeMap::new();
        for (i, leaf) in ex.ft_a.leaves.iter().enumerate() {
            let out = open_leaf_output(&captured, leaf).expect("open protocols map every leaf");
            let e = est.entry(out).or_insert_with(BigRational::zero);
            *e += ex.le.value(i);
        }
        DirectRun {
            transcript: ex.wire,
            out_a: None,
            out_b: None,
            out_open: Some(argmax(&est).expect("nonempty estimate")),
        }
    };
    let plan = base_plan(base.model, "open", t, r, m, cost, eps, base.output_len);
    Ok((plan, deterministic(base, cost, run)))
}

fn build_local(base: &Protocol, eps: &BigRational, t: u64, r: u64) -> Result<(DerandPlan, Protocol), EngineError> {
    let m = open_local_words(eps, t)?;
    let cost = 2 * t * m;
    let k = base.output_len;
    let captured = base.clone();
    let run = move |x: &Bits, y: &Bits| -> DirectRun {
        let ex = exchange(&captured, x, y, m);
        let fb = RawOutput::Value(zeros(k));
        // each side reads its own plurality off the shared estimate; both
        // land on the majority answer whenever the spread is inside the gap
        let est_a = side_estimate(&ex.le, &ex.ft_a, &fb);
        let est_b = side_estimate(&ex.le, &ex.ft_b, &fb);
        DirectRun {
            transcript: ex.wire,
            out_a: Some(argmax(&est_a).expect("nonempty estimate")),
            out_b: Some(argmax(&est_b).expect("nonempty estimate")),
            out_open: None,
        }
    };
    let plan = base_plan(base.model, "local", t, r, m, cost, eps, k);
    Ok((plan, deterministic(base, cost, run)))
}

// ----- one-out-of-two -----

fn build_oot_low(base: &Protocol, eps: &BigRational, t: u64, r: u64) -> Result<(DerandPlan, Protocol), EngineError> {
    let gap = rq(1, 3) - eps;
    let t_rat = BigRational::from(BigInt::from(t));
    // spread at most gap/2: wrong values stay strictly under 1/3 while the
    // heavier owner of the answer stays at or above it
    let m = word_bits_guard(ceil_log2_rat(&(rq(4, 1) * &t_rat / &gap)))?;
    let cost = 2 * t * m + 1;
    let k = base.output_len;
    let third = rq(1, 3);
    let captured = base.clone();
    let run = move |x: &Bits, y: &Bits| -> DirectRun {
        let ex = exchange(&captured, x, y, m);
        let est_a = side_estimate(&ex.le, &ex.ft_a, &RawOutput::Top);
        let est_b = side_estimate(&ex.le, &ex.ft_b, &RawOutput::Top);
        let ca = value_candidates(&est_a, &third);
        let cb = value_candidates(&est_b, &third);
        let alice_speaks = !ca.is_empty();
        let mut wire = ex.wire;
        wire.push(alice_speaks);
        let (out_a, out_b) = if alice_speaks {
            (RawOutput::Value(ca[0].0.clone()), RawOutput::Top)
        } else {
            let z = cb.first().map(|(v, _)| v.clone()).unwrap_or_else(|| zeros(k));
            (RawOutput::Top, RawOutput::Value(z))
        };
        DirectRun {
            transcript: wire,
            out_a: Some(out_a),
            out_b: Some(out_b),
            out_open: None,
        }
    };
    let plan = base_plan(base.model, "speaker-threshold", t, r, m, cost, eps, k);
    Ok((plan, deterministic(base, cost, run)))
}

fn grid_word(v: &BigRational, bits: u64) -> u64 {
    let scaled = (v * BigRational::from(two_pow(bits))).floor().to_integer();
    let cap = BigInt::from((1u64 << bits) - 1);
    u64::try_from(&scaled.min(cap)).expect("grid word fits")
}

fn build_oot_general(base: &Protocol, eps: &BigRational) -> Result<(DerandPlan, Protocol), EngineError> {
    // work on the form where exactly one player speaks in every run; it
    // costs one announce bit and never increases the error
    let speak = crate::amplify::oot_normalize(base);
    if speak.budgets.private_b > EXACT_TAPE_LIMIT {
        return Err(EngineError::OracleInfeasible(speak.budgets.private_b, EXACT_TAPE_LIMIT));
    }
    let shape1 = tree_shape(&speak)?;
    let t1 = shape1.leaves.len() as u64;
    let r1 = shape1.depth as u64;
    let k = base.output_len;
    let delta = rq(1, 2) - eps;
    let t_rat = BigRational::from(BigInt::from(t1));
    // sigma = 2 gamma T strictly below delta/3 keeps the joint candidate
    // count at 3 and each reconciliation margin inside delta
    let m = word_bits_guard(strict_log2(&(rq(6, 1) * &t_rat / &delta)))?;
    let sigma = rq(2, 1) * &t_rat / BigRational::from(two_pow(m));
    debug_assert!(sigma < &delta / rq(3, 1));
    let m_g = ceil_log2_rat(&sigma.recip()) + 1;
    let idx_bits = ceil_log2_u64(k as u64);
    let payload = (idx_bits + m_g).max(2 * m_g);
    let cost = 2 * t1 * m + 4 + payload;
    // a candidate must beat 1/4 + (delta - 2 sigma)/2; the heavier owner of
    // the true answer reaches that even after losing sigma to the estimate
    let tau = rq(1, 4) + (&delta - rq(2, 1) * &sigma) / rq(2, 1);
    let half = rq(1, 2);
    let run = move |x: &Bits, y: &Bits| -> DirectRun {
        let ex = exchange(&speak, x, y, m);
        let est_a = side_estimate(&ex.le, &ex.ft_a, &RawOutput::Top);
        let est_b = side_estimate(&ex.le, &ex.ft_b, &RawOutput::Top);
        let ca = value_candidates(&est_a, &tau);
        let cb = value_candidates(&est_b, &tau);
        let na = ca.len().min(2);
        let nb = cb.len().min(2);
        let mut wire = ex.wire;
        push_word(&mut wire, na as u64, 2);
        push_word(&mut wire, nb as u64, 2);
        let mut pay = Bits::empty();
        let grid_den = BigRational::from(two_pow(m_g));
        let sum_bit_zero = |est: &BTreeMap<RawOutput, BigRational>, i: usize| -> BigRational {
            est.iter()
                .filter_map(|(o, p)| match o {
                    RawOutput::Value(v) if !v.get(i) => Some(p.clone()),
                    _ => None,
                })
                .sum()
        };
        let speak_a = |z: Bits| (RawOutput::Value(z), RawOutput::Top);
        let speak_b = |z: Bits| (RawOutput::Top, RawOutput::Value(z));
        let (out_a, out_b) = match (na, nb) {
            (1, 0) | (2, 2) => speak_a(ca[0].0.clone()),
            (0, 1) | (2, 1) => speak_b(cb[0].0.clone()),
            (1, 2) => speak_a(ca[0].0.clone()),
            (0, 0) => speak_b(zeros(k)),
            (2, 0) | (0, 2) => {
                // the owner of both candidates names the first bit where
                // they differ; the silent side answers with its gridded
                // total weight on values carrying a zero there
                let (own, owner_est, other_est) = if na == 2 {
                    (&ca, &est_a, &est_b)
                } else {
                    (&cb, &est_b, &est_a)
                };
                let i = own[0].0.first_diff(&own[1].0);
                push_word(&mut pay, i as u64, idx_bits);
                let reply = grid_word(&sum_bit_zero(other_est, i), m_g);
                push_word(&mut pay, reply, m_g);
                let (z0, z1) = if !own[0].0.get(i) {
                    (own[0].0.clone(), own[1].0.clone())
                } else {
                    (own[1].0.clone(), own[0].0.clone())
                };
                let own_zero = owner_est
                    .get(&RawOutput::Value(z0.clone()))
                    .cloned()
                    .unwrap_or_else(BigRational::zero);
                let pick_zero =
                    own_zero + BigRational::from(BigInt::from(reply)) / &grid_den > half;
                let chosen = if pick_zero { z0 } else { z1 };
                if na == 2 {
                    speak_a(chosen)
                } else {
                    speak_b(chosen)
                }
            }
            (1, 1) => {
                // both decisions must come off the wire words, otherwise the
                // two sides can disagree when they hold the same candidate
                let top_a = est_a
                    .get(&RawOutput::Top)
                    .cloned()
                    .unwrap_or_else(BigRational::zero);
                let wa = grid_word(&(&ca[0].1 + top_a), m_g);
                let wb = grid_word(&cb[0].1, m_g);
                push_word(&mut pay, wa, m_g);
                push_word(&mut pay, wb, m_g);
                // Alice speaks iff her value weight plus her silence weight
                // minus Bob's value weight exceeds 1/2
                let alice = (wa as i128 - wb as i128) * 2 > (1i128 << m_g);
                if alice {
                    speak_a(ca[0].0.clone())
                } else {
                    speak_b(cb[0].0.clone())
                }
            }
            _ => unreachable!("candidate counts are capped at 2"),
        };
        while (pay.len() as u64) < payload {
            pay.push(false);
        }
        let wire = wire.concat(&pay);
        DirectRun {
            transcript: wire,
            out_a: Some(out_a),
            out_b: Some(out_b),
            out_open: None,
        }
    };
    let mut plan = base_plan(base.model, "speaker-reconcile", t1, r1, m, cost, eps, k);
    plan.grid_bits = Some(m_g);
    Ok((plan, deterministic(base, cost, run)))
}

// ----- split -----

/// Weight the side puts on covering position i with symbol s, read off the
/// shared estimate. Unreachable leaves fall back to the given share.
fn coverage(
    le: &LeafEstimate,
    ft: &FactorTable,
    fallback: &SplitString,
    k: usize,
) -> Vec<[BigRational; 2]> {
    let mut cover = vec![[BigRational::zero(), BigRational::zero()]; k];
    let mut add = |share: &SplitString, weight: BigRational| {
        for (i, c) in cover.iter_mut().enumerate() {
            if let Some(s) = share.get(i) {
                c[s as usize] += weight.clone();
            }
        }
    };
    for li in 0..ft.counts.len() {
        if ft.counts[li] == 0 {
            add(fallback, le.value(li));
            continue;
        }
        let c = BigInt::from(ft.counts[li]);
        for (o, &n) in &ft.out_counts[li] {
            if let RawOutput::Share(share) = o {
                let w = BigRational::new(&le.num[li] * BigInt::from(n), &le.den * &c);
                add(share, w);
            }
        }
    }
    cover
}

fn build_split_low(base: &Protocol, eps: &BigRational, t: u64, r: u64) -> Result<(DerandPlan, Protocol), EngineError> {
    let gap = rq(1, 3) - eps;
    let t_rat = BigRational::from(BigInt::from(t));
    let m = word_bits_guard(ceil_log2_rat(&(rq(4, 1) * &t_rat / &gap)))?;
    let k = base.output_len;
    let cost = 2 * t * m + k as u64;
    let third = rq(1, 3);
    let captured = base.clone();
    let run = move |x: &Bits, y: &Bits| -> DirectRun {
        let ex = exchange(&captured, x, y, m);
        let cov_a = coverage(&ex.le, &ex.ft_a, &SplitString::full(zeros(k)), k);
        let cov_b = coverage(&ex.le, &ex.ft_b, &SplitString::holes(k), k);
        // Alice claims the positions she covers with one symbol more than a
        // third of the time; those symbols are correct, and Bob's own best
        // symbol wins every unclaimed position
        let mut mask = Bits::new(k);
        let mut vals_a = Bits::new(k);
        let mut vals_b = Bits::new(k);
        for i in 0..k {
            let a1 = cov_a[i][1] > cov_a[i][0];
            let claim = cov_a[i][a1 as usize] > third;
            mask.set(i, claim);
            if claim {
                vals_a.set(i, a1);
            } else {
                vals_b.set(i, cov_b[i][1] > cov_b[i][0]);
            }
        }
        let wire = ex.wire.concat(&mask);
        DirectRun {
            transcript: wire,
            out_a: Some(RawOutput::Share(SplitString::new(mask.clone(), vals_a))),
            out_b: Some(RawOutput::Share(SplitString::new(mask.not(), vals_b))),
            out_open: None,
        }
    };
    let plan = base_plan(base.model, "claim-positions", t, r, m, cost, eps, k);
    Ok((plan, deterministic(base, cost, run)))
}

// ----- grid slot machinery shared by the split and XOR compilers -----

struct GeneralShape {
    word_bits: u64,
    slots: u64,
    rows: u64,
    instance_eps: BigRational,
}

fn general_shape(eps: &BigRational, t: u64, r: u64) -> Result<GeneralShape, EngineError> {
    let q = rq(1, 2) - eps;
    let t_rat = BigRational::from(BigInt::from(t));
    // leaf spread q/4, per-entry grid error 1/slots <= q/4: the row measure
    // of any answer moves by at most 3q/4 against the true protocol
    let m = word_bits_guard(ceil_log2_rat(&(rq(8, 1) * &t_rat / &q)))?;
    let slots_int = (rq(4, 1) / &q).ceil().to_integer();
    let slots = u64::try_from(&slots_int)
        .ok()
        .filter(|s| *s <= 1 << 16)
        .ok_or_else(|| EngineError::BadParameter("output grid too fine".into()))?;
    let rows = slots
        .checked_pow(2)
        .and_then(|s| s.checked_shl(r as u32))
        .filter(|rows| *rows <= 1 << 22)
        .ok_or_else(|| EngineError::BadParameter("virtual instance too large".into()))?;
    let instance_eps = rq(3, 8) + eps / rq(4, 1);
    Ok(GeneralShape {
        word_bits: m,
        slots,
        rows,
        instance_eps,
    })
}

/// Per-leaf slot tables: the side's conditional output distribution rounded
/// onto the slot grid and expanded into `slots` entries, observed output
/// order. Unreachable leaves get all slots at the fallback.
fn slot_tables(
    ft: &FactorTable,
    slots: u64,
    fallback: &RawOutput,
) -> Vec<Vec<RawOutput>> {
    let delta = BigRational::new(BigInt::one(), BigInt::from(slots));
    (0..ft.counts.len())
        .map(|li| {
            if ft.counts[li] == 0 {
                return vec![fallback.clone(); slots as usize];
            }
            let c = BigInt::from(ft.counts[li]);
            let keys: Vec<&RawOutput> = ft.out_counts[li].keys().collect();
            let probs: Vec<BigRational> = ft.out_counts[li]
                .values()
                .map(|&n| BigRational::new(BigInt::from(n), c.clone()))
                .collect();
            let grid = discretize(&probs, &delta);
            let mut table = Vec::with_capacity(slots as usize);
            for (key, &w) in keys.iter().zip(&grid.weights) {
                for _ in 0..w {
                    table.push((*key).clone());
                }
            }
            table
        })
        .collect()
}

fn build_split_general(base: &Protocol, eps: &BigRational, t: u64, r: u64) -> Result<(DerandPlan, Protocol), EngineError> {
    let shape = general_shape(eps, t, r)?;
    let (m, slots) = (shape.word_bits, shape.slots);
    let k = base.output_len;
    let cost = 2 * t * m + 2 * (k as u64) * slots * t;
    let captured = base.clone();
    let run = move |x: &Bits, y: &Bits| -> DirectRun {
        let ex = exchange(&captured, x, y, m);
        let fa = RawOutput::Share(SplitString::full(zeros(k)));
        let fb = RawOutput::Share(SplitString::holes(k));
        let tables_a = slot_tables(&ex.ft_a, slots, &fa);
        let tables_b = slot_tables(&ex.ft_b, slots, &fb);
        // Alice ships her whole slot tables; Bob scores every slot pair
        // whose weave completes, weighted by the leaf estimate
        let mut wire = ex.wire;
        for table in &tables_a {
            for slot in table {
                if let RawOutput::Share(s) = slot {
                    wire = wire.concat(&s.mask).concat(&s.vals);
                } else {
                    unreachable!("split outputs are shares");
                }
            }
        }
        let mut scores: BTreeMap<Bits, BigInt> = BTreeMap::new();
        for li in 0..tables_a.len() {
            for sa in &tables_a[li] {
                for sb in &tables_b[li] {
                    if let (RawOutput::Share(a), RawOutput::Share(b)) = (sa, sb) {
                        if let Some(z) = weave_complete(a, b) {
                            let e = scores.entry(z).or_insert_with(BigInt::zero);
                            *e += &ex.le.num[li];
                        }
                    }
                }
            }
        }
        let best = argmax(&scores).unwrap_or_else(|| zeros(k));
        DirectRun {
            transcript: wire,
            out_a: Some(RawOutput::Share(SplitString::holes(k))),
            out_b: Some(RawOutput::Share(SplitString::full(best))),
            out_open: None,
        }
    };
    let mut plan = base_plan(base.model, "weave-slots", t, r, m, cost, eps, k);
    plan.slots = Some(slots);
    plan.rows = Some(shape.rows);
    Ok((plan, deterministic(base, cost, run)))
}

// ----- XOR -----

#[derive(Clone, Debug)]
pub struct XorShape {
    pub word_bits: u64,
    pub slots: u64,
    pub rows: u64,
    pub heavy: u64,
    pub instance_eps: BigRational,
    pub leaves: u64,
    pub depth: u64,
}

/// Dimensions of the majority-of-XOR-rows instance induced by a tree with t
/// leaves and cost r at error eps.
pub fn xor_shape(eps: &BigRational, t: u64, r: u64) -> Result<XorShape, EngineError> {
    if eps.is_negative() || *eps >= rq(1, 2) {
        return Err(EngineError::NotDerandomizable(eps.clone()));
    }
    let g = general_shape(eps, t, r)?;
    let heavy = heavy_count(g.rows as usize, &g.instance_eps) as u64;
    Ok(XorShape {
        word_bits: g.word_bits,
        slots: g.slots,
        rows: g.rows,
        heavy,
        instance_eps: g.instance_eps,
        leaves: t,
        depth: r,
    })
}

fn xor_parts(
    base: &Protocol,
    x: &Bits,
    y: &Bits,
    shape: &XorShape,
) -> (Exchange, GapMajInstance) {
    let k = base.output_len;
    let ex = exchange(base, x, y, shape.word_bits);
    let fb = RawOutput::Value(zeros(k));
    let tables_a = slot_tables(&ex.ft_a, shape.slots, &fb);
    let tables_b = slot_tables(&ex.ft_b, shape.slots, &fb);
    let value = |o: &RawOutput| -> Bits {
        match o {
            RawOutput::Value(v) => v.clone(),
            _ => unreachable!("xor outputs are values"),
        }
    };
    // every leaf contributes 2^(r - depth) identical copies of its slot
    // square, so the row count is slots^2 2^r regardless of tree shape
    let n = shape.rows as usize;
    let mut rows_a = Vec::with_capacity(n);
    let mut rows_b = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    let den = &ex.le.den * two_pow(shape.depth) * BigInt::from(shape.slots * shape.slots);
    for li in 0..tables_a.len() {
        let depth = ex.ft_a.leaves[li].len() as u64;
        let copies = 1u64 << (shape.depth - depth);
        let weight = BigRational::new(&ex.le.num[li] * two_pow(depth), den.clone());
        for _ in 0..copies {
            for sa in &tables_a[li] {
                for sb in &tables_b[li] {
                    rows_a.push(value(sa));
                    rows_b.push(value(sb));
                    mu.push(weight.clone());
                }
            }
        }
    }
    let inst = GapMajInstance::new(rows_a, rows_b, shape.instance_eps.clone(), mu);
    (ex, inst)
}

/// The majority-of-XOR-rows instance a compiled XOR protocol solves on one
/// input pair. Row (leaf copy, i, j) pairs slot i of Alice's rounded output
/// distribution with slot j of Bob's; its measure is the leaf estimate
/// split evenly over the leaf's rows. When the tree errs with probability
/// eps, the rows XORing to the true answer weigh at least 5/8 - eps/4.
pub fn xor_instance(
    base: &Protocol,
    x: &Bits,
    y: &Bits,
    eps: &BigRational,
) -> Result<(GapMajInstance, XorShape), EngineError> {
    if !base.is_tree() {
        return Err(EngineError::NotTree);
    }
    if base.budgets.public != 0 {
        return Err(EngineError::PublicCoins);
    }
    if base.model != OutputModel::Xor {
        return Err(EngineError::WrongModel(base.model));
    }
    let shape = tree_shape(base)?;
    let xs = xor_shape(eps, shape.leaves.len() as u64, shape.depth as u64)?;
    let (_, inst) = xor_parts(base, x, y, &xs);
    Ok((inst, xs))
}

fn build_xor(base: &Protocol, eps: &BigRational, t: u64, r: u64) -> Result<(DerandPlan, Protocol), EngineError> {
    let shape = xor_shape(eps, t, r)?;
    let k = base.output_len;
    let cost = 2 * t * shape.word_bits + shape.heavy * k as u64;
    let captured = base.clone();
    let sh = shape.clone();
    let run = move |x: &Bits, y: &Bits| -> DirectRun {
        let (ex, inst) = xor_parts(&captured, x, y, &sh);
        // Alice ships her entries of the heaviest rows; Bob reads them back
        // off the wire and takes the weighted plurality of the row XORs
        let heavy = heavy_rows(&inst.mu, sh.heavy as usize);
        let mut wire = ex.wire;
        let base_len = wire.len();
        for &row in &heavy {
            wire = wire.concat(&inst.rows_a[row]);
        }
        let mut scores: BTreeMap<Bits, BigRational> = BTreeMap::new();
        for (pos, &row) in heavy.iter().enumerate() {
            let shipped = wire.slice(base_len + pos * k, base_len + (pos + 1) * k);
            let z = shipped.xor(&inst.rows_b[row]);
            let e = scores.entry(z).or_insert_with(BigRational::zero);
            *e += &inst.mu[row];
        }
        let best = argmax(&scores).unwrap_or_else(|| zeros(k));
        DirectRun {
            transcript: wire,
            out_a: Some(RawOutput::Value(zeros(k))),
            out_b: Some(RawOutput::Value(best)),
            out_open: None,
        }
    };
    let mut plan = base_plan(base.model, "heavy-rows", t, r, shape.word_bits, cost, eps, k);
    plan.slots = Some(shape.slots);
    plan.rows = Some(shape.rows);
    plan.heavy = Some(shape.heavy);
    Ok((plan, deterministic(base, cost, run)))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::analysis::{exact_error, leaf_distribution};
    use crate::engine::protocol::{execute, MessageFn, OutputFn, OwnerFn, TreeRules};
    use crate::engine::{Symbol, Tape, TapeSet};
    use crate::problems::check_gapmaj_promise;
    use crate::testkit::{random_protocol, random_protocol_in, TestProtocol};

    fn full_coin_tree(depth: usize) -> Protocol {
        let owner: OwnerFn = Arc::new(move |w: &Bits| {
            if w.len() < depth {
                Some(if w.len() % 2 == 0 { Player::Alice } else { Player::Bob })
            } else {
                None
            }
        });
        let message: MessageFn =
            Arc::new(|_, _, _: &Bits, tape: &mut Tape, _: &mut Tape| tape.draw());
        let out: OutputFn =
            Arc::new(|_: &Bits, _, _: &mut Tape, _: &mut Tape| RawOutput::Value(Bits::new(1)));
        Protocol {
            id: format!("coin-tree-{}", depth),
            model: OutputModel::Local,
            output_len: 1,
            top_in_range: false,
            input_len_a: 0,
            input_len_b: 0,
            budgets: TapeBudgets {
                public: 0,
                private_a: depth.div_ceil(2) as u64,
                private_b: (depth / 2) as u64,
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

    #[test]
    fn strict_log2_steps_at_powers() {
        assert_eq!(strict_log2(&rq(1, 1)), 1);
        assert_eq!(strict_log2(&rq(7, 8)), 0);
        assert_eq!(strict_log2(&rq(8, 1)), 4);
        assert_eq!(strict_log2(&rq(9, 1)), 4);
        assert_eq!(strict_log2(&rq(65, 4)), 5);
    }

    #[test]
    fn log_affine_compare() {
        // power-of-two arguments decide exactly
        assert!(log_affine_nonneg(&rq(-10, 1), 5, &rq(4, 1)));
        assert!(!log_affine_nonneg(&rq(-11, 1), 5, &rq(4, 1)));
        // 3 + 2 log2(1/3) = 3 - 3.1699... < 0 < 4 - 3.1699...
        assert!(log_affine_nonneg(&rq(4, 1), 2, &rq(1, 3)));
        assert!(!log_affine_nonneg(&rq(3, 1), 2, &rq(1, 3)));
        let (lo, hi) = log2_interval(&rq(3, 1));
        assert!(lo < hi && lo > rq(3, 2) && hi < rq(17, 10));
    }

    #[test]
    fn ceiling_pins() {
        let quarter = rq(1, 4);
        // 2^2 (2 + log2(4) + 1) = 20
        assert!(ceiling_allows(OutputModel::UniAlice, &quarter, 2, 1, 20));
        assert!(!ceiling_allows(OutputModel::UniAlice, &quarter, 2, 1, 21));
        // 2^2 (1 + log2(4) + 2) = 20
        assert!(ceiling_allows(OutputModel::Open, &quarter, 1, 1, 20));
        assert!(!ceiling_allows(OutputModel::Local, &quarter, 1, 1, 21));
        // 2 (0 + log2(32) + 1) + (9/8 * 256 + 1) = 301
        assert!(ceiling_allows(OutputModel::Xor, &quarter, 0, 1, 301));
        assert!(!ceiling_allows(OutputModel::Xor, &quarter, 0, 1, 302));
        // non-dyadic gap: 1 * (0 + log2(3) + 1) = 2.58...
        let sixth = rq(1, 6);
        assert!(ceiling_allows(OutputModel::UniAlice, &sixth, 0, 1, 2));
        assert!(!ceiling_allows(OutputModel::UniAlice, &sixth, 0, 1, 3));
    }

    #[test]
    fn tde_cost_pins() {
        let p = full_coin_tree(3);
        let (x, y) = (Bits::empty(), Bits::empty());
        let eighth = rq(1, 8);
        let uni = tde(&p, &x, &y, &eighth, TdeMode::Unilateral).unwrap();
        assert_eq!((uni.word_bits, uni.cost), (6, 48));
        assert_eq!(uni.transcript.len(), 48);
        let open = tde(&p, &x, &y, &eighth, TdeMode::Open).unwrap();
        assert_eq!((open.word_bits, open.cost), (7, 112));
        assert_eq!(open.transcript.len(), 112);
        assert!(open.estimate.step.is_some());
        assert!(uni.estimate.step.is_none());
    }

    #[test]
    fn tde_estimates_within_radius() {
        for model in OutputModel::ALL {
            for seed in 0..3u64 {
                let t = random_protocol(model, seed);
                for (x, y) in TestProtocol::inputs() {
                    let exact = leaf_distribution(&t.protocol, &x, &y).unwrap();
                    for delta in [rq(1, 4), rq(1, 8)] {
                        for mode in [TdeMode::Unilateral, TdeMode::Open] {
                            let est = tde(&t.protocol, &x, &y, &delta, mode).unwrap();
                            assert!(est.estimate.total().is_one());
                            assert!(est.spread <= delta);
                            assert!(est.estimate.distance(&exact) <= est.spread);
                            if let Some(step) = &est.estimate.step {
                                for (_, pr) in &est.estimate.entries {
                                    assert!((pr / step).is_integer());
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn tde_single_leaf_is_exact() {
        let owner: OwnerFn = Arc::new(|_: &Bits| None);
        let message: MessageFn = Arc::new(|_, _, _: &Bits, _: &mut Tape, _: &mut Tape| false);
        let out: OutputFn =
            Arc::new(|_: &Bits, _, _: &mut Tape, _: &mut Tape| RawOutput::Value(Bits::new(1)));
        let p = Protocol {
            id: "silent".into(),
            model: OutputModel::Local,
            output_len: 1,
            top_in_range: false,
            input_len_a: 0,
            input_len_b: 0,
            budgets: TapeBudgets {
                public: 0,
                private_a: 2,
                private_b: 2,
            },
            max_cost: 0,
            kind: ProtocolKind::Tree(TreeRules {
                owner,
                message,
                out_a: Some(out.clone()),
                out_b: Some(out),
                out_open: None,
            }),
        };
        let est = tde(&p, &Bits::empty(), &Bits::empty(), &rq(1, 8), TdeMode::Open).unwrap();
        assert_eq!(est.estimate.entries.len(), 1);
        assert!(est.estimate.entries[0].1.is_one());
    }

    #[test]
    fn word_cap_keeps_sure_leaves_in_range() {
        // Bob owns every node, so Alice's fractions are all exactly 1
        let depth = 2usize;
        let owner: OwnerFn = Arc::new(move |w: &Bits| {
            (w.len() < depth).then_some(Player::Bob)
        });
        let message: MessageFn =
            Arc::new(|_, _, _: &Bits, tape: &mut Tape, _: &mut Tape| tape.draw());
        let out: OutputFn =
            Arc::new(|_: &Bits, _, _: &mut Tape, _: &mut Tape| RawOutput::Value(Bits::new(1)));
        let p = Protocol {
            id: "bob-only".into(),
            model: OutputModel::Local,
            output_len: 1,
            top_in_range: false,
            input_len_a: 0,
            input_len_b: 0,
            budgets: TapeBudgets {
                public: 0,
                private_a: 0,
                private_b: 2,
            },
            max_cost: 2,
            kind: ProtocolKind::Tree(TreeRules {
                owner,
                message,
                out_a: Some(out.clone()),
                out_b: Some(out),
                out_open: None,
            }),
        };
        let delta = rq(1, 8);
        let est = tde(&p, &Bits::empty(), &Bits::empty(), &delta, TdeMode::Open).unwrap();
        let cap = (1u64 << est.word_bits) - 1;
        assert!(est.words_a.iter().all(|&w| w == cap));
        let exact = leaf_distribution(&p, &Bits::empty(), &Bits::empty()).unwrap();
        assert!(est.estimate.distance(&exact) <= delta);
    }

    #[test]
    fn discretize_pins() {
        let g = discretize(&[rq(3, 5), rq(2, 5)], &rq(1, 4));
        assert_eq!((g.slots, g.weights.clone()), (4, vec![2, 2]));
        // already on the grid: untouched
        let g = discretize(&[rq(1, 2), rq(1, 4), rq(1, 4)], &rq(1, 4));
        assert_eq!(g.weights, vec![2, 1, 1]);
        let g = discretize(&[rq(1, 1)], &rq(1, 8));
        assert_eq!(g.weights, vec![8]);
        // per-entry movement stays under one slot
        let probs = [rq(1, 3), rq(1, 3), rq(1, 3)];
        let g = discretize(&probs, &rq(1, 5));
        let d = BigRational::from(BigInt::from(g.slots));
        for (w, p) in g.weights.iter().zip(&probs) {
            let err = (BigRational::from(BigInt::from(*w)) / &d - p).abs();
            assert!(err * &d <= BigRational::one());
        }
    }

    #[test]
    fn compose_check_accepts_and_rejects() {
        let u = vec![rq(1, 2), rq(1, 2)];
        let u2 = vec![rq(3, 8), rq(5, 8)];
        let v = vec![vec![rq(1, 1), rq(0, 1)], vec![rq(0, 1), rq(1, 1)]];
        let v2 = vec![vec![rq(7, 8), rq(1, 8)], vec![rq(0, 1), rq(1, 1)]];
        assert!(linf_compose_check(&u, &u2, &v, &v2, &rq(1, 8), &rq(1, 8)));
        // output deviation reaches 1/4, so premise radii of 1/16 must fail
        assert!(!linf_compose_check(&u, &u2, &v, &v2, &rq(1, 16), &rq(1, 16)));
    }

    fn assert_exact(d: &Derandomized, t: &TestProtocol) {
        let truth = t.truth_fn();
        let inputs = TestProtocol::inputs();
        let rep = exact_error(&d.protocol, &truth, &inputs).unwrap();
        assert!(
            rep.worst.is_zero(),
            "{} at seed {}: derandomized error {}",
            t.protocol.id,
            t.seed,
            rep.worst
        );
        for (x, y) in &inputs {
            let mut tapes = TapeSet::none();
            let rec = execute(&d.protocol, x, y, &mut tapes);
            assert_eq!(rec.cost, d.plan.cost, "{}", d.protocol.id);
        }
        assert!(d.plan.ceiling_ok());
    }

    #[test]
    fn unilateral_open_local_compile_exactly() {
        for model in [
            OutputModel::UniAlice,
            OutputModel::UniBob,
            OutputModel::Open,
            OutputModel::Local,
        ] {
            for seed in 0..6u64 {
                let t = random_protocol(model, seed);
                let d = derand(&t.protocol, &t.eps).unwrap();
                assert_exact(&d, &t);
            }
        }
    }

    #[test]
    fn one_out_of_two_compiles_exactly_both_branches() {
        let third = rq(1, 3);
        let half = rq(1, 2);
        let zero = rq(0, 1);
        for seed in 0..4u64 {
            let t = random_protocol_in(OutputModel::OneOutOfTwo, seed, &zero, &third);
            let d = derand(&t.protocol, &t.eps).unwrap();
            assert_eq!(d.plan.branch, "speaker-threshold");
            assert_exact(&d, &t);
        }
        for seed in 0..4u64 {
            let t = random_protocol_in(OutputModel::OneOutOfTwo, seed, &third, &half);
            let d = derand(&t.protocol, &t.eps).unwrap();
            assert_eq!(d.plan.branch, "speaker-reconcile");
            // the ceiling is asserted on the always-one-speaker form
            assert_eq!(d.plan.leaves % 2, 0);
            assert_exact(&d, &t);
        }
    }

    #[test]
    fn split_compiles_exactly_both_branches() {
        let third = rq(1, 3);
        let zero = rq(0, 1);
        let cap = rq(3, 8);
        for seed in 0..4u64 {
            let t = random_protocol_in(OutputModel::Split, seed, &zero, &third);
            let d = derand(&t.protocol, &t.eps).unwrap();
            assert_eq!(d.plan.branch, "claim-positions");
            assert_exact(&d, &t);
        }
        // errors in [1/3, 3/8) are rare draws; these seeds reach one quickly
        for seed in [3u64, 12, 13, 29] {
            let t = random_protocol_in(OutputModel::Split, seed, &third, &cap);
            assert!(t.eps >= third && t.eps < cap);
            let d = derand(&t.protocol, &t.eps).unwrap();
            assert_eq!(d.plan.branch, "weave-slots");
            assert_exact(&d, &t);
        }
    }

    #[test]
    fn xor_compiles_exactly_with_valid_instances() {
        for seed in 0..4u64 {
            let t = random_protocol(OutputModel::Xor, seed);
            let d = derand(&t.protocol, &t.eps).unwrap();
            assert_exact(&d, &t);
            let q = rq(1, 2) - &t.eps;
            let slots = (rq(4, 1) / &q).ceil().to_integer();
            for (x, y) in TestProtocol::inputs() {
                let (inst, shape) = xor_instance(&t.protocol, &x, &y, &t.eps).unwrap();
                assert_eq!(inst.eps, rq(3, 8) + &t.eps / rq(4, 1));
                assert_eq!(
                    BigInt::from(shape.rows),
                    &slots * &slots * two_pow(shape.depth)
                );
                let check = check_gapmaj_promise(&inst);
                assert!(check.holds, "{} seed {}", t.protocol.id, seed);
                let truth = match t.truth_at(&x, &y) {
                    Symbol::Value(v) => v,
                    Symbol::Top => unreachable!("xor answers are values"),
                };
                assert_eq!(check.witness, Some(truth));
            }
        }
    }

    #[test]
    fn rejects_out_of_range_error() {
        let t = random_protocol(OutputModel::Local, 0);
        match derand(&t.protocol, &rq(1, 2)) {
            Err(EngineError::NotDerandomizable(_)) => {}
            other => panic!("expected rejection, got {:?}", other.map(|d| d.plan)),
        }
        assert!(matches!(
            derand(&t.protocol, &rq(-1, 4)),
            Err(EngineError::BadParameter(_))
        ));
    }

    #[test]
    fn rejects_public_coins() {
        let mut p = random_protocol(OutputModel::Local, 1).protocol;
        p.budgets.public = 1;
        assert!(matches!(
            derand(&p, &rq(1, 4)),
            Err(EngineError::PublicCoins)
        ));
    }

    #[test]
    fn xor_shape_pins() {
        // gap 1/4: 32 slots squared times 2^3 leaves levels
        let shape = xor_shape(&rq(1, 4), 8, 3).unwrap();
        assert_eq!(shape.slots, 16);
        assert_eq!(shape.rows, 2048);
        assert_eq!(shape.instance_eps, rq(7, 16));
        // witness weight threshold 1 - 7/16 = 9/16
        assert_eq!(rq(1, 1) - &shape.instance_eps, rq(9, 16));
    }
}
