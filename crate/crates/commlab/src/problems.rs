//! Problem catalog: functions with multi-bit outputs whose cost depends
//! heavily on the output model, plus the gap-majority aggregation instance
//! type and Hamming-ball utilities.

use crate::engine::bits::Bits;
use crate::engine::model::Symbol;
use crate::engine::tape::derive_seed;
use crate::engine::EngineError;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::sync::Arc;

type EvalFn = Arc<dyn Fn(&Bits, &Bits) -> Symbol + Send + Sync>;
type PromiseFn = Arc<dyn Fn(&Bits, &Bits) -> bool + Send + Sync>;

/// A two-party problem: a (possibly partial) function of (x, y).
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub input_len_a: usize,
    pub input_len_b: usize,
    /// Length of value outputs in bits.
    pub output_len: usize,
    /// Whether the range contains the silence symbol besides values.
    pub top_in_range: bool,
    eval: EvalFn,
    promise: Option<PromiseFn>,
}

impl ProblemSpec {
    pub fn in_domain(&self, x: &Bits, y: &Bits) -> bool {
        x.len() == self.input_len_a
            && y.len() == self.input_len_b
            && self.promise.as_ref().map_or(true, |p| p(x, y))
    }

    /// Unchecked evaluation closure for measurement loops; inputs must lie in
    /// the domain.
    pub fn truth(&self) -> impl Fn(&Bits, &Bits) -> Symbol + Sync + '_ {
        let f = self.eval.clone();
        move |x: &Bits, y: &Bits| f(x, y)
    }

    /// Owning handle to the evaluator, for protocols that embed it.
    pub fn evaluator(&self) -> Arc<dyn Fn(&Bits, &Bits) -> Symbol + Send + Sync> {
        self.eval.clone()
    }

    /// Deterministic promise-respecting probe inputs: a few structured pairs
    /// (equal, single-bit difference) followed by seeded samples.
    pub fn probe_inputs(&self, seed: u64, count: usize) -> Vec<(Bits, Bits)> {
        let mut out = Vec::new();
        let mut ctr = 0u64;
        let push = |x: Bits, y: Bits, out: &mut Vec<(Bits, Bits)>| {
            if self.in_domain(&x, &y) && !out.contains(&(x.clone(), y.clone())) {
                out.push((x, y));
            }
        };
        push(
            Bits::new(self.input_len_a),
            Bits::new(self.input_len_b),
            &mut out,
        );
        if self.input_len_a == self.input_len_b && self.input_len_a > 0 {
            let mut x = Bits::new(self.input_len_a);
            x.set(0, true);
            push(x.clone(), x.clone(), &mut out);
            let y = Bits::new(self.input_len_b);
            push(x, y, &mut out);
        }
        while out.len() < count && ctr < 64 * count as u64 + 64 {
            let s = derive_seed(seed, &[0x9e37, ctr]);
            ctr += 1;
            let x = rand_bits(s, self.input_len_a);
            let y = if ctr % 3 == 0 && self.input_len_a == self.input_len_b {
                // near-equal pair: flip one position
                let mut y = x.clone();
                if !y.is_empty() {
                    let i = (derive_seed(s, &[1]) % y.len() as u64) as usize;
                    y.set(i, !y.get(i));
                }
                y
            } else {
                rand_bits(derive_seed(s, &[2]), self.input_len_b)
            };
            push(x, y, &mut out);
        }
        assert!(!out.is_empty(), "{}: no probe inputs found", self.name);
        out
    }
}

fn rand_bits(seed: u64, len: usize) -> Bits {
    let mut b = Bits::new(len);
    for i in 0..len {
        if derive_seed(seed, &[4, i as u64]) & 1 == 1 {
            b.set(i, true);
        }
    }
    b
}

/// Evaluate with promise checking.
pub fn evaluate(spec: &ProblemSpec, x: &Bits, y: &Bits) -> Result<Symbol, EngineError> {
    if !spec.in_domain(x, y) {
        return Err(EngineError::DomainError);
    }
    Ok((spec.eval)(x, y))
}

// ---------------------------------------------------------------------------
// catalog
// ---------------------------------------------------------------------------

/// Bitwise XOR of the two inputs.
pub fn xor_n(n: usize) -> ProblemSpec {
    ProblemSpec {
        name: format!("XOR_{}", n),
        input_len_a: n,
        input_len_b: n,
        output_len: n,
        top_in_range: false,
        eval: Arc::new(|x: &Bits, y: &Bits| Symbol::Value(x.xor(y))),
        promise: None,
    }
}

/// Interleaved identity: even positions come from x, odd from y.
pub fn split_id(n: usize) -> ProblemSpec {
    ProblemSpec {
        name: format!("SplitId_{}", n),
        input_len_a: n,
        input_len_b: n,
        output_len: n,
        top_in_range: false,
        eval: Arc::new(move |x: &Bits, y: &Bits| {
            let mut v = Bits::new(n);
            for i in 0..n {
                v.set(i, if i % 2 == 0 { x.get(i) } else { y.get(i) });
            }
            Symbol::Value(v)
        }),
        promise: None,
    }
}

/// Alice's input is the answer.
pub fn id_a(n: usize) -> ProblemSpec {
    ProblemSpec {
        name: format!("IdA_{}", n),
        input_len_a: n,
        input_len_b: n,
        output_len: n,
        top_in_range: false,
        eval: Arc::new(|x: &Bits, _: &Bits| Symbol::Value(x.clone())),
        promise: None,
    }
}

/// Bob's input is the answer.
pub fn id_b(n: usize) -> ProblemSpec {
    ProblemSpec {
        name: format!("IdB_{}", n),
        input_len_a: n,
        input_len_b: n,
        output_len: n,
        top_in_range: false,
        eval: Arc::new(|_: &Bits, y: &Bits| Symbol::Value(y.clone())),
        promise: None,
    }
}

/// If the leading bits agree the answer is x, otherwise y.
pub fn cond_id(n: usize) -> ProblemSpec {
    assert!(n >= 1);
    ProblemSpec {
        name: format!("CondId_{}", n),
        input_len_a: n,
        input_len_b: n,
        output_len: n,
        top_in_range: false,
        eval: Arc::new(|x: &Bits, y: &Bits| {
            Symbol::Value(if x.get(0) == y.get(0) {
                x.clone()
            } else {
                y.clone()
            })
        }),
        promise: None,
    }
}

/// One-bit equality.
pub fn eq(n: usize) -> ProblemSpec {
    ProblemSpec {
        name: format!("EQ_{}", n),
        input_len_a: n,
        input_len_b: n,
        output_len: 1,
        top_in_range: false,
        eval: Arc::new(|x: &Bits, y: &Bits| {
            Symbol::Value(Bits::from_uint_be((x == y) as u64, 1))
        }),
        promise: None,
    }
}

/// The common value when the inputs agree, silence otherwise.
pub fn eqout(n: usize) -> ProblemSpec {
    ProblemSpec {
        name: format!("EQout_{}", n),
        input_len_a: n,
        input_len_b: n,
        output_len: n,
        top_in_range: true,
        eval: Arc::new(|x: &Bits, y: &Bits| {
            if x == y {
                Symbol::Value(x.clone())
            } else {
                Symbol::Top
            }
        }),
        promise: None,
    }
}

/// Index bits needed to name a value in 0..=n.
pub fn index_len(n: usize) -> usize {
    usize::BITS as usize - n.leading_zeros() as usize
}

/// First index where the inputs differ, n if equal, as an index-length value.
pub fn ftfd(n: usize) -> ProblemSpec {
    let k = index_len(n);
    ProblemSpec {
        name: format!("FtFD_{}", n),
        input_len_a: n,
        input_len_b: n,
        output_len: k,
        top_in_range: false,
        eval: Arc::new(move |x: &Bits, y: &Bits| {
            Symbol::Value(Bits::from_uint_be(x.first_diff(y) as u64, k))
        }),
        promise: None,
    }
}

/// Numeric maximum of the two inputs (big-endian values).
pub fn max_n(n: usize) -> ProblemSpec {
    ProblemSpec {
        name: format!("MAX_{}", n),
        input_len_a: n,
        input_len_b: n,
        output_len: n,
        top_in_range: false,
        eval: Arc::new(|x: &Bits, y: &Bits| Symbol::Value(x.clone().max(y.clone()))),
        promise: None,
    }
}

/// Gap Hamming distance: promise |x xor y| <= l or >= u; answer is the side.
pub fn ghd(n: usize, l: u32, u: u32) -> ProblemSpec {
    assert!(l < u && u as usize <= n);
    ProblemSpec {
        name: format!("GHD_{}_{}_{}", n, l, u),
        input_len_a: n,
        input_len_b: n,
        output_len: 1,
        top_in_range: false,
        eval: Arc::new(move |x: &Bits, y: &Bits| {
            Symbol::Value(Bits::from_uint_be((x.hamming(y) >= u) as u64, 1))
        }),
        promise: Some(Arc::new(move |x: &Bits, y: &Bits| {
            let d = x.hamming(y);
            d <= l || d >= u
        })),
    }
}

/// First differing index restricted to inputs of weight at most t.
pub fn t_ftfd(n: usize, t: u32) -> ProblemSpec {
    let base = ftfd(n);
    let k = base.output_len;
    ProblemSpec {
        name: format!("{}FtFD_{}", t, n),
        input_len_a: n,
        input_len_b: n,
        output_len: k,
        top_in_range: false,
        eval: base.eval,
        promise: Some(Arc::new(move |x: &Bits, y: &Bits| {
            x.count_ones() <= t && y.count_ones() <= t
        })),
    }
}

/// Intersection vector restricted to inputs of weight at most t.
pub fn t_int(n: usize, t: u32) -> ProblemSpec {
    ProblemSpec {
        name: format!("{}INT_{}", t, n),
        input_len_a: n,
        input_len_b: n,
        output_len: n,
        top_in_range: false,
        eval: Arc::new(|x: &Bits, y: &Bits| Symbol::Value(x.and(y))),
        promise: Some(Arc::new(move |x: &Bits, y: &Bits| {
            x.count_ones() <= t && y.count_ones() <= t
        })),
    }
}

/// Everything the CLI can name.
pub fn catalog(n: usize) -> Vec<ProblemSpec> {
    let t = ((n / 4).max(1)) as u32;
    vec![
        xor_n(n),
        split_id(n),
        id_a(n),
        id_b(n),
        cond_id(n),
        eq(n),
        eqout(n),
        ftfd(n),
        max_n(n),
        ghd(n, n as u32 / 4, (3 * n as u32) / 4),
        t_ftfd(n, t),
        t_int(n, t),
    ]
}

// ---------------------------------------------------------------------------
// gap majority instances
// ---------------------------------------------------------------------------

/// An aggregation instance: N row pairs of k-bit strings with a weight
/// distribution mu. The promise states that some value z carries at least
/// 1 - eps of the mu-mass of the rowwise XORs.
#[derive(Clone)]
pub struct GapMajInstance {
    pub rows_a: Vec<Bits>,
    pub rows_b: Vec<Bits>,
    pub n_rows: usize,
    pub k: usize,
    /// Allowed non-majority mass.
    pub eps: BigRational,
    pub mu: Vec<BigRational>,
}

impl GapMajInstance {
    pub fn new(
        rows_a: Vec<Bits>,
        rows_b: Vec<Bits>,
        eps: BigRational,
        mu: Vec<BigRational>,
    ) -> Self {
        let n_rows = rows_a.len();
        assert_eq!(n_rows, rows_b.len());
        assert_eq!(n_rows, mu.len());
        assert!(n_rows > 0);
        let k = rows_a[0].len();
        assert!(rows_a.iter().chain(rows_b.iter()).all(|r| r.len() == k));
        let total: BigRational = mu.iter().cloned().sum();
        assert!(total.is_one(), "mu must sum to 1");
        assert!(mu.iter().all(|m| !m.is_negative()));
        GapMajInstance {
            rows_a,
            rows_b,
            n_rows,
            k,
            eps,
            mu,
        }
    }

    pub fn uniform(rows_a: Vec<Bits>, rows_b: Vec<Bits>, eps: BigRational) -> Self {
        let n = rows_a.len();
        let mu = vec![BigRational::new(BigInt::one(), BigInt::from(n)); n];
        GapMajInstance::new(rows_a, rows_b, eps, mu)
    }

    pub fn is_uniform(&self) -> bool {
        let u = BigRational::new(BigInt::one(), BigInt::from(self.n_rows));
        self.mu.iter().all(|m| *m == u)
    }

    pub fn row_xor(&self, i: usize) -> Bits {
        self.rows_a[i].xor(&self.rows_b[i])
    }
}

#[derive(Clone, Debug)]
pub struct PromiseCheck {
    pub holds: bool,
    /// Heaviest value (ties toward the smaller value); the promise witness
    /// whenever the check holds with eps < 1/2.
    pub witness: Option<Bits>,
    pub max_weight: BigRational,
    /// True when exactly one value reaches weight 1 - eps, which is forced
    /// whenever eps < 1/2.
    pub unique: bool,
}

/// Verify the instance promise and extract its witness.
pub fn check_gapmaj_promise(inst: &GapMajInstance) -> PromiseCheck {
    // single common denominator so weights accumulate as integers
    let denom = inst
        .mu
        .iter()
        .fold(BigInt::one(), |acc, m| acc.lcm(m.denom()));
    let mut weights: std::collections::BTreeMap<Bits, BigInt> = std::collections::BTreeMap::new();
    for i in 0..inst.n_rows {
        let scaled = inst.mu[i].numer() * (&denom / inst.mu[i].denom());
        *weights.entry(inst.row_xor(i)).or_insert_with(BigInt::zero) += scaled;
    }
    let (witness, max_scaled) = weights
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(z, w)| (z.clone(), w.clone()))
        .expect("nonempty instance");
    // weight >= 1 - eps, cross-multiplied
    let one_minus = BigRational::one() - &inst.eps;
    let reaches = |w: &BigInt| {
        BigRational::new(w.clone(), denom.clone()) >= one_minus
    };
    let holds = reaches(&max_scaled);
    let unique = weights.values().filter(|w| reaches(w)).count() == 1;
    PromiseCheck {
        holds,
        witness: if holds { Some(witness) } else { None },
        max_weight: BigRational::new(max_scaled, denom),
        unique,
    }
}

// ---------------------------------------------------------------------------
// Hamming balls
// ---------------------------------------------------------------------------

/// The ball of radius t around the all-zero string, with exact size and a
/// lexicographic enumerator.
pub struct HammingBall {
    pub n: usize,
    pub t: u32,
    pub size: u128,
    // sizes[m] = number of weight <= w strings of length m, for unranking
    sizes: Vec<Vec<u128>>,
}

/// Exact |{x in {0,1}^n : |x| <= t}| plus enumeration support.
pub fn hamming_ball(n: usize, t: u32) -> HammingBall {
    assert!(n <= 120, "ball sizes overflow u128 beyond ~120 bits");
    // sizes[m][w] for prefix lengths; w capped at t
    let mut sizes = vec![vec![0u128; t as usize + 1]; n + 1];
    for w in 0..=t as usize {
        sizes[0][w] = 1;
    }
    for m in 1..=n {
        for w in 0..=t as usize {
            sizes[m][w] = sizes[m - 1][w] + if w > 0 { sizes[m - 1][w - 1] } else { 0 };
        }
    }
    HammingBall {
        n,
        t,
        size: sizes[n][t as usize],
        sizes,
    }
}

impl HammingBall {
    pub fn contains(&self, x: &Bits) -> bool {
        x.len() == self.n && x.count_ones() <= self.t
    }

    /// r-th member in lexicographic order (0 before 1 at each position).
    pub fn unrank(&self, mut r: u128) -> Bits {
        assert!(r < self.size);
        let mut out = Bits::new(self.n);
        let mut w = self.t as usize;
        for i in 0..self.n {
            let zeros = self.sizes[self.n - 1 - i][w];
            if r < zeros {
                // leading 0
            } else {
                r -= zeros;
                out.set(i, true);
                w -= 1;
            }
        }
        out
    }

    pub fn rank(&self, x: &Bits) -> u128 {
        assert!(self.contains(x));
        let mut r = 0u128;
        let mut w = self.t as usize;
        for i in 0..self.n {
            if x.get(i) {
                r += self.sizes[self.n - 1 - i][w];
                w -= 1;
            }
        }
        r
    }

    /// Both sides of the entropy size bound:
    /// (8t(1-t/n))^(-1/2) 2^(nH(t/n)) <= size <= 2^(nH(t/n)), for 0 < t < n/2.
    pub fn entropy_bounds_hold(&self) -> bool {
        let (n, t) = (self.n as f64, self.t as f64);
        if !(self.t > 0 && (self.t as usize) * 2 < self.n) {
            return true; // bound only stated in this range
        }
        let p = t / n;
        let h = -p * p.log2() - (1.0 - p) * (1.0 - p).log2();
        let log_sz = (self.size as f64).log2();
        let upper = n * h;
        let lower = n * h - 0.5 * (8.0 * t * (1.0 - p)).log2();
        lower - 1e-9 <= log_sz && log_sz <= upper + 1e-9
    }
}

/// Exact rational to nearest-f64 helper used across reporting.
pub fn rat_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_basics() {
        let x = Bits::parse("0110");
        let y = Bits::parse("0101");
        assert_eq!(
            evaluate(&xor_n(4), &x, &y).unwrap(),
            Symbol::Value(Bits::parse("0011"))
        );
        assert_eq!(
            evaluate(&split_id(4), &x, &y).unwrap(),
            Symbol::Value(Bits::parse("0111"))
        );
        assert_eq!(
            evaluate(&cond_id(4), &x, &y).unwrap(),
            Symbol::Value(x.clone())
        );
        let mut y1 = y.clone();
        y1.set(0, true);
        assert_eq!(
            evaluate(&cond_id(4), &x, &y1).unwrap(),
            Symbol::Value(y1.clone())
        );
        assert_eq!(evaluate(&eqout(4), &x, &y).unwrap(), Symbol::Top);
        assert_eq!(
            evaluate(&eqout(4), &x, &x).unwrap(),
            Symbol::Value(x.clone())
        );
        // first difference at index 2; 4 encodes as 3 bits
        assert_eq!(
            evaluate(&ftfd(4), &x, &y).unwrap(),
            Symbol::Value(Bits::from_uint_be(2, 3))
        );
        assert_eq!(
            evaluate(&ftfd(4), &x, &x).unwrap(),
            Symbol::Value(Bits::from_uint_be(4, 3))
        );
        assert_eq!(
            evaluate(&max_n(4), &x, &y).unwrap(),
            Symbol::Value(Bits::parse("0110"))
        );
        assert_eq!(
            evaluate(&t_int(4, 2), &x, &y).unwrap(),
            Symbol::Value(Bits::parse("0100"))
        );
    }

    #[test]
    fn promise_enforcement() {
        let g = ghd(8, 2, 6);
        let x = Bits::new(8);
        let mut y = Bits::new(8);
        y.set(0, true);
        y.set(1, true);
        y.set(2, true); // distance 3: in the gap
        assert!(evaluate(&g, &x, &y).is_err());
        y.set(1, false);
        y.set(2, false); // distance 1
        assert_eq!(
            evaluate(&g, &x, &y).unwrap(),
            Symbol::Value(Bits::from_uint_be(0, 1))
        );
    }

    #[test]
    fn gapmaj_promise_detects_witness() {
        let k = 3;
        let f = Bits::parse("101");
        let rows_a: Vec<Bits> = (0..10u64).map(|i| Bits::from_uint_be(i % 8, k)).collect();
        let mut rows_b: Vec<Bits> = rows_a.iter().map(|a| a.xor(&f)).collect();
        // corrupt two rows
        rows_b[0] = rows_b[0].xor(&Bits::parse("001"));
        rows_b[5] = rows_b[5].xor(&Bits::parse("100"));
        let eps = BigRational::new(BigInt::from(3), BigInt::from(10));
        let inst = GapMajInstance::uniform(rows_a, rows_b, eps);
        let chk = check_gapmaj_promise(&inst);
        assert!(chk.holds && chk.unique);
        assert_eq!(chk.witness, Some(f));
        assert_eq!(
            chk.max_weight,
            BigRational::new(BigInt::from(8), BigInt::from(10))
        );
    }

    #[test]
    fn gapmaj_promise_fails_without_majority() {
        let rows_a = vec![Bits::parse("00"), Bits::parse("01"), Bits::parse("10")];
        let rows_b = vec![Bits::parse("00"), Bits::parse("00"), Bits::parse("00")];
        let eps = BigRational::new(BigInt::from(1), BigInt::from(4));
        let inst = GapMajInstance::uniform(rows_a, rows_b, eps);
        let chk = check_gapmaj_promise(&inst);
        assert!(!chk.holds);
        assert!(chk.witness.is_none());
    }

    #[test]
    fn ball_size_and_enumeration() {
        let b = hamming_ball(6, 2);
        assert_eq!(b.size, 1 + 6 + 15);
        let mut seen = std::collections::BTreeSet::new();
        let mut prev: Option<Bits> = None;
        for r in 0..b.size {
            let x = b.unrank(r);
            assert!(b.contains(&x));
            assert_eq!(b.rank(&x), r);
            if let Some(p) = prev {
                assert!(p < x, "enumeration must be strictly increasing");
            }
            prev = Some(x.clone());
            seen.insert(x);
        }
        assert_eq!(seen.len() as u128, b.size);
    }

    #[test]
    fn ball_entropy_bounds() {
        for n in 2..=24usize {
            for t in 1..((n as u32).div_ceil(2)) {
                if (t as usize) * 2 < n {
                    assert!(
                        hamming_ball(n, t).entropy_bounds_hold(),
                        "bounds fail at n={} t={}",
                        n,
                        t
                    );
                }
            }
        }
    }

    #[test]
    fn probes_respect_promises() {
        let p = t_ftfd(12, 2);
        for (x, y) in p.probe_inputs(3, 10) {
            assert!(p.in_domain(&x, &y));
        }
    }
}
