//! Exact lower-bound certificates: communication matrices and their rank,
//! the structured low-rank decompositions behind the leaf-rectangle bounds,
//! and feasible solutions to the weak partition relaxation.
//!
//! Everything here is rational arithmetic end to end. A certificate is only
//! as good as its verification, so each constructor checks its own claim
//! (decompositions multiply back, feasible points satisfy every constraint)
//! and the rank routine is cross-validated against an independent
//! elimination in the tests.

use crate::engine::{execute, Bits, EngineError, OutputModel, Protocol, Symbol, TapeSet};
use crate::problems::{evaluate, ProblemSpec};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::{BTreeMap, BTreeSet};

fn pow2(e: usize) -> BigInt {
    BigInt::one() << e
}

fn rat_int(v: BigInt) -> BigRational {
    BigRational::from(v)
}

/// Field embedding of an answer: values by their binary reading, silence at
/// the given out-of-range point.
pub fn embed_symbol(sym: &Symbol, top: &BigRational) -> BigRational {
    match sym {
        Symbol::Value(v) => rat_int(BigInt::from(v.to_uint_be())),
        Symbol::Top => top.clone(),
    }
}

// ---------------------------------------------------------------------------
// communication matrices
// ---------------------------------------------------------------------------

/// Function table over the full input domain: rows indexed by x, columns by
/// y, both in binary order, entries embedded in the rationals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommMatrix {
    pub entries: Vec<Vec<BigRational>>,
}

impl CommMatrix {
    pub fn rows(&self) -> usize {
        self.entries.len()
    }

    pub fn cols(&self) -> usize {
        self.entries.first().map_or(0, |r| r.len())
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CommMatrix {
        let entries = rows
            .iter()
            .map(|&r| cols.iter().map(|&c| self.entries[r][c].clone()).collect())
            .collect();
        CommMatrix { entries }
    }
}

// rank arguments only apply to total functions, and full tables of this size
// are the practical ceiling for exact elimination anyway
const MAX_MATRIX_INPUT: usize = 12;

/// Build the communication matrix with silence embedded at 2^k.
pub fn build_comm_matrix(spec: &ProblemSpec) -> Result<CommMatrix, EngineError> {
    let top = rat_int(pow2(spec.output_len));
    build_comm_matrix_top(spec, &top)
}

/// Same table under a caller-chosen silence embedding. Any injective
/// embedding yields the same rank; the default is 2^k.
pub fn build_comm_matrix_top(
    spec: &ProblemSpec,
    top: &BigRational,
) -> Result<CommMatrix, EngineError> {
    let (na, nb) = (spec.input_len_a, spec.input_len_b);
    if na > MAX_MATRIX_INPUT || nb > MAX_MATRIX_INPUT {
        return Err(EngineError::BadParameter(format!(
            "{}: matrix side 2^{} exceeds the exact-arithmetic budget",
            spec.name,
            na.max(nb)
        )));
    }
    let mut entries = Vec::with_capacity(1 << na);
    for xi in 0..1u64 << na {
        let x = Bits::from_uint_be(xi, na);
        let mut row = Vec::with_capacity(1 << nb);
        for yi in 0..1u64 << nb {
            let y = Bits::from_uint_be(yi, nb);
            // partial functions have no total table; surfaces as DomainError
            let sym = evaluate(spec, &x, &y)?;
            row.push(embed_symbol(&sym, top));
        }
        entries.push(row);
    }
    Ok(CommMatrix { entries })
}

// ---------------------------------------------------------------------------
// exact rank
// ---------------------------------------------------------------------------

/// Rank over the rationals by fraction-free elimination. Row contents are
/// scaled to integers first; intermediate entries are then minors of the
/// scaled matrix, so they stay exactly divisible by the previous pivot and
/// never grow past the rank-sized Hadamard bound.
pub fn exact_rank(m: &CommMatrix) -> usize {
    let mut a: Vec<Vec<BigInt>> = m
        .entries
        .iter()
        .map(|row| {
            let lcm = row
                .iter()
                .fold(BigInt::one(), |acc, e| acc.lcm(e.denom()));
            row.iter().map(|e| e.numer() * (&lcm / e.denom())).collect()
        })
        .collect();
    let rows = a.len();
    let cols = m.cols();
    let mut rank = 0;
    let mut prev = BigInt::one();
    for c in 0..cols {
        if rank == rows {
            break;
        }
        let Some(p) = (rank..rows).find(|&r| !a[r][c].is_zero()) else {
            continue;
        };
        a.swap(rank, p);
        for r in rank + 1..rows {
            for j in c + 1..cols {
                let num = &a[r][j] * &a[rank][c] - &a[r][c] * &a[rank][j];
                let (q, rem) = num.div_rem(&prev);
                assert!(rem.is_zero(), "fraction-free step must divide exactly");
                a[r][j] = q;
            }
            a[r][c] = BigInt::zero();
        }
        prev = a[rank][c].clone();
        rank += 1;
    }
    rank
}

// ---------------------------------------------------------------------------
// certificates
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertificateKind {
    Rank,
    Xi,
}

/// A verified lower-bound witness. The implied bound is log2(value /
/// divisor) bits, where the divisor carries the model's leaf-rectangle
/// slack; comparisons against integer costs are done by shifting, never
/// through floats.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub value: BigInt,
    pub divisor: BigInt,
    pub model: OutputModel,
}

impl Certificate {
    /// Does the bound permit a protocol of this cost? True iff
    /// log2(value/divisor) <= cost.
    pub fn admits_cost(&self, cost: u64) -> bool {
        self.value <= &self.divisor << (cost as usize)
    }

    /// Display-only float view of the implied bound in bits.
    pub fn bound_bits(&self) -> f64 {
        if !self.value.is_positive() {
            return f64::NEG_INFINITY;
        }
        let v = self.value.to_f64().unwrap_or(f64::MAX);
        let d = self.divisor.to_f64().unwrap_or(f64::MAX);
        v.log2() - d.log2()
    }
}

/// Deterministic-cost lower bound from matrix rank: every leaf rectangle of
/// a cost-C protocol has bounded rank, so rank(M) <= 2^C times the per-leaf
/// rank cap (1 for striped models, 2 for shares, k+1 for XOR pieces).
pub fn rank_lower_bound(m: &CommMatrix, model: OutputModel, k: usize) -> Certificate {
    let divisor = match model {
        OutputModel::Open
        | OutputModel::Local
        | OutputModel::UniAlice
        | OutputModel::UniBob
        | OutputModel::OneOutOfTwo => BigInt::one(),
        OutputModel::Split => BigInt::from(2),
        OutputModel::Xor => BigInt::from(k as u64 + 1),
    };
    Certificate {
        kind: CertificateKind::Rank,
        value: BigInt::from(exact_rank(m)),
        divisor,
        model,
    }
}

// ---------------------------------------------------------------------------
// the XOR Gram decomposition
// ---------------------------------------------------------------------------

/// One symbolic column c * s with s in {-1,+1}^(2^k) and c a formal scalar
/// known only through its square. Only Gram entries are ever materialized,
/// so the squares may be negative rationals; the cross terms all pair up.
#[derive(Clone, Debug)]
pub struct SymbolicColumn {
    pub scale2: BigRational,
    /// true = +1 at that row.
    pub signs: Vec<bool>,
}

/// Column certificate for the XOR table: k+1 columns whose Gram matrix is
/// exactly the embedded XOR function, witnessing rank at most k+1.
#[derive(Clone, Debug)]
pub struct XorDecomposition {
    pub k: usize,
    pub columns: Vec<SymbolicColumn>,
}

impl XorDecomposition {
    pub fn rank_bound(&self) -> usize {
        self.columns.len()
    }

    /// Sum of scale2 * s s^T over the columns.
    pub fn gram(&self) -> CommMatrix {
        let n = 1usize << self.k;
        let mut entries = vec![vec![BigRational::zero(); n]; n];
        for col in &self.columns {
            for x in 0..n {
                for y in 0..n {
                    if col.signs[x] == col.signs[y] {
                        entries[x][y] += &col.scale2;
                    } else {
                        entries[x][y] -= &col.scale2;
                    }
                }
            }
        }
        CommMatrix { entries }
    }
}

/// The all-ones column scaled by sqrt(2^(k-1) - 1/2) plus one sign column
/// per bit position, the sign at row j read off bit j. The per-bit squared
/// scales are the negated half bit weights: a sign column contributes
/// (+/-)(bit weight)/2 to each Gram entry, and the negative sign is what
/// turns the constant offset into the binary reading of x xor y.
pub fn xor_decomposition(k: usize) -> XorDecomposition {
    assert!(k >= 1);
    let n = 1usize << k;
    let mut columns = Vec::with_capacity(k + 1);
    columns.push(SymbolicColumn {
        scale2: BigRational::new(pow2(k) - 1, BigInt::from(2)),
        signs: vec![true; n],
    });
    for j in 0..k {
        let weight = pow2(k - 1 - j);
        columns.push(SymbolicColumn {
            scale2: BigRational::new(-weight, BigInt::from(2)),
            signs: (0..n)
                .map(|x| Bits::from_uint_be(x as u64, k).get(j))
                .collect(),
        });
    }
    XorDecomposition { k, columns }
}

// ---------------------------------------------------------------------------
// the split rank-2 decomposition
// ---------------------------------------------------------------------------

/// Table of everything a fixed ownership pattern can weave, together with
/// its rank-2 factorization. Pattern bit i names the owner of output bit i
/// (true = row player); the bit carries weight 2^i in the table.
#[derive(Clone, Debug)]
pub struct SplitDecomposition {
    pub pattern: Bits,
    pub s: CommMatrix,
    pub u: CommMatrix,
    pub v: CommMatrix,
}

fn matmul(a: &CommMatrix, b: &CommMatrix) -> CommMatrix {
    assert_eq!(a.cols(), b.rows());
    let entries = (0..a.rows())
        .map(|i| {
            (0..b.cols())
                .map(|j| {
                    (0..a.cols())
                        .map(|t| &a.entries[i][t] * &b.entries[t][j])
                        .sum()
                })
                .collect()
        })
        .collect();
    CommMatrix { entries }
}

fn add_block(m: &CommMatrix, delta: &[BigRational]) -> Vec<Vec<BigRational>> {
    m.entries
        .iter()
        .map(|row| row.iter().zip(delta).map(|(e, d)| e + d).collect())
        .collect()
}

/// Grow S by the stated doubling recursions while maintaining S = U V with
/// U's second column and V's top row all ones; those stay fixed, so adding
/// a constant to U's first column (rows) or V's bottom row (columns) adds
/// a constant block to the product.
pub fn split_decomposition(pattern: &Bits) -> SplitDecomposition {
    let mut s = CommMatrix {
        entries: vec![vec![BigRational::zero()]],
    };
    let mut u = CommMatrix {
        entries: vec![vec![BigRational::zero(), BigRational::one()]],
    };
    let mut v = CommMatrix {
        entries: vec![vec![BigRational::one()], vec![BigRational::zero()]],
    };
    for i in 0..pattern.len() {
        let c = rat_int(pow2(i));
        if pattern.get(i) {
            // row player owns bit i: stack rows, first U column shifts
            let shifted = add_block(&s, &vec![c.clone(); s.cols()]);
            s.entries.extend(shifted);
            let u_shift: Vec<Vec<BigRational>> = u
                .entries
                .iter()
                .map(|r| vec![&r[0] + &c, r[1].clone()])
                .collect();
            u.entries.extend(u_shift);
        } else {
            // column player owns bit i: widen, bottom V row shifts
            let wide = add_block(&s, &vec![c.clone(); s.cols()]);
            for (row, ext) in s.entries.iter_mut().zip(wide) {
                row.extend(ext);
            }
            let bottom: Vec<BigRational> = v.entries[1].iter().map(|e| e + &c).collect();
            let top_ext = v.entries[0].clone();
            v.entries[0].extend(top_ext);
            v.entries[1].extend(bottom);
        }
    }
    assert!(u.entries.iter().all(|r| r[1].is_one()));
    assert!(v.entries[0].iter().all(|e| e.is_one()));
    assert_eq!(matmul(&u, &v), s, "factorization must reproduce the table");
    assert!(exact_rank(&s) <= 2);
    SplitDecomposition {
        pattern: pattern.clone(),
        s,
        u,
        v,
    }
}

// ---------------------------------------------------------------------------
// leaf rectangles
// ---------------------------------------------------------------------------

/// Inputs reaching one transcript of a deterministic protocol.
#[derive(Clone, Debug)]
pub struct LeafRect {
    pub transcript: Bits,
    pub rows: Vec<Bits>,
    pub cols: Vec<Bits>,
}

/// Group the full domain by transcript. Message bits depend only on the
/// speaker's input and the prefix, so each group must be a combinatorial
/// rectangle; that structure is asserted, not assumed.
pub fn leaf_rectangles(p: &Protocol) -> Vec<LeafRect> {
    assert_eq!(p.budgets.total(), 0, "{}: leaf rectangles need no tapes", p.id);
    assert!(p.input_len_a <= 11 && p.input_len_b <= 11);
    let mut groups: BTreeMap<Bits, (BTreeSet<Bits>, BTreeSet<Bits>, u64)> = BTreeMap::new();
    for xi in 0..1u64 << p.input_len_a {
        let x = Bits::from_uint_be(xi, p.input_len_a);
        for yi in 0..1u64 << p.input_len_b {
            let y = Bits::from_uint_be(yi, p.input_len_b);
            let mut tapes = TapeSet::none();
            let rec = execute(p, &x, &y, &mut tapes);
            let g = groups
                .entry(rec.transcript)
                .or_insert_with(|| (BTreeSet::new(), BTreeSet::new(), 0));
            g.0.insert(x.clone());
            g.1.insert(y);
            g.2 += 1;
        }
    }
    groups
        .into_iter()
        .map(|(transcript, (rows, cols, count))| {
            assert_eq!(
                count as usize,
                rows.len() * cols.len(),
                "{}: transcript group is not a rectangle",
                p.id
            );
            LeafRect {
                transcript,
                rows: rows.into_iter().collect(),
                cols: cols.into_iter().collect(),
            }
        })
        .collect()
}

/// Validate the structural cap a model imposes on one leaf's submatrix:
/// constant for transcript-determined answers, striped when a single side
/// answers, rank 2 for woven shares, rank k+1 for XOR shares.
pub fn leaf_rectangle_check(rect: &CommMatrix, model: OutputModel, k: usize) -> bool {
    let rows_constant = rect
        .entries
        .iter()
        .all(|r| r.iter().all(|e| *e == r[0]));
    let cols_constant = (0..rect.cols())
        .all(|c| rect.entries.iter().all(|r| r[c] == rect.entries[0][c]));
    match model {
        OutputModel::Open | OutputModel::Local => rows_constant && cols_constant,
        OutputModel::UniAlice => rows_constant,
        OutputModel::UniBob => cols_constant,
        OutputModel::OneOutOfTwo => rows_constant || cols_constant,
        OutputModel::Split => exact_rank(rect) <= 2,
        OutputModel::Xor => exact_rank(rect) <= k + 1,
    }
}

// ---------------------------------------------------------------------------
// output-count certificates for the open model
// ---------------------------------------------------------------------------

/// A distribution over input pairs as an explicit support list.
pub type InputDist = [((Bits, Bits), BigRational)];

/// Uniform distribution on the diagonal of an n-bit domain.
pub fn diagonal_uniform(n: usize) -> Vec<((Bits, Bits), BigRational)> {
    let mass = BigRational::new(BigInt::one(), pow2(n));
    (0..1u64 << n)
        .map(|i| {
            let x = Bits::from_uint_be(i, n);
            ((x.clone(), x), mass.clone())
        })
        .collect()
}

struct ClassTable {
    /// Output class per support entry, as an index into `classes`.
    cell_class: Vec<usize>,
    /// (embedded value, mass) per class with positive mass, sorted by mass
    /// descending then embedding ascending.
    classes: Vec<(BigRational, BigRational)>,
}

fn class_table(spec: &ProblemSpec, mu: &InputDist) -> ClassTable {
    let top = rat_int(pow2(spec.output_len));
    let total: BigRational = mu.iter().map(|(_, m)| m.clone()).sum();
    assert!(total.is_one(), "{}: measure must sum to 1", spec.name);
    let mut mass: BTreeMap<BigRational, BigRational> = BTreeMap::new();
    let mut cell_embed = Vec::with_capacity(mu.len());
    for ((x, y), m) in mu {
        assert!(!m.is_negative());
        let sym = evaluate(spec, x, y).expect("measure support must lie in the domain");
        let e = embed_symbol(&sym, &top);
        *mass.entry(e.clone()).or_insert_with(BigRational::zero) += m;
        cell_embed.push(e);
    }
    let mut classes: Vec<(BigRational, BigRational)> = mass
        .into_iter()
        .filter(|(_, m)| m.is_positive())
        .collect();
    classes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let index: BTreeMap<&BigRational, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, (e, _))| (e, i))
        .collect();
    let cell_class = cell_embed
        .iter()
        .map(|e| *index.get(e).expect("positive-mass cell"))
        .collect();
    ClassTable {
        cell_class,
        classes,
    }
}

/// Number of heaviest output classes needed to cover mass 1 - eps, ties
/// broken toward smaller embedded values.
pub fn xi(spec: &ProblemSpec, mu: &InputDist, eps: &BigRational) -> u64 {
    let table = class_table(spec, mu);
    let target = BigRational::one() - eps;
    let mut acc = BigRational::zero();
    for (i, (_, m)) in table.classes.iter().enumerate() {
        acc += m;
        if acc >= target {
            return i as u64 + 1;
        }
    }
    table.classes.len() as u64
}

/// Wrap a computed xi as a lower-bound certificate: log2(xi - 1) bits
/// against the open model.
pub fn xi_certificate(value: u64) -> Certificate {
    Certificate {
        kind: CertificateKind::Xi,
        value: BigInt::from(value) - 1,
        divisor: BigInt::one(),
        model: OutputModel::Open,
    }
}

/// A feasible point of the weak partition relaxation, with its value.
pub struct WprtSolution {
    pub alpha: BigRational,
    /// Aligned with the measure's support list.
    pub beta: Vec<BigRational>,
    pub value: BigRational,
    pub xi: u64,
}

/// The closed-form feasible point: alpha = 1/mass(xi-th class), beta takes
/// up exactly the slack of the heavier classes. Feasibility is proved by a
/// per-class check (the cell surpluses are nonnegative, so their total
/// dominates every rectangle) and re-verified against all rectangles
/// outright on domains of at most 4+4 bits.
pub fn wprt_feasible(spec: &ProblemSpec, mu: &InputDist, eps: &BigRational) -> WprtSolution {
    let table = class_table(spec, mu);
    let target = BigRational::one() - eps;
    let mut acc = BigRational::zero();
    let mut cut = table.classes.len() - 1;
    for (i, (_, m)) in table.classes.iter().enumerate() {
        acc += m;
        if acc >= target {
            cut = i;
            break;
        }
    }
    let alpha = table.classes[cut].1.recip();
    let beta: Vec<BigRational> = mu
        .iter()
        .zip(&table.cell_class)
        .map(|(((_, _), m), &cls)| {
            let gap = &alpha - table.classes[cls].1.recip();
            if gap.is_positive() {
                m * gap
            } else {
                BigRational::zero()
            }
        })
        .collect();
    // per-cell slack alpha mu - beta is nonnegative: constraint (2)
    let surplus: Vec<BigRational> = mu
        .iter()
        .zip(&beta)
        .map(|(((_, _), m), b)| &alpha * m - b)
        .collect();
    assert!(surplus.iter().all(|s| !s.is_negative()));
    // constraint (1) per class: any rectangle's value is at most the sum of
    // the class's cell surpluses, which is min(alpha mass, 1) <= 1
    for cls in 0..table.classes.len() {
        let total: BigRational = surplus
            .iter()
            .zip(&table.cell_class)
            .filter(|(_, &c)| c == cls)
            .map(|(s, _)| s.clone())
            .sum();
        assert!(total <= BigRational::one());
    }
    if spec.input_len_a <= 4 && spec.input_len_b <= 4 {
        exhaustive_rectangle_check(mu, &alpha, &beta, &table);
    }
    let beta_total: BigRational = beta.iter().cloned().sum();
    let value = (BigRational::one() - eps) * &alpha - beta_total;
    let xi_val = cut as u64 + 1;
    assert!(
        value >= rat_int(BigInt::from(xi_val)) - BigRational::one(),
        "{}: feasible value fell below xi - 1",
        spec.name
    );
    WprtSolution {
        alpha,
        beta,
        value,
        xi: xi_val,
    }
}

/// Maximize alpha mu(R cap class) - beta(R) over genuine rectangles R by
/// enumerating row subsets of the support and completing each with the
/// columns of positive gain. Cells outside the support contribute nothing.
fn exhaustive_rectangle_check(
    mu: &InputDist,
    alpha: &BigRational,
    beta: &[BigRational],
    table: &ClassTable,
) {
    let xs: Vec<&Bits> = {
        let set: BTreeSet<&Bits> = mu.iter().map(|((x, _), _)| x).collect();
        set.into_iter().collect()
    };
    let ys: Vec<&Bits> = {
        let set: BTreeSet<&Bits> = mu.iter().map(|((_, y), _)| y).collect();
        set.into_iter().collect()
    };
    assert!(xs.len() <= 16, "support too wide for exhaustive rectangles");
    for cls in 0..table.classes.len() {
        // integer cell weights on a common denominator
        let mut weights: BTreeMap<(usize, usize), BigRational> = BTreeMap::new();
        for (idx, ((x, y), m)) in mu.iter().enumerate() {
            let w = if table.cell_class[idx] == cls {
                alpha * m - &beta[idx]
            } else {
                -beta[idx].clone()
            };
            let xi_pos = xs.binary_search(&x).expect("present");
            let yi_pos = ys.binary_search(&y).expect("present");
            let e = weights
                .entry((xi_pos, yi_pos))
                .or_insert_with(BigRational::zero);
            *e += w;
        }
        for rows_mask in 0u32..1 << xs.len() {
            let mut best = BigRational::zero();
            for yi_pos in 0..ys.len() {
                let col: BigRational = (0..xs.len())
                    .filter(|i| rows_mask >> i & 1 == 1)
                    .filter_map(|i| weights.get(&(i, yi_pos)).cloned())
                    .sum();
                if col.is_positive() {
                    best += col;
                }
            }
            assert!(
                best <= BigRational::one(),
                "rectangle constraint violated for class {}",
                cls
            );
        }
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{
        cond_id_separation, deterministic_catalog, xor_separation,
    };
    use crate::problems::{cond_id, eqout, ghd, id_a, xor_n};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rq(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    /// Independent oracle: plain rational Gauss-Jordan, no shared code with
    /// the fraction-free routine.
    fn gaussian_rank(m: &CommMatrix) -> usize {
        let mut a = m.entries.clone();
        let rows = a.len();
        let cols = m.cols();
        let mut rank = 0;
        for c in 0..cols {
            if rank == rows {
                break;
            }
            let Some(p) = (rank..rows).find(|&r| !a[r][c].is_zero()) else {
                continue;
            };
            a.swap(rank, p);
            let pivot = a[rank][c].clone();
            for r in 0..rows {
                if r == rank || a[r][c].is_zero() {
                    continue;
                }
                let f = &a[r][c] / &pivot;
                for j in c..cols {
                    let t = &a[rank][j] * &f;
                    a[r][j] = &a[r][j] - t;
                }
            }
            rank += 1;
        }
        rank
    }

    fn int_matrix(rows: &[&[i64]]) -> CommMatrix {
        CommMatrix {
            entries: rows
                .iter()
                .map(|r| r.iter().map(|&v| rq(v, 1)).collect())
                .collect(),
        }
    }

    #[test]
    fn comm_matrix_pins() {
        let m = build_comm_matrix(&xor_n(1)).unwrap();
        assert_eq!(m, int_matrix(&[&[0, 1], &[1, 0]]));
        // constant rows: the answer is Alice's input
        let ida = build_comm_matrix(&id_a(2)).unwrap();
        for (i, row) in ida.entries.iter().enumerate() {
            assert!(row.iter().all(|e| *e == rq(i as i64, 1)));
        }
        // diagonal values, silence embedded off-range everywhere else
        let eq = build_comm_matrix(&eqout(2)).unwrap();
        for x in 0..4usize {
            for y in 0..4usize {
                let want = if x == y { rq(x as i64, 1) } else { rq(4, 1) };
                assert_eq!(eq.entries[x][y], want);
            }
        }
        assert!(matches!(
            build_comm_matrix(&ghd(4, 1, 3)),
            Err(EngineError::DomainError)
        ));
    }

    #[test]
    fn rank_pins_and_embedding_invariance() {
        for k in 1..=5usize {
            let m = build_comm_matrix(&xor_n(k)).unwrap();
            assert_eq!(exact_rank(&m), k + 1);
        }
        assert_eq!(exact_rank(&int_matrix(&[&[3, 3], &[3, 3]])), 1);
        assert_eq!(exact_rank(&int_matrix(&[&[0, 0], &[0, 0]])), 0);
        // four independent stripes: x-block rows, y-block columns
        let spec = cond_id(3);
        let m = build_comm_matrix(&spec).unwrap();
        assert_eq!(exact_rank(&m), 4);
        assert_eq!(gaussian_rank(&m), 4);
        // any injective silence embedding gives the same rank
        let eq = eqout(3);
        let base = build_comm_matrix(&eq).unwrap();
        let shifted = build_comm_matrix_top(&eq, &rq(15, 1)).unwrap();
        assert_eq!(exact_rank(&base), exact_rank(&shifted));
    }

    #[test]
    fn eliminations_agree_on_random_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(0x5eed);
        for _ in 0..200 {
            let rows = rng.gen_range(1..=6);
            let cols = rng.gen_range(1..=6);
            let entries = (0..rows)
                .map(|_| {
                    (0..cols)
                        .map(|_| rq(rng.gen_range(-9..=9), rng.gen_range(1..=4)))
                        .collect()
                })
                .collect();
            let m = CommMatrix { entries };
            assert_eq!(exact_rank(&m), gaussian_rank(&m));
        }
    }

    #[test]
    fn xor_gram_matches_table() {
        for k in 1..=6usize {
            let d = xor_decomposition(k);
            assert_eq!(d.rank_bound(), k + 1);
            let gram = d.gram();
            let table = build_comm_matrix(&xor_n(k)).unwrap();
            assert_eq!(gram, table);
            assert_eq!(exact_rank(&gram), k + 1);
        }
    }

    #[test]
    fn split_recursion_unrolls() {
        let flat = split_decomposition(&Bits::new(2));
        assert_eq!(flat.s, int_matrix(&[&[0, 1, 2, 3]]));
        let tall = split_decomposition(&Bits::ones(2));
        assert_eq!(tall.s, int_matrix(&[&[0], &[1], &[2], &[3]]));
        for k in 0..=4usize {
            for pat in 0..1u64 << k {
                let d = split_decomposition(&Bits::from_uint_be(pat, k));
                assert!(exact_rank(&d.s) <= 2);
                assert_eq!(d.s.rows() * d.s.cols(), 1 << k);
            }
        }
    }

    #[test]
    fn leaf_rectangles_are_striped() {
        let spec = cond_id(3);
        let m = build_comm_matrix(&spec).unwrap();
        let p = cond_id_separation(3);
        let leaves = leaf_rectangles(&p);
        assert_eq!(leaves.len(), 4);
        for leaf in &leaves {
            let rows: Vec<usize> = leaf.rows.iter().map(|b| b.to_uint_be() as usize).collect();
            let cols: Vec<usize> = leaf.cols.iter().map(|b| b.to_uint_be() as usize).collect();
            let rect = m.submatrix(&rows, &cols);
            assert!(leaf_rectangle_check(&rect, p.model, spec.output_len));
        }
        // a zero-communication XOR protocol: one leaf, the whole table
        let m = build_comm_matrix(&xor_n(3)).unwrap();
        let leaves = leaf_rectangles(&xor_separation(3));
        assert_eq!(leaves.len(), 1);
        assert!(leaf_rectangle_check(&m, OutputModel::Xor, 3));
        assert!(!leaf_rectangle_check(&m, OutputModel::Open, 3));
    }

    #[test]
    fn rank_bound_sits_under_catalog_costs() {
        for entry in deterministic_catalog(3) {
            let Ok(m) = build_comm_matrix(&entry.problem) else {
                continue; // promise problems carry no total table
            };
            if entry.protocol.budgets.total() != 0 {
                continue;
            }
            let cert = rank_lower_bound(&m, entry.protocol.model, entry.problem.output_len);
            assert!(
                cert.admits_cost(entry.protocol.max_cost),
                "{}: rank bound exceeds protocol cost",
                entry.protocol.id
            );
        }
        // the XOR table bound collapses to zero bits in the XOR model
        let m = build_comm_matrix(&xor_n(4)).unwrap();
        let cert = rank_lower_bound(&m, OutputModel::Xor, 4);
        assert!(cert.admits_cost(0));
        assert_eq!(cert.bound_bits(), 0.0);
        let open = rank_lower_bound(&m, OutputModel::Open, 4);
        assert!(!open.admits_cost(2));
        assert!(open.admits_cost(3));
    }

    #[test]
    fn xi_pins() {
        let eps = rq(1, 4);
        assert_eq!(xi(&eqout(2), &diagonal_uniform(2), &eps), 3);
        assert_eq!(xi(&eqout(5), &diagonal_uniform(5), &eps), 24);
        // point mass: a single class already covers everything
        let point = vec![((Bits::new(2), Bits::new(2)), rq(1, 1))];
        assert_eq!(xi(&xor_n(2), &point, &eps), 1);
        let cert = xi_certificate(24);
        assert!(!cert.admits_cost(4));
        assert!(cert.admits_cost(5));
    }

    #[test]
    fn wprt_point_is_feasible_and_strong() {
        let eps = rq(1, 4);
        let sol = wprt_feasible(&eqout(2), &diagonal_uniform(2), &eps);
        assert_eq!(sol.alpha, rq(4, 1));
        assert!(sol.beta.iter().all(|b| b.is_zero()));
        assert_eq!(sol.value, rq(3, 1));
        assert_eq!(sol.xi, 3);
        let point = vec![((Bits::new(2), Bits::new(2)), rq(1, 1))];
        let sol = wprt_feasible(&xor_n(2), &point, &eps);
        assert_eq!(sol.value, rq(3, 4));
        // a skewed measure exercises nonzero beta and the rectangle sweep
        let spec = xor_n(2);
        let mut mu = Vec::new();
        for i in 0..4u64 {
            let m = if i == 3 { rq(1, 2) } else { rq(1, 6) };
            mu.push(((Bits::from_uint_be(i, 2), Bits::new(2)), m));
        }
        let sol = wprt_feasible(&spec, &mu, &rq(1, 3));
        let xi_val = xi(&spec, &mu, &rq(1, 3));
        assert!(sol.value >= rq(xi_val as i64, 1) - rq(1, 1));
    }
}
