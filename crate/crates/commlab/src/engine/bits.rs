//! Packed bit strings and partial (share) strings.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

/// Fixed-length bit string packed into 64-bit words.
///
/// Index 0 is the first (leftmost, most significant) bit. Internally bit `i`
/// lives at `words[i / 64]`, bit position `i % 64` counted from the word's
/// low end, so comparisons reverse bits per word.
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn new(len: usize) -> Self {
        Bits {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn empty() -> Self {
        Bits::new(0)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {} out of range {}", i, self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    /// Raw n-bit window as one word: bit `start + j` of self lands at result
    /// bit j (low end). n <= 64.
    pub fn span(&self, start: usize, n: usize) -> u64 {
        assert!(n <= 64 && start + n <= self.len, "span {}+{} out of range {}", start, n, self.len);
        if n == 0 {
            return 0;
        }
        let w = start >> 6;
        let s = start & 63;
        let mut v = self.words[w] >> s;
        if s != 0 && w + 1 < self.words.len() {
            v |= self.words[w + 1] << (64 - s);
        }
        if n < 64 {
            v &= (1u64 << n) - 1;
        }
        v
    }

    pub fn set(&mut self, i: usize, v: bool) {
        assert!(i < self.len);
        let w = &mut self.words[i >> 6];
        if v {
            *w |= 1 << (i & 63);
        } else {
            *w &= !(1 << (i & 63));
        }
    }

    pub fn push(&mut self, v: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        let i = self.len - 1;
        if v {
            self.words[i >> 6] |= 1 << (i & 63);
        }
    }

    pub fn from_bools(bs: &[bool]) -> Self {
        let mut out = Bits::new(bs.len());
        for (i, &b) in bs.iter().enumerate() {
            if b {
                out.set(i, true);
            }
        }
        out
    }

    /// Parse from a string of '0'/'1' characters.
    pub fn parse(s: &str) -> Self {
        Bits::from_bools(&s.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    /// Big-endian value encoding: bit 0 is the most significant of `len` bits.
    pub fn from_uint_be(value: u64, len: usize) -> Self {
        assert!(len >= 64 || value < (1u64 << len).max(1) || len == 64);
        let mut out = Bits::new(len);
        for i in 0..len {
            if len - 1 - i < 64 && (value >> (len - 1 - i)) & 1 == 1 {
                out.set(i, true);
            }
        }
        out
    }

    pub fn to_uint_be(&self) -> u64 {
        assert!(self.len <= 64);
        let mut v = 0u64;
        for i in 0..self.len {
            v = (v << 1) | (self.get(i) as u64);
        }
        v
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn concat(&self, other: &Bits) -> Bits {
        let mut out = self.clone();
        for b in other.iter() {
            out.push(b);
        }
        out
    }

    pub fn slice(&self, start: usize, end: usize) -> Bits {
        assert!(start <= end && end <= self.len);
        let mut out = Bits::new(end - start);
        for i in start..end {
            if self.get(i) {
                out.set(i - start, true);
            }
        }
        out
    }

    pub fn xor(&self, other: &Bits) -> Bits {
        assert_eq!(self.len, other.len, "xor length mismatch");
        let mut out = self.clone();
        for (w, o) in out.words.iter_mut().zip(other.words.iter()) {
            *w ^= o;
        }
        out
    }

    pub fn and(&self, other: &Bits) -> Bits {
        assert_eq!(self.len, other.len);
        let mut out = self.clone();
        for (w, o) in out.words.iter_mut().zip(other.words.iter()) {
            *w &= o;
        }
        out
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn hamming(&self, other: &Bits) -> u32 {
        assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// GF(2) inner product.
    pub fn dot2(&self, other: &Bits) -> bool {
        assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a & b).count_ones())
            .sum::<u32>()
            & 1
            == 1
    }

    pub fn not(&self) -> Bits {
        let mut out = self.clone();
        for w in out.words.iter_mut() {
            *w = !*w;
        }
        out.mask_tail();
        out
    }

    pub fn ones(len: usize) -> Bits {
        Bits::new(len).not()
    }

    /// True on the all-zero string of length 0 as well.
    fn mask_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
        // keep word count canonical for Eq/Hash
        let need = self.len.div_ceil(64);
        self.words.truncate(need);
    }

    /// First index where the two strings differ, or `len` if equal.
    pub fn first_diff(&self, other: &Bits) -> usize {
        assert_eq!(self.len, other.len);
        for (wi, (a, b)) in self.words.iter().zip(other.words.iter()).enumerate() {
            let d = a ^ b;
            if d != 0 {
                return (wi << 6) + d.trailing_zeros() as usize;
            }
        }
        self.len
    }
}

impl Ord for Bits {
    /// Lexicographic on the bit sequence; shorter strings order first among
    /// equal prefixes. For equal lengths this is the big-endian numeric order.
    fn cmp(&self, other: &Self) -> Ordering {
        let n = self.words.len().min(other.words.len());
        for i in 0..n {
            let a = self.words[i].reverse_bits();
            let b = other.words[i].reverse_bits();
            if a != b {
                return a.cmp(&b);
            }
        }
        self.len.cmp(&other.len)
    }
}

impl PartialOrd for Bits {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            write!(f, "{}", if b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b\"{}\"", self)
    }
}

/// A share string over {0, 1, *}: a defined symbol where `mask` is set,
/// a hole (*) elsewhere. `vals` is zero at holes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct SplitString {
    pub mask: Bits,
    pub vals: Bits,
}

impl SplitString {
    pub fn new(mask: Bits, vals: Bits) -> Self {
        assert_eq!(mask.len(), vals.len());
        let vals = vals.and(&mask);
        SplitString { mask, vals }
    }

    pub fn holes(len: usize) -> Self {
        SplitString {
            mask: Bits::new(len),
            vals: Bits::new(len),
        }
    }

    pub fn full(vals: Bits) -> Self {
        SplitString {
            mask: Bits::ones(vals.len()),
            vals,
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.len() == 0
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        if self.mask.get(i) {
            Some(self.vals.get(i))
        } else {
            None
        }
    }

    pub fn parse(s: &str) -> Self {
        let mut mask = Bits::new(s.len());
        let mut vals = Bits::new(s.len());
        for (i, c) in s.chars().enumerate() {
            match c {
                '*' => {}
                '0' => mask.set(i, true),
                '1' => {
                    mask.set(i, true);
                    vals.set(i, true);
                }
                _ => panic!("bad split symbol {:?}", c),
            }
        }
        SplitString { mask, vals }
    }
}

impl fmt::Display for SplitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            match self.get(i) {
                None => write!(f, "*")?,
                Some(false) => write!(f, "0")?,
                Some(true) => write!(f, "1")?,
            }
        }
        Ok(())
    }
}

/// Positionwise combination of two share strings. Where exactly one side
/// defines a symbol the result takes it; where both or neither define one the
/// position stays a hole, so a complete (hole-free) result certifies that the
/// two masks partition the positions.
pub fn weave(a: &SplitString, b: &SplitString) -> SplitString {
    assert_eq!(a.len(), b.len(), "weave length mismatch");
    let only_a = a.mask.and(&b.mask.not());
    let only_b = b.mask.and(&a.mask.not());
    let mask = only_a.xor(&only_b); // disjoint union
    let vals = a.vals.and(&only_a).xor(&b.vals.and(&only_b));
    SplitString { mask, vals }
}

/// A woven pair resolves to a value only when no holes remain.
pub fn weave_complete(a: &SplitString, b: &SplitString) -> Option<Bits> {
    let w = weave(a, b);
    if w.mask.count_ones() as usize == w.len() {
        Some(w.vals)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_uint() {
        for v in 0..64u64 {
            let b = Bits::from_uint_be(v, 6);
            assert_eq!(b.to_uint_be(), v);
            assert_eq!(b.len(), 6);
        }
    }

    #[test]
    fn ordering_is_numeric_be() {
        let a = Bits::from_uint_be(5, 7);
        let b = Bits::from_uint_be(6, 7);
        assert!(a < b);
        // across word boundaries
        let a = Bits::from_uint_be(70, 70);
        let mut b = Bits::from_uint_be(70, 70);
        b.set(0, true);
        assert!(a < b);
    }

    #[test]
    fn push_get_display() {
        let mut b = Bits::empty();
        b.push(true);
        b.push(false);
        b.push(true);
        assert_eq!(format!("{}", b), "101");
        assert_eq!(b.to_uint_be(), 5);
    }

    #[test]
    fn xor_hamming_dot() {
        let a = Bits::parse("1100110011");
        let b = Bits::parse("1010101010");
        assert_eq!(a.hamming(&b), a.xor(&b).count_ones());
        assert_eq!(a.dot2(&b), (a.and(&b).count_ones() % 2) == 1);
    }

    #[test]
    fn first_diff_positions() {
        let a = Bits::parse("000111");
        let b = Bits::parse("000101");
        assert_eq!(a.first_diff(&b), 4);
        assert_eq!(a.first_diff(&a), 6);
    }

    #[test]
    fn weave_examples() {
        // one side holds a symbol, the other a hole: take the symbol
        let a = SplitString::parse("1*0*");
        let b = SplitString::parse("*1*0");
        assert_eq!(weave_complete(&a, &b), Some(Bits::parse("1100")));
        // overlap produces a hole, so the weave is incomplete
        let a = SplitString::parse("1**");
        let b = SplitString::parse("10*");
        assert_eq!(weave_complete(&a, &b), None);
        // both holes stay holes
        let a = SplitString::parse("**");
        let b = SplitString::parse("0*");
        assert_eq!(format!("{}", weave(&a, &b)), "0*");
    }
}
