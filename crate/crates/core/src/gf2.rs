//! Bit-matrix linear algebra over GF(2) for parity learning.
//!
//! Rows are packed into 64-bit words, row-major. Coordinate `i` of a vector
//! is bit `i % 64` of word `i / 64`. A point `x` of `(F_2)^d` encoded as a
//! `usize` has coordinate `i` equal to bit `i` of the integer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{words_for, Domain, Hypothesis, Label, LearningRule, Sample};
use crate::rng::Rng;

/// Largest `d` for which a parity rule will materialize hypotheses over `(F_2)^d`.
pub const MAX_MATERIALIZED_BITS: usize = 24;

#[inline]
fn get_bit(v: &[u64], i: usize) -> bool {
    (v[i / 64] >> (i % 64)) & 1 == 1
}

#[inline]
fn flip_bit(v: &mut [u64], i: usize) {
    v[i / 64] ^= 1 << (i % 64);
}

#[inline]
fn xor_into(dst: &mut [u64], src: &[u64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a ^= b;
    }
}

fn lowest_set_bit(v: &[u64]) -> Option<usize> {
    v.iter().enumerate().find(|(_, w)| **w != 0).map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

fn dot(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum::<u32>() % 2 == 1
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

impl std::fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BitMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            let line: String = (0..self.cols).map(|c| if self.get(r, c) { '1' } else { '0' }).collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> BitMatrix {
        let stride = words_for(cols).max(1);
        BitMatrix { rows, cols, stride, data: vec![0; rows * stride] }
    }

    pub fn identity(n: usize) -> BitMatrix {
        let mut m = BitMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<BitMatrix> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = BitMatrix::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::DimensionMismatch(format!("row {r} has {} bits, expected {cols}", row.len())));
            }
            for (c, &b) in row.iter().enumerate() {
                m.set(r, c, b);
            }
        }
        Ok(m)
    }

    /// Rows given as integers; bit `c` of `rows[r]` is entry `(r, c)`.
    pub fn from_row_ints(rows: &[u64], cols: usize) -> Result<BitMatrix> {
        if cols > 64 {
            return Err(Error::DimensionMismatch(format!("{cols} columns do not fit in a u64 row")));
        }
        let mut m = BitMatrix::zeros(rows.len(), cols);
        let mask = if cols == 64 { u64::MAX } else { (1u64 << cols) - 1 };
        for (r, &bits) in rows.iter().enumerate() {
            if bits & !mask != 0 {
                return Err(Error::DimensionMismatch(format!("row {r} has bits beyond column {cols}")));
            }
            m.data[r * m.stride] = bits;
        }
        Ok(m)
    }

    /// i.i.d. Bernoulli(1/2) entries.
    pub fn random(rows: usize, cols: usize, rng: &mut Rng) -> BitMatrix {
        let mut m = BitMatrix::zeros(rows, cols);
        let rem = cols % 64;
        for r in 0..rows {
            for w in 0..m.stride {
                m.data[r * m.stride + w] = rng.next_u64();
            }
            if rem != 0 {
                m.data[r * m.stride + m.stride - 1] &= (1u64 << rem) - 1;
            }
            if cols == 0 {
                m.data[r * m.stride] = 0;
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.stride..(r + 1) * self.stride]
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.data[r * self.stride..(r + 1) * self.stride]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        get_bit(self.row(r), c)
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        if self.get(r, c) != value {
            flip_bit(self.row_mut(r), c);
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a != b {
            for w in 0..self.stride {
                self.data.swap(a * self.stride + w, b * self.stride + w);
            }
        }
    }

    /// `row[dst] ^= row[src]`.
    pub fn add_row(&mut self, dst: usize, src: usize) {
        if dst == src {
            self.row_mut(dst).fill(0);
            return;
        }
        let s = self.stride;
        let (lo, hi) = self.data.split_at_mut(dst.max(src) * s);
        let (d, r) = if dst < src { (&mut lo[dst * s..(dst + 1) * s], &hi[..s]) } else { (&mut hi[..s], &lo[src * s..(src + 1) * s]) };
        xor_into(d, r);
    }

    /// `M v` for a column vector `v` of `cols` bits.
    pub fn mul_vec(&self, v: &[u64]) -> Vec<u64> {
        let mut out = vec![0u64; words_for(self.rows).max(1)];
        for r in 0..self.rows {
            if dot(self.row(r), v) {
                flip_bit(&mut out, r);
            }
        }
        out
    }

    /// Brings `self` (with `rhs` carried along) to reduced row echelon form.
    /// Returns the pivot columns in increasing order.
    fn reduce(&mut self, mut rhs: Option<&mut Vec<bool>>) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            if r == self.rows {
                break;
            }
            let Some(p) = (r..self.rows).find(|&i| self.get(i, c)) else { continue };
            self.swap_rows(r, p);
            if let Some(y) = rhs.as_deref_mut() {
                y.swap(r, p);
            }
            for i in 0..self.rows {
                if i != r && self.get(i, c) {
                    self.add_row(i, r);
                    if let Some(y) = rhs.as_deref_mut() {
                        y[i] ^= y[r];
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        pivots
    }

    /// Rank over GF(2), by forward elimination on a copy.
    pub fn rank_f2(&self) -> usize {
        let mut m = self.clone();
        let mut rank = 0;
        for c in 0..m.cols {
            if rank == m.rows {
                break;
            }
            let Some(p) = (rank..m.rows).find(|&i| m.get(i, c)) else { continue };
            m.swap_rows(rank, p);
            let word = c / 64;
            let bit = 1u64 << (c % 64);
            let s = m.stride;
            let (top, bottom) = m.data.split_at_mut((rank + 1) * s);
            let pivot_row = &top[rank * s..];
            for row in bottom.chunks_exact_mut(s) {
                if row[word] & bit != 0 {
                    for w in word..s {
                        row[w] ^= pivot_row[w];
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    /// Solution set of `M w = y`, `None` when inconsistent.
    pub fn solve(&self, y: &[bool]) -> Result<Option<AffineSolutionSet>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch(format!("{} labels for {} rows", y.len(), self.rows)));
        }
        let mut m = self.clone();
        let mut rhs = y.to_vec();
        let pivots = m.reduce(Some(&mut rhs));
        let rank = pivots.len();
        if rhs[rank..].iter().any(|&b| b) {
            return Ok(None);
        }
        let words = words_for(self.cols).max(1);
        let mut particular = vec![0u64; words];
        for (r, &p) in pivots.iter().enumerate() {
            if rhs[r] {
                flip_bit(&mut particular, p);
            }
        }
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let kernel = (0..self.cols)
            .filter(|&f| !is_pivot[f])
            .map(|f| {
                let mut v = vec![0u64; words];
                flip_bit(&mut v, f);
                for (r, &p) in pivots.iter().enumerate() {
                    if m.get(r, f) {
                        flip_bit(&mut v, p);
                    }
                }
                v
            })
            .collect();
        Ok(Some(AffineSolutionSet { dim: self.cols, particular, kernel }))
    }

    /// Inverse of a square matrix, `None` when singular.
    pub fn inverse(&self) -> Option<BitMatrix> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut aug = BitMatrix::zeros(n, 2 * n);
        for r in 0..n {
            for c in 0..n {
                aug.set(r, c, self.get(r, c));
            }
            aug.set(r, n + r, true);
        }
        let pivots = aug.reduce(None);
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return None;
        }
        let mut inv = BitMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                inv.set(r, c, aug.get(r, n + c));
            }
        }
        Some(inv)
    }

    /// Uniformly random invertible `n x n` matrix (rejection sampling).
    pub fn random_invertible(n: usize, rng: &mut Rng) -> BitMatrix {
        loop {
            let m = BitMatrix::random(n, n, rng);
            if m.rank_f2() == n {
                return m;
            }
        }
    }
}

/// `particular + span(kernel)` in `(F_2)^dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineSolutionSet {
    pub dim: usize,
    pub particular: Vec<u64>,
    pub kernel: Vec<Vec<u64>>,
}

impl AffineSolutionSet {
    /// `log2` of the number of solutions.
    pub fn log2_size(&self) -> usize {
        self.kernel.len()
    }

    /// Whether `w` is a solution.
    pub fn contains(&self, w: &[u64]) -> bool {
        let mut diff = w.to_vec();
        xor_into(&mut diff, &self.particular);
        reduce_against(&mut diff, &echelon_by_lowest_bit(self.kernel.clone()));
        diff.iter().all(|&x| x == 0)
    }

    /// Lexicographically smallest solution, coordinate 0 compared first.
    pub fn lexicographic_min(&self) -> Vec<u64> {
        let mut w = self.particular.clone();
        reduce_against(&mut w, &echelon_by_lowest_bit(self.kernel.clone()));
        w
    }

    /// Image under the affine map `w -> M w + shift`.
    pub fn mapped(&self, map: &BitMatrix, shift: &[u64]) -> AffineSolutionSet {
        let mut particular = map.mul_vec(&self.particular);
        xor_into(&mut particular, shift);
        AffineSolutionSet { dim: self.dim, particular, kernel: self.kernel.iter().map(|v| map.mul_vec(v)).collect() }
    }
}

/// Reduced echelon basis keyed by lowest set bit: each lead bit appears in
/// exactly one vector. Zero vectors are dropped.
fn echelon_by_lowest_bit(mut vectors: Vec<Vec<u64>>) -> Vec<(usize, Vec<u64>)> {
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
    for mut v in vectors.drain(..) {
        for (lead, b) in &basis {
            if get_bit(&v, *lead) {
                xor_into(&mut v, b);
            }
        }
        if let Some(lead) = lowest_set_bit(&v) {
            for (_, b) in basis.iter_mut() {
                if get_bit(b, lead) {
                    xor_into(b, &v);
                }
            }
            basis.push((lead, v));
        }
    }
    basis.sort_by_key(|(lead, _)| *lead);
    basis
}

fn reduce_against(w: &mut [u64], basis: &[(usize, Vec<u64>)]) {
    for (lead, b) in basis {
        if get_bit(w, *lead) {
            xor_into(w, b);
        }
    }
}

/// Free function form of [`BitMatrix::rank_f2`].
pub fn rank_f2(m: &BitMatrix) -> usize {
    m.rank_f2()
}

/// `log2` of the number of parities consistent with `X w = y`, `None` if
/// the system is inconsistent.
pub fn consistent_parity_log2(x: &BitMatrix, y: &[bool]) -> Result<Option<usize>> {
    Ok(x.solve(y)?.map(|s| s.log2_size()))
}

/// `2^(d - rank X)` when `X w = y` is consistent, else `0`.
pub fn consistent_parity_count(x: &BitMatrix, y: &[bool]) -> Result<u128> {
    match consistent_parity_log2(x, y)? {
        None => Ok(0),
        Some(k) if k < 128 => Ok(1u128 << k),
        Some(k) => Err(Error::InvalidParameter(format!("2^{k} consistent parities overflow u128"))),
    }
}

/// `P[rank = d - k]` for a uniform `m x d` matrix over GF(2), indexed by `k = 0..=d`.
///
/// Uses `P[rank = r] = 2^{-(m-r)(d-r)} Π_{i<r} (1 - 2^{i-m})(1 - 2^{i-d}) / (1 - 2^{i-r})`.
pub fn rank_deficiency_distribution(m: usize, d: usize) -> Result<Vec<f64>> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidParameter("m and d must be at least 1".into()));
    }
    let mut out = vec![0.0; d + 1];
    for r in 0..=m.min(d) {
        let mut log2p = -(((m - r) * (d - r)) as f64);
        let mut prod = 1.0;
        for i in 0..r {
            let a = 1.0 - (i as f64 - m as f64).exp2();
            let b = 1.0 - (i as f64 - d as f64).exp2();
            let c = 1.0 - (i as f64 - r as f64).exp2();
            prod *= a * b / c;
        }
        log2p += prod.log2();
        out[d - r] = log2p.exp2();
    }
    Ok(out)
}

/// Probability that an ERM for parities over `(F_2)^d` has zero population
/// loss from `m` uniform examples under a uniform prior on the target:
/// `Σ_k P[rank = d - k] 2^{-k}`.
pub fn parity_success_probability(m: usize, d: usize) -> Result<f64> {
    let dist = rank_deficiency_distribution(m, d)?;
    Ok(dist.iter().enumerate().map(|(k, p)| p * (-(k as f64)).exp2()).sum())
}

/// `f_w(x) = Σ w_i x_i mod 2`, mapped to `{-1, +1}` by `0 -> -1`, `1 -> +1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParityConcept {
    d: usize,
    w: Vec<u64>,
}

impl ParityConcept {
    pub fn new(d: usize, w: Vec<u64>) -> Result<ParityConcept> {
        let words = words_for(d).max(1);
        if w.len() != words {
            return Err(Error::DimensionMismatch(format!("{} words for d = {d}", w.len())));
        }
        let rem = d % 64;
        if rem != 0 && w[words - 1] >> rem != 0 {
            return Err(Error::DimensionMismatch(format!("coefficients beyond coordinate {d}")));
        }
        Ok(ParityConcept { d, w })
    }

    pub fn from_int(d: usize, w: u64) -> Result<ParityConcept> {
        ParityConcept::new(d, vec![w])
    }

    pub fn zero(d: usize) -> ParityConcept {
        ParityConcept { d, w: vec![0; words_for(d).max(1)] }
    }

    pub fn random(d: usize, rng: &mut Rng) -> ParityConcept {
        let mut w: Vec<u64> = (0..words_for(d).max(1)).map(|_| rng.next_u64()).collect();
        let rem = d % 64;
        if rem != 0 {
            *w.last_mut().unwrap() &= (1u64 << rem) - 1;
        }
        ParityConcept { d, w }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn coefficients(&self) -> &[u64] {
        &self.w
    }

    /// Value on a point given as packed coordinates.
    pub fn eval_bits(&self, x: &[u64]) -> bool {
        dot(&self.w, x)
    }

    /// Value on a point encoded as an integer (`d <= 64`).
    #[inline]
    pub fn eval(&self, x: usize) -> bool {
        (self.w[0] & x as u64).count_ones() % 2 == 1
    }

    pub fn label(&self, x: usize) -> Label {
        Label::from_bit(self.eval(x))
    }

    /// Materialized over all `2^d` points.
    pub fn to_hypothesis(&self) -> Result<Hypothesis> {
        if self.d > MAX_MATERIALIZED_BITS {
            return Err(Error::InvalidParameter(format!(
                "cannot materialize a parity over 2^{} points",
                self.d
            )));
        }
        let domain = Domain::new(1usize << self.d)?;
        Ok(Hypothesis::from_fn(domain, |x| self.label(x)))
    }
}

/// Tie-breaking preference among consistent parities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParityBias {
    /// Smallest coefficient vector, coordinate 0 compared first.
    Lexicographic,
    /// An explicit preference list, then the lexicographic tail.
    Prefix(Vec<ParityConcept>),
}

/// ERM over parity functions on `(F_2)^d`.
///
/// An inconsistent sample yields the all-zeros parity.
#[derive(Debug, Clone)]
pub struct ParityErmRule {
    d: usize,
    bias: ParityBias,
}

pub fn parity_erm_rule(d: usize, bias: ParityBias) -> Result<ParityErmRule> {
    if d == 0 || d > 63 {
        return Err(Error::InvalidParameter(format!("parity dimension must be in 1..=63, got {d}")));
    }
    if let ParityBias::Prefix(list) = &bias {
        if let Some(p) = list.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch(format!("bias concept of dimension {} for d = {d}", p.dim())));
        }
    }
    Ok(ParityErmRule { d, bias })
}

/// Design matrix and label vector of a sample over `(F_2)^d`.
pub fn design_matrix(sample: &Sample, d: usize) -> Result<(BitMatrix, Vec<bool>)> {
    let rows: Vec<u64> = sample.iter().map(|e| e.x as u64).collect();
    let x = BitMatrix::from_row_ints(&rows, d)?;
    Ok((x, sample.iter().map(|e| e.y.bit()).collect()))
}

impl ParityErmRule {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn fit_system(&self, x: &BitMatrix, y: &[bool]) -> Result<ParityConcept> {
        let Some(solutions) = x.solve(y)? else { return Ok(ParityConcept::zero(self.d)) };
        if let ParityBias::Prefix(list) = &self.bias {
            if let Some(p) = list.iter().find(|p| solutions.contains(p.coefficients())) {
                return Ok(p.clone());
            }
        }
        Ok(ParityConcept { d: self.d, w: solutions.lexicographic_min() })
    }

    pub fn fit(&self, sample: &Sample) -> Result<ParityConcept> {
        let (x, y) = design_matrix(sample, self.d)?;
        self.fit_system(&x, &y)
    }
}

impl LearningRule for ParityErmRule {
    fn name(&self) -> String {
        match self.bias {
            ParityBias::Lexicographic => "parity-erm".into(),
            ParityBias::Prefix(_) => "parity-erm-biased".into(),
        }
    }

    fn domain(&self) -> Domain {
        Domain::new(1usize << self.d).expect("d >= 1")
    }

    fn accepts(&self, _m: usize) -> bool {
        self.d <= MAX_MATERIALIZED_BITS
    }

    fn apply(&self, sample: &Sample) -> Hypothesis {
        self.fit(sample)
            .and_then(|p| p.to_hypothesis())
            .expect("parity rule applied to a valid sample over a materializable domain")
    }
}

/// ERM whose choice is uniform among consistent parities: lexicographic
/// tie-breaking after a random invertible affine relabeling of the
/// coefficient space, drawn from `rng` per call.
pub fn fit_parity_unbiased(x: &BitMatrix, y: &[bool], rng: &mut Rng) -> Result<ParityConcept> {
    let d = x.cols();
    let Some(solutions) = x.solve(y)? else { return Ok(ParityConcept::zero(d)) };
    let map = BitMatrix::random_invertible(d, rng);
    let inverse = map.inverse().expect("invertible by construction");
    let shift = ParityConcept::random(d, rng).w;
    let mut chosen = solutions.mapped(&map, &shift).lexicographic_min();
    xor_into(&mut chosen, &shift);
    Ok(ParityConcept { d, w: inverse.mul_vec(&chosen) })
}
