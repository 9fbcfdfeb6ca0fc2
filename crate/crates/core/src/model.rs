//! Finite domains, hypotheses, samples, labeled distributions and the two
//! loss functionals.
//!
//! Labels live in `{-1, +1}` but are stored one bit per point (`1` is `+1`).
//! All distributions have finite support; weights are `f64` and must sum to
//! one within `1e-12`.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng, WordHasher};

/// Tolerance on the total mass of a [`FiniteDistribution`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    #[inline]
    pub fn from_bit(bit: bool) -> Label {
        if bit {
            Label::Pos
        } else {
            Label::Neg
        }
    }

    #[inline]
    pub fn bit(self) -> bool {
        self == Label::Pos
    }

    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Label::Neg => -1,
            Label::Pos => 1,
        }
    }

    pub fn from_sign(sign: i64) -> Result<Label> {
        match sign {
            -1 => Ok(Label::Neg),
            1 => Ok(Label::Pos),
            other => Err(Error::InvalidParameter(format!("label must be -1 or +1, got {other}"))),
        }
    }

    #[inline]
    pub fn flipped(self) -> Label {
        match self {
            Label::Neg => Label::Pos,
            Label::Pos => Label::Neg,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.sign())
    }
}

/// A finite domain `{0, .., size - 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Domain {
    size: usize,
}

impl Domain {
    pub fn new(size: usize) -> Result<Domain> {
        if size == 0 {
            return Err(Error::InvalidParameter("domain size must be at least 1".into()));
        }
        Ok(Domain { size })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn check(&self, x: usize) -> Result<()> {
        if x < self.size {
            Ok(())
        } else {
            Err(Error::DomainMismatch { expected: self.size, found: x + 1 })
        }
    }
}

#[inline]
pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// A total function from a finite domain to `{-1, +1}`, packed 64 points per word.
///
/// Bits past `domain.size()` in the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Hypothesis {
    domain: Domain,
    words: Vec<u64>,
}

impl fmt::Debug for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shown: String = (0..self.domain.size.min(64))
            .map(|x| if self.bit(x) { '+' } else { '-' })
            .collect();
        let ellipsis = if self.domain.size > 64 { "..." } else { "" };
        write!(f, "Hypothesis[{}]({shown}{ellipsis})", self.domain.size)
    }
}

impl Hypothesis {
    pub fn constant(domain: Domain, label: Label) -> Hypothesis {
        let fill = if label.bit() { u64::MAX } else { 0 };
        let mut h = Hypothesis { domain, words: vec![fill; words_for(domain.size)] };
        h.clear_tail();
        h
    }

    pub fn from_fn(domain: Domain, mut f: impl FnMut(usize) -> Label) -> Hypothesis {
        let mut h = Hypothesis::constant(domain, Label::Neg);
        for x in 0..domain.size {
            if f(x).bit() {
                h.words[x / 64] |= 1 << (x % 64);
            }
        }
        h
    }

    pub fn from_labels(labels: &[Label]) -> Result<Hypothesis> {
        let domain = Domain::new(labels.len())?;
        Ok(Hypothesis::from_fn(domain, |x| labels[x]))
    }

    /// Builds a hypothesis from packed words; tail bits are cleared.
    pub fn from_words(domain: Domain, mut words: Vec<u64>) -> Result<Hypothesis> {
        if words.len() != words_for(domain.size) {
            return Err(Error::DimensionMismatch(format!(
                "{} words for a domain of {} points",
                words.len(),
                domain.size
            )));
        }
        words.shrink_to_fit();
        let mut h = Hypothesis { domain, words };
        h.clear_tail();
        Ok(h)
    }

    /// Uniformly random labels, one stream word per 64 points.
    pub fn random(domain: Domain, rng: &mut Rng) -> Hypothesis {
        let words = (0..words_for(domain.size)).map(|_| rng.next_u64()).collect();
        let mut h = Hypothesis { domain, words };
        h.clear_tail();
        h
    }

    fn clear_tail(&mut self) {
        let rem = self.domain.size % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    #[inline]
    pub fn domain(&self) -> Domain {
        self.domain
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn bit(&self, x: usize) -> bool {
        (self.words[x / 64] >> (x % 64)) & 1 == 1
    }

    #[inline]
    pub fn label(&self, x: usize) -> Label {
        Label::from_bit(self.bit(x))
    }

    pub fn set(&mut self, x: usize, label: Label) {
        let mask = 1u64 << (x % 64);
        if label.bit() {
            self.words[x / 64] |= mask;
        } else {
            self.words[x / 64] &= !mask;
        }
    }

    pub fn negated(&self) -> Hypothesis {
        let mut h = Hypothesis { domain: self.domain, words: self.words.iter().map(|w| !w).collect() };
        h.clear_tail();
        h
    }

    fn check_same_domain(&self, other: &Hypothesis) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::DomainMismatch { expected: self.domain.size, found: other.domain.size });
        }
        Ok(())
    }

    /// Number of points where the two hypotheses differ.
    pub fn hamming(&self, other: &Hypothesis) -> Result<usize> {
        self.check_same_domain(other)?;
        Ok(self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones() as usize).sum())
    }

    /// `E_{x ~ U(X)}[h(x) g(x)] = 1 - 2 * hamming / |X|`.
    pub fn correlation(&self, other: &Hypothesis) -> Result<f64> {
        let ham = self.hamming(other)?;
        Ok(1.0 - 2.0 * ham as f64 / self.domain.size as f64)
    }

    pub fn count_positive(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_consistent_with(&self, sample: &Sample) -> bool {
        sample.iter().all(|e| e.x < self.domain.size && self.label(e.x) == e.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: usize,
    pub y: Label,
}

impl LabeledExample {
    pub fn new(x: usize, y: Label) -> Self {
        LabeledExample { x, y }
    }
}

/// An ordered sequence of labeled examples. Order and duplicates are kept.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    examples: Vec<LabeledExample>,
}

impl Sample {
    pub fn new(examples: Vec<LabeledExample>) -> Sample {
        Sample { examples }
    }

    pub fn labeled_by(points: &[usize], h: &Hypothesis) -> Sample {
        Sample::new(points.iter().map(|&x| LabeledExample::new(x, h.label(x))).collect())
    }

    pub fn validate(&self, domain: Domain) -> Result<()> {
        self.examples.iter().try_for_each(|e| domain.check(e.x))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledExample> {
        self.examples.iter()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn push(&mut self, example: LabeledExample) {
        self.examples.push(example);
    }

    pub fn pop(&mut self) -> Option<LabeledExample> {
        self.examples.pop()
    }

    /// `self ∘ other`.
    pub fn concat(&self, other: &Sample) -> Sample {
        let mut examples = Vec::with_capacity(self.len() + other.len());
        examples.extend_from_slice(&self.examples);
        examples.extend_from_slice(&other.examples);
        Sample { examples }
    }

    /// Splits positionally into the first `at` examples and the rest.
    pub fn split_at(&self, at: usize) -> (Sample, Sample) {
        let (a, b) = self.examples.split_at(at.min(self.len()));
        (Sample::new(a.to_vec()), Sample::new(b.to_vec()))
    }

    /// Keeps the examples whose positions are not listed in `removed`.
    pub fn without_positions(&self, removed: &[usize]) -> Sample {
        let mut drop = vec![false; self.len()];
        for &i in removed {
            if i < drop.len() {
                drop[i] = true;
            }
        }
        Sample::new(self.examples.iter().zip(drop).filter(|(_, d)| !d).map(|(e, _)| *e).collect())
    }

    /// Number of distinct points `x` in the sample.
    pub fn distinct_points(&self) -> usize {
        let mut xs: Vec<usize> = self.examples.iter().map(|e| e.x).collect();
        xs.sort_unstable();
        xs.dedup();
        xs.len()
    }

    /// Hash of the canonical encoding: the length, then `(x, y)` per example
    /// in order, each fed as 64-bit words (`y` as `0`/`1`).
    pub fn canonical_hash(&self, seed: u64) -> u64 {
        let mut hasher = WordHasher::new(seed);
        hasher.write(self.len() as u64);
        for e in &self.examples {
            hasher.write(e.x as u64);
            hasher.write(e.y.bit() as u64);
        }
        hasher.finish()
    }
}

impl<'a> IntoIterator for &'a Sample {
    type Item = &'a LabeledExample;
    type IntoIter = std::slice::Iter<'a, LabeledExample>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

impl FromIterator<LabeledExample> for Sample {
    fn from_iter<I: IntoIterator<Item = LabeledExample>>(iter: I) -> Self {
        Sample::new(iter.into_iter().collect())
    }
}

/// A finite-support probability measure over `X × {-1, +1}`.
///
/// Zero-weight atoms are dropped at construction, so every stored atom has
/// positive mass.
#[derive(Debug, Clone)]
pub struct FiniteDistribution {
    domain: Domain,
    atoms: Vec<LabeledExample>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    index: OnceLock<HashMap<LabeledExample, usize>>,
}

impl PartialEq for FiniteDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain && self.atoms == other.atoms && self.weights == other.weights
    }
}

impl FiniteDistribution {
    pub fn new(domain: Domain, support: Vec<(LabeledExample, f64)>) -> Result<FiniteDistribution> {
        let mut total = 0.0;
        let mut seen = std::collections::HashSet::with_capacity(support.len());
        for (e, w) in &support {
            domain.check(e.x)?;
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidDistribution(format!("weight {w} at x = {}", e.x)));
            }
            if !seen.insert(*e) {
                return Err(Error::InvalidDistribution(format!("duplicate atom ({}, {})", e.x, e.y)));
            }
            total += w;
        }
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        let (atoms, weights): (Vec<_>, Vec<_>) = support.into_iter().filter(|(_, w)| *w > 0.0).unzip();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(FiniteDistribution { domain, atoms, weights, cumulative, index: OnceLock::new() })
    }

    /// `D_f = U{(x, f(x)) : x ∈ X}`.
    pub fn realizable(f: &Hypothesis) -> FiniteDistribution {
        let n = f.domain().size();
        let w = 1.0 / n as f64;
        let support = (0..n).map(|x| (LabeledExample::new(x, f.label(x)), w)).collect();
        FiniteDistribution::new(f.domain(), support).expect("uniform weights are normalized")
    }

    /// Uniform marginal on `X` with `P[y = +1 | x] = positive_rate(x)`.
    pub fn uniform_marginal(domain: Domain, positive_rate: impl Fn(usize) -> f64) -> Result<FiniteDistribution> {
        let w = 1.0 / domain.size() as f64;
        let mut support = Vec::with_capacity(2 * domain.size());
        for x in 0..domain.size() {
            let q = positive_rate(x);
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidDistribution(format!("P[y=+1 | x={x}] = {q}")));
            }
            support.push((LabeledExample::new(x, Label::Pos), w * q));
            support.push((LabeledExample::new(x, Label::Neg), w * (1.0 - q)));
        }
        FiniteDistribution::new(domain, support)
    }

    /// Uniform over the distinct points of `points`, all carrying `label`.
    pub fn uniform_over(domain: Domain, points: &[usize], label: Label) -> Result<FiniteDistribution> {
        let mut xs = points.to_vec();
        xs.sort_unstable();
        xs.dedup();
        if xs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let w = 1.0 / xs.len() as f64;
        FiniteDistribution::new(domain, xs.into_iter().map(|x| (LabeledExample::new(x, label), w)).collect())
    }

    pub fn point_mass(domain: Domain, example: LabeledExample) -> Result<FiniteDistribution> {
        FiniteDistribution::new(domain, vec![(example, 1.0)])
    }

    /// The empirical measure of a nonempty sample.
    pub fn empirical(domain: Domain, sample: &Sample) -> Result<FiniteDistribution> {
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut counts: Vec<(LabeledExample, usize)> = Vec::new();
        let mut sorted: Vec<LabeledExample> = sample.examples().to_vec();
        sorted.sort_unstable();
        for e in sorted {
            match counts.last_mut() {
                Some((last, c)) if *last == e => *c += 1,
                _ => counts.push((e, 1)),
            }
        }
        let m = sample.len() as f64;
        FiniteDistribution::new(domain, counts.into_iter().map(|(e, c)| (e, c as f64 / m)).collect())
    }

    #[inline]
    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn support_size(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (LabeledExample, f64)> + '_ {
        self.atoms.iter().copied().zip(self.weights.iter().copied())
    }

    /// Mass of a single labeled example (zero if outside the support).
    pub fn weight(&self, example: &LabeledExample) -> f64 {
        let index = self
            .index
            .get_or_init(|| self.atoms.iter().enumerate().map(|(i, e)| (*e, i)).collect());
        index.get(example).map_or(0.0, |&i| self.weights[i])
    }

    /// Marginal mass of every point of the domain.
    pub fn marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.domain.size()];
        for (e, w) in self.atoms() {
            out[e.x] += w;
        }
        out
    }

    /// Marginal mass of a set of points (duplicates counted once).
    pub fn marginal_mass(&self, points: &[usize]) -> f64 {
        let mut xs = points.to_vec();
        xs.sort_unstable();
        xs.dedup();
        self.atoms().filter(|(e, _)| xs.binary_search(&e.x).is_ok()).map(|(_, w)| w).sum()
    }

    /// Inverse-CDF draw from a uniform `u ∈ [0, 1)`.
    #[inline]
    pub fn quantile(&self, u: f64) -> LabeledExample {
        let total = *self.cumulative.last().expect("nonempty support");
        let target = u * total;
        let i = self.cumulative.partition_point(|&c| c <= target);
        self.atoms[i.min(self.atoms.len() - 1)]
    }

    /// `m` i.i.d. draws; draw `i` uses the `i`-th output of the stream seeded with `seed`.
    pub fn draw_sample(&self, m: usize, seed: u64) -> Sample {
        (0..m as u64).map(|i| self.quantile(rng::to_unit(rng::counter_u64(seed, i)))).collect()
    }
}

/// Draws `S ~ D^m` with the counter-based generator.
pub fn draw_sample(dist: &FiniteDistribution, m: usize, seed: u64) -> Result<Sample> {
    if m == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    Ok(dist.draw_sample(m, seed))
}

/// A finite collection of distributions over a common domain, with the
/// uniform prior implicit.
#[derive(Debug, Clone)]
pub struct DistributionFamily {
    members: Vec<Arc<FiniteDistribution>>,
}

impl DistributionFamily {
    pub fn new(members: Vec<FiniteDistribution>) -> Result<DistributionFamily> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidParameter("distribution family must be nonempty".into()))?;
        let domain = first.domain();
        if let Some(bad) = members.iter().find(|d| d.domain() != domain) {
            return Err(Error::DomainMismatch { expected: domain.size(), found: bad.domain().size() });
        }
        Ok(DistributionFamily { members: members.into_iter().map(Arc::new).collect() })
    }

    /// `{D_f : f ∈ F}`.
    pub fn realizable(functions: &[Hypothesis]) -> Result<DistributionFamily> {
        DistributionFamily::new(functions.iter().map(FiniteDistribution::realizable).collect())
    }

    pub fn singleton(dist: FiniteDistribution) -> DistributionFamily {
        DistributionFamily { members: vec![Arc::new(dist)] }
    }

    pub fn members(&self) -> &[Arc<FiniteDistribution>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.members[0].domain()
    }
}

/// A deterministic map from samples to hypotheses.
pub trait LearningRule: Send + Sync {
    fn name(&self) -> String;

    /// Domain of the hypotheses produced.
    fn domain(&self) -> Domain;

    fn accepts(&self, m: usize) -> bool {
        let _ = m;
        true
    }

    /// Must be a pure function of the sample.
    fn apply(&self, sample: &Sample) -> Hypothesis;

    fn try_apply(&self, sample: &Sample) -> Result<Hypothesis> {
        if !self.accepts(sample.len()) {
            return Err(Error::RejectedSampleSize { rule: self.name(), size: sample.len() });
        }
        sample.validate(self.domain())?;
        Ok(self.apply(sample))
    }
}

impl<R: LearningRule + ?Sized> LearningRule for Box<R> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn domain(&self) -> Domain {
        (**self).domain()
    }
    fn accepts(&self, m: usize) -> bool {
        (**self).accepts(m)
    }
    fn apply(&self, sample: &Sample) -> Hypothesis {
        (**self).apply(sample)
    }
}

impl<R: LearningRule + ?Sized> LearningRule for Arc<R> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn domain(&self) -> Domain {
        (**self).domain()
    }
    fn accepts(&self, m: usize) -> bool {
        (**self).accepts(m)
    }
    fn apply(&self, sample: &Sample) -> Hypothesis {
        (**self).apply(sample)
    }
}

/// `(1/m) Σ 1[h(x_i) ≠ y_i]`.
pub fn empirical_loss(h: &Hypothesis, sample: &Sample) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut errors = 0usize;
    for e in sample {
        h.domain().check(e.x)?;
        errors += (h.label(e.x) != e.y) as usize;
    }
    Ok(errors as f64 / sample.len() as f64)
}

/// `P_{(x,y) ~ D}[h(x) ≠ y]`, summed exactly over the support.
pub fn population_loss(h: &Hypothesis, dist: &FiniteDistribution) -> Result<f64> {
    if h.domain().size() < dist.domain().size() {
        return Err(Error::DomainMismatch { expected: dist.domain().size(), found: h.domain().size() });
    }
    Ok(dist.atoms().filter(|(e, _)| h.label(e.x) != e.y).map(|(_, w)| w).sum::<f64>().min(1.0))
}

/// `P_{x ~ P_X}[h1(x) ≠ h2(x)]` under the marginal of `dist`.
pub fn disagreement(h1: &Hypothesis, h2: &Hypothesis, dist: &FiniteDistribution) -> Result<f64> {
    h1.check_same_domain(h2)?;
    if h1.domain().size() < dist.domain().size() {
        return Err(Error::DomainMismatch { expected: dist.domain().size(), found: h1.domain().size() });
    }
    Ok(dist.atoms().filter(|(e, _)| h1.bit(e.x) != h2.bit(e.x)).map(|(_, w)| w).sum::<f64>().min(1.0))
}
