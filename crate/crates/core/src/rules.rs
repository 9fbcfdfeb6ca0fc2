//! Concrete learning rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Domain, Hypothesis, Label, LearningRule, Sample};
use crate::rng;

/// Preference order among the members of a hypothesis list: a permutation of
/// their indices, earliest preferred.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasOrder {
    order: Vec<usize>,
}

impl BiasOrder {
    pub fn new(order: Vec<usize>) -> Result<BiasOrder> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidParameter(format!("bias order {order:?} is not a permutation")));
            }
        }
        Ok(BiasOrder { order })
    }

    pub fn identity(n: usize) -> BiasOrder {
        BiasOrder { order: (0..n).collect() }
    }

    pub fn reversed(n: usize) -> BiasOrder {
        BiasOrder { order: (0..n).rev().collect() }
    }

    pub fn shuffled(n: usize, seed: u64) -> BiasOrder {
        let mut order: Vec<usize> = (0..n).collect();
        rng::shuffle(&mut rng::stream(seed), &mut order);
        BiasOrder { order }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// `A(S) = h0` for every sample.
#[derive(Debug, Clone)]
pub struct ConstantRule {
    h0: Hypothesis,
}

pub fn constant_rule(h0: Hypothesis) -> ConstantRule {
    ConstantRule { h0 }
}

impl LearningRule for ConstantRule {
    fn name(&self) -> String {
        "constant".into()
    }
    fn domain(&self) -> Domain {
        self.h0.domain()
    }
    fn apply(&self, _sample: &Sample) -> Hypothesis {
        self.h0.clone()
    }
}

/// Outputs the unique observed label on seen points and `-1` on unseen points
/// or points observed with both labels.
#[derive(Debug, Clone)]
pub struct MemorizationRule {
    domain: Domain,
}

pub fn memorization_rule(domain: Domain) -> MemorizationRule {
    MemorizationRule { domain }
}

impl LearningRule for MemorizationRule {
    fn name(&self) -> String {
        "memorization".into()
    }
    fn domain(&self) -> Domain {
        self.domain
    }
    fn apply(&self, sample: &Sample) -> Hypothesis {
        const POS: u8 = 1;
        const NEG: u8 = 2;
        let mut seen = vec![0u8; self.domain.size()];
        for e in sample {
            seen[e.x] |= if e.y.bit() { POS } else { NEG };
        }
        Hypothesis::from_fn(self.domain, |x| Label::from_bit(seen[x] == POS))
    }
}

/// A fixed uniformly random function of the input sample.
///
/// Instead of materializing a table over all samples, the output for `S` is
/// the hypothesis generated by the stream seeded with the canonical hash of
/// `(seed, S)`. Distinct samples get independent-looking hypotheses; the same
/// sample always gets the same one.
#[derive(Debug, Clone)]
pub struct RandomRule {
    domain: Domain,
    seed: u64,
}

pub fn random_rule(domain: Domain, seed: u64) -> RandomRule {
    RandomRule { domain, seed }
}

impl LearningRule for RandomRule {
    fn name(&self) -> String {
        format!("random[{}]", self.seed)
    }
    fn domain(&self) -> Domain {
        self.domain
    }
    fn apply(&self, sample: &Sample) -> Hypothesis {
        Hypothesis::random(self.domain, &mut rng::stream(sample.canonical_hash(self.seed)))
    }
}

/// An `F`-interpolating rule: the bias-earliest member of `F` consistent with
/// the sample, or `fallback` when no member is.
#[derive(Debug, Clone)]
pub struct InterpolatingRule {
    preferred: Vec<Hypothesis>,
    fallback: Hypothesis,
}

/// `fallback = None` uses the bias-earliest member of `F`.
pub fn interpolating_rule(
    family: &[Hypothesis],
    bias: &BiasOrder,
    fallback: Option<Hypothesis>,
) -> Result<InterpolatingRule> {
    if family.is_empty() {
        return Err(Error::InvalidParameter("interpolating rule needs a nonempty class".into()));
    }
    if bias.len() != family.len() {
        return Err(Error::InvalidParameter(format!(
            "bias order has {} entries for a class of {}",
            bias.len(),
            family.len()
        )));
    }
    let domain = family[0].domain();
    if let Some(h) = family.iter().chain(fallback.as_ref()).find(|h| h.domain() != domain) {
        return Err(Error::DomainMismatch { expected: domain.size(), found: h.domain().size() });
    }
    let preferred: Vec<Hypothesis> = bias.as_slice().iter().map(|&i| family[i].clone()).collect();
    let fallback = fallback.unwrap_or_else(|| preferred[0].clone());
    Ok(InterpolatingRule { preferred, fallback })
}

impl InterpolatingRule {
    /// Members of `F` in preference order.
    pub fn preferred(&self) -> &[Hypothesis] {
        &self.preferred
    }

    /// Position in preference order of the selected member, `None` when `F_S` is empty.
    pub fn select(&self, sample: &Sample) -> Option<usize> {
        self.preferred.iter().position(|h| h.is_consistent_with(sample))
    }
}

impl LearningRule for InterpolatingRule {
    fn name(&self) -> String {
        "interpolating".into()
    }
    fn domain(&self) -> Domain {
        self.fallback.domain()
    }
    fn apply(&self, sample: &Sample) -> Hypothesis {
        match self.select(sample) {
            Some(i) => self.preferred[i].clone(),
            None => self.fallback.clone(),
        }
    }
}

/// `h(x) = -1` exactly on the training points, `+1` elsewhere.
#[derive(Debug, Clone)]
pub struct AdversarialSupportRule {
    domain: Domain,
}

pub fn adversarial_support_rule(domain: Domain) -> AdversarialSupportRule {
    AdversarialSupportRule { domain }
}

impl LearningRule for AdversarialSupportRule {
    fn name(&self) -> String {
        "adversarial-support".into()
    }
    fn domain(&self) -> Domain {
        self.domain
    }
    fn apply(&self, sample: &Sample) -> Hypothesis {
        let mut h = Hypothesis::constant(self.domain, Label::Pos);
        for e in sample {
            h.set(e.x, Label::Neg);
        }
        h
    }
}

/// Outputs one constant for full-size samples and another for samples that
/// are `k` shorter; accepts only those two sizes.
#[derive(Debug, Clone)]
pub struct SizeDependentRule {
    full_size: usize,
    short_size: usize,
    on_full: Hypothesis,
    on_short: Hypothesis,
}

pub fn size_dependent_rule(
    full_size: usize,
    k: usize,
    on_full: Hypothesis,
    on_short: Hypothesis,
) -> Result<SizeDependentRule> {
    if k == 0 || k >= full_size {
        return Err(Error::InvalidParameter(format!("need 0 < k < m, got k = {k}, m = {full_size}")));
    }
    if on_full.domain() != on_short.domain() {
        return Err(Error::DomainMismatch { expected: on_full.domain().size(), found: on_short.domain().size() });
    }
    Ok(SizeDependentRule { full_size, short_size: full_size - k, on_full, on_short })
}

impl LearningRule for SizeDependentRule {
    fn name(&self) -> String {
        "size-dependent".into()
    }
    fn domain(&self) -> Domain {
        self.on_full.domain()
    }
    fn accepts(&self, m: usize) -> bool {
        m == self.full_size || m == self.short_size
    }
    fn apply(&self, sample: &Sample) -> Hypothesis {
        if sample.len() == self.full_size {
            self.on_full.clone()
        } else {
            self.on_short.clone()
        }
    }
}
