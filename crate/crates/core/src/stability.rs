//! Hypothesis and loss stability as measurable statistics, the split
//! estimator, and the remove-`k` measurement protocol.
//!
//! Two sampling modes are supported. `Definition` draws `S1 ~ D^{m-k}` and
//! `S2 ~ D^k` and compares `A(S1)` with `A(S1 ∘ S2)`. `Protocol` draws
//! `S ~ D^m`, removes `k` uniformly chosen positions to get `S'`, and compares
//! `A(S')` with `A(S)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimability::Estimator;
use crate::model::{disagreement, empirical_loss, population_loss, FiniteDistribution, Hypothesis, LearningRule, Sample};
use crate::rng::{derive_seed, shuffle, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityKind {
    Hypothesis,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityMode {
    Definition,
    Protocol,
}

/// `β(α)`: fraction of trials whose statistic exceeds `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPoint {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kind: StabilityKind,
    pub mode: StabilityMode,
    pub m: usize,
    pub k: usize,
    pub trials: u64,
    pub seed: u64,
    pub statistics: Vec<f64>,
    pub curve: Vec<BetaPoint>,
}

impl StabilityReport {
    pub fn beta_at(&self, alpha: f64) -> f64 {
        self.statistics.iter().filter(|&&s| s > alpha).count() as f64 / self.statistics.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.statistics.iter().sum::<f64>() / self.statistics.len() as f64
    }

    /// Smallest statistic value `a` with `β(a) <= 1 - q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut sorted = self.statistics.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[rank - 1]
    }

    pub fn max(&self) -> f64 {
        self.statistics.iter().copied().fold(0.0, f64::max)
    }
}

fn check_sizes(rule: &dyn LearningRule, m: usize, k: usize, trials: u64) -> Result<()> {
    if k == 0 || k >= m {
        return Err(Error::InvalidParameter(format!("need 1 <= k < m, got k = {k}, m = {m}")));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    for size in [m - k, m] {
        if !rule.accepts(size) {
            return Err(Error::RejectedSampleSize { rule: rule.name(), size });
        }
    }
    Ok(())
}

/// Uniformly chosen `k` positions out of `m`.
pub fn removal_positions(m: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut positions: Vec<usize> = (0..m).collect();
    shuffle(&mut stream(seed), &mut positions);
    positions.truncate(k);
    positions.sort_unstable();
    positions
}

/// The pair `(reduced, full)` of training samples for one trial.
pub fn stability_pair(dist: &FiniteDistribution, m: usize, k: usize, mode: StabilityMode, seed: u64) -> (Sample, Sample) {
    match mode {
        StabilityMode::Definition => {
            let s1 = dist.draw_sample(m - k, derive_seed(seed, 0));
            let s2 = dist.draw_sample(k, derive_seed(seed, 1));
            let full = s1.concat(&s2);
            (s1, full)
        }
        StabilityMode::Protocol => {
            let full = dist.draw_sample(m, derive_seed(seed, 0));
            let reduced = full.without_positions(&removal_positions(m, k, derive_seed(seed, 2)));
            (reduced, full)
        }
    }
}

/// Per trial: `(d_{D_X}(A(S'), A(S)), |L_D(A(S')) - L_D(A(S))|)` on the same draws.
pub fn stability_statistics(
    rule: &dyn LearningRule,
    dist: &FiniteDistribution,
    m: usize,
    k: usize,
    mode: StabilityMode,
    trials: u64,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    check_sizes(rule, m, k, trials)?;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let (reduced, full) = stability_pair(dist, m, k, mode, derive_seed(seed, t));
            let h_reduced = rule.try_apply(&reduced)?;
            let h_full = rule.try_apply(&full)?;
            let hyp = disagreement(&h_reduced, &h_full, dist)?;
            let loss = (population_loss(&h_reduced, dist)? - population_loss(&h_full, dist)?).abs();
            Ok((hyp, loss))
        })
        .collect()
}

fn report(
    kind: StabilityKind,
    mode: StabilityMode,
    m: usize,
    k: usize,
    trials: u64,
    seed: u64,
    statistics: Vec<f64>,
    alphas: &[f64],
) -> StabilityReport {
    let mut r = StabilityReport { kind, mode, m, k, trials, seed, statistics, curve: vec![] };
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    r.curve = sorted.into_iter().map(|alpha| BetaPoint { alpha, beta: r.beta_at(alpha) }).collect();
    r
}

/// Statistic: `d_{D_X}(A(S'), A(S))`.
#[allow(clippy::too_many_arguments)]
pub fn measure_hypothesis_stability(
    rule: &dyn LearningRule,
    dist: &FiniteDistribution,
    m: usize,
    k: usize,
    alphas: &[f64],
    trials: u64,
    seed: u64,
    mode: StabilityMode,
) -> Result<StabilityReport> {
    let stats = stability_statistics(rule, dist, m, k, mode, trials, seed)?;
    Ok(report(StabilityKind::Hypothesis, mode, m, k, trials, seed, stats.into_iter().map(|s| s.0).collect(), alphas))
}

/// Statistic: `|L_D(A(S')) - L_D(A(S))|`.
#[allow(clippy::too_many_arguments)]
pub fn measure_loss_stability(
    rule: &dyn LearningRule,
    dist: &FiniteDistribution,
    m: usize,
    k: usize,
    alphas: &[f64],
    trials: u64,
    seed: u64,
    mode: StabilityMode,
) -> Result<StabilityReport> {
    let stats = stability_statistics(rule, dist, m, k, mode, trials, seed)?;
    Ok(report(StabilityKind::Loss, mode, m, k, trials, seed, stats.into_iter().map(|s| s.1).collect(), alphas))
}

/// `ê(S) = L_{S2}(A(S1))` with `S1` the first `m - k` examples and `S2` the last `k`.
#[derive(Clone)]
pub struct SplitEstimator {
    rule: Arc<dyn LearningRule>,
    k: usize,
}

pub fn split_estimator(rule: Arc<dyn LearningRule>, k: usize) -> Result<SplitEstimator> {
    if k == 0 {
        return Err(Error::InvalidParameter("holdout size k must be at least 1".into()));
    }
    Ok(SplitEstimator { rule, k })
}

impl SplitEstimator {
    pub fn k(&self) -> usize {
        self.k
    }
}

impl Estimator for SplitEstimator {
    fn name(&self) -> String {
        format!("split(k={})", self.k)
    }

    fn raw_estimate(&self, sample: &Sample) -> Result<f64> {
        if self.k >= sample.len() {
            return Err(Error::InvalidParameter(format!("need k < m, got k = {}, m = {}", self.k, sample.len())));
        }
        let (s1, s2) = sample.split_at(sample.len() - self.k);
        empirical_loss(&self.rule.try_apply(&s1)?, &s2)
    }
}

/// `2 exp(-2 k α0^2)`.
pub fn hoeffding_beta(k: usize, alpha0: f64) -> f64 {
    2.0 * (-2.0 * k as f64 * alpha0 * alpha0).exp()
}

/// Smallest `k` with `2 exp(-2 k α0^2) <= β0`, i.e. `⌈ln(2/β0) / (2 α0^2)⌉`.
pub fn hoeffding_holdout_size(alpha0: f64, beta0: f64) -> usize {
    ((2.0 / beta0).ln() / (2.0 * alpha0 * alpha0)).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    /// Exact population quantities over the finite support.
    Exact,
    /// A labeled validation sample of this size; agreement uses only its points.
    Sampled(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTrial {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub agreement: f64,
    /// `test accuracy + (1 - agreement)`, capped at 1: the accuracy the
    /// reduced-sample model certifies for the full one.
    pub estimated_accuracy: f64,
    /// `1 - (test error + (1 - agreement))`, floored at 0.
    pub estimated_accuracy_lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub m: usize,
    pub k: usize,
    pub trials: u64,
    pub seed: u64,
    pub validation: Validation,
    pub rows: Vec<ProtocolTrial>,
}

impl ProtocolReport {
    fn mean(&self, f: impl Fn(&ProtocolTrial) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_train_accuracy(&self) -> f64 {
        self.mean(|r| r.train_accuracy)
    }

    pub fn mean_test_accuracy(&self) -> f64 {
        self.mean(|r| r.test_accuracy)
    }

    pub fn mean_agreement(&self) -> f64 {
        self.mean(|r| r.agreement)
    }

    pub fn mean_estimated_accuracy(&self) -> f64 {
        self.mean(|r| r.estimated_accuracy)
    }

    /// Fraction of trials with agreement at least the test accuracy.
    pub fn agreement_dominates_fraction(&self) -> f64 {
        self.mean(|r| (r.agreement >= r.test_accuracy) as u8 as f64)
    }
}

fn agreement_on(h1: &Hypothesis, h2: &Hypothesis, points: &Sample) -> f64 {
    points.iter().filter(|e| h1.bit(e.x) == h2.bit(e.x)).count() as f64 / points.len() as f64
}

/// Trains on `S ~ D^m` and on `S'` (with `k` random positions removed), then
/// evaluates the full-sample model and the agreement between the two.
pub fn stability_protocol_report(
    rule: &dyn LearningRule,
    dist: &FiniteDistribution,
    m: usize,
    k: usize,
    validation: Validation,
    trials: u64,
    seed: u64,
) -> Result<ProtocolReport> {
    check_sizes(rule, m, k, trials)?;
    if validation == Validation::Sampled(0) {
        return Err(Error::InvalidParameter("validation sample must be nonempty".into()));
    }
    let rows = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = derive_seed(seed, t);
            let (reduced, full) = stability_pair(dist, m, k, StabilityMode::Protocol, trial_seed);
            let h = rule.try_apply(&full)?;
            let h_reduced = rule.try_apply(&reduced)?;
            let (test_error, agreement) = match validation {
                Validation::Exact => (population_loss(&h, dist)?, 1.0 - disagreement(&h, &h_reduced, dist)?),
                Validation::Sampled(size) => {
                    let v = dist.draw_sample(size, derive_seed(trial_seed, 3));
                    (empirical_loss(&h, &v)?, agreement_on(&h, &h_reduced, &v))
                }
            };
            let test_accuracy = 1.0 - test_error;
            Ok(ProtocolTrial {
                train_accuracy: 1.0 - empirical_loss(&h, &full)?,
                test_accuracy,
                agreement,
                estimated_accuracy: (test_accuracy + (1.0 - agreement)).min(1.0),
                estimated_accuracy_lower: (test_accuracy - (1.0 - agreement)).max(0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolReport { m, k, trials, seed, validation, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf2::{parity_erm_rule, ParityBias, ParityConcept};
    use crate::model::{Domain, Label, LabeledExample};
    use crate::rules::{constant_rule, memorization_rule, random_rule, size_dependent_rule};
    use proptest::prelude::*;

    fn dom(n: usize) -> Domain {
        Domain::new(n).unwrap()
    }

    fn labeled_uniform(n: usize, seed: u64) -> FiniteDistribution {
        let f = Hypothesis::random(dom(n), &mut stream(seed));
        FiniteDistribution::realizable(&f)
    }

    #[test]
    fn constant_rule_is_perfectly_stable() {
        let d = labeled_uniform(50, 1);
        let rule = constant_rule(Hypothesis::constant(dom(50), Label::Pos));
        let alphas = [0.0, 0.1];
        for mode in [StabilityMode::Definition, StabilityMode::Protocol] {
            let h = measure_hypothesis_stability(&rule, &d, 20, 5, &alphas, 50, 3, mode).unwrap();
            let l = measure_loss_stability(&rule, &d, 20, 5, &alphas, 50, 3, mode).unwrap();
            assert!(h.statistics.iter().chain(&l.statistics).all(|&s| s == 0.0));
            assert!(h.curve.iter().all(|p| p.beta == 0.0));
        }
        assert!(measure_hypothesis_stability(&rule, &d, 5, 5, &alphas, 10, 0, StabilityMode::Definition).is_err());
    }

    #[test]
    fn memorization_changes_at_most_k_points() {
        let d = FiniteDistribution::uniform_marginal(dom(1000), |x| if x % 7 == 0 { 0.9 } else { 0.2 }).unwrap();
        let rule = memorization_rule(dom(1000));
        let r = measure_hypothesis_stability(&rule, &d, 100, 10, &[0.01], 300, 5, StabilityMode::Definition).unwrap();
        assert!(r.statistics.iter().all(|&s| s <= 0.01 + 1e-12));
        assert_eq!(r.beta_at(0.01), 0.0);
    }

    #[test]
    fn random_rule_statistic_near_half() {
        let n = 2000;
        let d = labeled_uniform(n, 2);
        let rule = random_rule(dom(n), 8);
        let r = measure_hypothesis_stability(&rule, &d, 10, 2, &[0.4], 200, 7, StabilityMode::Definition).unwrap();
        let band = 4.0 * (0.25 / n as f64).sqrt();
        assert!(r.statistics.iter().all(|&s| (s - 0.5).abs() <= band), "{:?}", r.statistics);
        assert_eq!(r.beta_at(0.4), 1.0);
    }

    #[test]
    fn size_dependent_rule_is_loss_unstable_but_estimable() {
        let domain = dom(3);
        let (m, k) = (10, 3);
        let d = FiniteDistribution::point_mass(domain, LabeledExample::new(1, Label::Pos)).unwrap();
        let h1 = Hypothesis::constant(domain, Label::Pos);
        let h0 = Hypothesis::constant(domain, Label::Neg);
        let rule = size_dependent_rule(m, k, h1, h0).unwrap();
        let r = measure_loss_stability(&rule, &d, m, k, &[0.5], 100, 1, StabilityMode::Definition).unwrap();
        assert!(r.statistics.iter().all(|&s| s == 1.0));
        // ê ≡ 0 is exact: the full-size output has zero loss under the point mass.
        let s = d.draw_sample(m, 4);
        assert_eq!(population_loss(&rule.apply(&s), &d).unwrap(), 0.0);
    }

    #[test]
    fn split_estimator_on_constant_rule() {
        let domain = dom(10);
        let h0 = Hypothesis::from_fn(domain, |x| Label::from_bit(x < 4));
        let est = split_estimator(Arc::new(constant_rule(h0.clone())), 3).unwrap();
        let d = labeled_uniform(10, 9);
        let s = d.draw_sample(8, 2);
        let (_, s2) = s.split_at(5);
        assert_eq!(est.estimate(&s).unwrap(), empirical_loss(&h0, &s2).unwrap());
        assert!(est.estimate(&d.draw_sample(3, 1)).is_err());
        assert!(split_estimator(Arc::new(constant_rule(h0)), 0).is_err());
    }

    #[test]
    fn hoeffding_helpers() {
        let k = hoeffding_holdout_size(0.1, 0.05);
        assert!(hoeffding_beta(k, 0.1) <= 0.05);
        assert!(hoeffding_beta(k - 1, 0.1) > 0.05);
    }

    #[test]
    fn protocol_constant_rule_agreement_one() {
        let d = labeled_uniform(40, 3);
        let h0 = Hypothesis::from_fn(dom(40), |x| Label::from_bit(x % 2 == 0));
        let r = stability_protocol_report(&constant_rule(h0), &d, 20, 4, Validation::Exact, 20, 1).unwrap();
        for row in &r.rows {
            assert_eq!(row.agreement, 1.0);
            assert_eq!(row.estimated_accuracy, row.test_accuracy);
            assert_eq!(row.estimated_accuracy_lower, row.test_accuracy);
        }
    }

    #[test]
    fn protocol_memorization_agreement_dominates() {
        let d = labeled_uniform(1000, 4);
        let rule = memorization_rule(dom(1000));
        let r = stability_protocol_report(&rule, &d, 500, 50, Validation::Exact, 100, 2).unwrap();
        assert_eq!(r.agreement_dominates_fraction(), 1.0);
        assert!(r.mean_train_accuracy() == 1.0);
        let sampled = stability_protocol_report(&rule, &d, 500, 50, Validation::Sampled(2000), 30, 2).unwrap();
        assert!(sampled.agreement_dominates_fraction() >= 0.9);
    }

    #[test]
    fn protocol_parity_erm_low_agreement() {
        let d_bits = 12;
        let target = ParityConcept::random(d_bits, &mut stream(7)).to_hypothesis().unwrap();
        let d = FiniteDistribution::realizable(&target);
        let rule = parity_erm_rule(d_bits, ParityBias::Lexicographic).unwrap();
        let r = stability_protocol_report(&rule, &d, 6, 1, Validation::Exact, 100, 3).unwrap();
        assert!(r.mean_agreement() < 0.9, "{}", r.mean_agreement());
        assert!(r.agreement_dominates_fraction() >= 0.95);
    }

    proptest! {
        #[test]
        fn loss_statistic_bounded_by_hypothesis_statistic(seed in any::<u64>(), m in 2usize..30, k in 1usize..10, protocol in any::<bool>()) {
            prop_assume!(k < m);
            let mode = if protocol { StabilityMode::Protocol } else { StabilityMode::Definition };
            let n = 25;
            let d = FiniteDistribution::uniform_marginal(dom(n), |x| x as f64 / n as f64).unwrap();
            let rule = random_rule(dom(n), seed);
            let stats = stability_statistics(&rule, &d, m, k, mode, 10, seed).unwrap();
            for (h, l) in stats {
                prop_assert!(l <= h + 1e-12);
                prop_assert!((0.0..=1.0).contains(&h));
            }
        }

        #[test]
        fn beta_curve_nonincreasing(seed in any::<u64>(), alphas in proptest::collection::vec(0.0f64..1.0, 1..8)) {
            let d = labeled_uniform(30, seed);
            let rule = memorization_rule(dom(30));
            let r = measure_loss_stability(&rule, &d, 12, 4, &alphas, 40, seed, StabilityMode::Protocol).unwrap();
            for w in r.curve.windows(2) {
                prop_assert!(w[0].alpha <= w[1].alpha && w[0].beta >= w[1].beta);
            }
        }
    }
}
