//! Estimators, Monte-Carlo and exact estimability measurements, the
//! posterior-mean estimator and the inestimability machinery for
//! near-orthogonal families.
//!
//! Exact quantities are computed by enumerating every sample with positive
//! probability under some member of the family. The work is bounded by
//! `Σ_D |supp D|^m`, checked against a budget before enumeration starts.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::OrthogonalFamily;
use crate::model::{
    empirical_loss, population_loss, DistributionFamily, FiniteDistribution, Hypothesis, LabeledExample, LearningRule,
    Sample,
};
use crate::rng::{self, derive_seed, stream, Rng};

/// Default bound on `Σ_D |supp D|^m` for exact enumeration.
pub const DEFAULT_BUDGET: u128 = 10_000_000;

/// Slack used when comparing `|ê - L|` against a threshold, so that
/// boundary cases computed through different float paths land on the closed side.
pub const THRESHOLD_SLACK: f64 = 1e-12;

/// A deterministic map from samples to `[0, 1]`.
pub trait Estimator: Send + Sync {
    fn name(&self) -> String;

    /// Unclamped value.
    fn raw_estimate(&self, sample: &Sample) -> Result<f64>;

    fn estimate(&self, sample: &Sample) -> Result<f64> {
        Ok(self.raw_estimate(sample)?.clamp(0.0, 1.0))
    }
}

impl<E: Estimator + ?Sized> Estimator for Box<E> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn raw_estimate(&self, sample: &Sample) -> Result<f64> {
        (**self).raw_estimate(sample)
    }
}

impl<E: Estimator + ?Sized> Estimator for Arc<E> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn raw_estimate(&self, sample: &Sample) -> Result<f64> {
        (**self).raw_estimate(sample)
    }
}

/// `ê(S) = L_S(h0)`.
#[derive(Debug, Clone)]
pub struct EmpiricalLossEstimator {
    pub h0: Hypothesis,
}

impl Estimator for EmpiricalLossEstimator {
    fn name(&self) -> String {
        "empirical-loss".into()
    }
    fn raw_estimate(&self, sample: &Sample) -> Result<f64> {
        empirical_loss(&self.h0, sample)
    }
}

/// `ê(S) = |{i : y_i = +1}| / m`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelFrequencyEstimator;

impl Estimator for LabelFrequencyEstimator {
    fn name(&self) -> String {
        "label-frequency".into()
    }
    fn raw_estimate(&self, sample: &Sample) -> Result<f64> {
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        Ok(sample.iter().filter(|e| e.y.bit()).count() as f64 / sample.len() as f64)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantEstimator(pub f64);

impl Estimator for ConstantEstimator {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }
    fn raw_estimate(&self, _sample: &Sample) -> Result<f64> {
        Ok(self.0)
    }
}

/// A fixed random function of the sample: `unit(hash(seed, S))`.
#[derive(Debug, Clone, Copy)]
pub struct LookupEstimator {
    pub seed: u64,
}

impl Estimator for LookupEstimator {
    fn name(&self) -> String {
        format!("lookup({})", self.seed)
    }
    fn raw_estimate(&self, sample: &Sample) -> Result<f64> {
        Ok(rng::to_unit(sample.canonical_hash(self.seed)))
    }
}

/// Cheats with the true distribution: `ê(S) = L_D(A(S))`.
#[derive(Clone)]
pub struct PopulationLossOracle {
    pub rule: Arc<dyn LearningRule>,
    pub dist: Arc<FiniteDistribution>,
}

impl Estimator for PopulationLossOracle {
    fn name(&self) -> String {
        "population-oracle".into()
    }
    fn raw_estimate(&self, sample: &Sample) -> Result<f64> {
        population_loss(&self.rule.try_apply(sample)?, &self.dist)
    }
}

/// Wraps a closure.
pub struct FnEstimator<F> {
    name: String,
    f: F,
}

pub fn fn_estimator<F: Fn(&Sample) -> Result<f64> + Send + Sync>(name: &str, f: F) -> FnEstimator<F> {
    FnEstimator { name: name.into(), f }
}

impl<F: Fn(&Sample) -> Result<f64> + Send + Sync> Estimator for FnEstimator<F> {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn raw_estimate(&self, sample: &Sample) -> Result<f64> {
        (self.f)(sample)
    }
}

/// All constants `{0, 1/steps, ..., 1}`.
pub fn constant_grid(steps: usize) -> Vec<ConstantEstimator> {
    (0..=steps).map(|i| ConstantEstimator(i as f64 / steps as f64)).collect()
}

/// Lookup estimators with seeds derived from `seed`.
pub fn lookup_grid(count: usize, seed: u64) -> Vec<LookupEstimator> {
    (0..count as u64).map(|i| LookupEstimator { seed: derive_seed(seed, i) }).collect()
}

/// A binomial proportion with its Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub events: u64,
    pub trials: u64,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl RateEstimate {
    pub fn new(events: u64, trials: u64) -> RateEstimate {
        let (wilson_low, wilson_high) = wilson_interval(events, trials, 1.959_963_984_540_054);
        let rate = if trials == 0 { 0.0 } else { events as f64 / trials as f64 };
        RateEstimate { events, trials, rate, wilson_low, wilson_high }
    }

    /// Binomial standard error at the observed rate.
    pub fn std_error(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        (self.rate * (1.0 - self.rate) / self.trials as f64).sqrt()
    }
}

pub fn wilson_interval(events: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = events as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The interval always contains p; rounding at p in {0, 1} is clipped.
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimabilityMode {
    Uniform,
    Average,
    L2,
}

/// Failure means `|ê(S) - L_D(A(S))| > ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimabilityReport {
    pub mode: EstimabilityMode,
    pub epsilon: f64,
    pub m: usize,
    pub trials: u64,
    pub seed: u64,
    /// Uniform mode: one entry per member. Average mode: failures tallied by the drawn member.
    pub per_distribution: Vec<RateEstimate>,
    /// Worst member in uniform mode, pooled in average mode.
    pub failure: RateEstimate,
    pub mean_squared_error: f64,
}

impl EstimabilityReport {
    pub fn confidence(&self) -> f64 {
        1.0 - self.failure.rate
    }

    pub fn satisfies(&self, delta: f64) -> bool {
        self.failure.rate <= delta
    }
}

/// `(ê(S), L_D(A(S)))` for one draw `S ~ D^m`.
pub fn trial_outcome(
    rule: &dyn LearningRule,
    est: &dyn Estimator,
    dist: &FiniteDistribution,
    m: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let sample = dist.draw_sample(m, seed);
    let h = rule.try_apply(&sample)?;
    Ok((est.estimate(&sample)?, population_loss(&h, dist)?))
}

fn check_trials(rule: &dyn LearningRule, m: usize, trials: u64) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    if !rule.accepts(m) {
        return Err(Error::RejectedSampleSize { rule: rule.name(), size: m });
    }
    Ok(())
}

/// Per member `D`: frequency over `trials` draws of `|ê(S) - L_D(A(S))| > ε`.
pub fn measure_uniform_estimability(
    rule: &dyn LearningRule,
    est: &dyn Estimator,
    family: &DistributionFamily,
    m: usize,
    eps: f64,
    trials: u64,
    seed: u64,
) -> Result<EstimabilityReport> {
    check_trials(rule, m, trials)?;
    let mut per_distribution = Vec::with_capacity(family.len());
    let mut sq = 0.0;
    for (j, dist) in family.members().iter().enumerate() {
        let member_seed = derive_seed(seed, j as u64);
        let outcomes: Vec<(f64, f64)> = (0..trials)
            .into_par_iter()
            .map(|t| trial_outcome(rule, est, dist, m, derive_seed(member_seed, t)))
            .collect::<Result<_>>()?;
        let failures = outcomes.iter().filter(|(e, l)| (e - l).abs() > eps).count() as u64;
        sq += outcomes.iter().map(|(e, l)| (e - l) * (e - l)).sum::<f64>();
        per_distribution.push(RateEstimate::new(failures, trials));
    }
    let failure = *per_distribution
        .iter()
        .max_by(|a, b| a.rate.total_cmp(&b.rate))
        .expect("family is nonempty");
    Ok(EstimabilityReport {
        mode: EstimabilityMode::Uniform,
        epsilon: eps,
        m,
        trials,
        seed,
        per_distribution,
        failure,
        mean_squared_error: sq / (trials as f64 * family.len() as f64),
    })
}

/// Joint frequency under `D ~ U(family)`, `S ~ D^m` of `|ê(S) - L_D(A(S))| > ε`.
pub fn measure_average_estimability(
    rule: &dyn LearningRule,
    est: &dyn Estimator,
    family: &DistributionFamily,
    m: usize,
    eps: f64,
    trials: u64,
    seed: u64,
) -> Result<EstimabilityReport> {
    let members = family.members();
    let mut report = measure_average_estimability_with(rule, est, m, eps, trials, seed, |r| {
        let j = rng::below(r, members.len());
        Ok((j, members[j].clone()))
    })?;
    report.per_distribution.resize(family.len(), RateEstimate::new(0, 0));
    Ok(report)
}

/// Average estimability with an arbitrary prior: `draw` returns a member index
/// (for the per-member tally) and the distribution for one trial.
pub fn measure_average_estimability_with<F>(
    rule: &dyn LearningRule,
    est: &dyn Estimator,
    m: usize,
    eps: f64,
    trials: u64,
    seed: u64,
    draw: F,
) -> Result<EstimabilityReport>
where
    F: Fn(&mut Rng) -> Result<(usize, Arc<FiniteDistribution>)> + Sync,
{
    check_trials(rule, m, trials)?;
    let outcomes: Vec<(usize, f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = derive_seed(seed, t);
            let (j, dist) = draw(&mut stream(trial_seed))?;
            let (e, l) = trial_outcome(rule, est, &dist, m, derive_seed(trial_seed, u64::MAX))?;
            Ok((j, e, l))
        })
        .collect::<Result<_>>()?;
    let members = outcomes.iter().map(|o| o.0 + 1).max().unwrap_or(0);
    let mut tally = vec![(0u64, 0u64); members];
    let mut failures = 0;
    let mut sq = 0.0;
    for &(j, e, l) in &outcomes {
        let failed = (e - l).abs() > eps;
        tally[j].0 += failed as u64;
        tally[j].1 += 1;
        failures += failed as u64;
        sq += (e - l) * (e - l);
    }
    Ok(EstimabilityReport {
        mode: EstimabilityMode::Average,
        epsilon: eps,
        m,
        trials,
        seed,
        per_distribution: tally.into_iter().map(|(f, n)| RateEstimate::new(f, n)).collect(),
        failure: RateEstimate::new(failures, trials),
        mean_squared_error: sq / trials as f64,
    })
}

/// `Σ_D |supp D|^m`, saturating.
pub fn enumeration_cost(family: &DistributionFamily, m: usize) -> u128 {
    family
        .members()
        .iter()
        .map(|d| (d.support_size() as u128).checked_pow(m as u32).unwrap_or(u128::MAX))
        .fold(0u128, |a, b| a.saturating_add(b))
}

fn check_budget(required: u128, budget: u128) -> Result<()> {
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    Ok(())
}

/// One sample with positive probability and its joint weights.
pub struct Outcome<'a> {
    pub sample: &'a Sample,
    /// `P[D = D_j, S = sample]` under the uniform prior.
    pub joint: &'a [f64],
    /// `L_{D_j}(A(sample))`.
    pub losses: &'a [f64],
}

impl Outcome<'_> {
    pub fn probability(&self) -> f64 {
        self.joint.iter().sum()
    }

    /// `E[L | S]`.
    pub fn posterior_mean(&self) -> f64 {
        let p = self.probability();
        self.joint.iter().zip(self.losses).map(|(w, l)| w * l).sum::<f64>() / p
    }
}

struct UnionAtoms {
    atoms: Vec<LabeledExample>,
    /// `weights[a][j]` is the mass of atom `a` under member `j`.
    weights: Vec<Vec<f64>>,
}

fn union_atoms(family: &DistributionFamily) -> UnionAtoms {
    let mut atoms: Vec<LabeledExample> = family.members().iter().flat_map(|d| d.atoms().map(|(e, _)| e)).collect();
    atoms.sort_unstable();
    atoms.dedup();
    let weights = atoms.iter().map(|e| family.members().iter().map(|d| d.weight(e)).collect()).collect();
    UnionAtoms { atoms, weights }
}

struct Walker<'a, A, V> {
    rule: &'a dyn LearningRule,
    family: &'a DistributionFamily,
    union: &'a UnionAtoms,
    m: usize,
    prior: f64,
    cache: HashMap<Hypothesis, Vec<f64>>,
    visit: &'a V,
    acc: A,
}

impl<A, V: Fn(&mut A, &Outcome) -> Result<()>> Walker<'_, A, V> {
    fn walk(&mut self, prefix: &mut Vec<LabeledExample>, like: &[f64]) -> Result<()> {
        if prefix.len() == self.m {
            let sample = Sample::new(prefix.clone());
            let h = self.rule.try_apply(&sample)?;
            if !self.cache.contains_key(&h) {
                let losses = self.family.members().iter().map(|d| population_loss(&h, d)).collect::<Result<_>>()?;
                self.cache.insert(h.clone(), losses);
            }
            let joint: Vec<f64> = like.iter().map(|l| l * self.prior).collect();
            let outcome = Outcome { sample: &sample, joint: &joint, losses: &self.cache[&h] };
            return (self.visit)(&mut self.acc, &outcome);
        }
        let mut next = vec![0.0; like.len()];
        for (a, e) in self.union.atoms.iter().enumerate() {
            let mut alive = false;
            for (n, (l, w)) in next.iter_mut().zip(like.iter().zip(&self.union.weights[a])) {
                *n = l * w;
                alive |= *n > 0.0;
            }
            if alive {
                prefix.push(*e);
                self.walk(prefix, &next)?;
                prefix.pop();
            }
        }
        Ok(())
    }
}

/// Folds `visit` over every sample of length `m` with positive probability.
/// Work is split by first example; partial results are merged in atom order,
/// so the result does not depend on the thread count.
pub fn fold_outcomes<A, I, V, M>(
    rule: &dyn LearningRule,
    family: &DistributionFamily,
    m: usize,
    budget: u128,
    init: I,
    visit: V,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    V: Fn(&mut A, &Outcome) -> Result<()> + Sync,
    M: Fn(A, A) -> A,
{
    if m == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    if !rule.accepts(m) {
        return Err(Error::RejectedSampleSize { rule: rule.name(), size: m });
    }
    check_budget(enumeration_cost(family, m), budget)?;
    let union = union_atoms(family);
    let prior = 1.0 / family.len() as f64;
    let parts: Vec<A> = (0..union.atoms.len())
        .into_par_iter()
        .map(|a| {
            let like = union.weights[a].clone();
            let mut walker =
                Walker { rule, family, union: &union, m, prior, cache: HashMap::new(), visit: &visit, acc: init() };
            if like.iter().any(|&w| w > 0.0) {
                walker.walk(&mut vec![union.atoms[a]], &like)?;
            }
            Ok(walker.acc)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(init(), merge))
}

/// Exact error profile of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactErrorProfile {
    pub name: String,
    /// `E[(ê(S) - L)^2]`.
    pub l2: f64,
    /// `P[|ê(S) - L| >= threshold]`.
    pub tail_closed: f64,
    /// `P[|ê(S) - L| > threshold]`.
    pub tail_open: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSummary {
    pub threshold: f64,
    /// Number of samples with positive probability.
    pub outcomes: u64,
    pub total_probability: f64,
    pub expected_loss: f64,
    /// `E[var(L | S)]`, accumulated as `E[L^2 | S] - E[L | S]^2`.
    pub conditional_variance: f64,
    pub bayes: ExactErrorProfile,
    pub estimators: Vec<ExactErrorProfile>,
}

#[derive(Clone, Default)]
struct Accumulator {
    outcomes: u64,
    total: f64,
    loss: f64,
    var: f64,
    // Per profile: l2, closed tail, open tail. Index 0 is the posterior mean.
    profiles: Vec<[f64; 3]>,
}

fn accumulate(acc: &mut Accumulator, o: &Outcome, estimates: &[f64], threshold: f64) {
    let p = o.probability();
    let mean = o.posterior_mean();
    let second: f64 = o.joint.iter().zip(o.losses).map(|(w, l)| w * l * l).sum();
    acc.outcomes += 1;
    acc.total += p;
    acc.loss += o.joint.iter().zip(o.losses).map(|(w, l)| w * l).sum::<f64>();
    acc.var += second - p * mean * mean;
    for (slot, &e) in acc.profiles.iter_mut().zip(std::iter::once(&mean).chain(estimates)) {
        for (w, l) in o.joint.iter().zip(o.losses) {
            let gap = (e - l).abs();
            slot[0] += w * gap * gap;
            if gap >= threshold - THRESHOLD_SLACK {
                slot[1] += w;
            }
            if gap > threshold + THRESHOLD_SLACK {
                slot[2] += w;
            }
        }
    }
}

fn merge_accumulators(mut a: Accumulator, b: Accumulator) -> Accumulator {
    a.outcomes += b.outcomes;
    a.total += b.total;
    a.loss += b.loss;
    a.var += b.var;
    for (x, y) in a.profiles.iter_mut().zip(&b.profiles) {
        for i in 0..3 {
            x[i] += y[i];
        }
    }
    a
}

/// Exact posterior-mean, conditional-variance and per-estimator error profiles
/// in one enumeration pass.
pub fn exact_summary(
    rule: &dyn LearningRule,
    family: &DistributionFamily,
    m: usize,
    estimators: &[&dyn Estimator],
    threshold: f64,
    budget: u128,
) -> Result<ExactSummary> {
    let init = || Accumulator { profiles: vec![[0.0; 3]; estimators.len() + 1], ..Default::default() };
    let acc = fold_outcomes(
        rule,
        family,
        m,
        budget,
        init,
        |acc, o| {
            let estimates = estimators.iter().map(|e| e.estimate(o.sample)).collect::<Result<Vec<_>>>()?;
            accumulate(acc, o, &estimates, threshold);
            Ok(())
        },
        merge_accumulators,
    )?;
    let profile = |name: String, s: &[f64; 3]| ExactErrorProfile { name, l2: s[0], tail_closed: s[1], tail_open: s[2] };
    Ok(ExactSummary {
        threshold,
        outcomes: acc.outcomes,
        total_probability: acc.total,
        expected_loss: acc.loss,
        conditional_variance: acc.var.max(0.0),
        bayes: profile("posterior-mean".into(), &acc.profiles[0]),
        estimators: estimators.iter().zip(&acc.profiles[1..]).map(|(e, s)| profile(e.name(), s)).collect(),
    })
}

/// Exact or Monte-Carlo evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    Exact { budget: u128 },
    MonteCarlo { trials: u64, seed: u64 },
}

impl Evaluation {
    pub fn exact() -> Evaluation {
        Evaluation::Exact { budget: DEFAULT_BUDGET }
    }
}

/// `E[(ê(S) - L_D(A(S)))^2]` under `D ~ U(family)`, `S ~ D^m`.
pub fn l2_estimability_error(
    rule: &dyn LearningRule,
    est: &dyn Estimator,
    family: &DistributionFamily,
    m: usize,
    mode: Evaluation,
) -> Result<f64> {
    match mode {
        Evaluation::Exact { budget } => Ok(exact_summary(rule, family, m, &[est], 0.0, budget)?.estimators[0].l2),
        Evaluation::MonteCarlo { trials, seed } => {
            Ok(measure_average_estimability(rule, est, family, m, 0.0, trials, seed)?.mean_squared_error)
        }
    }
}

/// `E[var(L_D(A(S)) | S)]`, exact.
pub fn expected_conditional_variance(
    rule: &dyn LearningRule,
    family: &DistributionFamily,
    m: usize,
    budget: u128,
) -> Result<f64> {
    Ok(exact_summary(rule, family, m, &[], 0.0, budget)?.conditional_variance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BayesMode {
    /// Tabulate every sample with positive probability, within the budget.
    Enumerate { budget: u128 },
    /// Compute the posterior per query.
    PerQuery,
}

/// `ê*(S) = E[L_D(A(S)) | S]` under the uniform prior on the family.
#[derive(Clone)]
pub struct BayesOptimalEstimator {
    rule: Arc<dyn LearningRule>,
    family: DistributionFamily,
    m: usize,
    table: Option<Arc<HashMap<Sample, f64>>>,
}

pub fn bayes_optimal_estimator(
    rule: Arc<dyn LearningRule>,
    family: &DistributionFamily,
    m: usize,
    mode: BayesMode,
) -> Result<BayesOptimalEstimator> {
    let table = match mode {
        BayesMode::PerQuery => None,
        BayesMode::Enumerate { budget } => {
            let parts = fold_outcomes(
                rule.as_ref(),
                family,
                m,
                budget,
                Vec::new,
                |acc: &mut Vec<(Sample, f64)>, o| {
                    acc.push((o.sample.clone(), o.posterior_mean()));
                    Ok(())
                },
                |mut a, b| {
                    a.extend(b);
                    a
                },
            )?;
            Some(Arc::new(parts.into_iter().collect()))
        }
    };
    Ok(BayesOptimalEstimator { rule, family: family.clone(), m, table })
}

impl BayesOptimalEstimator {
    /// Posterior over members given `S`, from log-likelihood sums. Members
    /// that give some example zero mass get exactly zero.
    pub fn posterior(&self, sample: &Sample) -> Result<Vec<f64>> {
        let logs: Vec<f64> = self
            .family
            .members()
            .iter()
            .map(|d| sample.iter().map(|e| d.weight(e).ln()).sum::<f64>())
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Err(Error::InvalidParameter("sample has zero probability under every member".into()));
        }
        let unnormalized: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = unnormalized.iter().sum();
        Ok(unnormalized.into_iter().map(|w| w / total).collect())
    }

    pub fn is_tabulated(&self) -> bool {
        self.table.is_some()
    }
}

impl Estimator for BayesOptimalEstimator {
    fn name(&self) -> String {
        "posterior-mean".into()
    }

    fn raw_estimate(&self, sample: &Sample) -> Result<f64> {
        if sample.len() != self.m {
            return Err(Error::InvalidParameter(format!("built for m = {}, got {}", self.m, sample.len())));
        }
        if let Some(table) = &self.table {
            return table
                .get(sample)
                .copied()
                .ok_or_else(|| Error::InvalidParameter("sample has zero probability under every member".into()));
        }
        let h = self.rule.try_apply(sample)?;
        let posterior = self.posterior(sample)?;
        let mut mean = 0.0;
        for (p, d) in posterior.iter().zip(self.family.members()) {
            if *p > 0.0 {
                mean += p * population_loss(&h, d)?;
            }
        }
        Ok(mean)
    }
}

/// `p_k = P[|F_S| = k]` for `F ~ U(F)`, `S ~ D_F^m`, indexed `k = 0..=|F|`.
pub fn consistent_set_size_distribution(family: &OrthogonalFamily, m: usize, mode: Evaluation) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    let members = family.members();
    let n = members.len();
    let size = family.domain().size();
    let mut p = vec![0.0; n + 1];
    match mode {
        Evaluation::Exact { budget } => {
            if n > 128 {
                return Err(Error::InvalidParameter(format!("exact mode supports at most 128 members, got {n}")));
            }
            let required = (size as u128).checked_pow(m as u32).and_then(|c| c.checked_mul(n as u128));
            check_budget(required.unwrap_or(u128::MAX), budget)?;
            let counts: Vec<Vec<u64>> = (0..n)
                .into_par_iter()
                .map(|truth| {
                    let agree: Vec<u128> = (0..size)
                        .map(|x| {
                            (0..n).filter(|&j| members[j].bit(x) == members[truth].bit(x)).fold(0u128, |a, j| a | 1 << j)
                        })
                        .collect();
                    let mut counts = vec![0u64; n + 1];
                    count_consistent(&agree, m, u128::MAX >> (128 - n), &mut counts);
                    counts
                })
                .collect();
            let total = n as f64 * (size as f64).powi(m as i32);
            for c in counts {
                for (k, v) in c.into_iter().enumerate() {
                    p[k] += v as f64 / total;
                }
            }
        }
        Evaluation::MonteCarlo { trials, seed } => {
            let sizes: Vec<usize> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut r = stream(derive_seed(seed, t));
                    let truth = rng::below(&mut r, n);
                    let xs: Vec<usize> = (0..m).map(|_| rng::below(&mut r, size)).collect();
                    members.iter().filter(|g| xs.iter().all(|&x| g.bit(x) == members[truth].bit(x))).count()
                })
                .collect();
            for k in sizes {
                p[k] += 1.0 / trials as f64;
            }
        }
    }
    Ok(p)
}

fn count_consistent(agree: &[u128], depth: usize, mask: u128, counts: &mut [u64]) {
    if depth == 0 {
        counts[mask.count_ones() as usize] += 1;
        return;
    }
    for &a in agree {
        count_consistent(agree, depth - 1, mask & a, counts);
    }
}

/// `Σ_{k >= 2} p_k / k`.
pub fn technical_lemma_bound(p: &[f64]) -> Result<f64> {
    if p.iter().any(|v| !v.is_finite() || *v < -1e-15) {
        return Err(Error::InvalidDistribution("negative or non-finite entry".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
    }
    Ok(p.iter().enumerate().skip(2).map(|(k, v)| v / k as f64).sum())
}

/// Closed-form moment bounds for `Z = |F_S|` with `|F| = 2^m + 1` and an ε-orthogonal `F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZMomentBounds {
    pub mean_upper: f64,
    pub mean_lower: f64,
    /// Upper bound on `Σ_{f ≠ g, both ≠ f*} E[Z_f Z_g]`.
    pub cross_term: f64,
    pub var_upper: f64,
    pub p23_lower: f64,
}

/// `mean_upper = 1 + 2^m (1/2 + ε/2)^m`, `mean_lower = 1 + 2^m (1/2 - ε/2)^m`,
/// `cross = 2^{2m} (1/4 + 3ε/4)^m`, `var_upper = 1 + 3(mean_upper - 1) + cross - mean_lower^2`,
/// `p23_lower = 1 - var_upper/2`.
pub fn z_moment_bounds(m: usize, eps: f64) -> Result<ZMomentBounds> {
    if m == 0 || !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("need m >= 1 and eps in [0, 1), got m = {m}, eps = {eps}")));
    }
    let mf = m as f64;
    let mean_upper = 1.0 + (mf * eps.ln_1p()).exp();
    let mean_lower = 1.0 + (mf * (-eps).ln_1p()).exp();
    let cross_term = (mf * (3.0 * eps).ln_1p()).exp();
    let var_upper = 1.0 + 3.0 * (mean_upper - 1.0) + cross_term - mean_lower * mean_lower;
    Ok(ZMomentBounds { mean_upper, mean_lower, cross_term, var_upper, p23_lower: 1.0 - var_upper / 2.0 })
}
