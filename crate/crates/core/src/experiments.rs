//! End-to-end scenarios shared by the command-line runner and the
//! acceptance suite. Each returns plain data; callers decide on verdicts.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimability::{
    constant_grid, consistent_set_size_distribution, exact_summary, lookup_grid, measure_uniform_estimability,
    technical_lemma_bound, EmpiricalLossEstimator, Estimator, EstimabilityReport, Evaluation, LabelFrequencyEstimator,
    RateEstimate, DEFAULT_BUDGET, THRESHOLD_SLACK,
};
use crate::families::{is_epsilon_orthogonal, random_sign_family, OrthogonalFamily};
use crate::gf2::{parity_erm_rule, parity_success_probability, rank_deficiency_distribution, BitMatrix, ParityBias, ParityConcept};
use crate::lp::{dual_certificate, min_two_three_probability, LPStatus};
use crate::model::{population_loss, Domain, DistributionFamily, FiniteDistribution, Hypothesis, Label, LearningRule};
use crate::rng::{self, derive_seed, stream};
use crate::rules::{constant_rule, interpolating_rule, memorization_rule, random_rule, BiasOrder};
use crate::stability::{
    hoeffding_beta, measure_loss_stability, split_estimator, stability_protocol_report, ProtocolReport, StabilityMode,
    Validation,
};

/// `p(m)` for each `m` in `ms`.
pub fn parity_curve(d: usize, ms: &[usize]) -> Result<Vec<(usize, f64)>> {
    ms.iter().map(|&m| Ok((m, parity_success_probability(m, d)?))).collect()
}

/// Frequency with which lexicographic parity ERM recovers a uniformly drawn
/// target from `m` uniform points of `(F_2)^d`. For any deterministic ERM the
/// target is uniform within the consistent coset, so this estimates `p(m)`.
pub fn parity_erm_monte_carlo(m: usize, d: usize, trials: u64, seed: u64) -> Result<RateEstimate> {
    let rule = parity_erm_rule(d, ParityBias::Lexicographic)?;
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = stream(derive_seed(seed, t));
            let target = ParityConcept::random(d, &mut r);
            let x = BitMatrix::random(m, d, &mut r);
            let y: Vec<bool> = (0..m).map(|i| target.eval_bits(x.row(i))).collect();
            Ok((rule.fit_system(&x, &y)? == target) as u64)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(RateEstimate::new(hits, trials))
}

/// Empirical distribution of `d - rank` over `trials` uniform `m x d` matrices.
pub fn rank_deficiency_monte_carlo(m: usize, d: usize, trials: u64, seed: u64) -> Vec<f64> {
    let ranks: Vec<usize> =
        (0..trials).into_par_iter().map(|t| BitMatrix::random(m, d, &mut stream(derive_seed(seed, t))).rank_f2()).collect();
    let mut p = vec![0.0; d + 1];
    for r in ranks {
        p[d - r] += 1.0;
    }
    p.iter().map(|c| c / trials as f64).collect()
}

/// Exact and sampled rank-deficiency distributions side by side.
pub fn rank_deficiency_comparison(m: usize, d: usize, trials: u64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((rank_deficiency_distribution(m, d)?, rank_deficiency_monte_carlo(m, d, trials, seed)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationRun {
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub rate: RateEstimate,
    /// Worst-pair correlation per seed.
    pub max_correlations: Vec<f64>,
}

/// Certification rate of `n` random sign functions on `[d]` at level `eps` over `seeds` independent draws.
pub fn orthogonality_certification(n: usize, d: usize, eps: f64, seeds: u64, seed: u64) -> Result<CertificationRun> {
    let maxima: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let fam = random_sign_family(n, d, derive_seed(seed, s))?;
            Ok(is_epsilon_orthogonal(fam.members(), eps)?.max_abs_correlation)
        })
        .collect::<Result<_>>()?;
    let certified = maxima.iter().filter(|&&c| c <= eps).count() as u64;
    Ok(CertificationRun { n, d, eps, rate: RateEstimate::new(certified, seeds), max_correlations: maxima })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpGridPoint {
    pub mu: f64,
    pub vmax: f64,
    pub kmax: usize,
    pub status: LPStatus,
    pub primal: f64,
    pub dual_value: f64,
    pub dual_feasible: bool,
    pub dual_max_violation: f64,
}

pub fn lp_grid(mus: &[f64], vmaxes: &[f64], kmaxes: &[usize]) -> Result<Vec<LpGridPoint>> {
    let mut out = Vec::with_capacity(mus.len() * vmaxes.len() * kmaxes.len());
    for &mu in mus {
        for &vmax in vmaxes {
            for &kmax in kmaxes {
                let primal = min_two_three_probability(kmax, mu, vmax)?;
                let dual = dual_certificate(kmax, mu, vmax)?;
                out.push(LpGridPoint {
                    mu,
                    vmax,
                    kmax,
                    status: primal.status,
                    primal: primal.value,
                    dual_value: dual.value,
                    dual_feasible: dual.feasible,
                    dual_max_violation: dual.max_slack_violation,
                });
            }
        }
    }
    Ok(out)
}

/// An exactly enumerable inestimability instance.
#[derive(Debug, Clone)]
pub struct LemmaInstance {
    pub name: String,
    pub family: OrthogonalFamily,
    pub m: usize,
    pub bias: BiasOrder,
}

/// A fixed set of small instances: parity subfamilies and certified random
/// sign families, on domains of 8 to 64 points, with varied bias orders.
pub fn lemma_instances(seed: u64) -> Result<Vec<LemmaInstance>> {
    let specs: &[(&str, usize, usize, usize)] = &[
        // (kind, log2 domain or domain size, family size, m)
        ("parity", 3, 3, 1),
        ("parity", 3, 3, 2),
        ("parity", 3, 5, 2),
        ("parity", 3, 8, 3),
        ("parity", 4, 4, 2),
        ("parity", 4, 6, 3),
        ("parity", 4, 9, 2),
        ("parity", 5, 5, 2),
        ("parity", 5, 7, 3),
        ("parity", 6, 3, 2),
        ("parity", 6, 9, 2),
        ("parity", 6, 9, 3),
        ("random", 8, 3, 2),
        ("random", 16, 3, 3),
        ("random", 16, 4, 2),
        ("random", 24, 5, 2),
        ("random", 32, 4, 3),
        ("random", 32, 6, 2),
        ("random", 48, 7, 2),
        ("random", 64, 5, 3),
        ("random", 64, 8, 2),
        ("random", 64, 9, 1),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, &(kind, size, n, m))| {
            let s = derive_seed(seed, i as u64);
            let family = if kind == "parity" {
                let all = OrthogonalFamily::walsh_hadamard(size)?.into_members();
                let mut pick: Vec<usize> = (0..all.len()).collect();
                rng::shuffle(&mut stream(s), &mut pick);
                OrthogonalFamily::certified(pick[..n].iter().map(|&j| all[j].clone()).collect())?
            } else {
                random_family_without_near_duplicates(n, size, s)?
            };
            let bias = match i % 3 {
                0 => BiasOrder::identity(n),
                1 => BiasOrder::reversed(n),
                _ => BiasOrder::shuffled(n, s),
            };
            let domain = family.domain().size();
            Ok(LemmaInstance { name: format!("{kind}-X{domain}-F{n}-m{m}"), family, m, bias })
        })
        .collect()
}

/// Redraws until the certified level is below 1, so the threshold `1/4 - ε/4` is positive.
fn random_family_without_near_duplicates(n: usize, d: usize, seed: u64) -> Result<OrthogonalFamily> {
    for attempt in 0..1000 {
        let fam = random_sign_family(n, d, derive_seed(seed, attempt))?.certify();
        if fam.epsilon().is_some_and(|e| e < 0.75) {
            return Ok(fam);
        }
    }
    Err(Error::InvalidParameter(format!("no family of {n} functions on {d} points with ε < 0.75")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaOutcome {
    pub name: String,
    pub domain: usize,
    pub family_size: usize,
    pub m: usize,
    pub eps: f64,
    pub threshold: f64,
    pub consistent_sizes: Vec<f64>,
    pub bound: f64,
    pub bayes_tail: f64,
    /// Smallest `P[|ê - L| >= threshold]` over the random lookup estimators.
    pub min_random_tail: f64,
    pub conditional_variance: f64,
    pub bayes_l2: f64,
    /// Smallest ℓ2 error over constants `{0, 0.01, ..., 1}` and the random estimators.
    pub min_grid_l2: f64,
    pub outcomes: u64,
}

/// Exact evaluation of one instance against the posterior mean, 101 constants and `random_estimators` lookup tables.
pub fn evaluate_lemma_instance(inst: &LemmaInstance, random_estimators: usize, seed: u64) -> Result<LemmaOutcome> {
    let eps = inst.family.epsilon().ok_or_else(|| Error::InvalidParameter("family must be certified".into()))?;
    let members = inst.family.members();
    let rule = interpolating_rule(members, &inst.bias, None)?;
    let dd = DistributionFamily::realizable(members)?;
    let p = consistent_set_size_distribution(&inst.family, inst.m, Evaluation::exact())?;
    let bound = technical_lemma_bound(&p)?;
    let threshold = 0.25 - eps / 4.0;
    let constants = constant_grid(100);
    let lookups = lookup_grid(random_estimators, seed);
    let ests: Vec<&dyn Estimator> =
        lookups.iter().map(|e| e as &dyn Estimator).chain(constants.iter().map(|e| e as &dyn Estimator)).collect();
    let s = exact_summary(&rule, &dd, inst.m, &ests, threshold, DEFAULT_BUDGET)?;
    let random = &s.estimators[..lookups.len()];
    Ok(LemmaOutcome {
        name: inst.name.clone(),
        domain: inst.family.domain().size(),
        family_size: members.len(),
        m: inst.m,
        eps,
        threshold,
        consistent_sizes: p,
        bound,
        bayes_tail: s.bayes.tail_closed,
        min_random_tail: random.iter().map(|e| e.tail_closed).fold(1.0, f64::min),
        conditional_variance: s.conditional_variance,
        bayes_l2: s.bayes.l2,
        min_grid_l2: s.estimators.iter().map(|e| e.l2).fold(f64::INFINITY, f64::min),
        outcomes: s.outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryRun {
    pub domain: usize,
    pub m: usize,
    pub trials: u64,
    pub grid: Vec<f64>,
    /// `P[|c - L| >= 1/(2m)]` for each grid constant `c`.
    pub failure: Vec<RateEstimate>,
    pub min_failure: RateEstimate,
    pub argmin: f64,
    /// Frequency of collision-free samples in the support-restricted branch.
    pub collision_free_restricted: f64,
}

/// Support-size adversary: with probability 1/2 the distribution is uniform on
/// `X × {1}`, otherwise uniform on the distinct points of `T ~ U(X)^{m^2}`.
/// The rule outputs `-1` exactly on the training points, so the loss is the
/// marginal mass of the sample's points.
pub fn support_adversary(domain: usize, m: usize, grid_steps: usize, trials: u64, seed: u64) -> Result<AdversaryRun> {
    if domain < m * m || m == 0 || trials == 0 {
        return Err(Error::InvalidParameter("need m >= 1, |X| >= m^2 and trials >= 1".into()));
    }
    let draws: Vec<(f64, bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = stream(derive_seed(seed, t));
            let restricted = rng::coin(&mut r);
            let support: Option<Vec<usize>> = restricted.then(|| {
                let mut pts: Vec<usize> = (0..m * m).map(|_| rng::below(&mut r, domain)).collect();
                pts.sort_unstable();
                pts.dedup();
                pts
            });
            let size = support.as_ref().map_or(domain, Vec::len);
            let mut xs: Vec<usize> = (0..m).map(|_| rng::below(&mut r, size)).collect();
            xs.sort_unstable();
            xs.dedup();
            (xs.len() as f64 / size as f64, restricted, xs.len() == m)
        })
        .collect();
    let gap = 1.0 / (2.0 * m as f64);
    let grid: Vec<f64> = (0..=grid_steps).map(|i| i as f64 / grid_steps as f64).collect();
    let failure: Vec<RateEstimate> = grid
        .iter()
        .map(|&c| {
            let fails = draws.iter().filter(|(l, _, _)| (c - l).abs() >= gap - THRESHOLD_SLACK).count() as u64;
            RateEstimate::new(fails, trials)
        })
        .collect();
    let (best, min_failure) = failure
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.rate.total_cmp(&b.1.rate))
        .map(|(i, r)| (i, *r))
        .expect("grid is nonempty");
    let restricted: Vec<_> = draws.iter().filter(|d| d.1).collect();
    let collision_free_restricted =
        restricted.iter().filter(|d| d.2).count() as f64 / restricted.len().max(1) as f64;
    Ok(AdversaryRun { domain, m, trials, grid: grid.clone(), failure, min_failure, argmin: grid[best], collision_free_restricted })
}

/// A few fixed-seed distributions with arbitrary conditional labels.
fn assorted_distributions(domain: Domain, seed: u64) -> Result<DistributionFamily> {
    let n = domain.size();
    let f = Hypothesis::random(domain, &mut stream(seed));
    DistributionFamily::new(vec![
        FiniteDistribution::realizable(&f),
        FiniteDistribution::uniform_marginal(domain, |_| 0.5)?,
        FiniteDistribution::uniform_marginal(domain, |x| x as f64 / n as f64)?,
        FiniteDistribution::uniform_marginal(domain, |_| 1.0)?,
    ])
}

/// Constant rule with the empirical-loss estimator at `m = ⌈ln(1/δ)/ε²⌉`.
pub fn constant_rule_estimability(domain: usize, eps: f64, delta: f64, trials: u64, seed: u64) -> Result<EstimabilityReport> {
    let m = ((1.0 / delta).ln() / (eps * eps)).ceil() as usize;
    let d = Domain::new(domain)?;
    let h0 = Hypothesis::from_fn(d, |x| Label::from_bit(x % 3 == 0));
    let fam = assorted_distributions(d, seed)?;
    measure_uniform_estimability(&constant_rule(h0.clone()), &EmpiricalLossEstimator { h0 }, &fam, m, eps, trials, seed)
}

/// Memorization with the label-frequency estimator on uniform-marginal distributions.
pub fn memorization_estimability(domain: usize, m: usize, eps: f64, trials: u64, seed: u64) -> Result<EstimabilityReport> {
    let d = Domain::new(domain)?;
    let fam = assorted_distributions(d, seed)?;
    measure_uniform_estimability(&memorization_rule(d), &LabelFrequencyEstimator, &fam, m, eps, trials, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomRuleRun {
    pub d: usize,
    pub m: usize,
    pub eps: f64,
    /// `P[|1/2 - L_{D_f}(A(S))| >= ε]` under `f ~ U({±1}^X)`.
    pub failure: RateEstimate,
    pub bound: f64,
}

/// A hashed random rule against the constant estimator `1/2`, under a uniformly random target.
pub fn random_rule_estimability(d: usize, m: usize, eps: f64, trials: u64, seed: u64) -> Result<RandomRuleRun> {
    let domain = Domain::new(d)?;
    let rule = random_rule(domain, derive_seed(seed, u64::MAX));
    let fails: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let ts = derive_seed(seed, t);
            let f = Hypothesis::random(domain, &mut stream(ts));
            let dist = FiniteDistribution::realizable(&f);
            let sample = dist.draw_sample(m, derive_seed(ts, 1));
            let loss = population_loss(&rule.try_apply(&sample)?, &dist)?;
            Ok(((0.5 - loss).abs() >= eps - THRESHOLD_SLACK) as u64)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(RandomRuleRun { d, m, eps, failure: RateEstimate::new(fails, trials), bound: 2.0 * (-2.0 * d as f64 * eps * eps).exp() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityEstimabilityRun {
    pub domain: usize,
    pub labelings: usize,
    pub m: usize,
    pub k: usize,
    pub alpha0: f64,
    pub beta0: f64,
    /// Largest per-member 0.95 quantile of the loss-stability statistic.
    pub alpha1: f64,
    /// Largest per-member frequency of the statistic exceeding `alpha1`.
    pub beta1: f64,
    pub epsilon: f64,
    /// Worst-member failure of the split estimator at `epsilon`.
    pub failure: RateEstimate,
    pub per_member: Vec<RateEstimate>,
}

/// Memorization on realizable uniform-marginal distributions: measured loss
/// stability, then uniform estimability of the split estimator at `α0 + α1`.
pub fn stability_to_estimability(
    domain: usize,
    labelings: usize,
    m: usize,
    k: usize,
    alpha0: f64,
    trials: u64,
    seed: u64,
) -> Result<StabilityEstimabilityRun> {
    let d = Domain::new(domain)?;
    let fs: Vec<Hypothesis> = (0..labelings).map(|j| Hypothesis::random(d, &mut stream(derive_seed(seed, j as u64)))).collect();
    let fam = DistributionFamily::realizable(&fs)?;
    let rule: Arc<dyn LearningRule> = Arc::new(memorization_rule(d));
    let stab_seed = derive_seed(seed, 1 << 32);
    let reports = fam
        .members()
        .iter()
        .enumerate()
        .map(|(j, dist)| {
            measure_loss_stability(rule.as_ref(), dist, m, k, &[], trials, derive_seed(stab_seed, j as u64), StabilityMode::Definition)
        })
        .collect::<Result<Vec<_>>>()?;
    let alpha1 = reports.iter().map(|r| r.quantile(0.95)).fold(0.0, f64::max);
    let beta1 = reports.iter().map(|r| r.beta_at(alpha1)).fold(0.0, f64::max);
    let epsilon = alpha0 + alpha1;
    let est = split_estimator(rule.clone(), k)?;
    let rep = measure_uniform_estimability(rule.as_ref(), &est, &fam, m, epsilon, trials, derive_seed(seed, 1 << 33))?;
    Ok(StabilityEstimabilityRun {
        domain,
        labelings,
        m,
        k,
        alpha0,
        beta0: hoeffding_beta(k, alpha0),
        alpha1,
        beta1,
        epsilon,
        failure: rep.failure,
        per_member: rep.per_distribution,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomClassRun {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub eps: f64,
    /// `P[G ∈ Orth_ε(X_d)]` on fully drawn classes.
    pub orthogonal: RateEstimate,
    pub collision_free: RateEstimate,
    /// `P[|G_S| = 2 | collision-free]`.
    pub exactly_two_given_distinct: RateEstimate,
    /// `(k - 1) p (1 - p)^{k - 2}` with `p = 2^{-m}`.
    pub predicted: f64,
    /// `P[G orthogonal and |G_S| = 2]`, on the fully drawn classes.
    pub joint: RateEstimate,
}

/// `G ~ U({±1}^{X_d})^k` with `k = 2^m + 1`, truth `F ~ U(G)`, `m` uniform points.
///
/// The conditional event only involves the values of `G` on the sample, so
/// those trials draw only those values. Orthogonality at `ε = 2/d^{1/4}` is
/// checked on `full_trials` separately drawn complete classes.
pub fn random_class_experiment(d: usize, m: usize, trials: u64, full_trials: u64, seed: u64) -> Result<RandomClassRun> {
    if m == 0 || m >= 63 || d == 0 {
        return Err(Error::InvalidParameter("need 1 <= m < 63 and d >= 1".into()));
    }
    let k = (1usize << m) + 1;
    let eps = 2.0 / (d as f64).powf(0.25);
    let draws: Vec<(bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = stream(derive_seed(seed, t));
            let xs: Vec<usize> = (0..m).map(|_| rng::below(&mut r, d)).collect();
            let mut distinct = xs.clone();
            distinct.sort_unstable();
            distinct.dedup();
            let truth = rng::below(&mut r, k);
            // Values of each G_i on the distinct sample points, as bit masks.
            let values: Vec<u64> = (0..k).map(|_| r.next_u64() & ((1u64 << distinct.len()) - 1)).collect();
            let consistent = values.iter().filter(|&&v| v == values[truth]).count();
            (distinct.len() == m, consistent == 2)
        })
        .collect();
    let distinct_trials: Vec<_> = draws.iter().filter(|d| d.0).collect();
    let two = distinct_trials.iter().filter(|d| d.1).count() as u64;

    let full_seed = derive_seed(seed, 1 << 40);
    let full: Vec<(bool, bool)> = (0..full_trials)
        .into_par_iter()
        .map(|t| {
            let ts = derive_seed(full_seed, t);
            let g = random_sign_family(k, d, ts)?;
            let orth = is_epsilon_orthogonal(g.members(), eps)?.orthogonal;
            let mut r = stream(derive_seed(ts, 1));
            let truth = &g.members()[rng::below(&mut r, k)];
            let xs: Vec<usize> = (0..m).map(|_| rng::below(&mut r, d)).collect();
            let consistent = g.members().iter().filter(|h| xs.iter().all(|&x| h.bit(x) == truth.bit(x))).count();
            Ok((orth, consistent == 2))
        })
        .collect::<Result<_>>()?;
    let p = (-(m as f64)).exp2();
    Ok(RandomClassRun {
        d,
        m,
        k,
        eps,
        orthogonal: RateEstimate::new(full.iter().filter(|f| f.0).count() as u64, full_trials),
        collision_free: RateEstimate::new(distinct_trials.len() as u64, trials),
        exactly_two_given_distinct: RateEstimate::new(two, distinct_trials.len() as u64),
        predicted: (k - 1) as f64 * p * (1.0 - p).powi(k as i32 - 2),
        joint: RateEstimate::new(full.iter().filter(|f| f.0 && f.1).count() as u64, full_trials),
    })
}

/// Remove-`k` protocol for memorization on a random realizable labeling.
pub fn memorization_protocol(domain: usize, m: usize, k: usize, trials: u64, seed: u64) -> Result<ProtocolReport> {
    let d = Domain::new(domain)?;
    let dist = FiniteDistribution::realizable(&Hypothesis::random(d, &mut stream(seed)));
    stability_protocol_report(&memorization_rule(d), &dist, m, k, Validation::Exact, trials, derive_seed(seed, 1))
}

/// Remove-`k` protocol for lexicographic parity ERM on a random target parity.
pub fn parity_protocol(d: usize, m: usize, k: usize, trials: u64, seed: u64) -> Result<ProtocolReport> {
    let mut r = stream(seed);
    let mut target = ParityConcept::random(d, &mut r);
    while target == ParityConcept::zero(d) {
        target = ParityConcept::random(d, &mut r);
    }
    let dist = FiniteDistribution::realizable(&target.to_hypothesis()?);
    let rule = parity_erm_rule(d, ParityBias::Lexicographic)?;
    stability_protocol_report(&rule, &dist, m, k, Validation::Exact, trials, derive_seed(seed, 1))
}
