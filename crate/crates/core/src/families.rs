//! ε-orthogonal hypothesis families and the combinatorics around them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf2::ParityConcept;
use crate::model::{Domain, Hypothesis};
use crate::rng::stream;

/// Evidence from an exact pairwise orthogonality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityCheck {
    pub orthogonal: bool,
    pub max_abs_correlation: f64,
    /// Indices of a pair attaining `max_abs_correlation`, `None` for a single member.
    pub worst_pair: Option<(usize, usize)>,
}

fn common_domain(members: &[Hypothesis]) -> Result<Domain> {
    let first = members.first().ok_or_else(|| Error::InvalidParameter("empty family".into()))?;
    let domain = first.domain();
    for h in members {
        if h.domain() != domain {
            return Err(Error::DomainMismatch { expected: domain.size(), found: h.domain().size() });
        }
    }
    Ok(domain)
}

/// Exact check that `|E_{x~U(X)}[f(x) g(x)]| <= eps` for all distinct pairs.
pub fn is_epsilon_orthogonal(members: &[Hypothesis], eps: f64) -> Result<OrthogonalityCheck> {
    common_domain(members)?;
    let n = members.len();
    let worst = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (members[i].correlation(&members[j]).expect("same domain").abs(), (i, j)))
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    Ok(match worst {
        None => OrthogonalityCheck { orthogonal: true, max_abs_correlation: 0.0, worst_pair: None },
        Some((c, pair)) => OrthogonalityCheck { orthogonal: c <= eps, max_abs_correlation: c, worst_pair: Some(pair) },
    })
}

/// A hypothesis family with an optional certified orthogonality level.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalFamily {
    domain: Domain,
    members: Vec<Hypothesis>,
    epsilon: Option<f64>,
}

impl OrthogonalFamily {
    pub fn unverified(members: Vec<Hypothesis>) -> Result<OrthogonalFamily> {
        let domain = common_domain(&members)?;
        Ok(OrthogonalFamily { domain, members, epsilon: None })
    }

    /// Certified at the exact worst-pair correlation.
    pub fn certified(members: Vec<Hypothesis>) -> Result<OrthogonalFamily> {
        let check = is_epsilon_orthogonal(&members, f64::INFINITY)?;
        let domain = members[0].domain();
        Ok(OrthogonalFamily { domain, members, epsilon: Some(check.max_abs_correlation) })
    }

    /// All `2^bits` parity functions on `(F_2)^bits`; exactly 0-orthogonal.
    pub fn walsh_hadamard(bits: usize) -> Result<OrthogonalFamily> {
        if bits == 0 || bits > 16 {
            return Err(Error::InvalidParameter(format!("Walsh-Hadamard bits must be in 1..=16, got {bits}")));
        }
        let members = (0..1u64 << bits)
            .map(|w| ParityConcept::from_int(bits, w).and_then(|p| p.to_hypothesis()))
            .collect::<Result<Vec<_>>>()?;
        let domain = members[0].domain();
        Ok(OrthogonalFamily { domain, members, epsilon: Some(0.0) })
    }

    /// Certifies at the exact level, replacing any previous value.
    pub fn certify(mut self) -> OrthogonalFamily {
        let check = is_epsilon_orthogonal(&self.members, f64::INFINITY).expect("validated at construction");
        self.epsilon = Some(check.max_abs_correlation);
        self
    }

    /// The first `n` members, keeping the certificate (a subfamily inherits it).
    pub fn truncated(&self, n: usize) -> Result<OrthogonalFamily> {
        if n == 0 || n > self.members.len() {
            return Err(Error::InvalidParameter(format!("cannot keep {n} of {} members", self.members.len())));
        }
        Ok(OrthogonalFamily { domain: self.domain, members: self.members[..n].to_vec(), epsilon: self.epsilon })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn members(&self) -> &[Hypothesis] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn into_members(self) -> Vec<Hypothesis> {
        self.members
    }
}

/// `n` i.i.d. uniform `±1` functions on `[d]`, unverified.
pub fn random_sign_family(n: usize, d: usize, seed: u64) -> Result<OrthogonalFamily> {
    if n == 0 {
        return Err(Error::InvalidParameter("family size must be at least 1".into()));
    }
    let domain = Domain::new(d)?;
    let mut rng = stream(seed);
    let members = (0..n).map(|_| Hypothesis::random(domain, &mut rng)).collect();
    Ok(OrthogonalFamily { domain, members, epsilon: None })
}

/// `P_{x~U(X)}[f(x) = g(x) = h(x)]`.
pub fn triple_agreement(f: &Hypothesis, g: &Hypothesis, h: &Hypothesis) -> Result<f64> {
    common_domain(&[f.clone(), g.clone(), h.clone()])?;
    let n = f.domain().size();
    let disagreeing: u32 = f
        .words()
        .iter()
        .zip(g.words())
        .zip(h.words())
        .map(|((a, b), c)| ((a ^ b) | (a ^ c)).count_ones())
        .sum();
    // Tail bits are zero in all three, so they count as agreement and are never included above.
    Ok((n - disagreeing as usize) as f64 / n as f64)
}

/// `Π_{k<m} (1 - k/d)`: probability that `m` uniform draws from `[d]` are distinct.
pub fn collision_free_probability(m: usize, d: usize) -> Result<f64> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidParameter("m and d must be at least 1".into()));
    }
    if m > d {
        return Ok(0.0);
    }
    Ok((0..m).map(|k| 1.0 - k as f64 / d as f64).product())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{disagreement, FiniteDistribution, Label};
    use proptest::prelude::*;

    fn oracle_correlation(f: &Hypothesis, g: &Hypothesis) -> f64 {
        let n = f.domain().size();
        (0..n).map(|x| (f.label(x).sign() * g.label(x).sign()) as f64).sum::<f64>() / n as f64
    }

    #[test]
    fn singleton_and_negation() {
        let d = Domain::new(10).unwrap();
        let f = Hypothesis::from_fn(d, |x| Label::from_bit(x % 3 == 0));
        let one = is_epsilon_orthogonal(std::slice::from_ref(&f), 0.0).unwrap();
        assert!(one.orthogonal && one.worst_pair.is_none());
        let pair = is_epsilon_orthogonal(&[f.clone(), f.negated()], 0.999).unwrap();
        assert!(!pair.orthogonal);
        assert_eq!(pair.max_abs_correlation, 1.0);
        assert!(is_epsilon_orthogonal(&[f, Hypothesis::constant(Domain::new(9).unwrap(), Label::Pos)], 1.0).is_err());
    }

    #[test]
    fn walsh_hadamard_is_exactly_orthogonal() {
        let fam = OrthogonalFamily::walsh_hadamard(6).unwrap();
        assert_eq!(fam.len(), 64);
        for i in 0..64 {
            for j in i + 1..64 {
                assert_eq!(oracle_correlation(&fam.members()[i], &fam.members()[j]), 0.0);
            }
        }
        let check = is_epsilon_orthogonal(fam.members(), 0.0).unwrap();
        assert!(check.orthogonal);
        assert_eq!(check.max_abs_correlation, 0.0);
    }

    #[test]
    fn parity_triples_agree_at_most_a_quarter() {
        let fam = OrthogonalFamily::walsh_hadamard(6).unwrap();
        let m = fam.members();
        for i in 0..64 {
            for j in i + 1..64 {
                for k in (j + 1..64).step_by(7) {
                    let brute = (0..64).filter(|&x| m[i].bit(x) == m[j].bit(x) && m[j].bit(x) == m[k].bit(x)).count();
                    let t = triple_agreement(&m[i], &m[j], &m[k]).unwrap();
                    assert_eq!(t, brute as f64 / 64.0);
                    assert!(t <= 0.25);
                }
            }
        }
        assert_eq!(triple_agreement(&m[3], &m[3], &m[3]).unwrap(), 1.0);
    }

    #[test]
    fn random_family_certification_at_small_size() {
        // n = 6 satisfies n <= exp(d eps^2 / 54) at d = 10^4, eps = 0.1.
        let (n, d, eps, seeds) = (6usize, 10_000usize, 0.1, 300u64);
        assert!((n as f64) <= (d as f64 * eps * eps / 54.0).exp());
        let certified = (0..seeds)
            .filter(|&s| is_epsilon_orthogonal(random_sign_family(n, d, s).unwrap().members(), eps).unwrap().orthogonal)
            .count();
        assert_eq!(certified as u64, seeds);
        assert!(random_sign_family(1, 5, 0).unwrap().certify().epsilon() == Some(0.0));
    }

    #[test]
    fn random_families_are_independent_coins() {
        let fam = random_sign_family(2, 4000, 17).unwrap();
        let h = fam.members()[0].hamming(&fam.members()[1]).unwrap() as f64;
        assert!((h - 2000.0).abs() <= 4.0 * (4000.0f64 * 0.25).sqrt());
    }

    #[test]
    fn collision_free_values() {
        assert_eq!(collision_free_probability(1, 7).unwrap(), 1.0);
        assert_eq!(collision_free_probability(2, 2).unwrap(), 0.5);
        assert_eq!(collision_free_probability(3, 2).unwrap(), 0.0);
        for d in [10usize, 100, 1000, 5000] {
            for beta in [0.1f64, 0.5, 0.9] {
                let cap = ((d as f64 * (1.0 / beta).ln()).sqrt()).min(d as f64 / 2.0).floor() as usize;
                for m in 1..=cap {
                    let p = collision_free_probability(m, d).unwrap();
                    assert!(p >= beta, "d={d} m={m} beta={beta}: {p}");
                    assert!(p >= (-((m * m) as f64) / d as f64).exp());
                }
            }
        }
    }

    proptest! {
        #[test]
        fn collision_free_monotone(m in 1usize..60, d in 1usize..200) {
            let p = collision_free_probability(m, d).unwrap();
            prop_assert!(collision_free_probability(m + 1, d).unwrap() <= p);
            prop_assert!(collision_free_probability(m, d + 1).unwrap() >= p);
        }

        #[test]
        fn certified_pairs_and_triples_obey_bounds(seed in any::<u64>(), d in 8usize..300) {
            let fam = random_sign_family(3, d, seed).unwrap().certify();
            let eps = fam.epsilon().unwrap();
            let [f, g, h] = [&fam.members()[0], &fam.members()[1], &fam.members()[2]];
            let uniform = FiniteDistribution::uniform_marginal(fam.domain(), |_| 1.0).unwrap();
            let agree = 1.0 - disagreement(f, g, &uniform).unwrap();
            prop_assert!(agree >= 0.5 - eps / 2.0 - 1e-12 && agree <= 0.5 + eps / 2.0 + 1e-12);
            prop_assert!(triple_agreement(f, g, h).unwrap() <= 0.25 + 0.75 * eps + 1e-12);
            prop_assert!((f.correlation(g).unwrap() - oracle_correlation(f, g)).abs() < 1e-12);
        }
    }
}
