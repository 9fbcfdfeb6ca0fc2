//! Dense two-phase simplex and the moment-constrained concentration program.
//!
//! Programs are `min c^T x` subject to `A x >= b`, `x >= 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivot elements at or below this magnitude are never used.
pub const PIVOT_TOLERANCE: f64 = 1e-11;
const COST_TOLERANCE: f64 = 1e-10;
const FEASIBILITY_TOLERANCE: f64 = 1e-9;
/// Dual constraints are tight at several `k`, so the certificate check needs slack.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-12;
const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLP {
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl DenseLP {
    pub fn new(c: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<DenseLP> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch(format!("{} rows but {} right-hand sides", a.len(), b.len())));
        }
        if let Some((i, row)) = a.iter().enumerate().find(|(_, r)| r.len() != c.len()) {
            return Err(Error::DimensionMismatch(format!("row {i} has {} entries, expected {}", row.len(), c.len())));
        }
        if !c.iter().chain(&b).chain(a.iter().flatten()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite LP entry".into()));
        }
        Ok(DenseLP { c, a, b })
    }

    pub fn objective(&self) -> &[f64] {
        &self.c
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Largest violation of `A x >= b` and `x >= 0`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.a.iter().zip(&self.b).map(|(row, b)| b - row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>());
        rows.chain(x.iter().map(|v| -v)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LPStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// `value` is `+inf` when infeasible and `-inf` when unbounded; `x` is empty then.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LPSolution {
    pub status: LPStatus,
    pub value: f64,
    pub x: Vec<f64>,
    pub iterations: usize,
}

struct Tableau {
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
    iterations: usize,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            let f = row[c];
            if i != r && f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Bland's rule: lowest-index improving column, ratio ties to the lowest basic index.
    fn run(&mut self, cost: &[f64], allowed: usize) -> Result<Phase> {
        loop {
            if self.iterations > MAX_ITERATIONS {
                return Err(Error::Degenerate(f64::NAN));
            }
            let entering = (0..allowed).find(|&j| {
                !self.basis.contains(&j) && {
                    let reduced = cost[j] - self.t.iter().zip(&self.basis).map(|(row, &b)| cost[b] * row[j]).sum::<f64>();
                    reduced < -COST_TOLERANCE
                }
            });
            let Some(j) = entering else { return Ok(Phase::Optimal) };
            let mut best: Option<(f64, usize, usize)> = None;
            let mut tiny = 0.0f64;
            for i in 0..self.t.len() {
                let a = self.t[i][j];
                if a > PIVOT_TOLERANCE {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match best {
                        None => true,
                        Some((r, _, b)) => ratio < r - 1e-14 || (ratio <= r + 1e-14 && self.basis[i] < b),
                    };
                    if better {
                        best = Some((ratio, i, self.basis[i]));
                    }
                } else if a > 0.0 {
                    tiny = tiny.max(a);
                }
            }
            match best {
                Some((_, i, _)) => self.pivot(i, j),
                None if tiny > 0.0 => return Err(Error::Degenerate(tiny)),
                None => return Ok(Phase::Unbounded),
            }
        }
    }
}

/// Two-phase simplex with Bland's rule.
pub fn solve_lp(lp: &DenseLP) -> Result<LPSolution> {
    let (m, n) = (lp.num_constraints(), lp.num_vars());
    // Columns: x (n), surplus (m), artificial (m).
    let width = n + 2 * m;
    let mut t = vec![vec![0.0; width + 1]; m];
    let mut basis = vec![0; m];
    for i in 0..m {
        let sign = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * lp.a[i][j];
        }
        t[i][n + i] = -sign;
        t[i][width] = sign * lp.b[i];
        if sign < 0.0 {
            basis[i] = n + i;
        } else {
            t[i][n + m + i] = 1.0;
            basis[i] = n + m + i;
        }
    }
    let mut tab = Tableau { t, basis, width, iterations: 0 };

    let phase1: Vec<f64> = (0..width).map(|j| if j >= n + m { 1.0 } else { 0.0 }).collect();
    tab.run(&phase1, width)?;
    let infeasibility: f64 = (0..m).filter(|&i| tab.basis[i] >= n + m).map(|i| tab.rhs(i)).sum();
    if infeasibility > FEASIBILITY_TOLERANCE {
        return Ok(LPSolution { status: LPStatus::Infeasible, value: f64::INFINITY, x: vec![], iterations: tab.iterations });
    }
    let mut i = 0;
    while i < tab.t.len() {
        if tab.basis[i] >= n + m {
            match (0..n + m).find(|&j| tab.t[i][j].abs() > PIVOT_TOLERANCE) {
                Some(j) => tab.pivot(i, j),
                None => {
                    // Redundant row.
                    tab.t.remove(i);
                    tab.basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }

    let mut phase2 = vec![0.0; width];
    phase2[..n].copy_from_slice(&lp.c);
    match tab.run(&phase2, n + m)? {
        Phase::Unbounded => {
            Ok(LPSolution { status: LPStatus::Unbounded, value: f64::NEG_INFINITY, x: vec![], iterations: tab.iterations })
        }
        Phase::Optimal => {
            let mut x = vec![0.0; n];
            for (i, &b) in tab.basis.iter().enumerate() {
                if b < n {
                    x[b] = tab.rhs(i).max(0.0);
                }
            }
            Ok(LPSolution { status: LPStatus::Optimal, value: lp.value_at(&x), x, iterations: tab.iterations })
        }
    }
}

fn check_moment_params(kmax: usize, mu: f64, vmax: f64) -> Result<()> {
    if kmax < 3 {
        return Err(Error::InvalidParameter(format!("kmax must be at least 3, got {kmax}")));
    }
    if !mu.is_finite() || !vmax.is_finite() {
        return Err(Error::InvalidParameter("mu and vmax must be finite".into()));
    }
    Ok(())
}

/// Primal over `p_1..p_kmax`: minimize `p_2 + p_3` subject to total mass 1,
/// mean `mu` and variance at most `vmax`, equalities written as paired inequalities.
pub fn moment_program(kmax: usize, mu: f64, vmax: f64) -> Result<DenseLP> {
    check_moment_params(kmax, mu, vmax)?;
    let t: Vec<f64> = (1..=kmax).map(|k| k as f64 - mu).collect();
    let c = (1..=kmax).map(|k| if k == 2 || k == 3 { 1.0 } else { 0.0 }).collect();
    let a = vec![
        vec![1.0; kmax],
        vec![-1.0; kmax],
        t.clone(),
        t.iter().map(|v| -v).collect(),
        t.iter().map(|v| -v * v).collect(),
    ];
    DenseLP::new(c, a, vec![1.0, -1.0, 0.0, 0.0, -vmax])
}

/// Minimum of `P[Z in {2, 3}]` over laws on `{1..kmax}` with mean `mu` and variance `<= vmax`.
pub fn min_two_three_probability(kmax: usize, mu: f64, vmax: f64) -> Result<LPSolution> {
    solve_lp(&moment_program(kmax, mu, vmax)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub y_star: [f64; 5],
    pub feasible: bool,
    /// Largest `(A^T y)_k - c_k`; nonpositive up to tolerance when feasible.
    pub max_slack_violation: f64,
    pub value: f64,
}

/// The dual point `y* = (1, 0, α, 0, 1/2)`, `α = 1/(μ-1) - (μ-1)/2`, checked against every dual constraint.
pub fn dual_certificate(kmax: usize, mu: f64, vmax: f64) -> Result<DualCertificate> {
    check_moment_params(kmax, mu, vmax)?;
    let alpha = 1.0 / (mu - 1.0) - (mu - 1.0) / 2.0;
    let y_star = [1.0, 0.0, alpha, 0.0, 0.5];
    let lp = moment_program(kmax, mu, vmax)?;
    let max_violation = (0..kmax)
        .map(|k| lp.matrix().iter().zip(&y_star).map(|(row, y)| row[k] * y).sum::<f64>() - lp.objective()[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let nonnegative = y_star.iter().all(|&y| y >= 0.0);
    let value = lp.rhs().iter().zip(&y_star).map(|(b, y)| b * y).sum();
    Ok(DualCertificate {
        y_star,
        feasible: nonnegative && max_violation <= CERTIFICATE_TOLERANCE,
        max_slack_violation: max_violation,
        value,
    })
}

/// `μ` values from 2 to `√2 + 1` in `step` increments, with the right endpoint appended.
pub fn certificate_mu_grid(step: f64) -> Vec<f64> {
    let end = 2f64.sqrt() + 1.0;
    let mut grid: Vec<f64> = (0..).map(|i| 2.0 + i as f64 * step).take_while(|&mu| mu < end - 1e-12).collect();
    grid.push(end);
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, stream};
    use proptest::prelude::*;

    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
            if a[p][c].abs() < 1e-10 {
                return None;
            }
            a.swap(c, p);
            b.swap(c, p);
            for i in 0..n {
                if i != c {
                    let f = a[i][c] / a[c][c];
                    for k in c..n {
                        a[i][k] -= f * a[c][k];
                    }
                    b[i] -= f * b[c];
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    // Oracle: minimum objective over all basic feasible solutions. Each vertex
    // makes n of the m + n constraints (rows of A, then x_j >= 0) tight.
    fn vertex_enumeration(lp: &DenseLP) -> Option<f64> {
        let (m, n) = (lp.num_constraints(), lp.num_vars());
        let total = m + n;
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let (mut rows, mut rhs) = (vec![], vec![]);
            for k in 0..total {
                if mask >> k & 1 == 1 {
                    if k < m {
                        rows.push(lp.matrix()[k].clone());
                        rhs.push(lp.rhs()[k]);
                    } else {
                        let mut e = vec![0.0; n];
                        e[k - m] = 1.0;
                        rows.push(e);
                        rhs.push(0.0);
                    }
                }
            }
            if let Some(x) = solve_dense(rows, rhs) {
                if lp.max_violation(&x) <= 1e-9 {
                    let v = lp.value_at(&x);
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        }
        best
    }

    fn random_feasible_lp(seed: u64, m: usize, n: usize) -> DenseLP {
        let mut r = stream(seed);
        let mut u = || rng::unit(&mut r);
        let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| u() * 4.0 - 2.0).collect()).collect();
        let x0: Vec<f64> = (0..n).map(|_| u() * 3.0).collect();
        let b = a.iter().map(|row| row.iter().zip(&x0).map(|(a, x)| a * x).sum::<f64>() - u()).collect();
        let c = (0..n).map(|_| u() + 0.05).collect();
        DenseLP::new(c, a, b).unwrap()
    }

    #[test]
    fn trivial_programs() {
        let lp = DenseLP::new(vec![1.0], vec![vec![1.0]], vec![3.0]).unwrap();
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LPStatus::Optimal);
        assert!((s.value - 3.0).abs() < 1e-12);
        let lp = DenseLP::new(vec![1.0, 1.0], vec![vec![1.0, 1.0]], vec![1.0]).unwrap();
        assert!((solve_lp(&lp).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = DenseLP::new(vec![1.0], vec![vec![-1.0]], vec![1.0]).unwrap();
        assert_eq!(solve_lp(&lp).unwrap().status, LPStatus::Infeasible);
        let lp = DenseLP::new(vec![-1.0], vec![vec![1.0]], vec![1.0]).unwrap();
        assert_eq!(solve_lp(&lp).unwrap().status, LPStatus::Unbounded);
        assert!(DenseLP::new(vec![1.0], vec![vec![1.0, 2.0]], vec![0.0]).is_err());
        assert!(DenseLP::new(vec![f64::NAN], vec![], vec![]).is_err());
    }

    #[test]
    fn matches_vertex_enumeration_on_random_5x8() {
        for seed in 0..60 {
            let lp = random_feasible_lp(seed, 5, 8);
            let s = solve_lp(&lp).unwrap();
            assert_eq!(s.status, LPStatus::Optimal);
            let oracle = vertex_enumeration(&lp).unwrap();
            assert!((s.value - oracle).abs() < 1e-7, "seed {seed}: {} vs {oracle}", s.value);
            assert!(lp.max_violation(&s.x) <= 1e-9);
            assert!((lp.value_at(&s.x) - s.value).abs() <= 1e-9);
        }
    }

    #[test]
    fn moment_program_examples() {
        let s = min_two_three_probability(33, 2.001, 1.02).unwrap();
        assert_eq!(s.status, LPStatus::Optimal);
        assert!(s.value >= 0.49);
        let s = min_two_three_probability(8, 2.0, 0.0).unwrap();
        assert!((s.value - 1.0).abs() < 1e-9);
        // Mean 2.5 on the integers forces variance at least 1/4.
        assert_eq!(min_two_three_probability(8, 2.5, 0.1).unwrap().status, LPStatus::Infeasible);
        assert!(min_two_three_probability(2, 2.0, 1.0).is_err());
    }

    #[test]
    fn certificate_endpoints() {
        let c = dual_certificate(33, 2.0, 1.0).unwrap();
        assert_eq!(c.y_star[2], 0.5);
        assert!(c.feasible);
        let top = 2f64.sqrt() + 1.0;
        let c = dual_certificate(33, top, 1.0).unwrap();
        assert!(c.y_star[2].abs() < 1e-15);
        assert!(c.feasible);
        assert!(!dual_certificate(33, 2.6, 1.0).unwrap().feasible);
    }

    #[test]
    fn grid_primal_dominates_certificate() {
        let grid = certificate_mu_grid(0.05);
        assert_eq!(grid.len(), 10);
        for &mu in &grid {
            for vmax in [0.25, 0.5, 1.0, 1.5] {
                for kmax in [4, 8, 16, 33] {
                    let primal = min_two_three_probability(kmax, mu, vmax).unwrap();
                    let dual = dual_certificate(kmax, mu, vmax).unwrap();
                    assert_eq!(primal.status, LPStatus::Optimal);
                    assert!(dual.feasible);
                    assert_eq!(dual.value, 1.0 - vmax / 2.0);
                    assert!(primal.value >= dual.value - 1e-7, "mu={mu} vmax={vmax} kmax={kmax}");
                }
            }
        }
    }

    #[test]
    fn sampled_worst_case_law_respects_bound() {
        let (kmax, mu, vmax) = (16, 2.2, 1.0);
        let s = min_two_three_probability(kmax, mu, vmax).unwrap();
        let cumulative: Vec<f64> = s.x.iter().scan(0.0, |acc, p| { *acc += p; Some(*acc) }).collect();
        let total = *cumulative.last().unwrap();
        let draws = 200_000u64;
        let hits = (0..draws)
            .filter(|&i| {
                let u = rng::to_unit(rng::counter_u64(5, i)) * total;
                let k = cumulative.partition_point(|&c| c <= u) + 1;
                k == 2 || k == 3
            })
            .count() as f64;
        let freq = hits / draws as f64;
        let sigma = (freq * (1.0 - freq) / draws as f64).sqrt();
        assert!(freq >= 1.0 - vmax / 2.0 - 4.0 * sigma, "{freq}");
    }

    proptest! {
        #[test]
        fn random_lps_are_feasible_and_consistent(seed in any::<u64>(), m in 1usize..6, n in 1usize..9) {
            let lp = random_feasible_lp(seed, m, n);
            let s = solve_lp(&lp).unwrap();
            prop_assert_eq!(s.status, LPStatus::Optimal);
            prop_assert!(lp.max_violation(&s.x) <= 1e-9);
            prop_assert!(s.x.iter().all(|&v| v >= -1e-12));
        }

        #[test]
        fn weak_duality_off_grid(mu in 2.0f64..2.4142, vmax in 0.25f64..3.0, kmax in 4usize..40) {
            let primal = min_two_three_probability(kmax, mu, vmax).unwrap();
            let dual = dual_certificate(kmax, mu, vmax).unwrap();
            prop_assert!(dual.feasible);
            if primal.status == LPStatus::Optimal {
                prop_assert!(dual.value <= primal.value + 1e-7);
            }
        }
    }
}
