//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//! Tolerances and runtime budgets are fixed here, not tuned to results.

use std::time::{Duration, Instant};

use estilab::estimability::{z_moment_bounds, RateEstimate};
use estilab::experiments::*;
use estilab::gf2::{parity_success_probability, rank_deficiency_distribution};
use estilab::lp::certificate_mu_grid;

struct Verdict {
    ok: bool,
    detail: String,
}

fn sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn within(r: &RateEstimate, p: f64, k: f64) -> bool {
    (r.rate - p).abs() <= k * sigma(p, r.trials)
}

/// Exhaustive rank distribution over all `2^{md}` matrices.
fn enumerated_rank_distribution(m: usize, d: usize) -> Vec<f64> {
    let mut counts = vec![0u64; d + 1];
    let total = 1u64 << (m * d);
    for code in 0..total {
        let mut rows: Vec<u64> = (0..m).map(|i| (code >> (i * d)) & ((1 << d) - 1)).collect();
        let mut rank = 0;
        for bit in 0..d {
            if let Some(p) = (rank..m).find(|&i| rows[i] >> bit & 1 == 1) {
                rows.swap(rank, p);
                for i in 0..m {
                    if i != rank && rows[i] >> bit & 1 == 1 {
                        rows[i] ^= rows[rank];
                    }
                }
                rank += 1;
            }
        }
        counts[d - rank] += 1;
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

fn c1() -> Verdict {
    let d = 40;
    let (p50, p40, p39) = (
        parity_success_probability(d + 10, d).unwrap(),
        parity_success_probability(d, d).unwrap(),
        parity_success_probability(d - 1, d).unwrap(),
    );
    let exact = p50 >= 0.999 && p40 >= 0.61 && p39 >= 0.38;
    let mut mc_ok = true;
    let mut detail = format!("p(50)={p50:.6} p(40)={p40:.6} p(39)={p39:.6}");
    for (i, (m, p)) in [(d + 10, p50), (d, p40), (d - 1, p39)].into_iter().enumerate() {
        let r = parity_erm_monte_carlo(m, d, 100_000, 1000 + i as u64).unwrap();
        mc_ok &= within(&r, p, 4.0);
        detail += &format!(" mc({m})={:.5}", r.rate);
    }
    Verdict { ok: exact && mc_ok, detail }
}

fn c2() -> Verdict {
    let mut worst_exact: f64 = 0.0;
    for (m, d) in [(3, 2), (4, 4), (5, 3)] {
        let closed = rank_deficiency_distribution(m, d).unwrap();
        let brute = enumerated_rank_distribution(m, d);
        for (a, b) in closed.iter().zip(&brute) {
            worst_exact = worst_exact.max((a - b).abs());
        }
    }
    let n = 1_000_000;
    let (closed, mc) = rank_deficiency_comparison(30, 20, n, 2024).unwrap();
    let mut worst_z: f64 = 0.0;
    let mut mc_ok = true;
    for (p, q) in closed.iter().zip(&mc) {
        let s = sigma(*p, n);
        mc_ok &= (p - q).abs() <= 4.0 * s;
        if s > 0.0 {
            worst_z = worst_z.max((p - q).abs() / s);
        }
    }
    Verdict {
        ok: worst_exact <= 1e-12 && mc_ok,
        detail: format!("max |closed - enumerated| = {worst_exact:.2e}, max |z| at (30,20) = {worst_z:.2}"),
    }
}

fn c3() -> Verdict {
    let run = orthogonality_certification(50, 10_000, 0.1, 10_000, 33).unwrap();
    let worst = run.max_correlations.iter().cloned().fold(0.0, f64::max);
    Verdict {
        ok: run.rate.rate >= 0.99 - 3.0 * run.rate.std_error(),
        detail: format!("certified {}/{} (worst correlation {worst:.4})", run.rate.events, run.rate.trials),
    }
}

fn c4() -> Verdict {
    let vmaxes = [0.25, 0.5, 1.0, 1.5];
    let grid = lp_grid(&certificate_mu_grid(0.05), &vmaxes, &[4, 8, 16, 33]).unwrap();
    let mut ok = true;
    let mut min_gap = f64::INFINITY;
    for g in &grid {
        let target = 1.0 - g.vmax / 2.0;
        ok &= g.primal >= target - 1e-7;
        ok &= g.dual_feasible && (g.dual_value - target).abs() <= 1e-12;
        ok &= g.primal >= g.dual_value - 1e-9;
        min_gap = min_gap.min(g.primal - target);
    }
    Verdict { ok, detail: format!("{} grid points, min(primal - (1 - vmax/2)) = {min_gap:.3e}", grid.len()) }
}

fn c5() -> Verdict {
    let mut ok = true;
    let (mut mu, mut ml, mut vu, mut p23) = (0.0f64, f64::INFINITY, 0.0f64, f64::INFINITY);
    for m in 1..=64 {
        let b = z_moment_bounds(m, 1.0 / (1000.0 * m as f64)).unwrap();
        ok &= b.mean_upper < 2.002 && b.mean_lower >= 1.0 + (-1.0f64 / 500.0).exp();
        ok &= b.var_upper < 1.02 && b.p23_lower >= 0.49;
        mu = mu.max(b.mean_upper);
        ml = ml.min(b.mean_lower);
        vu = vu.max(b.var_upper);
        p23 = p23.min(b.p23_lower);
    }
    Verdict {
        ok,
        detail: format!("max mean_upper={mu:.6} min mean_lower={ml:.6} max var_upper={vu:.6} min p23_lower={p23:.6}"),
    }
}

fn c6_c7() -> (Verdict, Verdict) {
    let instances = lemma_instances(6).unwrap();
    let mut ok6 = instances.len() >= 20;
    let mut ok7 = true;
    let (mut slack, mut cv_gap, mut l2_gap) = (f64::INFINITY, 0.0f64, f64::INFINITY);
    for (i, inst) in instances.iter().enumerate() {
        let n = inst.family.len();
        ok6 &= (3..=9).contains(&n) && inst.family.domain().size() <= 64 && inst.m <= 3;
        let o = evaluate_lemma_instance(inst, 100, 600 + i as u64).unwrap();
        ok6 &= o.bayes_tail >= o.bound - 1e-10 && o.min_random_tail >= o.bound - 1e-10;
        slack = slack.min(o.bayes_tail.min(o.min_random_tail) - o.bound);
        ok7 &= (o.conditional_variance - o.bayes_l2).abs() <= 1e-10 && o.bayes_l2 <= o.min_grid_l2 + 1e-12;
        cv_gap = cv_gap.max((o.conditional_variance - o.bayes_l2).abs());
        l2_gap = l2_gap.min(o.min_grid_l2 - o.bayes_l2);
    }
    (
        Verdict { ok: ok6, detail: format!("{} instances, min(tail - bound) = {slack:.4e}", instances.len()) },
        Verdict { ok: ok7, detail: format!("max |E var(L|S) - bayes l2| = {cv_gap:.2e}, min(grid l2 - bayes l2) = {l2_gap:.3e}") },
    )
}

fn c8() -> Verdict {
    let adv = support_adversary(10_000, 20, 200, 100_000, 8).unwrap();
    let floor = 1.0 / (2.0 * std::f64::consts::E);
    let ok13 = adv.min_failure.rate >= floor - 3.0 * adv.min_failure.std_error();
    let c14 = constant_rule_estimability(500, 0.1, 0.05, 4000, 14).unwrap();
    let ok14 = c14.m == 300 && c14.satisfies(0.05);
    let c15 = memorization_estimability(10_000, 300, 0.1, 4000, 15).unwrap();
    let ok15 = c15.satisfies(0.05);
    let r16 = random_rule_estimability(2000, 20, 0.05, 20_000, 16).unwrap();
    let ok16 = r16.failure.rate <= r16.bound + 3.0 * r16.failure.std_error();
    Verdict {
        ok: ok13 && ok14 && ok15 && ok16,
        detail: format!(
            "adversary min failure {:.4} at c={:.3} (floor {floor:.4}); constant rule confidence {:.4}; memorization confidence {:.4}; random rule failure {:.2e} vs bound {:.2e}",
            adv.min_failure.rate,
            adv.argmin,
            c14.confidence(),
            c15.confidence(),
            r16.failure.rate,
            r16.bound
        ),
    }
}

fn c9() -> Verdict {
    let r = stability_to_estimability(1000, 8, 2000, 400, 0.1, 2000, 9).unwrap();
    let limit = r.beta0 + r.beta1 + 3.0 * r.failure.std_error();
    Verdict {
        ok: r.failure.rate <= limit,
        detail: format!(
            "alpha1={:.4} beta0={:.2e} beta1={:.4} failure={:.4} at eps={:.4}",
            r.alpha1, r.beta0, r.beta1, r.failure.rate, r.epsilon
        ),
    }
}

fn c10() -> Verdict {
    let rc = random_class_experiment(4096, 6, 200_000, 200, 10).unwrap();
    let e = &rc.exactly_two_given_distinct;
    let ok_a = within(e, rc.predicted, 4.0) && rc.predicted >= 1.0 / std::f64::consts::E;
    let mem = memorization_protocol(1000, 500, 50, 500, 101).unwrap();
    let par = parity_protocol(12, 6, 2, 2000, 102).unwrap();
    let ok_p = mem.agreement_dominates_fraction() >= 0.95 && par.agreement_dominates_fraction() >= 0.95;
    Verdict {
        ok: ok_a && ok_p,
        detail: format!(
            "P[|G_S|=2 | distinct]={:.4} vs {:.4}; P[E1]={:.3}; agreement >= test accuracy: memorization {:.3}, parity {:.3}",
            e.rate,
            rc.predicted,
            rc.orthogonal.rate,
            mem.agreement_dominates_fraction(),
            par.agreement_dominates_fraction()
        ),
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |n: &str, budget: Duration, start: Instant, v: Verdict| {
        let t = start.elapsed();
        let ok = v.ok && t <= budget;
        failed += !ok as usize;
        println!(
            "{} criterion {n}: {} [{:.1}s, budget {}s]",
            if ok { "PASS" } else { "FAIL" },
            v.detail,
            t.as_secs_f64(),
            budget.as_secs()
        );
    };
    let s = |n| Duration::from_secs(n);
    let t = Instant::now();
    report("1", s(60), t, c1());
    let t = Instant::now();
    report("2", s(120), t, c2());
    let t = Instant::now();
    report("3", s(120), t, c3());
    let t = Instant::now();
    report("4", s(30), t, c4());
    let t = Instant::now();
    report("5", s(1), t, c5());
    let t = Instant::now();
    let (v6, v7) = c6_c7();
    report("6", s(300), t, v6);
    report("7", s(300), t, v7);
    let t = Instant::now();
    report("8", s(600), t, c8());
    let t = Instant::now();
    report("9", s(120), t, c9());
    let t = Instant::now();
    report("10", s(600), t, c10());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
