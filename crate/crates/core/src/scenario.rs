//! Named scenarios with declared parameters, run reports with verdicts, and
//! report serialization. Reports are a pure function of (config, seed) apart
//! from `wall_time`, which appears only in JSON.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimability::{z_moment_bounds, RateEstimate};
use crate::experiments::*;
use crate::gf2::parity_success_probability;
use crate::lp::certificate_mu_grid;
use crate::stability::hoeffding_holdout_size;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, ParamValue>,
    #[serde(default)]
    pub seed: u64,
    /// Scenario default when absent.
    #[serde(default)]
    pub trials: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
}

impl ScenarioConfig {
    pub fn new(scenario: &str) -> ScenarioConfig {
        ScenarioConfig {
            scenario: scenario.into(),
            parameters: BTreeMap::new(),
            seed: 0,
            trials: None,
            output: None,
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub required: bool,
    /// Default, or the rule that determines it.
    pub default: &'static str,
    pub doc: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct ScenarioSpec {
    pub name: &'static str,
    pub summary: &'static str,
    pub default_trials: u64,
    pub params: &'static [ParamSpec],
}

const fn opt(name: &'static str, default: &'static str, doc: &'static str) -> ParamSpec {
    ParamSpec { name, required: false, default, doc }
}

const fn req(name: &'static str, doc: &'static str) -> ParamSpec {
    ParamSpec { name, required: true, default: "", doc }
}

pub const SCENARIOS: &[ScenarioSpec] = &[
    ScenarioSpec {
        name: "parity-curve",
        summary: "exact p(m) for parity ERM over (F_2)^d, with Monte-Carlo ERM checks",
        default_trials: 100_000,
        params: &[
            opt("d", "40", "ambient dimension, at most 63"),
            opt("m_min", "1", "first sample size of the curve"),
            opt("m_max", "d + 15", "last sample size of the curve"),
            opt("check", "d-1,d,d+10 as numbers", "comma-separated sample sizes for Monte-Carlo ERM; empty to skip"),
        ],
    },
    ScenarioSpec {
        name: "orthogonality",
        summary: "certification rate of random sign families as ε-orthogonal",
        default_trials: 1000,
        params: &[
            opt("n", "50", "family size"),
            opt("d", "10000", "domain size"),
            opt("eps", "0.1", "orthogonality level"),
        ],
    },
    ScenarioSpec {
        name: "estimate",
        summary: "estimability of simple rules: support adversary, constant, memorization, random rule",
        default_trials: 20_000,
        params: &[
            req("example", "one of adversary, constant, memorization, random-rule"),
            opt("domain", "10000 (adversary, memorization), 500 (constant), 2000 (random-rule)", "domain size"),
            opt("m", "20 (adversary, random-rule), 300 (memorization)", "sample size; the constant rule uses ⌈ln(1/δ)/ε²⌉"),
            opt("eps", "0.1 (constant, memorization), 0.05 (random-rule)", "precision; the adversary uses 1/(2m)"),
            opt("delta", "0.05", "confidence parameter"),
            opt("grid", "200", "adversary: number of grid intervals on [0, 1]"),
        ],
    },
    ScenarioSpec {
        name: "inestimability",
        summary: "exact tail bounds on orthogonal-family instances, and the random-class experiment",
        default_trials: 200_000,
        params: &[
            opt("instances", "22", "number of built-in instances to evaluate; 0 to skip"),
            opt("random_estimators", "100", "random lookup estimators per instance"),
            opt("class_d", "4096", "random-class domain size; 0 to skip"),
            opt("class_m", "6", "random-class sample size; the class has 2^m + 1 members"),
            opt("class_full", "200", "fully drawn classes for the orthogonality event"),
        ],
    },
    ScenarioSpec {
        name: "characterize",
        summary: "expected conditional variance against the posterior-mean ℓ2 error and an estimator grid",
        default_trials: 0,
        params: &[
            opt("instances", "22", "number of built-in instances to evaluate"),
            opt("random_estimators", "100", "random lookup estimators per instance"),
        ],
    },
    ScenarioSpec {
        name: "lp-bound",
        summary: "primal optimum and dual certificate of the moment LP over a (μ, vmax, kmax) grid",
        default_trials: 0,
        params: &[
            opt("step", "0.05", "μ grid step on [2, √2 + 1]"),
            opt("vmax", "0.25,0.5,1,1.5", "comma-separated variance caps"),
            opt("kmax", "4,8,16,33", "comma-separated support sizes"),
        ],
    },
    ScenarioSpec {
        name: "moments",
        summary: "closed-form moment bounds for the consistent-set size at ε = 1/(1000m)",
        default_trials: 0,
        params: &[opt("m_max", "64", "largest sample size")],
    },
    ScenarioSpec {
        name: "stability",
        summary: "split-estimator estimability from measured stability, or the remove-k protocol",
        default_trials: 2000,
        params: &[
            req("mode", "split or protocol"),
            opt("learner", "memorization", "protocol: memorization or parity"),
            opt("domain", "1000", "memorization domain size"),
            opt("d", "12", "parity dimension"),
            opt("m", "2000 (split), 500 (memorization protocol), 6 (parity protocol)", "sample size"),
            opt("k", "400 (split), m/10 (memorization protocol), 2 (parity protocol)", "removed or held-out points"),
            opt("alpha0", "0.1", "split: holdout precision"),
            opt("labelings", "8", "split: random labelings in the family"),
        ],
    },
];

pub fn scenario_spec(name: &str) -> Result<&'static ScenarioSpec> {
    SCENARIOS.iter().find(|s| s.name == name).ok_or_else(|| Error::UnknownScenario(name.into()))
}

/// One `(series, x, statistic)` data point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub series: String,
    pub x: f64,
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::AtLeast => ">=",
            Relation::AtMost => "<=",
        }
    }
}

/// `observed relation bound`, checked against a named claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim: String,
    pub series: String,
    pub x: f64,
    pub observed: f64,
    pub relation: Relation,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub parameters: BTreeMap<String, ParamValue>,
    pub seed: u64,
    pub trials: u64,
    pub wall_time: f64,
    pub rows: Vec<ResultRow>,
    pub verdicts: Vec<Verdict>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Parameter lookup that rejects undeclared keys and missing required ones.
struct Params<'a> {
    map: &'a BTreeMap<String, ParamValue>,
}

impl<'a> Params<'a> {
    fn new(spec: &ScenarioSpec, map: &'a BTreeMap<String, ParamValue>) -> Result<Params<'a>> {
        if let Some(k) = map.keys().find(|k| !spec.params.iter().any(|p| p.name == *k)) {
            let known: Vec<&str> = spec.params.iter().map(|p| p.name).collect();
            return Err(Error::InvalidParameter(format!(
                "unknown parameter `{k}` for scenario `{}` (known: {})",
                spec.name,
                known.join(", ")
            )));
        }
        if let Some(p) = spec.params.iter().find(|p| p.required && !map.contains_key(p.name)) {
            return Err(Error::InvalidParameter(format!("scenario `{}` requires parameter `{}`", spec.name, p.name)));
        }
        Ok(Params { map })
    }

    fn f64(&self, name: &str, default: f64) -> Result<f64> {
        match self.map.get(name) {
            None => Ok(default),
            Some(ParamValue::Number(v)) if v.is_finite() => Ok(*v),
            Some(ParamValue::Text(t)) => {
                t.trim().parse().map_err(|_| Error::InvalidParameter(format!("`{name}` must be a number, got `{t}`")))
            }
            Some(v) => Err(Error::InvalidParameter(format!("`{name}` must be finite, got {v:?}"))),
        }
    }

    fn usize(&self, name: &str, default: usize) -> Result<usize> {
        let v = self.f64(name, default as f64)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::InvalidParameter(format!("`{name}` must be a nonnegative integer, got {v}")));
        }
        Ok(v as usize)
    }

    fn text(&self, name: &str, default: &str) -> Result<String> {
        match self.map.get(name) {
            None => Ok(default.into()),
            Some(ParamValue::Text(t)) => Ok(t.clone()),
            Some(ParamValue::Number(v)) => Ok(fmt_sig(*v)),
        }
    }

    fn list(&self, name: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.map.get(name) {
            None => Ok(default.to_vec()),
            Some(ParamValue::Number(v)) => Ok(vec![*v]),
            Some(ParamValue::Text(t)) => t
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::InvalidParameter(format!("`{name}`: `{s}` is not a number"))))
                .collect(),
        }
    }
}

#[derive(Default)]
struct Builder {
    rows: Vec<ResultRow>,
    verdicts: Vec<Verdict>,
}

impl Builder {
    fn row(&mut self, series: &str, x: f64, statistic: &str, value: f64) {
        self.rows.push(ResultRow { series: series.into(), x, statistic: statistic.into(), value });
    }

    fn rate(&mut self, series: &str, x: f64, r: &RateEstimate) {
        self.row(series, x, "rate", r.rate);
        self.row(series, x, "std_error", r.std_error());
        self.row(series, x, "trials", r.trials as f64);
    }

    fn check(&mut self, claim: &str, series: &str, x: f64, observed: f64, relation: Relation, bound: f64) {
        let pass = match relation {
            Relation::AtLeast => observed >= bound,
            Relation::AtMost => observed <= bound,
        };
        self.verdicts.push(Verdict { claim: claim.into(), series: series.into(), x, observed, relation, bound, pass });
    }

    /// `|rate - p| <= k σ(p)`, recorded as a bound on the absolute deviation.
    fn within(&mut self, claim: &str, series: &str, x: f64, r: &RateEstimate, p: f64, k: f64) {
        let s = (p * (1.0 - p) / r.trials.max(1) as f64).sqrt();
        self.check(claim, series, x, (r.rate - p).abs(), Relation::AtMost, k * s);
    }
}

/// Validates and runs one scenario. Writes the report when `output` is set.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport> {
    let spec = scenario_spec(&config.scenario)?;
    let params = Params::new(spec, &config.parameters)?;
    let trials = config.trials.unwrap_or(spec.default_trials);
    let seed = config.seed;
    let start = Instant::now();
    let mut b = Builder::default();
    match spec.name {
        "parity-curve" => parity_curve_scenario(&params, trials, seed, &mut b)?,
        "orthogonality" => orthogonality_scenario(&params, trials, seed, &mut b)?,
        "estimate" => estimate_scenario(&params, trials, seed, &mut b)?,
        "inestimability" => inestimability_scenario(&params, trials, seed, &mut b)?,
        "characterize" => characterize_scenario(&params, seed, &mut b)?,
        "lp-bound" => lp_scenario(&params, &mut b)?,
        "moments" => moments_scenario(&params, &mut b)?,
        "stability" => stability_scenario(&params, trials, seed, &mut b)?,
        other => return Err(Error::UnknownScenario(other.into())),
    }
    let report = RunReport {
        scenario: spec.name.into(),
        parameters: config.parameters.clone(),
        seed,
        trials,
        wall_time: start.elapsed().as_secs_f64(),
        rows: b.rows,
        verdicts: b.verdicts,
    };
    if let Some(path) = &config.output {
        write_report(&report, config.format, path)?;
    }
    Ok(report)
}

fn positive(name: &str, v: u64) -> Result<u64> {
    if v == 0 {
        return Err(Error::InvalidParameter(format!("{name} must be positive")));
    }
    Ok(v)
}

fn parity_curve_scenario(p: &Params, trials: u64, seed: u64, b: &mut Builder) -> Result<()> {
    let d = p.usize("d", 40)?;
    if !(2..=63).contains(&d) {
        return Err(Error::InvalidParameter(format!("d must be in 2..=63, got {d}")));
    }
    let (lo, hi) = (p.usize("m_min", 1)?.max(1), p.usize("m_max", d + 15)?);
    let ms: Vec<usize> = (lo..=hi).collect();
    for (m, pm) in parity_curve(d, &ms)? {
        b.row("exact", m as f64, "p", pm);
    }
    let (pd1, pd, pd10) = (
        parity_success_probability(d - 1, d)?,
        parity_success_probability(d, d)?,
        parity_success_probability(d + 10, d)?,
    );
    b.check("parity-success-ten-extra-points", "exact", (d + 10) as f64, pd10, Relation::AtLeast, 0.999);
    b.check("parity-success-square-system", "exact", d as f64, pd, Relation::AtLeast, 0.61);
    b.check("parity-success-one-short", "exact", (d - 1) as f64, pd1, Relation::AtLeast, 0.38);
    let check = p.list("check", &[(d - 1) as f64, d as f64, (d + 10) as f64])?;
    if trials > 0 {
        for (i, m) in check.into_iter().enumerate() {
            if m < 1.0 || m.fract() != 0.0 {
                return Err(Error::InvalidParameter(format!("check sizes must be positive integers, got {m}")));
            }
            let m = m as usize;
            let r = parity_erm_monte_carlo(m, d, trials, crate::rng::derive_seed(seed, i as u64))?;
            b.rate("monte-carlo", m as f64, &r);
            b.within("parity-erm-matches-closed-form", "monte-carlo", m as f64, &r, parity_success_probability(m, d)?, 4.0);
        }
    }
    Ok(())
}

fn orthogonality_scenario(p: &Params, trials: u64, seed: u64, b: &mut Builder) -> Result<()> {
    let (n, d, eps) = (p.usize("n", 50)?, p.usize("d", 10_000)?, p.f64("eps", 0.1)?);
    let run = orthogonality_certification(n, d, eps, positive("trials", trials)?, seed)?;
    for (i, c) in run.max_correlations.iter().enumerate() {
        b.row("max-correlation", i as f64, "value", *c);
    }
    b.rate("certified", n as f64, &run.rate);
    let precondition = (n as f64) <= (d as f64 * eps * eps / 54.0).exp();
    b.row("certified", n as f64, "size_condition_holds", precondition as u8 as f64);
    b.check(
        "random-signs-nearly-orthogonal",
        "certified",
        n as f64,
        run.rate.rate,
        Relation::AtLeast,
        0.99 - 3.0 * run.rate.std_error(),
    );
    Ok(())
}

fn estimate_scenario(p: &Params, trials: u64, seed: u64, b: &mut Builder) -> Result<()> {
    let trials = positive("trials", trials)?;
    let delta = p.f64("delta", 0.05)?;
    match p.text("example", "")?.as_str() {
        "adversary" => {
            let (domain, m) = (p.usize("domain", 10_000)?, p.usize("m", 20)?);
            let run = support_adversary(domain, m, p.usize("grid", 200)?.max(1), trials, seed)?;
            for (c, r) in run.grid.iter().zip(&run.failure) {
                b.row("failure", *c, "rate", r.rate);
            }
            b.rate("min-failure", run.argmin, &run.min_failure);
            b.row("restricted", m as f64, "collision_free", run.collision_free_restricted);
            let floor = 1.0 / (2.0 * std::f64::consts::E);
            b.check(
                "support-adversary-not-estimable",
                "min-failure",
                run.argmin,
                run.min_failure.rate,
                Relation::AtLeast,
                floor - 3.0 * run.min_failure.std_error(),
            );
        }
        "constant" => {
            let eps = p.f64("eps", 0.1)?;
            let rep = constant_rule_estimability(p.usize("domain", 500)?, eps, delta, trials, seed)?;
            estimability_rows(b, "constant-rule-estimable", &rep, delta);
        }
        "memorization" => {
            let eps = p.f64("eps", 0.1)?;
            let rep = memorization_estimability(p.usize("domain", 10_000)?, p.usize("m", 300)?, eps, trials, seed)?;
            estimability_rows(b, "memorization-estimable", &rep, delta);
        }
        "random-rule" => {
            let (d, m, eps) = (p.usize("domain", 2000)?, p.usize("m", 20)?, p.f64("eps", 0.05)?);
            let run = random_rule_estimability(d, m, eps, trials, seed)?;
            b.rate("failure", eps, &run.failure);
            b.check(
                "random-rule-estimable",
                "failure",
                eps,
                run.failure.rate,
                Relation::AtMost,
                run.bound + 3.0 * run.failure.std_error(),
            );
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "example must be adversary, constant, memorization or random-rule, got `{other}`"
            )))
        }
    }
    Ok(())
}

fn estimability_rows(b: &mut Builder, claim: &str, rep: &crate::estimability::EstimabilityReport, delta: f64) {
    for (i, r) in rep.per_distribution.iter().enumerate() {
        b.rate("per-distribution", i as f64, r);
    }
    b.rate("failure", rep.m as f64, &rep.failure);
    b.check(claim, "failure", rep.m as f64, rep.failure.rate, Relation::AtMost, delta);
}

fn lemma_outcomes(p: &Params, seed: u64, default_count: usize) -> Result<Vec<LemmaOutcome>> {
    let count = p.usize("instances", default_count)?;
    let randoms = p.usize("random_estimators", 100)?;
    lemma_instances(seed)?
        .iter()
        .take(count)
        .enumerate()
        .map(|(i, inst)| evaluate_lemma_instance(inst, randoms, crate::rng::derive_seed(seed, i as u64)))
        .collect()
}

fn inestimability_scenario(p: &Params, trials: u64, seed: u64, b: &mut Builder) -> Result<()> {
    for (i, o) in lemma_outcomes(p, seed, 22)?.iter().enumerate() {
        let x = i as f64;
        b.row(&o.name, x, "eps", o.eps);
        b.row(&o.name, x, "threshold", o.threshold);
        b.row(&o.name, x, "bound", o.bound);
        b.row(&o.name, x, "bayes_tail", o.bayes_tail);
        b.row(&o.name, x, "min_random_tail", o.min_random_tail);
        b.check("orthogonal-family-tail-bound", &o.name, x, o.bayes_tail, Relation::AtLeast, o.bound - 1e-10);
        b.check("orthogonal-family-tail-bound", &o.name, x, o.min_random_tail, Relation::AtLeast, o.bound - 1e-10);
    }
    let d = p.usize("class_d", 4096)?;
    if d > 0 {
        let m = p.usize("class_m", 6)?;
        let run = random_class_experiment(d, m, positive("trials", trials)?, p.usize("class_full", 200)? as u64, seed)?;
        let x = m as f64;
        b.rate("random-class-exactly-two", x, &run.exactly_two_given_distinct);
        b.row("random-class-exactly-two", x, "predicted", run.predicted);
        b.rate("random-class-collision-free", x, &run.collision_free);
        b.rate("random-class-orthogonal", x, &run.orthogonal);
        b.rate("random-class-joint", x, &run.joint);
        b.within("random-class-binomial-count", "random-class-exactly-two", x, &run.exactly_two_given_distinct, run.predicted, 4.0);
        b.check(
            "random-class-two-consistent-often",
            "random-class-exactly-two",
            x,
            run.predicted,
            Relation::AtLeast,
            1.0 / std::f64::consts::E,
        );
    }
    Ok(())
}

fn characterize_scenario(p: &Params, seed: u64, b: &mut Builder) -> Result<()> {
    for (i, o) in lemma_outcomes(p, seed, 22)?.iter().enumerate() {
        let x = i as f64;
        b.row(&o.name, x, "conditional_variance", o.conditional_variance);
        b.row(&o.name, x, "bayes_l2", o.bayes_l2);
        b.row(&o.name, x, "min_grid_l2", o.min_grid_l2);
        b.check(
            "conditional-variance-equals-optimal-l2",
            &o.name,
            x,
            (o.conditional_variance - o.bayes_l2).abs(),
            Relation::AtMost,
            1e-10,
        );
        b.check("posterior-mean-is-l2-optimal", &o.name, x, o.bayes_l2, Relation::AtMost, o.min_grid_l2 + 1e-12);
    }
    Ok(())
}

fn lp_scenario(p: &Params, b: &mut Builder) -> Result<()> {
    let step = p.f64("step", 0.05)?;
    if step <= 0.0 {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    let vmaxes = p.list("vmax", &[0.25, 0.5, 1.0, 1.5])?;
    let kmaxes: Vec<usize> = p.list("kmax", &[4.0, 8.0, 16.0, 33.0])?.into_iter().map(|k| k as usize).collect();
    for g in lp_grid(&certificate_mu_grid(step), &vmaxes, &kmaxes)? {
        let series = format!("vmax={}/kmax={}", fmt_sig(g.vmax), g.kmax);
        let target = 1.0 - g.vmax / 2.0;
        b.row(&series, g.mu, "primal", g.primal);
        b.row(&series, g.mu, "dual", g.dual_value);
        b.row(&series, g.mu, "dual_max_violation", g.dual_max_violation);
        b.check("moment-lp-lower-bound", &series, g.mu, g.primal, Relation::AtLeast, target - 1e-7);
        b.check("dual-certificate-value", &series, g.mu, (g.dual_value - target).abs(), Relation::AtMost, 1e-12);
        b.check("dual-certificate-feasible", &series, g.mu, g.dual_max_violation, Relation::AtMost, 1e-12);
        b.check("weak-duality", &series, g.mu, g.primal, Relation::AtLeast, g.dual_value - 1e-9);
    }
    Ok(())
}

fn moments_scenario(p: &Params, b: &mut Builder) -> Result<()> {
    for m in 1..=p.usize("m_max", 64)? {
        let z = z_moment_bounds(m, 1.0 / (1000.0 * m as f64))?;
        let x = m as f64;
        b.row("moments", x, "mean_upper", z.mean_upper);
        b.row("moments", x, "mean_lower", z.mean_lower);
        b.row("moments", x, "cross_term", z.cross_term);
        b.row("moments", x, "var_upper", z.var_upper);
        b.row("moments", x, "p23_lower", z.p23_lower);
        b.check("consistent-count-mean-upper", "moments", x, z.mean_upper, Relation::AtMost, 2.002);
        b.check("consistent-count-mean-lower", "moments", x, z.mean_lower, Relation::AtLeast, 1.0 + (-1.0f64 / 500.0).exp());
        b.check("consistent-count-variance", "moments", x, z.var_upper, Relation::AtMost, 1.02);
        b.check("two-or-three-consistent", "moments", x, z.p23_lower, Relation::AtLeast, 0.49);
    }
    Ok(())
}

fn stability_scenario(p: &Params, trials: u64, seed: u64, b: &mut Builder) -> Result<()> {
    let trials = positive("trials", trials)?;
    match p.text("mode", "")?.as_str() {
        "split" => {
            let (m, k, alpha0) = (p.usize("m", 2000)?, p.usize("k", 400)?, p.f64("alpha0", 0.1)?);
            let run = stability_to_estimability(p.usize("domain", 1000)?, p.usize("labelings", 8)?, m, k, alpha0, trials, seed)?;
            let x = k as f64;
            b.row("split", x, "alpha0", run.alpha0);
            b.row("split", x, "alpha1", run.alpha1);
            b.row("split", x, "beta0", run.beta0);
            b.row("split", x, "beta1", run.beta1);
            b.row("split", x, "epsilon", run.epsilon);
            b.row("split", x, "holdout_for_beta0", hoeffding_holdout_size(alpha0, run.beta0) as f64);
            for (i, r) in run.per_member.iter().enumerate() {
                b.rate("per-member", i as f64, r);
            }
            b.rate("split", x, &run.failure);
            b.check(
                "stable-rules-are-estimable",
                "split",
                x,
                run.failure.rate,
                Relation::AtMost,
                run.beta0 + run.beta1 + 3.0 * run.failure.std_error(),
            );
        }
        "protocol" => {
            let learner = p.text("learner", "memorization")?;
            let rep = match learner.as_str() {
                "memorization" => {
                    let m = p.usize("m", 500)?;
                    memorization_protocol(p.usize("domain", 1000)?, m, p.usize("k", m / 10)?, trials, seed)?
                }
                "parity" => parity_protocol(p.usize("d", 12)?, p.usize("m", 6)?, p.usize("k", 2)?, trials, seed)?,
                other => return Err(Error::InvalidParameter(format!("learner must be memorization or parity, got `{other}`"))),
            };
            for (i, r) in rep.rows.iter().enumerate() {
                b.row("trial", i as f64, "test_accuracy", r.test_accuracy);
                b.row("trial", i as f64, "agreement", r.agreement);
            }
            let x = rep.k as f64;
            b.row(&learner, x, "mean_train_accuracy", rep.mean_train_accuracy());
            b.row(&learner, x, "mean_test_accuracy", rep.mean_test_accuracy());
            b.row(&learner, x, "mean_agreement", rep.mean_agreement());
            b.row(&learner, x, "mean_estimated_accuracy", rep.mean_estimated_accuracy());
            b.check(
                "agreement-dominates-test-accuracy",
                &learner,
                x,
                rep.agreement_dominates_fraction(),
                Relation::AtLeast,
                0.95,
            );
        }
        other => return Err(Error::InvalidParameter(format!("mode must be split or protocol, got `{other}`"))),
    }
    Ok(())
}

/// `v` at 10 significant digits, plain notation when the exponent is moderate.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.9e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-5..10).contains(&exp) {
        let s = format!("{v:.*}", (9 - exp) as usize);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let (mant, e) = sci.split_at(sci.find('e').expect("exponent"));
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{mant}{e}")
    }
}

fn round_sig(v: f64) -> f64 {
    fmt_sig(v).parse().unwrap_or(v)
}

/// Long-format CSV: `kind,claim,series,x,statistic,value,relation,bound,pass`.
pub fn report_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let out = |e: csv::Error| Error::Output(e.to_string());
    w.write_record(["kind", "claim", "series", "x", "statistic", "value", "relation", "bound", "pass"]).map_err(out)?;
    for r in &report.rows {
        w.write_record(["row", "", &r.series, &fmt_sig(r.x), &r.statistic, &fmt_sig(r.value), "", "", ""]).map_err(out)?;
    }
    for v in &report.verdicts {
        w.write_record([
            "verdict",
            &v.claim,
            &v.series,
            &fmt_sig(v.x),
            "observed",
            &fmt_sig(v.observed),
            v.relation.symbol(),
            &fmt_sig(v.bound),
            if v.pass { "true" } else { "false" },
        ])
        .map_err(out)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Output(e.to_string()))
}

/// Pretty JSON with every float rounded to 10 significant digits.
pub fn report_json(report: &RunReport) -> Result<String> {
    let mut r = report.clone();
    for row in &mut r.rows {
        row.x = round_sig(row.x);
        row.value = round_sig(row.value);
    }
    for v in &mut r.verdicts {
        v.x = round_sig(v.x);
        v.observed = round_sig(v.observed);
        v.bound = round_sig(v.bound);
    }
    let mut s = serde_json::to_string_pretty(&r).map_err(|e| Error::Output(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn render_report(report: &RunReport, format: Format) -> Result<String> {
    match format {
        Format::Csv => report_csv(report),
        Format::Json => report_json(report),
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_report(report: &RunReport, format: Format, path: &Path) -> Result<()> {
    let body = render_report(report, format)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let out = |e: std::io::Error| Error::Output(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(out)?;
    tmp.write_all(body.as_bytes()).map_err(out)?;
    tmp.persist(path).map_err(|e| out(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(name: &str, params: &[(&str, ParamValue)]) -> ScenarioConfig {
        let mut c = ScenarioConfig::new(name);
        c.parameters = params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        c
    }

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(0.1 + 0.2), "0.3");
        assert_eq!(fmt_sig(2.0f64.sqrt()), "1.414213562");
        assert_eq!(fmt_sig(123456.0), "123456");
        assert_eq!(fmt_sig(1e-7), "1e-7");
        assert_eq!(fmt_sig(-2.5e12), "-2.5e12");
        assert_eq!(fmt_sig(9.999999999999e-6), "0.00001");
    }

    #[test]
    fn unknown_scenario_and_parameters_are_rejected() {
        assert_eq!(run_scenario(&cfg("nope", &[])), Err(Error::UnknownScenario("nope".into())));
        let e = run_scenario(&cfg("lp-bound", &[("stepp", ParamValue::Number(0.1))])).unwrap_err();
        assert!(matches!(e, Error::InvalidParameter(m) if m.contains("stepp")));
        assert!(run_scenario(&cfg("estimate", &[])).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let j = r#"{"scenario": "lp-bound", "sed": 3}"#;
        assert!(serde_json::from_str::<ScenarioConfig>(j).is_err());
        let j = r#"{"scenario": "lp-bound", "seed": 3, "parameters": {"vmax": "0.5", "step": 0.1}, "format": "json"}"#;
        let c: ScenarioConfig = serde_json::from_str(j).unwrap();
        assert_eq!(c.format, Format::Json);
        assert_eq!(c.parameters["step"], ParamValue::Number(0.1));
    }

    #[test]
    fn lp_scenario_passes_and_is_deterministic() {
        let c = cfg("lp-bound", &[("kmax", ParamValue::Text("4, 33".into()))]);
        let a = run_scenario(&c).unwrap();
        assert!(a.all_pass() && a.verdicts.len() == 10 * 4 * 2 * 4);
        let b = run_scenario(&c).unwrap();
        assert_eq!(report_csv(&a).unwrap(), report_csv(&b).unwrap());
    }

    #[test]
    fn parity_curve_reports_bounds() {
        let mut c = cfg("parity-curve", &[("check", ParamValue::Text("40".into()))]);
        c.trials = Some(2000);
        let r = run_scenario(&c).unwrap();
        assert!(r.all_pass());
        assert_eq!(r.rows.iter().filter(|r| r.series == "exact").count(), 55);
        let csv = report_csv(&r).unwrap();
        assert!(csv.starts_with("kind,claim,series,x,statistic,value,relation,bound,pass\n"));
        assert!(!csv.contains("wall_time") && report_json(&r).unwrap().contains("wall_time"));
    }

    #[test]
    fn atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let mut c = cfg("moments", &[("m_max", ParamValue::Number(4.0))]);
        c.output = Some(path.clone());
        c.format = Format::Json;
        let r = run_scenario(&c).unwrap();
        let back: RunReport = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back.rows.len(), r.rows.len());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        c.output = Some(dir.path().join("missing").join("r.csv"));
        assert!(matches!(run_scenario(&c), Err(Error::Output(_))));
    }
}
