use std::fmt::Write as _;

use amdsp::band::{geometric_sigma_grid, BAND_SIGMA_FLOOR};
use amdsp::designer::{design_one_sided_am, design_two_sided_am, TighteningConfig};
use amdsp::double_plan::{DoubleOc, OcEstimate, QuadratureConfig};
use amdsp::isoline::{
    fraction_defective_at, mu_upper, sigma0, FractionDefective, ProcessPoint, SpecLimits,
};
use amdsp::one_sided::{
    asn_one_sided_margin, OneSidedDoubleOc, OneSidedDoublePlan, OneSidedSingleOc,
};
use amdsp::simulate::{simulate_double_plan, simulate_single_plan};
use amdsp::single_plan::{design_single, DesignRequirement, SingleOc};
use rayon::prelude::*;
use serde::Serialize;

use crate::document::{CheckedPoint, PlanDocument, PlanParameters, Provenance, SCHEMA_VERSION};
use crate::{DesignArgs, Failure, KindArg, NumericArgs, PointArgs, SimulateArgs, WhatArg};

fn quadrature(n: NumericArgs) -> Result<QuadratureConfig, Failure> {
    Ok(QuadratureConfig::new(n.quad_nodes, n.tol)?)
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("outputs always serialize");
    s.push('\n');
    s
}

fn open_interval(name: &str, v: f64) -> Result<f64, Failure> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(Failure::usage(format!(
            "--{name} must lie in (0, 1), got {v}"
        )))
    }
}

fn load(path: &std::path::Path) -> Result<PlanDocument, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    PlanDocument::parse(&text).map_err(Failure::usage)
}

fn generator() -> String {
    format!("amdsp {}", env!("CARGO_PKG_VERSION"))
}

pub fn design(a: &DesignArgs, n: NumericArgs) -> Result<String, Failure> {
    let lim = SpecLimits::new(a.lower, a.upper)?;
    for (name, v) in [
        ("p1", a.p1),
        ("p2", a.p2),
        ("alpha", a.alpha),
        ("beta", a.beta),
    ] {
        open_interval(name, v)?;
    }
    let req = DesignRequirement::new(a.p1, a.p2, a.alpha, a.beta)?;
    let quad = quadrature(n)?;
    let provenance = |quad| Provenance {
        generator: generator(),
        requirement: req,
        quadrature: quad,
        oc_method: n.oc_method.into(),
        single: None,
        one_sided: None,
        trace: None,
        n_max: None,
        n_max_at: None,
        checks: Vec::new(),
    };
    let doc = match a.kind {
        KindArg::Single => {
            let d = design_single(&req, &lim)?;
            let so = SingleOc::new(d.plan, &lim);
            let mut checks = Vec::new();
            for (p, ext) in [(a.p1, d.min_oc_p1), (a.p2, d.max_oc_p2)] {
                let point = upper_point(p, ext.sigma_star, &lim)?;
                let (value, error) = so.eval_with_error(point.mu, point.sigma)?;
                checks.push(CheckedPoint {
                    p,
                    point,
                    oc: OcEstimate { value, error },
                });
            }
            let mut prov = provenance(quad);
            prov.single = Some(d);
            prov.checks = checks;
            PlanDocument::new(PlanParameters::Single(d.plan), lim, Some(prov))?
        }
        KindArg::OneSided => {
            let d = design_one_sided_am(&req)?;
            let mut prov = provenance(quad);
            prov.n_max = Some(d.n_max);
            prov.one_sided = Some(d);
            PlanDocument::new(PlanParameters::DoubleOneSided(d.plan), lim, Some(prov))?
        }
        KindArg::Double => {
            let cfg = TighteningConfig {
                quadrature: quad,
                oc_method: n.oc_method.into(),
                max_steps: a.max_steps,
                ..TighteningConfig::default()
            };
            let d = match design_two_sided_am(&req, &lim, &cfg) {
                Ok(d) => d,
                Err(f) => {
                    let base = Failure::from(f.source.clone());
                    // Running out of steps means the requirement is not met.
                    let code = match f.source {
                        amdsp::Error::NoConvergence(_) => 3,
                        _ => base.code,
                    };
                    return Err(Failure {
                        code,
                        message: base.message,
                        output: Some(json(&f.trace)),
                    });
                }
            };
            let oc = DoubleOc::new(d.plan, &lim, quad, n.oc_method.into())?;
            let mut checks = Vec::new();
            if let Some(last) = d.trace.rows.last() {
                for (p, ext) in [(a.p1, last.min_oc_p1), (a.p2, last.max_oc_p2)] {
                    let point = upper_point(p, ext.sigma_star, &lim)?;
                    checks.push(CheckedPoint {
                        p,
                        point,
                        oc: oc.eval_with_error(point.mu, point.sigma)?,
                    });
                }
            }
            let mut prov = provenance(quad);
            prov.single = Some(d.single);
            prov.n_max = Some(d.n_max);
            prov.n_max_at = Some(d.n_max_at);
            prov.trace = Some(d.trace);
            prov.checks = checks;
            PlanDocument::new(PlanParameters::DoubleTwoSided(d.plan), lim, Some(prov))?
        }
    };
    let mut out = doc.to_json();
    out.push('\n');
    Ok(out)
}

fn upper_point(p: f64, sigma: f64, lim: &SpecLimits) -> Result<ProcessPoint, Failure> {
    let mu = mu_upper(sigma, FractionDefective::new(p)?, lim)?;
    Ok(ProcessPoint::new(mu, sigma)?)
}

/// OC and ASN of any plan kind at one point, each with an error estimate.
struct Evaluator {
    plan: PlanParameters,
    lim: SpecLimits,
    single: Option<SingleOc>,
    double: Option<DoubleOc>,
    one_sided: Option<(
        OneSidedDoubleOc,
        OneSidedDoubleOc,
        OneSidedSingleOc,
        OneSidedSingleOc,
    )>,
}

impl Evaluator {
    fn new(doc: &PlanDocument, n: NumericArgs) -> Result<Self, Failure> {
        let quad = quadrature(n)?;
        let mut e = Self {
            plan: doc.plan.clone(),
            lim: doc.limits,
            single: None,
            double: None,
            one_sided: None,
        };
        match &doc.plan {
            PlanParameters::Single(p) => e.single = Some(SingleOc::new(*p, &doc.limits)),
            PlanParameters::DoubleTwoSided(p) => {
                e.double = Some(DoubleOc::new(*p, &doc.limits, quad, n.oc_method.into())?);
            }
            PlanParameters::DoubleOneSided(p) => {
                let coarse = (quad.nodes_per_dim * 3 / 4).max(8);
                e.one_sided = Some((
                    OneSidedDoubleOc::new(p.n1, p.n2, quad.nodes_per_dim),
                    OneSidedDoubleOc::new(p.n1, p.n2, coarse),
                    OneSidedSingleOc::new(p.n1, quad.nodes_per_dim.max(48)),
                    OneSidedSingleOc::new(p.n1, coarse.max(36)),
                ));
            }
        }
        Ok(e)
    }

    fn oc(&self, mu: f64, sigma: f64, tol: f64) -> Result<OcEstimate, Failure> {
        ProcessPoint::new(mu, sigma)?;
        if let Some(so) = &self.single {
            let (value, error) = so.eval_with_error(mu, sigma)?;
            check_error(error, tol)?;
            return Ok(OcEstimate { value, error });
        }
        if let Some(d) = &self.double {
            return Ok(d.eval_with_error(mu, sigma)?);
        }
        let (fine, coarse, _, _) = self.one_sided.as_ref().expect("one plan kind is set");
        let p = self.one_sided_plan();
        let z = (self.lim.upper() - mu) / sigma;
        let value = fine.eval_margin(p.l1, p.l2, p.l3, z);
        let error = (value - coarse.eval_margin(p.l1, p.l2, p.l3, z)).abs();
        check_error(error, tol)?;
        Ok(OcEstimate { value, error })
    }

    fn asn(&self, mu: f64, sigma: f64, tol: f64) -> Result<OcEstimate, Failure> {
        ProcessPoint::new(mu, sigma)?;
        if self.single.is_some() {
            let (n, _) = self.plan.sample_sizes();
            return Ok(OcEstimate {
                value: n as f64,
                error: 0.0,
            });
        }
        if let Some(d) = &self.double {
            let r = d.asn_with_error(mu, sigma)?;
            check_error(r.error, tol)?;
            return Ok(r);
        }
        let (_, _, fine, coarse) = self.one_sided.as_ref().expect("one plan kind is set");
        let p = self.one_sided_plan();
        let z = (self.lim.upper() - mu) / sigma;
        let value = asn_one_sided_margin(fine, p.n2, p.l1, p.l2, z);
        let error = (value - asn_one_sided_margin(coarse, p.n2, p.l1, p.l2, z)).abs();
        check_error(error / p.n2 as f64, tol)?;
        Ok(OcEstimate { value, error })
    }

    fn one_sided_plan(&self) -> OneSidedDoublePlan {
        match self.plan {
            PlanParameters::DoubleOneSided(p) => p,
            _ => unreachable!("only called for one-sided plans"),
        }
    }
}

fn check_error(error: f64, tol: f64) -> Result<(), Failure> {
    if error > tol {
        Err(amdsp::Error::Quadrature {
            estimate: error,
            tolerance: tol,
        }
        .into())
    } else {
        Ok(())
    }
}

#[derive(Serialize)]
struct EvalOutput {
    schema_version: u32,
    kind: &'static str,
    mu: f64,
    sigma: f64,
    fraction_defective: f64,
    oc: f64,
    oc_error: f64,
    asn: f64,
    asn_error: f64,
}

fn kind_name(p: &PlanParameters) -> &'static str {
    match p {
        PlanParameters::Single(_) => "single",
        PlanParameters::DoubleTwoSided(_) => "double-two-sided",
        PlanParameters::DoubleOneSided(_) => "double-one-sided",
    }
}

pub fn eval(a: &PointArgs, n: NumericArgs) -> Result<String, Failure> {
    let doc = load(&a.plan)?;
    ProcessPoint::new(a.mu, a.sigma)?;
    let ev = Evaluator::new(&doc, n)?;
    let oc = ev.oc(a.mu, a.sigma, n.tol)?;
    let asn = ev.asn(a.mu, a.sigma, n.tol)?;
    Ok(json(&EvalOutput {
        schema_version: SCHEMA_VERSION,
        kind: kind_name(&doc.plan),
        mu: a.mu,
        sigma: a.sigma,
        fraction_defective: fraction_defective_at(a.mu, a.sigma, &doc.limits),
        oc: oc.value,
        oc_error: oc.error,
        asn: asn.value,
        asn_error: asn.error,
    }))
}

pub fn band(a: &crate::BandArgs, n: NumericArgs) -> Result<String, Failure> {
    let doc = load(&a.plan)?;
    let p = open_interval("p", a.p)?;
    if a.points == 0 {
        return Err(Failure::usage("--points must be at least 1"));
    }
    let ev = Evaluator::new(&doc, n)?;
    let s0 = sigma0(p, &doc.limits);
    // Drop the floor itself: the sweep covers (σ₀·floor, σ₀].
    let grid = geometric_sigma_grid(s0, a.points + 1, BAND_SIGMA_FLOOR);
    let fd = FractionDefective::new(p)?;
    let rows: Vec<(f64, f64, Option<OcEstimate>, Option<OcEstimate>)> = grid[1..]
        .par_iter()
        .map(|&s| {
            let mu = mu_upper(s, fd, &doc.limits)?;
            let oc = match a.what {
                WhatArg::Oc | WhatArg::Both => Some(ev.oc(mu, s, n.tol)?),
                WhatArg::Asn => None,
            };
            let asn = match a.what {
                WhatArg::Asn | WhatArg::Both => Some(ev.asn(mu, s, n.tol)?),
                WhatArg::Oc => None,
            };
            Ok((s, mu, oc, asn))
        })
        .collect::<Result<_, Failure>>()?;
    let mut out = String::from("sigma,mu,oc,asn\n");
    let mut worst = 0.0f64;
    for (s, mu, oc, asn) in rows {
        let cell =
            |v: Option<OcEstimate>| v.map(|e| format!("{:.10}", e.value)).unwrap_or_default();
        worst = worst.max(oc.map_or(0.0, |e| e.error));
        let _ = writeln!(out, "{s:.10e},{mu:.10},{},{}", cell(oc), cell(asn));
    }
    eprintln!("largest OC error estimate: {worst:.2e}");
    Ok(out)
}

pub fn simulate(a: &SimulateArgs, _n: NumericArgs) -> Result<String, Failure> {
    let doc = load(&a.point.plan)?;
    let pt = ProcessPoint::new(a.point.mu, a.point.sigma)?;
    if a.replicates == 0 {
        return Err(Failure::usage("--replicates must be at least 1"));
    }
    let result = match &doc.plan {
        PlanParameters::Single(p) => {
            simulate_single_plan(p, pt, &doc.limits, a.replicates, a.seed)?
        }
        PlanParameters::DoubleTwoSided(p) => {
            simulate_double_plan(p, pt, &doc.limits, a.replicates, a.seed)?
        }
        PlanParameters::DoubleOneSided(_) => {
            return Err(Failure::usage(
                "simulation covers single and two-sided double plans",
            ));
        }
    };
    #[derive(Serialize)]
    struct Out<'a> {
        schema_version: u32,
        kind: &'static str,
        mu: f64,
        sigma: f64,
        #[serde(flatten)]
        result: &'a amdsp::simulate::SimulationResult,
    }
    Ok(json(&Out {
        schema_version: SCHEMA_VERSION,
        kind: kind_name(&doc.plan),
        mu: pt.mu,
        sigma: pt.sigma,
        result: &result,
    }))
}
