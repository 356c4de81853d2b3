//! Plan files: versioned JSON holding a plan, its limits and, for designed
//! plans, how it was obtained.

use amdsp::designer::{OneSidedAmDesign, TighteningTrace};
use amdsp::double_plan::{DoublePlan, OcEstimate, OcMethod, QuadratureConfig};
use amdsp::isoline::{ProcessPoint, SpecLimits};
use amdsp::one_sided::OneSidedDoublePlan;
use amdsp::single_plan::{DesignRequirement, SingleDesign, SinglePlan};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "kebab-case")]
pub enum PlanParameters {
    Single(SinglePlan),
    DoubleTwoSided(DoublePlan),
    /// Thresholds on the `√n(x̄ − U)/s` scale, upper limit only.
    DoubleOneSided(OneSidedDoublePlan),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub plan: PlanParameters,
    pub limits: SpecLimits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// OC at one band extreme of the final plan, re-evaluated with an error
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckedPoint {
    pub p: f64,
    pub point: ProcessPoint,
    pub oc: OcEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub requirement: DesignRequirement,
    pub quadrature: QuadratureConfig,
    pub oc_method: OcMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single: Option<SingleDesign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_sided: Option<OneSidedAmDesign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TighteningTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max_at: Option<ProcessPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckedPoint>,
}

/// Rounds to 10 significant digits, the precision plan thresholds are
/// published with.
pub fn sig10(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.9e}").parse().unwrap_or(x)
}

impl PlanParameters {
    /// Copy with every threshold rounded by [`sig10`].
    pub fn rounded(&self) -> amdsp::Result<Self> {
        Ok(match *self {
            Self::Single(p) => Self::Single(SinglePlan::new(p.n(), sig10(p.k()))?),
            Self::DoubleTwoSided(p) => Self::DoubleTwoSided(DoublePlan::new(
                p.n1(),
                sig10(p.k1()),
                sig10(p.k2()),
                p.n2(),
                sig10(p.k3()),
            )?),
            Self::DoubleOneSided(p) => Self::DoubleOneSided(OneSidedDoublePlan::new(
                p.n1,
                sig10(p.l1),
                sig10(p.l2),
                p.n2,
                sig10(p.l3),
            )?),
        })
    }

    /// Checks invariants that deserialization alone does not.
    pub fn validate(&self) -> amdsp::Result<()> {
        if let Self::DoubleOneSided(p) = self {
            OneSidedDoublePlan::new(p.n1, p.l1, p.l2, p.n2, p.l3)?;
        }
        Ok(())
    }

    pub fn sample_sizes(&self) -> (u32, u32) {
        match self {
            Self::Single(p) => (p.n(), 0),
            Self::DoubleTwoSided(p) => (p.n1(), p.n2()),
            Self::DoubleOneSided(p) => (p.n1, p.n2),
        }
    }
}

impl PlanDocument {
    pub fn new(
        plan: PlanParameters,
        limits: SpecLimits,
        provenance: Option<Provenance>,
    ) -> amdsp::Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            plan: plan.rounded()?,
            limits,
            provenance,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| format!("malformed plan document: {e}"))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            ));
        }
        doc.plan.validate().map_err(|e| e.to_string())?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan documents always serialize")
    }
}
