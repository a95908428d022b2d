//! JSON fragments for run reports. Every float is rounded to 12
//! significant digits.

use serde_json::{json, Value};

use robust_pigou_core::config::RunConfig;
use robust_pigou_core::io::round_sig12;
use robust_pigou_core::{Benchmark, Policy, Scenario, Sign, UtilityModel};

fn opt(x: Option<f64>) -> Value {
    x.map(|v| json!(round_sig12(v))).unwrap_or(Value::Null)
}

pub fn scenario_json(s: &Scenario, rc: &RunConfig) -> Value {
    let utility = match s.utility {
        UtilityModel::Quadratic { beta } => {
            json!({ "family": "quadratic", "beta": round_sig12(beta) })
        }
        UtilityModel::LinearUnitDemand => json!({ "family": "unit" }),
    };
    json!({
        "utility": utility,
        "types": {
            "n": s.types.len(),
            "lowest": round_sig12(s.types.lowest()),
            "highest": round_sig12(s.types.highest()),
        },
        "cost": round_sig12(s.cost),
        "mu": round_sig12(s.mu),
        "cap": round_sig12(s.cap),
        "sign": match s.sign {
            Sign::Positive => "positive",
            Sign::Negative => "negative",
        },
        "benchmark": match s.benchmark {
            Benchmark::Unknown => "unknown",
            Benchmark::PositiveCorr => "positive_corr",
            Benchmark::NegativeCorr => "negative_corr",
        },
        "xi_bar": opt(s.xi_bar),
        "cost_gamma": opt(rc.gamma),
        "capacity": opt(rc.capacity),
    })
}

pub fn policy_json(p: &Policy) -> Value {
    json!({
        "kind": p.kind.name(),
        "parameter": opt(p.kind.parameter()),
        "guarantee": round_sig12(p.guarantee),
        "note": p.note,
        "foc_residual": opt(p.diagnostics.foc_residual),
        "iterations": p.diagnostics.iterations,
    })
}
