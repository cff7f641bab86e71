//! JSON front end over the bound evaluators, one request per call.
//!
//! A request is an object tagged by `"op"`:
//!
//! ```json
//! {"op": "kmeans_rate", "r": 100, "k": 2, "d": 2}
//! ```

use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    admissible_beta, exponent_a, far_field_bernstein, guaranteed_rate, implicit_bound,
    kmeans_rate, lederer_tail, reverse_holder_check, BernsteinProfile, BoundParams, LedererInput,
};
use crate::error::Result;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    ExponentA {
        l: f64,
        r: f64,
        c_entropy: f64,
        beta: f64,
        alpha: f64,
    },
    AdmissibleBeta {
        r: f64,
        c_entropy: f64,
        alpha: f64,
    },
    GuaranteedRate {
        params: BoundParams,
        profile: BernsteinProfile,
    },
    KmeansRate {
        r: f64,
        k: usize,
        d: usize,
    },
    LedererTail(LedererInput),
    ReverseHolder {
        values: Vec<f64>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        r: f64,
    },
    ImplicitBound {
        a: f64,
        b: f64,
        nu: f64,
    },
    FarField {
        w: f64,
        r: f64,
        alpha: f64,
    },
}

pub fn evaluate(request: &Request) -> Result<Value> {
    Ok(match request {
        Request::ExponentA {
            l,
            r,
            c_entropy,
            beta,
            alpha,
        } => json!({ "value": exponent_a(*l, *r, *c_entropy, *beta, *alpha) }),
        Request::AdmissibleBeta { r, c_entropy, alpha } => {
            let a = admissible_beta(*r, *c_entropy, *alpha)?;
            json!({ "beta_max": a.beta_max, "empty": a.is_empty() })
        }
        Request::GuaranteedRate { params, profile } => {
            params.validate_rate_regime()?;
            json!({ "beta_max": guaranteed_rate(params, profile)? })
        }
        Request::KmeansRate { r, k, d } => json!({ "beta_max": kmeans_rate(*r, *k, *d)? }),
        Request::LedererTail(input) => serde_json::to_value(lederer_tail(input)?)?,
        Request::ReverseHolder { values, weights, r } => {
            serde_json::to_value(reverse_holder_check(values, weights.as_deref(), *r)?)?
        }
        Request::ImplicitBound { a, b, nu } => json!({ "value": implicit_bound(*a, *b, *nu)? }),
        Request::FarField { w, r, alpha } => serde_json::to_value(far_field_bernstein(*w, *r, *alpha)?)?,
    })
}

/// Parses and evaluates a request given as JSON text.
pub fn eval_json(text: &str) -> Result<Value> {
    let request: Request = serde_json::from_str(text)?;
    evaluate(&request)
}
