use serde::{Deserialize, Serialize};

use crate::linalg::two_sided_normal_p;

pub const INTERCEPT: &str = "(Intercept)";

/// One row of a `term,estimate,se,z,p` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p: Option<f64>,
}

impl Coefficient {
    /// Wald statistics from an estimate and its standard error. A missing,
    /// zero or non-finite `se` leaves `z` and `p` undefined.
    pub fn wald(term: impl Into<String>, estimate: f64, se: Option<f64>) -> Self {
        let se = se.filter(|s| s.is_finite() && *s > 0.0);
        let z = se.map(|s| estimate / s);
        Coefficient {
            term: term.into(),
            estimate,
            se,
            z,
            p: z.map(two_sided_normal_p),
        }
    }

    pub fn is_intercept(&self) -> bool {
        self.term == INTERCEPT
    }
}
