//! Causal concepts, model pairs and decisions.

use serde::{Deserialize, Serialize};

use crate::error::{PaccError, Result};

/// Decision procedure attached to a concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sccs,
    Propensity,
    Iv2sls,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Sccs => "sccs",
            Method::Propensity => "propensity",
            Method::Iv2sls => "iv2sls",
        })
    }
}

/// Member of a model pair. `M1` carries an effect of at least δ, `M2` none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    M1,
    M2,
}

/// A concept "Y is δ-dependent on Z" together with the method that tests it.
///
/// δ is a risk ratio for SCCS (δ > 1) and a probability difference or
/// coefficient magnitude for the propensity and IV methods (0 < δ < 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub delta: f64,
    pub method: Method,
    #[serde(default)]
    pub description: String,
}

impl ConceptSpec {
    pub fn new(method: Method, delta: f64) -> Result<Self> {
        let spec = Self {
            delta,
            method,
            description: String::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.method {
            Method::Sccs => self.delta > 1.0 && self.delta.is_finite(),
            Method::Propensity | Method::Iv2sls => self.delta > 0.0 && self.delta < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(PaccError::invalid(format!(
                "delta {} out of range for method {}",
                self.delta, self.method
            )))
        }
    }
}

/// Output of a decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub chosen: Model,
    #[serde(with = "crate::io::signed_float")]
    pub statistic: f64,
    pub threshold: f64,
}

impl Decision {
    /// One-sided rule: M1 iff `statistic >= threshold`.
    pub fn at_least(statistic: f64, threshold: f64) -> Self {
        let chosen = if statistic >= threshold { Model::M1 } else { Model::M2 };
        Self {
            chosen,
            statistic,
            threshold,
        }
    }

    /// Two-sided rule: M1 iff `|statistic| > threshold`.
    pub fn magnitude_exceeds(statistic: f64, threshold: f64) -> Self {
        let chosen = if statistic.abs() > threshold { Model::M1 } else { Model::M2 };
        Self {
            chosen,
            statistic,
            threshold,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_ranges_per_method() {
        assert!(ConceptSpec::new(Method::Sccs, 2.0).is_ok());
        assert!(ConceptSpec::new(Method::Sccs, 1.0).is_err());
        assert!(ConceptSpec::new(Method::Sccs, 0.5).is_err());
        assert!(ConceptSpec::new(Method::Propensity, 0.5).is_ok());
        assert!(ConceptSpec::new(Method::Propensity, 1.0).is_err());
        assert!(ConceptSpec::new(Method::Iv2sls, 0.0).is_err());
    }

    #[test]
    fn tie_rules() {
        assert_eq!(Decision::at_least(0.5, 0.5).chosen, Model::M1);
        assert_eq!(Decision::magnitude_exceeds(0.5, 0.5).chosen, Model::M2);
        assert_eq!(Decision::magnitude_exceeds(-0.6, 0.5).chosen, Model::M1);
        assert_eq!(Decision::at_least(f64::INFINITY, 0.3).chosen, Model::M1);
        assert_eq!(Decision::at_least(f64::NEG_INFINITY, 0.3).chosen, Model::M2);
    }

    #[test]
    fn decision_json_keeps_infinities() {
        let d = Decision::at_least(f64::NEG_INFINITY, 0.25);
        let s = serde_json::to_string(&d).unwrap();
        let back: Decision = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }
}
