//! Uncertainty JSON documents.
//!
//! ```json
//! {"kind":"mvn","mean":[0.0,1.0],"cov":[[1.0,0.0],[0.0,1.0]]}
//! {"kind":"norta","marginals":[{"family":"exponential","rate":1.0}],"spearman":[[1.0]]}
//! ```
//!
//! A file holds one such object, applied to every sample, or an array with
//! one object per sample. An `mvn` entry without `mean` is centred on the
//! sample. A `norta` entry with `"additive": true` describes noise added to
//! the sample, so each marginal is translated by the sample coordinate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvn::Gaussian;
use crate::norta::{Marginal, NortaModel};
use crate::robustness::Uncertainty;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UncertaintySpec {
    Mvn {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        cov: Vec<Vec<f64>>,
    },
    Norta {
        #[serde(default)]
        additive: bool,
        marginals: Vec<Marginal>,
        spearman: Vec<Vec<f64>>,
    },
}

impl UncertaintySpec {
    /// The distribution for a concrete sample.
    pub fn resolve(&self, sample: &[f64]) -> Result<Uncertainty> {
        match self {
            UncertaintySpec::Mvn { mean, cov } => {
                let mean = mean.clone().unwrap_or_else(|| sample.to_vec());
                Ok(Uncertainty::Gaussian(Gaussian::new(mean, cov)?))
            }
            UncertaintySpec::Norta {
                additive,
                marginals,
                spearman,
            } => {
                let n = NortaModel::new(marginals.clone(), spearman)?;
                if *additive {
                    Ok(Uncertainty::Norta(n.shifted(sample)?))
                } else {
                    Ok(Uncertainty::Norta(n))
                }
            }
        }
    }
}

/// Parsed uncertainty file.
#[derive(Clone, Debug, PartialEq)]
pub enum UncertaintyFile {
    Shared(UncertaintySpec),
    PerSample(Vec<UncertaintySpec>),
}

impl UncertaintyFile {
    /// Spec for sample `i`, or a schema error if a per-sample list is too
    /// short.
    pub fn for_sample(&self, i: usize) -> Result<&UncertaintySpec> {
        match self {
            UncertaintyFile::Shared(s) => Ok(s),
            UncertaintyFile::PerSample(v) => v.get(i).ok_or_else(|| Error::Schema {
                path: format!("$[{i}]"),
                message: format!("no uncertainty entry for sample {i} ({} given)", v.len()),
            }),
        }
    }
}

pub fn parse_uncertainty(text: &str) -> Result<UncertaintyFile> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value {
        serde_json::Value::Array(items) => items
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::from_value(v).map_err(|e| Error::Schema {
                    path: format!("$[{i}]"),
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(UncertaintyFile::PerSample),
        v => serde_json::from_value(v)
            .map(UncertaintyFile::Shared)
            .map_err(|e| Error::Schema {
                path: "$".into(),
                message: e.to_string(),
            }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mvn_defaults_to_sample_mean() {
        let f = parse_uncertainty(r#"{"kind":"mvn","cov":[[1,0],[0,2]]}"#).unwrap();
        let u = f.for_sample(7).unwrap().resolve(&[3.0, 4.0]).unwrap();
        match u {
            Uncertainty::Gaussian(g) => {
                assert_eq!(g.mean().as_slice(), &[3.0, 4.0]);
                assert_eq!(g.cov()[(1, 1)], 2.0);
            }
            _ => panic!("expected gaussian"),
        }
    }

    #[test]
    fn explicit_mean_wins() {
        let f = parse_uncertainty(r#"{"kind":"mvn","mean":[1,1],"cov":[[1,0],[0,1]]}"#).unwrap();
        let Uncertainty::Gaussian(g) = f.for_sample(0).unwrap().resolve(&[3.0, 4.0]).unwrap() else {
            panic!()
        };
        assert_eq!(g.mean().as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn additive_norta_is_shifted() {
        let f = parse_uncertainty(
            r#"{"kind":"norta","additive":true,"marginals":[{"family":"exponential","rate":1.0}],"spearman":[[1]]}"#,
        )
        .unwrap();
        let Uncertainty::Norta(n) = f.for_sample(0).unwrap().resolve(&[2.0]).unwrap() else {
            panic!()
        };
        assert_eq!(n.marginals()[0].support().0, 2.0);
    }

    #[test]
    fn per_sample_list() {
        let f = parse_uncertainty(
            r#"[{"kind":"mvn","cov":[[1]]},{"kind":"mvn","cov":[[4]]}]"#,
        )
        .unwrap();
        assert!(f.for_sample(1).is_ok());
        assert!(matches!(f.for_sample(2), Err(Error::Schema { .. })));
    }

    #[test]
    fn rejects_bad_documents() {
        for bad in [
            r#"{"kind":"gamma","cov":[[1]]}"#,
            r#"{"kind":"mvn"}"#,
            r#"{"kind":"mvn","cov":[[1]],"extra":1}"#,
            r#"[{"kind":"mvn","cov":[[1]]}, 3]"#,
            "not json",
        ] {
            assert!(parse_uncertainty(bad).is_err(), "{bad}");
        }
        let f = parse_uncertainty(r#"{"kind":"mvn","cov":[[1,2],[2,1]]}"#).unwrap();
        assert!(matches!(
            f.for_sample(0).unwrap().resolve(&[0.0, 0.0]),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
