//! Model serialization to a versioned JSON document.
//!
//! Every real number is stored as the 16-digit hexadecimal encoding of its
//! IEEE-754 bit pattern so round-trips are bit-exact (decimal formatting is
//! never involved). The Cholesky factor and solve caches are recomputed on
//! load from the stored training data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GaussianProcess, Hyperparameters, InputTransform, OutcomeTransform};

/// Version of the document schema produced by [`to_json`].
pub const FORMAT_VERSION: u32 = 1;

fn encode(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn decode(s: &str) -> Result<f64> {
    if s.len() != 16 {
        return Err(Error::invalid(format!("bad real encoding '{s}': expected 16 hex digits")));
    }
    let bits = u64::from_str_radix(s, 16)
        .map_err(|_| Error::invalid(format!("bad real encoding '{s}'")))?;
    Ok(f64::from_bits(bits))
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    input_dim: usize,
    lengthscales: Vec<String>,
    outputscale: String,
    noise_variance: String,
    input_lower: Vec<String>,
    input_upper: Vec<String>,
    outcome_mean: String,
    outcome_std: String,
    /// Unit-cube training inputs, one row per observation.
    inputs: Vec<Vec<String>>,
    /// Standardized training targets.
    targets_std: Vec<String>,
}

/// Serializes the model to a JSON document.
pub fn to_json(gp: &GaussianProcess) -> String {
    let d = gp.dim();
    let doc = ModelDoc {
        format_version: FORMAT_VERSION,
        input_dim: d,
        lengthscales: gp.hyperparameters().lengthscales.iter().map(|v| encode(*v)).collect(),
        outputscale: encode(gp.hyperparameters().outputscale),
        noise_variance: encode(gp.hyperparameters().noise_variance),
        input_lower: gp.input_transform().lower().iter().map(|v| encode(*v)).collect(),
        input_upper: gp.input_transform().upper().iter().map(|v| encode(*v)).collect(),
        outcome_mean: encode(gp.outcome_transform().mean),
        outcome_std: encode(gp.outcome_transform().std),
        inputs: (0..gp.len())
            .map(|i| (0..d).map(|j| encode(gp.train_inputs()[(i, j)])).collect())
            .collect(),
        targets_std: gp.train_targets_std().iter().map(|v| encode(*v)).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model document serializes")
}

/// Restores a model from [`to_json`] output, recomputing the factorization
/// caches. Rejects documents with an unsupported format version.
pub fn from_json(text: &str) -> Result<GaussianProcess> {
    let doc: ModelDoc = serde_json::from_str(text)
        .map_err(|e| Error::invalid(format!("model document does not parse: {e}")))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion { found: doc.format_version, supported: FORMAT_VERSION });
    }
    let d = doc.input_dim;
    if doc.lengthscales.len() != d || doc.input_lower.len() != d || doc.input_upper.len() != d {
        return Err(Error::invalid("model document dimension fields disagree"));
    }
    let ls = DVector::from_iterator(
        d,
        doc.lengthscales.iter().map(|s| decode(s)).collect::<Result<Vec<_>>>()?,
    );
    let hyper = Hyperparameters::new(ls, decode(&doc.outputscale)?, decode(&doc.noise_variance)?)?;
    let bounds: Vec<(f64, f64)> = doc
        .input_lower
        .iter()
        .zip(doc.input_upper.iter())
        .map(|(lo, hi)| Ok((decode(lo)?, decode(hi)?)))
        .collect::<Result<Vec<_>>>()?;
    let input = InputTransform::new(&bounds)?;
    let outcome =
        OutcomeTransform { mean: decode(&doc.outcome_mean)?, std: decode(&doc.outcome_std)? };
    let n = doc.inputs.len();
    if doc.targets_std.len() != n {
        return Err(Error::invalid(format!(
            "model document has {n} input rows but {} targets",
            doc.targets_std.len()
        )));
    }
    let mut inputs = DMatrix::zeros(n, d);
    for (i, row) in doc.inputs.iter().enumerate() {
        if row.len() != d {
            return Err(Error::invalid(format!("input row {i} has length {}", row.len())));
        }
        for (j, s) in row.iter().enumerate() {
            inputs[(i, j)] = decode(s)?;
        }
    }
    let targets = DVector::from_iterator(
        n,
        doc.targets_std.iter().map(|s| decode(s)).collect::<Result<Vec<_>>>()?,
    );
    GaussianProcess::from_parts(inputs, targets, hyper, input, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_gp() -> GaussianProcess {
        let inputs = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.6, 0.9, 0.4, 0.5]);
        let targets = DVector::from_column_slice(&[0.3, -1.7, 2.2]);
        let hyper = Hyperparameters::new(
            DVector::from_column_slice(&[0.31415926535897931, 0.9]),
            1.25,
            0.0625,
        )
        .unwrap();
        GaussianProcess::with_hyperparameters(
            inputs,
            &targets,
            hyper,
            InputTransform::new(&[(-5.0, 10.0), (0.0, 1.0)]).unwrap(),
            OutcomeTransform::from_data(&targets),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let gp = sample_gp();
        let restored = from_json(&to_json(&gp)).unwrap();
        assert_eq!(gp.hyperparameters(), restored.hyperparameters());
        assert_eq!(gp.train_inputs(), restored.train_inputs());
        assert_eq!(gp.train_targets_std(), restored.train_targets_std());
        assert_eq!(gp.input_transform(), restored.input_transform());
        assert_eq!(gp.outcome_transform(), restored.outcome_transform());
        // Recomputed caches give identical posteriors.
        let q = DMatrix::from_row_slice(2, 2, &[0.25, 0.5, 0.75, 0.25]);
        let (m0, c0) = gp.posterior(&q).unwrap();
        let (m1, c1) = restored.posterior(&q).unwrap();
        assert_eq!(m0, m1);
        assert_eq!(c0, c1);
    }

    #[test]
    fn round_trip_survives_awkward_values() {
        // Denormals, negative zero, and values with no finite decimal
        // representation must survive unchanged.
        for v in [5e-324, -0.0, 1.0 / 3.0, f64::MIN_POSITIVE, 0.1 + 0.2] {
            assert_eq!(decode(&encode(v)).unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn future_format_version_is_rejected() {
        let gp = sample_gp();
        let doc = to_json(&gp).replace("\"format_version\": 1", "\"format_version\": 99");
        match from_json(&doc) {
            Err(Error::FormatVersion { found, supported }) => {
                assert_eq!(found, 99);
                assert_eq!(supported, 1);
            }
            other => panic!("expected a format-version error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_document_is_a_parse_error() {
        assert!(from_json("{not json").is_err());
        assert!(from_json("{}").is_err());
    }
}
