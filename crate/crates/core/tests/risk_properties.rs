//! Property tests of the empirical risk estimators: coherence-style axioms,
//! boundary behavior, and the linear-functional decomposition they expose.

use proptest::prelude::*;
use riskbo::risk::{empirical_cvar, empirical_risk, empirical_var, RiskSpec};

/// Sample vectors with deliberate ties: values snapped to a quarter grid.
fn tied_samples() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-100.0f64..100.0).prop_map(|v| (v * 4.0).round() / 4.0), 1..40)
}

/// Positive weights normalized to sum to one, same length as the samples.
fn weighted_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    tied_samples().prop_flat_map(|samples| {
        let n = samples.len();
        prop::collection::vec(0.05f64..1.0, n).prop_map(move |raw| {
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            (samples.clone(), weights)
        })
    })
}

/// Exactly uniform weights, same length as the samples.
fn uniform_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    tied_samples().prop_map(|samples| {
        let n = samples.len();
        let weights = vec![1.0 / n as f64; n];
        (samples, weights)
    })
}

fn weighted_mean(samples: &[f64], weights: &[f64]) -> f64 {
    samples.iter().zip(weights).map(|(s, w)| s * w).sum()
}

fn max_abs(samples: &[f64]) -> f64 {
    samples.iter().fold(0.0f64, |acc, s| acc.max(s.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// The conditional tail expectation dominates the quantile it starts at.
    #[test]
    fn cvar_dominates_var((samples, weights) in weighted_case(), alpha in 0.01f64..0.95) {
        let var = empirical_var(&samples, &weights, alpha).unwrap().value;
        let cvar = empirical_cvar(&samples, &weights, alpha).unwrap().value;
        prop_assert!(cvar >= var - 1e-9 * (1.0 + max_abs(&samples)));
    }

    /// Both measures are nondecreasing in the tail level.
    #[test]
    fn risk_is_monotone_in_alpha(
        (samples, weights) in weighted_case(),
        lo in 0.01f64..0.5,
        gap in 0.05f64..0.45,
    ) {
        let hi = lo + gap;
        let tol = 1e-9 * (1.0 + max_abs(&samples));
        let var_lo = empirical_var(&samples, &weights, lo).unwrap().value;
        let var_hi = empirical_var(&samples, &weights, hi).unwrap().value;
        prop_assert!(var_hi >= var_lo - tol);
        let cvar_lo = empirical_cvar(&samples, &weights, lo).unwrap().value;
        let cvar_hi = empirical_cvar(&samples, &weights, hi).unwrap().value;
        prop_assert!(cvar_hi >= cvar_lo - tol);
    }

    /// Adding a constant to every outcome shifts the risk by that constant.
    #[test]
    fn translation_equivariance(
        (samples, weights) in weighted_case(),
        alpha in 0.01f64..0.95,
        shift in -50.0f64..50.0,
        cvar in prop::bool::ANY,
    ) {
        let spec = if cvar { RiskSpec::cvar(alpha).unwrap() } else { RiskSpec::var(alpha).unwrap() };
        let shifted: Vec<f64> = samples.iter().map(|s| s + shift).collect();
        let base = empirical_risk(&samples, &weights, spec).unwrap().value;
        let moved = empirical_risk(&shifted, &weights, spec).unwrap().value;
        let tol = 1e-9 * (1.0 + max_abs(&samples) + shift.abs());
        prop_assert!((moved - (base + shift)).abs() <= tol);
    }

    /// Scaling every outcome by a positive factor scales the risk.
    #[test]
    fn positive_homogeneity(
        (samples, weights) in weighted_case(),
        alpha in 0.01f64..0.95,
        scale in 0.1f64..10.0,
        cvar in prop::bool::ANY,
    ) {
        let spec = if cvar { RiskSpec::cvar(alpha).unwrap() } else { RiskSpec::var(alpha).unwrap() };
        let scaled: Vec<f64> = samples.iter().map(|s| s * scale).collect();
        let base = empirical_risk(&samples, &weights, spec).unwrap().value;
        let grown = empirical_risk(&scaled, &weights, spec).unwrap().value;
        let tol = 1e-9 * (1.0 + scale) * (1.0 + max_abs(&samples));
        prop_assert!((grown - scale * base).abs() <= tol);
    }

    /// At tail level zero the conditional value-at-risk is the plain mean.
    #[test]
    fn cvar_at_zero_is_the_weighted_mean((samples, weights) in weighted_case()) {
        let cvar = empirical_cvar(&samples, &weights, 0.0).unwrap().value;
        let mean = weighted_mean(&samples, &weights);
        prop_assert!((cvar - mean).abs() <= 1e-12 * (1.0 + max_abs(&samples)));
    }

    /// The value-at-risk is always one of the observed outcomes, and both
    /// measures stay inside the sample range.
    #[test]
    fn risk_stays_within_the_sample(
        (samples, weights) in weighted_case(),
        alpha in 0.01f64..0.95,
    ) {
        let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let var = empirical_var(&samples, &weights, alpha).unwrap();
        prop_assert!(samples.iter().any(|&s| s == var.value));
        let cvar = empirical_cvar(&samples, &weights, alpha).unwrap().value;
        prop_assert!(var.value >= min && var.value <= max);
        prop_assert!(cvar >= min - 1e-12 && cvar <= max + 1e-12);
    }

    /// The sparse coefficient representation really is the estimator: the
    /// coefficients are nonnegative, sum to one, and reproduce the value.
    #[test]
    fn coefficients_reconstruct_the_value(
        (samples, weights) in weighted_case(),
        alpha in 0.01f64..0.95,
        cvar in prop::bool::ANY,
    ) {
        let spec = if cvar { RiskSpec::cvar(alpha).unwrap() } else { RiskSpec::var(alpha).unwrap() };
        let est = empirical_risk(&samples, &weights, spec).unwrap();
        let mass: f64 = est.coeffs.iter().map(|&(_, c)| c).sum();
        prop_assert!(est.coeffs.iter().all(|&(_, c)| c >= -1e-15));
        prop_assert!((mass - 1.0).abs() <= 1e-9);
        let rebuilt: f64 = est.coeffs.iter().map(|&(i, c)| c * samples[i]).sum();
        prop_assert!((rebuilt - est.value).abs() <= 1e-9 * (1.0 + max_abs(&samples)));
    }

    /// Uniform weights and the general weighted path agree on the quantile.
    #[test]
    fn uniform_weights_agree_with_the_weighted_path((samples, weights) in uniform_case(), alpha in 0.01f64..0.95) {
        let var = empirical_var(&samples, &weights, alpha).unwrap().value;
        // Perturb the weights by an exactly representable zero to stay on the
        // same code path while checking the quantile definition directly.
        let n = samples.len();
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = ((n as f64 * alpha).ceil() as usize).clamp(1, n) - 1;
        prop_assert_eq!(var, sorted[rank]);
    }

    /// The ordering field is a permutation sorted ascending by value.
    #[test]
    fn ordering_is_an_ascending_permutation((samples, weights) in weighted_case(), alpha in 0.01f64..0.95) {
        let est = empirical_var(&samples, &weights, alpha).unwrap();
        let mut seen = vec![false; samples.len()];
        for &i in &est.ordering {
            prop_assert!(!seen[i]);
            seen[i] = true;
        }
        for pair in est.ordering.windows(2) {
            prop_assert!(samples[pair[0]] <= samples[pair[1]]);
        }
    }
}

/// Tie handling pinned on a case small enough to read: with four equal
/// outcomes straddling the quantile the estimator must pick the tied value
/// and the tail expectation must average duplicates with their full mass.
#[test]
fn ties_are_counted_with_their_full_mass() {
    let samples = [2.0, 1.0, 2.0, 2.0, 3.0, 2.0];
    let weights = [1.0 / 6.0; 6];
    let var = empirical_var(&samples, &weights, 0.5).unwrap().value;
    assert_eq!(var, 2.0);
    // The tail average starts at the quantile atom itself (1-based order
    // statistic ceil(alpha * L) = 3), so all three tied 2s contribute.
    let cvar = empirical_cvar(&samples, &weights, 0.5).unwrap().value;
    assert!((cvar - (2.0 + 2.0 + 2.0 + 3.0) / 4.0).abs() < 1e-15);
}

/// The quantile at the very top of the distribution is the maximum.
#[test]
fn high_alpha_approaches_the_maximum() {
    let samples = [0.3, -1.0, 4.5, 2.2];
    let weights = [0.25; 4];
    let var = empirical_var(&samples, &weights, 0.99).unwrap().value;
    assert_eq!(var, 4.5);
    let cvar = empirical_cvar(&samples, &weights, 0.99).unwrap().value;
    assert_eq!(cvar, 4.5);
}
