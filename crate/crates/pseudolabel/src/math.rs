//! Small numeric helpers shared across the crate: stable sigmoid, probability
//! clamping, log-sum-exp reductions, and seed derivation.

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any
/// logarithm so that log-likelihoods stay finite on separable data.
pub const PROB_CLAMP: f64 = 1e-12;

/// Numerically stable logistic function.
///
/// Evaluates `1 / (1 + exp(-eta))` without overflow in either tail.
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Clamps a probability into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Log of `sum(exp(x))` with the usual max-shift stabilization.
///
/// Empty input returns negative infinity (the log of an empty sum). The
/// reduction order is the slice order, so results are reproducible.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // All terms -inf (empty or degenerate): the sum is exp(m) exactly.
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Log-softmax over a slice: `x_i - log_sum_exp(x)`.
///
/// The exponentials of the result sum to one.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| x - lse).collect()
}

/// Derives an independent stream seed from a base seed and a stream index.
///
/// `mix_seed(base, 0) == base`, so index zero denotes the base stream itself.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// FNV-1a 64-bit hash, used to fingerprint configurations for provenance.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigmoid_matches_definition_in_safe_range() {
        for &eta in &[-30.0, -2.5, -1e-8, 0.0, 1e-8, 0.7, 4.0, 30.0] {
            let direct = 1.0 / (1.0 + (-eta as f64).exp());
            assert_relative_eq!(sigmoid(eta), direct, max_relative = 1e-14);
        }
    }

    #[test]
    fn sigmoid_is_stable_in_the_tails() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) > 0.0 || sigmoid(-800.0) == 0.0);
        assert!(sigmoid(-800.0).is_finite());
        assert!(sigmoid(f64::MAX) == 1.0);
    }

    #[test]
    fn sigmoid_symmetry() {
        for &eta in &[0.3, 1.7, 12.0] {
            assert_relative_eq!(sigmoid(eta) + sigmoid(-eta), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn clamp_prob_bounds() {
        assert_eq!(clamp_prob(0.0), PROB_CLAMP);
        assert_eq!(clamp_prob(1.0), 1.0 - PROB_CLAMP);
        assert_eq!(clamp_prob(0.25), 0.25);
    }

    #[test]
    fn log_sum_exp_agrees_with_naive_when_safe() {
        let xs = [0.1f64, -0.4, 1.2, 0.0];
        let naive: f64 = xs.iter().map(|&x| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&xs), naive, epsilon = 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_large_offsets() {
        // Shift invariance: lse(x + c) = lse(x) + c even when exp overflows.
        let xs = [1000.0, 1000.0 + (3f64).ln()];
        assert_relative_eq!(log_sum_exp(&xs), 1000.0 + (4f64).ln(), epsilon = 1e-10);
        let neg = [-1000.0, -1000.0];
        assert_relative_eq!(log_sum_exp(&neg), -1000.0 + (2f64).ln(), epsilon = 1e-10);
    }

    #[test]
    fn log_sum_exp_of_empty_is_neg_infinity() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_softmax_normalizes() {
        let xs = [3.0, -1.0, 250.0, 249.0];
        let total: f64 = log_softmax(&xs).iter().map(|l| l.exp()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn log_softmax_direct_arithmetic() {
        // Scores {0, log 3} normalize to probabilities {1/4, 3/4}.
        let ls = log_softmax(&[0.0, 3f64.ln()]);
        assert_relative_eq!(ls[0].exp(), 0.25, epsilon = 1e-12);
        assert_relative_eq!(ls[1].exp(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn mix_seed_identity_at_stream_zero() {
        assert_eq!(mix_seed(42, 0), 42);
        assert_ne!(mix_seed(42, 1), mix_seed(42, 2));
    }

    #[test]
    fn fnv1a64_known_vectors() {
        // Reference values for the 64-bit FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
