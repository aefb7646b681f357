//! Jensen–Shannon divergence and argmax over judgment distributions.

use crate::domain::{DistributionError, JudgmentClass, JudgmentDistribution};

/// `sum_i p_i * log2(p_i / m_i)`, with `0 * log(0 / m) = 0`.
fn kl_to_mixture(p: &[f64; 3], m: &[f64; 3]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen–Shannon divergence in bits, so the result lies in `[0, 1]`.
///
/// The mixture is computed componentwise as `(p + q) / 2`, which makes the
/// result exactly symmetric and exactly zero for identical inputs.
pub fn jsd(p: &JudgmentDistribution, q: &JudgmentDistribution) -> f64 {
    let (p, q) = (p.as_array(), q.as_array());
    let m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0];
    let d = 0.5 * kl_to_mixture(&p, &m) + 0.5 * kl_to_mixture(&q, &m);
    d.clamp(0.0, 1.0)
}

/// [`jsd`] on raw arrays, validating both against the distribution invariants.
pub fn jsd_raw(p: [f64; 3], q: [f64; 3]) -> Result<f64, DistributionError> {
    Ok(jsd(
        &JudgmentDistribution::from_array(p)?,
        &JudgmentDistribution::from_array(q)?,
    ))
}

/// Most probable class; exact ties go to the earliest of bad, ok, good.
pub fn argmax_judgment(p: &JudgmentDistribution) -> JudgmentClass {
    let mut best = JudgmentClass::Bad;
    for class in [JudgmentClass::Ok, JudgmentClass::Good] {
        if p.prob(class) > p.prob(best) {
            best = class;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(a: f64, b: f64, c: f64) -> JudgmentDistribution {
        JudgmentDistribution::new(a, b, c).unwrap()
    }

    // 0.5*KL(p||m) + 0.5*KL(q||m) with m = (0.45, 0.1, 0.45), evaluated
    // independently in double precision.
    const JSD_ASYMMETRIC_PAIR: f64 = 0.447067498701919;

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&d(1.0, 0.0, 0.0), &d(1.0, 0.0, 0.0)), 0.0);
        assert_eq!(jsd(&d(1.0, 0.0, 0.0), &d(0.0, 1.0, 0.0)), 1.0);
        let v = jsd(&d(0.8, 0.1, 0.1), &d(0.1, 0.1, 0.8));
        assert!((v - JSD_ASYMMETRIC_PAIR).abs() < 1e-12, "{v}");
    }

    #[test]
    fn jsd_raw_rejects_bad_sums() {
        assert!(jsd_raw([0.5, 0.5, 0.5], [1.0, 0.0, 0.0]).is_err());
        assert!(jsd_raw([0.5, 0.5, 0.0], [1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_judgment(&d(0.1, 0.2, 0.7)), JudgmentClass::Good);
        assert_eq!(argmax_judgment(&d(0.4, 0.4, 0.2)), JudgmentClass::Bad);
        assert_eq!(argmax_judgment(&d(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)), JudgmentClass::Bad);
        assert_eq!(argmax_judgment(&d(0.2, 0.4, 0.4)), JudgmentClass::Ok);
    }

    fn dist() -> impl Strategy<Value = JudgmentDistribution> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)
            .prop_filter("nonzero", |(a, b, c)| a + b + c > 1e-9)
            .prop_map(|(a, b, c)| JudgmentDistribution::from_scores([a, b, c]).unwrap())
    }

    proptest! {
        #[test]
        fn argmax_scale_invariant(p in dist(), k in 0.01f64..100.0) {
            let scaled = JudgmentDistribution::from_scores(p.as_array().map(|x| x * k)).unwrap();
            prop_assert_eq!(argmax_judgment(&p), argmax_judgment(&scaled));
        }

        #[test]
        fn jsd_symmetric_bounded(p in dist(), q in dist()) {
            let a = jsd(&p, &q);
            prop_assert_eq!(a, jsd(&q, &p));
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(jsd(&p, &p), 0.0);
        }
    }
}
