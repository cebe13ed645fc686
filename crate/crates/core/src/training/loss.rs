//! Cross-entropy against soft targets, in nats.
//!
//! `loss = -Σ_c Q(c) ln P(c)` with `P` clamped below at [`PROB_FLOOR`]. Terms
//! with `Q(c) = 0` are skipped, so they contribute exactly zero whatever
//! `P(c)` is.

use super::TrainError;

pub const PROB_FLOOR: f64 = 1e-12;

pub fn soft_cross_entropy(q: &[f64], p: &[f64]) -> Result<f64, TrainError> {
    if q.len() != p.len() {
        return Err(TrainError::DimensionMismatch(q.len(), p.len()));
    }
    let mut loss = 0.0;
    for (&qc, &pc) in q.iter().zip(p) {
        if qc != 0.0 {
            loss -= qc * pc.max(PROB_FLOOR).ln();
        }
    }
    Ok(loss)
}

/// Soft cross-entropy with a one-hot target.
pub fn hard_cross_entropy(label: usize, p: &[f64]) -> Result<f64, TrainError> {
    if label >= p.len() {
        return Err(TrainError::LabelOutOfRange {
            label,
            classes: p.len(),
        });
    }
    let mut q = vec![0.0; p.len()];
    q[label] = 1.0;
    soft_cross_entropy(&q, p)
}

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn entropy(q: &[f64]) -> f64 {
    soft_cross_entropy(q, q).expect("same length")
}

/// `KL(q ‖ p) = H(q, p) - H(q)`.
pub fn kl_divergence(q: &[f64], p: &[f64]) -> Result<f64, TrainError> {
    Ok(soft_cross_entropy(q, p)? - entropy(q))
}

/// Loss and logit gradient for a softmax output `p` against target `q`.
///
/// With clamping, only unclamped classes contribute:
/// `dz_k = p_k Σ_{c unclamped} q_c - q_k [k unclamped]`.
pub(crate) fn soft_ce_with_logit_grad(q: &[f64], p: &[f64]) -> (f64, Vec<f64>) {
    let loss = soft_cross_entropy(q, p).expect("lengths checked by caller");
    let active: f64 = q
        .iter()
        .zip(p)
        .filter(|(&qc, &pc)| qc != 0.0 && pc > PROB_FLOOR)
        .map(|(&qc, _)| qc)
        .sum();
    let grad = q
        .iter()
        .zip(p)
        .map(|(&qk, &pk)| {
            let own = if pk > PROB_FLOOR { qk } else { 0.0 };
            pk * active - own
        })
        .collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_values() {
        assert_eq!(soft_cross_entropy(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        let ln2 = soft_cross_entropy(&[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!((ln2 - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((ln2 - 0.693147).abs() < 1e-6);
        // -(0.7 ln 0.6 + 0.3 ln 0.4), evaluated at 30 digits.
        let v = soft_cross_entropy(&[0.7, 0.3], &[0.6, 0.4]).unwrap();
        assert!((v - 0.632_465_156_198_44).abs() < 1e-14, "{v}");
    }

    #[test]
    fn zero_target_terms_ignore_p() {
        assert_eq!(soft_cross_entropy(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(
            soft_cross_entropy(&[0.0, 1.0], &[0.0, 1.0]).unwrap(),
            soft_cross_entropy(&[0.0, 1.0], &[f64::NAN, 1.0]).unwrap()
        );
    }

    #[test]
    fn clamping() {
        let v = soft_cross_entropy(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn hard_ce_cases() {
        let v = hard_cross_entropy(0, &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(hard_cross_entropy(1, &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            hard_cross_entropy(2, &[0.5, 0.5]),
            Err(TrainError::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            soft_cross_entropy(&[1.0], &[0.5, 0.5]),
            Err(TrainError::DimensionMismatch(1, 2))
        ));
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn one_hot_identity(p in simplex(3), y in 0usize..3) {
            let mut q = vec![0.0; 3];
            q[y] = 1.0;
            prop_assert_eq!(
                soft_cross_entropy(&q, &p).unwrap().to_bits(),
                hard_cross_entropy(y, &p).unwrap().to_bits()
            );
        }

        #[test]
        fn gibbs_inequality(q in simplex(3), p in simplex(3)) {
            prop_assert!(soft_cross_entropy(&q, &p).unwrap() >= entropy(&q) - 1e-12);
            prop_assert!(kl_divergence(&q, &p).unwrap() >= -1e-12);
        }

        #[test]
        fn logit_gradient_matches_finite_differences(q in simplex(3), z in prop::collection::vec(-3.0f64..3.0, 3)) {
            let loss_at = |z: &[f64]| soft_cross_entropy(&q, &crate::tensor::softmax(z)).unwrap();
            let (_, grad) = soft_ce_with_logit_grad(&q, &crate::tensor::softmax(&z));
            for k in 0..3 {
                let h = 1e-6;
                let mut zp = z.clone();
                zp[k] += h;
                let mut zm = z.clone();
                zm[k] -= h;
                let fd = (loss_at(&zp) - loss_at(&zm)) / (2.0 * h);
                prop_assert!((fd - grad[k]).abs() < 1e-7);
            }
        }
    }
}
