//! Two-sided normal p-values and false discovery rate control.
//!
//! Edge detection uses the adaptive two-stage linear step-up procedure of
//! Benjamini, Krieger and Yekutieli. Stage one runs Benjamini-Hochberg at
//! `alpha / (1 + alpha)` to estimate the number of true nulls `m0`; stage two
//! runs the step-up rule at `alpha * m / m0`. Both stages are expressed through
//! step-up q-values so that a hypothesis is rejected exactly when its q-value
//! is at most `alpha`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Result of a multiple test over `m` hypotheses, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub pvalues: Vec<f64>,
    pub qvalues: Vec<f64>,
    pub rejected: Vec<bool>,
    pub alpha: f64,
    /// Estimated number of true null hypotheses used in the final stage.
    pub null_estimate: usize,
}

impl TestOutcome {
    pub fn rejection_count(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

/// `2 * (1 - Phi(|z|))`, evaluated through `erfc` so far tails do not cancel.
pub fn two_sided_pvalue(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

pub fn z_to_pvalues(z: &[f64]) -> Result<Vec<f64>> {
    if let Some(pos) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: pos + 1, col: 1 });
    }
    Ok(z.iter().map(|&v| two_sided_pvalue(v)).collect())
}

fn validate(pvalues: &[f64], alpha: f64) -> Result<()> {
    if pvalues.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("FDR level {alpha} outside (0, 1)")));
    }
    if let Some(pos) = pvalues.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument(format!(
            "p-value {} at position {} outside [0, 1]",
            pvalues[pos],
            pos + 1
        )));
    }
    Ok(())
}

/// Ascending order of p-values, ties broken by original index.
fn ascending_order(pvalues: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pvalues.len()).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    order
}

/// Step-up q-values `min_{j >= k} p_(j) * scale / j`, capped at one.
fn step_up_qvalues(pvalues: &[f64], order: &[usize], scale: f64) -> Vec<f64> {
    let m = pvalues.len();
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        let candidate = pvalues[idx] * scale / (rank + 1) as f64;
        running = running.min(candidate);
        q[idx] = running;
    }
    q
}

/// Plain Benjamini-Hochberg step-up procedure.
pub fn benjamini_hochberg(pvalues: &[f64], alpha: f64) -> Result<TestOutcome> {
    validate(pvalues, alpha)?;
    let m = pvalues.len();
    let order = ascending_order(pvalues);
    let qvalues = step_up_qvalues(pvalues, &order, m as f64);
    let rejected = qvalues.iter().map(|&q| q <= alpha).collect();
    Ok(TestOutcome { pvalues: pvalues.to_vec(), qvalues, rejected, alpha, null_estimate: m })
}

/// Adaptive two-stage step-up procedure at FDR level `alpha`.
pub fn adaptive_fdr_test(pvalues: &[f64], alpha: f64) -> Result<TestOutcome> {
    validate(pvalues, alpha)?;
    let m = pvalues.len();
    let order = ascending_order(pvalues);
    let bh_q = step_up_qvalues(pvalues, &order, m as f64);

    let stage_one_level = alpha / (1.0 + alpha);
    let r1 = bh_q.iter().filter(|&&q| q <= stage_one_level).count();
    let null_estimate = m - r1;

    if null_estimate == 0 {
        // every hypothesis is estimated non-null; all BH q-values are already
        // below the stage-one level
        let rejected = vec![true; m];
        return Ok(TestOutcome { pvalues: pvalues.to_vec(), qvalues: bh_q, rejected, alpha, null_estimate });
    }

    let qvalues = step_up_qvalues(pvalues, &order, null_estimate as f64);
    let rejected = qvalues.iter().map(|&q| q <= alpha).collect();
    Ok(TestOutcome { pvalues: pvalues.to_vec(), qvalues, rejected, alpha, null_estimate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Standard normal upper tail by composite Simpson quadrature of the
    /// density over [|z|, |z| + 40].
    fn upper_tail_quadrature(z: f64) -> f64 {
        let a = z.abs();
        let b = a + 40.0;
        let steps = 200_000;
        let h = (b - a) / steps as f64;
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = phi(a) + phi(b);
        for k in 1..steps {
            let x = a + k as f64 * h;
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * phi(x);
        }
        s * h / 3.0
    }

    #[test]
    fn zero_score_has_unit_pvalue() {
        assert_eq!(z_to_pvalues(&[0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn pvalue_matches_quadrature_oracle() {
        let oracle = 2.0 * upper_tail_quadrature(1.959964);
        let p = z_to_pvalues(&[1.959964, -1.959964]).unwrap();
        assert!((oracle - 0.05).abs() < 1e-6);
        assert!((p[0] - oracle).abs() < 1e-9);
        assert_eq!(p[0], p[1]);
        for z in [0.3, 1.0, 2.5, 4.0] {
            let p = two_sided_pvalue(z);
            assert!((p - 2.0 * upper_tail_quadrature(z)).abs() < 1e-10, "z = {z}");
        }
    }

    #[test]
    fn rejects_non_finite_scores() {
        assert!(z_to_pvalues(&[0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn large_pvalues_give_no_rejections() {
        let out = adaptive_fdr_test(&[0.9, 0.8, 0.95], 0.05).unwrap();
        assert_eq!(out.rejection_count(), 0);
    }

    #[test]
    fn overwhelming_evidence_is_rejected() {
        let out = adaptive_fdr_test(&[1e-10, 0.9], 0.05).unwrap();
        assert_eq!(out.rejected, vec![true, false]);
    }

    #[test]
    fn planted_signals_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2006);
        let mut p = vec![1e-6; 10];
        p.extend((0..90).map(|_| rng.random::<f64>()));
        let out = adaptive_fdr_test(&p, 0.05).unwrap();
        assert!(out.rejected[..10].iter().all(|&r| r));
        for (r, q) in out.rejected.iter().zip(&out.qvalues) {
            if *r {
                assert!(*q <= 0.05);
            }
        }
    }

    #[test]
    fn all_estimated_non_null_rejects_everything() {
        let out = adaptive_fdr_test(&[1e-8, 2e-8, 3e-8], 0.05).unwrap();
        assert_eq!(out.null_estimate, 0);
        assert!(out.rejected.iter().all(|&r| r));
    }

    #[test]
    fn ties_are_deterministic() {
        let p = [0.01, 0.01, 0.01, 0.5];
        let a = adaptive_fdr_test(&p, 0.05).unwrap();
        let b = adaptive_fdr_test(&p, 0.05).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.qvalues[0], a.qvalues[1]);
    }

    #[test]
    fn bh_matches_hand_evaluation() {
        // sorted: 0.001, 0.008, 0.039, 0.041, 0.6 with thresholds k * 0.05 / 5
        let p = [0.041, 0.001, 0.6, 0.008, 0.039];
        let out = benjamini_hochberg(&p, 0.05).unwrap();
        assert_eq!(out.rejected, vec![false, true, false, true, false]);
        assert!((out.qvalues[1] - 0.005).abs() < 1e-12);
        assert!((out.qvalues[3] - 0.02).abs() < 1e-12);
        assert!((out.qvalues[0] - 0.05125).abs() < 1e-12);
    }

    #[test]
    fn input_validation() {
        assert_eq!(adaptive_fdr_test(&[], 0.05), Err(Error::EmptyInput));
        assert!(adaptive_fdr_test(&[0.5], 1.0).is_err());
        assert!(adaptive_fdr_test(&[1.5], 0.1).is_err());
    }
}
