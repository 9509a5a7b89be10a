//! Hyper-exponential off-time distribution.
//!
//! The time from the start of an idle period to the first user arrival is
//! modeled as a mixture of exponentials:
//!
//! ```text
//! f(t) = Σ qᵢ λᵢ exp(−λᵢ t),   Σ qᵢ = 1
//! ```
//!
//! The key closed forms used by the solver and the simulator:
//!
//! - tail: `P(τ > t) = Σ qᵢ exp(−λᵢ t)`
//! - mean: `E[τ] = Σ qᵢ/λᵢ`
//! - conditional residual: given no arrival by elapsed time `t`, the
//!   remaining time is again hyper-exponential with the same rates and
//!   updated weights `gᵢ = qᵢ exp(−λᵢ t) / Σⱼ qⱼ exp(−λⱼ t)`
//! - expected overshoot of a sleep block of length `b`:
//!   `E[(b−τ)·1{τ≤b}] = b − Σ qᵢ (1−exp(−λᵢ b))/λᵢ`

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on Σ qᵢ = 1 for weight vectors.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Weights below this are clamped to zero during residual updates to keep
/// denormal floats out of the hot loops.
const WEIGHT_CLAMP: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HyperExpError {
    #[error("rates and weights must have equal nonzero length, got {rates} and {weights}")]
    LengthMismatch { rates: usize, weights: usize },
    #[error("rates[{index}] must be positive and finite, got {value}")]
    InvalidRate { index: usize, value: f64 },
    #[error("weights[{index}] must be in [0, 1], got {value}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("weights must sum to 1 within {WEIGHT_SUM_TOL:e}, got {sum}")]
    WeightSum { sum: f64 },
    #[error("time argument must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("internal: {0}")]
    Internal(&'static str),
}

/// Hyper-exponential distribution with rates `λ` (1/s) and mixture
/// weights `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperExp {
    rates: Vec<f64>,
    weights: Vec<f64>,
}

/// Mixture weights of a conditional residual off-time, paired implicitly
/// with the rate vector of the [`HyperExp`] that produced them.
///
/// Every value of this type sums to 1 within [`WEIGHT_SUM_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualWeights(Vec<f64>);

fn check_weights(weights: &[f64]) -> Result<(), HyperExpError> {
    for (index, &value) in weights.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) || !value.is_finite() {
            return Err(HyperExpError::InvalidWeight { index, value });
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(HyperExpError::WeightSum { sum });
    }
    Ok(())
}

impl ResidualWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, HyperExpError> {
        check_weights(&weights)?;
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl HyperExp {
    pub fn new(rates: Vec<f64>, weights: Vec<f64>) -> Result<Self, HyperExpError> {
        if rates.is_empty() || rates.len() != weights.len() {
            return Err(HyperExpError::LengthMismatch {
                rates: rates.len(),
                weights: weights.len(),
            });
        }
        for (index, &value) in rates.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(HyperExpError::InvalidRate { index, value });
            }
        }
        check_weights(&weights)?;
        Ok(Self { rates, weights })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of exponential phases n.
    pub fn phases(&self) -> usize {
        self.rates.len()
    }

    /// The distribution's own weights as a residual-weight vector (the
    /// state at elapsed time zero).
    pub fn initial_weights(&self) -> ResidualWeights {
        ResidualWeights(self.weights.clone())
    }

    /// Density f(t) = Σ qᵢ λᵢ exp(−λᵢ t).
    pub fn pdf(&self, t: f64) -> Result<f64, HyperExpError> {
        if t < 0.0 {
            return Err(HyperExpError::NegativeTime(t));
        }
        Ok(self
            .rates
            .iter()
            .zip(&self.weights)
            .map(|(&l, &q)| q * l * (-l * t).exp())
            .sum())
    }

    /// Survival P(τ > t) = Σ qᵢ exp(−λᵢ t).
    pub fn tail(&self, t: f64) -> Result<f64, HyperExpError> {
        if t < 0.0 {
            return Err(HyperExpError::NegativeTime(t));
        }
        Ok(self
            .rates
            .iter()
            .zip(&self.weights)
            .map(|(&l, &q)| q * (-l * t).exp())
            .sum())
    }

    /// Survival of the residual off-time under arbitrary current weights:
    /// P(τ_t > dt) = Σ gᵢ exp(−λᵢ dt).
    pub fn tail_from(&self, current: &ResidualWeights, dt: f64) -> Result<f64, HyperExpError> {
        if dt < 0.0 {
            return Err(HyperExpError::NegativeTime(dt));
        }
        Ok(self
            .rates
            .iter()
            .zip(&current.0)
            .map(|(&l, &g)| g * (-l * dt).exp())
            .sum())
    }

    /// Mean off-time E[τ] = Σ qᵢ/λᵢ.
    pub fn mean(&self) -> f64 {
        self.rates
            .iter()
            .zip(&self.weights)
            .map(|(&l, &q)| q / l)
            .sum()
    }

    /// Conditional residual weight update after `dt` more seconds without
    /// an arrival: gᵢ' = gᵢ exp(−λᵢ dt) / Σⱼ gⱼ exp(−λⱼ dt).
    ///
    /// The exponents are shifted by the smallest λᵢ·dt over phases that
    /// still carry weight before exponentiating; the update is a ratio, so
    /// the shift cancels and the largest surviving factor is exactly 1,
    /// which keeps the denominator away from underflow for any dt.
    pub fn residual(
        &self,
        current: &ResidualWeights,
        dt: f64,
    ) -> Result<ResidualWeights, HyperExpError> {
        if dt < 0.0 {
            return Err(HyperExpError::NegativeTime(dt));
        }
        let min_rate = self
            .rates
            .iter()
            .zip(&current.0)
            .filter(|(_, &g)| g > 0.0)
            .map(|(&l, _)| l)
            .fold(f64::INFINITY, f64::min);
        let mut next: Vec<f64> = self
            .rates
            .iter()
            .zip(&current.0)
            .map(|(&l, &g)| g * (-(l - min_rate) * dt).exp())
            .collect();
        let mut sum: f64 = next.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(HyperExpError::Internal("residual denominator vanished"));
        }
        for w in next.iter_mut() {
            *w /= sum;
            if *w < WEIGHT_CLAMP {
                *w = 0.0;
            }
        }
        sum = next.iter().sum();
        for w in next.iter_mut() {
            *w /= sum;
        }
        Ok(ResidualWeights(next))
    }

    /// Expected buffering overshoot of a sleep block of length `b` started
    /// under residual weights `current`:
    /// E[(b − τ)·1{τ ≤ b}] = b − Σ gᵢ (1 − exp(−λᵢ b))/λᵢ.
    ///
    /// The result lies in [0, b].
    pub fn expected_overshoot(
        &self,
        current: &ResidualWeights,
        b: f64,
    ) -> Result<f64, HyperExpError> {
        if b < 0.0 {
            return Err(HyperExpError::NegativeTime(b));
        }
        let caught: f64 = self
            .rates
            .iter()
            .zip(&current.0)
            .map(|(&l, &g)| -g * (-l * b).exp_m1() / l)
            .sum();
        Ok((b - caught).clamp(0.0, b))
    }

    /// Draws one off-time: a discrete phase pick by weight, then an
    /// inverse-CDF exponential of that phase's rate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut phase = self.rates.len() - 1;
        for (i, &q) in self.weights.iter().enumerate() {
            acc += q;
            if u < acc {
                phase = i;
                break;
            }
        }
        let v: f64 = rng.random();
        -(1.0 - v).ln() / self.rates[phase]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference() -> HyperExp {
        HyperExp::new(vec![10.0, 500.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(matches!(
            HyperExp::new(vec![], vec![]),
            Err(HyperExpError::LengthMismatch { .. })
        ));
        assert!(matches!(
            HyperExp::new(vec![1.0, 2.0], vec![1.0]),
            Err(HyperExpError::LengthMismatch { .. })
        ));
        assert!(matches!(
            HyperExp::new(vec![0.0], vec![1.0]),
            Err(HyperExpError::InvalidRate { .. })
        ));
        assert!(matches!(
            HyperExp::new(vec![1.0, 1.0], vec![0.5, 0.4]),
            Err(HyperExpError::WeightSum { .. })
        ));
        assert!(matches!(
            HyperExp::new(vec![1.0], vec![-1.0]),
            Err(HyperExpError::InvalidWeight { .. })
        ));
    }

    #[test]
    fn pdf_known_values() {
        let d = reference();
        // 0.5*10 + 0.5*500 at the origin
        assert_eq!(d.pdf(0.0).unwrap(), 255.0);
        // unit exponential at origin
        let e = HyperExp::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(e.pdf(0.0).unwrap(), 1.0);
        // frozen from an arbitrary-precision evaluation of
        // 0.5*10*exp(-0.1) + 0.5*500*exp(-5)
        assert!((d.pdf(0.01).unwrap() - 6.208673839951165).abs() < 1e-14);
        assert!(d.pdf(-1e-9).is_err());
    }

    #[test]
    fn tail_known_values() {
        let d = reference();
        assert_eq!(d.tail(0.0).unwrap(), 1.0);
        // frozen from 0.5*exp(-0.02) + 0.5*exp(-1)
        assert!((d.tail(0.002).unwrap() - 0.6740390572390988).abs() < 1e-15);
        // exponential median
        let e = HyperExp::new(vec![1.0], vec![1.0]).unwrap();
        assert!((e.tail(std::f64::consts::LN_2).unwrap() - 0.5).abs() < 1e-15);
        assert!(d.tail(-0.1).is_err());
    }

    #[test]
    fn mean_known_values() {
        assert!((reference().mean() - 0.051).abs() < 1e-15);
        let e = HyperExp::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(e.mean(), 1.0);
        // degenerate mixture equals a single exponential
        let m = HyperExp::new(vec![2.0, 2.0], vec![0.3, 0.7]).unwrap();
        assert!((m.mean() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn residual_known_values() {
        let d = reference();
        let q = d.initial_weights();
        // dt = 0 leaves the weights unchanged
        let same = d.residual(&q, 0.0).unwrap();
        assert_eq!(same.as_slice(), q.as_slice());
        // single phase is memoryless
        let e = HyperExp::new(vec![3.0], vec![1.0]).unwrap();
        let g = e.residual(&e.initial_weights(), 12.34).unwrap();
        assert_eq!(g.as_slice(), &[1.0]);
        // frozen from exp(-0.02)/(exp(-0.02)+exp(-1))
        let g = d.residual(&q, 0.002).unwrap();
        assert!((g.as_slice()[0] - 0.7271082163411295).abs() < 1e-15);
        assert!((g.as_slice()[1] - 0.2728917836588705).abs() < 1e-15);
        assert!(d.residual(&q, -0.5).is_err());
    }

    #[test]
    fn residual_survives_extreme_elapsed_times() {
        let d = reference();
        // λ·dt = 5e5 for the fast phase: the naive update would underflow
        // both numerator terms; the shifted one keeps the slow phase at 1.
        let g = d.residual(&d.initial_weights(), 1000.0).unwrap();
        assert!((g.as_slice().iter().sum::<f64>() - 1.0).abs() < WEIGHT_SUM_TOL);
        assert_eq!(g.as_slice()[1], 0.0);
        assert_eq!(g.as_slice()[0], 1.0);
    }

    #[test]
    fn overshoot_known_values() {
        let d = reference();
        let q = d.initial_weights();
        assert_eq!(d.expected_overshoot(&q, 0.0).unwrap(), 0.0);
        // frozen from the numeric-integration oracle of
        // ∫₀^b (b−t) f(t) dt at b = 0.02
        let got = d.expected_overshoot(&q, 0.02).unwrap();
        assert!((got - 0.009936583053828855).abs() < 1e-15, "got {got}");
        // large b approaches b − Σ gᵢ/λᵢ
        let b = 100.0 * d.mean();
        let got = d.expected_overshoot(&q, b).unwrap();
        assert!((got - (b - d.mean())).abs() < 1e-12);
        assert!(d.expected_overshoot(&q, -1.0).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let d = HyperExp::new(vec![1.0], vec![1.0]).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..10).map(|_| d.sample(&mut a)).collect();
        let ys: Vec<f64> = (0..10).map(|_| d.sample(&mut b)).collect();
        assert_eq!(xs, ys);
        assert!(xs.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn sample_statistics_match_moments() {
        let d = reference();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut beyond = 0usize;
        for _ in 0..n {
            let x = d.sample(&mut rng);
            sum += x;
            sumsq += x * x;
            if x > 0.002 {
                beyond += 1;
            }
        }
        let mean = sum / n as f64;
        let var = (sumsq - sum * sum / n as f64) / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - 0.051).abs() < 3.0 * se,
            "sample mean {mean} vs 0.051 (se {se})"
        );
        let p = d.tail(0.002).unwrap();
        let phat = beyond as f64 / n as f64;
        let se_p = (phat * (1.0 - phat) / n as f64).sqrt();
        assert!(
            (phat - p).abs() < 3.0 * se_p,
            "empirical tail {phat} vs {p} (se {se_p})"
        );
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    /// Up to three phases with rates spanning several orders of magnitude.
    fn dist_and_weights() -> impl Strategy<Value = (HyperExp, ResidualWeights)> {
        (1usize..=3).prop_flat_map(|n| {
            let rates = proptest::collection::vec(0.01f64..1000.0, n);
            let raw_q = proptest::collection::vec(0.05f64..1.0, n);
            let raw_g = proptest::collection::vec(0.05f64..1.0, n);
            (rates, raw_q, raw_g).prop_map(|(r, q, g)| {
                let qs: f64 = q.iter().sum();
                let gs: f64 = g.iter().sum();
                let q: Vec<f64> = q.iter().map(|x| x / qs).collect();
                let g: Vec<f64> = g.iter().map(|x| x / gs).collect();
                let d = HyperExp::new(r, q).unwrap();
                let g = ResidualWeights::new(g).unwrap();
                (d, g)
            })
        })
    }

    proptest! {
        #[test]
        fn residual_normalizes((d, g) in dist_and_weights(), dt in 0.0f64..10.0) {
            let out = d.residual(&g, dt).unwrap();
            let sum: f64 = out.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < WEIGHT_SUM_TOL);
            prop_assert!(out.as_slice().iter().all(|&w| w >= 0.0));
        }

        #[test]
        fn residual_semigroup((d, g) in dist_and_weights(), s in 0.0f64..5.0, t in 0.0f64..5.0) {
            let two_step = d.residual(&d.residual(&g, s).unwrap(), t).unwrap();
            let one_step = d.residual(&g, s + t).unwrap();
            for (a, b) in two_step.as_slice().iter().zip(one_step.as_slice()) {
                prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }

        #[test]
        fn tail_composes((d, g) in dist_and_weights(), s in 0.0f64..5.0, t in 0.0f64..5.0) {
            let whole = d.tail_from(&g, s + t).unwrap();
            let part = d.tail_from(&g, s).unwrap()
                * d.tail_from(&d.residual(&g, s).unwrap(), t).unwrap();
            prop_assert!((whole - part).abs() < 1e-10, "{whole} vs {part}");
        }

        #[test]
        fn overshoot_monotone_and_bounded((d, g) in dist_and_weights(), b in 0.0f64..5.0) {
            let lo = d.expected_overshoot(&g, b).unwrap();
            let hi = d.expected_overshoot(&g, b + 0.125).unwrap();
            prop_assert!(lo >= 0.0 && lo <= b);
            prop_assert!(hi >= lo);
        }

        #[test]
        fn memoryless_single_phase(rate in 0.01f64..1000.0, dt in 0.0f64..100.0) {
            let d = HyperExp::new(vec![rate], vec![1.0]).unwrap();
            let g = d.residual(&d.initial_weights(), dt).unwrap();
            prop_assert_eq!(g.as_slice(), &[1.0][..]);
        }
    }
}

#[cfg(test)]
mod quadrature {
    use super::*;

    /// Composite Simpson of the pdf over [0, 50·mean] with the step chosen
    /// from the Simpson error bound (b−a)·h⁴·max|f⁗|/180, where
    /// max|f⁗| = Σ qᵢ λᵢ⁵ for the mixture.
    fn integrate_pdf(d: &HyperExp) -> f64 {
        let upper = 50.0 * d.mean();
        let f4: f64 = d
            .rates()
            .iter()
            .zip(d.weights())
            .map(|(&l, &q)| q * l.powi(5))
            .sum();
        let h_max = (1e-8 * 180.0 / (upper * f4)).powf(0.25);
        let mut n = (upper / h_max).ceil() as usize + 1;
        if n % 2 == 1 {
            n += 1;
        }
        let h = upper / n as f64;
        let mut acc = d.pdf(0.0).unwrap() + d.pdf(upper).unwrap();
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * d.pdf(i as f64 * h).unwrap();
        }
        acc * h / 3.0
    }

    #[test]
    fn pdf_integrates_to_one() {
        let cases = [
            HyperExp::new(vec![10.0, 500.0], vec![0.5, 0.5]).unwrap(),
            HyperExp::new(vec![1.0], vec![1.0]).unwrap(),
            // weights kept >= 0.3 so the mass beyond 50*mean is << 1e-6
            HyperExp::new(vec![0.5, 7.0, 40.0], vec![0.3, 0.3, 0.4]).unwrap(),
        ];
        for d in &cases {
            let integral = integrate_pdf(d);
            assert!(
                (integral - 1.0).abs() < 1e-6,
                "pdf integral {integral} for rates {:?}",
                d.rates()
            );
        }
    }
}
