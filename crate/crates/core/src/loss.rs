//! Adversarial, L1 and feature-matching losses and the full generator
//! objective.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// L1 weight.
    pub lambda: f64,
    /// Feature-matching weight.
    pub mu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 100.0, mu: 1.0 }
    }
}

fn check_scores(real: &[Tensor], fake: &[Tensor]) -> Result<()> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::shape("adversarial_loss", format!("{} real vs {} fake scores", real.len(), fake.len())));
    }
    for s in real.iter().chain(fake) {
        if s.len() != 1 {
            return Err(Error::shape("adversarial_loss", format!("score must be a single value, got {:?}", s.shape())));
        }
        let v = s.item();
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("score {v} lies outside [0, 1]")));
        }
    }
    Ok(())
}

fn mean_of(terms: Vec<Tensor>) -> Result<Tensor> {
    let n = terms.len() as f64;
    let mut it = terms.into_iter();
    let mut acc = it.next().ok_or_else(|| Error::invalid("mean of no terms"))?;
    for t in it {
        acc = acc.add(&t)?;
    }
    Ok(acc.scale(1.0 / n))
}

/// `(1/N_D)·Σ_i [log D_i(real) + log(1 − D_i(fake))]`, the value the
/// discriminator maximizes.
pub fn adversarial_loss(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    check_scores(real, fake)?;
    let terms = real
        .iter()
        .zip(fake)
        .map(|(r, f)| r.log_floor(PROB_FLOOR).add(&f.one_minus().log_floor(PROB_FLOOR)))
        .collect::<Result<Vec<_>>>()?;
    mean_of(terms)
}

/// Loss minimized by the discriminator: the negated adversarial value.
pub fn discriminator_loss(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    Ok(adversarial_loss(real, fake)?.scale(-1.0))
}

/// Non-saturating generator term `−(1/N_D)·Σ_i log D_i(fake)`.
pub fn generator_adversarial_loss(fake: &[Tensor]) -> Result<Tensor> {
    check_scores(fake, fake)?;
    Ok(mean_of(fake.iter().map(|f| f.log_floor(PROB_FLOOR)).collect())?.scale(-1.0))
}

/// Mean absolute difference.
pub fn l1_loss(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    if y.shape() != y_hat.shape() {
        return Err(Error::shape("l1_loss", format!("{:?} vs {:?}", y.shape(), y_hat.shape())));
    }
    Ok(y_hat.sub(y)?.abs().mean())
}

/// `(1/(N_D·N_Q))·Σ_i Σ_q mean|fake_i^q − real_i^q|`.
pub fn feature_matching_loss(fake: &[Vec<Tensor>], real: &[Vec<Tensor>]) -> Result<Tensor> {
    if fake.is_empty() || fake.len() != real.len() {
        return Err(Error::shape("feature_matching_loss", format!("{} vs {} subnetworks", fake.len(), real.len())));
    }
    let mut terms = Vec::new();
    for (i, (f, r)) in fake.iter().zip(real).enumerate() {
        if f.is_empty() || f.len() != r.len() || f.len() != fake[0].len() {
            return Err(Error::shape(
                "feature_matching_loss",
                format!("subnetwork {i} has {} fake and {} real taps", f.len(), r.len()),
            ));
        }
        for (a, b) in f.iter().zip(r) {
            if a.shape() != b.shape() {
                return Err(Error::shape("feature_matching_loss", format!("tap shapes {:?} vs {:?}", a.shape(), b.shape())));
            }
            terms.push(a.sub(b)?.abs().mean());
        }
    }
    mean_of(terms)
}

/// `adv + λ·l1 + μ·fm`.
pub fn total_objective(adv: &Tensor, l1: &Tensor, fm: &Tensor, w: LossWeights) -> Result<Tensor> {
    for (name, t) in [("adversarial", adv), ("l1", l1), ("feature matching", fm)] {
        if t.len() != 1 {
            return Err(Error::shape("total_objective", format!("{name} term must be scalar, got {:?}", t.shape())));
        }
        if !t.item().is_finite() {
            return Err(Error::NonFinite("total_objective"));
        }
    }
    adv.add(&l1.scale(w.lambda))?.add(&fm.scale(w.mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn s(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn half_scores() {
        for n in 1..=4 {
            let r: Vec<Tensor> = (0..n).map(|_| s(0.5)).collect();
            let v = adversarial_loss(&r, &r).unwrap().item();
            assert!((v - 2.0 * libm::log(0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_discriminator_limit() {
        let v = adversarial_loss(&[s(1.0 - 1e-7)], &[s(1e-7)]).unwrap().item();
        assert!(v.abs() < 1e-6);
    }

    #[test]
    fn averages_subnetworks() {
        let a = adversarial_loss(&[s(0.7)], &[s(0.2)]).unwrap().item();
        let b = adversarial_loss(&[s(0.4)], &[s(0.6)]).unwrap().item();
        let both = adversarial_loss(&[s(0.7), s(0.4)], &[s(0.2), s(0.6)]).unwrap().item();
        assert!((both - (a + b) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_scores() {
        assert!(adversarial_loss(&[s(1.2)], &[s(0.5)]).is_err());
        assert!(adversarial_loss(&[s(0.5)], &[]).is_err());
    }

    #[test]
    fn l1_examples() {
        let y = Tensor::full(&[2, 3], 1.0);
        assert_eq!(l1_loss(&y, &y).unwrap().item(), 0.0);
        assert_eq!(l1_loss(&y, &Tensor::zeros(&[2, 3])).unwrap().item(), 1.0);
        assert!(l1_loss(&y, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn feature_matching_normalization() {
        let a = Tensor::full(&[2, 3, 3], 0.25);
        let b = Tensor::full(&[2, 3, 3], 1.25);
        assert_eq!(feature_matching_loss(&[vec![a.clone()]], &[vec![b]]).unwrap().item(), 1.0);
        assert_eq!(feature_matching_loss(&[vec![a.clone()]], &[vec![a.clone()]]).unwrap().item(), 0.0);
        assert!(feature_matching_loss(&[vec![a.clone()]], &[vec![a.clone(), a]]).is_err());
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!(total_objective(&s(0.0), &s(0.0), &s(0.0), w).unwrap().item(), 0.0);
        assert!((total_objective(&s(0.0), &s(0.01), &s(0.0), w).unwrap().item() - 1.0).abs() < 1e-12);
        let w2 = LossWeights { mu: 2.0, ..w };
        assert_eq!(
            total_objective(&s(0.3), &s(0.02), &s(0.0), w).unwrap().item(),
            total_objective(&s(0.3), &s(0.02), &s(0.0), w2).unwrap().item()
        );
        assert!(total_objective(&s(f64::NAN), &s(0.0), &s(0.0), w).is_err());
    }
}
