//! Dirichlet prior network outputs.
//!
//! A network emits logits `z`; concentrations are `α_c = exp(z_c / T)` and
//! the precision is `α₀ = Σ α_c`. From α follow the expected categorical
//! `α / α₀` and a closed-form split of total uncertainty:
//!
//! ```text
//! total          = H[α / α₀]
//! expected data  = ψ(α₀ + 1) − Σ (α_c / α₀) ψ(α_c + 1)
//! knowledge      = total − expected data
//! ```
//!
//! The distillation loss is the negative log-likelihood of the ensemble
//! members' categorical outputs under the Dirichlet.

use crate::net::{entropy, CategoricalProbs};
use crate::specfn::{digamma_pos, ln_gamma_pos};
use crate::{Error, Result};

/// Largest `z / T` accepted before `exp` is considered to have overflowed.
pub const MAX_LOG_ALPHA: f64 = 700.0;

/// Default central-smoothing weight.
pub const DEFAULT_GAMMA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    alpha0: f64,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Empty("concentration vector"));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::domain("DirichletParams", format!("concentration {a} is not positive and finite")));
        }
        let alpha0 = alpha.iter().sum();
        Ok(Self { alpha, alpha0 })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }
}

/// The M member distributions for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberSample {
    probs: Vec<CategoricalProbs>,
}

impl MemberSample {
    pub fn new(probs: Vec<CategoricalProbs>) -> Result<Self> {
        let first = probs.first().ok_or(Error::Empty("member sample"))?;
        let k = first.len();
        if probs.iter().any(|p| p.len() != k) {
            return Err(Error::Shape("members disagree on the number of classes".into()));
        }
        Ok(Self { probs })
    }

    pub fn members(&self) -> &[CategoricalProbs] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs[0].len()
    }

    /// `(1/M) Σ_m ln π_c^(m)` per class.
    pub fn mean_log_probs(&self) -> Result<Vec<f64>> {
        let k = self.num_classes();
        let mut out = vec![0.0; k];
        for (m, p) in self.probs.iter().enumerate() {
            for (c, &v) in p.as_slice().iter().enumerate() {
                if v <= 0.0 {
                    return Err(Error::ZeroProbability { member: m, class: c });
                }
                out[c] += v.ln();
            }
        }
        let inv = 1.0 / self.probs.len() as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(out)
    }
}

/// `α_c = exp(z_c / T)`.
pub fn alphas_from_logits(logits: &[f64], temperature: f64) -> Result<DirichletParams> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::domain("alphas_from_logits", format!("temperature must be positive, got {temperature}")));
    }
    let mut alpha = vec![0.0; logits.len()];
    alphas_into(logits, temperature, &mut alpha)?;
    DirichletParams::new(alpha)
}

pub(crate) fn alphas_into(logits: &[f64], temperature: f64, out: &mut [f64]) -> Result<()> {
    for (c, (o, &z)) in out.iter_mut().zip(logits).enumerate() {
        let s = z / temperature;
        if !s.is_finite() || s > MAX_LOG_ALPHA {
            return Err(Error::Overflow(format!(
                "logit {c} is {z} at temperature {temperature}; exp({s}) exceeds the representable range"
            )));
        }
        *o = s.exp();
    }
    Ok(())
}

pub fn expected_categorical(d: &DirichletParams) -> CategoricalProbs {
    CategoricalProbs::new_unchecked(d.alpha.iter().map(|a| a / d.alpha0).collect())
}

pub fn total_uncertainty(d: &DirichletParams) -> f64 {
    let a0 = d.alpha0;
    entropy(&d.alpha.iter().map(|a| a / a0).collect::<Vec<_>>())
}

/// Mean entropy of categoricals drawn from the Dirichlet, in closed form.
pub fn expected_data_uncertainty(d: &DirichletParams) -> f64 {
    let a0 = d.alpha0;
    digamma_pos(a0 + 1.0) - d.alpha.iter().map(|&a| a / a0 * digamma_pos(a + 1.0)).sum::<f64>()
}

/// Mutual information between the label and the categorical parameters.
pub fn knowledge_uncertainty(d: &DirichletParams) -> f64 {
    clamp_rounding(total_uncertainty(d) - expected_data_uncertainty(d))
}

// MI is non-negative; only sub-1e-10 rounding residue is zeroed.
pub(crate) fn clamp_rounding(mi: f64) -> f64 {
    if mi < 0.0 && mi > -1e-10 {
        0.0
    } else {
        mi
    }
}

/// `(1 − γ) p + γ / K`.
pub fn central_smooth(p: &CategoricalProbs, gamma: f64) -> Result<CategoricalProbs> {
    check_gamma(gamma)?;
    let k = p.len() as f64;
    Ok(CategoricalProbs::new_unchecked(p.as_slice().iter().map(|v| (1.0 - gamma) * v + gamma / k).collect()))
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::domain("central_smooth", format!("gamma must be in [0, 1), got {gamma}")))
    }
}

fn check_k(d: &DirichletParams, s: &MemberSample) -> Result<()> {
    if d.num_classes() != s.num_classes() {
        return Err(Error::Shape(format!(
            "Dirichlet has {} classes, members have {}",
            d.num_classes(),
            s.num_classes()
        )));
    }
    Ok(())
}

/// Negative log-likelihood of the members under `Dir(α)`, averaged over members.
pub fn end2_nll(d: &DirichletParams, s: &MemberSample) -> Result<f64> {
    check_k(d, s)?;
    Ok(nll_from_mean_log(&d.alpha, d.alpha0, &s.mean_log_probs()?))
}

/// `∂ end2_nll / ∂α_c`.
pub fn end2_nll_grad(d: &DirichletParams, s: &MemberSample) -> Result<Vec<f64>> {
    check_k(d, s)?;
    let mut g = vec![0.0; d.num_classes()];
    nll_grad_from_mean_log(&d.alpha, d.alpha0, &s.mean_log_probs()?, &mut g);
    Ok(g)
}

pub(crate) fn nll_from_mean_log(alpha: &[f64], alpha0: f64, mean_log: &[f64]) -> f64 {
    let mut ll = ln_gamma_pos(alpha0);
    for (&a, &l) in alpha.iter().zip(mean_log) {
        ll += (a - 1.0) * l - ln_gamma_pos(a);
    }
    -ll
}

pub(crate) fn nll_grad_from_mean_log(alpha: &[f64], alpha0: f64, mean_log: &[f64], out: &mut [f64]) {
    let psi0 = digamma_pos(alpha0);
    for ((o, &a), &l) in out.iter_mut().zip(alpha).zip(mean_log) {
        *o = -(psi0 - digamma_pos(a) + l);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::softmax;
    use proptest::prelude::*;

    fn probs(v: &[f64]) -> CategoricalProbs {
        CategoricalProbs::new(v.to_vec()).unwrap()
    }

    fn dir(v: &[f64]) -> DirichletParams {
        DirichletParams::new(v.to_vec()).unwrap()
    }

    #[test]
    fn alphas_examples() {
        let d = alphas_from_logits(&[0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(d.alpha(), &[1.0, 1.0, 1.0]);
        assert_eq!(d.alpha0(), 3.0);
        let d = alphas_from_logits(&[10f64.ln(), 10f64.ln()], 1.0).unwrap();
        assert!(d.alpha().iter().all(|a| (a - 10.0).abs() < 1e-12));
        let d = alphas_from_logits(&[2.0, 2.0, 2.0], 2.0).unwrap();
        assert!(d.alpha().iter().all(|a| (a - std::f64::consts::E).abs() < 1e-15));
        assert!(matches!(alphas_from_logits(&[800.0, 0.0], 1.0), Err(Error::Overflow(_))));
        assert!(alphas_from_logits(&[800.0, 0.0], 2.0).is_ok());
    }

    #[test]
    fn expected_categorical_examples() {
        let p = expected_categorical(&dir(&[1.0, 1.0, 1.0]));
        assert!(p.as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(expected_categorical(&dir(&[2.0, 1.0, 1.0])).as_slice(), &[0.5, 0.25, 0.25]);
    }

    proptest! {
        #[test]
        fn expected_categorical_is_softmax(z in proptest::collection::vec(-20.0f64..20.0, 2..10)) {
            let a = expected_categorical(&alphas_from_logits(&z, 1.0).unwrap());
            let b = softmax(&z, 1.0).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn total_uncertainty_examples() {
        let ln3 = 3f64.ln();
        assert!((total_uncertainty(&dir(&[1.0, 1.0, 1.0])) - ln3).abs() < 1e-15);
        for k in [1e-3, 0.7, 42.0, 1e6] {
            assert!((total_uncertainty(&dir(&[k, k, k])) - ln3).abs() < 1e-14);
        }
        assert!((total_uncertainty(&dir(&[2.0, 1.0, 1.0])) - 1.039_720_770_839_917_9).abs() < 1e-12);
    }

    // Reference values from mpmath at 50 digits.
    #[test]
    fn expected_data_and_knowledge_examples() {
        let d = dir(&[1.0, 1.0, 1.0]);
        assert!((expected_data_uncertainty(&d) - 5.0 / 6.0).abs() < 1e-12);
        assert!((knowledge_uncertainty(&d) - 0.265_278_955_334_776_36).abs() < 1e-12);
        let d = dir(&[10.0, 10.0, 10.0]);
        let harmonic: f64 = (11..=30).map(|i| 1.0 / i as f64).sum();
        assert!((expected_data_uncertainty(&d) - harmonic).abs() < 1e-12);
        assert!((expected_data_uncertainty(&d) - 1.066_018_876_952_137).abs() < 1e-12);
        assert!((knowledge_uncertainty(&d) - 0.032_593_411_715_972_59).abs() < 1e-12);
        let d = dir(&[1e6, 1e6, 1e6]);
        assert!((3f64.ln() - expected_data_uncertainty(&d)).abs() < 1e-5);
        assert!(knowledge_uncertainty(&d) < 1e-5);
    }

    #[test]
    fn central_smooth_examples() {
        let p = central_smooth(&probs(&[1.0, 0.0, 0.0]), 1e-4).unwrap();
        assert!((p.as_slice()[0] - (0.9999 + 1e-4 / 3.0)).abs() < 1e-15);
        assert!((p.as_slice()[1] - 1e-4 / 3.0).abs() < 1e-18);
        let q = probs(&[0.2, 0.5, 0.3]);
        assert_eq!(central_smooth(&q, 0.0).unwrap(), q);
        let u = probs(&[0.25; 4]);
        for g in [0.0, 1e-4, 0.3, 0.9] {
            let s = central_smooth(&u, g).unwrap();
            assert!(s.as_slice().iter().all(|v| (v - 0.25).abs() < 1e-16));
        }
        assert!(central_smooth(&q, 1.0).is_err());
        assert!(central_smooth(&q, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn smoothing_bounds(raw in proptest::collection::vec(0.0f64..1.0, 2..12), gamma in 0.0f64..0.5) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-6);
            let p = probs(&raw.iter().map(|v| v / sum).collect::<Vec<_>>());
            let k = raw.len() as f64;
            let s = central_smooth(&p, gamma).unwrap();
            let total: f64 = s.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for &v in s.as_slice() {
                prop_assert!(v >= gamma / k - 1e-16);
                prop_assert!(v <= 1.0 - gamma * (k - 1.0) / k + 1e-15);
            }
        }
    }

    #[test]
    fn nll_examples() {
        let uniform = MemberSample::new(vec![probs(&[0.2, 0.3, 0.5]), probs(&[0.6, 0.2, 0.2])]).unwrap();
        assert!((end2_nll(&dir(&[1.0, 1.0, 1.0]), &uniform).unwrap() + 2f64.ln()).abs() < 1e-14);

        let half = MemberSample::new(vec![probs(&[0.5, 0.5])]).unwrap();
        let v = end2_nll(&dir(&[2.0, 2.0]), &half).unwrap();
        assert!((v - (-0.405_465_108_108_164_4)).abs() < 1e-13);

        let s = MemberSample::new(vec![probs(&[0.1, 0.9]), probs(&[0.7, 0.3])]).unwrap();
        let doubled = MemberSample::new([s.members(), s.members()].concat()).unwrap();
        let d = dir(&[1.3, 4.2]);
        assert!((end2_nll(&d, &s).unwrap() - end2_nll(&d, &doubled).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn nll_rejects_zero_probability_and_shape() {
        let s = MemberSample::new(vec![probs(&[1.0, 0.0])]).unwrap();
        assert!(matches!(end2_nll(&dir(&[1.0, 2.0]), &s), Err(Error::ZeroProbability { member: 0, class: 1 })));
        assert!(end2_nll_grad(&dir(&[1.0, 2.0]), &s).is_err());
        let smoothed = MemberSample::new(vec![central_smooth(&s.members()[0], 1e-4).unwrap()]).unwrap();
        assert!(end2_nll(&dir(&[1.0, 2.0]), &smoothed).unwrap().is_finite());
        assert!(end2_nll(&dir(&[1.0, 2.0, 3.0]), &smoothed).is_err());
        assert!(MemberSample::new(vec![]).is_err());
        assert!(MemberSample::new(vec![probs(&[1.0]), probs(&[0.5, 0.5])]).is_err());
    }

    #[test]
    fn grad_examples() {
        let s = MemberSample::new(vec![probs(&[1.0 / 3.0; 3])]).unwrap();
        let g = end2_nll_grad(&dir(&[1.0, 1.0, 1.0]), &s).unwrap();
        for v in &g {
            assert!((v - (-0.401_387_711_331_890_2)).abs() < 1e-12, "{v}");
        }
        let sym = MemberSample::new(vec![probs(&[0.2, 0.2, 0.6]), probs(&[0.2, 0.6, 0.2]), probs(&[0.6, 0.2, 0.2])]).unwrap();
        let g = end2_nll_grad(&dir(&[3.0, 3.0, 3.0]), &sym).unwrap();
        assert!((g[0] - g[1]).abs() < 1e-15 && (g[1] - g[2]).abs() < 1e-15);
    }

    #[test]
    fn symmetric_stationary_point() {
        // members symmetric, α = (a, a, a): one-dimensional loss in a
        let sym = MemberSample::new(vec![probs(&[0.1, 0.3, 0.6]), probs(&[0.3, 0.6, 0.1]), probs(&[0.6, 0.1, 0.3])]).unwrap();
        let f = |a: f64| end2_nll(&dir(&[a, a, a]), &sym).unwrap();
        let df = |a: f64| end2_nll_grad(&dir(&[a, a, a]), &sym).unwrap().iter().sum::<f64>();
        // bisection on the analytic derivative
        let (mut lo, mut hi) = (0.05, 100.0);
        assert!(df(lo) < 0.0 && df(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if df(mid) < 0.0 { lo = mid } else { hi = mid }
        }
        let a_star = 0.5 * (lo + hi);
        assert!(df(a_star).abs() < 1e-8);
        let h = 1e-5;
        let fd = (f(a_star + h) - f(a_star - h)) / (2.0 * h);
        assert!(fd.abs() < 1e-8, "{fd}");
        assert!(f(a_star) < f(a_star * 1.01) && f(a_star) < f(a_star * 0.99));
    }
}
