//! `Sim(a, b) = exp(−‖a − b‖₁)`, the three fusion rules and the
//! match/mismatch cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SimVariant {
    /// `λ·e^{−‖R_s−R_e‖₁} + (1−λ)·e^{−‖R_t−R_e‖₁}`
    #[default]
    Convex,
    /// `e^{−‖R_s−R_e‖₁}^λ + e^{−‖R_t−R_e‖₁}^{1−λ}`
    Power,
    /// `e^{−‖λR_s + (1−λ)R_t − R_e‖₁}`
    Blend,
}

impl SimVariant {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(SimVariant::Convex),
            2 => Ok(SimVariant::Power),
            3 => Ok(SimVariant::Blend),
            _ => Err(Error::Config(format!("unknown similarity variant {i}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            SimVariant::Convex => 1,
            SimVariant::Power => 2,
            SimVariant::Blend => 3,
        }
    }

    /// Whether the speech / text embeddings influence the score at `λ`.
    pub fn uses(self, lambda: f64) -> (bool, bool) {
        (lambda != 0.0, lambda != 1.0)
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("embedding dims {} and {}", a.len(), b.len())));
    }
    Ok((-l1(a, b)).exp())
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!("λ = {lambda} outside [0, 1]")))
    }
}

/// Fused score and its gradients with respect to `R_s`, `R_t`, `R_e`.
/// An unused embedding (weight exactly zero) may be passed as `None`; its
/// gradient is then `None` too.
#[derive(Debug, Clone)]
pub struct Fused {
    pub score: f64,
    pub d_speech: Option<Vec<f64>>,
    pub d_text: Option<Vec<f64>>,
    pub d_eeg: Vec<f64>,
}

pub fn fuse_with_grad(
    variant: SimVariant,
    speech: Option<&[f64]>,
    text: Option<&[f64]>,
    eeg: &[f64],
    lambda: f64,
) -> Result<Fused> {
    check_lambda(lambda)?;
    let (need_s, need_t) = variant.uses(lambda);
    let need = |flag: bool, v: Option<&[f64]>, what: &str| -> Result<Option<Vec<f64>>> {
        match (flag, v) {
            (true, None) => Err(Error::InvalidInput(format!("{what} embedding required at λ = {lambda}"))),
            (_, Some(v)) if v.len() != eeg.len() => Err(Error::Shape(format!(
                "{what} embedding has {} values, EEG has {}",
                v.len(),
                eeg.len()
            ))),
            (true, Some(v)) => Ok(Some(v.to_vec())),
            (false, _) => Ok(None),
        }
    };
    let s = need(need_s, speech, "speech")?;
    let t = need(need_t, text, "text")?;
    let d = eeg.len();
    let mut d_eeg = vec![0.0; d];

    match variant {
        SimVariant::Convex | SimVariant::Power => {
            let mut score = 0.0;
            let mut branch = |r: &Option<Vec<f64>>, w: f64| -> Option<Vec<f64>> {
                let r = r.as_ref()?;
                let dist = l1(r, eeg);
                // score term and d(term)/d(dist)
                let (term, dterm) = if variant == SimVariant::Convex {
                    let e = (-dist).exp();
                    (w * e, -w * e)
                } else {
                    let e = (-w * dist).exp();
                    (e, -w * e)
                };
                score += term;
                let mut dr = vec![0.0; d];
                for i in 0..d {
                    let sg = sign(r[i] - eeg[i]);
                    dr[i] = dterm * sg;
                    d_eeg[i] -= dterm * sg;
                }
                Some(dr)
            };
            let d_speech = branch(&s, lambda);
            let d_text = branch(&t, 1.0 - lambda);
            if variant == SimVariant::Power {
                // x^0 = 1 for the dropped branch
                if s.is_none() {
                    score += 1.0;
                }
                if t.is_none() {
                    score += 1.0;
                }
            }
            Ok(Fused {
                score,
                d_speech,
                d_text,
                d_eeg,
            })
        }
        SimVariant::Blend => {
            let mut m = vec![0.0; d];
            for i in 0..d {
                let sv = s.as_ref().map_or(0.0, |v| lambda * v[i]);
                let tv = t.as_ref().map_or(0.0, |v| (1.0 - lambda) * v[i]);
                m[i] = sv + tv - eeg[i];
            }
            let score = (-m.iter().map(|v| v.abs()).sum::<f64>()).exp();
            let dm: Vec<f64> = m.iter().map(|&v| -score * sign(v)).collect();
            for i in 0..d {
                d_eeg[i] = -dm[i];
            }
            Ok(Fused {
                score,
                d_speech: s.map(|_| dm.iter().map(|v| lambda * v).collect()),
                d_text: t.map(|_| dm.iter().map(|v| (1.0 - lambda) * v).collect()),
                d_eeg,
            })
        }
    }
}

pub fn fuse(variant: SimVariant, speech: &[f64], text: &[f64], eeg: &[f64], lambda: f64) -> Result<f64> {
    if speech.len() != eeg.len() || text.len() != eeg.len() {
        return Err(Error::Shape("embedding dimensions differ".into()));
    }
    Ok(fuse_with_grad(variant, Some(speech), Some(text), eeg, lambda)?.score)
}

fn clamp(s: f64) -> f64 {
    s.clamp(LOSS_EPS, 1.0 - LOSS_EPS)
}

/// `½·(−ln clamp(s⁺) − ln(1 − clamp(s⁻)))`.
pub fn mm_loss(sim_pos: f64, sim_neg: f64) -> f64 {
    0.5 * (-clamp(sim_pos).ln() - (1.0 - clamp(sim_neg)).ln())
}

/// `(∂loss/∂s⁺, ∂loss/∂s⁻)`; zero where the clamp is active.
pub fn mm_loss_grad(sim_pos: f64, sim_neg: f64) -> (f64, f64) {
    let inside = |s: f64| s > LOSS_EPS && s < 1.0 - LOSS_EPS;
    let dp = if inside(sim_pos) { -0.5 / sim_pos } else { 0.0 };
    let dn = if inside(sim_neg) { 0.5 / (1.0 - sim_neg) } else { 0.0 };
    (dp, dn)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_examples() {
        let a = [0.3, -1.2, 4.0];
        assert_eq!(similarity(&a, &a).unwrap(), 1.0);
        assert!((similarity(&[2f64.ln(), 0.0], &[0.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        let mut e1 = vec![0.0; 32];
        e1[0] = 1.0;
        assert!((similarity(&e1, &[0.0; 32]).unwrap() - 0.367879).abs() < 1e-6);
        assert!(similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn fusion_examples() {
        let re = [0.1, 0.2];
        let rs = [0.4, -0.3];
        let rt = [1.0, 0.0];
        let v1 = fuse(SimVariant::Convex, &rs, &rt, &re, 1.0).unwrap();
        assert_eq!(v1, similarity(&rs, &re).unwrap());
        let v0 = fuse(SimVariant::Convex, &rs, &rt, &re, 0.0).unwrap();
        assert_eq!(v0, similarity(&rt, &re).unwrap());

        // component similarities 0.4 and 0.8
        let rs = [-(0.4f64).ln()];
        let rt = [-(0.8f64).ln()];
        let mixed = fuse(SimVariant::Convex, &rs, &rt, &[0.0], 0.5).unwrap();
        assert!((mixed - 0.6).abs() < 1e-12);

        let re = [0.5, -0.5];
        assert_eq!(fuse(SimVariant::Blend, &[9.0, 9.0], &re, &re, 0.0).unwrap(), 1.0);
        assert!(fuse(SimVariant::Convex, &re, &re, &re, 1.5).is_err());
        assert!(SimVariant::from_index(4).is_err());
    }

    #[test]
    fn power_variant_reaches_two() {
        let re = [0.0, 1.0];
        assert_eq!(fuse(SimVariant::Power, &re, &re, &re, 0.5).unwrap(), 2.0);
        let far = [5.0, 5.0];
        let v = fuse(SimVariant::Power, &far, &re, &re, 1.0).unwrap();
        assert!((v - (1.0 + (-9.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        assert!(mm_loss(1.0 - LOSS_EPS, LOSS_EPS) < 2e-7);
        assert!((mm_loss(0.5, 0.5) - 2f64.ln()).abs() < 1e-15);
        let (dp, dn) = mm_loss_grad(0.5, 0.5);
        assert_eq!(dp, -1.0);
        assert_eq!(dn, 1.0);
        // finite difference on the loss itself
        let h = 1e-6;
        let fd = (mm_loss(0.5 + h, 0.5) - mm_loss(0.5 - h, 0.5)) / (2.0 * h);
        assert!((fd + 1.0).abs() < 1e-8);
        assert!(mm_loss(0.0, 1.0).is_finite());
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        let re = [0.3, -0.2, 0.05];
        let rs = [0.1, 0.4, -0.3];
        let rt = [-0.5, 0.2, 0.25];
        for variant in [SimVariant::Convex, SimVariant::Power, SimVariant::Blend] {
            for lambda in [0.0, 0.3, 0.5, 1.0] {
                let f = fuse_with_grad(variant, Some(&rs), Some(&rt), &re, lambda).unwrap();
                let h = 1e-6;
                for i in 0..3 {
                    let bump = |v: &[f64; 3], s: f64| {
                        let mut v = *v;
                        v[i] += s;
                        v
                    };
                    let fd_e = (fuse(variant, &rs, &rt, &bump(&re, h), lambda).unwrap()
                        - fuse(variant, &rs, &rt, &bump(&re, -h), lambda).unwrap())
                        / (2.0 * h);
                    assert!((fd_e - f.d_eeg[i]).abs() < 1e-7, "{variant:?} λ={lambda}");
                    let fd_s = (fuse(variant, &bump(&rs, h), &rt, &re, lambda).unwrap()
                        - fuse(variant, &bump(&rs, -h), &rt, &re, lambda).unwrap())
                        / (2.0 * h);
                    let an_s = f.d_speech.as_ref().map_or(0.0, |d| d[i]);
                    assert!((fd_s - an_s).abs() < 1e-7, "{variant:?} λ={lambda}");
                    let fd_t = (fuse(variant, &rs, &bump(&rt, h), &re, lambda).unwrap()
                        - fuse(variant, &rs, &bump(&rt, -h), &re, lambda).unwrap())
                        / (2.0 * h);
                    let an_t = f.d_text.as_ref().map_or(0.0, |d| d[i]);
                    assert!((fd_t - an_t).abs() < 1e-7, "{variant:?} λ={lambda}");
                }
            }
        }
    }
}
