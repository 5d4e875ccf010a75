use indexmap::IndexMap;

use crate::error::{GdrError, Result};

use super::{ParameterStore, Scalar};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.98;
pub const ADAM_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
}

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    moments: IndexMap<String, Moments<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(base_lr: f64) -> Self {
        Self {
            step_count: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            base_lr,
            moments: IndexMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&[S]> {
        self.moments.get(name).map(|m| m.m.as_slice())
    }

    pub fn second_moment(&self, name: &str) -> Option<&[S]> {
        self.moments.get(name).map(|m| m.v.as_slice())
    }
}

/// One Adam update of every trainable parameter, then clears gradients.
///
/// Nothing is modified if any trainable parameter lacks a gradient or has a
/// non-finite one.
pub fn adam_step<S: Scalar>(store: &mut ParameterStore<S>, state: &mut AdamState<S>, lr: f64) -> Result<()> {
    for (name, t) in store.iter() {
        if !t.requires_grad {
            continue;
        }
        let g = t.grad().ok_or_else(|| GdrError::MissingGrad(name.to_string()))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(GdrError::NonFinite(format!("gradient of `{name}`")));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (S::of(state.beta1), S::of(state.beta2));
    let c1 = S::one() - S::of(state.beta1.powi(t));
    let c2 = S::one() - S::of(state.beta2.powi(t));
    let (lr, eps) = (S::of(lr), S::of(state.eps));
    for (name, p) in store.iter_mut() {
        if !p.requires_grad {
            continue;
        }
        let n = p.len();
        let mom = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| Moments {
                m: vec![S::zero(); n],
                v: vec![S::zero(); n],
            });
        let grad = p.grad().expect("checked above").to_vec();
        let data = p.data_mut();
        for i in 0..n {
            let g = grad[i];
            mom.m[i] = b1 * mom.m[i] + (S::one() - b1) * g;
            mom.v[i] = b2 * mom.v[i] + (S::one() - b2) * g * g;
            let m_hat = mom.m[i] / c1;
            let v_hat = mom.v[i] / c2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.clear_grad();
    }
    Ok(())
}

/// Inverse-square-root schedule with linear warm-up:
/// `hidden^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn lr_schedule(step: u64, warmup: u64, hidden: usize) -> Result<f64> {
    if step == 0 {
        return Err(GdrError::Invalid("lr_schedule: step must be >= 1".into()));
    }
    let s = step as f64;
    let decay = s.powf(-0.5);
    let rate = if warmup == 0 {
        decay
    } else {
        decay.min(s * (warmup as f64).powf(-1.5))
    };
    Ok((hidden as f64).powf(-0.5) * rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(w: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::new(vec![1], vec![w]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.7);
        let mut st = AdamState::new(0.1);
        s.zero_grads();
        adam_step(&mut s, &mut st, 0.1).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.7]);
        assert_eq!(st.step_count, 1);
        assert!(s.get("w").unwrap().grad().is_none());
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3, -5.0, 1e-3] {
            let mut s = scalar_store(1.0);
            let mut st = AdamState::new(0.01);
            s.get_mut("w").unwrap().accumulate_grad(&[g]).unwrap();
            adam_step(&mut s, &mut st, 0.01).unwrap();
            let expect = 1.0 - 0.01 * g / (g.abs() + 1e-9);
            assert!((s.get("w").unwrap().data()[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_descent_matches_hand_rolled_adam() {
        // Oracle: scalar Adam written out directly.
        let (mut w_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(0.1);
        let mut prev = 1.0;
        for t in 1..=5 {
            let g = 2.0 * w_ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.98 * v + 0.02 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.98f64.powi(t));
            w_ref -= 0.1 * mh / (vh.sqrt() + 1e-9);

            let w = s.get("w").unwrap().data()[0];
            s.get_mut("w").unwrap().accumulate_grad(&[2.0 * w]).unwrap();
            adam_step(&mut s, &mut st, 0.1).unwrap();
            let now = s.get("w").unwrap().data()[0];
            assert!((now - w_ref).abs() < 1e-14);
            assert!(now < prev && now > -1.0);
            prev = now;
        }
    }

    #[test]
    fn missing_or_bad_gradient_is_rejected() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(0.1);
        assert!(matches!(adam_step(&mut s, &mut st, 0.1), Err(GdrError::MissingGrad(_))));
        s.get_mut("w").unwrap().accumulate_grad(&[f64::NAN]).unwrap();
        assert!(matches!(adam_step(&mut s, &mut st, 0.1), Err(GdrError::NonFinite(_))));
        assert_eq!(st.step_count, 0);
        assert_eq!(s.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut s = scalar_store(1.0);
        s.set_requires_grad(false);
        let mut st = AdamState::new(0.1);
        adam_step(&mut s, &mut st, 0.1).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn schedule_shape() {
        let (w, h) = (400u64, 64usize);
        let peak = lr_schedule(w, w, h).unwrap();
        let a = (h as f64).powf(-0.5) * (w as f64).powf(-0.5);
        let b = (h as f64).powf(-0.5) * (w as f64) * (w as f64).powf(-1.5);
        assert!((peak - a).abs() < 1e-15 && (peak - b).abs() < 1e-15);
        let half = lr_schedule(w / 2, w, h).unwrap();
        assert!((half - peak / 2.0).abs() < 1e-15);
        let first = lr_schedule(1, 10_000, 512).unwrap();
        assert!((first - 512f64.powf(-0.5) * 10_000f64.powf(-1.5)).abs() < 1e-18);
        assert!(lr_schedule(2 * w, w, h).unwrap() < peak);
        assert!(lr_schedule(0, w, h).is_err());
    }
}
