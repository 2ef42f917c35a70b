//! Adam with separate moment buffers per (objective, parameter group).

use std::collections::BTreeMap;

use autograd::{lit, Real, Tensor};

use crate::config::AdamConfig;
use crate::error::{Error, Result};
use crate::params::{Group, ParameterStore};

/// Moments and step count for one (objective, group) pair.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamSlot<R: Real> {
    pub step: u64,
    pub first: BTreeMap<String, Tensor<R>>,
    pub second: BTreeMap<String, Tensor<R>>,
}

/// All optimizer state, keyed by `"{objective}/{group}"`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OptimizerState<R: Real> {
    pub slots: BTreeMap<String, AdamSlot<R>>,
}

pub fn slot_key(objective: &str, group: Group) -> String {
    format!("{objective}/{}", group.prefix())
}

impl<R: Real> OptimizerState<R> {
    pub fn new() -> Self {
        OptimizerState { slots: BTreeMap::new() }
    }

    /// One Adam step on every parameter in `grads`, which must all belong
    /// to `group`.
    pub fn step(
        &mut self,
        objective: &str,
        group: Group,
        params: &mut ParameterStore<R>,
        grads: &BTreeMap<String, Tensor<R>>,
        lr: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        let slot = self.slots.entry(slot_key(objective, group)).or_default();
        slot.step += 1;
        let t = slot.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1: R = lit(1.0 - b1.powi(t));
        let c2: R = lit(1.0 - b2.powi(t));
        let (b1r, b2r, eps, lr_r): (R, R, R, R) = (lit(b1), lit(b2), lit(cfg.eps), lit(lr));
        for (name, g) in grads {
            if Group::of(name) != Some(group) {
                return Err(Error::Shape(format!("`{name}` is not in the {} group", group.prefix())));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("{objective} gradient of `{name}`")));
            }
            let p = params.get_mut(name).ok_or_else(|| Error::Shape(format!("unknown parameter `{name}`")))?;
            let m = slot.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = slot.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, mi), vi), &gi) in
                p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data())
            {
                *mi = b1r * *mi + (R::one() - b1r) * gi;
                *vi = b2r * *vi + (R::one() - b2r) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr_r * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_parameter_probe_matches_the_recursion() {
        let cfg = AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut params = ParameterStore::<f64>::new();
        params.insert("encoder.x", Tensor::scalar(1.0));
        let mut opt = OptimizerState::new();
        let grads_seq = [0.5, -0.25, 1.5];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for (i, &g) in grads_seq.iter().enumerate() {
            let grads = BTreeMap::from([("encoder.x".to_string(), Tensor::scalar(g))]);
            opt.step("inversion", Group::Encoder, &mut params, &grads, 0.01, &cfg).unwrap();
            let t = (i + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            let slot = &opt.slots["inversion/encoder"];
            assert!((slot.first["encoder.x"].item() - m).abs() < 1e-12);
            assert!((slot.second["encoder.x"].item() - v).abs() < 1e-12);
            assert!((params.get("encoder.x").unwrap().item() - x).abs() < 1e-12);
        }
        // First step moves by lr·sign(g) up to eps.
        let mut p2 = ParameterStore::<f64>::new();
        p2.insert("encoder.x", Tensor::scalar(0.0));
        let mut o2 = OptimizerState::new();
        let g = BTreeMap::from([("encoder.x".to_string(), Tensor::scalar(3.0))]);
        o2.step("x", Group::Encoder, &mut p2, &g, 0.1, &cfg).unwrap();
        assert!((p2.get("encoder.x").unwrap().item() + 0.1).abs() < 1e-9);
    }

    #[test]
    fn wrong_group_and_nan_are_rejected() {
        let mut params = ParameterStore::<f32>::new();
        params.insert("generator.w", Tensor::scalar(1.0));
        let mut opt = OptimizerState::new();
        let cfg = AdamConfig::default();
        let g = BTreeMap::from([("generator.w".to_string(), Tensor::scalar(1.0))]);
        assert!(opt.step("d", Group::Discriminator, &mut params, &g, 0.1, &cfg).is_err());
        let bad = BTreeMap::from([("generator.w".to_string(), Tensor::scalar(f32::NAN))]);
        assert!(opt.step("g", Group::Generator, &mut params, &bad, 0.1, &cfg).is_err());
    }
}
