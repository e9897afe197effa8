//! Adam with bias correction, operating in place on engine parameters.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nncore::engine::Engine;
use crate::nncore::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One optimizer instance owns the first/second-moment slots for the subset
/// of parameters it manages. Subsets are selected by name prefix, which is
/// how alternating updates (e.g. converter vs adversary) stay disjoint.
pub struct Adam<S: Scalar> {
    cfg: AdamConfig,
    step_count: u64,
    prefixes: Option<Vec<String>>,
    slots: HashMap<String, (Vec<S>, Vec<S>)>,
}

impl<S: Scalar> Adam<S> {
    /// Manage every trainable parameter.
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step_count: 0,
            prefixes: None,
            slots: HashMap::new(),
        }
    }

    /// Manage only parameters whose name starts with one of `prefixes`.
    pub fn for_prefixes(cfg: AdamConfig, prefixes: &[&str]) -> Self {
        Adam {
            cfg,
            step_count: 0,
            prefixes: Some(prefixes.iter().map(|s| s.to_string()).collect()),
            slots: HashMap::new(),
        }
    }

    fn manages(&self, name: &str) -> bool {
        match &self.prefixes {
            None => true,
            Some(ps) => ps.iter().any(|p| name.starts_with(p)),
        }
    }

    /// Apply one update. Every managed trainable parameter must carry a
    /// gradient; a missing one means the step was wired up wrong and is an
    /// error rather than a silent no-op.
    pub fn step(&mut self, eng: &mut Engine<S>) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let lr = S::from_f64(self.cfg.learning_rate);
        let eps = S::from_f64(self.cfg.epsilon);
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);

        for idx in 0..eng.param_count() {
            let (name, trainable) = {
                let p = eng.param(idx);
                (p.name.clone(), p.trainable)
            };
            if !trainable || !self.manages(&name) {
                continue;
            }
            let grad = match eng.param_tensor(idx).grad() {
                Some(g) => g.to_vec(),
                None => return Err(Error::MissingGradient(name)),
            };
            let n = grad.len();
            let (m, v) = self
                .slots
                .entry(name)
                .or_insert_with(|| (vec![S::zero(); n], vec![S::zero(); n]));
            let data = eng.param_tensor_mut(idx).data_mut();
            for i in 0..n {
                m[i] = b1 * m[i] + (S::one() - b1) * grad[i];
                v[i] = b2 * v[i] + (S::one() - b2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }
}
