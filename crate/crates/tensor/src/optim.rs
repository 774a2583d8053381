//! AdaMax with bias-corrected step size.

use std::collections::HashMap;

use crate::array::Array;
use crate::param::Param;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
struct Slot<T: Scalar> {
    exp_avg: Vec<T>,
    exp_inf: Vec<T>,
    step: u64,
}

/// AdaMax: `m ← β1·m + (1-β1)·g`, `u ← max(β2·u, |g| + ε)`,
/// `θ ← θ - lr/(1-β1^t) · m/u`.
#[derive(Clone, Debug)]
pub struct AdaMax<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: HashMap<String, Slot<T>>,
}

impl<T: Scalar> AdaMax<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            state: HashMap::new(),
        }
    }

    pub fn step(&mut self, grads: &[(Param<T>, Array<T>)]) {
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (p, g) in grads {
            let n = g.numel();
            let slot = self.state.entry(p.name().to_string()).or_insert_with(|| Slot {
                exp_avg: vec![T::zero(); n],
                exp_inf: vec![T::zero(); n],
                step: 0,
            });
            assert_eq!(slot.exp_avg.len(), n, "gradient size changed for {}", p.name());
            slot.step += 1;
            let clr = self.lr / (1.0 - b1.powi(slot.step.min(i32::MAX as u64) as i32));
            let (tb1, tb2, teps, tclr) = (
                T::from_f64_lossy(b1),
                T::from_f64_lossy(b2),
                T::from_f64_lossy(eps),
                T::from_f64_lossy(clr),
            );
            p.update(|value| {
                let v = value.data_mut();
                for (i, &gi) in g.data().iter().enumerate() {
                    let m = tb1 * slot.exp_avg[i] + (T::one() - tb1) * gi;
                    let u = (tb2 * slot.exp_inf[i]).max(gi.abs() + teps);
                    slot.exp_avg[i] = m;
                    slot.exp_inf[i] = u;
                    v[i] = v[i] - tclr * m / u;
                }
            });
        }
    }

    /// Number of updates applied to the named parameter.
    pub fn steps(&self, name: &str) -> u64 {
        self.state.get(name).map_or(0, |s| s.step)
    }

    /// Flattened state `(name, step, exp_avg, exp_inf)` for serialisation.
    pub fn export_state(&self) -> Vec<(String, u64, Vec<T>, Vec<T>)> {
        let mut out: Vec<_> = self
            .state
            .iter()
            .map(|(k, s)| (k.clone(), s.step, s.exp_avg.clone(), s.exp_inf.clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn import_state(&mut self, state: Vec<(String, u64, Vec<T>, Vec<T>)>) {
        self.state = state
            .into_iter()
            .map(|(k, step, exp_avg, exp_inf)| {
                (
                    k,
                    Slot {
                        exp_avg,
                        exp_inf,
                        step,
                    },
                )
            })
            .collect();
    }
}
