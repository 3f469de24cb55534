use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [f64]>) -> Self {
        Self::with_config(shapes, AdamConfig::default())
    }

    pub fn with_config<'a>(shapes: impl IntoIterator<Item = &'a [f64]>, config: AdamConfig) -> Self {
        let m: Vec<Vec<f64>> = shapes.into_iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// One bias-corrected Adam update. Tensors are visited in the same order the
    /// state was created with; a tensor pair counts as one layer for diagnostics.
    /// Rejected updates leave parameters and state untouched.
    pub fn step<'p, 'g>(
        &mut self,
        params: impl IntoIterator<Item = &'p mut [f64]>,
        grads: impl IntoIterator<Item = &'g [f64]>,
        lr: f64,
    ) -> Result<()> {
        let grads: Vec<&[f64]> = grads.into_iter().collect();
        if grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                context: "adam tensor count",
                expected: self.m.len(),
                actual: grads.len(),
            });
        }
        for (i, (g, m)) in grads.iter().zip(&self.m).enumerate() {
            if g.len() != m.len() {
                return Err(Error::DimensionMismatch {
                    context: "adam tensor shape",
                    expected: m.len(),
                    actual: g.len(),
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: i / 2 });
            }
        }
        let params: Vec<&mut [f64]> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(Error::DimensionMismatch {
                context: "adam parameter count",
                expected: grads.len(),
                actual: params.len(),
            });
        }

        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![vec![1.0, -2.0], vec![0.5]];
        let mut st = AdamState::new(p.iter().map(Vec::as_slice));
        let g = vec![vec![0.0; 2], vec![0.0]];
        st.step(p.iter_mut().map(Vec::as_mut_slice), g.iter().map(Vec::as_slice), 1e-3)
            .unwrap();
        assert_eq!(p, vec![vec![1.0, -2.0], vec![0.5]]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.7, -0.002, 1e4] {
            let mut p = vec![vec![0.25]];
            let mut st = AdamState::new(p.iter().map(Vec::as_slice));
            let lr = 3e-4;
            st.step(p.iter_mut().map(Vec::as_mut_slice), [[g].as_slice()], lr)
                .unwrap();
            // m_hat = g, v_hat = g^2
            let expected = 0.25 - lr * g / (g.abs() + 1e-8);
            assert!((p[0][0] - expected).abs() < 1e-15, "g={g}");
        }
    }

    #[test]
    fn non_finite_gradient_rejected_with_layer() {
        let mut p = vec![vec![1.0], vec![1.0], vec![1.0], vec![1.0]];
        let mut st = AdamState::new(p.iter().map(Vec::as_slice));
        let g = [vec![0.1], vec![0.1], vec![f64::NAN], vec![0.1]];
        let err = st
            .step(p.iter_mut().map(Vec::as_mut_slice), g.iter().map(Vec::as_slice), 0.1)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { layer: 1 }));
        assert_eq!(st.t, 0);
        assert!(p.iter().all(|t| t[0] == 1.0));
    }

    #[test]
    fn identical_states_step_identically() {
        let run = || {
            let mut p = vec![vec![0.1, 0.2, 0.3]];
            let mut st = AdamState::new(p.iter().map(Vec::as_slice));
            for k in 0..5 {
                let g = [vec![k as f64, -1.0, 0.5]];
                st.step(p.iter_mut().map(Vec::as_mut_slice), g.iter().map(Vec::as_slice), 0.01)
                    .unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }
}
