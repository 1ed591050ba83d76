use serde::{Deserialize, Serialize};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(skip)]
    state: Option<AdamState>,
}

#[derive(Clone, Debug, PartialEq)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            state: None,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.state.as_ref().map_or(0, |s| s.t)
    }

    /// In-place update `params -= lr * m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len(), "adam: parameter/gradient length");
        let st = self.state.get_or_insert_with(|| AdamState {
            m: vec![0.0; grad.len()],
            v: vec![0.0; grad.len()],
            t: 0,
        });
        st.t += 1;
        let c1 = 1.0 - self.beta1.powi(st.t);
        let c2 = 1.0 - self.beta2.powi(st.t);
        for i in 0..params.len() {
            let g = grad[i];
            st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
            st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
            let mh = st.m[i] / c1;
            let vh = st.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_lr_for_small_eps() {
        let mut opt = Adam::new(0.1, 1e-12);
        let mut p = vec![1.0, 1.0, 1.0];
        opt.step(&mut p, &[3.0, -0.5, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-9);
        assert!((p[1] - 1.1).abs() < 1e-9);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::new(0.05, 1e-8);
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 8.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3);
        assert_eq!(opt.steps_taken(), 2000);
    }
}
