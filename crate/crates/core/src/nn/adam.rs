use super::model::Params;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &Params) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::super::model::ModelDims;
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            n_features: 3,
            hidden: 2,
            layers: 1,
            n_classes: 4,
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Params::zeros(dims());
        p.proj_w.fill(0.7);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &before.zeros_like(), &mut st, 0.01);
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Params::zeros(dims());
        let mut g = p.zeros_like();
        g.proj_w[[0, 0]] = 3.0;
        g.proj_w[[1, 1]] = -0.002;
        g.out_b[[0, 2]] = 1e3;
        let mut st = AdamState::new(&p);
        let lr = 2e-4;
        adam_step(&mut p, &g, &mut st, lr);
        // m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps)
        for (val, grad) in [(p.proj_w[[0, 0]], 3.0), (p.proj_w[[1, 1]], -0.002), (p.out_b[[0, 2]], 1e3)] {
            let expect = -lr * grad / (f64::abs(grad) + 1e-8);
            assert!((val - expect).abs() < 1e-15, "{val} vs {expect}");
            assert!((val.abs() - lr).abs() < lr * 1e-5);
        }
        assert_eq!(p.proj_w[[2, 0]], 0.0);
    }

    #[test]
    fn state_mirrors_parameter_shapes() {
        let p = Params::zeros(dims());
        let st = AdamState::new(&p);
        let shapes = |q: &Params| q.tensors().iter().map(|t| t.dim()).collect::<Vec<_>>();
        assert_eq!(shapes(&st.m), shapes(&p));
        assert_eq!(shapes(&st.v), shapes(&p));
    }
}
