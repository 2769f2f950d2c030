use crate::arch::Parameter;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Momentum buffers, one per parameter.
#[derive(Debug, Clone)]
pub struct SgdState<T> {
    pub velocity: Vec<Tensor<T>>,
    pub step: usize,
}

impl<T: Real> SgdState<T> {
    pub fn new(params: &[Parameter<T>]) -> Self {
        SgdState { velocity: params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect(), step: 0 }
    }
}

/// `v = momentum·v + g + wd·p; p −= lr·v`. A missing gradient counts as zero.
/// Non-finite gradients abort before any parameter is touched.
pub fn sgd_step<T: Real>(
    params: &mut [Parameter<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut SgdState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::shape("sgd_step", format!("{} params, {} grads, {} buffers", params.len(), grads.len(), state.velocity.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != p.value.shape() {
                return Err(Error::shape("sgd_step", format!("gradient of `{}` has shape {:?}", p.name, g.shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite { what: format!("gradient of `{}`", p.name), step: state.step });
            }
        }
    }
    let (lr, m, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        let vel = v.data_mut();
        let values = p.value.data_mut();
        match g {
            Some(g) => {
                for ((v, x), &g) in vel.iter_mut().zip(values.iter_mut()).zip(g.data()) {
                    *v = m * *v + g + wd * *x;
                    *x -= lr * *v;
                }
            }
            None => {
                for (v, x) in vel.iter_mut().zip(values.iter_mut()) {
                    *v = m * *v + wd * *x;
                    *x -= lr * *v;
                }
            }
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: Vec<f64>) -> Vec<Parameter<f64>> {
        vec![Parameter { name: "w".into(), value: Tensor::new(vec![values.len()], values).unwrap() }]
    }

    #[test]
    fn plain_gradient_step() {
        let mut p = param(vec![1.0, -2.0]);
        let mut s = SgdState::new(&p);
        let g = Tensor::new(vec![2], vec![0.5, 1.0]).unwrap();
        sgd_step(&mut p, &[Some(g)], &mut s, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p[0].value.data(), &[1.0 - 0.05, -2.0 - 0.1]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = param(vec![1.0, -2.0]);
        let mut s = SgdState::new(&p);
        sgd_step(&mut p, &[Some(Tensor::zeros(vec![2]))], &mut s, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut p, &[None], &mut s, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p[0].value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn nan_gradient_aborts_with_step() {
        let mut p = param(vec![1.0]);
        let mut s = SgdState::new(&p);
        s.step = 7;
        let err = sgd_step(&mut p, &[Some(Tensor::new(vec![1], vec![f64::NAN]).unwrap())], &mut s, 0.1, 0.9, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 7, .. }), "{err}");
        assert_eq!(p[0].value.data(), &[1.0]);
    }
}
