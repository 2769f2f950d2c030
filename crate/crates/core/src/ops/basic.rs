use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn scale<T: Real>(x: &Tensor<T>, factor: T) -> Tensor<T> {
    x.map(|v| v * factor)
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Concatenate along axis 1.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() < 2 || a.ndim() != b.ndim() || a.shape()[0] != b.shape()[0] || a.shape()[2..] != b.shape()[2..] {
        return Err(Error::shape("concat_channels", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (outer, ca, inner) = split_at_axis(a.shape(), 1);
    let cb = b.shape()[1];
    let mut data = Vec::with_capacity(a.len() + b.len());
    for o in 0..outer {
        data.extend_from_slice(&a.data()[o * ca * inner..][..ca * inner]);
        data.extend_from_slice(&b.data()[o * cb * inner..][..cb * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[1] = ca + cb;
    Tensor::new(shape, data)
}

/// Elements `from..to` along `axis`.
pub fn slice_axis<T: Real>(x: &Tensor<T>, axis: usize, from: usize, to: usize) -> Result<Tensor<T>> {
    if axis >= x.ndim() {
        return Err(Error::shape("slice", format!("axis {axis} out of range for {:?}", x.shape())));
    }
    let (outer, extent, inner) = split_at_axis(x.shape(), axis);
    if from >= to || to > extent {
        return Err(Error::invalid("slice", format!("range {from}..{to} outside 0..{extent}")));
    }
    let width = (to - from) * inner;
    let mut data = Vec::with_capacity(outer * width);
    for o in 0..outer {
        data.extend_from_slice(&x.data()[(o * extent + from) * inner..][..width]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = to - from;
    Tensor::new(shape, data)
}

/// Scatter a slice gradient back into a zero tensor of the source shape.
pub fn slice_axis_backward<T: Real>(
    input_shape: &[usize],
    axis: usize,
    from: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (outer, extent, inner) = split_at_axis(input_shape, axis);
    let count = grad_out.shape()[axis];
    let width = count * inner;
    let mut dx = vec![T::zero(); outer * extent * inner];
    for o in 0..outer {
        dx[(o * extent + from) * inner..][..width].copy_from_slice(&grad_out.data()[o * width..][..width]);
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// `x·Wᵀ + b` for `x: N×C`, `W: K×C`, `b: K`.
pub fn linear<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[n, c], &[k, wc]) = (x.shape(), weight.shape()) else {
        return Err(Error::shape("linear", format!("{:?} · {:?}ᵀ", x.shape(), weight.shape())));
    };
    if c != wc || bias.shape() != [k] {
        return Err(Error::shape("linear", format!("{:?} · {:?}ᵀ + {:?}", x.shape(), weight.shape(), bias.shape())));
    }
    let mut out = Vec::with_capacity(n * k);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(n, c, k, x.data(), (c as isize, 1), weight.data(), (1, c as isize), &mut out, (k as isize, 1), true);
    Tensor::new(vec![n, k], out)
}

/// Returns `(dx, dweight, dbias)`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let k = weight.shape()[0];
    let g = grad_out.data();
    let mut dx = vec![T::zero(); n * c];
    T::gemm(n, k, c, g, (k as isize, 1), weight.data(), (c as isize, 1), &mut dx, (c as isize, 1), false);
    let mut dw = vec![T::zero(); k * c];
    T::gemm(k, n, c, g, (1, k as isize), x.data(), (c as isize, 1), &mut dw, (c as isize, 1), false);
    let mut db = vec![T::zero(); k];
    for row in g.chunks(k) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    Ok((Tensor::new(vec![n, c], dx)?, Tensor::new(vec![k, c], dw)?, Tensor::new(vec![k], db)?))
}

/// Row-wise softmax of `N×K` logits.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let &[_, k] = logits.shape() else {
        return Err(Error::shape("softmax", format!("expected N×K, got {:?}", logits.shape())));
    };
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean over the batch of `−log softmax(logits)[label]`. Also returns the
/// softmax probabilities for the backward rule.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let &[n, k] = logits.shape() else {
        return Err(Error::shape("softmax_cross_entropy", format!("expected N×K, got {:?}", logits.shape())));
    };
    if labels.len() != n {
        return Err(Error::shape("softmax_cross_entropy", format!("{n} rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid("softmax_cross_entropy", format!("label {bad} out of range 0..{k}")));
    }
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        total += log_sum - row[label];
    }
    Ok((total / T::from_usize(n).unwrap(), softmax(logits)?))
}

pub fn softmax_cross_entropy_backward<T: Real>(probs: &Tensor<T>, labels: &[usize], upstream: T) -> Tensor<T> {
    let k = probs.shape()[1];
    let scale = upstream / T::from_usize(labels.len()).unwrap();
    let mut d = probs.data().to_vec();
    for (row, &label) in d.chunks_mut(k).zip(labels) {
        row[label] -= T::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Tensor::new(probs.shape().to_vec(), d).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::new(vec![3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn slice_inverts_concat() {
        let a = Tensor::<f32>::from_fn(vec![2, 3, 2, 2], |i| i as f32 * 0.1);
        let b = Tensor::<f32>::from_fn(vec![2, 2, 2, 2], |i| -(i as f32));
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), &[2, 5, 2, 2]);
        assert_eq!(slice_axis(&ab, 1, 0, 3).unwrap(), a);
        assert_eq!(slice_axis(&ab, 1, 3, 5).unwrap(), b);
    }

    #[test]
    fn slice_bounds_are_checked() {
        let a = Tensor::<f32>::zeros(vec![1, 3, 1, 1]);
        assert!(slice_axis(&a, 1, 2, 2).is_err());
        assert!(slice_axis(&a, 1, 0, 4).is_err());
        assert!(slice_axis(&a, 4, 0, 1).is_err());
    }

    #[test]
    fn add_zeros_is_identity() {
        let a = Tensor::<f64>::from_fn(vec![2, 2], |i| i as f64 - 1.5);
        assert_eq!(add(&a, &Tensor::zeros(vec![2, 2])).unwrap(), a);
        assert!(add(&a, &Tensor::zeros(vec![4])).is_err());
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        let logits = Tensor::<f64>::zeros(vec![3, 7]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_cost_nothing() {
        let logits = Tensor::new(vec![1, 3], vec![0.0f64, 200.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss.is_finite() && loss < 1e-80);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::<f32>::zeros(vec![1, 3]);
        assert!(softmax_cross_entropy(&logits, &[3]).is_err());
    }
}
