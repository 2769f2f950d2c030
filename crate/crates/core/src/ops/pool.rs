use crate::error::{Error, Result};
use crate::ops::conv::output_extent;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2dParams {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Pool2dParams {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Pool2dParams { kernel, stride, padding }
    }
}

fn geometry<T: Real>(x: &Tensor<T>, p: Pool2dParams, op: &'static str) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = x.nchw(op)?;
    if p.padding >= p.kernel {
        return Err(Error::invalid(op, "padding must be smaller than the window"));
    }
    match (output_extent(h, p.kernel, p.stride, p.padding), output_extent(w, p.kernel, p.stride, p.padding)) {
        (Some(ho), Some(wo)) => Ok((n, c, h, w, ho, wo)),
        _ => Err(Error::shape(op, format!("window {} larger than padded {h}×{w} input", p.kernel))),
    }
}

/// Window bounds along one axis, clipped to the unpadded input.
fn window(o: usize, p: Pool2dParams, extent: usize) -> (usize, usize) {
    let start = (o * p.stride) as isize - p.padding as isize;
    let end = (start + p.kernel as isize).min(extent as isize);
    (start.max(0) as usize, end.max(0) as usize)
}

/// Max pooling with implicit −∞ padding. Also returns the flat input index of
/// each selected element; ties go to the first in row-major order.
pub fn max_pool2d<T: Real>(x: &Tensor<T>, p: Pool2dParams) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w, ho, wo) = geometry(x, p, "max_pool2d")?;
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            let (y0, y1) = window(oy, p, h);
            for ox in 0..wo {
                let (x0, x1) = window(ox, p, w);
                let mut best = T::neg_infinity();
                let mut at = usize::MAX;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = base + iy * w + ix;
                        if at == usize::MAX || data[idx] > best {
                            best = data[idx];
                            at = idx;
                        }
                    }
                }
                if at == usize::MAX {
                    return Err(Error::shape("max_pool2d", "window lies entirely in padding"));
                }
                out.push(best);
                argmax.push(at);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, argmax))
}

pub fn max_pool2d_backward<T: Real>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape("max_pool2d backward", "upstream gradient size"));
    }
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (&at, &g) in argmax.iter().zip(grad_out.data()) {
        dx[at] += g;
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Average pooling; padded positions are excluded from the divisor.
pub fn avg_pool2d<T: Real>(x: &Tensor<T>, p: Pool2dParams) -> Result<Tensor<T>> {
    let (n, c, h, w, ho, wo) = geometry(x, p, "avg_pool2d")?;
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            let (y0, y1) = window(oy, p, h);
            for ox in 0..wo {
                let (x0, x1) = window(ox, p, w);
                let mut acc = T::zero();
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        acc += data[base + iy * w + ix];
                    }
                }
                out.push(acc / T::from_usize((y1 - y0) * (x1 - x0)).unwrap());
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn avg_pool2d_backward<T: Real>(input_shape: &[usize], p: Pool2dParams, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::shape("avg_pool2d backward", "expected N×C×H×W input"));
    };
    let (_, _, ho, wo) = grad_out.nchw("avg_pool2d backward")?;
    let g = grad_out.data();
    let mut dx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            let (y0, y1) = window(oy, p, h);
            for ox in 0..wo {
                let (x0, x1) = window(ox, p, w);
                let share = g[(plane * ho + oy) * wo + ox] / T::from_usize((y1 - y0) * (x1 - x0)).unwrap();
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        dx[base + iy * w + ix] += share;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// `N×C×H×W → N×C` mean over the spatial extent.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw("global_avg_pool")?;
    let hw = h * w;
    let count = T::from_usize(hw).unwrap();
    let out = x.data().chunks(hw).map(|plane| plane.iter().copied().fold(T::zero(), |a, v| a + v) / count).collect();
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let hw: usize = input_shape[2..].iter().product();
    let count = T::from_usize(hw).unwrap();
    let mut dx = Vec::with_capacity(grad_out.len() * hw);
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g / count, hw));
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// `N×C×H×W → N×C` maximum over the spatial extent, with argmax indices.
pub fn global_max_pool<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.nchw("global_max_pool")?;
    let hw = h * w;
    let mut out = Vec::with_capacity(n * c);
    let mut argmax = Vec::with_capacity(n * c);
    for (plane, values) in x.data().chunks(hw).enumerate() {
        let mut best = values[0];
        let mut at = 0;
        for (i, &v) in values.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                at = i;
            }
        }
        out.push(best);
        argmax.push(plane * hw + at);
    }
    Ok((Tensor::new(vec![n, c], out)?, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_pool_halves_112() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 112, 112]);
        let (y, _) = max_pool2d(&x, Pool2dParams::new(3, 2, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 56, 56]);
    }

    #[test]
    fn padding_never_wins_a_max() {
        let x = Tensor::<f64>::full(vec![1, 1, 3, 3], -5.0);
        let (y, _) = max_pool2d(&x, Pool2dParams::new(3, 2, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == -5.0));
    }

    #[test]
    fn window_larger_than_input_is_an_error() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
        assert!(max_pool2d(&x, Pool2dParams::new(3, 1, 0)).is_err());
        assert!(avg_pool2d(&x, Pool2dParams::new(3, 1, 0)).is_err());
    }

    #[test]
    fn global_pools_of_constant_map() {
        let x = Tensor::<f64>::full(vec![2, 3, 4, 5], 1.75);
        assert!(global_avg_pool(&x).unwrap().data().iter().all(|&v| v == 1.75));
        assert!(global_max_pool(&x).unwrap().0.data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn avg_pool_excludes_padding() {
        let x = Tensor::<f64>::full(vec![1, 1, 2, 2], 3.0);
        let y = avg_pool2d(&x, Pool2dParams::new(3, 1, 1)).unwrap();
        assert!(y.data().iter().all(|&v| (v - 3.0).abs() < 1e-15));
    }
}
