//! Grouped 2-d convolution without bias, lowered to GEMM through im2col.
//!
//! Work is split per sample with rayon; per-sample weight gradients are
//! reduced in sample order, so results never depend on the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dParams { stride: (stride, stride), padding: (padding, padding), groups }
    }
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams::new(1, 0, 1)
    }
}

/// Output extent of a sliding window, or `None` when it would be empty.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    groups: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl ConvGeom {
    pub(crate) fn new<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, p: Conv2dParams) -> Result<Self> {
        let (n, cin, h, w) = x.nchw("conv2d")?;
        let (cout, cg, kh, kw) = weight.nchw("conv2d weight")?;
        let groups = p.groups;
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("groups {groups} must divide input channels {cin} and output channels {cout}"),
            ));
        }
        if cg * groups != cin {
            return Err(Error::shape(
                "conv2d",
                format!("weight expects {} input channels per group, input has {}", cg, cin / groups),
            ));
        }
        let ho = output_extent(h, kh, p.stride.0, p.padding.0);
        let wo = output_extent(w, kw, p.stride.1, p.padding.1);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(Error::shape(
                "conv2d",
                format!("non-positive output extent for {h}×{w} input, kernel {kh}×{kw}"),
            ));
        };
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            ho,
            wo,
            groups,
            sh: p.stride.0,
            sw: p.stride.1,
            ph: p.padding.0,
            pw: p.padding.1,
        })
    }

    fn cg(&self) -> usize {
        self.cin / self.groups
    }

    fn og(&self) -> usize {
        self.cout / self.groups
    }

    fn ckk(&self) -> usize {
        self.cg() * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.ho * self.wo
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    /// Unfold one group of one sample into a `ckk × (ho·wo)` matrix.
    fn im2col<T: Real>(&self, xs: &[T], group: usize, col: &mut [T]) {
        let hw = self.h * self.w;
        let ohw = self.out_hw();
        for c in 0..self.cg() {
            let plane = &xs[(group * self.cg() + c) * hw..][..hw];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut col[((c * self.kh + i) * self.kw + j) * ohw..][..ohw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.sh + i) as isize - self.ph as isize;
                        let dst = &mut row[oy * self.wo..][..self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..][..self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.sw + j) as isize - self.pw as isize;
                            *d = if ix < 0 || ix >= self.w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Accumulate a `ckk × (ho·wo)` column matrix back into one group of `dxs`.
    fn col2im<T: Real>(&self, col: &[T], group: usize, dxs: &mut [T]) {
        let hw = self.h * self.w;
        let ohw = self.out_hw();
        for c in 0..self.cg() {
            let plane = &mut dxs[(group * self.cg() + c) * hw..][..hw];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &col[((c * self.kh + i) * self.kw + j) * ohw..][..ohw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.sh + i) as isize - self.ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.sw + j) as isize - self.pw as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, p: Conv2dParams) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, weight, p)?;
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * g.out_hw();
    let (ckk, og, ohw) = (g.ckk(), g.og(), g.out_hw());
    let wdata = weight.data();
    let xdata = x.data();
    let mut out = vec![T::zero(); g.n * out_per];
    out.par_chunks_mut(out_per).enumerate().for_each(|(n, out_n)| {
        let xs = &xdata[n * in_per..][..in_per];
        let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); ckk * ohw] };
        for grp in 0..g.groups {
            let w_g = &wdata[grp * og * ckk..][..og * ckk];
            let rhs: &[T] = if g.pointwise() {
                &xs[grp * g.cg() * ohw..][..ckk * ohw]
            } else {
                g.im2col(xs, grp, &mut col);
                &col
            };
            let dst = &mut out_n[grp * og * ohw..][..og * ohw];
            T::gemm(og, ckk, ohw, w_g, (ckk as isize, 1), rhs, (ohw as isize, 1), dst, (ohw as isize, 1), false);
        }
    });
    Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out)
}

/// Gradients of a convolution with respect to its input and/or weight.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    p: Conv2dParams,
    grad_out: &Tensor<T>,
    want_input: bool,
    want_weight: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let g = ConvGeom::new(x, weight, p)?;
    if grad_out.shape() != [g.n, g.cout, g.ho, g.wo] {
        return Err(Error::shape("conv2d backward", format!("upstream gradient {:?}", grad_out.shape())));
    }
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * g.out_hw();
    let (ckk, og, ohw) = (g.ckk(), g.og(), g.out_hw());
    let wdata = weight.data();
    let xdata = x.data();
    let gdata = grad_out.data();

    let dx = if want_input {
        let mut dx = vec![T::zero(); g.n * in_per];
        dx.par_chunks_mut(in_per).enumerate().for_each(|(n, dx_n)| {
            let go = &gdata[n * out_per..][..out_per];
            let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); ckk * ohw] };
            for grp in 0..g.groups {
                let w_g = &wdata[grp * og * ckk..][..og * ckk];
                let go_g = &go[grp * og * ohw..][..og * ohw];
                if g.pointwise() {
                    let dst = &mut dx_n[grp * g.cg() * ohw..][..ckk * ohw];
                    T::gemm(ckk, og, ohw, w_g, (1, ckk as isize), go_g, (ohw as isize, 1), dst, (ohw as isize, 1), false);
                } else {
                    T::gemm(ckk, og, ohw, w_g, (1, ckk as isize), go_g, (ohw as isize, 1), &mut col, (ohw as isize, 1), false);
                    g.col2im(&col, grp, dx_n);
                }
            }
        });
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };

    let dw = if want_weight {
        let partials: Vec<Vec<T>> = (0..g.n)
            .into_par_iter()
            .map(|n| {
                let xs = &xdata[n * in_per..][..in_per];
                let go = &gdata[n * out_per..][..out_per];
                let mut dw = vec![T::zero(); weight.len()];
                let mut col = if g.pointwise() { Vec::new() } else { vec![T::zero(); ckk * ohw] };
                for grp in 0..g.groups {
                    let rhs: &[T] = if g.pointwise() {
                        &xs[grp * g.cg() * ohw..][..ckk * ohw]
                    } else {
                        g.im2col(xs, grp, &mut col);
                        &col
                    };
                    let go_g = &go[grp * og * ohw..][..og * ohw];
                    let dst = &mut dw[grp * og * ckk..][..og * ckk];
                    T::gemm(og, ohw, ckk, go_g, (ohw as isize, 1), rhs, (1, ohw as isize), dst, (ckk as isize, 1), false);
                }
                dw
            })
            .collect();
        let mut total = vec![T::zero(); weight.len()];
        for part in &partials {
            for (t, &v) in total.iter_mut().zip(part) {
                *t += v;
            }
        }
        Some(Tensor::new(weight.shape().to_vec(), total)?)
    } else {
        None
    };
    Ok((dx, dw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_pointwise_kernel_scales() {
        let x = Tensor::<f32>::full(vec![1, 1, 3, 3], 1.0);
        let w = Tensor::new(vec![1, 1, 1, 1], vec![2.0f32]).unwrap();
        let y = conv2d(&x, &w, Conv2dParams::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn depthwise_identity() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 4, 4], |i| i as f64 * 0.5 - 3.0);
        let w = Tensor::full(vec![3, 1, 1, 1], 1.0);
        let y = conv2d(&x, &w, Conv2dParams::new(1, 0, 3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rejects_groups_not_dividing_channels() {
        let x = Tensor::<f32>::zeros(vec![1, 4, 3, 3]);
        let w = Tensor::zeros(vec![3, 2, 1, 1]);
        let err = conv2d(&x, &w, Conv2dParams::new(1, 0, 2)).unwrap_err();
        assert!(err.to_string().contains("groups"), "{err}");
    }

    #[test]
    fn rejects_empty_output() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
        let w = Tensor::zeros(vec![1, 1, 3, 3]);
        assert!(conv2d(&x, &w, Conv2dParams::default()).is_err());
        assert!(conv2d(&x, &w, Conv2dParams::new(1, 1, 1)).is_ok());
    }

    #[test]
    fn extents_follow_stride_arithmetic() {
        assert_eq!(output_extent(224, 7, 2, 3), Some(112));
        assert_eq!(output_extent(56, 3, 2, 1), Some(28));
        assert_eq!(output_extent(56, 1, 2, 0), Some(28));
        assert_eq!(output_extent(2, 3, 1, 0), None);
    }
}
