//! Two-dimensional cross-correlation with zero padding, stride and dilation,
//! lowered to GEMM through an im2col buffer.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        ConvGeometry {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeometry { stride, padding, dilation }
    }

    /// Padding that keeps the spatial size of a stride-1 convolution.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvGeometry::new(1, dilation * (kernel - 1) / 2, dilation)
    }

    /// `floor((input + 2p - d(k-1) - 1) / s) + 1`, or `None` when that is
    /// smaller than one.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || self.dilation == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Sizes of one convolution call.
#[derive(Debug, Clone, Copy)]
struct Plan {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeometry,
}

impl Plan {
    fn new(x: &[usize], weight: &[usize], geom: ConvGeometry) -> Result<Self> {
        let (&[batch, c_in, h, w], &[c_out, wc_in, kh, kw]) = (x, weight) else {
            return Err(Error::shape(format!(
                "conv2d expects [N,C,H,W] input and [O,C,kH,kW] weight, got {x:?} and {weight:?}"
            )));
        };
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv2d weight expects {wc_in} input channels, input has {c_in}"
            )));
        }
        let (Some(oh), Some(ow)) = (geom.output_extent(h, kh), geom.output_extent(w, kw)) else {
            return Err(Error::shape(format!(
                "conv2d output would be empty for input {h}x{w}, kernel {kh}x{kw}, {geom:?}"
            )));
        };
        Ok(Plan {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh,
            ow,
            geom,
        })
    }

    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom.stride == 1 && self.geom.padding == 0
    }

    /// Input coordinate sampled by output position `o` at kernel tap `k`.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.geom.stride + k * self.geom.dilation) as isize - self.geom.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let n_cols = self.cols();
        for c in 0..self.c_in {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                    for oy in 0..self.oh {
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match self.source(oy, i, self.h) {
                            None => line.iter_mut().for_each(|v| *v = T::zero()),
                            Some(y) => {
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ox, j, self.w) {
                                        Some(x) => plane[y * self.w + x],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let n_cols = self.cols();
        for c in 0..self.c_in {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * n_cols..(row + 1) * n_cols];
                    for oy in 0..self.oh {
                        let Some(y) = self.source(oy, i, self.h) else {
                            continue;
                        };
                        for ox in 0..self.ow {
                            if let Some(x) = self.source(ox, j, self.w) {
                                plane[y * self.w + x] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x: [N, C_in, H, W]` with `weight: [C_out, C_in, kH, kW]`.
///
/// Tap `(i, j)` of output `(oy, ox)` reads input
/// `(oy*stride + i*dilation - padding, ox*stride + j*dilation - padding)`,
/// with zeros outside the image.
pub fn conv2d<'t, T: Scalar>(x: &Var<'t, T>, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>, geom: ConvGeometry) -> Result<Var<'t, T>> {
    let plan = Plan::new(x.dims(), weight.dims(), geom)?;
    if let Some(b) = bias {
        if b.dims() != [plan.c_out] {
            return Err(Error::shape(format!(
                "conv2d bias {:?} for {} output channels",
                b.dims(),
                plan.c_out
            )));
        }
    }
    let out = forward(&plan, x.value(), weight.value(), bias.map(|b| b.value()));

    let (xv, wv) = (x.value_rc(), weight.value_rc());
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    Ok(x.tape().op(out, &inputs, move |g, needs| {
        let (dx, dw, db) = backward(&plan, &xv, &wv, g, needs);
        let mut grads = vec![dx, dw];
        if needs.len() == 3 {
            grads.push(db);
        }
        Ok(grads)
    }))
}

fn forward<T: Scalar>(plan: &Plan, x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
    let (rows, n_cols) = (plan.rows(), plan.cols());
    let in_size = plan.c_in * plan.h * plan.w;
    let out_size = plan.c_out * n_cols;
    let mut out = vec![T::zero(); plan.batch * out_size];
    let mut cols = if plan.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * n_cols]
    };
    for n in 0..plan.batch {
        let image = &x.data()[n * in_size..(n + 1) * in_size];
        let lhs: &[T] = if plan.is_pointwise() {
            image
        } else {
            plan.im2col(image, &mut cols);
            &cols
        };
        let dst = &mut out[n * out_size..(n + 1) * out_size];
        T::gemm(
            plan.c_out,
            rows,
            n_cols,
            T::one(),
            w.data(),
            (rows, 1),
            lhs,
            (n_cols, 1),
            T::zero(),
            dst,
            (n_cols, 1),
        );
        if let Some(b) = bias {
            for (chunk, &bv) in dst.chunks_mut(n_cols).zip(b.data()) {
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Tensor::new([plan.batch, plan.c_out, plan.oh, plan.ow], out).expect("conv2d output shape")
}

type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

fn backward<T: Scalar>(plan: &Plan, x: &Tensor<T>, w: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> ConvGrads<T> {
    let (rows, n_cols) = (plan.rows(), plan.cols());
    let in_size = plan.c_in * plan.h * plan.w;
    let out_size = plan.c_out * n_cols;
    let need_dx = needs[0];
    let need_dw = needs[1];
    let need_db = needs.get(2).copied().unwrap_or(false);

    let mut dx = if need_dx { vec![T::zero(); x.numel()] } else { Vec::new() };
    let mut dw = vec![T::zero(); if need_dw { w.numel() } else { 0 }];
    let mut cols = vec![T::zero(); rows * n_cols];
    let mut dcols = vec![T::zero(); if need_dx && !plan.is_pointwise() { rows * n_cols } else { 0 }];

    for n in 0..plan.batch {
        let gn = &g.data()[n * out_size..(n + 1) * out_size];
        let image = &x.data()[n * in_size..(n + 1) * in_size];
        if need_dw {
            let lhs: &[T] = if plan.is_pointwise() {
                image
            } else {
                plan.im2col(image, &mut cols);
                &cols
            };
            // dW += g_n (C_out x cols) . lhs^T (cols x rows)
            T::gemm(
                plan.c_out,
                n_cols,
                rows,
                T::one(),
                gn,
                (n_cols, 1),
                lhs,
                (1, n_cols),
                T::one(),
                &mut dw,
                (rows, 1),
            );
        }
        if need_dx {
            let dst = &mut dx[n * in_size..(n + 1) * in_size];
            if plan.is_pointwise() {
                T::gemm(
                    rows,
                    plan.c_out,
                    n_cols,
                    T::one(),
                    w.data(),
                    (1, rows),
                    gn,
                    (n_cols, 1),
                    T::zero(),
                    dst,
                    (n_cols, 1),
                );
            } else {
                T::gemm(
                    rows,
                    plan.c_out,
                    n_cols,
                    T::one(),
                    w.data(),
                    (1, rows),
                    gn,
                    (n_cols, 1),
                    T::zero(),
                    &mut dcols,
                    (n_cols, 1),
                );
                plan.col2im(&dcols, dst);
            }
        }
    }

    let dx = need_dx.then(|| Tensor::new(x.dims().to_vec(), dx).expect("dx shape"));
    let dw = need_dw.then(|| Tensor::new(w.dims().to_vec(), dw).expect("dw shape"));
    let db = need_db.then(|| {
        let mut db = vec![T::zero(); plan.c_out];
        for n in 0..plan.batch {
            let gn = &g.data()[n * out_size..(n + 1) * out_size];
            for (acc, chunk) in db.iter_mut().zip(gn.chunks(n_cols)) {
                *acc += chunk.iter().copied().sum();
            }
        }
        Tensor::new([plan.c_out], db).expect("db shape")
    });
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn ones_kernel_counts_window_overlap() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones([1, 1, 5, 5]).unwrap());
        let w = tape.constant(Tensor::ones([1, 1, 3, 3]).unwrap());
        let y = conv2d(&x, &w, None, ConvGeometry::new(1, 1, 1)).unwrap();
        let d = y.value().data();
        assert_eq!(y.dims(), &[1, 1, 5, 5]);
        assert_eq!(d[12], 9.0);
        assert_eq!([d[0], d[4], d[20], d[24]], [4.0; 4]);
        assert_eq!(d[2], 6.0);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..12).map(|v| v as f64 - 3.5).collect();
        let x = tape.constant(Tensor::new([1, 1, 3, 4], data).unwrap());
        let w = tape.constant(Tensor::ones([1, 1, 1, 1]).unwrap());
        let b = tape.constant(Tensor::zeros([1]).unwrap());
        let y = conv2d(&x, &w, Some(&b), ConvGeometry::default()).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn dilation_with_matching_padding_preserves_size() {
        let g = ConvGeometry::new(1, 4, 4);
        assert_eq!(g.output_extent(32, 3), Some(32));
        assert_eq!(ConvGeometry::same(3, 4), g);
        assert_eq!(ConvGeometry::new(2, 1, 1).output_extent(32, 3), Some(16));
        assert_eq!(ConvGeometry::new(1, 0, 4).output_extent(8, 3), None);
    }

    #[test]
    fn empty_output_and_channel_mismatch_are_errors() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones([1, 2, 4, 4]).unwrap());
        let w = tape.constant(Tensor::ones([1, 3, 3, 3]).unwrap());
        assert!(conv2d(&x, &w, None, ConvGeometry::default()).is_err());
        let w = tape.constant(Tensor::ones([1, 2, 3, 3]).unwrap());
        assert!(conv2d(&x, &w, None, ConvGeometry::new(1, 0, 3)).is_err());
    }
}
