use crate::autodiff::{matmul_nt, matmul_tn, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `x · weightᵀ + bias` for `x: [N, in]`, `weight: [out, in]`, `bias: [out]`.
pub fn linear<'t, T: Scalar>(x: &Var<'t, T>, weight: &Var<'t, T>, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
    let (&[n, fan_in], &[out, w_in]) = (x.dims(), weight.dims()) else {
        return Err(Error::shape(format!(
            "linear expects [N,in] input and [out,in] weight, got {:?} and {:?}",
            x.dims(),
            weight.dims()
        )));
    };
    if fan_in != w_in || bias.dims() != [out] {
        return Err(Error::shape(format!(
            "linear: input {:?}, weight {:?}, bias {:?}",
            x.dims(),
            weight.dims(),
            bias.dims()
        )));
    }
    let mut y = matmul_nt(x.value(), weight.value());
    for row in y.data_mut().chunks_mut(out) {
        for (v, &b) in row.iter_mut().zip(bias.value().data()) {
            *v += b;
        }
    }
    let (xv, wv) = (x.value_rc(), weight.value_rc());
    Ok(x.tape().op(y, &[x, weight, bias], move |g, needs| {
        let dx = needs[0].then(|| g.matmul(&wv)).transpose()?;
        let dw = needs[1].then(|| matmul_tn(g, &xv));
        let db = needs[2].then(|| {
            let mut db = vec![T::zero(); out];
            for row in g.data().chunks(out) {
                db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
            }
            Tensor::new([out], db).expect("bias grad shape")
        });
        debug_assert_eq!(g.dims(), [n, out]);
        Ok(vec![dx, dw, db])
    }))
}

/// Spatial mean per channel: `[N, C, H, W] -> [N, C, 1, 1]`.
pub fn global_avg_pool<'t, T: Scalar>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    if x.dims().len() != 4 {
        return Err(Error::shape(format!("global pooling expects [N,C,H,W], got {:?}", x.dims())));
    }
    x.mean(&[2, 3], true)
}

/// Max pooling with a square window and zero-free (−∞) padding.
pub fn max_pool2d<'t, T: Scalar>(x: &Var<'t, T>, kernel: usize, stride: usize, padding: usize) -> Result<Var<'t, T>> {
    let &[n, c, h, w] = x.dims() else {
        return Err(Error::shape(format!("max pool expects [N,C,H,W], got {:?}", x.dims())));
    };
    let extent = |len: usize| (len + 2 * padding).checked_sub(kernel).map(|s| s / stride + 1);
    let (Some(oh), Some(ow)) = (extent(h), extent(w)) else {
        return Err(Error::shape(format!("max pool window {kernel} larger than {h}x{w}")));
    };
    let xd = x.value().data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<(usize, T)> = None;
                for i in 0..kernel {
                    for j in 0..kernel {
                        let y = (oy * stride + i) as isize - padding as isize;
                        let xx = (ox * stride + j) as isize - padding as isize;
                        if y < 0 || xx < 0 || y as usize >= h || xx as usize >= w {
                            continue;
                        }
                        let idx = base + y as usize * w + xx as usize;
                        if best.is_none_or(|(_, v)| xd[idx] > v) {
                            best = Some((idx, xd[idx]));
                        }
                    }
                }
                let (idx, v) = best.expect("window overlaps the image");
                out.push(v);
                argmax.push(idx);
            }
        }
    }
    let total = x.value().numel();
    let in_dims = x.dims().to_vec();
    let y = Tensor::new([n, c, oh, ow], out)?;
    Ok(x.tape().op(y, &[x], move |g, _| {
        let mut dx = vec![T::zero(); total];
        for (&idx, &gv) in argmax.iter().zip(g.data()) {
            dx[idx] += gv;
        }
        Ok(vec![Some(Tensor::new(in_dims.clone(), dx)?)])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_many, Tape};
    use crate::rng;

    #[test]
    fn linear_identity_and_zero_weight() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let eye = tape.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::new([2], vec![0.5, -1.0]).unwrap());
        let y = linear(&x, &eye, &b).unwrap();
        assert_eq!(y.value().data(), &[1.5, 1.0, 3.5, 3.0]);
        let zero = tape.constant(Tensor::zeros([2, 2]).unwrap());
        let y = linear(&x, &zero, &b).unwrap();
        assert_eq!(y.value().data(), &[0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn linear_matches_hand_product() {
        // x = [[1,2,3],[4,5,6]], W = [[1,0,-1],[2,1,0]], b = [1, 1]
        // rows: [1-3+1, 2+2+1] = [-1, 5]; [4-6+1, 8+5+1] = [-1, 14]
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let w = tape.constant(Tensor::new([2, 3], vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.0]).unwrap());
        let b = tape.constant(Tensor::ones([2]).unwrap());
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.value().data(), &[-1.0, 5.0, -1.0, 14.0]);
    }

    #[test]
    fn gap_examples() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([1, 2, 2, 2], vec![1.0, 3.0, 5.0, 7.0, 2.0, 2.0, 2.0, 2.0]).unwrap());
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 1, 1]);
        assert_eq!(y.value().data(), &[4.0, 2.0]);
    }

    #[test]
    fn max_pool_picks_window_max() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 8.0, 7.0]).unwrap());
        let y = max_pool2d(&x, 2, 2, 0).unwrap();
        assert_eq!(y.value().data(), &[5.0, 8.0]);
        let y = max_pool2d(&x, 3, 2, 1).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 2]);
        assert_eq!(y.value().data(), &[5.0, 8.0]);
    }

    #[test]
    fn layer_gradients_pass() {
        let mut r = rng::seeded(21);
        let x = Tensor::randn([3, 4], 1.0, &mut r).unwrap();
        let w = Tensor::randn([2, 4], 1.0, &mut r).unwrap();
        let b = Tensor::randn([2], 1.0, &mut r).unwrap();
        let errs = grad_check_many(|v| Ok(linear(&v[0], &v[1], &v[2])?.relu().sum()), &[x, w, b], 1e-5).unwrap();
        assert!(errs.iter().all(|&e| e < 1e-6), "{errs:?}");

        let img = Tensor::randn([2, 2, 5, 5], 1.0, &mut r).unwrap();
        let wts = Tensor::randn([2, 2, 3, 3], 1.0, &mut r).unwrap();
        let wts2 = Tensor::randn([2, 2, 1, 1], 1.0, &mut r).unwrap();
        let err = grad_check_many(
            |v| {
                let pooled = max_pool2d(&v[0], 3, 2, 1)?;
                let avg = global_avg_pool(&v[0])?;
                pooled
                    .mul(&v[0].tape().constant(wts.clone()))?
                    .sum()
                    .add(&avg.mul(&v[0].tape().constant(wts2.clone()))?.sum())
            },
            &[img],
            1e-5,
        )
        .unwrap();
        assert!(err[0] < 1e-6, "{err:?}");
    }
}
