use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// `C[m×n] = A[m×k] · B[k×n]`, all row-major.
pub(crate) fn gemm<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == T::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `C[k×n] = Aᵀ · B` with `A[m×k]`, `B[m×n]`, all row-major.
pub(crate) fn gemm_at<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == T::zero() {
                continue;
            }
            let row = &mut c[kk * n..(kk + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub(crate) fn out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Standard 2D convolution, weights `[out, in, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Self {
        Self {
            weight: Tensor4::zeros([cout, cin, k, k]),
            bias: vec![T::zero(); cout],
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    fn check(&self, input: &Tensor4<T>) -> Result<()> {
        if input.channels() != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                input.channels()
            )));
        }
        if self.bias.len() != self.out_channels() {
            return Err(Error::ShapeMismatch(
                "conv bias length differs from output channels".into(),
            ));
        }
        let [_, _, kh, kw] = self.weight.dims();
        if input.height() + 2 * self.padding < kh || input.width() + 2 * self.padding < kw {
            return Err(Error::ShapeMismatch("input smaller than kernel".into()));
        }
        Ok(())
    }

    pub fn output_dims(&self, input: [usize; 4]) -> [usize; 4] {
        let [_, _, kh, kw] = self.weight.dims();
        [
            input[0],
            self.out_channels(),
            out_size(input[2], kh, self.stride, self.padding),
            out_size(input[3], kw, self.stride, self.padding),
        ]
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
        let [_, cin, kh, kw] = self.weight.dims();
        let p = oh * ow;
        let mut col = vec![T::zero(); cin * kh * kw * p];
        for c in 0..cin {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = ((c * kh + ky) * kw + kx) * p;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as i64 - self.padding as i64;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as i64 - self.padding as i64;
                            if ix < 0 || ix >= w as i64 {
                                continue;
                            }
                            col[row + oy * ow + ox] = x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(input)?;
        let od = self.output_dims(input.dims());
        let [_, cin, kh, kw] = self.weight.dims();
        let (h, w) = (input.height(), input.width());
        let (oh, ow) = (od[2], od[3]);
        let mut out = Tensor4::zeros(od);
        for b in 0..input.batch() {
            let col = self.im2col(input.item(b), h, w, oh, ow);
            let mut y = gemm(self.weight.data(), &col, od[1], cin * kh * kw, oh * ow);
            for (o, chunk) in y.chunks_mut(oh * ow).enumerate() {
                for v in chunk {
                    *v += self.bias[o];
                }
            }
            out.item_mut(b).copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Gradient of `Σ grad_out ⊙ forward(x)` with respect to `x`.
    pub fn backward_input(
        &self,
        grad_out: &Tensor4<T>,
        input_dims: [usize; 4],
    ) -> Result<Tensor4<T>> {
        let od = self.output_dims(input_dims);
        if grad_out.dims() != od {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} does not match {:?}",
                grad_out.dims(),
                od
            )));
        }
        let [_, cin, kh, kw] = self.weight.dims();
        let (h, w) = (input_dims[2], input_dims[3]);
        let (oh, ow) = (od[2], od[3]);
        let mut gin = Tensor4::zeros(input_dims);
        for b in 0..input_dims[0] {
            let dcol = gemm_at(
                self.weight.data(),
                grad_out.item(b),
                od[1],
                cin * kh * kw,
                oh * ow,
            );
            let gx = gin.item_mut(b);
            for c in 0..cin {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = ((c * kh + ky) * kw + kx) * oh * ow;
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as i64 - self.padding as i64;
                            if iy < 0 || iy >= h as i64 {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as i64 - self.padding as i64;
                                if ix < 0 || ix >= w as i64 {
                                    continue;
                                }
                                gx[(c * h + iy as usize) * w + ix as usize] +=
                                    dcol[row + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        Ok(gin)
    }
}

/// Transposed convolution, weights `[in, out, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn zeros(cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Self {
        Self {
            weight: Tensor4::zeros([cin, cout, k, k]),
            bias: vec![T::zero(); cout],
            stride,
            padding,
        }
    }

    pub fn output_dims(&self, input: [usize; 4]) -> [usize; 4] {
        let [_, cout, kh, kw] = self.weight.dims();
        [
            input[0],
            cout,
            (input[2] - 1) * self.stride + kh - 2 * self.padding,
            (input[3] - 1) * self.stride + kw - 2 * self.padding,
        ]
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [cin, cout, kh, kw] = self.weight.dims();
        if input.channels() != cin || self.bias.len() != cout {
            return Err(Error::ShapeMismatch(format!(
                "transposed conv expects {cin} input channels, got {}",
                input.channels()
            )));
        }
        let od = self.output_dims(input.dims());
        let (h, w) = (input.height(), input.width());
        let (oh, ow) = (od[2], od[3]);
        let mut out = Tensor4::zeros(od);
        for b in 0..input.batch() {
            // cols[(o, ky, kx), (iy, ix)] = Σ_c W[c, o, ky, kx] · x[c, iy, ix]
            let cols = gemm_at(
                self.weight.data(),
                input.item(b),
                cin,
                cout * kh * kw,
                h * w,
            );
            let y = out.item_mut(b);
            for o in 0..cout {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let row = ((o * kh + ky) * kw + kx) * h * w;
                        for iy in 0..h {
                            let oy = (iy * self.stride + ky) as i64 - self.padding as i64;
                            if oy < 0 || oy >= oh as i64 {
                                continue;
                            }
                            for ix in 0..w {
                                let ox = (ix * self.stride + kx) as i64 - self.padding as i64;
                                if ox < 0 || ox >= ow as i64 {
                                    continue;
                                }
                                y[(o * oh + oy as usize) * ow + ox as usize] +=
                                    cols[row + iy * w + ix];
                            }
                        }
                    }
                }
                for v in &mut y[o * oh * ow..(o + 1) * oh * ow] {
                    *v += self.bias[o];
                }
            }
        }
        Ok(out)
    }
}

/// Bilinear 2× upsampling with half-pixel centres and edge clamping.
pub fn upsample_bilinear2x<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    let [b, c, h, w] = input.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let src = |o: usize, n: usize| -> (usize, usize, T) {
        let s = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, lit(s - i0 as f64))
    };
    let ys: Vec<_> = (0..oh).map(|o| src(o, h)).collect();
    let xs: Vec<_> = (0..ow).map(|o| src(o, w)).collect();
    let mut out = Tensor4::zeros([b, c, oh, ow]);
    let one = T::one();
    for bi in 0..b {
        for ci in 0..c {
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let v = (one - fy)
                        * ((one - fx) * input.get(bi, ci, y0, x0) + fx * input.get(bi, ci, y0, x1))
                        + fy * ((one - fx) * input.get(bi, ci, y1, x0)
                            + fx * input.get(bi, ci, y1, x1));
                    out.set(bi, ci, oy, ox, v);
                }
            }
        }
    }
    out
}

pub fn relu<T: Real>(t: &Tensor4<T>) -> Tensor4<T> {
    t.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Real>(t: &Tensor4<T>) -> Tensor4<T> {
    t.map(|v| T::one() / (T::one() + (-v).exp()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_fn(dims, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Direct-summation convolution oracle.
    pub(crate) fn naive_conv(
        x: &Tensor4<f64>,
        w: &Tensor4<f64>,
        bias: &[f64],
        stride: usize,
        pad: usize,
    ) -> Tensor4<f64> {
        let [b, _, h, wd] = x.dims();
        let [co, ci, kh, kw] = w.dims();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        Tensor4::from_fn([b, co, oh, ow], |[bi, o, oy, ox]| {
            let mut s = bias[o];
            for c in 0..ci {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as i64 - pad as i64;
                        let ix = (ox * stride + kx) as i64 - pad as i64;
                        if iy >= 0 && ix >= 0 && iy < h as i64 && ix < wd as i64 {
                            s += w.get(o, c, ky, kx) * x.get(bi, c, iy as usize, ix as usize);
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for stride in [1, 2] {
            let mut conv = Conv2d::zeros(3, 5, 3, stride, 1);
            conv.weight = random([5, 3, 3, 3], &mut rng);
            conv.bias = (0..5).map(|i| i as f64 * 0.1).collect();
            let x = random([2, 3, 9, 8], &mut rng);
            let y = conv.forward(&x).unwrap();
            let o = naive_conv(&x, &conv.weight, &conv.bias, stride, 1);
            assert_eq!(y.dims(), o.dims());
            for (a, b) in y.data().iter().zip(o.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::zeros(2, 3, 3, 2, 1);
        conv.weight = random([3, 2, 3, 3], &mut rng);
        let x = random([1, 2, 6, 6], &mut rng);
        let g = random(conv.output_dims(x.dims()), &mut rng);
        let gin = conv.backward_input(&g, x.dims()).unwrap();
        let f = |x: &Tensor4<f64>| {
            let y = conv.forward(x).unwrap();
            y.data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        for i in 0..x.data().len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a.data_mut()[i] += 1e-6;
            b.data_mut()[i] -= 1e-6;
            let n = (f(&a) - f(&b)) / 2e-6;
            assert!((n - gin.data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn deconv_matches_scatter_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = ConvTranspose2d::zeros(3, 2, 4, 2, 1);
        d.weight = random([3, 2, 4, 4], &mut rng);
        d.bias = vec![0.5, -0.25];
        let x = random([1, 3, 4, 5], &mut rng);
        let y = d.forward(&x).unwrap();
        assert_eq!(y.dims(), [1, 2, 8, 10]);
        let mut o = Tensor4::<f64>::zeros([1, 2, 8, 10]);
        for c in 0..3 {
            for iy in 0..4 {
                for ix in 0..5 {
                    for oc in 0..2 {
                        for ky in 0..4 {
                            for kx in 0..4 {
                                let oy = (iy * 2 + ky) as i64 - 1;
                                let ox = (ix * 2 + kx) as i64 - 1;
                                if oy >= 0 && ox >= 0 && oy < 8 && ox < 10 {
                                    let v = o.get(0, oc, oy as usize, ox as usize)
                                        + x.get(0, c, iy, ix) * d.weight.get(c, oc, ky, kx);
                                    o.set(0, oc, oy as usize, ox as usize, v);
                                }
                            }
                        }
                    }
                }
            }
        }
        for oc in 0..2 {
            for i in 0..80 {
                let a = y.data()[oc * 80 + i];
                let b = o.data()[oc * 80 + i] + d.bias[oc];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_shape_and_constant() {
        let x = Tensor4::from_vec([1, 1, 2, 3], vec![2.0f64; 6]).unwrap();
        let y = upsample_bilinear2x(&x);
        assert_eq!(y.dims(), [1, 1, 4, 6]);
        assert!(y.data().iter().all(|&v| (v - 2.0).abs() < 1e-15));
        let r = Tensor4::from_vec([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let u = upsample_bilinear2x(&r);
        assert_eq!(u.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }
}
