use super::conv::{gemm, gemm_at, out_size, Conv2d};
use super::tensor::{sample_plane, sample_plane_grad, scatter_plane, Tensor4};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Modulated deformable 3×3 convolution with grouped offsets and
/// softmax-normalized masks.
///
/// Offset channels are laid out as `(g·9 + k)·2 + {0: dy, 1: dx}` and mask
/// logits as `g·9 + k`, where `k = ky·3 + kx`. Input channel `c` belongs to
/// group `c / (in_channels / groups)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformConv2d<T> {
    /// `[out, in, 3, 3]`
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub offset: Conv2d<T>,
    pub mask: Conv2d<T>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

/// Input-side gradients of a deformable convolution.
#[derive(Debug, Clone)]
pub struct DeformGrads<T> {
    pub input: Tensor4<T>,
    pub offsets: Tensor4<T>,
    pub mask_logits: Tensor4<T>,
}

struct State<T> {
    offsets: Tensor4<T>,
    masks: Tensor4<T>,
}

impl<T: Real> DeformConv2d<T> {
    /// A layer with all parameters zero: zero offsets and uniform masks.
    pub fn zeros(cin: usize, cout: usize, stride: usize, groups: usize) -> Result<Self> {
        let layer = Self {
            weight: Tensor4::zeros([cout, cin, KERNEL, KERNEL]),
            bias: vec![T::zero(); cout],
            offset: Conv2d::zeros(cin, 2 * groups * TAPS, KERNEL, stride, 1),
            mask: Conv2d::zeros(cin, groups * TAPS, KERNEL, stride, 1),
            stride,
            padding: 1,
            groups,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let [cout, cin, kh, kw] = self.weight.dims();
        let bad = |m: String| Err(Error::ShapeMismatch(m));
        if (kh, kw) != (KERNEL, KERNEL) {
            return bad(format!("deformable kernel must be 3x3, got {kh}x{kw}"));
        }
        if self.groups == 0 || cin % self.groups != 0 {
            return bad(format!(
                "{cin} input channels not divisible into {} groups",
                self.groups
            ));
        }
        if !(self.stride == 1 || self.stride == 2) {
            return Err(Error::InvalidInput(format!(
                "stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if self.bias.len() != cout {
            return bad("bias length differs from output channels".into());
        }
        if self.offset.out_channels() != 2 * self.groups * TAPS || self.offset.in_channels() != cin
        {
            return bad(format!(
                "offset predictor must map {cin} -> {} channels",
                2 * self.groups * TAPS
            ));
        }
        if self.mask.out_channels() != self.groups * TAPS || self.mask.in_channels() != cin {
            return bad(format!(
                "mask predictor must map {cin} -> {} channels",
                self.groups * TAPS
            ));
        }
        if self.offset.stride != self.stride || self.mask.stride != self.stride {
            return bad("offset/mask predictors must share the layer stride".into());
        }
        Ok(())
    }

    pub fn output_dims(&self, input: [usize; 4]) -> [usize; 4] {
        [
            input[0],
            self.out_channels(),
            out_size(input[2], KERNEL, self.stride, self.padding),
            out_size(input[3], KERNEL, self.stride, self.padding),
        ]
    }

    fn check_input(&self, input: &Tensor4<T>) -> Result<()> {
        self.validate()?;
        if input.channels() != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "deformable conv expects {} input channels, got {}",
                self.in_channels(),
                input.channels()
            )));
        }
        Ok(())
    }

    fn state(&self, input: &Tensor4<T>) -> Result<State<T>> {
        let offsets = self.offset.forward(input)?;
        let mut masks = self.mask.forward(input)?;
        let [b, _, oh, ow] = masks.dims();
        let p = oh * ow;
        for bi in 0..b {
            let item = masks.item_mut(bi);
            for g in 0..self.groups {
                for q in 0..p {
                    let at = |k: usize| (g * TAPS + k) * p + q;
                    let mx = (0..TAPS)
                        .map(|k| item[at(k)])
                        .fold(T::min_value().unwrap(), |a, v| a.max(v));
                    let mut sum = T::zero();
                    for k in 0..TAPS {
                        let e = (item[at(k)] - mx).exp();
                        item[at(k)] = e;
                        sum += e;
                    }
                    for k in 0..TAPS {
                        item[at(k)] /= sum;
                    }
                }
            }
        }
        Ok(State { offsets, masks })
    }

    #[inline]
    fn sample_pos(
        &self,
        st: &State<T>,
        b: usize,
        g: usize,
        k: usize,
        oy: usize,
        ox: usize,
    ) -> (T, T) {
        let (ky, kx) = (k / KERNEL, k % KERNEL);
        let base_y = (oy * self.stride + ky) as f64 - self.padding as f64;
        let base_x = (ox * self.stride + kx) as f64 - self.padding as f64;
        let ch = (g * TAPS + k) * 2;
        (
            lit::<T>(base_y) + st.offsets.get(b, ch, oy, ox),
            lit::<T>(base_x) + st.offsets.get(b, ch + 1, oy, ox),
        )
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let st = self.state(input)?;
        let od = self.output_dims(input.dims());
        let [_, cin, h, w] = input.dims();
        let (oh, ow) = (od[2], od[3]);
        let p = oh * ow;
        let per_group = cin / self.groups;
        let mut out = Tensor4::zeros(od);
        let mut col = vec![T::zero(); cin * TAPS * p];
        for b in 0..input.batch() {
            let x = input.item(b);
            for c in 0..cin {
                let g = c / per_group;
                let plane = &x[c * h * w..(c + 1) * h * w];
                for k in 0..TAPS {
                    let row = (c * TAPS + k) * p;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let (sy, sx) = self.sample_pos(&st, b, g, k, oy, ox);
                            let m = st.masks.get(b, g * TAPS + k, oy, ox);
                            col[row + oy * ow + ox] = m * sample_plane(plane, h, w, sy, sx);
                        }
                    }
                }
            }
            let mut y = gemm(self.weight.data(), &col, od[1], cin * TAPS, p);
            for (o, chunk) in y.chunks_mut(p).enumerate() {
                for v in chunk {
                    *v += self.bias[o];
                }
            }
            out.item_mut(b).copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Gradients of `Σ grad_out ⊙ forward(input)` with respect to the input
    /// (through sampling, offsets and masks), the predicted offsets and the
    /// mask logits.
    pub fn backward(&self, input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<DeformGrads<T>> {
        self.check_input(input)?;
        let od = self.output_dims(input.dims());
        if grad_out.dims() != od {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} does not match {:?}",
                grad_out.dims(),
                od
            )));
        }
        let st = self.state(input)?;
        let [nb, cin, h, w] = input.dims();
        let (oh, ow) = (od[2], od[3]);
        let p = oh * ow;
        let per_group = cin / self.groups;
        let mut d_input = Tensor4::zeros(input.dims());
        let mut d_off = Tensor4::zeros(st.offsets.dims());
        let mut d_mask = Tensor4::zeros(st.masks.dims());
        for b in 0..nb {
            let dcol = gemm_at(self.weight.data(), grad_out.item(b), od[1], cin * TAPS, p);
            for c in 0..cin {
                let g = c / per_group;
                let plane = &input.item(b)[c * h * w..(c + 1) * h * w];
                for k in 0..TAPS {
                    let row = (c * TAPS + k) * p;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gc = dcol[row + oy * ow + ox];
                            if gc == T::zero() {
                                continue;
                            }
                            let (sy, sx) = self.sample_pos(&st, b, g, k, oy, ox);
                            let m = st.masks.get(b, g * TAPS + k, oy, ox);
                            let (v, vy, vx) = sample_plane_grad(plane, h, w, sy, sx);
                            let mi = d_mask.index(b, g * TAPS + k, oy, ox);
                            d_mask.data_mut()[mi] += gc * v;
                            let dv = gc * m;
                            let ch = (g * TAPS + k) * 2;
                            let iy = d_off.index(b, ch, oy, ox);
                            let ix = d_off.index(b, ch + 1, oy, ox);
                            d_off.data_mut()[iy] += dv * vy;
                            d_off.data_mut()[ix] += dv * vx;
                            let gplane = &mut d_input.item_mut(b)[c * h * w..(c + 1) * h * w];
                            scatter_plane(gplane, h, w, sy, sx, dv);
                        }
                    }
                }
            }
        }
        // softmax backward: dz_k = m_k (dm_k - Σ_j m_j dm_j)
        let mut d_logits = Tensor4::zeros(st.masks.dims());
        for b in 0..nb {
            for g in 0..self.groups {
                for q in 0..p {
                    let (qy, qx) = (q / ow, q % ow);
                    let dot = (0..TAPS).fold(T::zero(), |a, k| {
                        a + st.masks.get(b, g * TAPS + k, qy, qx)
                            * d_mask.get(b, g * TAPS + k, qy, qx)
                    });
                    for k in 0..TAPS {
                        let m = st.masks.get(b, g * TAPS + k, qy, qx);
                        d_logits.set(
                            b,
                            g * TAPS + k,
                            qy,
                            qx,
                            m * (d_mask.get(b, g * TAPS + k, qy, qx) - dot),
                        );
                    }
                }
            }
        }
        let via_off = self.offset.backward_input(&d_off, input.dims())?;
        let via_mask = self.mask.backward_input(&d_logits, input.dims())?;
        for ((a, b), c) in d_input
            .data_mut()
            .iter_mut()
            .zip(via_off.data())
            .zip(via_mask.data())
        {
            *a += *b + *c;
        }
        Ok(DeformGrads {
            input: d_input,
            offsets: d_off,
            mask_logits: d_logits,
        })
    }
}
