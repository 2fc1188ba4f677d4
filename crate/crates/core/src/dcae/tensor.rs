use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense (batch, channels, height, width) tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "tensor {:?} needs {n} values, got {}",
                dims,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for b in 0..dims[0] {
            for c in 0..dims[1] {
                for y in 0..dims[2] {
                    for x in 0..dims[3] {
                        data.push(f([b, c, y, x]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(b, c, y, x);
        self.data[i] = v;
    }

    /// One (channels, height, width) plane stack of batch item `b`.
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Channel-wise concatenation of two tensors with equal batch and spatial dims.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        let [b, c1, h, w] = self.dims;
        let [b2, c2, h2, w2] = other.dims;
        if (b, h, w) != (b2, h2, w2) {
            return Err(Error::ShapeMismatch(format!(
                "cannot concatenate {:?} with {:?}",
                self.dims, other.dims
            )));
        }
        let mut out = Self::zeros([b, c1 + c2, h, w]);
        for bi in 0..b {
            let dst = out.item_mut(bi);
            let split = c1 * h * w;
            dst[..split].copy_from_slice(self.item(bi));
            dst[split..].copy_from_slice(other.item(bi));
        }
        Ok(out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &v| a + v)
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| crate::scalar::lit::<U>(v.as_f64()))
                .collect(),
        }
    }
}

/// Bilinear sample of plane `(b, c)` at real pixel coordinates. Neighbours
/// outside the plane read as zero, so samples beyond (-1, H) × (-1, W) are 0.
pub fn bilinear_sample<T: Real>(t: &Tensor4<T>, b: usize, c: usize, y: T, x: T) -> T {
    let plane = &t.data[t.index(b, c, 0, 0)..t.index(b, c, 0, 0) + t.height() * t.width()];
    sample_plane(plane, t.height(), t.width(), y, x)
}

#[inline]
pub(crate) fn sample_plane<T: Real>(plane: &[T], h: usize, w: usize, y: T, x: T) -> T {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (iy, ix) = (y0.as_f64() as i64, x0.as_f64() as i64);
    let at = |yy: i64, xx: i64| -> T {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            T::zero()
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let one = T::one();
    (one - fy) * ((one - fx) * at(iy, ix) + fx * at(iy, ix + 1))
        + fy * ((one - fx) * at(iy + 1, ix) + fx * at(iy + 1, ix + 1))
}

/// Value and partial derivatives (d/dy, d/dx) of [`sample_plane`].
#[inline]
pub(crate) fn sample_plane_grad<T: Real>(plane: &[T], h: usize, w: usize, y: T, x: T) -> (T, T, T) {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (iy, ix) = (y0.as_f64() as i64, x0.as_f64() as i64);
    let at = |yy: i64, xx: i64| -> T {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            T::zero()
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let one = T::one();
    let (a, b, c, d) = (
        at(iy, ix),
        at(iy, ix + 1),
        at(iy + 1, ix),
        at(iy + 1, ix + 1),
    );
    let v = (one - fy) * ((one - fx) * a + fx * b) + fy * ((one - fx) * c + fx * d);
    let dy = (one - fx) * (c - a) + fx * (d - b);
    let dx = (one - fy) * (b - a) + fy * (d - c);
    (v, dy, dx)
}

/// Accumulates `g` into the four neighbours of a bilinear sample.
#[inline]
pub(crate) fn scatter_plane<T: Real>(plane: &mut [T], h: usize, w: usize, y: T, x: T, g: T) {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (iy, ix) = (y0.as_f64() as i64, x0.as_f64() as i64);
    let one = T::one();
    let mut put = |yy: i64, xx: i64, wgt: T| {
        if yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64 {
            plane[yy as usize * w + xx as usize] += g * wgt;
        }
    };
    put(iy, ix, (one - fy) * (one - fx));
    put(iy, ix + 1, (one - fy) * fx);
    put(iy + 1, ix, fy * (one - fx));
    put(iy + 1, ix + 1, fy * fx);
}
