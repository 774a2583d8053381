use crate::array::{sum_to_shape, Array};
use crate::ops::elementwise::broadcast_to;
use crate::scalar::Scalar;
use crate::var::Var;

/// Splits `shape` around `axis` into `(outer, len, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Var<T> {
    /// Sum of all elements as a 0-d value.
    pub fn sum_all(&self) -> Var<T> {
        let shape = self.shape().to_vec();
        let y = Array::scalar(self.value().sum());
        Var::from_op(y, vec![self.clone()], move |g| {
            vec![Some(Array::full(&shape, g.item()))]
        })
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = self.value().numel().max(1);
        self.sum_all().scale(T::one() / T::from_usize(n).unwrap())
    }

    /// Sums over `axes`, keeping them as size-1 dimensions when `keepdim`.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Var<T> {
        let in_shape = self.shape().to_vec();
        let mut kept = in_shape.clone();
        for &a in axes {
            assert!(a < kept.len(), "axis {a} out of range for {in_shape:?}");
            kept[a] = 1;
        }
        let reduced = sum_to_shape(self.value(), &kept);
        let out_shape: Vec<usize> = if keepdim {
            kept.clone()
        } else {
            in_shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        let y = reduced.reshape(&out_shape);
        Var::from_op(y, vec![self.clone()], move |g| {
            vec![Some(broadcast_to(&g.reshape(&kept), &in_shape))]
        })
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Var<T> {
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes, keepdim)
            .scale(T::one() / T::from_usize(count.max(1)).unwrap())
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Var<T> {
        let shape = self.shape().to_vec();
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value().data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = T::neg_infinity();
                for k in 0..len {
                    m = m.max(x[base + k * inner]);
                }
                let mut s = T::zero();
                for k in 0..len {
                    let e = (x[base + k * inner] - m).exp();
                    y[base + k * inner] = e;
                    s = s + e;
                }
                for k in 0..len {
                    y[base + k * inner] = y[base + k * inner] / s;
                }
            }
        }
        let y = Array::new(&shape, y);
        let ys = y.clone();
        Var::from_op(y, vec![self.clone()], move |g| {
            let (yd, gd) = (ys.data(), g.data());
            let mut gx = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = T::zero();
                    for k in 0..len {
                        dot = dot + gd[base + k * inner] * yd[base + k * inner];
                    }
                    for k in 0..len {
                        let j = base + k * inner;
                        gx[j] = yd[j] * (gd[j] - dot);
                    }
                }
            }
            vec![Some(Array::new(&shape, gx))]
        })
    }
}
