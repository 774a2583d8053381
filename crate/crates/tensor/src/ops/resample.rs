//! Separable linear resampling along a single axis.
//!
//! Padding, bilinear up-sampling, box down-sampling and short FIR filters
//! are all sparse linear maps `out[i] = Σ w·in[j]` along one axis. They
//! share one differentiable kernel whose adjoint is the transposed map.

use std::sync::Arc;

use crate::array::Array;
use crate::ops::reduce::split_axis;
use crate::scalar::Scalar;
use crate::var::Var;

/// Border extension used when a map reads outside `[0, len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Border {
    /// Out-of-range reads contribute nothing.
    Zero,
    /// Clamp to the nearest edge sample.
    Replicate,
    /// Mirror about the edge samples without repeating them.
    Reflect,
}

impl Border {
    /// Resolves a possibly out-of-range index, or `None` for zero padding.
    pub fn resolve(self, i: isize, len: usize) -> Option<usize> {
        let n = len as isize;
        if (0..n).contains(&i) {
            return Some(i as usize);
        }
        match self {
            Border::Zero => None,
            Border::Replicate => Some(i.clamp(0, n - 1) as usize),
            Border::Reflect => {
                if n == 1 {
                    return Some(0);
                }
                let period = 2 * (n - 1);
                let m = i.rem_euclid(period);
                Some(if m >= n { period - m } else { m } as usize)
            }
        }
    }
}

/// Sparse linear map between two 1-d index spaces, stored row-compressed.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisMap {
    in_len: usize,
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl AxisMap {
    pub fn from_rows(in_len: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut index = Vec::new();
        let mut weight = Vec::new();
        offsets.push(0);
        for row in rows {
            for &(j, w) in row {
                assert!(j < in_len, "tap index {j} out of range {in_len}");
                index.push(j);
                weight.push(w);
            }
            offsets.push(index.len());
        }
        Self {
            in_len,
            offsets,
            index,
            weight,
        }
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.index[a..b].iter().copied().zip(self.weight[a..b].iter().copied())
    }

    pub fn transpose(&self) -> AxisMap {
        let mut rows = vec![Vec::new(); self.in_len];
        for i in 0..self.out_len() {
            for (j, w) in self.row(i) {
                rows[j].push((i, w));
            }
        }
        AxisMap::from_rows(self.out_len(), &rows)
    }

    /// `out[i] = Σ_k kernel[k] · in[i·stride + k − center]` with the given
    /// border rule; the output has `ceil(in_len / stride)` samples.
    pub fn fir(in_len: usize, kernel: &[f64], center: usize, stride: usize, border: Border) -> Self {
        let out_len = in_len.div_ceil(stride);
        let rows: Vec<Vec<(usize, f64)>> = (0..out_len)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (k, &w) in kernel.iter().enumerate() {
                    let src = (i * stride + k) as isize - center as isize;
                    if let Some(j) = border.resolve(src, in_len) {
                        match row.iter_mut().find(|(idx, _)| *idx == j) {
                            Some(entry) => entry.1 += w,
                            None => row.push((j, w)),
                        }
                    }
                }
                row
            })
            .collect();
        Self::from_rows(in_len, &rows)
    }

    /// Extends the axis by `before`/`after` samples.
    pub fn pad(in_len: usize, before: usize, after: usize, border: Border) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = (0..in_len + before + after)
            .map(|i| {
                border
                    .resolve(i as isize - before as isize, in_len)
                    .map(|j| vec![(j, 1.0)])
                    .unwrap_or_default()
            })
            .collect();
        Self::from_rows(in_len, &rows)
    }

    /// Bilinear ×2 up-sampling with half-pixel centers and edge clamping.
    pub fn bilinear_up2(in_len: usize) -> Self {
        let last = in_len as isize - 1;
        let rows: Vec<Vec<(usize, f64)>> = (0..2 * in_len)
            .map(|o| {
                let k = (o / 2) as isize;
                let other = if o % 2 == 0 { k - 1 } else { k + 1 };
                let other = other.clamp(0, last) as usize;
                if other == k as usize {
                    vec![(k as usize, 1.0)]
                } else {
                    vec![(k as usize, 0.75), (other, 0.25)]
                }
            })
            .collect();
        Self::from_rows(in_len, &rows)
    }

    /// Averages non-overlapping pairs (requires an even length).
    pub fn average_down2(in_len: usize) -> Self {
        assert!(in_len % 2 == 0, "average_down2 needs an even length, got {in_len}");
        let rows: Vec<Vec<(usize, f64)>> = (0..in_len / 2)
            .map(|i| vec![(2 * i, 0.5), (2 * i + 1, 0.5)])
            .collect();
        Self::from_rows(in_len, &rows)
    }

    pub fn nearest_up(in_len: usize, factor: usize) -> Self {
        let rows: Vec<Vec<(usize, f64)>> =
            (0..in_len * factor).map(|o| vec![(o / factor, 1.0)]).collect();
        Self::from_rows(in_len, &rows)
    }

    pub fn crop(in_len: usize, start: usize, len: usize) -> Self {
        assert!(start + len <= in_len, "crop out of range");
        let rows: Vec<Vec<(usize, f64)>> = (start..start + len).map(|j| vec![(j, 1.0)]).collect();
        Self::from_rows(in_len, &rows)
    }

    /// Applies the map along `axis` of `a`.
    pub fn apply<T: Scalar>(&self, a: &Array<T>, axis: usize) -> Array<T> {
        let (outer, len, inner) = split_axis(a.shape(), axis);
        assert_eq!(
            len, self.in_len,
            "axis {axis} of {:?} does not match map input length {}",
            a.shape(),
            self.in_len
        );
        let out_len = self.out_len();
        let weights: Vec<T> = self.weight.iter().map(|&w| T::from_f64_lossy(w)).collect();
        let src = a.data();
        let mut out = vec![T::zero(); outer * out_len * inner];
        for o in 0..outer {
            let src_block = &src[o * len * inner..(o + 1) * len * inner];
            let dst_block = &mut out[o * out_len * inner..(o + 1) * out_len * inner];
            for i in 0..out_len {
                let dst = &mut dst_block[i * inner..(i + 1) * inner];
                for t in self.offsets[i]..self.offsets[i + 1] {
                    let w = weights[t];
                    let s = &src_block[self.index[t] * inner..(self.index[t] + 1) * inner];
                    for (d, &v) in dst.iter_mut().zip(s) {
                        *d = *d + w * v;
                    }
                }
            }
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = out_len;
        Array::new(&shape, out)
    }
}

impl<T: Scalar> Var<T> {
    /// Applies a sparse linear map along `axis`.
    pub fn resample_axis(&self, axis: usize, map: Arc<AxisMap>) -> Var<T> {
        let y = map.apply(self.value(), axis);
        Var::from_op(y, vec![self.clone()], move |g| {
            vec![Some(map.transpose().apply(g, axis))]
        })
    }

    /// Pads the last two axes by `[top, bottom, left, right]`.
    pub fn pad2d(&self, pads: [usize; 4], border: Border) -> Var<T> {
        let nd = self.shape().len();
        let (h, w) = (self.shape()[nd - 2], self.shape()[nd - 1]);
        let mut y = self.clone();
        if pads[0] + pads[1] > 0 {
            y = y.resample_axis(nd - 2, Arc::new(AxisMap::pad(h, pads[0], pads[1], border)));
        }
        if pads[2] + pads[3] > 0 {
            y = y.resample_axis(nd - 1, Arc::new(AxisMap::pad(w, pads[2], pads[3], border)));
        }
        y
    }

    /// Crops the last two axes to `[top, left, height, width]`.
    pub fn crop2d(&self, top: usize, left: usize, height: usize, width: usize) -> Var<T> {
        let nd = self.shape().len();
        self.narrow(nd - 2, top, height).narrow(nd - 1, left, width)
    }

    /// Bilinear ×2 up-sampling of the last two axes.
    pub fn upsample_bilinear2x(&self) -> Var<T> {
        let nd = self.shape().len();
        let (h, w) = (self.shape()[nd - 2], self.shape()[nd - 1]);
        self.resample_axis(nd - 2, Arc::new(AxisMap::bilinear_up2(h)))
            .resample_axis(nd - 1, Arc::new(AxisMap::bilinear_up2(w)))
    }

    /// 2×2 box average of the last two axes.
    pub fn avg_pool2x(&self) -> Var<T> {
        let nd = self.shape().len();
        let (h, w) = (self.shape()[nd - 2], self.shape()[nd - 1]);
        self.resample_axis(nd - 2, Arc::new(AxisMap::average_down2(h)))
            .resample_axis(nd - 1, Arc::new(AxisMap::average_down2(w)))
    }

    pub fn upsample_nearest(&self, factor: usize) -> Var<T> {
        let nd = self.shape().len();
        let (h, w) = (self.shape()[nd - 2], self.shape()[nd - 1]);
        self.resample_axis(nd - 2, Arc::new(AxisMap::nearest_up(h, factor)))
            .resample_axis(nd - 1, Arc::new(AxisMap::nearest_up(w, factor)))
    }
}
