use crate::array::{contiguous_strides, Array};
use crate::ops::reduce::split_axis;
use crate::scalar::Scalar;
use crate::var::Var;

/// Copies `len` slices of `axis` starting at `start`.
fn narrow_array<T: Scalar>(a: &Array<T>, axis: usize, start: usize, len: usize) -> Array<T> {
    let (outer, n, inner) = split_axis(a.shape(), axis);
    assert!(start + len <= n, "narrow {start}+{len} exceeds axis length {n}");
    let src = a.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * n * inner + start * inner;
        out.extend_from_slice(&src[base..base + len * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[axis] = len;
    Array::new(&shape, out)
}

fn permute_array<T: Scalar>(a: &Array<T>, axes: &[usize]) -> Array<T> {
    let shape = a.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&i| shape[i]).collect();
    let src_strides = contiguous_strides(shape);
    let perm_strides: Vec<usize> = axes.iter().map(|&i| src_strides[i]).collect();
    let dense = contiguous_strides(&out_shape);
    let src = a.data();
    let mut out = Vec::with_capacity(src.len());
    crate::array::for_each_offset2(&out_shape, &perm_strides, &dense, |o, _| out.push(src[o]));
    Array::new(&out_shape, out)
}

impl<T: Scalar> Var<T> {
    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        let in_shape = self.shape().to_vec();
        let y = self.value().reshape(shape);
        Var::from_op(y, vec![self.clone()], move |g| vec![Some(g.reshape(&in_shape))])
    }

    /// Reorders axes; `axes[i]` names the input axis that becomes axis `i`.
    pub fn permute(&self, axes: &[usize]) -> Var<T> {
        assert_eq!(axes.len(), self.shape().len(), "permute rank mismatch");
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let y = permute_array(self.value(), axes);
        Var::from_op(y, vec![self.clone()], move |g| {
            vec![Some(permute_array(g, &inverse))]
        })
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<T> {
        let in_shape = self.shape().to_vec();
        let y = narrow_array(self.value(), axis, start, len);
        Var::from_op(y, vec![self.clone()], move |g| {
            let (outer, n, inner) = split_axis(&in_shape, axis);
            let mut gx = vec![T::zero(); outer * n * inner];
            let gd = g.data();
            for o in 0..outer {
                let dst = o * n * inner + start * inner;
                let src = o * len * inner;
                gx[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
            }
            vec![Some(Array::new(&in_shape, gx))]
        })
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<T>], axis: usize) -> Var<T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape().to_vec();
        for p in parts {
            let s = p.shape();
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for (d, (&a, &b)) in s.iter().zip(first.iter()).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch {s:?} vs {first:?}");
            }
        }
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                let base = o * l * inner;
                out.extend_from_slice(&p.value().data()[base..base + l * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let y = Array::new(&shape, out);
        Var::from_op(y, parts.to_vec(), move |g| {
            let mut start = 0;
            lens.iter()
                .map(|&l| {
                    let piece = narrow_array(g, axis, start, l);
                    start += l;
                    Some(piece)
                })
                .collect()
        })
    }

    /// Splits along `axis` into pieces of the given lengths.
    pub fn split(&self, axis: usize, lens: &[usize]) -> Vec<Var<T>> {
        let mut start = 0;
        lens.iter()
            .map(|&l| {
                let v = self.narrow(axis, start, l);
                start += l;
                v
            })
            .collect()
    }
}
