use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::array::{
    broadcast_shapes, broadcast_strides, contiguous_strides, for_each_offset2, sum_to_shape, Array,
};
use crate::scalar::{lit, Scalar};
use crate::var::Var;

fn broadcast_apply<T: Scalar>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let shape = broadcast_shapes(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!(
            "shapes {:?} and {:?} are not broadcastable",
            a.shape(),
            b.shape()
        )
    });
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(shape.iter().product());
    for_each_offset2(&shape, &sa, &sb, |oa, ob| out.push(f(ad[oa], bd[ob])));
    Array::new(&shape, out)
}

/// Per-element gradient of a broadcast binary op, reduced to `target`.
fn broadcast_grad<T: Scalar>(
    a: &Array<T>,
    b: &Array<T>,
    g: &Array<T>,
    target: &[usize],
    df: impl Fn(T, T, T) -> T,
) -> Array<T> {
    let shape = g.shape();
    let sa = broadcast_strides(a.shape(), shape);
    let sb = broadcast_strides(b.shape(), shape);
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut full = Vec::with_capacity(gd.len());
    let mut i = 0;
    for_each_offset2(shape, &sa, &sb, |oa, ob| {
        full.push(df(ad[oa], bd[ob], gd[i]));
        i += 1;
    });
    sum_to_shape(&Array::new(shape, full), target)
}

/// Expands `a` to the broadcast-compatible `shape`.
pub fn broadcast_to<T: Scalar>(a: &Array<T>, shape: &[usize]) -> Array<T> {
    if a.shape() == shape {
        return a.clone();
    }
    let sa = broadcast_strides(a.shape(), shape);
    let dense = contiguous_strides(shape);
    let ad = a.data();
    let mut out = Vec::with_capacity(shape.iter().product());
    for_each_offset2(shape, &sa, &dense, |oa, _| out.push(ad[oa]));
    Array::new(shape, out)
}

impl<T: Scalar> Var<T> {
    fn unary_op(
        &self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<T> {
        let x = self.value().clone();
        let y = x.map(f);
        let y_saved = y.clone();
        Var::from_op(y, vec![self.clone()], move |g| {
            let xd = x.data();
            let yd = y_saved.data();
            let gx: Vec<T> = g
                .data()
                .iter()
                .enumerate()
                .map(|(i, &gi)| gi * df(xd[i], yd[i]))
                .collect();
            vec![Some(Array::new(x.shape(), gx))]
        })
    }

    pub fn add(&self, other: &Var<T>) -> Var<T> {
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let y = broadcast_apply(self.value(), other.value(), |a, b| a + b);
        Var::from_op(y, vec![self.clone(), other.clone()], move |g| {
            vec![Some(sum_to_shape(g, &sa)), Some(sum_to_shape(g, &sb))]
        })
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let y = broadcast_apply(self.value(), other.value(), |a, b| a - b);
        Var::from_op(y, vec![self.clone(), other.clone()], move |g| {
            vec![
                Some(sum_to_shape(g, &sa)),
                Some(sum_to_shape(g, &sb).map(|v| -v)),
            ]
        })
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        let (a, b) = (self.value().clone(), other.value().clone());
        let y = broadcast_apply(&a, &b, |x, y| x * y);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Var::from_op(y, vec![self.clone(), other.clone()], move |g| {
            vec![
                ra.then(|| broadcast_grad(&a, &b, g, a.shape(), |_, y, g| g * y)),
                rb.then(|| broadcast_grad(&a, &b, g, b.shape(), |x, _, g| g * x)),
            ]
        })
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        let (a, b) = (self.value().clone(), other.value().clone());
        let y = broadcast_apply(&a, &b, |x, y| x / y);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Var::from_op(y, vec![self.clone(), other.clone()], move |g| {
            vec![
                ra.then(|| broadcast_grad(&a, &b, g, a.shape(), |_, y, g| g / y)),
                rb.then(|| broadcast_grad(&a, &b, g, b.shape(), |x, y, g| -g * x / (y * y))),
            ]
        })
    }

    pub fn neg(&self) -> Var<T> {
        self.scale(-T::one())
    }

    pub fn scale(&self, c: T) -> Var<T> {
        let y = self.value().map(|v| v * c);
        Var::from_op(y, vec![self.clone()], move |g| vec![Some(g.map(|v| v * c))])
    }

    pub fn add_scalar(&self, c: T) -> Var<T> {
        let y = self.value().map(|v| v + c);
        Var::from_op(y, vec![self.clone()], |g| vec![Some(g.clone())])
    }

    pub fn scale_f64(&self, c: f64) -> Var<T> {
        self.scale(lit(c))
    }

    pub fn exp(&self) -> Var<T> {
        self.unary_op(|v| v.exp(), |_, y| y)
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Var<T> {
        self.unary_op(|v| v.ln(), |x, _| T::one() / x)
    }

    pub fn abs(&self) -> Var<T> {
        self.unary_op(
            |v| v.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sqrt(&self) -> Var<T> {
        self.unary_op(|v| v.sqrt(), |_, y| lit::<T>(0.5) / y)
    }

    pub fn square(&self) -> Var<T> {
        self.unary_op(|v| v * v, |x, _| x + x)
    }

    pub fn relu(&self) -> Var<T> {
        self.unary_op(
            |v| v.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s: T = lit(slope);
        self.unary_op(
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn sigmoid(&self) -> Var<T> {
        self.unary_op(
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(&self) -> Var<T> {
        self.unary_op(|v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// Clamps to `[lo, hi]`; the gradient is passed only where the input
    /// lies strictly inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<T> {
        let (l, h): (T, T) = (lit(lo), lit(hi));
        self.unary_op(
            move |v| v.max(l).min(h),
            move |x, _| if x > l && x < h { T::one() } else { T::zero() },
        )
    }

    /// Parametric ReLU with one learnable slope per channel (axis 1).
    pub fn prelu(&self, slope: &Var<T>) -> Var<T> {
        let c = self.shape()[1];
        assert_eq!(slope.shape(), &[c], "prelu slope must have one entry per channel");
        let mut bshape = vec![1; self.shape().len()];
        bshape[1] = c;
        let s = slope.reshape(&bshape);
        let neg = self.neg().relu().neg();
        self.relu().add(&neg.mul(&s))
    }
}

macro_rules! impl_binary_operator {
    ($trait:ident, $method:ident) => {
        impl<T: Scalar> $trait<&Var<T>> for &Var<T> {
            type Output = Var<T>;
            fn $method(self, rhs: &Var<T>) -> Var<T> {
                Var::$method(self, rhs)
            }
        }
    };
}

impl_binary_operator!(Add, add);
impl_binary_operator!(Sub, sub);
impl_binary_operator!(Mul, mul);
impl_binary_operator!(Div, div);

impl<T: Scalar> Neg for &Var<T> {
    type Output = Var<T>;
    fn neg(self) -> Var<T> {
        Var::neg(self)
    }
}
