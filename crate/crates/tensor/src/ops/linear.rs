use crate::array::{gemm, Array};
use crate::scalar::Scalar;
use crate::var::Var;

impl<T: Scalar> Var<T> {
    /// Matrix product of two 2-d values.
    pub fn matmul(&self, other: &Var<T>) -> Var<T> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            panic!("matmul needs 2-d operands, got {:?} and {:?}", self.shape(), other.shape());
        };
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let (a, b) = (self.value().clone(), other.value().clone());
        let mut c = vec![T::zero(); m * n];
        gemm(m, k, n, T::one(), a.data(), false, b.data(), false, T::zero(), &mut c);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Var::from_op(Array::new(&[m, n], c), vec![self.clone(), other.clone()], move |g| {
            let ga = ra.then(|| {
                let mut out = vec![T::zero(); m * k];
                gemm(m, n, k, T::one(), g.data(), false, b.data(), true, T::zero(), &mut out);
                Array::new(&[m, k], out)
            });
            let gb = rb.then(|| {
                let mut out = vec![T::zero(); k * n];
                gemm(k, m, n, T::one(), a.data(), true, g.data(), false, T::zero(), &mut out);
                Array::new(&[k, n], out)
            });
            vec![ga, gb]
        })
    }

    /// `x · wᵀ + b` over the last axis, with `w` shaped `(out, in)`.
    pub fn linear(&self, weight: &Var<T>, bias: Option<&Var<T>>) -> Var<T> {
        let shape = self.shape().to_vec();
        let fan_in = *shape.last().expect("linear needs at least 1-d input");
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let out = weight.shape()[0];
        assert_eq!(weight.shape(), &[out, fan_in], "linear weight shape mismatch");
        let y = self
            .reshape(&[rows, fan_in])
            .matmul(&weight.permute(&[1, 0]));
        let y = match bias {
            Some(b) => y.add(b),
            None => y,
        };
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = out;
        y.reshape(&out_shape)
    }
}
