//! Parameterised layers.

use crate::ops::ConvSpec;
use crate::param::{Graph, Param, ParamBuilder};
use crate::scalar::Scalar;
use crate::var::Var;

/// How the final weights of a layer are initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Init {
    #[default]
    FanIn,
    Zero,
}

#[derive(Clone, Debug)]
pub struct Conv<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub spec: ConvSpec,
    transposed: bool,
}

impl<T: Scalar> Conv<T> {
    /// Convolution with kernel `k` over 2 (`k.len() == 2`) or 3 spatial axes.
    pub fn new(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: &[usize],
        spec: ConvSpec,
        init: Init,
    ) -> Self {
        assert!(cin % spec.groups == 0 && cout % spec.groups == 0);
        let mut shape = vec![cout, cin / spec.groups];
        shape.extend_from_slice(k);
        let fan_in = cin / spec.groups * k.iter().product::<usize>();
        Self::build(pb, name, &shape, cout, fan_in, spec, init, false)
    }

    /// Transposed convolution; output size is `(in-1)·s - 2p + k + op`.
    pub fn transposed(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: &[usize],
        spec: ConvSpec,
        init: Init,
    ) -> Self {
        assert!(cin % spec.groups == 0 && cout % spec.groups == 0);
        let mut shape = vec![cin, cout / spec.groups];
        shape.extend_from_slice(k);
        let fan_in = cout / spec.groups * k.iter().product::<usize>();
        Self::build(pb, name, &shape, cout, fan_in, spec, init, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        shape: &[usize],
        cout: usize,
        fan_in: usize,
        spec: ConvSpec,
        init: Init,
        transposed: bool,
    ) -> Self {
        let mut s = pb.sub(name);
        let (weight, bias) = match init {
            Init::FanIn => (
                s.fan_in_uniform("weight", shape, fan_in),
                s.fan_in_uniform("bias", &[cout], fan_in),
            ),
            Init::Zero => (s.zeros("weight", shape), s.zeros("bias", &[cout])),
        };
        Self {
            weight,
            bias: Some(bias),
            spec,
            transposed,
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Var<T> {
        let w = g.param(&self.weight);
        let b = self.bias.as_ref().map(|b| g.param(b));
        if self.transposed {
            x.conv_transpose(&w, b.as_ref(), self.spec)
        } else {
            x.conv(&w, b.as_ref(), self.spec)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, name: &str, fan_in: usize, out: usize) -> Self {
        let mut s = pb.sub(name);
        Self {
            weight: s.fan_in_uniform("weight", &[out, fan_in], fan_in),
            bias: s.fan_in_uniform("bias", &[out], fan_in),
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Var<T> {
        x.linear(&g.param(&self.weight), Some(&g.param(&self.bias)))
    }
}

/// Per-channel parametric ReLU, slopes initialised to 0.25.
#[derive(Clone, Debug)]
pub struct PRelu<T: Scalar> {
    pub slope: Param<T>,
}

impl<T: Scalar> PRelu<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Self {
        Self {
            slope: pb.sub(name).constant("weight", &[channels], 0.25),
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Var<T> {
        x.prelu(&g.param(&self.slope))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::Array;
    use crate::param::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_parameter_count() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let c = Conv::new(&mut pb, "c", 3, 8, &[3, 3], ConvSpec::default().padding(1), Init::FanIn);
        assert_eq!(store.numel(), 224);
        let g = Graph::inference();
        let y = c.forward(&g, &Var::constant(Array::zeros(&[1, 3, 5, 5])));
        assert_eq!(y.shape(), &[1, 8, 5, 5]);
    }

    #[test]
    fn transposed_doubles_resolution() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let c = Conv::transposed(
            &mut pb,
            "up",
            4,
            4,
            &[4, 4],
            ConvSpec::default().stride(2).padding(1).groups(2),
            Init::FanIn,
        );
        let g = Graph::inference();
        let y = c.forward(&g, &Var::constant(Array::zeros(&[1, 4, 3, 5])));
        assert_eq!(y.shape(), &[1, 4, 6, 10]);
    }
}
