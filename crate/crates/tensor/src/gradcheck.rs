//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::Array;
use crate::param::{Graph, Param};
use crate::var::Var;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Per input, `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares backprop against central differences for `Σ r ⊙ f(inputs)`
/// with a fixed random projection `r`. At most `max_coords` coordinates
/// per input are probed.
pub fn check_gradients(
    f: impl Fn(&[Var<f64>]) -> Var<f64>,
    inputs: &[Array<f64>],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe_shape = {
        let vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::constant).collect();
        f(&vars).shape().to_vec()
    };
    let n: usize = probe_shape.iter().product();
    let r = Array::new(
        &probe_shape,
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let objective = |xs: &[Array<f64>]| -> f64 {
        let vars: Vec<Var<f64>> = xs.iter().cloned().map(Var::constant).collect();
        let y = f(&vars);
        y.value().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let leaves: Vec<Var<f64>> = inputs.iter().cloned().map(Var::leaf).collect();
    let out = f(&leaves);
    let grads = out.backward_with(r.clone());

    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        let len = inputs[i].numel();
        let coords: Vec<usize> = if len <= max_coords {
            (0..len).collect()
        } else {
            (0..max_coords).map(|_| rng.random_range(0..len)).collect()
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &c in &coords {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[c] += eps;
            let plus = objective(&xs);
            xs[i].data_mut()[c] -= 2.0 * eps;
            let minus = objective(&xs);
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[c];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let denom = na.sqrt().max(nn.sqrt()).max(1e-12);
        rel_errors.push(diff.sqrt() / denom);
    }
    GradCheck { rel_errors }
}

/// Like [`check_gradients`] but perturbs model parameters. `f` builds the
/// output in the supplied training graph. Coordinates are sampled across
/// all parameters; one norm-wise error is reported.
pub fn check_param_gradients(
    params: &[Param<f64>],
    f: impl Fn(&Graph<f64>) -> Var<f64>,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Graph::training(&[]);
    let out = f(&g);
    let r = Array::new(
        out.shape(),
        (0..out.value().numel()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let grads = g.param_grads(&out.backward_with(r.clone()));
    let objective = || -> f64 {
        let y = f(&Graph::inference());
        y.value().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let total: usize = params.iter().map(Param::numel).sum();
    let coords: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        (0..max_coords).map(|_| rng.random_range(0..total)).collect()
    };
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for c in coords {
        let (mut pi, mut off) = (0, c);
        while off >= params[pi].numel() {
            off -= params[pi].numel();
            pi += 1;
        }
        let p = &params[pi];
        let orig = p.value();
        let shifted = |d: f64| {
            let mut v = orig.clone();
            v.data_mut()[off] += d;
            p.set(v);
            objective()
        };
        let numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
        p.set(orig);
        let analytic = grads
            .iter()
            .find(|(q, _)| q.id() == p.id())
            .map_or(0.0, |(_, g)| g.data()[off]);
        diff += (analytic - numeric).powi(2);
        na += analytic * analytic;
        nn += numeric * numeric;
    }
    GradCheck {
        rel_errors: vec![diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)],
    }
}
