//! Laplacian pyramid loss and the spatio-temporal adversarial losses.

use std::sync::Arc;

use stmfnet_tensor::nn::{Conv, Init, Linear};
use stmfnet_tensor::{Array, AxisMap, Border, ConvSpec, Graph, ParamBuilder, Scalar, Var};

use crate::error::{dim_err, Error, Result};
use crate::frame::Frame;

/// Default pyramid depth.
pub const LAP_LEVELS: usize = 5;
/// Clamp inside the logarithms.
pub const LOG_EPS: f64 = 1e-8;
/// Default weight of the adversarial term.
pub const LAMBDA: f64 = 100.0;

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Separable 5×5 binomial blur followed by ×2 decimation.
fn blur_down<T: Scalar>(x: &Var<T>) -> Var<T> {
    let nd = x.shape().len();
    let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    x.resample_axis(nd - 2, Arc::new(AxisMap::fir(h, &BINOMIAL, 2, 2, Border::Reflect)))
        .resample_axis(nd - 1, Arc::new(AxisMap::fir(w, &BINOMIAL, 2, 2, Border::Reflect)))
}

fn check_levels(h: usize, w: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::Validation("a pyramid needs at least one level".into()));
    }
    let f = 1 << (levels - 1);
    if h % f != 0 || w % f != 0 {
        return dim_err(format!("{h}×{w} is not divisible by {f} for a {levels}-level pyramid"));
    }
    Ok(())
}

/// Band-pass levels of `(…, H, W)`, finest first; the last is the low-pass
/// residual.
pub fn pyramid_var<T: Scalar>(x: &Var<T>, levels: usize) -> Result<Vec<Var<T>>> {
    let nd = x.shape().len();
    check_levels(x.shape()[nd - 2], x.shape()[nd - 1], levels)?;
    let mut out = Vec::with_capacity(levels);
    let mut cur = x.clone();
    for _ in 1..levels {
        let low = blur_down(&cur);
        out.push(cur.sub(&low.upsample_bilinear2x()));
        cur = low;
    }
    out.push(cur);
    Ok(out)
}

pub fn collapse_var<T: Scalar>(levels: &[Var<T>]) -> Var<T> {
    let mut cur = levels.last().expect("non-empty pyramid").clone();
    for band in levels[..levels.len() - 1].iter().rev() {
        cur = band.add(&cur.upsample_bilinear2x());
    }
    cur
}

/// `Σ_s 2^(s−1) · mean |L_s(out) − L_s(gt)|`. The pyramid is linear, so it
/// is built once on the difference.
pub fn lap_loss_var<T: Scalar>(out: &Var<T>, gt: &Var<T>, levels: usize) -> Result<Var<T>> {
    if out.shape() != gt.shape() {
        return dim_err(format!("loss inputs differ: {:?} vs {:?}", out.shape(), gt.shape()));
    }
    let bands = pyramid_var(&out.sub(gt), levels)?;
    let mut total: Option<Var<T>> = None;
    for (s, b) in bands.iter().enumerate() {
        let term = b.abs().mean_all().scale_f64((1u64 << s) as f64);
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    Ok(total.expect("at least one level"))
}

/// Frame-level pyramid in 64-bit precision, `(1, 3, h, w)` per level.
#[derive(Clone, Debug)]
pub struct LaplacianPyramid {
    pub levels: Vec<Array<f64>>,
}

impl LaplacianPyramid {
    pub fn collapse(&self) -> Result<Frame> {
        let vars: Vec<Var<f64>> = self.levels.iter().cloned().map(Var::constant).collect();
        Frame::from_array(collapse_var(&vars).value(), 0)
    }
}

pub fn laplacian_pyramid(image: &Frame, levels: usize) -> Result<LaplacianPyramid> {
    let bands = pyramid_var(&Var::constant(image.to_array::<f64>()), levels)?;
    Ok(LaplacianPyramid {
        levels: bands.iter().map(|b| b.value().clone()).collect(),
    })
}

pub fn lap_loss(out: &Frame, gt: &Frame, levels: usize) -> Result<f64> {
    if !out.same_size(gt) {
        return dim_err("loss frames differ in size");
    }
    let l = lap_loss_var(
        &Var::constant(out.to_array::<f64>()),
        &Var::constant(gt.to_array()),
        levels,
    )?;
    Ok(l.value().item())
}

fn safe_ln<T: Scalar>(x: &Var<T>) -> Var<T> {
    x.clamp(LOG_EPS, f64::MAX).ln()
}

/// `mean(−ln(1 − D(fake)) − ln D(real))`.
pub fn discriminator_loss_var<T: Scalar>(d_fake: &Var<T>, d_real: &Var<T>) -> Var<T> {
    let one_minus = d_fake.neg().add_scalar(T::one());
    safe_ln(&one_minus).add(&safe_ln(d_real)).mean_all().neg()
}

/// `mean(−ln D(fake))`.
pub fn adversarial_loss_var<T: Scalar>(d_fake: &Var<T>) -> Var<T> {
    safe_ln(d_fake).mean_all().neg()
}

pub fn perceptual_loss_var<T: Scalar>(l_lap: &Var<T>, l_adv: &Var<T>, lambda: f64) -> Var<T> {
    if lambda == 0.0 {
        return l_lap.clone();
    }
    l_lap.add(&l_adv.scale_f64(lambda))
}

pub fn discriminator_loss(d_fake: f64, d_real: f64) -> f64 {
    -(1.0 - d_fake).max(LOG_EPS).ln() - d_real.max(LOG_EPS).ln()
}

pub fn adversarial_loss(d_fake: f64) -> f64 {
    -d_fake.max(LOG_EPS).ln()
}

pub fn perceptual_loss(l_lap: f64, l_adv: f64, lambda: f64) -> f64 {
    l_lap + lambda * l_adv
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    /// Stride-2 conv widths of the branch fed `(I_out − I1, I_out − I2)`.
    pub temporal: Vec<usize>,
    /// Stride-2 conv widths of the branch fed `I_out`.
    pub spatial: Vec<usize>,
    pub head: usize,
}

impl DiscriminatorConfig {
    pub fn tiny() -> Self {
        Self {
            temporal: vec![4, 8],
            spatial: vec![4, 8],
            head: 8,
        }
    }

    pub fn default_widths() -> Self {
        Self {
            temporal: vec![32, 64, 128, 256],
            spatial: vec![32, 64, 128, 256],
            head: 256,
        }
    }
}

#[derive(Clone, Debug)]
struct Branch<T: Scalar>(Vec<Conv<T>>);

impl<T: Scalar> Branch<T> {
    fn new(pb: &mut ParamBuilder<'_, T>, cin: usize, widths: &[usize]) -> Self {
        let spec = ConvSpec::default().padding(1).stride(2);
        let mut c = cin;
        Branch(
            widths
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let conv = Conv::new(pb, &format!("conv{i}"), c, w, &[3, 3], spec, Init::FanIn);
                    c = w;
                    conv
                })
                .collect(),
        )
    }

    /// Pooled `(B, C)` descriptor.
    fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Var<T> {
        let mut y = x.clone();
        for c in &self.0 {
            y = c.forward(g, &y).leaky_relu(0.2);
        }
        y.mean_axes(&[2, 3], false)
    }
}

/// Two-branch critic: a temporal branch on the differences to both
/// neighbours and a spatial branch on the frame itself.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar> {
    temporal: Branch<T>,
    spatial: Branch<T>,
    fc: [Linear<T>; 2],
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, cfg: &DiscriminatorConfig) -> Result<Self> {
        if cfg.temporal.is_empty() || cfg.spatial.is_empty() || cfg.head == 0 {
            return Err(Error::Config("discriminator branches need at least one layer".into()));
        }
        let feat = cfg.temporal.last().unwrap() + cfg.spatial.last().unwrap();
        Ok(Self {
            temporal: Branch::new(&mut pb.sub("temporal"), 6, &cfg.temporal),
            spatial: Branch::new(&mut pb.sub("spatial"), 3, &cfg.spatial),
            fc: [
                Linear::new(&mut pb.sub("head"), "fc0", feat, cfg.head),
                Linear::new(&mut pb.sub("head"), "fc1", cfg.head, 1),
            ],
        })
    }

    /// Score in (0, 1) per batch item, shape `(B, 1)`.
    pub fn forward(&self, g: &Graph<T>, out: &Var<T>, i1: &Var<T>, i2: &Var<T>) -> Result<Var<T>> {
        if out.shape() != i1.shape() || out.shape() != i2.shape() {
            return dim_err("discriminator inputs differ in shape");
        }
        let diffs = Var::concat(&[out.sub(i1), out.sub(i2)], 1);
        let f = Var::concat(&[self.temporal.forward(g, &diffs), self.spatial.forward(g, out)], 1);
        let h = self.fc[0].forward(g, &f).leaky_relu(0.2);
        Ok(self.fc[1].forward(g, &h).sigmoid())
    }
}

pub fn discriminator_score(d: &Discriminator<f32>, out: &Frame, i1: &Frame, i2: &Frame) -> Result<f64> {
    let g = Graph::inference();
    let v = |f: &Frame| Var::constant(f.to_array::<f32>());
    Ok(d.forward(&g, &v(out), &v(i1), &v(i2))?.value().item() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use stmfnet_tensor::gradcheck::{check_gradients, check_param_gradients};
    use stmfnet_tensor::ParamStore;

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Frame {
        Frame::from_fn(n, n, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn pyramid_examples() {
        let p = laplacian_pyramid(&Frame::filled(16, 16, 0.4), 3).unwrap();
        assert!(p.levels[0].max_abs() < 1e-12 && p.levels[1].max_abs() < 1e-12);
        assert!(p.levels[2].data().iter().all(|v| (v - 0.4).abs() < 1e-7));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = noise(&mut rng, 32);
        let one = laplacian_pyramid(&x, 1).unwrap();
        assert_eq!(Frame::from_array(&one.levels[0], 0).unwrap(), x);
        let back = laplacian_pyramid(&x, 5).unwrap().collapse().unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(laplacian_pyramid(&Frame::filled(12, 12, 0.0), 4).is_err());
    }

    #[test]
    fn lap_loss_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (noise(&mut rng, 32), noise(&mut rng, 32));
        assert_eq!(lap_loss(&a, &a, 5).unwrap(), 0.0);
        let s1 = lap_loss(&Frame::filled(8, 8, 0.2), &Frame::filled(8, 8, 0.5), 1).unwrap();
        assert!((s1 - 0.3).abs() < 1e-6);
        let (ab, ba) = (lap_loss(&a, &b, 5).unwrap(), lap_loss(&b, &a, 5).unwrap());
        assert!((ab - ba).abs() < 1e-12 && ab > 0.0);
        // Doubling the difference doubles the loss.
        let b2 = Frame::new(32, 32, a.data().iter().zip(b.data()).map(|(x, y)| x + 2.0 * (y - x)).collect()).unwrap();
        assert!((lap_loss(&a, &b2, 5).unwrap() - 2.0 * ab).abs() < 1e-5);
    }

    #[test]
    fn adversarial_closed_forms() {
        assert!((discriminator_loss(0.5, 0.5) - 1.3863).abs() < 1e-4);
        assert!(discriminator_loss(0.0, 1.0).abs() < 1e-12);
        assert!((discriminator_loss(0.9, 0.1) - 4.6052).abs() < 1e-4);
        assert_eq!(adversarial_loss(1.0), 0.0);
        assert!((adversarial_loss(0.5) - 0.6931).abs() < 1e-4);
        assert!(adversarial_loss(0.3) > adversarial_loss(0.4));
        assert!((perceptual_loss(0.1, 0.01, LAMBDA) - 1.1).abs() < 1e-12);
        assert_eq!(perceptual_loss(0.1, 0.01, 0.0), 0.1);
        let v = |x: f64| Var::constant(Array::<f64>::from_f64(&[1, 1], &[x]));
        let dl = discriminator_loss_var(&v(0.5), &v(0.5)).value().item();
        assert!((dl - discriminator_loss(0.5, 0.5)).abs() < 1e-12);
        assert!((adversarial_loss_var(&v(0.5)).value().item() - 0.5f64.ln().abs()).abs() < 1e-12);
    }

    #[test]
    fn lap_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt: Vec<f64> = (0..48).map(|_| rng.random()).collect();
        let gt = Var::constant(Array::from_f64(&[1, 3, 4, 4], &gt));
        let x: Vec<f64> = (0..48).map(|_| rng.random()).collect();
        let r = check_gradients(|v| lap_loss_var(&v[0], &gt, 3).unwrap(), &[Array::from_f64(&[1, 3, 4, 4], &x)], 1e-6, 48, 0);
        assert!(r.max_rel_error() < 1e-4, "{r:?}");
    }

    #[test]
    fn discriminator_range_and_gradients() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = {
            let mut pb = ParamBuilder::new(&mut store, &mut rng);
            Discriminator::new(&mut pb.sub("discriminator"), &DiscriminatorConfig::tiny()).unwrap()
        };
        let mk = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..2 * 3 * 8 * 8).map(|_| rng.random()).collect();
            Var::constant(Array::from_f64(&[2, 3, 8, 8], &v))
        };
        let (o, a, b) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let g = Graph::inference();
        let s = d.forward(&g, &o, &a, &b).unwrap();
        assert_eq!(s.shape(), &[2, 1]);
        assert!(s.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        let r = check_param_gradients(store.params(), |g| d.forward(g, &o, &a, &b).unwrap().sum_all(), 1e-6, 40, 1);
        assert!(r.max_rel_error() < 1e-3, "{r:?}");
    }
}
