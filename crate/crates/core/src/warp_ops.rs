//! Differentiable warping and resampling kernels.
//!
//! Tensor kernels work on `(B, C, H, W)` images, `(B, 2, H, W)` flows and
//! `(B, N, H, W)` multi-flow components, and carry their own backward
//! passes. The `Frame`-level functions at the bottom wrap them for single
//! images.

use std::sync::Arc;

use stmfnet_tensor::{Array, AxisMap, Border, Scalar, Var};

use crate::error::{dim_err, Error, Result};
use crate::frame::{Frame, FlowField, MultiFlow};

/// Half-sample luma interpolation filter, applied at odd output positions.
pub const HALF_PEL_TAPS: [f64; 8] = [
    -1.0 / 64.0,
    4.0 / 64.0,
    -11.0 / 64.0,
    40.0 / 64.0,
    40.0 / 64.0,
    -11.0 / 64.0,
    4.0 / 64.0,
    -1.0 / 64.0,
];

/// Importance values are clamped to this magnitude before exponentiation.
pub const IMPORTANCE_LIMIT: f64 = 80.0;

/// Tolerance on `Σ w = 1` accepted by [`multiwarp`].
pub const WEIGHT_SUM_TOL: f64 = 1e-4;

/// Optional fixed offset grid added to learned multi-flow offsets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BaseGrid {
    /// Offsets are used as predicted.
    #[default]
    Off,
    /// A `√N × √N` grid with the given dilation centred on each pixel.
    Dilated(usize),
}

impl BaseGrid {
    fn offsets(self, n: usize) -> Result<Vec<(f64, f64)>> {
        match self {
            BaseGrid::Off => Ok(vec![(0.0, 0.0); n]),
            BaseGrid::Dilated(d) => {
                let f = (n as f64).sqrt().round() as usize;
                if f * f != n {
                    return Err(Error::Config(format!(
                        "a dilated base grid needs a square flow count, got {n}"
                    )));
                }
                let c = (f as f64 - 1.0) / 2.0;
                Ok((0..n)
                    .map(|i| {
                        (
                            ((i % f) as f64 - c) * d as f64,
                            ((i / f) as f64 - c) * d as f64,
                        )
                    })
                    .collect())
            }
        }
    }
}

fn dims4(v: &Var<impl Scalar>) -> Result<[usize; 4]> {
    match *v.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => dim_err(format!("expected a 4-d tensor, got {s:?}")),
    }
}

fn require_finite<T: Scalar>(what: &str, a: &Array<T>) -> Result<()> {
    if a.all_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} contains non-finite values")))
    }
}

/// Bilinear footprint of one sample with edge-clamped indices.
#[derive(Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    j0: usize,
    j1: usize,
    fx: T,
    fy: T,
}

impl<T: Scalar> Tap<T> {
    #[inline]
    fn new(sx: T, sy: T, h: usize, w: usize) -> Self {
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let clampi = |v: T, len: usize| -> (usize, usize) {
            let hi = len as f64 - 1.0;
            let a = v.as_f64().clamp(-1.0, hi + 1.0);
            let lo_i = a.clamp(0.0, hi) as usize;
            let hi_i = (a + 1.0).clamp(0.0, hi) as usize;
            (lo_i, hi_i)
        };
        let (i0, i1) = clampi(x0, w);
        let (j0, j1) = clampi(y0, h);
        Tap {
            i0,
            i1,
            j0,
            j1,
            fx,
            fy,
        }
    }

    #[inline]
    fn corners(&self, plane: &[T], w: usize) -> [T; 4] {
        [
            plane[self.j0 * w + self.i0],
            plane[self.j0 * w + self.i1],
            plane[self.j1 * w + self.i0],
            plane[self.j1 * w + self.i1],
        ]
    }

    #[inline]
    fn weights(&self) -> [T; 4] {
        let one = T::one();
        [
            (one - self.fx) * (one - self.fy),
            self.fx * (one - self.fy),
            (one - self.fx) * self.fy,
            self.fx * self.fy,
        ]
    }

    #[inline]
    fn sample(&self, plane: &[T], w: usize) -> T {
        let v = self.corners(plane, w);
        let k = self.weights();
        k[0] * v[0] + k[1] * v[1] + k[2] * v[2] + k[3] * v[3]
    }

    /// `(∂/∂sx, ∂/∂sy)` of the sample.
    #[inline]
    fn slope(&self, plane: &[T], w: usize) -> (T, T) {
        let v = self.corners(plane, w);
        let one = T::one();
        (
            (one - self.fy) * (v[1] - v[0]) + self.fy * (v[3] - v[2]),
            (one - self.fx) * (v[2] - v[0]) + self.fx * (v[3] - v[1]),
        )
    }

    #[inline]
    fn scatter(&self, plane: &mut [T], w: usize, g: T) {
        let k = self.weights();
        let idx = [
            self.j0 * w + self.i0,
            self.j0 * w + self.i1,
            self.j1 * w + self.i0,
            self.j1 * w + self.i1,
        ];
        for (i, kk) in idx.into_iter().zip(k) {
            plane[i] = plane[i] + kk * g;
        }
    }
}

/// Backward warping `out(p) = img(p + flow(p))`, bilinear with replicate
/// borders.
pub fn backwarp<T: Scalar>(img: &Var<T>, flow: &Var<T>) -> Result<Var<T>> {
    let [b, c, h, w] = dims4(img)?;
    if flow.shape() != [b, 2, h, w] {
        return dim_err(format!(
            "flow {:?} does not match image {:?}",
            flow.shape(),
            img.shape()
        ));
    }
    require_finite("image", img.value())?;
    require_finite("flow", flow.value())?;
    let hw = h * w;
    let iv = img.value().clone();
    let fv = flow.value().clone();
    let taps = move |bi: usize, p: usize| {
        let f = &fv.data()[bi * 2 * hw..];
        let sx = T::from_usize(p % w).unwrap() + f[p];
        let sy = T::from_usize(p / w).unwrap() + f[hw + p];
        Tap::new(sx, sy, h, w)
    };
    let mut out = vec![T::zero(); b * c * hw];
    for bi in 0..b {
        for p in 0..hw {
            let t = taps(bi, p);
            for ci in 0..c {
                let plane = &iv.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                out[(bi * c + ci) * hw + p] = t.sample(plane, w);
            }
        }
    }
    let (ri, rf) = (img.requires_grad(), flow.requires_grad());
    Ok(Var::from_op(
        Array::new(&[b, c, h, w], out),
        vec![img.clone(), flow.clone()],
        move |g| {
            let gd = g.data();
            let mut gi = vec![T::zero(); b * c * hw];
            let mut gf = vec![T::zero(); b * 2 * hw];
            for bi in 0..b {
                for p in 0..hw {
                    let t = taps(bi, p);
                    let (mut gx, mut gy) = (T::zero(), T::zero());
                    for ci in 0..c {
                        let off = (bi * c + ci) * hw;
                        let go = gd[off + p];
                        if ri {
                            t.scatter(&mut gi[off..off + hw], w, go);
                        }
                        if rf {
                            let (sx, sy) = t.slope(&iv.data()[off..off + hw], w);
                            gx = gx + go * sx;
                            gy = gy + go * sy;
                        }
                    }
                    gf[bi * 2 * hw + p] = gx;
                    gf[bi * 2 * hw + hw + p] = gy;
                }
            }
            vec![
                ri.then(|| Array::new(&[b, c, h, w], gi)),
                rf.then(|| Array::new(&[b, 2, h, w], gf)),
            ]
        },
    ))
}

/// Multi-flow warping `out(p) = Σ_i w_i(p) · img(p + (α_i(p), β_i(p)))`.
pub fn multiwarp<T: Scalar>(
    img: &Var<T>,
    alpha: &Var<T>,
    beta: &Var<T>,
    weights: &Var<T>,
    grid: BaseGrid,
) -> Result<Var<T>> {
    let [b, c, h, w] = dims4(img)?;
    let [bn, n, hn, wn] = dims4(alpha)?;
    if bn != b || hn != h || wn != w {
        return dim_err(format!(
            "multi-flow {:?} does not match image {:?}",
            alpha.shape(),
            img.shape()
        ));
    }
    if beta.shape() != alpha.shape() || weights.shape() != alpha.shape() {
        return dim_err("alpha, beta and weights must share one shape");
    }
    for (name, v) in [("image", img), ("alpha", alpha), ("beta", beta), ("weights", weights)] {
        require_finite(name, v.value())?;
    }
    let hw = h * w;
    let wd = weights.value().data();
    for bi in 0..b {
        for p in 0..hw {
            let s: f64 = (0..n).map(|i| wd[(bi * n + i) * hw + p].as_f64()).sum();
            if (s - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::Validation(format!(
                    "multi-flow weights sum to {s} at batch {bi}, pixel {p}"
                )));
            }
        }
    }
    let base: Vec<(T, T)> = grid
        .offsets(n)?
        .into_iter()
        .map(|(x, y)| (T::from_f64_lossy(x), T::from_f64_lossy(y)))
        .collect();
    let (iv, av, bv, wv) = (
        img.value().clone(),
        alpha.value().clone(),
        beta.value().clone(),
        weights.value().clone(),
    );
    let base2 = base.clone();
    let (av2, bv2) = (av.clone(), bv.clone());
    let tap = move |bi: usize, i: usize, p: usize| {
        let k = (bi * n + i) * hw + p;
        let sx = T::from_usize(p % w).unwrap() + base2[i].0 + av2.data()[k];
        let sy = T::from_usize(p / w).unwrap() + base2[i].1 + bv2.data()[k];
        Tap::new(sx, sy, h, w)
    };
    let mut out = vec![T::zero(); b * c * hw];
    for bi in 0..b {
        for i in 0..n {
            for p in 0..hw {
                let t = tap(bi, i, p);
                let wi = wv.data()[(bi * n + i) * hw + p];
                for ci in 0..c {
                    let off = (bi * c + ci) * hw;
                    out[off + p] = out[off + p] + wi * t.sample(&iv.data()[off..off + hw], w);
                }
            }
        }
    }
    let (ri, ra, rb, rw) = (
        img.requires_grad(),
        alpha.requires_grad(),
        beta.requires_grad(),
        weights.requires_grad(),
    );
    drop((av, bv, base));
    Ok(Var::from_op(
        Array::new(&[b, c, h, w], out),
        vec![img.clone(), alpha.clone(), beta.clone(), weights.clone()],
        move |g| {
            let gd = g.data();
            let mut gi = vec![T::zero(); b * c * hw];
            let mut ga = vec![T::zero(); b * n * hw];
            let mut gb = vec![T::zero(); b * n * hw];
            let mut gw = vec![T::zero(); b * n * hw];
            for bi in 0..b {
                for i in 0..n {
                    for p in 0..hw {
                        let k = (bi * n + i) * hw + p;
                        let t = tap(bi, i, p);
                        let wi = wv.data()[k];
                        let (mut sx, mut sy, mut sw) = (T::zero(), T::zero(), T::zero());
                        for ci in 0..c {
                            let off = (bi * c + ci) * hw;
                            let go = gd[off + p];
                            let plane = &iv.data()[off..off + hw];
                            if ri {
                                t.scatter(&mut gi[off..off + hw], w, go * wi);
                            }
                            if ra || rb {
                                let (dx, dy) = t.slope(plane, w);
                                sx = sx + go * dx;
                                sy = sy + go * dy;
                            }
                            if rw {
                                sw = sw + go * t.sample(plane, w);
                            }
                        }
                        ga[k] = sx * wi;
                        gb[k] = sy * wi;
                        gw[k] = sw;
                    }
                }
            }
            let shape = [b, n, h, w];
            vec![
                ri.then(|| Array::new(&[b, c, h, w], gi)),
                ra.then(|| Array::new(&shape, ga)),
                rb.then(|| Array::new(&shape, gb)),
                rw.then(|| Array::new(&shape, gw)),
            ]
        },
    ))
}

/// One bilinear splat target with its weight and weight slopes.
struct Splat {
    target: usize,
    weight: f64,
    dwdx: f64,
    dwdy: f64,
}

fn splat_targets(sx: f64, sy: f64, h: usize, w: usize, out: &mut Vec<Splat>) {
    out.clear();
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    for (dy, wy, sy_) in [(0.0, 1.0 - fy, -1.0), (1.0, fy, 1.0)] {
        for (dx, wx, sx_) in [(0.0, 1.0 - fx, -1.0), (1.0, fx, 1.0)] {
            let (tx, ty) = (x0 + dx, y0 + dy);
            if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                continue;
            }
            out.push(Splat {
                target: ty as usize * w + tx as usize,
                weight: wx * wy,
                dwdx: sx_ * wy,
                dwdy: sy_ * wx,
            });
        }
    }
}

/// Softmax splatting. Each source pixel `q` is splatted bilinearly to
/// `q + flow(q)` with weight `exp(z(q))`; targets are normalised by the
/// accumulated weight. Returns the warped image and a `(B, 1, H, W)` hole
/// mask (1 where nothing landed; those pixels are 0).
pub fn softsplat<T: Scalar>(
    img: &Var<T>,
    flow: &Var<T>,
    z: &Var<T>,
) -> Result<(Var<T>, Array<T>)> {
    let [b, c, h, w] = dims4(img)?;
    if flow.shape() != [b, 2, h, w] || z.shape() != [b, 1, h, w] {
        return dim_err(format!(
            "softsplat shapes disagree: image {:?}, flow {:?}, importance {:?}",
            img.shape(),
            flow.shape(),
            z.shape()
        ));
    }
    require_finite("image", img.value())?;
    require_finite("flow", flow.value())?;
    require_finite("importance", z.value())?;
    let hw = h * w;
    let zc: Vec<f64> = z
        .value()
        .data()
        .iter()
        .map(|v| v.as_f64().clamp(-IMPORTANCE_LIMIT, IMPORTANCE_LIMIT))
        .collect();
    if z.value().max_abs() > IMPORTANCE_LIMIT {
        log::warn!("softsplat importance exceeds ±{IMPORTANCE_LIMIT}; clamped");
    }
    // Shifting by the per-image maximum cancels in the ratio.
    let e: Vec<f64> = (0..b)
        .flat_map(|bi| {
            let zs = &zc[bi * hw..(bi + 1) * hw];
            let m = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            zs.iter().map(move |v| (v - m).exp()).collect::<Vec<_>>()
        })
        .collect();

    let iv = img.value().clone();
    let fv = flow.value().clone();
    let source = move |bi: usize, q: usize| -> (f64, f64) {
        let f = &fv.data()[bi * 2 * hw..];
        (
            (q % w) as f64 + f[q].as_f64(),
            (q / w) as f64 + f[hw + q].as_f64(),
        )
    };
    let mut num = vec![0.0f64; b * c * hw];
    let mut den = vec![0.0f64; b * hw];
    let mut mass = vec![0.0f64; b * hw];
    let mut splats = Vec::with_capacity(4);
    for bi in 0..b {
        for q in 0..hw {
            let (sx, sy) = source(bi, q);
            splat_targets(sx, sy, h, w, &mut splats);
            let eq = e[bi * hw + q];
            for s in &splats {
                let k = s.weight * eq;
                den[bi * hw + s.target] += k;
                mass[bi * hw + s.target] += s.weight;
                for ci in 0..c {
                    num[(bi * c + ci) * hw + s.target] += k * iv.data()[(bi * c + ci) * hw + q].as_f64();
                }
            }
        }
    }
    let mut out = vec![T::zero(); b * c * hw];
    let mut holes = vec![T::zero(); b * hw];
    let mut out64 = vec![0.0f64; b * c * hw];
    for bi in 0..b {
        for p in 0..hw {
            let d = den[bi * hw + p];
            if mass[bi * hw + p] <= 0.0 || d <= 0.0 {
                holes[bi * hw + p] = T::one();
                continue;
            }
            for ci in 0..c {
                let i = (bi * c + ci) * hw + p;
                out64[i] = num[i] / d;
                out[i] = T::from_f64_lossy(out64[i]);
            }
        }
    }
    let (ri, rf, rz) = (img.requires_grad(), flow.requires_grad(), z.requires_grad());
    let zraw = z.value().clone();
    let var = Var::from_op(
        Array::new(&[b, c, h, w], out),
        vec![img.clone(), flow.clone(), z.clone()],
        move |g| {
            let gd = g.data();
            let mut gi = vec![T::zero(); b * c * hw];
            let mut gf = vec![T::zero(); b * 2 * hw];
            let mut gz = vec![T::zero(); b * hw];
            // ∂L/∂num = g/den and ∂L/∂den = −Σ_c g·out/den per target.
            let mut dden = vec![0.0f64; b * hw];
            for bi in 0..b {
                for p in 0..hw {
                    let d = den[bi * hw + p];
                    if d <= 0.0 {
                        continue;
                    }
                    let mut s = 0.0;
                    for ci in 0..c {
                        let i = (bi * c + ci) * hw + p;
                        s += gd[i].as_f64() * out64[i];
                    }
                    dden[bi * hw + p] = -s / d;
                }
            }
            let mut splats = Vec::with_capacity(4);
            for bi in 0..b {
                for q in 0..hw {
                    let (sx, sy) = source(bi, q);
                    splat_targets(sx, sy, h, w, &mut splats);
                    let eq = e[bi * hw + q];
                    let (mut gx, mut gy, mut ge) = (0.0, 0.0, 0.0);
                    for s in &splats {
                        let p = s.target;
                        let d = den[bi * hw + p];
                        if d <= 0.0 {
                            continue;
                        }
                        // gk: gradient w.r.t. this splat's weight k = b·e.
                        let mut gk = dden[bi * hw + p];
                        for ci in 0..c {
                            let gnum = gd[(bi * c + ci) * hw + p].as_f64() / d;
                            let src = (bi * c + ci) * hw + q;
                            gk += gnum * iv.data()[src].as_f64();
                            if ri {
                                gi[src] = gi[src] + T::from_f64_lossy(gnum * s.weight * eq);
                            }
                        }
                        gx += gk * eq * s.dwdx;
                        gy += gk * eq * s.dwdy;
                        ge += gk * s.weight;
                    }
                    if rf {
                        gf[bi * 2 * hw + q] = T::from_f64_lossy(gx);
                        gf[bi * 2 * hw + hw + q] = T::from_f64_lossy(gy);
                    }
                    let zq = zraw.data()[bi * hw + q].as_f64();
                    if rz && zq.abs() < IMPORTANCE_LIMIT {
                        gz[bi * hw + q] = T::from_f64_lossy(ge * eq);
                    }
                }
            }
            vec![
                ri.then(|| Array::new(&[b, c, h, w], gi)),
                rf.then(|| Array::new(&[b, 2, h, w], gf)),
                rz.then(|| Array::new(&[b, 1, h, w], gz)),
            ]
        },
    );
    Ok((var, Array::new(&[b, 1, h, w], holes)))
}

/// ×½ down-sampling; with factor 2 the bilinear filter is the 2×2 mean.
pub fn downsample2<T: Scalar>(img: &Var<T>) -> Result<Var<T>> {
    let [_, _, h, w] = dims4(img)?;
    if h % 2 != 0 || w % 2 != 0 {
        return dim_err(format!("down-sampling needs even dimensions, got {h}×{w}"));
    }
    Ok(img.avg_pool2x())
}

fn up2_8tap_map(len: usize) -> AxisMap {
    let rows: Vec<Vec<(usize, f64)>> = (0..2 * len)
        .map(|o| {
            let i = o / 2;
            if o % 2 == 0 {
                return vec![(i, 1.0)];
            }
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(8);
            for (k, &c) in HALF_PEL_TAPS.iter().enumerate() {
                let src = i as isize + k as isize - 3;
                let j = Border::Replicate.resolve(src, len).expect("replicate always resolves");
                match row.iter_mut().find(|(idx, _)| *idx == j) {
                    Some(e) => e.1 += c,
                    None => row.push((j, c)),
                }
            }
            row
        })
        .collect();
    AxisMap::from_rows(len, &rows)
}

/// ×2 up-sampling: integer positions pass through, half positions use the
/// separable 8-tap filter with replicated borders.
pub fn up2_8tap<T: Scalar>(img: &Var<T>) -> Result<Var<T>> {
    let [_, _, h, w] = dims4(img)?;
    if h < 8 || w < 8 {
        return dim_err(format!("8-tap up-sampling needs at least 8×8, got {h}×{w}"));
    }
    Ok(img
        .resample_axis(2, Arc::new(up2_8tap_map(h)))
        .resample_axis(3, Arc::new(up2_8tap_map(w))))
}

/// Weighted mean displacement `(Σ w·α, Σ w·β)` as `(B, 2, H, W)`.
pub fn mean_flow<T: Scalar>(alpha: &Var<T>, beta: &Var<T>, weights: &Var<T>) -> Var<T> {
    let mx = alpha.mul(weights).sum_axes(&[1], true);
    let my = beta.mul(weights).sum_axes(&[1], true);
    Var::concat(&[mx, my], 1)
}

fn frame_var(f: &Frame) -> Var<f32> {
    Var::constant(f.to_array())
}

fn to_frame(v: &Var<f32>) -> Result<Frame> {
    Frame::from_array(v.value(), 0)
}

fn check_size(what: &str, fh: usize, fw: usize, image: &Frame) -> Result<()> {
    if fh != image.height() || fw != image.width() {
        return dim_err(format!(
            "{what} is {fh}×{fw} but the image is {}×{}",
            image.height(),
            image.width()
        ));
    }
    Ok(())
}

/// Eq. (backward warp) on a single frame.
pub fn backward_warp_bilinear(image: &Frame, flow: &FlowField) -> Result<Frame> {
    check_size("flow", flow.height(), flow.width(), image)?;
    to_frame(&backwarp(&frame_var(image), &Var::constant(flow.to_array()))?)
}

pub fn multi_interflow_warp(image: &Frame, mflow: &MultiFlow) -> Result<Frame> {
    check_size("multi-flow", mflow.height(), mflow.width(), image)?;
    let (a, b, w) = mflow.to_arrays();
    to_frame(&multiwarp(
        &frame_var(image),
        &Var::constant(a),
        &Var::constant(b),
        &Var::constant(w),
        BaseGrid::Off,
    )?)
}

/// Splats `image` along `flow` with per-pixel `importance` (row-major
/// `H×W`). Returns the warped frame and the hole mask.
pub fn softsplat_forward_warp(
    image: &Frame,
    flow: &FlowField,
    importance: &[f32],
) -> Result<(Frame, Vec<bool>)> {
    check_size("flow", flow.height(), flow.width(), image)?;
    let (h, w) = (image.height(), image.width());
    if importance.len() != h * w {
        return dim_err(format!("importance has {} values for {h}×{w}", importance.len()));
    }
    let z = Var::constant(Array::new(&[1, 1, h, w], importance.to_vec()));
    let (out, holes) = softsplat(&frame_var(image), &Var::constant(flow.to_array()), &z)?;
    Ok((to_frame(&out)?, holes.data().iter().map(|&v| v > 0.5).collect()))
}

pub fn downsample_bilinear(image: &Frame, factor: usize) -> Result<Frame> {
    if factor != 2 {
        return Err(Error::Validation(format!("only factor 2 is supported, got {factor}")));
    }
    to_frame(&downsample2(&frame_var(image))?)
}

pub fn upsample_8tap(image: &Frame, factor: usize) -> Result<Frame> {
    if factor != 2 {
        return Err(Error::Validation(format!("only factor 2 is supported, got {factor}")));
    }
    to_frame(&up2_8tap(&frame_var(image))?)
}

pub fn mean_flow_map(mflow: &MultiFlow) -> FlowField {
    let (a, b, w) = mflow.to_arrays::<f32>();
    let m = mean_flow(&Var::constant(a), &Var::constant(b), &Var::constant(w));
    FlowField::from_array(m.value(), 0).expect("mean flow of a valid multi-flow is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use stmfnet_tensor::gradcheck::check_gradients;

    fn row(values: &[f32]) -> Frame {
        Frame::from_fn(1, values.len(), |_, x| [values[x]; 3])
    }

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, |_, _| {
            [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()]
        })
    }

    fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array<f64> {
        let n = shape.iter().product();
        Array::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
    }

    #[test]
    fn half_pel_taps_sum_to_one() {
        assert!((HALF_PEL_TAPS.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backward_warp_examples() {
        let img = row(&[10.0, 20.0]);
        let mut flow = FlowField::zeros(1, 2);
        assert_eq!(backward_warp_bilinear(&img, &flow).unwrap(), img);
        flow.set(0, 0, (1.0, 0.0));
        assert_eq!(backward_warp_bilinear(&img, &flow).unwrap().get(0, 0, 0), 20.0);
        flow.set(0, 0, (0.5, 0.0));
        assert_eq!(backward_warp_bilinear(&img, &flow).unwrap().get(0, 0, 0), 15.0);
    }

    #[test]
    fn backward_warp_rejects_bad_inputs() {
        let img = row(&[1.0, 2.0]);
        assert!(matches!(
            backward_warp_bilinear(&img, &FlowField::zeros(2, 2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn multi_warp_examples() {
        let img = row(&[10.0, 20.0]);
        let id = MultiFlow::uniform(1, 2, &[(0.0, 0.0)], &[1.0]).unwrap();
        assert_eq!(multi_interflow_warp(&img, &id).unwrap(), img);
        let m = MultiFlow::uniform(1, 2, &[(0.0, 0.0), (1.0, 0.0)], &[0.25, 0.75]).unwrap();
        assert_eq!(multi_interflow_warp(&img, &m).unwrap().get(0, 0, 0), 17.5);
        let c = Frame::filled(4, 5, 0.3);
        let m = MultiFlow::uniform(4, 5, &[(2.5, -7.0), (-1.25, 0.5), (9.0, 9.0)], &[0.2, 0.3, 0.5])
            .unwrap();
        let out = multi_interflow_warp(&c, &m).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn multi_warp_rejects_unnormalised_weights() {
        let img = row(&[10.0, 20.0]);
        let m = MultiFlow::uniform(1, 2, &[(0.0, 0.0), (1.0, 0.0)], &[0.5, 0.6]).unwrap();
        assert!(matches!(multi_interflow_warp(&img, &m), Err(Error::Validation(_))));
    }

    #[test]
    fn dilated_base_grid_offsets() {
        let o = BaseGrid::Dilated(2).offsets(9).unwrap();
        assert_eq!(o[0], (-2.0, -2.0));
        assert_eq!(o[4], (0.0, 0.0));
        assert_eq!(o[5], (2.0, 0.0));
        assert!(BaseGrid::Dilated(1).offsets(5).is_err());
    }

    #[test]
    fn softsplat_examples() {
        let img = Frame::from_fn(3, 3, |y, x| [(y * 3 + x) as f32; 3]);
        let (out, holes) = softsplat_forward_warp(&img, &FlowField::zeros(3, 3), &[0.0; 9]).unwrap();
        assert_eq!(out, img);
        assert!(holes.iter().all(|h| !h));

        // Pixels 10 and 30, one column apart, both land on column 1.
        let img = row(&[10.0, 30.0, 0.0]);
        let mut flow = FlowField::zeros(1, 3);
        flow.set(0, 0, (1.0, 0.0));
        flow.set(0, 2, (5.0, 0.0));
        let (out, holes) = softsplat_forward_warp(&img, &flow, &[0.0, 0.0, 0.0]).unwrap();
        assert!((out.get(0, 1, 0) - 20.0).abs() < 1e-5);
        assert_eq!(holes, vec![true, false, true]);
        let z = [3f32.ln(), 0.0, 0.0];
        let (out, _) = softsplat_forward_warp(&img, &flow, &z).unwrap();
        assert!((out.get(0, 1, 0) - 15.0).abs() < 1e-5);

        let off = FlowField::uniform(3, 3, 10.0, -7.0);
        let img = Frame::filled(3, 3, 0.8);
        let (out, holes) = softsplat_forward_warp(&img, &off, &[0.0; 9]).unwrap();
        assert!(holes.iter().all(|&h| h));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softsplat_survives_extreme_importance() {
        let img = Frame::filled(2, 2, 0.5);
        let (out, holes) =
            softsplat_forward_warp(&img, &FlowField::zeros(2, 2), &[500.0, -500.0, 0.0, 80.0])
                .unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert!(holes.iter().all(|h| !h));
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn downsample_examples() {
        let c = Frame::filled(4, 4, 0.7);
        let d = downsample_bilinear(&c, 2).unwrap();
        assert_eq!((d.height(), d.width()), (2, 2));
        assert!(d.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        let f = Frame::from_fn(2, 2, |y, x| [((y + x) % 2) as f32; 3]);
        assert_eq!(downsample_bilinear(&f, 2).unwrap().data(), &[0.5; 3]);
        let cb = Frame::from_fn(4, 4, |y, x| [((y + x) % 2) as f32; 3]);
        assert!(downsample_bilinear(&cb, 2).unwrap().data().iter().all(|&v| v == 0.5));
        assert!(matches!(
            downsample_bilinear(&Frame::filled(3, 4, 0.0), 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn upsample_examples() {
        let c = Frame::filled(8, 8, 0.3);
        let u = upsample_8tap(&c, 2).unwrap();
        assert_eq!((u.height(), u.width()), (16, 16));
        assert!(u.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_frame(&mut rng, 8, 8);
        let u = upsample_8tap(&f, 2).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    assert_eq!(u.get(2 * y, 2 * x, c), f.get(y, x, c));
                }
            }
        }
        assert!(matches!(upsample_8tap(&Frame::filled(7, 8, 0.0), 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn upsample_ramp_matches_dot_product() {
        let ramp: Vec<f32> = (0..8).map(|v| v as f32).collect();
        let f = Frame::from_fn(8, 8, |_, x| [ramp[x]; 3]);
        let u = upsample_8tap(&f, 2).unwrap();
        for i in 0..8 {
            let expect: f64 = HALF_PEL_TAPS
                .iter()
                .enumerate()
                .map(|(k, c)| c * ramp[(i as isize + k as isize - 3).clamp(0, 7) as usize] as f64)
                .sum();
            assert!((u.get(4, 2 * i + 1, 0) as f64 - expect).abs() < 1e-5, "x={i}");
        }
    }

    #[test]
    fn upsample_center_crop_of_constant() {
        let u = upsample_8tap(&Frame::filled(10, 12, 0.6), 2).unwrap();
        for y in 4..16 {
            for x in 4..20 {
                assert!((u.get(y, x, 1) - 0.6).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mean_flow_examples() {
        let one = MultiFlow::uniform(2, 2, &[(1.5, -2.0)], &[1.0]).unwrap();
        assert_eq!(mean_flow_map(&one), FlowField::uniform(2, 2, 1.5, -2.0));
        let two = MultiFlow::uniform(2, 2, &[(1.0, 0.0), (3.0, 0.0)], &[0.5, 0.5]).unwrap();
        assert_eq!(mean_flow_map(&two), FlowField::uniform(2, 2, 2.0, 0.0));
        let sel = MultiFlow::uniform(1, 1, &[(4.0, 5.0), (3.0, 0.0), (7.0, 7.0)], &[1.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(mean_flow_map(&sel), FlowField::uniform(1, 1, 4.0, 5.0));
    }

    #[test]
    fn warps_are_linear_in_the_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let i = rand_array(&mut rng, &[1, 3, 6, 7], 0.0, 1.0);
        let j = rand_array(&mut rng, &[1, 3, 6, 7], 0.0, 1.0);
        let flow = Var::constant(rand_array(&mut rng, &[1, 2, 6, 7], -3.0, 3.0));
        let (a, bcoef) = (0.7, -1.3);
        let mix = Var::constant(i.map(|v| a * v).zip_map(&j.map(|v| bcoef * v), |x, y| x + y));
        let lhs = backwarp(&mix, &flow).unwrap();
        let rhs = backwarp(&Var::constant(i.clone()), &flow)
            .unwrap()
            .scale(a)
            .add(&backwarp(&Var::constant(j.clone()), &flow).unwrap().scale(bcoef));
        for (x, y) in lhs.value().data().iter().zip(rhs.value().data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    fn random_multiflow(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> [Array<f64>; 3] {
        let a = rand_array(rng, &[1, n, h, w], -3.0, 3.0);
        let b = rand_array(rng, &[1, n, h, w], -3.0, 3.0);
        let logits = Var::constant(rand_array(rng, &[1, n, h, w], -2.0, 2.0));
        [a, b, logits.softmax(1).value().clone()]
    }

    #[test]
    fn multi_warp_stays_within_image_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let img = rand_array(&mut rng, &[1, 3, 8, 8], -0.5, 2.0);
            let (lo, hi) = img.min_max();
            let [a, b, w] = random_multiflow(&mut rng, 4, 8, 8);
            let out = multiwarp(
                &Var::constant(img),
                &Var::constant(a),
                &Var::constant(b),
                &Var::constant(w),
                BaseGrid::Off,
            )
            .unwrap();
            let (olo, ohi) = out.value().min_max();
            assert!(olo >= lo - 1e-12 && ohi <= hi + 1e-12);
        }
    }

    #[test]
    fn gradient_checks_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..3 {
            let img = rand_array(&mut rng, &[1, 3, 8, 8], 0.0, 1.0);
            let flow = rand_array(&mut rng, &[1, 2, 8, 8], -2.5, 2.5);
            let r = check_gradients(
                |v| backwarp(&v[0], &v[1]).unwrap(),
                &[img.clone(), flow.clone()],
                1e-6,
                usize::MAX,
                trial,
            );
            assert!(r.max_rel_error() < 1e-3, "backwarp {r:?}");

            let [a, b, _] = random_multiflow(&mut rng, 3, 8, 8);
            let logits = rand_array(&mut rng, &[1, 3, 8, 8], -1.0, 1.0);
            let r = check_gradients(
                |v| multiwarp(&v[0], &v[1], &v[2], &v[3].softmax(1), BaseGrid::Off).unwrap(),
                &[img.clone(), a, b, logits],
                1e-6,
                usize::MAX,
                trial,
            );
            assert!(r.max_rel_error() < 1e-3, "multiwarp {r:?}");

            let z = rand_array(&mut rng, &[1, 1, 8, 8], -2.0, 2.0);
            let r = check_gradients(
                |v| softsplat(&v[0], &v[1], &v[2]).unwrap().0,
                &[img.clone(), flow, z],
                1e-6,
                usize::MAX,
                trial,
            );
            assert!(r.max_rel_error() < 1e-3, "softsplat {r:?}");

            let r = check_gradients(|v| up2_8tap(&v[0]).unwrap(), &[img.clone()], 1e-6, 200, trial);
            assert!(r.max_rel_error() < 1e-3, "8-tap {r:?}");
        }
    }
}
