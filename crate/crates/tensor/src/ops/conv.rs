//! Grouped, strided, dilated convolution over one to three spatial axes.
//!
//! 2-d convolution is the 3-d kernel with a unit depth axis. All three
//! passes (forward, input gradient, weight gradient) lower to GEMM over
//! column buffers built in bounded chunks of output positions. Transposed
//! convolution reuses the input-gradient pass as its forward.

use crate::array::Array;
use crate::scalar::Scalar;
use crate::var::Var;

/// Upper bound on column-buffer elements per chunk.
const COL_BUDGET: usize = 1 << 20;

/// Convolution hyper-parameters in `(depth, height, width)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub dilation: [usize; 3],
    pub output_padding: [usize; 3],
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: [1; 3],
            padding: [0; 3],
            dilation: [1; 3],
            output_padding: [0; 3],
            groups: 1,
        }
    }
}

impl ConvSpec {
    /// Sets the spatial (height, width) stride.
    pub fn stride(mut self, s: usize) -> Self {
        self.stride[1] = s;
        self.stride[2] = s;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding[1] = p;
        self.padding[2] = p;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation[1] = d;
        self.dilation[2] = d;
        self
    }

    pub fn output_padding(mut self, p: usize) -> Self {
        self.output_padding[1] = p;
        self.output_padding[2] = p;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn stride3(mut self, s: [usize; 3]) -> Self {
        self.stride = s;
        self
    }

    pub fn padding3(mut self, p: [usize; 3]) -> Self {
        self.padding = p;
        self
    }

    pub fn output_padding3(mut self, p: [usize; 3]) -> Self {
        self.output_padding = p;
        self
    }
}

/// Shapes of one convolution `x (n, cin, in_sp) -> y (n, cout, out_sp)`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    groups: usize,
    in_sp: [usize; 3],
    k: [usize; 3],
    out_sp: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    dil: [usize; 3],
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn ksize(&self) -> usize {
        self.cin_g() * self.k.iter().product::<usize>()
    }
    fn in_pos(&self) -> usize {
        self.in_sp.iter().product()
    }
    fn out_pos(&self) -> usize {
        self.out_sp.iter().product()
    }
    fn is_pointwise(&self) -> bool {
        self.k == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
    fn chunk(&self) -> usize {
        (COL_BUDGET / self.ksize().max(1)).clamp(1, self.out_pos().max(1))
    }
}

fn conv_out_len(len: usize, k: usize, s: usize, p: usize, d: usize) -> usize {
    let span = d * (k - 1) + 1;
    assert!(
        len + 2 * p >= span,
        "kernel extent {span} larger than padded input {}",
        len + 2 * p
    );
    (len + 2 * p - span) / s + 1
}

fn transposed_out_len(len: usize, k: usize, s: usize, p: usize, d: usize, op: usize) -> usize {
    let full = (len - 1) * s + d * (k - 1) + op + 1;
    assert!(full > 2 * p, "transposed convolution output would be empty");
    full - 2 * p
}

/// Strided GEMM: `c = a·b + beta·c`.
#[allow(clippy::too_many_arguments)]
fn gemm_raw<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rs: usize, cs: usize, r: usize, q: usize| (r - 1) * rs + (q - 1) * cs;
    assert!(k == 0 || last(rsa, csa, m, k) < a.len());
    assert!(k == 0 || last(rsb, csb, k, n) < b.len());
    assert!(last(rsc, csc, m, n) < c.len());
    // SAFETY: every addressed element was bounds-checked above and `c` is a
    // distinct mutable borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Maximal stretches of a chunk that lie on one output row.
#[derive(Clone, Copy, Debug)]
struct Run {
    /// Offset of the first position inside the chunk.
    j0: usize,
    od: usize,
    oy: usize,
    ox0: usize,
    len: usize,
}

struct ChunkRuns(Vec<Run>);

impl ChunkRuns {
    fn new(geo: &Geometry, p0: usize, pc: usize) -> Self {
        let [_, oh, ow] = geo.out_sp;
        let mut runs = Vec::new();
        let mut p = p0;
        while p < p0 + pc {
            let od = p / (oh * ow);
            let rem = p % (oh * ow);
            let (oy, ox0) = (rem / ow, rem % ow);
            let len = (ow - ox0).min(p0 + pc - p);
            runs.push(Run { j0: p - p0, od, oy, ox0, len });
            p += len;
        }
        ChunkRuns(runs)
    }
}

/// For kernel tap `(a, b, e)` and a run, the input row offset (if the row
/// is inside the frame) and the sub-range of output columns `[lo, hi)`
/// whose input column is inside the frame. Column `ox` reads input column
/// `ox·stride + shift`.
fn tap_span(geo: &Geometry, run: &Run, (a, b, e): (usize, usize, usize)) -> Option<(usize, usize, usize, isize)> {
    let [id, ih, iw] = geo.in_sp;
    let zd = (run.od * geo.stride[0] + a * geo.dil[0]) as isize - geo.pad[0] as isize;
    let zh = (run.oy * geo.stride[1] + b * geo.dil[1]) as isize - geo.pad[1] as isize;
    if zd < 0 || zh < 0 || zd as usize >= id || zh as usize >= ih {
        return None;
    }
    let s = geo.stride[2] as isize;
    let shift = (e * geo.dil[2]) as isize - geo.pad[2] as isize;
    // ox·s + shift ∈ [0, iw)
    let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
    let hi = (iw as isize - shift + s - 1).div_euclid(s).max(0);
    let lo = (lo as usize).clamp(run.ox0, run.ox0 + run.len);
    let hi = (hi as usize).clamp(lo, run.ox0 + run.len);
    Some(((zd as usize * ih + zh as usize) * iw, lo, hi, shift))
}

/// Fills `cols (ksize × pc)` from the group slice `x (cin_g, in_pos)`.
fn im2col<T: Scalar>(geo: &Geometry, x: &[T], runs: &ChunkRuns, cols: &mut [T]) {
    let pc = cols.len() / geo.ksize().max(1);
    let [kd, kh, kw] = geo.k;
    let s = geo.stride[2];
    let plane = geo.in_pos();
    let mut r = 0;
    for c in 0..geo.cin_g() {
        let xc = &x[c * plane..(c + 1) * plane];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let row = &mut cols[r * pc..(r + 1) * pc];
                    for run in &runs.0 {
                        let out = &mut row[run.j0..run.j0 + run.len];
                        let Some((base, lo, hi, shift)) = tap_span(geo, run, (a, b, e)) else {
                            out.fill(T::zero());
                            continue;
                        };
                        let (l, h) = (lo - run.ox0, hi - run.ox0);
                        out[..l].fill(T::zero());
                        out[h..].fill(T::zero());
                        if l == h {
                            continue;
                        }
                        let start = (base as isize + (lo * s) as isize + shift) as usize;
                        if s == 1 {
                            out[l..h].copy_from_slice(&xc[start..start + (h - l)]);
                        } else {
                            for (k, o) in out[l..h].iter_mut().enumerate() {
                                *o = xc[start + k * s];
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into the group slice `gx (cin_g, in_pos)`.
fn col2im<T: Scalar>(geo: &Geometry, cols: &[T], runs: &ChunkRuns, gx: &mut [T]) {
    let pc = cols.len() / geo.ksize().max(1);
    let [kd, kh, kw] = geo.k;
    let s = geo.stride[2];
    let plane = geo.in_pos();
    let mut r = 0;
    for c in 0..geo.cin_g() {
        let gc = &mut gx[c * plane..(c + 1) * plane];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let row = &cols[r * pc..(r + 1) * pc];
                    for run in &runs.0 {
                        let Some((base, lo, hi, shift)) = tap_span(geo, run, (a, b, e)) else {
                            continue;
                        };
                        if lo == hi {
                            continue;
                        }
                        let src = &row[run.j0 + lo - run.ox0..run.j0 + hi - run.ox0];
                        let start = (base as isize + (lo * s) as isize + shift) as usize;
                        if s == 1 {
                            for (d, &v) in gc[start..start + src.len()].iter_mut().zip(src) {
                                *d = *d + v;
                            }
                        } else {
                            for (k, &v) in src.iter().enumerate() {
                                gc[start + k * s] = gc[start + k * s] + v;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

fn conv_forward<T: Scalar>(x: &[T], w: &[T], geo: &Geometry) -> Vec<T> {
    let (ip, op) = (geo.in_pos(), geo.out_pos());
    let (cin_g, cout_g, ks) = (geo.cin_g(), geo.cout_g(), geo.ksize());
    let mut y = vec![T::zero(); geo.n * geo.cout * op];
    let chunk = geo.chunk();
    let mut cols = vec![T::zero(); ks * chunk];
    for n in 0..geo.n {
        for g in 0..geo.groups {
            let xg = &x[(n * geo.cin + g * cin_g) * ip..(n * geo.cin + (g + 1) * cin_g) * ip];
            let wg = &w[g * cout_g * ks..(g + 1) * cout_g * ks];
            let y0 = (n * geo.cout + g * cout_g) * op;
            let yg = &mut y[y0..y0 + cout_g * op];
            if geo.is_pointwise() {
                gemm_raw(cout_g, ks, op, wg, (ks, 1), xg, (ip, 1), T::zero(), yg, (op, 1));
                continue;
            }
            let mut p0 = 0;
            while p0 < op {
                let pc = chunk.min(op - p0);
                let runs = ChunkRuns::new(geo, p0, pc);
                im2col(geo, xg, &runs, &mut cols[..ks * pc]);
                gemm_raw(
                    cout_g,
                    ks,
                    pc,
                    wg,
                    (ks, 1),
                    &cols[..ks * pc],
                    (pc, 1),
                    T::zero(),
                    &mut yg[p0..],
                    (op, 1),
                );
                p0 += pc;
            }
        }
    }
    y
}

fn conv_backward_input<T: Scalar>(gy: &[T], w: &[T], geo: &Geometry) -> Vec<T> {
    let (ip, op) = (geo.in_pos(), geo.out_pos());
    let (cin_g, cout_g, ks) = (geo.cin_g(), geo.cout_g(), geo.ksize());
    let mut gx = vec![T::zero(); geo.n * geo.cin * ip];
    let chunk = geo.chunk();
    let mut cols = vec![T::zero(); ks * chunk];
    for n in 0..geo.n {
        for g in 0..geo.groups {
            let wg = &w[g * cout_g * ks..(g + 1) * cout_g * ks];
            let y0 = (n * geo.cout + g * cout_g) * op;
            let gyg = &gy[y0..y0 + cout_g * op];
            let x0 = (n * geo.cin + g * cin_g) * ip;
            let gxg = &mut gx[x0..x0 + cin_g * ip];
            if geo.is_pointwise() {
                // gx (cin_g × ip) = wᵀ (cin_g × cout_g) · gy (cout_g × ip)
                gemm_raw(cin_g, cout_g, ip, wg, (1, ks), gyg, (op, 1), T::zero(), gxg, (ip, 1));
                continue;
            }
            let mut p0 = 0;
            while p0 < op {
                let pc = chunk.min(op - p0);
                let runs = ChunkRuns::new(geo, p0, pc);
                gemm_raw(
                    ks,
                    cout_g,
                    pc,
                    wg,
                    (1, ks),
                    &gyg[p0..],
                    (op, 1),
                    T::zero(),
                    &mut cols[..ks * pc],
                    (pc, 1),
                );
                col2im(geo, &cols[..ks * pc], &runs, gxg);
                p0 += pc;
            }
        }
    }
    gx
}

fn conv_backward_weight<T: Scalar>(x: &[T], gy: &[T], geo: &Geometry) -> Vec<T> {
    let (ip, op) = (geo.in_pos(), geo.out_pos());
    let (cin_g, cout_g, ks) = (geo.cin_g(), geo.cout_g(), geo.ksize());
    let mut gw = vec![T::zero(); geo.cout * ks];
    let chunk = geo.chunk();
    let mut cols = vec![T::zero(); ks * chunk];
    for n in 0..geo.n {
        for g in 0..geo.groups {
            let xg = &x[(n * geo.cin + g * cin_g) * ip..(n * geo.cin + (g + 1) * cin_g) * ip];
            let y0 = (n * geo.cout + g * cout_g) * op;
            let gyg = &gy[y0..y0 + cout_g * op];
            let gwg = &mut gw[g * cout_g * ks..(g + 1) * cout_g * ks];
            if geo.is_pointwise() {
                // gw (cout_g × cin_g) += gy (cout_g × ip) · xᵀ (ip × cin_g)
                gemm_raw(cout_g, ip, cin_g, gyg, (op, 1), xg, (1, ip), T::one(), gwg, (ks, 1));
                continue;
            }
            let mut p0 = 0;
            while p0 < op {
                let pc = chunk.min(op - p0);
                let runs = ChunkRuns::new(geo, p0, pc);
                im2col(geo, xg, &runs, &mut cols[..ks * pc]);
                gemm_raw(
                    cout_g,
                    pc,
                    ks,
                    &gyg[p0..],
                    (op, 1),
                    &cols[..ks * pc],
                    (1, pc),
                    T::one(),
                    gwg,
                    (ks, 1),
                );
                p0 += pc;
            }
        }
    }
    gw
}

fn add_bias<T: Scalar>(y: &mut [T], b: &[T], n: usize, c: usize, pos: usize) {
    for i in 0..n {
        for (ch, &bv) in b.iter().enumerate().take(c) {
            let base = (i * c + ch) * pos;
            for v in &mut y[base..base + pos] {
                *v = *v + bv;
            }
        }
    }
}

fn bias_grad<T: Scalar>(g: &[T], n: usize, c: usize, pos: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for i in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (i * c + ch) * pos;
            *o = *o + g[base..base + pos].iter().copied().sum::<T>();
        }
    }
    out
}

fn as_5d(shape: &[usize]) -> [usize; 5] {
    match *shape {
        [n, c, d, h, w] => [n, c, d, h, w],
        [n, c, h, w] => [n, c, 1, h, w],
        _ => panic!("convolution input must be 4-d or 5-d, got {shape:?}"),
    }
}

fn check_bias<T: Scalar>(bias: Option<&Var<T>>, c: usize) {
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[c], "bias must have one entry per output channel");
    }
}

impl<T: Scalar> Var<T> {
    /// Convolution of `self (n, cin, [d,] h, w)` with `weight
    /// (cout, cin / groups, [kd,] kh, kw)`.
    pub fn conv(&self, weight: &Var<T>, bias: Option<&Var<T>>, spec: ConvSpec) -> Var<T> {
        let xs = self.shape().to_vec();
        let is2d = xs.len() == 4;
        let [n, cin, d, h, w] = as_5d(&xs);
        let [cout, cin_g, kd, kh, kw] = as_5d(weight.shape());
        assert_eq!(weight.shape().len(), xs.len(), "weight/input rank mismatch");
        assert!(
            spec.groups >= 1 && cin % spec.groups == 0 && cout % spec.groups == 0,
            "channels ({cin}, {cout}) not divisible by groups {}",
            spec.groups
        );
        assert_eq!(cin_g * spec.groups, cin, "weight expects {} input channels", cin_g * spec.groups);
        check_bias(bias, cout);
        let out_sp = [
            conv_out_len(d, kd, spec.stride[0], spec.padding[0], spec.dilation[0]),
            conv_out_len(h, kh, spec.stride[1], spec.padding[1], spec.dilation[1]),
            conv_out_len(w, kw, spec.stride[2], spec.padding[2], spec.dilation[2]),
        ];
        let geo = Geometry {
            n,
            cin,
            cout,
            groups: spec.groups,
            in_sp: [d, h, w],
            k: [kd, kh, kw],
            out_sp,
            stride: spec.stride,
            pad: spec.padding,
            dil: spec.dilation,
        };
        let mut y = conv_forward(self.value().data(), weight.value().data(), &geo);
        if let Some(b) = bias {
            add_bias(&mut y, b.value().data(), n, cout, geo.out_pos());
        }
        let y_shape: Vec<usize> = if is2d {
            vec![n, cout, out_sp[1], out_sp[2]]
        } else {
            vec![n, cout, out_sp[0], out_sp[1], out_sp[2]]
        };
        let x = self.value().clone();
        let wv = weight.value().clone();
        let w_shape = weight.shape().to_vec();
        let (rx, rw) = (self.requires_grad(), weight.requires_grad());
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Var::from_op(Array::new(&y_shape, y), parents, move |g| {
            let gd = g.data();
            let mut out = vec![
                rx.then(|| Array::new(&xs, conv_backward_input(gd, wv.data(), &geo))),
                rw.then(|| Array::new(&w_shape, conv_backward_weight(x.data(), gd, &geo))),
            ];
            if has_bias {
                out.push(Some(Array::new(
                    &[cout],
                    bias_grad(gd, n, cout, geo.out_pos()),
                )));
            }
            out
        })
    }

    /// Transposed convolution; `weight` is laid out `(cin, cout / groups,
    /// [kd,] kh, kw)`.
    pub fn conv_transpose(&self, weight: &Var<T>, bias: Option<&Var<T>>, spec: ConvSpec) -> Var<T> {
        let xs = self.shape().to_vec();
        let is2d = xs.len() == 4;
        let [n, cin, d, h, w] = as_5d(&xs);
        let [wc, cout_g, kd, kh, kw] = as_5d(weight.shape());
        assert_eq!(weight.shape().len(), xs.len(), "weight/input rank mismatch");
        assert_eq!(wc, cin, "transposed weight expects {wc} input channels, got {cin}");
        assert!(cin % spec.groups == 0, "input channels not divisible by groups");
        let cout = cout_g * spec.groups;
        check_bias(bias, cout);
        let out_sp = [
            transposed_out_len(d, kd, spec.stride[0], spec.padding[0], spec.dilation[0], spec.output_padding[0]),
            transposed_out_len(h, kh, spec.stride[1], spec.padding[1], spec.dilation[1], spec.output_padding[1]),
            transposed_out_len(w, kw, spec.stride[2], spec.padding[2], spec.dilation[2], spec.output_padding[2]),
        ];
        // The equivalent forward convolution maps the output back onto the
        // input: its "input" has `cout` channels and its "output" `cin`.
        let geo = Geometry {
            n,
            cin: cout,
            cout: cin,
            groups: spec.groups,
            in_sp: out_sp,
            k: [kd, kh, kw],
            out_sp: [d, h, w],
            stride: spec.stride,
            pad: spec.padding,
            dil: spec.dilation,
        };
        for (i, &o) in out_sp.iter().enumerate() {
            let back = conv_out_len(o, geo.k[i], spec.stride[i], spec.padding[i], spec.dilation[i]);
            assert_eq!(back, [d, h, w][i], "inconsistent transposed convolution geometry");
        }
        let mut y = conv_backward_input(self.value().data(), weight.value().data(), &geo);
        let pos: usize = out_sp.iter().product();
        if let Some(b) = bias {
            add_bias(&mut y, b.value().data(), n, cout, pos);
        }
        let y_shape: Vec<usize> = if is2d {
            vec![n, cout, out_sp[1], out_sp[2]]
        } else {
            vec![n, cout, out_sp[0], out_sp[1], out_sp[2]]
        };
        let x = self.value().clone();
        let wv = weight.value().clone();
        let w_shape = weight.shape().to_vec();
        let (rx, rw) = (self.requires_grad(), weight.requires_grad());
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Var::from_op(Array::new(&y_shape, y), parents, move |g| {
            let gd = g.data();
            let mut out = vec![
                rx.then(|| Array::new(&xs, conv_forward(gd, wv.data(), &geo))),
                rw.then(|| Array::new(&w_shape, conv_backward_weight(gd, x.data(), &geo))),
            ];
            if has_bias {
                out.push(Some(Array::new(&[cout], bias_grad(gd, n, cout, pos))));
            }
            out
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 2-d convolution used as an independent reference.
    fn naive_conv2d(
        x: &Array<f64>,
        w: &Array<f64>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Array<f64> {
        let (n, cin, h, wd) = x.dims4();
        let (cout, cin_g, kh, kw) = w.dims4();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let cout_g = cout / groups;
        let mut y = vec![0.0; n * cout * oh * ow];
        for b in 0..n {
            for co in 0..cout {
                let g = co / cout_g;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..cin_g {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((b * cin + g * cin_g + ci) * h + iy as usize) * wd
                                        + ix as usize;
                                    let wi = ((co * cin_g + ci) * kh + ky) * kw + kx;
                                    s += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        y[((b * cout + co) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        Array::new(&[n, cout, oh, ow], y)
    }

    fn ramp(shape: &[usize], scale: f64) -> Array<f64> {
        let n: usize = shape.iter().product();
        Array::new(shape, (0..n).map(|i| ((i * 7919) % 23) as f64 * scale - 0.3).collect())
    }

    #[test]
    fn matches_naive_grouped_strided() {
        let x = ramp(&[2, 4, 7, 6], 0.1);
        let w = ramp(&[6, 2, 3, 3], 0.05);
        let y = Var::constant(x.clone()).conv(
            &Var::constant(w.clone()),
            None,
            ConvSpec::default().stride(2).padding(1).groups(2),
        );
        let r = naive_conv2d(&x, &w, 2, 1, 2);
        assert_eq!(y.shape(), r.shape());
        for (a, b) in y.value().data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn chunked_columns_match_direct_gather_and_scatter_is_adjoint() {
        let geo = Geometry {
            n: 1,
            cin: 2,
            cout: 1,
            groups: 1,
            in_sp: [3, 5, 7],
            k: [2, 3, 3],
            out_sp: [
                conv_out_len(3, 2, 1, 1, 1),
                conv_out_len(5, 3, 2, 2, 2),
                conv_out_len(7, 3, 2, 3, 2),
            ],
            stride: [1, 2, 2],
            pad: [1, 2, 3],
            dil: [1, 2, 2],
        };
        let x: Vec<f64> = (0..geo.cin * geo.in_pos()).map(|i| (i as f64 * 0.37).sin()).collect();
        let ks = geo.ksize();
        let op = geo.out_pos();
        let [_, oh, ow] = geo.out_sp;
        for (p0, pc) in [(0, op), (1, 5), (ow - 1, 2 * ow + 3), (op - 3, 3)] {
            let runs = ChunkRuns::new(&geo, p0, pc);
            let mut cols = vec![0.0; ks * pc];
            im2col(&geo, &x, &runs, &mut cols);
            let mut r = 0;
            for c in 0..2 {
                for a in 0..2 {
                    for b in 0..3 {
                        for e in 0..3 {
                            for j in 0..pc {
                                let p = p0 + j;
                                let (od, oy, ox) = (p / (oh * ow), p % (oh * ow) / ow, p % ow);
                                let zd = (od + a) as isize - 1;
                                let zh = (oy * 2 + b * 2) as isize - 2;
                                let zw = (ox * 2 + e * 2) as isize - 3;
                                let inside = (0..3).contains(&zd) && (0..5).contains(&zh) && (0..7).contains(&zw);
                                let want = if inside {
                                    x[c * geo.in_pos() + ((zd * 5 + zh) * 7 + zw) as usize]
                                } else {
                                    0.0
                                };
                                assert_eq!(cols[r * pc + j], want);
                            }
                            r += 1;
                        }
                    }
                }
            }
            let probe: Vec<f64> = (0..ks * pc).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut back = vec![0.0; x.len()];
            col2im(&geo, &probe, &runs, &mut back);
            let lhs: f64 = cols.iter().zip(&probe).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn pointwise_matches_naive() {
        let x = ramp(&[1, 3, 4, 5], 0.1);
        let w = ramp(&[2, 3, 1, 1], 0.2);
        let y = Var::constant(x.clone()).conv(&Var::constant(w.clone()), None, ConvSpec::default());
        let r = naive_conv2d(&x, &w, 1, 0, 1);
        for (a, b) in y.value().data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_layer_parameter_arithmetic() {
        // 3→8 channels, 3×3, bias: 8·3·9 + 8
        let w = Array::<f64>::zeros(&[8, 3, 3, 3]);
        assert_eq!(w.numel() + 8, 224);
    }

    #[test]
    fn transposed_is_adjoint_of_conv() {
        let spec = ConvSpec::default().stride(2).padding(1).groups(2);
        let w = ramp(&[4, 3, 4, 4], 0.07);
        let x = ramp(&[1, 4, 5, 6], 0.11);
        let y = Var::constant(x.clone()).conv_transpose(&Var::constant(w.clone()), None, spec);
        assert_eq!(y.shape(), &[1, 6, 10, 12]);
        let z = ramp(y.shape(), 0.13);
        let cz = Var::constant(z.clone()).conv(&Var::constant(w), None, spec);
        assert_eq!(cz.shape(), x.shape());
        let lhs: f64 = y.value().data().iter().zip(z.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = cz.value().data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv3d_shapes() {
        let x = Var::constant(Array::<f32>::zeros(&[1, 2, 5, 8, 8]));
        let w = Var::constant(Array::<f32>::zeros(&[4, 2, 3, 3, 3]));
        let y = x.conv(&w, None, ConvSpec::default().padding3([1, 1, 1]).stride3([1, 2, 2]));
        assert_eq!(y.shape(), &[1, 4, 5, 4, 4]);
        let wt = Var::constant(Array::<f32>::zeros(&[4, 2, 3, 4, 4]));
        let up = y.conv_transpose(
            &wt,
            None,
            ConvSpec::default().padding3([1, 1, 1]).stride3([1, 2, 2]),
        );
        assert_eq!(up.shape(), &[1, 2, 5, 8, 8]);
    }
}
