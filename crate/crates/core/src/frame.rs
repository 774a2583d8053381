//! Plain image-domain containers and their tensor conversions.

use std::path::Path;

use stmfnet_tensor::{Array, Scalar};

use crate::error::{Error, Result};

/// RGB image, row-major `H×W×3`, nominal range `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

fn check_finite(what: &str, data: &[f32]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} contains non-finite values")))
    }
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("empty frame {height}×{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "{} values for a {height}×{width}×3 frame",
                data.len()
            )));
        }
        check_finite("frame", &data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width * 3]).expect("valid constant frame")
    }

    /// Builds a frame from a per-pixel function returning RGB.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data).expect("from_fn produced an invalid frame")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Frame {
        Frame {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_array<T: Scalar>(&self) -> Array<T> {
        Self::stack(std::slice::from_ref(self))
    }

    /// `(B, 3, H, W)` tensor of equally sized frames.
    pub fn stack<T: Scalar>(frames: &[Frame]) -> Array<T> {
        let (h, w) = (frames[0].height, frames[0].width);
        let mut out = Vec::with_capacity(frames.len() * 3 * h * w);
        for f in frames {
            assert!(f.height == h && f.width == w, "stacked frames differ in size");
            for c in 0..3 {
                out.extend(f.data.iter().skip(c).step_by(3).map(|&v| T::from_f64_lossy(v as f64)));
            }
        }
        Array::new(&[frames.len(), 3, h, w], out)
    }

    /// Extracts item `b` of a `(B, 3, H, W)` tensor.
    pub fn from_array<T: Scalar>(a: &Array<T>, b: usize) -> Result<Frame> {
        let &[n, 3, h, w] = a.shape() else {
            return Err(Error::Dimension(format!("expected (B,3,H,W), got {:?}", a.shape())));
        };
        if b >= n {
            return Err(Error::Dimension(format!("batch index {b} out of {n}")));
        }
        let src = &a.data()[b * 3 * h * w..(b + 1) * 3 * h * w];
        let mut data = vec![0.0f32; h * w * 3];
        for c in 0..3 {
            for i in 0..h * w {
                data[i * 3 + c] = src[c * h * w + i].as_f64() as f32;
            }
        }
        Frame::new(h, w, data)
    }

    pub fn load_png(path: &Path) -> Result<Frame> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Frame::new(h as usize, w as usize, data)
    }

    /// Quantises to 8 bits (values are clamped to `[0, 1]` first).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer matches frame size");
        buf.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

/// Per-pixel displacement `(dx, dy)` in pixels, stored interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 2 {
            return Err(Error::Dimension(format!(
                "{} values for a {height}×{width}×2 flow",
                data.len()
            )));
        }
        check_finite("flow", &data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::uniform(height, width, 0.0, 0.0)
    }

    pub fn uniform(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        let data = (0..height * width).flat_map(|_| [dx, dy]).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    pub fn set(&mut self, y: usize, x: usize, d: (f32, f32)) {
        let i = (y * self.width + x) * 2;
        self.data[i] = d.0;
        self.data[i + 1] = d.1;
    }

    /// Mean displacement over all pixels.
    pub fn mean(&self) -> (f64, f64) {
        let n = (self.height * self.width).max(1) as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for p in self.data.chunks_exact(2) {
            sx += p[0] as f64;
            sy += p[1] as f64;
        }
        (sx / n, sy / n)
    }

    /// Mean per-pixel displacement length.
    pub fn mean_magnitude(&self) -> f64 {
        let n = (self.height * self.width).max(1) as f64;
        self.data.chunks_exact(2).map(|p| (p[0] as f64).hypot(p[1] as f64)).sum::<f64>() / n
    }

    /// `(1, 2, H, W)` tensor.
    pub fn to_array<T: Scalar>(&self) -> Array<T> {
        let n = self.height * self.width;
        let mut out = Vec::with_capacity(2 * n);
        for c in 0..2 {
            out.extend(self.data.iter().skip(c).step_by(2).map(|&v| T::from_f64_lossy(v as f64)));
        }
        Array::new(&[1, 2, self.height, self.width], out)
    }

    pub fn from_array<T: Scalar>(a: &Array<T>, b: usize) -> Result<FlowField> {
        let &[n, 2, h, w] = a.shape() else {
            return Err(Error::Dimension(format!("expected (B,2,H,W), got {:?}", a.shape())));
        };
        if b >= n {
            return Err(Error::Dimension(format!("batch index {b} out of {n}")));
        }
        let src = &a.data()[b * 2 * h * w..(b + 1) * 2 * h * w];
        let mut data = vec![0.0f32; h * w * 2];
        for c in 0..2 {
            for i in 0..h * w {
                data[i * 2 + c] = src[c * h * w + i].as_f64() as f32;
            }
        }
        FlowField::new(h, w, data)
    }
}

/// `N` weighted displacements per pixel, each array row-major `H×W×N`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiFlow {
    height: usize,
    width: usize,
    n: usize,
    alpha: Vec<f32>,
    beta: Vec<f32>,
    weights: Vec<f32>,
}

impl MultiFlow {
    pub fn new(
        height: usize,
        width: usize,
        n: usize,
        alpha: Vec<f32>,
        beta: Vec<f32>,
        weights: Vec<f32>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("a multi-flow needs N ≥ 1".into()));
        }
        let len = height * width * n;
        if alpha.len() != len || beta.len() != len || weights.len() != len {
            return Err(Error::Dimension(format!(
                "multi-flow arrays must hold {height}×{width}×{n} values"
            )));
        }
        check_finite("alpha", &alpha)?;
        check_finite("beta", &beta)?;
        check_finite("weights", &weights)?;
        Ok(Self {
            height,
            width,
            n,
            alpha,
            beta,
            weights,
        })
    }

    /// The same `N` offsets and weights at every pixel.
    pub fn uniform(height: usize, width: usize, offsets: &[(f32, f32)], weights: &[f32]) -> Result<Self> {
        let n = offsets.len();
        if weights.len() != n {
            return Err(Error::Dimension("one weight per offset required".into()));
        }
        let px = height * width;
        let alpha = (0..px).flat_map(|_| offsets.iter().map(|o| o.0)).collect();
        let beta = (0..px).flat_map(|_| offsets.iter().map(|o| o.1)).collect();
        let w = (0..px).flat_map(|_| weights.iter().copied()).collect();
        Self::new(height, width, n, alpha, beta, w)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f32] {
        &self.beta
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    fn channel_first<T: Scalar>(&self, v: &[f32]) -> Array<T> {
        let px = self.height * self.width;
        let mut out = vec![T::zero(); v.len()];
        for p in 0..px {
            for i in 0..self.n {
                out[i * px + p] = T::from_f64_lossy(v[p * self.n + i] as f64);
            }
        }
        Array::new(&[1, self.n, self.height, self.width], out)
    }

    /// `(alpha, beta, weights)` as `(1, N, H, W)` tensors.
    pub fn to_arrays<T: Scalar>(&self) -> (Array<T>, Array<T>, Array<T>) {
        (
            self.channel_first(&self.alpha),
            self.channel_first(&self.beta),
            self.channel_first(&self.weights),
        )
    }

    pub fn from_arrays<T: Scalar>(
        alpha: &Array<T>,
        beta: &Array<T>,
        weights: &Array<T>,
        b: usize,
    ) -> Result<MultiFlow> {
        let &[_, n, h, w] = alpha.shape() else {
            return Err(Error::Dimension("expected (B,N,H,W) multi-flow tensors".into()));
        };
        let px = h * w;
        let pick = |a: &Array<T>| -> Vec<f32> {
            let src = &a.data()[b * n * px..(b + 1) * n * px];
            let mut out = vec![0.0f32; n * px];
            for i in 0..n {
                for p in 0..px {
                    out[p * n + i] = src[i * px + p].as_f64() as f32;
                }
            }
            out
        };
        MultiFlow::new(h, w, n, pick(alpha), pick(beta), pick(weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_tensor_round_trip() {
        let f = Frame::from_fn(3, 4, |y, x| [y as f32 * 0.1, x as f32 * 0.2, 0.5]);
        let a: Array<f32> = f.to_array();
        assert_eq!(a.shape(), &[1, 3, 3, 4]);
        assert_eq!(Frame::from_array(&a, 0).unwrap(), f);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Frame::new(1, 1, vec![0.0, f32::NAN, 0.0]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(Frame::new(1, 2, vec![0.0; 3]), Err(Error::Dimension(_))));
    }

    #[test]
    fn png_round_trip_is_lossless_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let f = Frame::from_fn(5, 7, |y, x| {
            [((y * 7 + x) * 5) as f32 / 255.0, (x * 30) as f32 / 255.0, 1.0]
        });
        f.save_png(&path).unwrap();
        let g = Frame::load_png(&path).unwrap();
        assert_eq!(f.to_rgb8(), g.to_rgb8());
    }

    #[test]
    fn multiflow_round_trip() {
        let m = MultiFlow::uniform(2, 3, &[(1.0, 0.0), (3.0, -1.0)], &[0.5, 0.5]).unwrap();
        let (a, b, w) = m.to_arrays::<f64>();
        assert_eq!(MultiFlow::from_arrays(&a, &b, &w, 0).unwrap(), m);
    }
}
