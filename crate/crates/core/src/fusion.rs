//! GridNet fusion of the warped candidates into the intermediate frame.
//!
//! Rows run at `2H`, `H` and `H/2` (scales −1, 0, 1). The first two
//! columns pass information downwards with stride-2 convolutions, the last
//! two upwards with bilinear up-sampling. The result is read from the
//! `H` row, so the top row's up-sampling half would never reach the output
//! and is not built.

use stmfnet_tensor::nn::{Conv, Init, PRelu};
use stmfnet_tensor::{ConvSpec, Graph, ParamBuilder, Scalar, Var};

use crate::error::{dim_err, Error, Result};

pub const GRID_ROWS: usize = 3;
pub const GRID_COLS: usize = 4;
/// Row holding the output resolution.
pub const OUTPUT_ROW: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridNetConfig {
    /// Channel width of each row, top (`2H`) to bottom (`H/2`).
    pub widths: [usize; GRID_ROWS],
    /// Input channels fed into each row; 0 means the row gets no input.
    pub inputs: [usize; GRID_ROWS],
    pub out_channels: usize,
}

impl GridNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inputs[OUTPUT_ROW] == 0 {
            return Err(Error::Config("the output row of the fusion grid needs an input".into()));
        }
        if self.widths.contains(&0) || self.out_channels == 0 {
            return Err(Error::Config(format!("invalid grid widths {:?}", self.widths)));
        }
        Ok(())
    }

    fn has_row(&self, r: usize) -> bool {
        // The top row only matters when it is fed; lower rows always
        // receive the down-sampled signal.
        r > 0 || self.inputs[0] > 0
    }
}

/// `PReLU → conv → PReLU → conv`, the basic GridNet unit.
#[derive(Clone, Debug)]
struct Unit<T: Scalar> {
    act: [PRelu<T>; 2],
    conv: [Conv<T>; 2],
}

impl<T: Scalar> Unit<T> {
    fn new(pb: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize, stride: usize) -> Self {
        let mut s = pb.sub(name);
        let pad = ConvSpec::default().padding(1);
        Self {
            act: [PRelu::new(&mut s, "act0", cin), PRelu::new(&mut s, "act1", cout)],
            conv: [
                Conv::new(&mut s, "conv0", cin, cout, &[3, 3], pad.stride(stride), Init::FanIn),
                Conv::new(&mut s, "conv1", cout, cout, &[3, 3], pad, Init::FanIn),
            ],
        }
    }

    fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Var<T> {
        let y = self.conv[0].forward(g, &self.act[0].forward(g, x));
        self.conv[1].forward(g, &self.act[1].forward(g, &y))
    }
}

#[derive(Clone, Debug)]
pub struct GridNet<T: Scalar> {
    cfg: GridNetConfig,
    /// Input stems, one per fed row.
    stems: [Option<Unit<T>>; GRID_ROWS],
    /// `lateral[c][r]` moves row `r` from column `c` to `c + 1`.
    lateral: Vec<[Option<Unit<T>>; GRID_ROWS]>,
    /// `down[c][r]` feeds row `r + 1` from row `r` in column `c`.
    down: Vec<[Option<Unit<T>>; GRID_ROWS - 1]>,
    /// `up[c][r]` feeds row `r` from row `r + 1` in column `c`.
    up: Vec<[Option<Unit<T>>; GRID_ROWS - 1]>,
    head: (PRelu<T>, Conv<T>),
}

impl<T: Scalar> GridNet<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, cfg: &GridNetConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.widths;
        let half = GRID_COLS / 2;
        let stems = std::array::from_fn(|r| {
            (cfg.inputs[r] > 0).then(|| Unit::new(pb, &format!("stem{r}"), cfg.inputs[r], w[r], 1))
        });
        let mut lateral = Vec::with_capacity(GRID_COLS - 1);
        for c in 0..GRID_COLS - 1 {
            lateral.push(std::array::from_fn(|r| {
                // Columns past the middle only matter at and below the output row.
                let live = cfg.has_row(r) && (c + 1 < half || r >= OUTPUT_ROW);
                live.then(|| Unit::new(pb, &format!("lateral{c}_{r}"), w[r], w[r], 1))
            }));
        }
        let mut down = Vec::with_capacity(half);
        for c in 0..half {
            down.push(std::array::from_fn(|r| {
                cfg.has_row(r).then(|| Unit::new(pb, &format!("down{c}_{r}"), w[r], w[r + 1], 2))
            }));
        }
        let mut up = Vec::with_capacity(half);
        for c in half..GRID_COLS {
            up.push(std::array::from_fn(|r| {
                (r >= OUTPUT_ROW).then(|| Unit::new(pb, &format!("up{c}_{r}"), w[r + 1], w[r], 1))
            }));
        }
        let mut hp = pb.sub("head");
        let head = (
            PRelu::new(&mut hp, "act", w[OUTPUT_ROW]),
            Conv::new(
                &mut hp,
                "conv",
                w[OUTPUT_ROW],
                cfg.out_channels,
                &[3, 3],
                ConvSpec::default().padding(1),
                Init::FanIn,
            ),
        );
        Ok(Self {
            cfg: cfg.clone(),
            stems,
            lateral,
            down,
            up,
            head,
        })
    }

    pub fn config(&self) -> &GridNetConfig {
        &self.cfg
    }

    /// Fuses per-row inputs (`None` where the row is unfed). Output is at
    /// the `H` row resolution.
    pub fn forward(&self, g: &Graph<T>, inputs: [Option<&Var<T>>; GRID_ROWS]) -> Result<Var<T>> {
        let Some(mid) = inputs[OUTPUT_ROW] else {
            return dim_err("fusion input for the output row is missing");
        };
        let (b, h, w) = (mid.shape()[0], mid.shape()[2], mid.shape()[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return dim_err(format!("fusion input {h}×{w} must be even"));
        }
        let expect = [(2 * h, 2 * w), (h, w), (h / 2, w / 2)];
        for r in 0..GRID_ROWS {
            match (inputs[r], self.cfg.inputs[r]) {
                (None, 0) => {}
                (Some(x), c) if c > 0 => {
                    let s = x.shape();
                    if s.len() != 4 || s[0] != b || s[1] != c || (s[2], s[3]) != expect[r] {
                        return dim_err(format!(
                            "fusion row {r} expects ({b}, {c}, {}, {}), got {s:?}",
                            expect[r].0, expect[r].1
                        ));
                    }
                }
                (got, c) => {
                    return dim_err(format!(
                        "fusion row {r} configured for {c} channels but input present = {}",
                        got.is_some()
                    ))
                }
            }
        }
        let half = GRID_COLS / 2;
        let mut state: [Option<Var<T>>; GRID_ROWS] = Default::default();
        for c in 0..half {
            for r in 0..GRID_ROWS {
                let own = if c == 0 {
                    match (&self.stems[r], inputs[r]) {
                        (Some(s), Some(x)) => Some(s.forward(g, x)),
                        _ => None,
                    }
                } else {
                    match (&self.lateral[c - 1][r], &state[r]) {
                        (Some(l), Some(x)) => Some(x.add(&l.forward(g, x))),
                        _ => None,
                    }
                };
                let from_above = if r > 0 {
                    match (&self.down[c][r - 1], &state[r - 1]) {
                        (Some(d), Some(x)) => Some(d.forward(g, x)),
                        _ => None,
                    }
                } else {
                    None
                };
                state[r] = match (own, from_above) {
                    (Some(a), Some(b)) => Some(a.add(&b)),
                    (a, b) => a.or(b),
                };
            }
        }
        for c in half..GRID_COLS {
            for r in (OUTPUT_ROW..GRID_ROWS).rev() {
                let x = state[r].clone().expect("rows at and below the output are live");
                let own = match &self.lateral[c - 1][r] {
                    Some(l) => x.add(&l.forward(g, &x)),
                    None => x,
                };
                state[r] = Some(if r + 1 < GRID_ROWS {
                    let below = state[r + 1].as_ref().expect("live row").upsample_bilinear2x();
                    let u = self.up[c - half][r].as_ref().expect("up unit");
                    own.add(&u.forward(g, &below))
                } else {
                    own
                });
            }
        }
        let out = state[OUTPUT_ROW].take().expect("output row");
        Ok(self.head.1.forward(g, &self.head.0.forward(g, &out)))
    }
}
