//! Flat torus `(R/Z)^d`, the trigonometric density family and the diffusion
//! it induces.
//!
//! The density `f(x) = 1 + sum_j amp_j cos(2 pi <freq_j, x> + phase_j)` drives
//! the generator `f^{-2/d} (grad log f . grad phi + Laplacian(phi) / 2)`, i.e.
//! `b = f^{-2/d} grad log f` and `a = f^{-2/d} I / 2`. Its reversible measure
//! has density proportional to `f^{2 + 2/d}`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::MetricMatrix;
use crate::{Error, Result, SCHEMA_VERSION};

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Minimal-image representative of a coordinate difference, in `(-1/2, 1/2]`.
#[inline]
pub fn min_image_coord(dx: f64) -> f64 {
    if dx.abs() < 1.0 {
        return if dx > 0.5 {
            dx - 1.0
        } else if dx <= -0.5 {
            dx + 1.0
        } else {
            dx
        };
    }
    let r = dx - dx.floor();
    if r > 0.5 {
        r - 1.0
    } else {
        r
    }
}

/// Point of the torus with coordinates in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub coords: Vec<f64>,
}

impl TorusPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self {
            coords: coords.into_iter().map(wrap).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// `y - x` realized on the torus, each coordinate in `(-1/2, 1/2]`.
pub fn min_image(x: &TorusPoint, y: &TorusPoint) -> Vec<f64> {
    x.coords
        .iter()
        .zip(&y.coords)
        .map(|(a, b)| min_image_coord(b - a))
        .collect()
}

/// Euclidean norm of [`min_image`].
pub fn torus_distance(x: &TorusPoint, y: &TorusPoint) -> f64 {
    dist_sq_slices(&x.coords, &y.coords).sqrt()
}

#[inline]
pub(crate) fn dist_sq_slices(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = min_image_coord(b - a);
            d * d
        })
        .sum()
}

/// One term `amp * cos(2 pi <freq, x> + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub amp: f64,
    pub freq: Vec<i64>,
    pub phase: f64,
}

/// Strictly positive trigonometric density on the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    pub dim: usize,
    pub modes: Vec<Mode>,
    /// Lower bound `1 - sum |amp|` on `f`.
    pub margin: f64,
}

#[derive(Serialize, Deserialize)]
struct DensityJson {
    #[serde(default = "schema_default")]
    schema: u32,
    dim: usize,
    #[serde(default)]
    modes: Vec<Mode>,
}

fn schema_default() -> u32 {
    SCHEMA_VERSION
}

impl DensityModel {
    pub fn new(dim: usize, modes: Vec<Mode>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        for m in &modes {
            if m.freq.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "mode frequency {:?} in dimension {dim}",
                    m.freq
                )));
            }
            if !m.amp.is_finite() || !m.phase.is_finite() {
                return Err(Error::InvalidParameter("non-finite mode".into()));
            }
        }
        let total: f64 = modes.iter().map(|m| m.amp.abs()).sum();
        if total >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "sum of |amp| = {total} must be below 1"
            )));
        }
        Ok(Self {
            dim,
            modes,
            margin: 1.0 - total,
        })
    }

    /// The constant density `f = 1`.
    pub fn uniform(dim: usize) -> Self {
        Self {
            dim,
            modes: Vec::new(),
            margin: 1.0,
        }
    }

    /// `f = 1 + amp cos(2 pi x_1)`.
    pub fn one_mode(dim: usize, amp: f64) -> Result<Self> {
        let mut freq = vec![0; dim];
        freq[0] = 1;
        Self::new(
            dim,
            vec![Mode {
                amp,
                freq,
                phase: 0.0,
            }],
        )
    }

    /// Rejection envelope `1 + sum |amp|`.
    pub fn sup(&self) -> f64 {
        1.0 + self.modes.iter().map(|m| m.amp.abs()).sum::<f64>()
    }

    fn phase_arg(m: &Mode, x: &[f64]) -> f64 {
        2.0 * PI
            * m.freq
                .iter()
                .zip(x)
                .map(|(&k, &xi)| k as f64 * xi)
                .sum::<f64>()
            + m.phase
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        1.0 + self
            .modes
            .iter()
            .map(|m| m.amp * Self::phase_arg(m, x).cos())
            .sum::<f64>()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for m in &self.modes {
            let s = -m.amp * Self::phase_arg(m, x).sin() * 2.0 * PI;
            for (gi, &k) in g.iter_mut().zip(&m.freq) {
                *gi += s * k as f64;
            }
        }
        g
    }

    /// Row-major Hessian of `f`.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut h = vec![0.0; d * d];
        for m in &self.modes {
            let c = -m.amp * Self::phase_arg(m, x).cos() * 4.0 * PI * PI;
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] += c * (m.freq[i] * m.freq[j]) as f64;
                }
            }
        }
        h
    }

    /// Verifies `f >= margin` on a grid with `per_axis^d` points.
    pub fn check_positive(&self, per_axis: usize) -> Result<()> {
        let grid = QuadGrid::new(self.dim, per_axis);
        let mut x = vec![0.0; self.dim];
        for idx in 0..grid.len() {
            grid.center(idx, &mut x);
            let v = self.value(&x);
            if v < self.margin - 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "density {v} below margin at {x:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DensityJson {
            schema: SCHEMA_VERSION,
            dim: self.dim,
            modes: self.modes.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: DensityJson = serde_json::from_str(s)?;
        Self::new(j.dim, j.modes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Serialize for DensityModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DensityJson {
            schema: SCHEMA_VERSION,
            dim: self.dim,
            modes: self.modes.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = DensityJson::deserialize(d)?;
        DensityModel::new(j.dim, j.modes).map_err(serde::de::Error::custom)
    }
}

/// Exact `grad f / f`.
pub fn grad_log_density(f: &DensityModel, x: &[f64]) -> Vec<f64> {
    let v = f.value(x);
    f.grad(x).into_iter().map(|g| g / v).collect()
}

/// `(b, a)` with `b = f^{-2/d} grad log f` and `a = f^{-2/d} I / 2`.
pub fn diffusion_coeffs(f: &DensityModel, x: &[f64]) -> (Vec<f64>, MetricMatrix) {
    let (b, scale) = drift_and_scale(f, x);
    let a = MetricMatrix::scaled_identity(f.dim, 0.5 * scale)
        .expect("conformal factor of a positive density is positive");
    (b, a)
}

/// `(b, f^{-2/d})` without building the matrix.
pub(crate) fn drift_and_scale(f: &DensityModel, x: &[f64]) -> (Vec<f64>, f64) {
    let v = f.value(x);
    let scale = v.powf(-2.0 / f.dim as f64);
    let b = f.grad(x).into_iter().map(|g| scale * g / v).collect();
    (b, scale)
}

/// Midpoint grid with `per_axis^d` cells of equal weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadGrid {
    pub dim: usize,
    pub per_axis: usize,
}

impl QuadGrid {
    pub fn new(dim: usize, per_axis: usize) -> Self {
        Self { dim, per_axis }
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Writes the center of cell `idx` (first axis slowest) into `out`.
    pub fn center(&self, idx: usize, out: &mut [f64]) {
        let m = self.per_axis;
        let mut r = idx;
        for slot in out.iter_mut().rev() {
            *slot = ((r % m) as f64 + 0.5) / m as f64;
            r /= m;
        }
    }

    pub fn centers(&self) -> Vec<TorusPoint> {
        (0..self.len())
            .map(|i| {
                let mut c = vec![0.0; self.dim];
                self.center(i, &mut c);
                TorusPoint { coords: c }
            })
            .collect()
    }
}

/// Diffusion target `mu~ = Z f^{2 + 2/d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMeasure {
    pub model: DensityModel,
    pub exponent: f64,
    pub z: f64,
    pub grid_per_axis: usize,
}

impl TargetMeasure {
    pub fn density(&self, x: &[f64]) -> f64 {
        self.z * self.model.value(x).powf(self.exponent)
    }
}

/// Computes `Z = 1 / avg(f^{2+2/d})` on a midpoint grid.
pub fn normalize_target(f: &DensityModel, per_axis: usize) -> TargetMeasure {
    let exponent = 2.0 + 2.0 / f.dim as f64;
    let grid = QuadGrid::new(f.dim, per_axis);
    let mut x = vec![0.0; f.dim];
    let mut acc = crate::numeric::KahanSum::default();
    for idx in 0..grid.len() {
        grid.center(idx, &mut x);
        acc.add(f.value(&x).powf(exponent));
    }
    let avg = acc.value() * grid.weight();
    TargetMeasure {
        model: f.clone(),
        exponent,
        z: 1.0 / avg,
        grid_per_axis: per_axis,
    }
}

/// `n` i.i.d. draws from `f` by rejection against the uniform proposal.
pub fn sample(f: &DensityModel, n: usize, seed: u64) -> Vec<TorusPoint> {
    sample_stream(f, n, seed, 0)
}

/// As [`sample`], drawing from stream `stream` of the generator seeded by `seed`.
pub fn sample_stream(f: &DensityModel, n: usize, seed: u64, stream: u64) -> Vec<TorusPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let envelope = f.sup();
    let mut out = Vec::with_capacity(n);
    let mut x = vec![0.0; f.dim];
    while out.len() < n {
        for xi in x.iter_mut() {
            *xi = rng.gen::<f64>();
        }
        let u: f64 = rng.gen();
        if u * envelope <= f.value(&x) {
            out.push(TorusPoint { coords: x.clone() });
        }
    }
    out
}

/// Writes points as CSV with a `x0,x1,...` header.
pub fn write_points_csv<W: Write>(points: &[TorusPoint], dim: usize, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record((0..dim).map(|i| format!("x{i}")))?;
    for p in points {
        wr.write_record(p.coords.iter().map(|c| format!("{c:.17e}")))?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a point CSV written by [`write_points_csv`]; returns `(dim, points)`.
pub fn read_points_csv<R: Read>(r: R) -> Result<(usize, Vec<TorusPoint>)> {
    let mut rd = csv::Reader::from_reader(r);
    let dim = rd.headers()?.len();
    let mut pts = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != dim {
            return Err(Error::Parse(format!("row with {} columns, expected {dim}", rec.len())));
        }
        let coords = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        pts.push(TorusPoint::new(coords));
    }
    Ok((dim, pts))
}
