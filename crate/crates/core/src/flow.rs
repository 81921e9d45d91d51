//! Pinhole camera model, expected flow from known camera motion, and effective flow.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::grid::{BinaryMask, Grid};

/// Pinhole intrinsics. Pixel `(u, v)` has its center at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 120.0,
            fy: 120.0,
            cx: 79.5,
            cy: 59.5,
            width: 160,
            height: 120,
        }
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// True when the continuous coordinate rounds to a pixel inside the image.
    #[inline]
    pub fn in_bounds(&self, p: &Vector2<f64>) -> bool {
        p.x >= -0.5
            && p.y >= -0.5
            && p.x < self.width as f64 - 0.5
            && p.y < self.height as f64 - 0.5
    }

    /// Projection of a camera-frame point; `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if !(p.z > 0.0) {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Viewing ray through a pixel with unit depth (`z = 1`).
    #[inline]
    pub fn ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// Meters-to-pixels scale of a displacement parallel to the image plane at `depth`.
    pub fn pixels_per_meter(&self, depth: f64) -> Vector2<f64> {
        Vector2::new(self.fx / depth, self.fy / depth)
    }
}

/// `X = (u − cx)·Z/fx`, `Y = (v − cy)·Z/fy`, `Z = depth`.
pub fn back_project(pixel: &Vector2<f64>, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) || !depth.is_finite() || !k.in_bounds(pixel) {
        return Err(Error::InvalidDepth {
            u: pixel.x,
            v: pixel.y,
            depth,
        });
    }
    Ok(k.ray(pixel) * depth)
}

/// Per-pixel depth in meters with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Grid<f64>,
    pub valid: BinaryMask,
}

impl DepthMap {
    /// Validity is `value > 0` (and finite); invalid entries are stored as 0.
    pub fn from_values(mut values: Grid<f64>) -> Self {
        let valid = values.map(|&d| d > 0.0 && d.is_finite());
        for (d, &ok) in values.as_mut_slice().iter_mut().zip(valid.as_slice()) {
            if !ok {
                *d = 0.0;
            }
        }
        Self { values, valid }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> Option<f64> {
        if *self.valid.get(u, v) {
            Some(*self.values.get(u, v))
        } else {
            None
        }
    }

    /// Depth at a sub-pixel location by bilinear interpolation of inverse depth,
    /// which is exact on planar surfaces. Returns `None` if any of the four
    /// neighbors is invalid or they disagree by more than `max_ratio`.
    pub fn sample_bilinear(&self, p: &Vector2<f64>, max_ratio: f64) -> Option<f64> {
        let (w, h) = (self.width() as f64, self.height() as f64);
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1.0 && p.y <= h - 1.0) {
            return None;
        }
        let u0 = (p.x.floor() as usize).min(self.width().saturating_sub(2));
        let v0 = (p.y.floor() as usize).min(self.height().saturating_sub(2));
        let (au, av) = (p.x - u0 as f64, p.y - v0 as f64);
        let d = [
            self.at(u0, v0)?,
            self.at(u0 + 1, v0)?,
            self.at(u0, v0 + 1)?,
            self.at(u0 + 1, v0 + 1)?,
        ];
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.iter().cloned().fold(0.0, f64::max);
        if hi > lo * max_ratio {
            return None;
        }
        let inv =
            (1.0 - av) * ((1.0 - au) / d[0] + au / d[1]) + av * ((1.0 - au) / d[2] + au / d[3]);
        Some(1.0 / inv)
    }
}

/// Per-pixel 2-D displacement `(du, dv)` in pixels with a validity mask.
/// Invalid pixels carry zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub vectors: Grid<[f64; 2]>,
    pub valid: BinaryMask,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            vectors: Grid::new(width, height, [0.0; 2]),
            valid: Grid::new(width, height, true),
        }
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            vectors: Grid::new(width, height, [0.0; 2]),
            valid: Grid::new(width, height, false),
        }
    }

    /// Builds a field from raw vectors; non-finite entries become invalid.
    pub fn from_vectors(vectors: Grid<[f64; 2]>) -> Self {
        let valid = vectors.map(|f| f[0].is_finite() && f[1].is_finite());
        let mut out = Self { vectors, valid };
        out.zero_invalid();
        out
    }

    pub fn uniform(width: usize, height: usize, f: [f64; 2]) -> Self {
        Self {
            vectors: Grid::new(width, height, f),
            valid: Grid::new(width, height, true),
        }
    }

    pub fn width(&self) -> usize {
        self.vectors.width()
    }

    pub fn height(&self) -> usize {
        self.vectors.height()
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> Option<[f64; 2]> {
        if *self.valid.get(u, v) {
            Some(*self.vectors.get(u, v))
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, f: Option<[f64; 2]>) {
        match f {
            Some(f) => {
                self.vectors.set(u, v, f);
                self.valid.set(u, v, true);
            }
            None => {
                self.vectors.set(u, v, [0.0; 2]);
                self.valid.set(u, v, false);
            }
        }
    }

    /// Euclidean magnitude per pixel; 0 where invalid.
    pub fn magnitude(&self) -> Grid<f64> {
        self.vectors.map(|f| f[0].hypot(f[1]))
    }

    /// `{p : valid and ‖f(p)‖ > threshold}`.
    pub fn moving_region(&self, threshold: f64) -> BinaryMask {
        Grid::from_fn(self.width(), self.height(), |u, v| {
            self.at(u, v)
                .map(|f| f[0].hypot(f[1]) > threshold)
                .unwrap_or(false)
        })
    }

    /// Largest component magnitude over valid pixels.
    pub fn max_abs(&self) -> f64 {
        self.vectors
            .as_slice()
            .iter()
            .zip(self.valid.as_slice())
            .filter(|(_, &ok)| ok)
            .map(|(f, _)| f[0].abs().max(f[1].abs()))
            .fold(0.0, f64::max)
    }

    fn zero_invalid(&mut self) {
        for (f, &ok) in self
            .vectors
            .as_mut_slice()
            .iter_mut()
            .zip(self.valid.as_slice())
        {
            if !ok {
                *f = [0.0; 2];
            }
        }
    }

    /// Component-wise median over the valid pixels of a `(2r+1)²` window.
    /// Invalid pixels stay invalid; `radius = 0` returns a copy.
    pub fn median_filtered(&self, radius: usize) -> FlowField {
        self.filter_with(radius, |_, _| true)
    }

    /// Like [`FlowField::median_filtered`], but a window pixel only takes part
    /// when its depth is within `depth_tol` of the center's, so flow is not
    /// mixed across depth edges. Pixels without depth use the plain window.
    pub fn median_filtered_guided(
        &self,
        radius: usize,
        depth: &DepthMap,
        depth_tol: f64,
    ) -> FlowField {
        self.filter_with(radius, |p, q| {
            match (depth.at(p.0, p.1), depth.at(q.0, q.1)) {
                (Some(zp), Some(zq)) => (zp - zq).abs() <= depth_tol,
                (None, _) => true,
                (Some(_), None) => false,
            }
        })
    }

    fn filter_with(
        &self,
        radius: usize,
        include: impl Fn((usize, usize), (usize, usize)) -> bool,
    ) -> FlowField {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let mut out = self.clone();
        let mut us = Vec::with_capacity((2 * radius + 1).pow(2));
        let mut vs = Vec::with_capacity((2 * radius + 1).pow(2));
        for v in 0..self.height() {
            for u in 0..self.width() {
                if !*self.valid.get(u, v) {
                    continue;
                }
                us.clear();
                vs.clear();
                for dv in -r..=r {
                    for du in -r..=r {
                        let (qu, qv) = (u as i64 + du, v as i64 + dv);
                        if self.valid.get_signed(qu, qv) == Some(&true)
                            && include((u, v), (qu as usize, qv as usize))
                        {
                            let f = self.vectors.get(qu as usize, qv as usize);
                            us.push(f[0]);
                            vs.push(f[1]);
                        }
                    }
                }
                out.vectors.set(u, v, [median(&mut us), median(&mut vs)]);
            }
        }
        out
    }
}

fn median(xs: &mut [f64]) -> f64 {
    let mid = xs.len() / 2;
    let (_, m, _) = xs.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let hi = *m;
    if xs.len() % 2 == 1 {
        hi
    } else {
        let lo = xs[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Flow a static scene would show when the camera moves by `cam_motion`
/// (camera-frame coordinates at t−1 to camera-frame coordinates at t).
/// Pixels with invalid depth, or whose moved point falls behind the camera
/// or outside the image, are invalid.
pub fn expected_flow(depth_prev: &DepthMap, cam_motion: &Pose, k: &Intrinsics) -> FlowField {
    let (w, h) = (depth_prev.width(), depth_prev.height());
    let mut out = FlowField::invalid(w, h);
    for v in 0..h {
        for u in 0..w {
            let Some(z) = depth_prev.at(u, v) else {
                continue;
            };
            let pixel = Vector2::new(u as f64, v as f64);
            let p = k.ray(&pixel) * z;
            let moved = cam_motion.transform_point(&p);
            if let Some(proj) = k.project(&moved) {
                if k.in_bounds(&proj) {
                    out.set(u, v, Some([proj.x - pixel.x, proj.y - pixel.y]));
                }
            }
        }
    }
    out
}

/// `X = O − E`, valid only where both inputs are valid.
pub fn effective_flow(observed: &FlowField, expected: &FlowField) -> Result<FlowField> {
    observed.vectors.same_dims(&expected.vectors)?;
    let (w, h) = (observed.width(), observed.height());
    let mut out = FlowField::invalid(w, h);
    for v in 0..h {
        for u in 0..w {
            if let (Some(o), Some(e)) = (observed.at(u, v), expected.at(u, v)) {
                out.set(u, v, Some([o[0] - e[0], o[1] - e[1]]));
            }
        }
    }
    Ok(out)
}
