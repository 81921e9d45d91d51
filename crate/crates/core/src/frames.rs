//! Body-frame sampling on moving pixels, tracking to the next frame, and BFIF
//! computation.
//!
//! The space frame `{s}` is the camera frame at t−1. Frames are built from
//! triplets of back-projected pixels at t−1, advected to t by the observed
//! flow, back-projected with the depth at t and re-expressed in `{s}` through
//! the inverse camera motion.

use nalgebra::{Vector2, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{back_project, DepthMap, FlowField, Intrinsics};
use crate::geometry::{frame_from_triplet, spatial_twist, BodyFrame, Pose, Twist};
use crate::grid::connected_components;

/// Largest ratio between the four depth samples used for sub-pixel depth lookup.
const DEPTH_CONSISTENCY_RATIO: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Number of candidate pixels drawn from the moving region.
    pub n_samples: usize,
    /// Largest pixel distance between any two members of a triplet.
    pub d_a: f64,
    /// Smallest pixel distance between any two members of a triplet; tiny
    /// triangles turn flow noise into large twist errors.
    pub min_separation: f64,
    /// Effective-flow magnitude (px) above which a pixel counts as moving.
    pub tau_motion: f64,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 90,
            d_a: 40.0,
            min_separation: 5.0,
            tau_motion: 0.2,
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 3
            || !(self.d_a > 0.0)
            || !(0.0..self.d_a).contains(&self.min_separation)
            || !(self.tau_motion > 0.0)
        {
            return Err(Error::Config(format!("invalid sampler config {self:?}")));
        }
        Ok(())
    }
}

/// A body frame at t−1 and the same frame tracked to t, both in `{s}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePair {
    pub prev: BodyFrame,
    pub curr: BodyFrame,
    /// Source pixels at t−1; the first is the frame origin.
    pub pixels: [(usize, usize); 3],
}

impl FramePair {
    pub fn origin(&self) -> (usize, usize) {
        self.pixels[0]
    }
}

/// Draws up to `n_samples` pixels uniformly without replacement from
/// `{p : X valid, ‖X(p)‖ > tau_motion}`.
pub fn sample_motion_pixels(x: &FlowField, cfg: &SamplerConfig) -> Vec<(usize, usize)> {
    let candidates = x.moving_region(cfg.tau_motion).positives();
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let amount = cfg.n_samples.min(candidates.len());
    index::sample(&mut rng, candidates.len(), amount)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

fn pixel_dist(a: (usize, usize), b: (usize, usize)) -> f64 {
    let du = a.0 as f64 - b.0 as f64;
    let dv = a.1 as f64 - b.1 as f64;
    du.hypot(dv)
}

fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

struct Tracker<'a> {
    o: &'a FlowField,
    depth_prev: &'a DepthMap,
    depth_curr: &'a DepthMap,
    to_space: Pose,
    k: &'a Intrinsics,
}

impl Tracker<'_> {
    fn prev_point(&self, p: (usize, usize)) -> Option<Vector3<f64>> {
        let d = self.depth_prev.at(p.0, p.1)?;
        back_project(&Vector2::new(p.0 as f64, p.1 as f64), d, self.k).ok()
    }

    /// Advected pixel at t and its back-projection expressed in `{s}`.
    fn curr_point(&self, p: (usize, usize)) -> Option<(Vector2<f64>, Vector3<f64>)> {
        let f = self.o.at(p.0, p.1)?;
        let q = Vector2::new(p.0 as f64 + f[0], p.1 as f64 + f[1]);
        let d = self
            .depth_curr
            .sample_bilinear(&q, DEPTH_CONSISTENCY_RATIO)?;
        let pc = back_project(&q, d, self.k).ok()?;
        Some((q, self.to_space.transform_point(&pc)))
    }
}

/// Groups sampled pixels into disjoint triplets and builds the frame pair for
/// each. Triplets are formed greedily: each unused pixel in sample order
/// takes its nearest unused neighbor, then the nearest pixel that keeps every
/// pairwise distance within `[min_separation, d_a]`, stays in the origin's
/// 8-connected piece of the moving region and spans a non-degenerate triangle.
/// Triplets that cannot be back-projected or tracked are skipped.
#[allow(clippy::too_many_arguments)]
pub fn build_frame_pairs(
    pixels: &[(usize, usize)],
    x: &FlowField,
    o: &FlowField,
    depth_prev: &DepthMap,
    depth_curr: &DepthMap,
    cam_motion: &Pose,
    k: &Intrinsics,
    cfg: &SamplerConfig,
) -> Vec<FramePair> {
    let tracker = Tracker {
        o,
        depth_prev,
        depth_curr,
        to_space: cam_motion.inverse(),
        k,
    };
    // Pixels that are not moving in X or cannot be back-projected never enter a triplet.
    let usable: Vec<Option<Vector3<f64>>> = pixels
        .iter()
        .map(|&p| {
            let moving = x
                .at(p.0, p.1)
                .map(|f| f[0].hypot(f[1]) > cfg.tau_motion)
                .unwrap_or(false);
            if moving {
                tracker.prev_point(p)
            } else {
                None
            }
        })
        .collect();
    let (pieces, _) = connected_components(&x.moving_region(cfg.tau_motion), true);
    let mut used: Vec<bool> = usable.iter().map(|p| p.is_none()).collect();
    let mut pairs = Vec::new();

    for i in 0..pixels.len() {
        if used[i] {
            continue;
        }
        let Some(p0) = usable[i] else { continue };
        let nearest = |exclude: &[usize], ok: &dyn Fn(usize) -> bool| -> Option<usize> {
            (0..pixels.len())
                .filter(|&j| !used[j] && !exclude.contains(&j) && ok(j))
                .min_by(|&a, &b| {
                    pixel_dist(pixels[i], pixels[a])
                        .total_cmp(&pixel_dist(pixels[i], pixels[b]))
                        .then(a.cmp(&b))
                })
        };
        let in_range = |a: usize, b: usize| {
            let (pa, pb) = (pixels[a], pixels[b]);
            (cfg.min_separation..=cfg.d_a).contains(&pixel_dist(pa, pb))
                && pieces.get(pa.0, pa.1) == pieces.get(pb.0, pb.1)
        };
        let Some(j1) = nearest(&[i], &|j| in_range(i, j)) else {
            continue;
        };
        let p1 = usable[j1].expect("usable");
        let Some(j2) = nearest(&[i, j1], &|j| {
            in_range(i, j)
                && in_range(j1, j)
                && triangle_area(&p0, &p1, &usable[j].expect("usable"))
                    > crate::geometry::MIN_TRIPLET_AREA
        }) else {
            continue;
        };
        let p2 = usable[j2].expect("usable");
        let triplet = [pixels[i], pixels[j1], pixels[j2]];
        if let Some(pair) = track_triplet(&tracker, triplet, [p0, p1, p2]) {
            used[i] = true;
            used[j1] = true;
            used[j2] = true;
            pairs.push(pair);
        }
    }
    pairs
}

fn track_triplet(
    tracker: &Tracker<'_>,
    pixels: [(usize, usize); 3],
    prev_points: [Vector3<f64>; 3],
) -> Option<FramePair> {
    let prev_pose = frame_from_triplet(&prev_points[0], &prev_points[1], &prev_points[2]).ok()?;
    let (q0, c0) = tracker.curr_point(pixels[0])?;
    let (_, c1) = tracker.curr_point(pixels[1])?;
    let (_, c2) = tracker.curr_point(pixels[2])?;
    let curr_pose = frame_from_triplet(&c0, &c1, &c2).ok()?;
    Some(FramePair {
        prev: BodyFrame {
            pose: prev_pose,
            origin_pixel: Vector2::new(pixels[0].0 as f64, pixels[0].1 as f64),
        },
        curr: BodyFrame {
            pose: curr_pose,
            origin_pixel: q0,
        },
        pixels,
    })
}

/// One BFIF per frame pair, with `dt` = one frame interval.
pub fn bfifs_from_pairs(pairs: &[FramePair]) -> Vec<Twist> {
    pairs
        .iter()
        .map(|p| spatial_twist(&p.prev.pose, &p.curr.pose, 1.0).expect("dt = 1 is positive"))
        .collect()
}
