//! Label masks, forward propagation through observed flow, seeded flood fill,
//! and the per-frame segmentation update.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::clustering::{group_bfifs, ClusterConfig};
use crate::error::{Error, Result};
use crate::flow::{effective_flow, expected_flow, DepthMap, FlowField, Intrinsics};
use crate::frames::{
    bfifs_from_pairs, build_frame_pairs, sample_motion_pixels, FramePair, SamplerConfig,
};
use crate::geometry::Pose;
use crate::grid::{BinaryMask, Grid, NEIGHBORS_4, NEIGHBORS_8};

/// Per-pixel object IDs; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub labels: Grid<u32>,
}

impl LabelMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            labels: Grid::new(width, height, 0),
        }
    }

    pub fn from_grid(labels: Grid<u32>) -> Self {
        Self { labels }
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u32 {
        *self.labels.get(u, v)
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, id: u32) {
        self.labels.set(u, v, id);
    }

    /// The set of positive labels present.
    pub fn ids(&self) -> BTreeSet<u32> {
        self.labels
            .as_slice()
            .iter()
            .copied()
            .filter(|&l| l > 0)
            .collect()
    }

    pub fn max_id(&self) -> u32 {
        self.labels.as_slice().iter().copied().max().unwrap_or(0)
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.as_slice().iter().filter(|&&l| l > 0).count()
    }

    pub fn pixel_count(&self, id: u32) -> usize {
        self.labels.as_slice().iter().filter(|&&l| l == id).count()
    }

    pub fn instance(&self, id: u32) -> BinaryMask {
        self.labels.map(|&l| l == id)
    }

    /// Pixel count per positive label.
    pub fn areas(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for &l in self.labels.as_slice() {
            if l > 0 {
                *m.entry(l).or_insert(0) += 1;
            }
        }
        m
    }

    /// 1 where the label is positive.
    pub fn binarize(&self) -> BinaryMask {
        self.labels.map(|&l| l > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmenterConfig {
    /// Largest observed-flow difference (px) between neighbors joined by the fill.
    pub tau_flow: f64,
    /// 4 or 8.
    pub fill_connectivity: u8,
    /// Fresh objects smaller than this (px) are reverted to background.
    pub min_region: usize,
    /// Fraction of a group's seeds on one existing ID above which the group adopts it.
    pub overlap_merge_fraction: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            tau_flow: 0.5,
            fill_connectivity: 4,
            min_region: 25,
            overlap_merge_fraction: 0.5,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_flow > 0.0
            && matches!(self.fill_connectivity, 4 | 8)
            && self.min_region >= 1
            && (0.0..=1.0).contains(&self.overlap_merge_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid segmenter config {self:?}")))
        }
    }
}

/// Hands out object IDs that are never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdAllocator {
    next: u32,
}

impl Default for IdAllocator {
    fn default() -> Self {
        Self { next: 1 }
    }
}

impl IdAllocator {
    /// An allocator whose first ID is above every label in `mask`.
    pub fn after(mask: &LabelMask) -> Self {
        Self {
            next: mask.max_id() + 1,
        }
    }

    pub fn fresh(&mut self) -> u32 {
        let id = self.next;
        self.next += 1;
        id
    }

    pub fn peek(&self) -> u32 {
        self.next
    }

    /// Makes sure future IDs are above every label in `mask`.
    pub fn observe(&mut self, mask: &LabelMask) {
        self.next = self.next.max(mask.max_id() + 1);
    }
}

#[inline]
fn round_target(u: usize, v: usize, f: [f64; 2]) -> (i64, i64) {
    (
        (u as f64 + f[0]).round() as i64,
        (v as f64 + f[1]).round() as i64,
    )
}

/// Forward-warps every labeled pixel to `round(p + O(p))`. Targets outside the
/// image and pixels with invalid flow are dropped; on collisions the source
/// with the larger flow magnitude wins (ties go to the earlier source in
/// row-major order).
pub fn propagate_mask(prev: &LabelMask, o: &FlowField) -> Result<LabelMask> {
    prev.labels.same_dims(&o.vectors)?;
    let (w, h) = prev.labels.dims();
    let mut out = LabelMask::zeros(w, h);
    let mut best = Grid::new(w, h, f64::NEG_INFINITY);
    for v in 0..h {
        for u in 0..w {
            let l = prev.get(u, v);
            if l == 0 {
                continue;
            }
            let Some(f) = o.at(u, v) else { continue };
            let (tu, tv) = round_target(u, v, f);
            if !out.labels.contains(tu, tv) {
                continue;
            }
            let (tu, tv) = (tu as usize, tv as usize);
            let mag = f[0].hypot(f[1]);
            if mag > *best.get(tu, tv) {
                best.set(tu, tv, mag);
                out.set(tu, tv, l);
            }
        }
    }
    Ok(out)
}

/// Like [`propagate_mask`], but each labeled pixel carries the sub-pixel
/// remainder of its accumulated displacement so that repeated sub-pixel warps
/// do not drift. One-pixel gaps opened by the warp (an unlabeled pixel between
/// two horizontal or two vertical neighbors with the same label) are closed.
pub fn propagate_with_residuals(
    prev: &LabelMask,
    residuals: &Grid<[f64; 2]>,
    o: &FlowField,
) -> Result<(LabelMask, Grid<[f64; 2]>)> {
    prev.labels.same_dims(&o.vectors)?;
    prev.labels.same_dims(residuals)?;
    let (w, h) = prev.labels.dims();
    let mut out = LabelMask::zeros(w, h);
    let mut out_res = Grid::new(w, h, [0.0; 2]);
    let mut best = Grid::new(w, h, f64::NEG_INFINITY);
    for v in 0..h {
        for u in 0..w {
            let l = prev.get(u, v);
            if l == 0 {
                continue;
            }
            let Some(f) = o.at(u, v) else { continue };
            let r = residuals.get(u, v);
            let exact = [u as f64 + r[0] + f[0], v as f64 + r[1] + f[1]];
            let (tu, tv) = (exact[0].round() as i64, exact[1].round() as i64);
            if !out.labels.contains(tu, tv) {
                continue;
            }
            let (tu, tv) = (tu as usize, tv as usize);
            let mag = f[0].hypot(f[1]);
            if mag > *best.get(tu, tv) {
                best.set(tu, tv, mag);
                out.set(tu, tv, l);
                out_res.set(tu, tv, [exact[0] - tu as f64, exact[1] - tv as f64]);
            }
        }
    }
    let mut filled = out.clone();
    let at = |u: i64, v: i64| out.labels.get_signed(u, v).copied().unwrap_or(0);
    for v in 0..h as i64 {
        for u in 0..w as i64 {
            if at(u, v) != 0 {
                continue;
            }
            let (l, r, t, b) = (at(u - 1, v), at(u + 1, v), at(u, v - 1), at(u, v + 1));
            let fill = if l > 0 && l == r {
                l
            } else if t > 0 && t == b {
                t
            } else {
                0
            };
            if fill > 0 {
                filled.set(u as usize, v as usize, fill);
            }
        }
    }
    Ok((filled, out_res))
}

/// Seed pixels assigned to one object by [`seed_and_fill`].
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRecord {
    pub id: u32,
    /// True when the ID was freshly allocated (not adopted).
    pub fresh: bool,
    pub seeds: Vec<(usize, usize)>,
}

/// Assigns an ID to each BFIF group and grows it by breadth-first search.
///
/// A group adopts an existing ID when at least `overlap_merge_fraction` of its
/// seed pixels (frame origins) already carry that ID; otherwise it gets a
/// fresh ID. The fill adds a background neighbor `q` of an assigned pixel `p`
/// when `q` is in `motion_region` and `‖O(p) − O(q)‖ < tau_flow`, and walks
/// through pixels that already carry the group's ID. Fresh objects smaller
/// than `min_region` are reverted. Positive pixels never change ID.
#[allow(clippy::too_many_arguments)]
pub fn seed_and_fill(
    mask: &LabelMask,
    groups: &[Vec<usize>],
    pairs: &[FramePair],
    o: &FlowField,
    motion_region: &BinaryMask,
    cfg: &SegmenterConfig,
    ids: &mut IdAllocator,
) -> Result<(LabelMask, Vec<SeedRecord>)> {
    mask.labels.same_dims(&o.vectors)?;
    mask.labels.same_dims(motion_region)?;
    ids.observe(mask);
    let mut out = mask.clone();
    let mut records = Vec::new();

    let mut order: Vec<&Vec<usize>> = groups.iter().filter(|g| !g.is_empty()).collect();
    order.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));

    let neighbors: &[(i64, i64)] = if cfg.fill_connectivity == 8 {
        &NEIGHBORS_8
    } else {
        &NEIGHBORS_4
    };
    let (w, h) = out.labels.dims();
    let mut visited = Grid::new(w, h, false);

    for group in order {
        let seeds: Vec<(usize, usize)> = group.iter().map(|&i| pairs[i].origin()).collect();
        let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
        for &(u, v) in &seeds {
            let l = out.get(u, v);
            if l > 0 {
                *votes.entry(l).or_insert(0) += 1;
            }
        }
        let adopted = votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .filter(|(_, &n)| n as f64 >= cfg.overlap_merge_fraction * seeds.len() as f64)
            .map(|(&l, _)| l);
        let (id, fresh) = match adopted {
            Some(l) => (l, false),
            None => (ids.fresh(), true),
        };

        visited.as_mut_slice().fill(false);
        let mut queue = VecDeque::new();
        let mut added = Vec::new();
        let mut placed = Vec::new();
        for &(u, v) in &seeds {
            let l = out.get(u, v);
            if l == 0 {
                out.set(u, v, id);
                added.push((u, v));
                placed.push((u, v));
            } else if l != id {
                continue;
            } else {
                placed.push((u, v));
            }
            if !*visited.get(u, v) {
                visited.set(u, v, true);
                queue.push_back((u, v));
            }
        }
        while let Some((pu, pv)) = queue.pop_front() {
            let fp = *o.vectors.get(pu, pv);
            for &(du, dv) in neighbors {
                let (qu, qv) = (pu as i64 + du, pv as i64 + dv);
                if !out.labels.contains(qu, qv) {
                    continue;
                }
                let (qu, qv) = (qu as usize, qv as usize);
                if *visited.get(qu, qv) {
                    continue;
                }
                let lq = out.get(qu, qv);
                let step = if lq == id {
                    true
                } else if lq == 0 && *motion_region.get(qu, qv) {
                    match o.at(qu, qv) {
                        Some(fq) => (fp[0] - fq[0]).hypot(fp[1] - fq[1]) < cfg.tau_flow,
                        None => false,
                    }
                } else {
                    false
                };
                if step {
                    visited.set(qu, qv, true);
                    if lq == 0 {
                        out.set(qu, qv, id);
                        added.push((qu, qv));
                    }
                    queue.push_back((qu, qv));
                }
            }
        }
        if fresh && added.len() < cfg.min_region {
            for &(u, v) in &added {
                out.set(u, v, 0);
            }
            continue;
        }
        if !placed.is_empty() {
            records.push(SeedRecord {
                id,
                fresh,
                seeds: placed,
            });
        }
    }
    Ok((out, records))
}

/// Clears pixels of the given IDs that lie outside `motion_region` and carry
/// valid flow. Applied to objects that were seeded in the current frame pair,
/// whose labels must move with them; stale labels left on the static
/// background are removed this way.
pub fn prune_static(
    mask: &mut LabelMask,
    ids: &[u32],
    motion_region: &BinaryMask,
    o: &FlowField,
) -> usize {
    let mut removed = 0;
    for v in 0..mask.height() {
        for u in 0..mask.width() {
            let l = mask.get(u, v);
            if l > 0 && ids.contains(&l) && !*motion_region.get(u, v) && o.at(u, v).is_some() {
                mask.set(u, v, 0);
                removed += 1;
            }
        }
    }
    removed
}

/// Residuals for `mask`: pixels whose label is unchanged from `prev` keep
/// theirs; newly labeled pixels take the per-component median of their
/// object's kept residuals so that the object warps as one piece.
fn inherit_residuals(
    prev: &LabelMask,
    mask: &LabelMask,
    kept: Option<&Grid<[f64; 2]>>,
) -> Grid<[f64; 2]> {
    let (w, h) = mask.labels.dims();
    let mut out = Grid::new(w, h, [0.0; 2]);
    let Some(kept) = kept else { return out };
    let mut per_id: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 0..w * h {
        let l = mask.labels.as_slice()[i];
        if l > 0 && prev.labels.as_slice()[i] == l {
            let r = kept.as_slice()[i];
            out.as_mut_slice()[i] = r;
            let e = per_id.entry(l).or_default();
            e.0.push(r[0]);
            e.1.push(r[1]);
        }
    }
    let median = |mut x: Vec<f64>| {
        x.sort_by(f64::total_cmp);
        x[x.len() / 2]
    };
    let medians: BTreeMap<u32, [f64; 2]> = per_id
        .into_iter()
        .map(|(l, (a, b))| (l, [median(a), median(b)]))
        .collect();
    for i in 0..w * h {
        let l = mask.labels.as_slice()[i];
        if l > 0 && prev.labels.as_slice()[i] != l {
            if let Some(m) = medians.get(&l) {
                out.as_mut_slice()[i] = *m;
            }
        }
    }
    out
}

/// Flow pre-filter, sampling and clustering settings for one segmentation update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub sampler: SamplerConfig,
    pub cluster: ClusterConfig,
    pub segmenter: SegmenterConfig,
    /// Radius of the median filter applied to observed flow (0 = off).
    pub flow_median_radius: usize,
    /// Window pixels whose depth differs from the center's by more than this
    /// (m) are left out of the median.
    pub flow_median_depth_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            cluster: ClusterConfig::default(),
            segmenter: SegmenterConfig::default(),
            flow_median_radius: 3,
            flow_median_depth_tol: 0.01,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.cluster.validate()?;
        if !(self.flow_median_depth_tol > 0.0) {
            return Err(Error::Config(format!(
                "flow_median_depth_tol must be positive, got {}",
                self.flow_median_depth_tol
            )));
        }
        self.segmenter.validate()
    }
}

/// Inputs for one segmentation update between consecutive frames.
#[derive(Debug, Clone, Copy)]
pub struct FramePairInput<'a> {
    pub depth_prev: &'a DepthMap,
    pub depth_curr: &'a DepthMap,
    /// Observed flow from t−1 to t.
    pub observed: &'a FlowField,
    /// World-to-camera poses.
    pub pose_prev: &'a Pose,
    pub pose_curr: &'a Pose,
    pub intrinsics: &'a Intrinsics,
}

impl FramePairInput<'_> {
    /// Transform from camera coordinates at t−1 to camera coordinates at t.
    pub fn camera_motion(&self) -> Pose {
        self.pose_curr.compose(&self.pose_prev.inverse())
    }
}

/// Result of one update.
#[derive(Debug, Clone)]
pub struct SegmentUpdate {
    pub mask: LabelMask,
    /// Seeds of freshly created objects, in image coordinates at t.
    pub new_seeds: Vec<SeedRecord>,
    pub frame_pairs: usize,
    pub groups: usize,
}

/// Flow fields derived from one frame pair.
#[derive(Debug, Clone)]
pub struct MotionFields {
    /// Median-filtered observed flow.
    pub observed: FlowField,
    /// Filtered observed flow minus the flow explained by camera motion.
    pub effective: FlowField,
    /// `effective` restricted to pixels whose whole filter window lies on one
    /// depth surface; body frames are only built there, since the median is
    /// biased where the window is cut by a depth edge.
    pub samplable: FlowField,
}

pub fn motion_fields(input: &FramePairInput<'_>, cfg: &PipelineConfig) -> Result<MotionFields> {
    let (r, tol) = (cfg.flow_median_radius, cfg.flow_median_depth_tol);
    let observed = input
        .observed
        .median_filtered_guided(r, input.depth_prev, tol);
    let expected = expected_flow(input.depth_prev, &input.camera_motion(), input.intrinsics);
    let effective = effective_flow(&observed, &expected)?;
    let mut samplable = effective.clone();
    let interior = depth_interior(input.depth_prev, r, tol);
    for (u, v, &inside) in interior.iter_pixels() {
        if !inside {
            samplable.set(u, v, None);
        }
    }
    Ok(MotionFields {
        observed,
        effective,
        samplable,
    })
}

/// Pixels with valid depth whose `(2r+1)²` window lies inside the image and
/// has every depth within `tol` of the center's.
pub fn depth_interior(depth: &DepthMap, radius: usize, tol: f64) -> BinaryMask {
    let r = radius as i64;
    Grid::from_fn(depth.width(), depth.height(), |u, v| {
        let Some(z) = depth.at(u, v) else {
            return false;
        };
        (-r..=r).all(|dv| {
            (-r..=r).all(|du| {
                let (qu, qv) = (u as i64 + du, v as i64 + dv);
                qu >= 0
                    && qv >= 0
                    && (qu as usize) < depth.width()
                    && (qv as usize) < depth.height()
                    && depth
                        .at(qu as usize, qv as usize)
                        .is_some_and(|zq| (zq - z).abs() <= tol)
            })
        })
    })
}

/// Samples body frames on the moving pixels and groups their BFIFs.
pub fn frame_groups(
    fields: &MotionFields,
    input: &FramePairInput<'_>,
    sampler: &SamplerConfig,
    cluster: &ClusterConfig,
) -> (Vec<FramePair>, Vec<Vec<usize>>) {
    let pixels = sample_motion_pixels(&fields.samplable, sampler);
    let pairs = build_frame_pairs(
        &pixels,
        &fields.samplable,
        &fields.observed,
        input.depth_prev,
        input.depth_curr,
        &input.camera_motion(),
        input.intrinsics,
        sampler,
    );
    let groups = if pairs.is_empty() {
        Vec::new()
    } else {
        group_bfifs(&bfifs_from_pairs(&pairs), cluster).clusters
    };
    (pairs, groups)
}

/// Episode-scoped segmentation state: ID allocation, sub-pixel residuals of the
/// propagated mask and the per-frame sampling seed.
#[derive(Debug, Clone)]
pub struct Segmenter {
    cfg: PipelineConfig,
    ids: IdAllocator,
    last: Option<(LabelMask, Grid<[f64; 2]>)>,
    frame: u64,
    seed: u64,
}

fn mix_seed(seed: u64, frame: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ frame.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Segmenter {
    pub fn new(cfg: PipelineConfig, seed: u64) -> Self {
        Self {
            cfg,
            ids: IdAllocator::default(),
            last: None,
            frame: 0,
            seed,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn next_id(&self) -> u32 {
        self.ids.peek()
    }

    /// Computes `L_t` from `L_{t−1}` and one frame pair.
    pub fn step(
        &mut self,
        input: &FramePairInput<'_>,
        prev_mask: &LabelMask,
    ) -> Result<SegmentUpdate> {
        prev_mask.labels.same_dims(&input.observed.vectors)?;
        input.depth_prev.values.same_dims(&input.observed.vectors)?;
        input.depth_curr.values.same_dims(&input.observed.vectors)?;
        self.ids.observe(prev_mask);

        let sampler = SamplerConfig {
            rng_seed: mix_seed(self.seed, self.frame),
            ..self.cfg.sampler
        };
        self.frame += 1;
        let fields = motion_fields(input, &self.cfg)?;
        let (pairs, groups) = frame_groups(&fields, input, &sampler, &self.cfg.cluster);
        let MotionFields {
            observed,
            effective,
            ..
        } = fields;

        let motion_region = effective.moving_region(sampler.tau_motion);
        let (mut seeded, records) = seed_and_fill(
            prev_mask,
            &groups,
            &pairs,
            &observed,
            &motion_region,
            &self.cfg.segmenter,
            &mut self.ids,
        )?;

        let active: Vec<u32> = records.iter().map(|r| r.id).collect();
        prune_static(&mut seeded, &active, &motion_region, &observed);

        let kept = match &self.last {
            Some((m, r)) if m == prev_mask => Some(r),
            _ => None,
        };
        let residuals = inherit_residuals(prev_mask, &seeded, kept);
        let (mask, residuals) = propagate_with_residuals(&seeded, &residuals, &observed)?;

        let new_seeds = records
            .into_iter()
            .filter(|r| r.fresh)
            .map(|r| SeedRecord {
                seeds: r
                    .seeds
                    .iter()
                    .filter_map(|&(u, v)| {
                        let f = observed.at(u, v)?;
                        let (tu, tv) = round_target(u, v, f);
                        mask.labels
                            .contains(tu, tv)
                            .then_some((tu as usize, tv as usize))
                    })
                    .collect(),
                ..r
            })
            .collect();

        self.last = Some((mask.clone(), residuals));
        Ok(SegmentUpdate {
            mask,
            new_seeds,
            frame_pairs: pairs.len(),
            groups: groups.len(),
        })
    }
}

/// Stateless single update; new IDs start above the largest label in `prev_mask`.
pub fn segment_objs(
    input: &FramePairInput<'_>,
    prev_mask: &LabelMask,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<LabelMask> {
    let mut s = Segmenter::new(*cfg, seed);
    Ok(s.step(input, prev_mask)?.mask)
}
