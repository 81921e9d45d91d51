//! Push selection: table-plane extraction, clustering of not-yet-segmented
//! object pixels, and the three push validity checks.

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{back_project, DepthMap, Intrinsics};
use crate::grid::{connected_components, dilate3, erode3, BinaryMask, Grid, NEIGHBORS_4};
use crate::segmenter::LabelMask;

/// Push from `contact` along `direction` (image plane) for `distance` meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushAction {
    pub contact: Vector2<f64>,
    /// Back-projection of the contact pixel in camera coordinates.
    pub contact_point: Vector3<f64>,
    pub direction: Vector2<f64>,
    pub distance: f64,
}

impl PushAction {
    /// `push u v du dv d_push`
    pub fn to_record(&self) -> String {
        format!(
            "push {} {} {} {} {}",
            self.contact.x, self.contact.y, self.direction.x, self.direction.y, self.distance
        )
    }
}

/// Plane `normal · x + offset = 0` in camera coordinates with the camera on the
/// positive side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableModel {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_threshold: f64,
}

impl TableModel {
    /// Signed height above the plane toward the camera.
    #[inline]
    pub fn height_of(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Plane inlier band and the minimum height of object points (m).
    pub inlier_threshold: f64,
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_threshold: 0.005,
            min_inlier_fraction: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionConfig {
    pub d_push: f64,
    pub l_act: f64,
    /// End-effector footprint width (m) for the approach check.
    pub footprint_width: f64,
    pub k_max: usize,
    /// Stop at the smallest k whose step to k + 1 improves WCSS by less than this fraction.
    pub elbow_ratio: f64,
    pub kmeans_restarts: usize,
    pub seed: u64,
    /// Connected pieces of objsToSegment smaller than this (px) are ignored.
    pub min_unsegmented_area: usize,
    pub ransac: RansacConfig,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            d_push: 0.02,
            l_act: 0.3,
            footprint_width: 0.03,
            k_max: 8,
            elbow_ratio: 0.5,
            kmeans_restarts: 3,
            seed: 0,
            min_unsegmented_area: 20,
            ransac: RansacConfig::default(),
        }
    }
}

impl ActionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.d_push > 0.0
            && (0.0..=1.0).contains(&self.l_act)
            && self.footprint_width >= 0.0
            && self.k_max >= 1
            && self.elbow_ratio > 0.0
            && self.kmeans_restarts >= 1
            && self.ransac.iterations >= 1
            && self.ransac.inlier_threshold > 0.0
            && (0.0..=1.0).contains(&self.ransac.min_inlier_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid action config {self:?}")))
        }
    }
}

fn plane_through(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<(Vector3<f64>, f64)> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len < 1e-12 {
        return None;
    }
    let n = n / len;
    Some(oriented(n, -n.dot(a)))
}

fn oriented(n: Vector3<f64>, d: f64) -> (Vector3<f64>, f64) {
    if d < 0.0 {
        (-n, -d)
    } else {
        (n, d)
    }
}

/// Least-squares plane through `points`.
fn refit(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64)> {
    if points.len() < 3 {
        return None;
    }
    let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let i = eig.eigenvalues.imin();
    let n = eig.eigenvectors.column(i).into_owned().normalize();
    Some(oriented(n, -n.dot(&mean)))
}

/// Fits the dominant plane to the back-projected depth with seeded RANSAC and
/// a least-squares refit on the inliers.
pub fn fit_table(depth: &DepthMap, k: &Intrinsics, cfg: &RansacConfig) -> Result<TableModel> {
    let mut points = Vec::new();
    for (u, v, _) in depth.values.iter_pixels() {
        if let Some(z) = depth.at(u, v) {
            if let Ok(p) = back_project(&Vector2::new(u as f64, v as f64), z, k) {
                points.push(p);
            }
        }
    }
    if points.len() < 3 {
        return Err(Error::NoPlaneFound(0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let thr = cfg.inlier_threshold;
    let count =
        |n: &Vector3<f64>, d: f64| points.iter().filter(|p| (n.dot(p) + d).abs() < thr).count();
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..cfg.iterations {
        let idx = sample(&mut rng, points.len(), 3);
        let Some((n, d)) = plane_through(
            &points[idx.index(0)],
            &points[idx.index(1)],
            &points[idx.index(2)],
        ) else {
            continue;
        };
        let c = count(&n, d);
        if best.is_none_or(|(b, _, _)| c > b) {
            best = Some((c, n, d));
        }
    }
    let Some((c, n, d)) = best else {
        return Err(Error::NoPlaneFound(0.0));
    };
    let fraction = c as f64 / points.len() as f64;
    if fraction < cfg.min_inlier_fraction {
        return Err(Error::NoPlaneFound(fraction));
    }
    let inliers: Vec<Vector3<f64>> = points
        .iter()
        .filter(|p| (n.dot(p) + d).abs() < thr)
        .copied()
        .collect();
    let (normal, offset) = refit(&inliers).unwrap_or((n, d));
    Ok(TableModel {
        normal,
        offset,
        inlier_threshold: thr,
    })
}

/// Pixels whose back-projection lies more than the inlier threshold above `table`.
pub fn mask_above(depth: &DepthMap, k: &Intrinsics, table: &TableModel) -> BinaryMask {
    Grid::from_fn(depth.width(), depth.height(), |u, v| match depth.at(u, v) {
        Some(z) => back_project(&Vector2::new(u as f64, v as f64), z, k)
            .map(|p| table.height_of(&p) > table.inlier_threshold)
            .unwrap_or(false),
        None => false,
    })
}

pub fn objs_above_table(
    depth: &DepthMap,
    k: &Intrinsics,
    cfg: &RansacConfig,
) -> Result<BinaryMask> {
    let table = fit_table(depth, k, cfg)?;
    Ok(mask_above(depth, k, &table))
}

pub fn binarize_mask(l: &LabelMask) -> BinaryMask {
    l.binarize()
}

/// `max(objMask − binL, 0)`.
pub fn objs_to_segment(obj_mask: &BinaryMask, bin_l: &BinaryMask) -> Result<BinaryMask> {
    obj_mask.same_dims(bin_l)?;
    Ok(Grid::from_fn(
        obj_mask.width(),
        obj_mask.height(),
        |u, v| *obj_mask.get(u, v) && !*bin_l.get(u, v),
    ))
}

/// 3×3 opening followed by removal of 4-connected pieces smaller than `min_area`.
pub fn clean_mask(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    let opened = dilate3(&erode3(mask));
    let (labels, n) = connected_components(&opened, false);
    let mut areas = vec![0usize; n + 1];
    for &l in labels.as_slice() {
        areas[l as usize] += 1;
    }
    labels.map(|&l| l > 0 && areas[l as usize] >= min_area)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelCluster {
    pub center: Vector2<f64>,
    pub members: Vec<(usize, usize)>,
}

fn to_point(p: &(usize, usize)) -> Vector2<f64> {
    Vector2::new(p.0 as f64, p.1 as f64)
}

/// Lloyd iterations from k-means++ seeds. Returns (assignment, centers, WCSS).
pub fn kmeans<R: Rng>(
    points: &[Vector2<f64>],
    k: usize,
    rng: &mut R,
) -> (Vec<usize>, Vec<Vector2<f64>>, f64) {
    assert!(k >= 1 && k <= points.len());
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| (p - centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&i, &j| {
                    (p - centers[i])
                        .norm_squared()
                        .total_cmp(&(p - centers[j]).norm_squared())
                })
                .unwrap();
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        let mut sums = vec![Vector2::zeros(); k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            sums[a] += p;
            counts[a] += 1;
        }
        for i in 0..k {
            if counts[i] > 0 {
                centers[i] = sums[i] / counts[i] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let wcss = assign
        .iter()
        .zip(points)
        .map(|(&a, p)| (p - centers[a]).norm_squared())
        .sum();
    (assign, centers, wcss)
}

/// Seeded K-Means on the positive pixels for k = 1..k_max with the elbow rule.
pub fn cluster_unsegmented(
    objs_to_segment: &BinaryMask,
    k_max: usize,
    elbow_ratio: f64,
    restarts: usize,
    seed: u64,
) -> Result<Vec<PixelCluster>> {
    let pixels = objs_to_segment.positives();
    if pixels.is_empty() {
        return Err(Error::EmptyMask);
    }
    let points: Vec<Vector2<f64>> = pixels.iter().map(to_point).collect();
    let k_max = k_max.max(1).min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut runs = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let best = (0..restarts.max(1))
            .map(|_| kmeans(&points, k, &mut rng))
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .unwrap();
        runs.push(best);
    }
    let wcss: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let chosen = elbow(&wcss, elbow_ratio);
    let (assign, centers, _) = &runs[chosen - 1];
    let mut clusters: Vec<PixelCluster> = centers
        .iter()
        .map(|&c| PixelCluster {
            center: c,
            members: Vec::new(),
        })
        .collect();
    for (&a, &p) in assign.iter().zip(&pixels) {
        clusters[a].members.push(p);
    }
    clusters.retain(|c| !c.members.is_empty());
    Ok(clusters)
}

/// [`cluster_unsegmented`] applied to each 4-connected piece of the mask
/// separately, so that well separated objects never share a cluster.
pub fn cluster_components(
    objs_to_segment: &BinaryMask,
    k_max: usize,
    elbow_ratio: f64,
    restarts: usize,
    seed: u64,
) -> Result<Vec<PixelCluster>> {
    let (labels, n) = connected_components(objs_to_segment, false);
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mut out = Vec::new();
    for c in 1..=n as u32 {
        let piece = labels.map(|&l| l == c);
        out.extend(cluster_unsegmented(
            &piece,
            k_max,
            elbow_ratio,
            restarts,
            seed.wrapping_add(c as u64),
        )?);
    }
    Ok(out)
}

/// Smallest k (1-based) with `(W_k − W_{k+1}) / W_k < ratio`; the largest k if none.
pub fn elbow(wcss: &[f64], ratio: f64) -> usize {
    for k in 1..wcss.len() {
        let (a, b) = (wcss[k - 1], wcss[k]);
        if a <= 0.0 || (a - b) / a < ratio {
            return k;
        }
    }
    wcss.len().max(1)
}

/// Members with at least one 4-neighbor outside the set, ordered by angle
/// around the member mean (ties: nearer first, then row-major).
pub fn boundary(points: &[(usize, usize)]) -> Vec<(usize, usize)> {
    if points.is_empty() {
        return Vec::new();
    }
    let set: std::collections::HashSet<(usize, usize)> = points.iter().copied().collect();
    let center = points.iter().map(to_point).sum::<Vector2<f64>>() / points.len() as f64;
    let mut out: Vec<(usize, usize)> = set
        .iter()
        .copied()
        .filter(|&(u, v)| {
            NEIGHBORS_4.iter().any(|&(du, dv)| {
                let (nu, nv) = (u as i64 + du, v as i64 + dv);
                nu < 0 || nv < 0 || !set.contains(&(nu as usize, nv as usize))
            })
        })
        .collect();
    let key = |p: &(usize, usize)| {
        let d = to_point(p) - center;
        (d.y.atan2(d.x), d.norm_squared())
    };
    out.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then((a.1, a.0).cmp(&(b.1, b.0)))
    });
    out
}

/// Pixel-space sizes of a push at the cluster's median depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushScale {
    /// Image of the `d_push` tabletop displacement, rounded to whole pixels.
    pub shift: (i64, i64),
    pub approach_length: f64,
    pub approach_width: f64,
}

pub fn median_depth(points: &[(usize, usize)], depth: &DepthMap) -> Option<f64> {
    let mut z: Vec<f64> = points.iter().filter_map(|&(u, v)| depth.at(u, v)).collect();
    if z.is_empty() {
        return None;
    }
    z.sort_by(f64::total_cmp);
    Some(z[z.len() / 2])
}

pub fn push_scale(dir: &Vector2<f64>, z: f64, k: &Intrinsics, cfg: &ActionConfig) -> PushScale {
    let metric = Vector2::new(dir.x / k.fx, dir.y / k.fy).normalize();
    let shift = Vector2::new(k.fx * metric.x, k.fy * metric.y) * cfg.d_push / z;
    let f = 0.5 * (k.fx + k.fy);
    PushScale {
        shift: (shift.x.round() as i64, shift.y.round() as i64),
        approach_length: f * cfg.d_push / z,
        approach_width: f * cfg.footprint_width / z,
    }
}

/// `(|isect|, |P|)` where `isect` are pixels of `P + shift` on objMask outside `P`.
pub fn push_overlap(
    cluster: &BinaryMask,
    obj_mask: &BinaryMask,
    shift: (i64, i64),
) -> (usize, usize) {
    let mut isect = 0;
    let mut size = 0;
    for (u, v, &inside) in cluster.iter_pixels() {
        if !inside {
            continue;
        }
        size += 1;
        let (tu, tv) = (u as i64 + shift.0, v as i64 + shift.1);
        if let (Some(&on_obj), Some(&own)) =
            (obj_mask.get_signed(tu, tv), cluster.get_signed(tu, tv))
        {
            if on_obj && !own {
                isect += 1;
            }
        }
    }
    (isect, size)
}

/// True when the rectangle behind `b` (opposite `dir`, starting one pixel
/// back) contains no objMask pixel outside the cluster.
pub fn approach_is_clear(
    b: (usize, usize),
    dir: &Vector2<f64>,
    length: f64,
    width: f64,
    cluster: &BinaryMask,
    obj_mask: &BinaryMask,
) -> bool {
    let back = -dir;
    let side = Vector2::new(-dir.y, dir.x);
    let reach = (length + 1.0 + width).ceil() as i64 + 1;
    let (bu, bv) = (b.0 as i64, b.1 as i64);
    for v in bv - reach..=bv + reach {
        for u in bu - reach..=bu + reach {
            let Some(&on_obj) = obj_mask.get_signed(u, v) else {
                continue;
            };
            if !on_obj || *cluster.get_signed(u, v).unwrap_or(&false) {
                continue;
            }
            let d = Vector2::new((u - bu) as f64, (v - bv) as f64);
            let along = d.dot(&back);
            if along >= 1.0 && along <= 1.0 + length && d.dot(&side).abs() <= 0.5 * width {
                return false;
            }
        }
    }
    true
}

/// The three push criteria: the center lies on an object, the approach is free,
/// and `|isect| / |P| ≤ l_act`.
#[allow(clippy::too_many_arguments)]
pub fn is_valid_push(
    b: (usize, usize),
    dir: &Vector2<f64>,
    cluster: &BinaryMask,
    obj_mask: &BinaryMask,
    c: &Vector2<f64>,
    k: &Intrinsics,
    depth: &DepthMap,
    cfg: &ActionConfig,
) -> bool {
    let (cu, cv) = (c.x.round() as i64, c.y.round() as i64);
    if !obj_mask.get_signed(cu, cv).copied().unwrap_or(false) {
        return false;
    }
    let Some(z) = median_depth(&cluster.positives(), depth) else {
        return false;
    };
    let scale = push_scale(dir, z, k, cfg);
    if !approach_is_clear(
        b,
        dir,
        scale.approach_length,
        scale.approach_width,
        cluster,
        obj_mask,
    ) {
        return false;
    }
    let (isect, size) = push_overlap(cluster, obj_mask, scale.shift);
    size > 0 && isect as f64 <= cfg.l_act * size as f64 + 1e-12
}

/// Candidate pushes in evaluation order: clusters by descending size, boundary
/// points by descending distance from the objMask centroid (angle order breaks ties).
pub fn push_candidates(
    clusters: &[PixelCluster],
    obj_mask: &BinaryMask,
) -> Vec<(usize, (usize, usize))> {
    let pos = obj_mask.positives();
    let centroid = if pos.is_empty() {
        Vector2::zeros()
    } else {
        pos.iter().map(to_point).sum::<Vector2<f64>>() / pos.len() as f64
    };
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| {
        clusters[b]
            .members
            .len()
            .cmp(&clusters[a].members.len())
            .then(a.cmp(&b))
    });
    let mut out = Vec::new();
    for ci in order {
        let mut pts = boundary(&clusters[ci].members);
        pts.sort_by(|a, b| {
            (to_point(b) - centroid)
                .norm_squared()
                .total_cmp(&(to_point(a) - centroid).norm_squared())
        });
        out.extend(pts.into_iter().map(|p| (ci, p)));
    }
    out
}

pub fn cluster_mask(cluster: &PixelCluster, width: usize, height: usize) -> BinaryMask {
    let mut m = Grid::new(width, height, false);
    for &(u, v) in &cluster.members {
        m.set(u, v, true);
    }
    m
}

/// Chooses the next push for the current segmentation, or `None` when nothing
/// is left to segment or no candidate passes the checks.
pub fn find_action(
    l: &LabelMask,
    depth: &DepthMap,
    k: &Intrinsics,
    cfg: &ActionConfig,
) -> Result<Option<PushAction>> {
    let obj_mask = objs_above_table(depth, k, &cfg.ransac)?;
    find_action_with_mask(l, &obj_mask, depth, k, cfg)
}

/// [`find_action`] with a precomputed objMask.
pub fn find_action_with_mask(
    l: &LabelMask,
    obj_mask: &BinaryMask,
    depth: &DepthMap,
    k: &Intrinsics,
    cfg: &ActionConfig,
) -> Result<Option<PushAction>> {
    let raw = objs_to_segment(obj_mask, &binarize_mask(l))?;
    if !raw.any() {
        return Ok(None);
    }
    let remaining = clean_mask(&raw, cfg.min_unsegmented_area);
    if !remaining.any() {
        return Ok(None);
    }
    let clusters = cluster_components(
        &remaining,
        cfg.k_max,
        cfg.elbow_ratio,
        cfg.kmeans_restarts,
        cfg.seed,
    )?;
    let masks: Vec<BinaryMask> = clusters
        .iter()
        .map(|c| cluster_mask(c, l.width(), l.height()))
        .collect();
    for (ci, b) in push_candidates(&clusters, obj_mask) {
        let c = clusters[ci].center;
        let Some(dir) = (c - to_point(&b)).try_normalize(1e-12) else {
            continue;
        };
        if is_valid_push(b, &dir, &masks[ci], obj_mask, &c, k, depth, cfg) {
            let contact = to_point(&b);
            let z = depth.at(b.0, b.1).unwrap_or(0.0);
            let contact_point = back_project(&contact, z, k).unwrap_or_else(|_| Vector3::zeros());
            return Ok(Some(PushAction {
                contact,
                contact_point,
                direction: dir,
                distance: cfg.d_push,
            }));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, u0: usize, v0: usize, uw: usize, vh: usize) -> BinaryMask {
        Grid::from_fn(w, h, |u, v| {
            u >= u0 && u < u0 + uw && v >= v0 && v < v0 + vh
        })
    }

    fn plane_depth(k: &Intrinsics, z: f64) -> DepthMap {
        DepthMap::from_values(Grid::new(k.width, k.height, z))
    }

    #[test]
    fn bare_table_has_no_objects() {
        let k = Intrinsics::default();
        let m = objs_above_table(&plane_depth(&k, 0.6), &k, &RansacConfig::default()).unwrap();
        assert!(!m.any());
    }

    #[test]
    fn raised_box_detected() {
        let k = Intrinsics::default();
        let mut d = Grid::new(k.width, k.height, 0.6);
        for v in 40..60 {
            for u in 50..80 {
                d.set(u, v, 0.55);
            }
        }
        let m = objs_above_table(&DepthMap::from_values(d), &k, &RansacConfig::default()).unwrap();
        assert_eq!(m, rect(k.width, k.height, 50, 40, 30, 20));
    }

    #[test]
    fn no_plane_without_support() {
        let k = Intrinsics::default();
        let d = DepthMap::from_values(Grid::new(k.width, k.height, 0.0));
        assert!(matches!(
            objs_above_table(&d, &k, &RansacConfig::default()),
            Err(Error::NoPlaneFound(_))
        ));
    }

    #[test]
    fn ransac_is_seeded() {
        let k = Intrinsics::default();
        let d = DepthMap::from_values(Grid::from_fn(k.width, k.height, |u, v| {
            0.6 + 0.0001 * ((u * 7 + v * 13) % 5) as f64
        }));
        let a = fit_table(&d, &k, &RansacConfig::default()).unwrap();
        let b = fit_table(&d, &k, &RansacConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!((a.normal.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn binarize_example() {
        let l = LabelMask::from_grid(Grid::from_vec(2, 2, vec![0, 2, 1, 0]).unwrap());
        assert_eq!(binarize_mask(&l).into_vec(), vec![false, true, true, false]);
    }

    #[test]
    fn single_blob_is_one_cluster() {
        let m = rect(60, 60, 10, 20, 20, 20);
        let c = cluster_unsegmented(&m, 8, 0.5, 3, 0).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0].center - Vector2::new(19.5, 29.5)).norm() < 1.0);
    }

    #[test]
    fn two_blobs_are_two_clusters() {
        let mut m = rect(260, 40, 5, 5, 15, 15);
        for v in 5..20 {
            for u in 210..225 {
                m.set(u, v, true);
            }
        }
        let c = cluster_unsegmented(&m, 8, 0.5, 3, 0).unwrap();
        assert_eq!(c.len(), 2);
        for cl in &c {
            let left = cl.members.iter().filter(|p| p.0 < 100).count();
            assert!(left == 0 || left == cl.members.len());
        }
    }

    #[test]
    fn empty_mask_rejected() {
        let m = Grid::new(5, 5, false);
        assert!(matches!(
            cluster_unsegmented(&m, 8, 0.5, 3, 0),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn boundary_of_square() {
        let pts: Vec<_> = (0..3)
            .flat_map(|v| (0..3).map(move |u| (u + 4, v + 4)))
            .collect();
        let b = boundary(&pts);
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&(5, 5)));
        assert_eq!(boundary(&[(2, 3)]), vec![(2, 3)]);
    }

    #[test]
    fn overlap_ratio_boundaries() {
        // |P| = 100; shift 10 px right onto a neighbor covering `n` target pixels.
        for (n, ok) in [(29, true), (30, true), (31, false)] {
            let (w, h) = (60, 20);
            let cluster = rect(w, h, 5, 5, 10, 10);
            let mut obj = cluster.clone();
            let mut placed = 0;
            'fill: for v in 5..15 {
                for u in 15..25 {
                    if placed == n {
                        break 'fill;
                    }
                    obj.set(u, v, true);
                    placed += 1;
                }
            }
            let (isect, size) = push_overlap(&cluster, &obj, (10, 0));
            assert_eq!((isect, size), (n, 100));
            assert_eq!(isect as f64 <= 0.3 * size as f64 + 1e-12, ok);
        }
    }

    #[test]
    fn blocked_approach() {
        let (w, h) = (60, 40);
        let cluster = rect(w, h, 20, 10, 10, 10);
        let mut obj = cluster.clone();
        assert!(approach_is_clear(
            (20, 15),
            &Vector2::new(1.0, 0.0),
            5.0,
            6.0,
            &cluster,
            &obj
        ));
        obj.set(17, 15, true);
        assert!(!approach_is_clear(
            (20, 15),
            &Vector2::new(1.0, 0.0),
            5.0,
            6.0,
            &cluster,
            &obj
        ));
        // Pushing from the other side ignores it.
        assert!(approach_is_clear(
            (29, 15),
            &Vector2::new(-1.0, 0.0),
            5.0,
            6.0,
            &cluster,
            &obj
        ));
    }

    #[test]
    fn segmented_scene_needs_no_action() {
        let k = Intrinsics::default();
        let mut d = Grid::new(k.width, k.height, 0.6);
        let mut l = LabelMask::zeros(k.width, k.height);
        for v in 40..60 {
            for u in 50..80 {
                d.set(u, v, 0.55);
                l.set(u, v, 1);
            }
        }
        let a = find_action(&l, &DepthMap::from_values(d), &k, &ActionConfig::default()).unwrap();
        assert!(a.is_none());
    }

    #[test]
    fn isolated_object_gets_inward_push() {
        let k = Intrinsics::default();
        let mut d = Grid::new(k.width, k.height, 0.6);
        for v in 40..60 {
            for u in 50..80 {
                d.set(u, v, 0.55);
            }
        }
        let l = LabelMask::zeros(k.width, k.height);
        let a = find_action(&l, &DepthMap::from_values(d), &k, &ActionConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(a.distance, 0.02);
        assert!((a.direction.norm() - 1.0).abs() < 1e-9);
        let to_center = Vector2::new(64.5, 49.5) - a.contact;
        assert!(to_center.dot(&a.direction) > 0.0);
        let (u, v) = (a.contact.x as usize, a.contact.y as usize);
        assert!((50..80).contains(&u) && (40..60).contains(&v));
    }

    #[test]
    fn elbow_rule() {
        assert_eq!(elbow(&[100.0, 62.5, 50.0], 0.5), 1);
        assert_eq!(elbow(&[100.0, 5.0, 4.0], 0.5), 2);
        assert_eq!(elbow(&[100.0, 10.0, 1.0], 0.5), 3);
        assert_eq!(elbow(&[0.0, 0.0], 0.5), 1);
    }

    #[test]
    fn action_record_format() {
        let a = PushAction {
            contact: Vector2::new(10.0, 20.0),
            contact_point: Vector3::zeros(),
            direction: Vector2::new(1.0, 0.0),
            distance: 0.02,
        };
        assert_eq!(a.to_record(), "push 10 20 1 0 0.02");
    }
}
