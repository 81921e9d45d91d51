//! Deterministic 2.5-D tabletop world.
//!
//! World coordinates have z up with the table top at `z = table_height`.
//! Objects are extruded simple polygons. The camera looks straight down; its
//! x axis is the world x axis rotated by the track yaw, and its y axis points
//! along the rotated world −y.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::action::PushAction;
use crate::error::{Error, Result};
use crate::flow::{DepthMap, FlowField, Intrinsics};
use crate::geometry::{rotation_about, Pose};
use crate::grid::Grid;
use crate::segmenter::LabelMask;

pub type Rgb = [u8; 3];

pub const TABLE_COLOR: Rgb = [235, 235, 230];

/// Rotation per centimeter of push applied when the push line misses the centroid.
pub const ROTATION_PER_CM: f64 = 0.02;
/// Fraction of the primary displacement passed on to a touched neighbor.
pub const SECONDARY_FRACTION: f64 = 0.4;
/// Perpendicular offset (m) of the push line from the centroid below which no rotation is applied.
const CENTERED_PUSH_TOL: f64 = 1e-3;
/// Depth agreement (m) between a reprojected surface point and the surface seen at t.
const VISIBILITY_TOL: f64 = 1e-6;

/// Rigid motion in the table plane: `p' = R(theta) p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Planar {
    pub theta: f64,
    pub translation: Vector2<f64>,
}

impl Planar {
    pub fn new(theta: f64, translation: Vector2<f64>) -> Self {
        Self { theta, translation }
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation() * p + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Planar) -> Planar {
        Planar::new(
            self.theta + other.theta,
            self.rotation() * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Planar {
        let rt = self.rotation().transpose();
        Planar::new(-self.theta, -(rt * self.translation))
    }

    /// Rotation by `angle` about `pivot`.
    pub fn about(pivot: &Vector2<f64>, angle: f64) -> Planar {
        let r = Planar::new(angle, Vector2::zeros());
        Planar::new(angle, pivot - r.apply(pivot))
    }

    /// The same motion as a 3-D rigid transform (rotation about world z).
    pub fn to_pose(&self) -> Pose {
        Pose::new(
            rotation_about(&Vector3::z(), self.theta),
            Vector3::new(self.translation.x, self.translation.y, 0.0),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: u32,
    /// Footprint vertices (m) at the reference pose.
    pub base: Vec<Vector2<f64>>,
    pub height: f64,
    pub color: Rgb,
    pub pose: Planar,
}

impl SceneObject {
    pub fn footprint(&self) -> Vec<Vector2<f64>> {
        self.base.iter().map(|p| self.pose.apply(p)).collect()
    }

    pub fn centroid(&self) -> Vector2<f64> {
        polygon_centroid(&self.footprint())
    }
}

/// Camera moving at constant velocity and yaw rate per time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraTrack {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub velocity: Vector3<f64>,
    pub yaw_rate: f64,
}

impl CameraTrack {
    pub fn fixed(position: Vector3<f64>) -> Self {
        Self {
            position,
            yaw: 0.0,
            velocity: Vector3::zeros(),
            yaw_rate: 0.0,
        }
    }

    pub fn center_at(&self, t: usize) -> Vector3<f64> {
        self.position + self.velocity * t as f64
    }

    /// Camera-to-world rotation at step `t`.
    fn rotation_at(&self, t: usize) -> Matrix3<f64> {
        let yaw = self.yaw + self.yaw_rate * t as f64;
        rotation_about(&Vector3::z(), yaw) * Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
    }

    /// World-to-camera transform at step `t`.
    pub fn pose_at(&self, t: usize) -> Pose {
        Pose::new(self.rotation_at(t), self.center_at(t)).inverse()
    }
}

impl Default for CameraTrack {
    fn default() -> Self {
        Self::fixed(Vector3::new(0.0, 0.0, 0.6))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub table_height: f64,
    pub objects: Vec<SceneObject>,
    pub camera: CameraTrack,
}

/// What a viewing ray hits first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Depth along the optical axis (m).
    pub depth: f64,
    pub point: Vector3<f64>,
    /// Index into `Scene::objects`, or `None` for the table.
    pub object: Option<usize>,
}

/// One rendered camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rgb: Grid<Rgb>,
    pub depth: DepthMap,
    pub labels: LabelMask,
}

struct Prism {
    polygon: Vec<Vector2<f64>>,
    bottom: f64,
    top: f64,
}

fn prisms(scene: &Scene) -> Vec<Prism> {
    scene
        .objects
        .iter()
        .map(|o| Prism {
            polygon: o.footprint(),
            bottom: scene.table_height,
            top: scene.table_height + o.height,
        })
        .collect()
}

impl Scene {
    pub fn new(table_height: f64, objects: Vec<SceneObject>, camera: CameraTrack) -> Result<Self> {
        let s = Self {
            table_height,
            objects,
            camera,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if o.id == 0 || !ids.insert(o.id) {
                return Err(Error::Config(format!(
                    "object id {} is zero or duplicated",
                    o.id
                )));
            }
            if !(o.height > 0.0) {
                return Err(Error::Config(format!(
                    "object {} has non-positive height",
                    o.id
                )));
            }
            if !is_simple_polygon(&o.base) {
                return Err(Error::Config(format!(
                    "object {} footprint is not a simple polygon",
                    o.id
                )));
            }
        }
        if !(self.camera.position.z > self.table_height) {
            return Err(Error::Config("camera must start above the table".into()));
        }
        Ok(())
    }

    pub fn object_index(&self, id: u32) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    /// Reads the text scene description from a file.
    pub fn load(path: &Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path)?;
        Scene::parse(&text)
    }

    /// Parses the text scene description:
    ///
    /// ```text
    /// table <height>
    /// <id> <height> <r,g,b> x1 y1 x2 y2 x3 y3 ...
    /// camera <x> <y> <z> <yaw> [<vx> <vy> <vz> <yaw_rate>]
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Scene> {
        let mut table = None;
        let mut objects = Vec::new();
        let mut camera = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| Error::SceneParse { line, msg };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = content.split_whitespace().collect();
            let nums = |ts: &[&str]| -> Result<Vec<f64>> {
                ts.iter()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| err(format!("bad number {t:?}")))
                    })
                    .collect()
            };
            match tokens[0] {
                "table" => {
                    let v = nums(&tokens[1..])?;
                    if v.len() != 1 {
                        return Err(err("expected `table <height>`".into()));
                    }
                    table = Some(v[0]);
                }
                "camera" => {
                    let v = nums(&tokens[1..])?;
                    if v.len() != 4 && v.len() != 8 {
                        return Err(err("expected `camera x y z yaw [vx vy vz yaw_rate]`".into()));
                    }
                    let mut track = CameraTrack::fixed(Vector3::new(v[0], v[1], v[2]));
                    track.yaw = v[3];
                    if v.len() == 8 {
                        track.velocity = Vector3::new(v[4], v[5], v[6]);
                        track.yaw_rate = v[7];
                    }
                    camera = Some(track);
                }
                id => {
                    let id: u32 = id
                        .parse()
                        .map_err(|_| err(format!("unknown record {id:?}")))?;
                    if tokens.len() < 3 {
                        return Err(err("expected `id height color x1 y1 ...`".into()));
                    }
                    let height = nums(&tokens[1..2])?[0];
                    let color = parse_color(tokens[2])
                        .ok_or_else(|| err(format!("bad color {:?}", tokens[2])))?;
                    let coords = nums(&tokens[3..])?;
                    if coords.len() < 6 || coords.len() % 2 != 0 {
                        return Err(err("polygon needs at least 3 vertex pairs".into()));
                    }
                    let base = coords.chunks(2).map(|c| Vector2::new(c[0], c[1])).collect();
                    objects.push(SceneObject {
                        id,
                        base,
                        height,
                        color,
                        pose: Planar::default(),
                    });
                }
            }
        }
        let table_height = table.ok_or(Error::SceneParse {
            line: 0,
            msg: "missing `table` record".into(),
        })?;
        let camera = camera
            .unwrap_or_else(|| CameraTrack::fixed(Vector3::new(0.0, 0.0, table_height + 0.6)));
        Scene::new(table_height, objects, camera).map_err(|e| Error::SceneParse {
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Text form accepted by [`Scene::parse`]; objects are written at their current pose.
    pub fn to_text(&self) -> String {
        let mut s = format!("table {}\n", self.table_height);
        for o in &self.objects {
            s.push_str(&format!(
                "{} {} {},{},{}",
                o.id, o.height, o.color[0], o.color[1], o.color[2]
            ));
            for p in o.footprint() {
                s.push_str(&format!(" {} {}", p.x, p.y));
            }
            s.push('\n');
        }
        let c = &self.camera;
        s.push_str(&format!(
            "camera {} {} {} {} {} {} {} {}\n",
            c.position.x,
            c.position.y,
            c.position.z,
            c.yaw,
            c.velocity.x,
            c.velocity.y,
            c.velocity.z,
            c.yaw_rate
        ));
        s
    }

    /// Casts the ray through a (sub-)pixel from the camera at step `t`.
    pub fn cast(&self, t: usize, pixel: &Vector2<f64>, k: &Intrinsics) -> Option<Hit> {
        let prisms = prisms(self);
        cast_ray(self, &prisms, &self.camera.pose_at(t), pixel, k)
    }

    pub fn render(&self, t: usize, k: &Intrinsics) -> Frame {
        render(self, t, k)
    }
}

fn parse_color(s: &str) -> Option<Rgb> {
    if let Some(hex) = s.strip_prefix('#') {
        if hex.len() != 6 {
            return None;
        }
        let c = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).ok();
        return Some([c(0)?, c(2)?, c(4)?]);
    }
    let parts: Vec<u8> = s
        .split(',')
        .map(|p| p.parse().ok())
        .collect::<Option<_>>()?;
    <[u8; 3]>::try_from(parts).ok()
}

fn cast_ray(
    scene: &Scene,
    prisms: &[Prism],
    cam: &Pose,
    pixel: &Vector2<f64>,
    k: &Intrinsics,
) -> Option<Hit> {
    let cam_to_world = cam.inverse();
    let origin = cam_to_world.translation;
    let dir = cam_to_world.rotation * k.ray(pixel);
    let mut best: Option<(f64, Option<usize>)> = None;
    let mut consider = |s: f64, obj: Option<usize>| {
        if s > 0.0 && best.is_none_or(|(b, _)| s < b) {
            best = Some((s, obj));
        }
    };
    if dir.z < 0.0 {
        consider((scene.table_height - origin.z) / dir.z, None);
    }
    let o2 = Vector2::new(origin.x, origin.y);
    let d2 = Vector2::new(dir.x, dir.y);
    for (i, p) in prisms.iter().enumerate() {
        if dir.z != 0.0 {
            let s = (p.top - origin.z) / dir.z;
            if s > 0.0 {
                let q = o2 + d2 * s;
                if point_in_polygon(&q, &p.polygon) {
                    consider(s, Some(i));
                }
            }
        }
        let n = p.polygon.len();
        for j in 0..n {
            let a = p.polygon[j];
            let e = p.polygon[(j + 1) % n] - a;
            // o2 + s d2 = a + λ e
            let den = d2.x * (-e.y) - d2.y * (-e.x);
            if den.abs() < 1e-15 {
                continue;
            }
            let r = a - o2;
            let s = (r.x * (-e.y) - r.y * (-e.x)) / den;
            let lambda = (d2.x * r.y - d2.y * r.x) / den;
            if !(0.0..=1.0).contains(&lambda) || s <= 0.0 {
                continue;
            }
            let z = origin.z + dir.z * s;
            if z >= p.bottom && z <= p.top {
                consider(s, Some(i));
            }
        }
    }
    best.map(|(s, object)| Hit {
        depth: s,
        point: origin + dir * s,
        object,
    })
}

pub fn render(scene: &Scene, t: usize, k: &Intrinsics) -> Frame {
    let prisms = prisms(scene);
    let cam = scene.camera.pose_at(t);
    let (w, h) = (k.width, k.height);
    let mut rgb = Grid::new(w, h, [0u8; 3]);
    let mut depth = Grid::new(w, h, 0.0);
    let mut labels = LabelMask::zeros(w, h);
    for v in 0..h {
        for u in 0..w {
            let Some(hit) = cast_ray(scene, &prisms, &cam, &Vector2::new(u as f64, v as f64), k)
            else {
                continue;
            };
            depth.set(u, v, hit.depth);
            match hit.object {
                Some(i) => {
                    rgb.set(u, v, scene.objects[i].color);
                    labels.set(u, v, scene.objects[i].id);
                }
                None => rgb.set(u, v, TABLE_COLOR),
            }
        }
    }
    Frame {
        rgb,
        depth: DepthMap::from_values(depth),
        labels,
    }
}

/// Ground-truth flow between the camera at `t − 1` viewing `prev` and the
/// camera at `t` viewing `curr`.
pub fn gt_flow(prev: &Scene, curr: &Scene, t: usize, k: &Intrinsics) -> FlowField {
    assert!(t >= 1, "gt_flow needs t >= 1");
    gt_flow_between(
        prev,
        &prev.camera.pose_at(t - 1),
        curr,
        &curr.camera.pose_at(t),
        k,
    )
}

/// Ground-truth flow for explicit camera poses. Each visible surface point is
/// moved with its object (table points stay), reprojected, and kept only when
/// it lands in the image and is the surface seen there at `t`.
pub fn gt_flow_between(
    prev: &Scene,
    cam_prev: &Pose,
    curr: &Scene,
    cam_curr: &Pose,
    k: &Intrinsics,
) -> FlowField {
    let prisms_prev = prisms(prev);
    let prisms_curr = prisms(curr);
    let motions: Vec<Option<Pose>> = prev
        .objects
        .iter()
        .map(|o| {
            curr.objects
                .iter()
                .find(|c| c.id == o.id)
                .map(|c| c.pose.compose(&o.pose.inverse()).to_pose())
        })
        .collect();
    let (w, h) = (k.width, k.height);
    let mut out = FlowField::invalid(w, h);
    for v in 0..h {
        for u in 0..w {
            let pixel = Vector2::new(u as f64, v as f64);
            let Some(hit) = cast_ray(prev, &prisms_prev, cam_prev, &pixel, k) else {
                continue;
            };
            let moved = match hit.object {
                None => hit.point,
                Some(i) => match &motions[i] {
                    Some(m) => m.transform_point(&hit.point),
                    None => continue,
                },
            };
            let pc = cam_curr.transform_point(&moved);
            let Some(q) = k.project(&pc) else { continue };
            if !k.in_bounds(&q) {
                continue;
            }
            match cast_ray(curr, &prisms_curr, cam_curr, &q, k) {
                Some(seen) if (seen.depth - pc.z).abs() <= VISIBILITY_TOL => {
                    out.set(u, v, Some([q.x - pixel.x, q.y - pixel.y]));
                }
                _ => {}
            }
        }
    }
    out
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` (px) to both
/// components of every valid flow vector.
pub fn add_flow_noise<R: Rng>(flow: &FlowField, sigma: f64, rng: &mut R) -> FlowField {
    if !(sigma > 0.0) {
        return flow.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let mut out = flow.clone();
    for v in 0..flow.height() {
        for u in 0..flow.width() {
            if let Some(f) = flow.at(u, v) {
                out.set(
                    u,
                    v,
                    Some([f[0] + normal.sample(rng), f[1] + normal.sample(rng)]),
                );
            }
        }
    }
    out
}

/// Simulates a push as `sub_steps` equal increments, returning the scene after
/// each increment.
///
/// The contacted object translates along the push direction and, when the push
/// line misses its centroid, rotates by [`ROTATION_PER_CM`] about the centroid
/// with the sign of the torque. A neighbor whose footprint the pushed object
/// overlaps after an increment moves [`SECONDARY_FRACTION`] of the increment
/// along the contact normal and rotates about the contact point.
pub fn apply_push(
    scene: &Scene,
    action: &PushAction,
    sub_steps: usize,
    t: usize,
    k: &Intrinsics,
) -> Result<Vec<Scene>> {
    if sub_steps == 0 {
        return Err(Error::Config("sub_steps must be at least 1".into()));
    }
    let (cu, cv) = (
        action.contact.x.round() as usize,
        action.contact.y.round() as usize,
    );
    let hit = scene
        .cast(t, &action.contact, k)
        .filter(|h| h.object.is_some())
        .ok_or(Error::ContactMiss(cu, cv))?;
    let target = hit.object.expect("filtered above");

    // Push direction on the horizontal plane through the contact point.
    let cam = scene.camera.pose_at(t);
    let ahead = action.contact + action.direction;
    let cam_to_world = cam.inverse();
    let ray = cam_to_world.rotation * k.ray(&ahead);
    let origin = cam_to_world.translation;
    let s = (hit.point.z - origin.z) / ray.z;
    let ahead_world = origin + ray * s;
    let dir = Vector2::new(ahead_world.x - hit.point.x, ahead_world.y - hit.point.y).normalize();
    let contact = Vector2::new(hit.point.x, hit.point.y);

    let step = action.distance / sub_steps as f64;
    let mut current = scene.clone();
    let mut out = Vec::with_capacity(sub_steps);
    let mut contact = contact;
    for _ in 0..sub_steps {
        let obj = &current.objects[target];
        let c = obj.centroid();
        let lever = contact - c;
        let torque = lever.x * dir.y - lever.y * dir.x;
        let angle = if torque.abs() > CENTERED_PUSH_TOL {
            torque.signum() * ROTATION_PER_CM * step * 100.0
        } else {
            0.0
        };
        let motion = Planar::new(0.0, dir * step).compose(&Planar::about(&c, angle));
        current.objects[target].pose = motion.compose(&obj.pose);
        contact = motion.apply(&contact);

        let pushed = current.objects[target].footprint();
        let pushed_c = current.objects[target].centroid();
        for j in 0..current.objects.len() {
            if j == target {
                continue;
            }
            let other = current.objects[j].footprint();
            let Some(pivot) = overlap_point(&pushed, &other) else {
                continue;
            };
            let oc = polygon_centroid(&other);
            let n = (oc - pushed_c).try_normalize(1e-12).unwrap_or(dir);
            let shift = step * SECONDARY_FRACTION;
            let arm = pivot - oc;
            let tq = arm.x * n.y - arm.y * n.x;
            let ang = if tq.abs() > CENTERED_PUSH_TOL {
                tq.signum() * ROTATION_PER_CM * shift * 100.0
            } else {
                0.0
            };
            let m = Planar::new(0.0, n * shift).compose(&Planar::about(&pivot, ang));
            current.objects[j].pose = m.compose(&current.objects[j].pose);
        }
        out.push(current.clone());
    }
    Ok(out)
}

/// Frames, ground-truth flow and camera poses of a simulated sequence.
#[derive(Debug, Clone, Default)]
pub struct EpisodeRecord {
    pub frames: Vec<Frame>,
    /// `flows[i]` is the flow from frame `i` to frame `i + 1`.
    pub flows: Vec<FlowField>,
    /// World-to-camera poses.
    pub poses: Vec<Pose>,
}

/// Generates a random tabletop with `n` non-overlapping convex objects in view
/// of the default camera.
pub fn random_scene(seed: u64, n: usize) -> Scene {
    const PALETTE: [Rgb; 8] = [
        [200, 40, 40],
        [40, 160, 60],
        [50, 70, 200],
        [220, 180, 30],
        [150, 60, 170],
        [30, 170, 180],
        [230, 120, 40],
        [110, 110, 110],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut attempts = 0;
    while objects.len() < n {
        attempts += 1;
        assert!(attempts < 10_000, "could not place {n} objects");
        let sides = rng.random_range(4..=6usize);
        let radius = rng.random_range(0.04..0.06);
        let center = Vector2::new(rng.random_range(-0.16..0.16), rng.random_range(-0.11..0.11));
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let stretch = rng.random_range(0.75..1.0);
        let base: Vec<Vector2<f64>> = (0..sides)
            .map(|i| {
                let a = phase + std::f64::consts::TAU * i as f64 / sides as f64;
                center + Vector2::new(a.cos() * radius, a.sin() * radius * stretch)
            })
            .collect();
        let gap = 0.015;
        let clear = objects.iter().all(|o| {
            let oc = o.centroid();
            let orad = o
                .footprint()
                .iter()
                .map(|p| (p - oc).norm())
                .fold(0.0, f64::max);
            (oc - center).norm() > orad + radius + gap
        });
        if !clear {
            continue;
        }
        let id = objects.len() as u32 + 1;
        objects.push(SceneObject {
            id,
            base,
            height: rng.random_range(0.03..0.09),
            color: PALETTE[(id as usize - 1) % PALETTE.len()],
            pose: Planar::default(),
        });
    }
    Scene {
        table_height: 0.0,
        objects,
        camera: CameraTrack::default(),
    }
}

pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

pub fn polygon_centroid(poly: &[Vector2<f64>]) -> Vector2<f64> {
    let area = polygon_area(poly);
    let n = poly.len();
    if area.abs() < 1e-15 {
        return poly.iter().sum::<Vector2<f64>>() / n as f64;
    }
    let mut c = Vector2::zeros();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        c += (a + b) * (a.x * b.y - b.x * a.y);
    }
    c / (6.0 * area)
}

/// Even-odd rule.
pub fn point_in_polygon(p: &Vector2<f64>, poly: &[Vector2<f64>]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn orient(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> f64 {
    (b - a).perp(&(c - a))
}

/// Proper or touching intersection of closed segments.
pub fn segments_intersect(
    a: &Vector2<f64>,
    b: &Vector2<f64>,
    c: &Vector2<f64>,
    d: &Vector2<f64>,
) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: &Vector2<f64>, q: &Vector2<f64>, r: &Vector2<f64>, o: f64| {
        o == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

/// At least three distinct vertices, nonzero area, and no two non-adjacent edges touching.
pub fn is_simple_polygon(poly: &[Vector2<f64>]) -> bool {
    let n = poly.len();
    if n < 3 || poly.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return false;
    }
    if polygon_area(poly).abs() < 1e-12 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(&poly[i], &poly[(i + 1) % n], &poly[j], &poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// A representative point of the overlap of two polygons, or `None` when they
/// are disjoint: the mean of the vertices of each lying inside the other and of
/// edge crossings.
pub fn overlap_point(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> Option<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = Vec::new();
    pts.extend(a.iter().filter(|p| point_in_polygon(p, b)));
    pts.extend(b.iter().filter(|p| point_in_polygon(p, a)));
    for i in 0..a.len() {
        let (p, q) = (a[i], a[(i + 1) % a.len()]);
        for j in 0..b.len() {
            let (r, s) = (b[j], b[(j + 1) % b.len()]);
            if segments_intersect(&p, &q, &r, &s) {
                let den = (q - p).perp(&(s - r));
                if den.abs() > 1e-15 {
                    let t = (r - p).perp(&(s - r)) / den;
                    pts.push(p + (q - p) * t);
                }
            }
        }
    }
    if pts.is_empty() {
        None
    } else {
        Some(pts.iter().sum::<Vector2<f64>>() / pts.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::expected_flow;

    fn square(id: u32, cx: f64, cy: f64, half: f64, height: f64) -> SceneObject {
        SceneObject {
            id,
            base: vec![
                Vector2::new(cx - half, cy - half),
                Vector2::new(cx + half, cy - half),
                Vector2::new(cx + half, cy + half),
                Vector2::new(cx - half, cy + half),
            ],
            height,
            color: [200, 0, 0],
            pose: Planar::default(),
        }
    }

    fn push(u: f64, v: f64, du: f64, dv: f64, d: f64) -> PushAction {
        PushAction {
            contact: Vector2::new(u, v),
            contact_point: Vector3::zeros(),
            direction: Vector2::new(du, dv).normalize(),
            distance: d,
        }
    }

    #[test]
    fn empty_scene_renders_table() {
        let k = Intrinsics::default();
        let s = Scene::new(0.0, vec![], CameraTrack::default()).unwrap();
        let f = s.render(0, &k);
        assert_eq!(f.labels.labeled_count(), 0);
        for &d in f.depth.values.as_slice() {
            assert!((d - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_box_projects_to_rectangle() {
        let k = Intrinsics::default();
        let s = Scene::new(
            0.0,
            vec![square(1, 0.0, 0.0, 0.05, 0.1)],
            CameraTrack::default(),
        )
        .unwrap();
        let f = s.render(0, &k);
        // Top at 0.5 m: half-width 0.05 m spans 12 px around the principal point.
        for v in 0..k.height {
            for u in 0..k.width {
                let x = (u as f64 - k.cx) * 0.5 / k.fx;
                let y = (v as f64 - k.cy) * 0.5 / k.fy;
                let inside = x.abs() < 0.05 && y.abs() < 0.05;
                assert_eq!(f.labels.get(u, v) == 1, inside, "pixel ({u}, {v})");
                let d = f.depth.at(u, v).unwrap();
                assert!((d - if inside { 0.5 } else { 0.6 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn camera_axes() {
        // A point at world +x appears right of center, world +y appears above center.
        let cam = CameraTrack::default().pose_at(0);
        let k = Intrinsics::default();
        let px = k
            .project(&cam.transform_point(&Vector3::new(0.1, 0.0, 0.0)))
            .unwrap();
        let py = k
            .project(&cam.transform_point(&Vector3::new(0.0, 0.1, 0.0)))
            .unwrap();
        assert!(px.x > k.cx && (px.y - k.cy).abs() < 1e-12);
        assert!(py.y < k.cy && (py.x - k.cx).abs() < 1e-12);
    }

    #[test]
    fn rendering_is_deterministic() {
        let k = Intrinsics::default();
        let s = random_scene(3, 4);
        assert_eq!(s.render(2, &k), s.render(2, &k));
    }

    #[test]
    fn static_scene_has_zero_flow() {
        let k = Intrinsics::default();
        let s = random_scene(1, 3);
        let f = gt_flow(&s, &s, 1, &k);
        assert!(f.valid.count() > k.width * k.height * 9 / 10);
        assert!(f.max_abs() < 1e-9);
    }

    #[test]
    fn translated_object_flow() {
        // fx = 200, top at 0.5 m, 1 cm translation along camera x: 4 px.
        let k = Intrinsics::new(200.0, 200.0, 79.5, 59.5, 160, 120).unwrap();
        let prev = Scene::new(
            0.0,
            vec![square(1, 0.0, 0.0, 0.04, 0.1)],
            CameraTrack::default(),
        )
        .unwrap();
        let mut curr = prev.clone();
        curr.objects[0].pose = Planar::new(0.0, Vector2::new(0.01, 0.0));
        let f = gt_flow(&prev, &curr, 1, &k);
        let labels = prev.render(0, &k).labels;
        let mut checked = 0;
        for v in 0..k.height {
            for u in 0..k.width {
                match (labels.get(u, v), f.at(u, v)) {
                    (1, Some(o)) => {
                        assert!((o[0] - 4.0).abs() < 1e-9 && o[1].abs() < 1e-9);
                        checked += 1;
                    }
                    (0, Some(o)) => assert!(o[0].abs() < 1e-12 && o[1].abs() < 1e-12),
                    _ => {}
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn camera_motion_flow_matches_expected_flow() {
        let k = Intrinsics::default();
        let mut s = random_scene(7, 4);
        s.camera.velocity = Vector3::new(0.002, -0.001, 0.0005);
        s.camera.yaw_rate = 0.003;
        let o = gt_flow(&s, &s, 1, &k);
        let depth = s.render(0, &k).depth;
        let motion = s.camera.pose_at(1).compose(&s.camera.pose_at(0).inverse());
        let e = expected_flow(&depth, &motion, &k);
        let mut n = 0;
        for v in 0..k.height {
            for u in 0..k.width {
                if let (Some(a), Some(b)) = (o.at(u, v), e.at(u, v)) {
                    assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
                    n += 1;
                }
            }
        }
        assert!(n > 15_000);
    }

    #[test]
    fn free_push_translates_only_target() {
        let k = Intrinsics::default();
        let s = Scene::new(
            0.0,
            vec![
                square(1, 0.0, 0.0, 0.04, 0.05),
                square(2, 0.2, 0.0, 0.03, 0.05),
            ],
            CameraTrack::default(),
        )
        .unwrap();
        // Left edge of object 1 at x = −0.04, top at 0.55 m: u ≈ 79.5 − 120·0.04/0.55.
        let u = (k.cx - 120.0 * 0.039 / 0.55).round();
        let steps = apply_push(&s, &push(u, k.cy, 1.0, 0.0, 0.02), 10, 0, &k).unwrap();
        assert_eq!(steps.len(), 10);
        let first = steps[0].objects[0].pose;
        assert!((first.translation - Vector2::new(0.002, 0.0)).norm() < 1e-9);
        assert!(first.theta.abs() < 0.01);
        assert_eq!(steps[9].objects[1], s.objects[1]);
    }

    #[test]
    fn sub_step_count_does_not_change_final_pose() {
        let k = Intrinsics::default();
        let s = Scene::new(
            0.0,
            vec![square(1, 0.0, 0.0, 0.04, 0.05)],
            CameraTrack::default(),
        )
        .unwrap();
        let a = push(k.cx - 8.0, k.cy - 4.0, 1.0, 0.3, 0.02);
        let one = apply_push(&s, &a, 1, 0, &k).unwrap();
        let ten = apply_push(&s, &a, 10, 0, &k).unwrap();
        let (p1, p10) = (one[0].objects[0].pose, ten[9].objects[0].pose);
        assert!((p1.theta - p10.theta).abs() < 1e-12);
        assert!((p1.translation - p10.translation).norm() < 1e-12);
        assert!(p1.theta.abs() > 0.0);
    }

    #[test]
    fn contact_propagates_with_smaller_motion() {
        let k = Intrinsics::default();
        let s = Scene::new(
            0.0,
            vec![
                square(1, 0.0, 0.0, 0.04, 0.05),
                square(2, 0.0805, 0.01, 0.04, 0.05),
            ],
            CameraTrack::default(),
        )
        .unwrap();
        let u = (k.cx - 120.0 * 0.039 / 0.55).round();
        let steps = apply_push(&s, &push(u, k.cy, 1.0, 0.0, 0.02), 10, 0, &k).unwrap();
        let a = steps[9].objects[0].pose;
        let b = steps[9].objects[1].pose;
        assert!(b.translation.norm() > 0.0);
        assert!(b.translation.norm() < a.translation.norm());
        assert!((a.theta - b.theta).abs() > 1e-6 || (a.translation - b.translation).norm() > 1e-3);
    }

    #[test]
    fn contact_on_table_is_miss() {
        let k = Intrinsics::default();
        let s = Scene::new(
            0.0,
            vec![square(1, 0.0, 0.0, 0.04, 0.05)],
            CameraTrack::default(),
        )
        .unwrap();
        let r = apply_push(&s, &push(2.0, 2.0, 1.0, 0.0, 0.02), 10, 0, &k);
        assert!(matches!(r, Err(Error::ContactMiss(2, 2))));
    }

    #[test]
    fn scene_text_roundtrip() {
        let s = random_scene(5, 4);
        let parsed = Scene::parse(&s.to_text()).unwrap();
        assert_eq!(parsed.objects.len(), 4);
        let k = Intrinsics::default();
        assert_eq!(parsed.render(0, &k), s.render(0, &k));
    }

    #[test]
    fn scene_parse_errors() {
        assert!(matches!(
            Scene::parse("1 0.05 1,2,3 0 0 1 0 0 1"),
            Err(Error::SceneParse { .. })
        ));
        assert!(matches!(
            Scene::parse("table 0\n1 0.05 1,2,3 0 0 1"),
            Err(Error::SceneParse { line: 2, .. })
        ));
        assert!(matches!(
            Scene::parse("table 0\nbox 1"),
            Err(Error::SceneParse { line: 2, .. })
        ));
        // Self-intersecting bow tie.
        assert!(Scene::parse("table 0\n1 0.05 #ff0000 0 0 1 1 1 0 0 1").is_err());
    }

    #[test]
    fn polygon_helpers() {
        let sq = square(1, 0.0, 0.0, 1.0, 1.0).base;
        assert!((polygon_area(&sq) - 4.0).abs() < 1e-12);
        assert!(polygon_centroid(&sq).norm() < 1e-12);
        assert!(point_in_polygon(&Vector2::new(0.5, -0.5), &sq));
        assert!(!point_in_polygon(&Vector2::new(1.5, 0.0), &sq));
        let shifted: Vec<_> = sq.iter().map(|p| p + Vector2::new(1.5, 0.0)).collect();
        assert!(overlap_point(&sq, &shifted).is_some());
        let far: Vec<_> = sq.iter().map(|p| p + Vector2::new(3.0, 0.0)).collect();
        assert!(overlap_point(&sq, &far).is_none());
    }

    #[test]
    fn planar_compose_inverse() {
        let a = Planar::new(0.3, Vector2::new(1.0, -2.0));
        let id = a.compose(&a.inverse());
        assert!(id.theta.abs() < 1e-15 && id.translation.norm() < 1e-12);
        let p = Vector2::new(0.4, 0.7);
        let about = Planar::about(&p, 1.0);
        assert!((about.apply(&p) - p).norm() < 1e-12);
    }

    #[test]
    fn flow_noise_is_seeded() {
        let f = FlowField::zeros(20, 10);
        let a = add_flow_noise(&f, 0.2, &mut ChaCha8Rng::seed_from_u64(1));
        let b = add_flow_noise(&f, 0.2, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.max_abs() > 0.0);
    }
}
