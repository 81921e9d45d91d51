//! The interactive episode loop: choose a push, simulate it frame by frame,
//! update the segmentation on every frame pair, and score the mask after each
//! interaction.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::action::{find_action, ActionConfig, PushAction};
use crate::clustering::{BandwidthMode, CovarianceMode};
use crate::error::{Error, Result};
use crate::flow::{FlowField, Intrinsics};
use crate::io;
use crate::metrics::{evaluate, format_report, ReportRow};
use crate::segmenter::{FramePairInput, LabelMask, PipelineConfig, SegmentUpdate, Segmenter};
use crate::simulator::{add_flow_noise, apply_push, gt_flow_between, render, Frame, Scene};

/// Every tunable constant of an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub max_interactions: usize,
    pub sub_steps: usize,
    pub seed: u64,
    /// Standard deviation (px) of Gaussian noise added to the observed flow.
    pub flow_noise: f64,
    pub intrinsics: Intrinsics,
    pub pipeline: PipelineConfig,
    pub action: ActionConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            max_interactions: 5,
            sub_steps: 10,
            seed: 0,
            flow_noise: 0.0,
            intrinsics: Intrinsics::default(),
            pipeline: PipelineConfig::default(),
            action: ActionConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        if self.max_interactions < 1 {
            return Err(Error::Config("max_interactions must be at least 1".into()));
        }
        if self.sub_steps < 2 {
            return Err(Error::Config("sub_steps must be at least 2".into()));
        }
        if !(self.flow_noise >= 0.0) {
            return Err(Error::Config("flow_noise must be non-negative".into()));
        }
        self.intrinsics.validate()?;
        self.pipeline.validate()?;
        self.action.validate()
    }

    /// Sets one value by key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.pipeline;
        let a = &mut self.action;
        let k = &mut self.intrinsics;
        match key {
            "interactions" => self.max_interactions = parse(key, value)?,
            "sub_steps" => self.sub_steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "flow_noise" => self.flow_noise = parse(key, value)?,
            "fx" => k.fx = parse(key, value)?,
            "fy" => k.fy = parse(key, value)?,
            "cx" => k.cx = parse(key, value)?,
            "cy" => k.cy = parse(key, value)?,
            "width" => k.width = parse(key, value)?,
            "height" => k.height = parse(key, value)?,
            "n_samples" => p.sampler.n_samples = parse(key, value)?,
            "d_a" => p.sampler.d_a = parse(key, value)?,
            "min_separation" => p.sampler.min_separation = parse(key, value)?,
            "tau_motion" => p.sampler.tau_motion = parse(key, value)?,
            "expansion" => p.cluster.expansion = parse(key, value)?,
            "inflation" => p.cluster.inflation = parse(key, value)?,
            "prune_threshold" => p.cluster.prune_threshold = parse(key, value)?,
            "mcl_max_iters" => p.cluster.max_iters = parse(key, value)?,
            "mcl_tol" => p.cluster.convergence_tol = parse(key, value)?,
            "cov_regularizer" => p.cluster.cov_regularizer = parse(key, value)?,
            "covariance" => {
                p.cluster.covariance_mode = match value.trim() {
                    "sample" => CovarianceMode::Sample,
                    "nearest_neighbor" => CovarianceMode::NearestNeighbor,
                    _ => {
                        return Err(Error::Config(format!(
                            "covariance must be sample|nearest_neighbor, got {value:?}"
                        )))
                    }
                }
            }
            "bandwidth" => {
                let v = value.trim();
                p.cluster.bandwidth_mode = if v == "median" {
                    BandwidthMode::Median
                } else if let Some(rest) = v.strip_prefix("neighbor:") {
                    let (kk, scale) = rest
                        .split_once(':')
                        .ok_or_else(|| Error::Config("bandwidth neighbor:<k>:<scale>".into()))?;
                    BandwidthMode::NeighborMedian {
                        k: parse(key, kk)?,
                        scale: parse(key, scale)?,
                    }
                } else if let Some(x) = v.strip_prefix("fixed:") {
                    BandwidthMode::Fixed(parse(key, x)?)
                } else {
                    return Err(Error::Config(format!(
                        "bandwidth must be median|neighbor:<k>:<scale>|fixed:<sigma>, got {value:?}"
                    )));
                }
            }
            "tau_flow" => p.segmenter.tau_flow = parse(key, value)?,
            "fill_connectivity" => p.segmenter.fill_connectivity = parse(key, value)?,
            "min_region" => p.segmenter.min_region = parse(key, value)?,
            "overlap_merge_fraction" => p.segmenter.overlap_merge_fraction = parse(key, value)?,
            "flow_median_radius" => p.flow_median_radius = parse(key, value)?,
            "flow_median_depth_tol" => p.flow_median_depth_tol = parse(key, value)?,
            "d_push" => a.d_push = parse(key, value)?,
            "l_act" => a.l_act = parse(key, value)?,
            "footprint_width" => a.footprint_width = parse(key, value)?,
            "k_max" => a.k_max = parse(key, value)?,
            "elbow_ratio" => a.elbow_ratio = parse(key, value)?,
            "kmeans_restarts" => a.kmeans_restarts = parse(key, value)?,
            "min_unsegmented_area" => a.min_unsegmented_area = parse(key, value)?,
            "ransac_iterations" => a.ransac.iterations = parse(key, value)?,
            "ransac_threshold" => a.ransac.inlier_threshold = parse(key, value)?,
            "ransac_min_inliers" => a.ransac.min_inlier_fraction = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| e.context(format!("line {}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Settings> {
        let mut s = Settings::default();
        s.apply_text(&fs::read_to_string(path)?)?;
        Ok(s)
    }

    /// All settings as `key=value` lines accepted by [`Settings::apply_text`].
    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let a = &self.action;
        let k = &self.intrinsics;
        let bandwidth = match p.cluster.bandwidth_mode {
            BandwidthMode::Median => "median".to_string(),
            BandwidthMode::NeighborMedian { k, scale } => format!("neighbor:{k}:{scale}"),
            BandwidthMode::Fixed(x) => format!("fixed:{x}"),
        };
        let covariance = match p.cluster.covariance_mode {
            CovarianceMode::Sample => "sample",
            CovarianceMode::NearestNeighbor => "nearest_neighbor",
        };
        let entries: Vec<(&str, String)> = vec![
            ("interactions", self.max_interactions.to_string()),
            ("sub_steps", self.sub_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("flow_noise", self.flow_noise.to_string()),
            ("fx", k.fx.to_string()),
            ("fy", k.fy.to_string()),
            ("cx", k.cx.to_string()),
            ("cy", k.cy.to_string()),
            ("width", k.width.to_string()),
            ("height", k.height.to_string()),
            ("n_samples", p.sampler.n_samples.to_string()),
            ("d_a", p.sampler.d_a.to_string()),
            ("min_separation", p.sampler.min_separation.to_string()),
            ("tau_motion", p.sampler.tau_motion.to_string()),
            ("expansion", p.cluster.expansion.to_string()),
            ("inflation", p.cluster.inflation.to_string()),
            ("prune_threshold", p.cluster.prune_threshold.to_string()),
            ("mcl_max_iters", p.cluster.max_iters.to_string()),
            ("mcl_tol", p.cluster.convergence_tol.to_string()),
            ("cov_regularizer", p.cluster.cov_regularizer.to_string()),
            ("covariance", covariance.to_string()),
            ("bandwidth", bandwidth),
            ("tau_flow", p.segmenter.tau_flow.to_string()),
            (
                "fill_connectivity",
                p.segmenter.fill_connectivity.to_string(),
            ),
            ("min_region", p.segmenter.min_region.to_string()),
            (
                "overlap_merge_fraction",
                p.segmenter.overlap_merge_fraction.to_string(),
            ),
            ("flow_median_radius", p.flow_median_radius.to_string()),
            ("flow_median_depth_tol", p.flow_median_depth_tol.to_string()),
            ("d_push", a.d_push.to_string()),
            ("l_act", a.l_act.to_string()),
            ("footprint_width", a.footprint_width.to_string()),
            ("k_max", a.k_max.to_string()),
            ("elbow_ratio", a.elbow_ratio.to_string()),
            ("kmeans_restarts", a.kmeans_restarts.to_string()),
            ("min_unsegmented_area", a.min_unsegmented_area.to_string()),
            ("ransac_iterations", a.ransac.iterations.to_string()),
            ("ransac_threshold", a.ransac.inlier_threshold.to_string()),
            (
                "ransac_min_inliers",
                a.ransac.min_inlier_fraction.to_string(),
            ),
        ];
        let mut s = String::new();
        for (key, value) in entries {
            let _ = writeln!(s, "{key}={value}");
        }
        s
    }

    /// Action settings for interaction `i`, with seeds derived from the episode seed.
    fn action_for(&self, i: usize) -> ActionConfig {
        let mut a = self.action;
        a.seed = self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        a.ransac.seed = a.seed ^ 0x5EED;
        a
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub scene: Scene,
    pub scene_name: String,
    pub settings: Settings,
    pub out_dir: Option<PathBuf>,
    /// Starting mask; all-background when `None`.
    pub initial_mask: Option<LabelMask>,
}

impl EpisodeConfig {
    pub fn new(scene: Scene, settings: Settings) -> Self {
        Self {
            scene,
            scene_name: "scene".into(),
            settings,
            out_dir: None,
            initial_mask: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub final_mask: LabelMask,
    /// Masks at interaction boundaries; index 0 is the starting mask.
    pub snapshots: Vec<LabelMask>,
    /// Ground-truth labels at the same instants as `snapshots`.
    pub gt_snapshots: Vec<LabelMask>,
    pub report: Vec<ReportRow>,
    pub actions: Vec<PushAction>,
    pub frames: usize,
}

impl EpisodeResult {
    /// Correct-segment rate after each interaction step, carrying the last
    /// value forward when the loop stopped early.
    pub fn rates(&self, steps: usize) -> Vec<f64> {
        (0..=steps)
            .map(|i| self.report[i.min(self.report.len() - 1)].eval.correct_rate)
            .collect()
    }
}

/// Writes one rendered frame (and the flow that led to it, if any).
fn write_frame(dir: &Path, t: usize, frame: &Frame, pose: &crate::geometry::Pose) -> Result<()> {
    io::write_ppm(&dir.join(format!("rgb_{t:04}.ppm")), &frame.rgb)?;
    io::write_pfm(&dir.join(format!("depth_{t:04}.pfm")), &frame.depth)?;
    io::write_pgm16(&dir.join(format!("gtmask_{t:04}.pgm")), &frame.labels)?;
    io::write_pose(&dir.join(format!("pose_{t:04}.txt")), pose)?;
    Ok(())
}

fn noise_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x0F10_F10F)
}

/// Runs the push/observe/segment loop until no push is found or the
/// interaction budget is spent.
pub fn run_episode(cfg: &EpisodeConfig) -> Result<EpisodeResult> {
    let s = &cfg.settings;
    s.validate()?;
    let k = &s.intrinsics;
    let mut scene = cfg.scene.clone();
    let mut t = 0usize;
    let mut frame = render(&scene, t, k);
    let mut pose = scene.camera.pose_at(t);
    let mut mask = cfg
        .initial_mask
        .clone()
        .unwrap_or_else(|| LabelMask::zeros(k.width, k.height));
    mask.labels.same_dims(&frame.labels.labels)?;

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        io::write_intrinsics(&dir.join("intrinsics.txt"), k)?;
        fs::write(dir.join("scene.txt"), cfg.scene.to_text())?;
        fs::write(dir.join("config.txt"), s.to_text())?;
        write_frame(dir, t, &frame, &pose)?;
        io::write_pgm16(&dir.join(format!("mask_{t:04}.pgm")), &mask)?;
    }

    let mut segmenter = Segmenter::new(s.pipeline, s.seed);
    let mut rng = noise_rng(s.seed);
    let mut snapshots = vec![mask.clone()];
    let mut gt_snapshots = vec![frame.labels.clone()];
    let mut report = vec![ReportRow {
        scene: cfg.scene_name.clone(),
        step: 0,
        eval: evaluate(&mask, &frame.labels)?,
    }];
    let mut actions = Vec::new();
    let mut action_log = String::new();

    for i in 1..=s.max_interactions {
        let ctx = |e: Error| e.context(format!("{} interaction {i}", cfg.scene_name));
        let Some(action) = find_action(&mask, &frame.depth, k, &s.action_for(i)).map_err(ctx)?
        else {
            action_log.push_str("none\n");
            break;
        };
        action_log.push_str(&action.to_record());
        action_log.push('\n');
        let states = apply_push(&scene, &action, s.sub_steps, t, k).map_err(ctx)?;
        for next in states {
            let next_pose = next.camera.pose_at(t + 1);
            let gt = gt_flow_between(&scene, &pose, &next, &next_pose, k);
            let observed = add_flow_noise(&gt, s.flow_noise, &mut rng);
            let next_frame = render(&next, t + 1, k);
            let input = FramePairInput {
                depth_prev: &frame.depth,
                depth_curr: &next_frame.depth,
                observed: &observed,
                pose_prev: &pose,
                pose_curr: &next_pose,
                intrinsics: k,
            };
            let SegmentUpdate {
                mask: next_mask,
                new_seeds,
                ..
            } = segmenter.step(&input, &mask).map_err(ctx)?;
            t += 1;
            if let Some(dir) = &cfg.out_dir {
                io::write_flo(&dir.join(format!("gtflow_{:04}.flo", t - 1)), &gt)?;
                write_frame(dir, t, &next_frame, &next_pose)?;
                io::write_pgm16(&dir.join(format!("mask_{t:04}.pgm")), &next_mask)?;
                if !new_seeds.is_empty() {
                    io::write_seeds(&dir.join(format!("seeds_{t:04}.txt")), &new_seeds)?;
                }
            }
            scene = next;
            frame = next_frame;
            pose = next_pose;
            mask = next_mask;
        }
        actions.push(action);
        report.push(ReportRow {
            scene: cfg.scene_name.clone(),
            step: i,
            eval: evaluate(&mask, &frame.labels)?,
        });
        snapshots.push(mask.clone());
        gt_snapshots.push(frame.labels.clone());
        if let Some(dir) = &cfg.out_dir {
            io::write_pgm16(&dir.join(format!("interaction_{i:02}.pgm")), &mask)?;
        }
    }

    if let Some(dir) = &cfg.out_dir {
        fs::write(dir.join("actions.txt"), &action_log)?;
        fs::write(dir.join("report.txt"), format_report(&report))?;
    }
    Ok(EpisodeResult {
        final_mask: mask,
        snapshots,
        gt_snapshots,
        report,
        actions,
        frames: t + 1,
    })
}

/// Simulates the same push sequence as [`run_episode`] without segmentation:
/// pushes are chosen against the ground-truth masks of already pushed objects.
pub fn simulate_episode(scene: &Scene, settings: &Settings, out_dir: &Path) -> Result<usize> {
    settings.validate()?;
    let k = &settings.intrinsics;
    fs::create_dir_all(out_dir)?;
    io::write_intrinsics(&out_dir.join("intrinsics.txt"), k)?;
    fs::write(out_dir.join("scene.txt"), scene.to_text())?;
    let mut scene = scene.clone();
    let mut t = 0;
    let mut frame = render(&scene, t, k);
    let mut pose = scene.camera.pose_at(t);
    write_frame(out_dir, t, &frame, &pose)?;
    let mut pushed: Vec<u32> = Vec::new();
    let mut log = String::new();
    for i in 1..=settings.max_interactions {
        let known =
            LabelMask::from_grid(
                frame
                    .labels
                    .labels
                    .map(|l| if pushed.contains(l) { *l } else { 0 }),
            );
        let Some(action) = find_action(&known, &frame.depth, k, &settings.action_for(i))? else {
            log.push_str("none\n");
            break;
        };
        log.push_str(&action.to_record());
        log.push('\n');
        if let Some(hit) = scene.cast(t, &action.contact, k) {
            if let Some(obj) = hit.object {
                pushed.push(scene.objects[obj].id);
            }
        }
        for next in apply_push(&scene, &action, settings.sub_steps, t, k)? {
            let next_pose = next.camera.pose_at(t + 1);
            let gt = gt_flow_between(&scene, &pose, &next, &next_pose, k);
            let next_frame = render(&next, t + 1, k);
            io::write_flo(&out_dir.join(format!("gtflow_{t:04}.flo")), &gt)?;
            t += 1;
            write_frame(out_dir, t, &next_frame, &next_pose)?;
            scene = next;
            frame = next_frame;
            pose = next_pose;
        }
    }
    fs::write(out_dir.join("actions.txt"), log)?;
    Ok(t + 1)
}

/// A simulated or recorded episode read back from disk.
#[derive(Debug, Clone)]
pub struct EpisodeFiles {
    pub intrinsics: Intrinsics,
    pub frames: usize,
}

impl EpisodeFiles {
    pub fn open(dir: &Path) -> Result<Self> {
        let intrinsics = io::read_intrinsics(&dir.join("intrinsics.txt"))?;
        let mut frames = 0;
        while dir.join(format!("depth_{frames:04}.pfm")).exists() {
            frames += 1;
        }
        if frames == 0 {
            return Err(Error::Config(format!("no frames in {}", dir.display())));
        }
        Ok(Self { intrinsics, frames })
    }
}

/// Which flow files drive [`segment_episode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowSource {
    /// `gtflow_%04d.flo`
    GroundTruth,
    /// `flow_%04d.flo`, produced by an external estimator.
    External,
}

/// Runs the segmentation update over every consecutive frame pair of a
/// recorded episode, writing `mask_%04d.pgm` and `seeds_%04d.txt`.
pub fn segment_episode(
    episode: &Path,
    out_dir: &Path,
    source: FlowSource,
    settings: &Settings,
) -> Result<LabelMask> {
    settings.validate()?;
    let files = EpisodeFiles::open(episode)?;
    let k = files.intrinsics;
    fs::create_dir_all(out_dir)?;
    let mut segmenter = Segmenter::new(settings.pipeline, settings.seed);
    let mut rng = noise_rng(settings.seed);
    let mut depth = io::read_pfm(&episode.join("depth_0000.pfm"))?;
    let mut pose = io::read_pose(&episode.join("pose_0000.txt"))?;
    let mut mask = LabelMask::zeros(k.width, k.height);
    io::write_pgm16(&out_dir.join("mask_0000.pgm"), &mask)?;
    for t in 1..files.frames {
        let name = match source {
            FlowSource::GroundTruth => format!("gtflow_{:04}.flo", t - 1),
            FlowSource::External => format!("flow_{:04}.flo", t - 1),
        };
        let flow: FlowField = io::read_flo(&episode.join(name))?;
        let observed = add_flow_noise(&flow, settings.flow_noise, &mut rng);
        let next_depth = io::read_pfm(&episode.join(format!("depth_{t:04}.pfm")))?;
        let next_pose = io::read_pose(&episode.join(format!("pose_{t:04}.txt")))?;
        let input = FramePairInput {
            depth_prev: &depth,
            depth_curr: &next_depth,
            observed: &observed,
            pose_prev: &pose,
            pose_curr: &next_pose,
            intrinsics: &k,
        };
        let update = segmenter
            .step(&input, &mask)
            .map_err(|e| e.context(format!("frame {t}")))?;
        io::write_pgm16(&out_dir.join(format!("mask_{t:04}.pgm")), &update.mask)?;
        if !update.new_seeds.is_empty() {
            io::write_seeds(
                &out_dir.join(format!("seeds_{t:04}.txt")),
                &update.new_seeds,
            )?;
        }
        mask = update.mask;
        depth = next_depth;
        pose = next_pose;
    }
    Ok(mask)
}

/// Scores every `mask_%04d.pgm` in `pred_dir` against `gtmask_%04d.pgm` in `gt_dir`.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    let mut t = 0;
    loop {
        let pred = pred_dir.join(format!("mask_{t:04}.pgm"));
        let gt = gt_dir.join(format!("gtmask_{t:04}.pgm"));
        if !pred.exists() || !gt.exists() {
            break;
        }
        rows.push(ReportRow {
            scene: "episode".into(),
            step: t,
            eval: evaluate(&io::read_pgm16(&pred)?, &io::read_pgm16(&gt)?)?,
        });
        t += 1;
    }
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "no matching mask_%04d.pgm / gtmask_%04d.pgm pairs in {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    Ok(rows)
}
