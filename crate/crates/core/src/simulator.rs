//! Synthetic worlds and detection streams with ground truth.
//!
//! A world is a set of static landmarks laid out by a template (a straight
//! corridor, a rectangular hospital loop, or an open square). A session
//! drives a robot along the template's route and emits, for every frame,
//! the landmarks inside a planar camera frustum. The emitted frames follow
//! the mapping stream format exactly. Perturbations model detector failures
//! (dropout, class confusion), sensor noise, a shifted viewpoint, and moving
//! distractors.
//!
//! Everything is driven by ChaCha8 seeded from the `seed` field of the
//! `WorldSpec` or `SessionSpec`, so the same inputs give byte-identical
//! streams.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    angle_difference, body_to_magnetic, heading_of, magnetic_to_body, normalize_degrees, Extrinsics, Point3, Vec3,
    YawDeg,
};
use crate::graph::ClassId;
use crate::mapping::{DetectionFrame, ObjectObservation};
use crate::stream::{DetectionStream, StreamHeader};

pub const CLASS_NAMES: [&str; 5] = ["door", "sign", "pillar", "extinguisher", "person"];

/// Classes that move and must never enter the map.
pub const DYNAMIC_CLASSES: [ClassId; 1] = [4];

pub fn class_table() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn static_classes() -> BTreeSet<ClassId> {
    (0..CLASS_NAMES.len() as ClassId)
        .filter(|c| !DYNAMIC_CLASSES.contains(c))
        .collect()
}

/// Forward-looking camera: optical axis along body x, image x to the right,
/// image y down, mounted 0.1 m ahead of and 0.5 m above the body origin.
pub fn default_extrinsics() -> Extrinsics {
    Extrinsics::from_row_major([0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0], [0.1, 0.0, 0.5])
        .expect("mount rotation is proper")
}

const WALL_OFFSET: (f64, f64) = (1.2, 1.5);
const HEIGHT: (f64, f64) = (0.3, 2.5);
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Corridor,
    Hospital,
    Random,
}

impl std::str::FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(Template::Corridor),
            "hospital" => Ok(Template::Hospital),
            "random" => Ok(Template::Random),
            other => Err(Error::InvalidConfig(format!("unknown template {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub template: Template,
    /// Corridor length, loop width, or square side (m).
    pub extent: f64,
    pub landmarks: usize,
    /// One probability per entry of [`CLASS_NAMES`].
    pub class_probs: Vec<f64>,
    /// Smallest 3D distance between two landmarks (m).
    pub min_separation: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            template: Template::Corridor,
            extent: 70.0,
            landmarks: 100,
            class_probs: vec![0.3, 0.25, 0.25, 0.2, 0.0],
            min_separation: 1.2,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.landmarks == 0 {
            return Err(Error::InvalidConfig("a world needs at least one landmark".into()));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "extent must be positive, got {}",
                self.extent
            )));
        }
        if self.class_probs.len() != CLASS_NAMES.len() {
            return Err(Error::InvalidConfig(format!(
                "class_probs needs {} entries, got {}",
                CLASS_NAMES.len(),
                self.class_probs.len()
            )));
        }
        if self.class_probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidConfig("class probabilities must be non-negative".into()));
        }
        let sum: f64 = self.class_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("class probabilities sum to {sum}, not 1")));
        }
        if !(self.min_separation >= 0.0 && self.min_separation.is_finite()) {
            return Err(Error::InvalidConfig("min_separation must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u32,
    pub cls: ClassId,
    pub pos: Point3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub spec: WorldSpec,
    pub landmarks: Vec<Landmark>,
    /// Base route as planar waypoints.
    pub route: Vec<[f64; 2]>,
    /// Allowed robot area: `[min_x, min_y, max_x, max_y]`.
    pub bounds: [f64; 4],
}

impl World {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("world serializes")
    }
}

/// Point on the hospital loop centerline at arc length `s`, with the outward
/// normal of that side.
fn loop_point(w: f64, h: f64, s: f64) -> ([f64; 2], [f64; 2]) {
    let s = s.rem_euclid(2.0 * (w + h));
    if s < w {
        ([s, 0.0], [0.0, -1.0])
    } else if s < w + h {
        ([w, s - w], [1.0, 0.0])
    } else if s < 2.0 * w + h {
        ([w - (s - w - h), h], [0.0, 1.0])
    } else {
        ([0.0, h - (s - 2.0 * w - h)], [-1.0, 0.0])
    }
}

pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = WeightedIndex::new(&spec.class_probs).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let e = spec.extent;
    let (route, bounds) = match spec.template {
        Template::Corridor => (
            vec![[-2.0, 0.0], [e + 2.0, 0.0]],
            [-5.0, -WALL_OFFSET.1, e + 5.0, WALL_OFFSET.1],
        ),
        Template::Hospital => {
            let h = e / 2.0;
            (
                vec![[0.0, 0.0], [e, 0.0], [e, h], [0.0, h], [0.0, 0.0]],
                [-WALL_OFFSET.1, -WALL_OFFSET.1, e + WALL_OFFSET.1, h + WALL_OFFSET.1],
            )
        }
        Template::Random => {
            let (a, b) = (e / 4.0, 3.0 * e / 4.0);
            (vec![[a, a], [b, a], [b, b], [a, b], [a, a]], [0.0, 0.0, e, e])
        }
    };
    let mut landmarks: Vec<Landmark> = Vec::with_capacity(spec.landmarks);
    for id in 0..spec.landmarks as u32 {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let off = side * rng.random_range(WALL_OFFSET.0..=WALL_OFFSET.1);
            let z = rng.random_range(HEIGHT.0..=HEIGHT.1);
            let pos = match spec.template {
                Template::Corridor => Vec3::new(rng.random_range(0.0..=e), off, z),
                Template::Hospital => {
                    let (p, n) = loop_point(e, e / 2.0, rng.random_range(0.0..3.0 * e));
                    Vec3::new(p[0] + n[0] * off, p[1] + n[1] * off, z)
                }
                Template::Random => Vec3::new(rng.random_range(0.0..=e), rng.random_range(0.0..=e), z),
            };
            if landmarks.iter().all(|l| l.pos.distance(&pos) >= spec.min_separation) {
                placed = Some(pos);
                break;
            }
        }
        let pos = placed.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "could not place {} landmarks {} m apart",
                spec.landmarks, spec.min_separation
            ))
        })?;
        let cls = classes.sample(&mut rng) as ClassId;
        landmarks.push(Landmark { id, cls, pos });
    }
    Ok(World {
        spec: spec.clone(),
        landmarks,
        route,
        bounds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    /// Times the base route is driven; open routes alternate direction.
    pub passes: usize,
    /// m/s.
    pub speed: f64,
    pub rate_hz: f64,
    /// In-place turning speed at waypoints, deg/s.
    pub turn_rate_deg_s: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            passes: 1,
            speed: 0.5,
            rate_hz: 10.0,
            turn_rate_deg_s: 30.0,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::InvalidConfig("passes must be at least 1".into()));
        }
        for (name, v) in [
            ("speed", self.speed),
            ("rate_hz", self.rate_hz),
            ("turn_rate_deg_s", self.turn_rate_deg_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub p_drop: f64,
    pub p_confuse: f64,
    /// Per-axis standard deviation of camera-frame centers (m).
    pub sigma_center: f64,
    /// Standard deviation of the reported yaw (deg).
    pub sigma_yaw: f64,
    /// Shift of the trajectory to the left of travel (m).
    pub viewpoint_lateral: f64,
    /// Heading offset added to the direction of travel (deg).
    pub viewpoint_heading: f64,
    pub n_dynamic: usize,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_drop", self.p_drop), ("p_confuse", self.p_confuse)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        for (name, s) in [("sigma_center", self.sigma_center), ("sigma_yaw", self.sigma_yaw)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {s}")));
            }
        }
        if !(self.viewpoint_lateral.is_finite() && self.viewpoint_heading.is_finite()) {
            return Err(Error::InvalidConfig("viewpoint offsets must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    /// Planar range from the camera (m).
    pub range: f64,
    /// Full horizontal field of view (deg).
    pub fov_deg: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            range: 8.0,
            fov_deg: 90.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub name: String,
    pub trajectory: TrajectorySpec,
    pub perturbation: PerturbationSpec,
    pub sensor: SensorSpec,
    pub seed: u64,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            name: "session".into(),
            trajectory: TrajectorySpec::default(),
            perturbation: PerturbationSpec::default(),
            sensor: SensorSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub pos: Point3,
    /// True heading (deg).
    pub yaw_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub t: f64,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correspondence {
    pub frame_idx: usize,
    pub obs_idx: usize,
    pub landmark_id: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorEmission {
    pub track: usize,
    pub cls: ClassId,
    pub frame_idx: usize,
    pub obs_idx: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub landmarks: Vec<Landmark>,
    pub frames: Vec<FrameTruth>,
    pub correspondences: Vec<Correspondence>,
    pub distractors: Vec<DistractorEmission>,
}

impl GroundTruth {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("ground truth serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// `(frame, obs) → landmark` lookup.
    pub fn landmark_of(&self) -> BTreeMap<(usize, usize), u32> {
        self.correspondences
            .iter()
            .map(|c| ((c.frame_idx, c.obs_idx), c.landmark_id))
            .collect()
    }

    /// Landmarks emitted at least once.
    pub fn observed_landmarks(&self) -> BTreeSet<u32> {
        self.correspondences.iter().map(|c| c.landmark_id).collect()
    }
}

/// Landmark-frame bookkeeping of one session.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub frames: usize,
    pub emitted: usize,
    pub dropped: usize,
    pub out_of_frustum: usize,
    pub distractor_emissions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub stream: DetectionStream,
    pub truth: GroundTruth,
    pub stats: SessionStats,
}

/// Robot poses along the route, one per frame, before viewpoint offsets.
pub fn trajectory(world: &World, traj: &TrajectorySpec) -> Result<Vec<Pose>> {
    traj.validate()?;
    let base = &world.route;
    let closed = base.first() == base.last();
    let mut wps: Vec<[f64; 2]> = base.clone();
    for pass in 1..traj.passes {
        let next: Vec<[f64; 2]> = if closed || pass % 2 == 0 {
            base.clone()
        } else {
            base.iter().rev().copied().collect()
        };
        wps.extend(next.into_iter().skip(1));
    }
    let step = traj.speed / traj.rate_hz;
    let turn_step = traj.turn_rate_deg_s / traj.rate_hz;
    let v = |p: [f64; 2]| Vec3::new(p[0], p[1], 0.0);
    let mut cur = v(wps[0]);
    let mut yaw = heading_of(v(wps[1]) - cur).degrees();
    let mut poses = vec![Pose { pos: cur, yaw_deg: yaw }];
    for seg in wps.windows(2) {
        let (a, b) = (v(seg[0]), v(seg[1]));
        let d = b - a;
        let len = d.norm();
        if len == 0.0 {
            continue;
        }
        let target = heading_of(d).degrees();
        loop {
            let diff = angle_difference(target, yaw);
            if diff.abs() < 1e-9 {
                break;
            }
            yaw = if diff.abs() <= turn_step {
                target
            } else {
                normalize_degrees(yaw + turn_step * diff.signum())
            };
            poses.push(Pose { pos: cur, yaw_deg: yaw });
        }
        let dir = d * (1.0 / len);
        let n = (len / step).floor() as usize;
        for i in 1..=n {
            cur = a + dir * (i as f64 * step);
            poses.push(Pose { pos: cur, yaw_deg: yaw });
        }
        if (cur - b).norm() > 1e-9 {
            cur = b;
            poses.push(Pose { pos: cur, yaw_deg: yaw });
        }
    }
    Ok(poses)
}

struct Track {
    cls: ClassId,
    start: Point3,
    velocity: Vec3,
    first: usize,
    last: usize,
}

/// Camera-frame position of a magnetic-frame point, if inside the frustum.
fn in_view(p: Point3, pose: &Pose, ext: &Extrinsics, sensor: &SensorSpec) -> Option<Point3> {
    let yaw = YawDeg::new(pose.yaw_deg).expect("finite yaw");
    let body = magnetic_to_body(p - pose.pos, yaw);
    let rel = body - ext.translation();
    let range = rel.x.hypot(rel.y);
    if rel.x <= 0.0 || range > sensor.range {
        return None;
    }
    if rel.y.atan2(rel.x).abs().to_degrees() > sensor.fov_deg / 2.0 {
        return None;
    }
    Some(ext.apply_inverse(body))
}

pub fn generate_session(world: &World, spec: &SessionSpec) -> Result<Session> {
    let pert = &spec.perturbation;
    pert.validate()?;
    if !(spec.sensor.range > 0.0 && spec.sensor.fov_deg > 0.0 && spec.sensor.fov_deg < 180.0) {
        return Err(Error::InvalidConfig(
            "sensor needs positive range and a field of view below 180 deg".into(),
        ));
    }
    let mut poses = trajectory(world, &spec.trajectory)?;
    for p in &mut poses {
        let travel = YawDeg::new(p.yaw_deg)?;
        p.pos += body_to_magnetic(Vec3::new(0.0, pert.viewpoint_lateral, 0.0), travel);
        p.yaw_deg = normalize_degrees(p.yaw_deg + pert.viewpoint_heading);
        let [x0, y0, x1, y1] = world.bounds;
        if p.pos.x < x0 || p.pos.x > x1 || p.pos.y < y0 || p.pos.y > y1 {
            return Err(Error::OutOfBounds { x: p.pos.x, y: p.pos.y });
        }
    }

    let ext = default_extrinsics();
    let k = CLASS_NAMES.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let center_noise = (pert.sigma_center > 0.0).then(|| Normal::new(0.0, pert.sigma_center).unwrap());
    let yaw_noise = (pert.sigma_yaw > 0.0).then(|| Normal::new(0.0, pert.sigma_yaw).unwrap());
    let statics: Vec<ClassId> = static_classes().into_iter().collect();

    let half_fov = (spec.sensor.fov_deg / 2.0).min(60.0).to_radians();
    let tracks: Vec<Track> = (0..pert.n_dynamic)
        .map(|i| {
            let f0 = rng.random_range(0..poses.len());
            let pose = poses[f0];
            let fwd = rng.random_range(3.0..6.0f64).min(spec.sensor.range * 0.75);
            let lat = rng.random_range(-0.5..0.5) * fwd * half_fov.tan();
            let body = ext.translation() + Vec3::new(fwd, lat, rng.random_range(0.5..1.8) - ext.translation().z);
            let start = pose.pos + body_to_magnetic(body, YawDeg::new(pose.yaw_deg).unwrap());
            let heading: f64 = rng.random_range(0.0..360.0);
            let speed = rng.random_range(0.3..1.0);
            let velocity = body_to_magnetic(Vec3::new(speed, 0.0, 0.0), YawDeg::new(heading).unwrap());
            let len = rng.random_range(20..60usize);
            let cls = if i % 2 == 0 {
                DYNAMIC_CLASSES[0]
            } else {
                statics[rng.random_range(0..statics.len())]
            };
            Track {
                cls,
                start: start - velocity * (len as f64 / 2.0 / spec.trajectory.rate_hz),
                velocity,
                first: f0.saturating_sub(len / 2),
                last: f0 + len / 2,
            }
        })
        .collect();

    let mut stats = SessionStats {
        frames: poses.len(),
        ..Default::default()
    };
    let mut frames = Vec::with_capacity(poses.len());
    let mut truth_frames = Vec::with_capacity(poses.len());
    let mut correspondences = Vec::new();
    let mut distractors = Vec::new();
    let dt = 1.0 / spec.trajectory.rate_hz;
    for (fi, pose) in poses.iter().enumerate() {
        let t = fi as f64 * dt;
        // (observation, Some(landmark) or Err(track))
        let mut emitted: Vec<(ObjectObservation, std::result::Result<u32, usize>)> = Vec::new();
        let emit = |rng: &mut ChaCha8Rng, cls: ClassId, cam: Point3, confusable: bool| {
            let mut cls = cls;
            if confusable && pert.p_confuse > 0.0 && rng.random::<f64>() < pert.p_confuse {
                let other = rng.random_range(0..k as ClassId - 1);
                cls = if other >= cls { other + 1 } else { other };
            }
            let mut c = cam;
            if let Some(n) = &center_noise {
                c += Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));
            }
            let conf = rng.random_range(0.6..1.0);
            ObjectObservation {
                class_id: cls,
                confidence: conf,
                center_cam: c,
                color: None,
            }
        };
        for l in &world.landmarks {
            match in_view(l.pos, pose, &ext, &spec.sensor) {
                None => stats.out_of_frustum += 1,
                Some(cam) => {
                    if pert.p_drop > 0.0 && rng.random::<f64>() < pert.p_drop {
                        stats.dropped += 1;
                    } else {
                        stats.emitted += 1;
                        emitted.push((emit(&mut rng, l.cls, cam, true), Ok(l.id)));
                    }
                }
            }
        }
        for (ti, tr) in tracks.iter().enumerate() {
            if fi < tr.first || fi > tr.last {
                continue;
            }
            let p = tr.start + tr.velocity * ((fi - tr.first) as f64 * dt);
            if let Some(cam) = in_view(p, pose, &ext, &spec.sensor) {
                stats.distractor_emissions += 1;
                emitted.push((emit(&mut rng, tr.cls, cam, false), Err(ti)));
            }
        }
        emitted.shuffle(&mut rng);
        let mut yaw = pose.yaw_deg;
        if let Some(n) = &yaw_noise {
            yaw += n.sample(&mut rng);
        }
        let mut observations = Vec::with_capacity(emitted.len());
        for (oi, (o, src)) in emitted.into_iter().enumerate() {
            match src {
                Ok(landmark_id) => correspondences.push(Correspondence {
                    frame_idx: fi,
                    obs_idx: oi,
                    landmark_id,
                }),
                Err(track) => distractors.push(DistractorEmission {
                    track,
                    cls: o.class_id,
                    frame_idx: fi,
                    obs_idx: oi,
                }),
            }
            observations.push(o);
        }
        frames.push(DetectionFrame {
            timestamp: t,
            yaw: YawDeg::new(yaw)?,
            observations,
        });
        truth_frames.push(FrameTruth { t, pose: *pose });
    }
    Ok(Session {
        stream: DetectionStream {
            header: StreamHeader {
                session: spec.name.clone(),
                extrinsics: ext,
                classes: class_table(),
            },
            frames,
        },
        truth: GroundTruth {
            landmarks: world.landmarks.clone(),
            frames: truth_frames,
            correspondences,
            distractors,
        },
        stats,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionPair {
    pub map: Session,
    pub query: Session,
    /// Identity on landmarks observed in both sessions.
    pub correspondence: BTreeMap<u32, u32>,
}

pub fn session_pair(world: &World, spec_a: &SessionSpec, spec_b: &SessionSpec) -> Result<SessionPair> {
    let map = generate_session(world, spec_a)?;
    let query = generate_session(world, spec_b)?;
    let a = map.truth.observed_landmarks();
    let correspondence = query
        .truth
        .observed_landmarks()
        .intersection(&a)
        .map(|&id| (id, id))
        .collect();
    Ok(SessionPair {
        map,
        query,
        correspondence,
    })
}
