//! Synthetic V2I episodes.
//!
//! A [`Scenario`] fixes the static world (buildings, base stations, lanes).
//! [`simulate_episode`] spawns vehicles on lanes, advances them at constant
//! speed in fixed time steps and, for every receiver in every scene, traces a
//! line-of-sight ray plus one specular reflection per building facade using
//! the image method.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{los_blocked, Aabb, Vec3};
use crate::mimo::RayPath;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    UrbanCanyon,
    Roundabout,
}

/// Orientation of a horizontal ULA: the broadside direction and the array
/// axis (broadside rotated by +90 degrees about the vertical).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayFrame {
    pub broadside: Vec3,
    pub axis: Vec3,
}

impl ArrayFrame {
    pub fn from_broadside(b: Vec3) -> Self {
        let b = Vec3::new(b.x, b.y, 0.0).normalized();
        Self {
            broadside: b,
            axis: Vec3::new(-b.y, b.x, 0.0),
        }
    }

    /// Local (azimuth, elevation) of the unit direction `d`.
    ///
    /// `sin(az) cos(el)` equals the projection of `d` on the array axis.
    pub fn local_angles(&self, d: Vec3) -> (f64, f64) {
        let az = d.dot(self.axis).atan2(d.dot(self.broadside));
        let el = d.z.clamp(-1.0, 1.0).asin();
        (az, el)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub position: Vec3,
    /// Horizontal direction the array faces.
    pub broadside: Vec3,
}

impl BaseStation {
    pub fn frame(&self) -> ArrayFrame {
        ArrayFrame::from_broadside(self.broadside)
    }
}

/// Centre line of a lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LanePath {
    Line { start: [f64; 2], end: [f64; 2] },
    Ring { center: [f64; 2], radius: f64, counter_clockwise: bool },
}

impl LanePath {
    pub fn length(&self) -> f64 {
        match *self {
            LanePath::Line { start, end } => (end[0] - start[0]).hypot(end[1] - start[1]),
            LanePath::Ring { radius, .. } => 2.0 * PI * radius,
        }
    }

    /// Ground position and heading after travelling `s` metres from the
    /// start. Lines extrapolate past their end.
    pub fn pose(&self, s: f64) -> (Vec3, f64) {
        match *self {
            LanePath::Line { start, end } => {
                let len = self.length();
                let (ux, uy) = ((end[0] - start[0]) / len, (end[1] - start[1]) / len);
                (
                    Vec3::new(start[0] + ux * s, start[1] + uy * s, 0.0),
                    uy.atan2(ux),
                )
            }
            LanePath::Ring {
                center,
                radius,
                counter_clockwise,
            } => {
                let sign = if counter_clockwise { 1.0 } else { -1.0 };
                let theta = sign * s / radius;
                let p = Vec3::new(center[0] + radius * theta.cos(), center[1] + radius * theta.sin(), 0.0);
                let heading = theta + sign * PI / 2.0;
                (p, wrap_angle(heading))
            }
        }
    }

    /// Sample points along the centre line, used for geometry validation.
    fn samples(&self, step: f64) -> Vec<Vec3> {
        let n = (self.length() / step).ceil().max(1.0) as usize;
        (0..=n)
            .map(|k| self.pose(self.length() * k as f64 / n as f64).0)
            .collect()
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub path: LanePath,
    pub half_width: f64,
    /// Fraction of the path length where vehicles may spawn, `[lo, hi]`.
    pub spawn: [f64; 2],
    /// Whether receivers may be placed on this lane.
    pub receivers: bool,
}

/// Static world shared by every episode of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub buildings: Vec<Aabb>,
    pub base_stations: Vec<BaseStation>,
    pub lanes: Vec<Lane>,
    /// Vehicle speed range in m/s, `[lo, hi]`.
    pub speed_range: [f64; 2],
    pub carrier_frequency: f64,
    pub scene_interval_ms: u32,
    /// Non-receiver vehicles spawned per episode.
    pub n_traffic: usize,
    /// Region receivers must stay inside.
    pub bounds: Aabb,
    pub reflection_coefficient: f64,
    pub max_rays: usize,
    /// Receiver antenna height above the vehicle roof, metres.
    pub antenna_mast: f64,
}

/// Parameters accepted by [`make_scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    /// Urban canyon: road length along y. Roundabout: ring radius.
    pub size: f64,
    pub max_speed: f64,
    pub min_speed: f64,
    pub n_traffic: usize,
    pub carrier_frequency: f64,
    pub reflection_coefficient: f64,
    /// Lateral offset of the lanes from the road axis (urban canyon only).
    pub lane_offset: f64,
}

impl ScenarioParams {
    pub fn urban_canyon() -> Self {
        Self {
            size: 200.0,
            max_speed: 60.0 / 3.6,
            min_speed: 30.0 / 3.6,
            n_traffic: 4,
            carrier_frequency: 28e9,
            reflection_coefficient: 0.3,
            lane_offset: 2.5,
        }
    }

    pub fn roundabout() -> Self {
        Self {
            size: 20.0,
            max_speed: 60.0 / 3.6,
            min_speed: 20.0 / 3.6,
            n_traffic: 4,
            carrier_frequency: 28e9,
            reflection_coefficient: 0.3,
            lane_offset: 0.0,
        }
    }
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self::urban_canyon()
    }
}

/// Builds one of the two preset worlds and validates it.
pub fn make_scenario(kind: ScenarioKind, params: &ScenarioParams) -> Result<Scenario> {
    let scenario = match kind {
        ScenarioKind::UrbanCanyon => urban_canyon(params),
        ScenarioKind::Roundabout => roundabout(params),
    };
    scenario.validate()?;
    Ok(scenario)
}

fn urban_canyon(p: &ScenarioParams) -> Scenario {
    let len = p.size;
    let off = p.lane_offset;
    // Facades at |x| = 9 m, cross streets every ~50 m.
    let mut buildings = Vec::new();
    let heights = [24.0, 32.0, 18.0, 40.0, 28.0, 22.0, 36.0, 20.0];
    let block = len / 4.0;
    for k in 0..4 {
        let y0 = k as f64 * block + if k == 0 { 0.0 } else { 5.0 };
        let y1 = (k + 1) as f64 * block - if k == 3 { 0.0 } else { 5.0 };
        buildings.push(Aabb::new(Vec3::new(9.0, y0, 0.0), Vec3::new(30.0, y1, heights[2 * k])));
        buildings.push(Aabb::new(Vec3::new(-30.0, y0, 0.0), Vec3::new(-9.0, y1, heights[2 * k + 1])));
    }
    let base_stations = vec![
        BaseStation {
            position: Vec3::new(-8.0, 0.3 * len, 6.0),
            broadside: Vec3::new(1.0, 0.0, 0.0),
        },
        BaseStation {
            position: Vec3::new(8.0, 0.7 * len, 6.0),
            broadside: Vec3::new(-1.0, 0.0, 0.0),
        },
    ];
    let lanes = vec![
        Lane {
            path: LanePath::Line { start: [-off, 0.0], end: [-off, len] },
            half_width: 1.75,
            spawn: [0.15, 0.4],
            receivers: true,
        },
        Lane {
            path: LanePath::Line { start: [off, len], end: [off, 0.0] },
            half_width: 1.75,
            spawn: [0.15, 0.4],
            receivers: true,
        },
    ];
    Scenario {
        name: "t001".into(),
        kind: ScenarioKind::UrbanCanyon,
        buildings,
        base_stations,
        lanes,
        speed_range: [p.min_speed, p.max_speed],
        carrier_frequency: p.carrier_frequency,
        scene_interval_ms: 20,
        n_traffic: p.n_traffic,
        bounds: Aabb::new(Vec3::new(-10.0, 0.0, 0.0), Vec3::new(10.0, len, 50.0)),
        reflection_coefficient: p.reflection_coefficient,
        max_rays: 8,
        antenna_mast: 0.1,
    }
}

fn roundabout(p: &ScenarioParams) -> Scenario {
    let r = p.size;
    let outer = r + 10.0;
    let far = outer + 30.0;
    let mut buildings = Vec::new();
    let heights = [18.0, 26.0, 14.0, 30.0];
    for (k, (sx, sy)) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)].into_iter().enumerate() {
        let (x0, x1) = if sx > 0.0 { (outer, far) } else { (-far, -outer) };
        let (y0, y1) = if sy > 0.0 { (outer, far) } else { (-far, -outer) };
        buildings.push(Aabb::new(Vec3::new(x0, y0, 0.0), Vec3::new(x1, y1, heights[k])));
    }
    let corner = outer - 4.0;
    let base_stations = vec![BaseStation {
        position: Vec3::new(-corner, -corner, 8.0),
        broadside: Vec3::new(1.0, 1.0, 0.0),
    }];
    let entry = r + 3.5;
    let mut lanes = vec![Lane {
        path: LanePath::Ring {
            center: [0.0, 0.0],
            radius: r,
            counter_clockwise: true,
        },
        half_width: 3.5,
        spawn: [0.0, 1.0],
        receivers: true,
    }];
    // Inbound approaches on the right-hand side of each arm.
    for (start, end) in [
        ([far, -2.5], [entry, -2.5]),
        ([2.5, far], [2.5, entry]),
        ([-far, 2.5], [-entry, 2.5]),
        ([-2.5, -far], [-2.5, -entry]),
    ] {
        lanes.push(Lane {
            path: LanePath::Line { start, end },
            half_width: 1.75,
            spawn: [0.0, 0.8],
            receivers: false,
        });
    }
    Scenario {
        name: "t002".into(),
        kind: ScenarioKind::Roundabout,
        buildings,
        base_stations,
        lanes,
        speed_range: [p.min_speed, p.max_speed],
        carrier_frequency: p.carrier_frequency,
        scene_interval_ms: 20,
        n_traffic: p.n_traffic,
        bounds: Aabb::new(Vec3::new(-32.0, -32.0, 0.0), Vec3::new(32.0, 32.0, 50.0)),
        reflection_coefficient: p.reflection_coefficient,
        max_rays: 8,
        antenna_mast: 0.1,
    }
}

impl Scenario {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn scene_interval_s(&self) -> f64 {
        f64::from(self.scene_interval_ms) / 1000.0
    }

    /// Copy of the scenario in which every vehicle stands still.
    pub fn frozen(&self) -> Scenario {
        Scenario {
            name: format!("{}-static", self.name),
            speed_range: [0.0, 0.0],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_stations.is_empty() {
            return Err(Error::Geometry("scenario needs at least one base station".into()));
        }
        let [lo, hi] = self.speed_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Geometry(format!("invalid speed range [{lo}, {hi}]")));
        }
        if !(self.carrier_frequency > 0.0) {
            return Err(Error::Geometry("carrier frequency must be positive".into()));
        }
        if self.scene_interval_ms == 0 {
            return Err(Error::Geometry("scene interval must be positive".into()));
        }
        if self.max_rays == 0 {
            return Err(Error::Geometry("max_rays must be at least 1".into()));
        }
        if !self.lanes.iter().any(|l| l.receivers) {
            return Err(Error::Geometry("no lane accepts receivers".into()));
        }
        for b in &self.buildings {
            if !(b.min.x < b.max.x && b.min.y < b.max.y && b.min.z < b.max.z) {
                return Err(Error::Geometry(format!("degenerate building {b:?}")));
            }
        }
        for (i, a) in self.buildings.iter().enumerate() {
            for b in &self.buildings[i + 1..] {
                if a.overlaps_xy(b) {
                    return Err(Error::Geometry(format!("buildings {a:?} and {b:?} overlap")));
                }
            }
        }
        for (k, bs) in self.base_stations.iter().enumerate() {
            if self.buildings.iter().any(|b| b.contains_interior(bs.position)) {
                return Err(Error::Geometry(format!("base station {k} is inside a building")));
            }
        }
        for (k, lane) in self.lanes.iter().enumerate() {
            for p in lane.path.samples(0.5) {
                let w = lane.half_width;
                let footprint = Aabb::new(Vec3::new(p.x - w, p.y - w, 0.0), Vec3::new(p.x + w, p.y + w, 1.0));
                if let Some(b) = self.buildings.iter().find(|b| b.overlaps_xy(&footprint)) {
                    return Err(Error::Geometry(format!("lane {k} intersects building {b:?}")));
                }
            }
        }
        Ok(())
    }

    fn speed_bounds_ok(&self, speed: f64) -> bool {
        speed >= self.speed_range[0] - 1e-12 && speed <= self.speed_range[1] + 1e-12
    }

    fn in_bounds(&self, p: Vec3) -> bool {
        p.x >= self.bounds.min.x && p.x <= self.bounds.max.x && p.y >= self.bounds.min.y && p.y <= self.bounds.max.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Centre of the footprint at ground level.
    pub position: Vec3,
    pub velocity: Vec3,
    pub heading: f64,
    /// Length, width, height in metres.
    pub bbox: [f64; 3],
    pub is_receiver: bool,
}

impl VehicleState {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Axis-aligned bound of the rotated body.
    pub fn aabb(&self) -> Aabb {
        let [l, w, h] = self.bbox;
        let (s, c) = self.heading.sin_cos();
        let ex = 0.5 * (l * c.abs() + w * s.abs());
        let ey = 0.5 * (l * s.abs() + w * c.abs());
        Aabb::new(
            Vec3::new(self.position.x - ex, self.position.y - ey, 0.0),
            Vec3::new(self.position.x + ex, self.position.y + ey, h),
        )
    }

    pub fn antenna(&self, mast: f64) -> Vec3 {
        Vec3::new(self.position.x, self.position.y, self.bbox[2] + mast)
    }

    /// Receive array frame: broadside to the left of the heading.
    pub fn frame(&self) -> ArrayFrame {
        let (s, c) = self.heading.sin_cos();
        ArrayFrame::from_broadside(Vec3::new(-s, c, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: u32,
    pub t_ms: u64,
    /// Receivers first, in receiver order, then traffic.
    pub vehicles: Vec<VehicleState>,
    /// Rays from the serving base station to each receiver. Empty means outage.
    pub per_receiver_rays: Vec<Vec<RayPath>>,
    /// Serving base station of each receiver.
    pub serving_bs: Vec<usize>,
}

impl Scene {
    pub fn receivers(&self) -> impl Iterator<Item = &VehicleState> {
        self.vehicles.iter().filter(|v| v.is_receiver)
    }

    pub fn receiver(&self, k: usize) -> &VehicleState {
        self.receivers().nth(k).expect("receiver index in range")
    }

    pub fn n_receivers(&self) -> usize {
        self.per_receiver_rays.len()
    }

    /// Index into `vehicles` of receiver `k`.
    pub fn receiver_vehicle_index(&self, k: usize) -> usize {
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_receiver)
            .nth(k)
            .map(|(i, _)| i)
            .expect("receiver index in range")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: u64,
    pub scenario: String,
    pub scene_interval_ms: u32,
    pub scenes: Vec<Scene>,
}

/// An endpoint of a link: antenna position and array orientation.
#[derive(Debug, Clone, Copy)]
pub struct Node {
    pub position: Vec3,
    pub frame: ArrayFrame,
}

/// LOS plus first-order facade reflections between `tx` and `rx`.
///
/// `buildings` act as blockers and reflectors, `obstacles` only block.
/// Result is sorted by decreasing `|gain|` and truncated to `max_rays`.
pub fn trace_paths(
    tx: &Node,
    rx: &Node,
    buildings: &[Aabb],
    obstacles: &[Aabb],
    wavelength: f64,
    reflection_coefficient: f64,
    max_rays: usize,
) -> Vec<RayPath> {
    let blocked = |a: Vec3, b: Vec3, skip: Option<usize>| {
        buildings
            .iter()
            .enumerate()
            .any(|(i, bx)| Some(i) != skip && los_blocked(a, b, std::slice::from_ref(bx)))
            || los_blocked(a, b, obstacles)
    };
    let make_ray = |first: Vec3, last: Vec3, length: f64, coeff: f64| {
        let (aod_az, aod_el) = tx.frame.local_angles((first - tx.position).normalized());
        let (aoa_az, aoa_el) = rx.frame.local_angles((last - rx.position).normalized());
        let amplitude = coeff * wavelength / (4.0 * PI * length);
        RayPath {
            gain: Complex64::from_polar(amplitude, -2.0 * PI * length / wavelength),
            aod_az,
            aod_el,
            aoa_az,
            aoa_el,
            delay: length / SPEED_OF_LIGHT,
        }
    };

    let mut rays = Vec::new();
    let direct = tx.position.distance(rx.position);
    if direct > 0.0 && !blocked(tx.position, rx.position, None) {
        rays.push(make_ray(rx.position, tx.position, direct, 1.0));
    }

    for (bi, b) in buildings.iter().enumerate() {
        for axis in 0..2 {
            for (plane, outward) in [(b.min.axis(axis), -1.0), (b.max.axis(axis), 1.0)] {
                let side_tx = outward * (tx.position.axis(axis) - plane);
                let side_rx = outward * (rx.position.axis(axis) - plane);
                if side_tx <= 0.0 || side_rx <= 0.0 {
                    continue;
                }
                let mut image = tx.position;
                image.set_axis(axis, 2.0 * plane - tx.position.axis(axis));
                let d = rx.position - image;
                let t = (plane - image.axis(axis)) / d.axis(axis);
                let mut hit = image + d * t;
                hit.set_axis(axis, plane);
                let other = 1 - axis;
                let on_face = hit.axis(other) >= b.min.axis(other)
                    && hit.axis(other) <= b.max.axis(other)
                    && hit.z >= b.min.z
                    && hit.z <= b.max.z;
                if !on_face {
                    continue;
                }
                if blocked(tx.position, hit, Some(bi)) || blocked(hit, rx.position, Some(bi)) {
                    continue;
                }
                let length = d.norm();
                rays.push(make_ray(hit, hit, length, reflection_coefficient));
            }
        }
    }
    rays.sort_by(|a, b| b.gain.norm().total_cmp(&a.gain.norm()));
    rays.truncate(max_rays);
    rays
}

/// Rays from base station `bs` to receiver vehicle `vehicles[rx]`.
///
/// Every other vehicle blocks; the receiver's own body does not.
pub fn synthesize_rays(scenario: &Scenario, vehicles: &[VehicleState], bs: &BaseStation, rx: usize) -> Vec<RayPath> {
    let receiver = &vehicles[rx];
    let obstacles: Vec<Aabb> = vehicles
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != rx)
        .map(|(_, v)| v.aabb())
        .collect();
    let tx = Node {
        position: bs.position,
        frame: bs.frame(),
    };
    let rxn = Node {
        position: receiver.antenna(scenario.antenna_mast),
        frame: receiver.frame(),
    };
    trace_paths(
        &tx,
        &rxn,
        &scenario.buildings,
        &obstacles,
        scenario.wavelength(),
        scenario.reflection_coefficient,
        scenario.max_rays,
    )
}

#[derive(Debug, Clone, Copy)]
struct Motion {
    lane: usize,
    s0: f64,
    speed: f64,
    bbox: [f64; 3],
    is_receiver: bool,
}

impl Motion {
    fn state(&self, scenario: &Scenario, t: f64) -> VehicleState {
        let path = &scenario.lanes[self.lane].path;
        let (position, heading) = path.pose(self.s0 + self.speed * t);
        let (s, c) = heading.sin_cos();
        VehicleState {
            position,
            velocity: Vec3::new(c * self.speed, s * self.speed, 0.0),
            heading,
            bbox: self.bbox,
            is_receiver: self.is_receiver,
        }
    }
}

const CAR: [f64; 3] = [4.5, 1.8, 1.5];
const TRAFFIC_BODIES: [[f64; 3]; 3] = [[4.5, 1.8, 1.5], [5.2, 2.0, 2.2], [9.0, 2.5, 3.4]];

/// Mixes an episode index into a base seed (SplitMix64 finalizer).
pub fn episode_seed(base: u64, episode_id: u64) -> u64 {
    let mut z = base ^ episode_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn spawn(scenario: &Scenario, n_receivers: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Motion>> {
    let receiver_lanes: Vec<usize> = (0..scenario.lanes.len()).filter(|&i| scenario.lanes[i].receivers).collect();
    let mut placed: Vec<(Motion, Aabb)> = Vec::new();
    let total = n_receivers + scenario.n_traffic;
    for k in 0..total {
        let is_receiver = k < n_receivers;
        let mut ok = false;
        for _ in 0..200 {
            let lane = if is_receiver {
                receiver_lanes[rng.random_range(0..receiver_lanes.len())]
            } else {
                rng.random_range(0..scenario.lanes.len())
            };
            let l = &scenario.lanes[lane];
            let len = l.path.length();
            let s0 = len * rng.random_range(l.spawn[0]..=l.spawn[1]);
            let [lo, hi] = scenario.speed_range;
            let speed = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let bbox = if is_receiver {
                CAR
            } else {
                TRAFFIC_BODIES[rng.random_range(0..TRAFFIC_BODIES.len())]
            };
            let m = Motion {
                lane,
                s0,
                speed,
                bbox,
                is_receiver,
            };
            let body = m.state(scenario, 0.0).aabb();
            let margin = Vec3::new(1.0, 1.0, 0.0);
            let padded = Aabb::new(body.min - margin, body.max + margin);
            if is_receiver && !scenario.in_bounds(body.center()) {
                continue;
            }
            if placed.iter().all(|(_, b)| !b.overlaps_xy(&padded)) {
                placed.push((m, body));
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(domain(format!("could not place vehicle {k} without collisions")));
        }
    }
    Ok(placed.into_iter().map(|(m, _)| m).collect())
}

/// Simulates one episode of `n_scenes` snapshots with `n_receivers` tracked
/// vehicles. Deterministic in `seed`.
///
/// If a receiver leaves the scenario bounds the episode is cut at the last
/// scene where all receivers were inside; fewer than two scenes is an error.
pub fn simulate_episode(
    scenario: &Scenario,
    episode_id: u64,
    n_scenes: usize,
    n_receivers: usize,
    seed: u64,
) -> Result<Episode> {
    if n_scenes < 2 {
        return Err(domain("an episode needs at least two scenes"));
    }
    if n_receivers == 0 {
        return Err(domain("an episode needs at least one receiver"));
    }
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let motions = spawn(scenario, n_receivers, &mut rng)?;
    let dt = scenario.scene_interval_s();

    let first: Vec<VehicleState> = motions.iter().map(|m| m.state(scenario, 0.0)).collect();
    let serving_bs: Vec<usize> = (0..n_receivers)
        .map(|k| nearest_bs(scenario, first[k].antenna(scenario.antenna_mast)))
        .collect();

    let mut scenes = Vec::with_capacity(n_scenes);
    for scene_id in 0..n_scenes {
        let t = scene_id as f64 * dt;
        let vehicles: Vec<VehicleState> = motions.iter().map(|m| m.state(scenario, t)).collect();
        if vehicles[..n_receivers].iter().any(|v| !scenario.in_bounds(v.position)) {
            if scenes.len() < 2 {
                return Err(Error::OutOfBounds(format!(
                    "episode {episode_id}: receiver left the scenario after {} scenes",
                    scenes.len()
                )));
            }
            break;
        }
        debug_assert!(vehicles.iter().all(|v| scenario.speed_bounds_ok(v.speed())));
        let per_receiver_rays = (0..n_receivers)
            .map(|k| synthesize_rays(scenario, &vehicles, &scenario.base_stations[serving_bs[k]], k))
            .collect();
        scenes.push(Scene {
            scene_id: scene_id as u32,
            t_ms: scene_id as u64 * u64::from(scenario.scene_interval_ms),
            vehicles,
            per_receiver_rays,
            serving_bs: serving_bs.clone(),
        });
    }
    Ok(Episode {
        episode_id,
        scenario: scenario.name.clone(),
        scene_interval_ms: scenario.scene_interval_ms,
        scenes,
    })
}

fn nearest_bs(scenario: &Scenario, p: Vec3) -> usize {
    let mut best = 0;
    for (i, bs) in scenario.base_stations.iter().enumerate() {
        if bs.position.distance(p) < scenario.base_stations[best].position.distance(p) {
            best = i;
        }
    }
    best
}

/// Episode counts and lengths of a dataset preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetShape {
    pub n_episodes: usize,
    pub n_scenes: usize,
    pub n_receivers: usize,
}

impl DatasetShape {
    /// Desk-scale urban canyon: 200 episodes of 10 scenes, 2 receivers.
    pub const T001: DatasetShape = DatasetShape {
        n_episodes: 200,
        n_scenes: 10,
        n_receivers: 2,
    };
    /// Desk-scale roundabout: 100 episodes of 20 scenes, 5 receivers.
    pub const T002: DatasetShape = DatasetShape {
        n_episodes: 100,
        n_scenes: 20,
        n_receivers: 5,
    };
}

/// Generates `shape.n_episodes` episodes in parallel; episode `i` uses
/// `episode_seed(seed, i)`, so the output does not depend on scheduling.
pub fn generate_episodes(scenario: &Scenario, shape: DatasetShape, seed: u64) -> Result<Vec<Episode>> {
    (0..shape.n_episodes as u64)
        .into_par_iter()
        .map(|id| simulate_episode(scenario, id, shape.n_scenes, shape.n_receivers, episode_seed(seed, id)))
        .collect()
}

/// Preset by dataset name (`t001` or `t002`).
pub fn preset(name: &str) -> Result<(Scenario, DatasetShape)> {
    match name {
        "t001" => Ok((
            make_scenario(ScenarioKind::UrbanCanyon, &ScenarioParams::urban_canyon())?,
            DatasetShape::T001,
        )),
        "t002" => Ok((
            make_scenario(ScenarioKind::Roundabout, &ScenarioParams::roundabout())?,
            DatasetShape::T002,
        )),
        other => Err(domain(format!("unknown preset {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_node(p: Vec3) -> Node {
        Node {
            position: p,
            frame: ArrayFrame::from_broadside(Vec3::new(1.0, 0.0, 0.0)),
        }
    }

    #[test]
    fn urban_canyon_defaults() {
        let s = make_scenario(ScenarioKind::UrbanCanyon, &ScenarioParams::urban_canyon()).unwrap();
        assert_eq!(s.base_stations.len(), 2);
        assert!(s.buildings.len() >= 4);
        assert_eq!(s.scene_interval_ms, 20);
        assert_eq!(s.carrier_frequency, 28e9);
    }

    #[test]
    fn roundabout_max_speed_is_60_kmh() {
        let s = make_scenario(ScenarioKind::Roundabout, &ScenarioParams::roundabout()).unwrap();
        assert!((s.speed_range[1] - 16.67).abs() < 0.01);
        assert_eq!(s.base_stations.len(), 1);
    }

    #[test]
    fn lane_through_building_rejected() {
        let params = ScenarioParams {
            lane_offset: 12.0,
            ..ScenarioParams::urban_canyon()
        };
        assert!(matches!(
            make_scenario(ScenarioKind::UrbanCanyon, &params),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn free_space_los_gain() {
        let tx = free_node(Vec3::new(0.0, 0.0, 10.0));
        let rx = free_node(Vec3::new(100.0, 0.0, 10.0));
        let lambda = SPEED_OF_LIGHT / 28e9;
        let rays = trace_paths(&tx, &rx, &[], &[], lambda, 0.3, 8);
        assert_eq!(rays.len(), 1);
        let friis = lambda / (4.0 * PI * 100.0);
        assert!((rays[0].gain.norm() - friis).abs() < 1e-15);
        assert!((rays[0].delay - 100.0 / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!(rays[0].aod_az.abs() < 1e-12);
        assert!((rays[0].aoa_az.abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn receiver_behind_building_has_no_los() {
        let wall = Aabb::new(Vec3::new(40.0, -10.0, 0.0), Vec3::new(50.0, 10.0, 30.0));
        let tx = free_node(Vec3::new(0.0, 0.0, 5.0));
        let rx = free_node(Vec3::new(100.0, 0.0, 1.5));
        let rays = trace_paths(&tx, &rx, &[wall], &[], 0.01, 0.3, 8);
        let direct = tx.position.distance(rx.position);
        assert!(rays.iter().all(|r| (r.delay * SPEED_OF_LIGHT - direct).abs() > 1e-6));
    }

    #[test]
    fn wall_reflection_length_equals_image_distance() {
        // Wall plane y = 10, both nodes below it.
        let wall = Aabb::new(Vec3::new(-100.0, 10.0, 0.0), Vec3::new(200.0, 20.0, 50.0));
        let tx = free_node(Vec3::new(0.0, 0.0, 5.0));
        let rx = free_node(Vec3::new(40.0, 4.0, 1.5));
        let lambda = 0.01;
        let rays = trace_paths(&tx, &rx, &[wall], &[], lambda, 0.3, 8);
        assert_eq!(rays.len(), 2);
        // image of tx across y=10 is (0, 20, 5)
        let image_dist = ((40.0f64).powi(2) + 16.0f64.powi(2) + 3.5f64.powi(2)).sqrt();
        let refl = rays[1];
        assert!((refl.delay * SPEED_OF_LIGHT - image_dist).abs() < 1e-9);
        let expect = 0.3 * lambda / (4.0 * PI * image_dist);
        assert!((refl.gain.norm() - expect).abs() < 1e-15);
    }

    #[test]
    fn reciprocity_swaps_angles() {
        let s = make_scenario(ScenarioKind::UrbanCanyon, &ScenarioParams::urban_canyon()).unwrap();
        let a = Node {
            position: Vec3::new(-8.0, 60.0, 6.0),
            frame: ArrayFrame::from_broadside(Vec3::new(1.0, 0.0, 0.0)),
        };
        let b = Node {
            position: Vec3::new(2.5, 83.0, 1.6),
            frame: ArrayFrame::from_broadside(Vec3::new(0.3, 1.0, 0.0)),
        };
        let lambda = s.wavelength();
        let ab = trace_paths(&a, &b, &s.buildings, &[], lambda, 0.3, 8);
        let ba = trace_paths(&b, &a, &s.buildings, &[], lambda, 0.3, 8);
        assert_eq!(ab.len(), ba.len());
        assert!(ab.len() > 1);
        for (x, y) in ab.iter().zip(&ba) {
            assert!((x.gain.norm() - y.gain.norm()).abs() < 1e-12);
            assert!((x.aod_az - y.aoa_az).abs() < 1e-9);
            assert!((x.aod_el - y.aoa_el).abs() < 1e-9);
            assert!((x.aoa_az - y.aod_az).abs() < 1e-9);
        }
    }

    #[test]
    fn gain_decreases_with_length() {
        let lambda = 0.0107;
        let tx = free_node(Vec3::ZERO);
        let mut prev = f64::INFINITY;
        for d in [1.0, 5.0, 20.0, 80.0, 300.0] {
            let g = trace_paths(&tx, &free_node(Vec3::new(d, 0.0, 0.0)), &[], &[], lambda, 0.3, 8)[0]
                .gain
                .norm();
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn presets_have_table_shapes() {
        assert_eq!((DatasetShape::T001.n_scenes, DatasetShape::T001.n_receivers), (10, 2));
        assert_eq!((DatasetShape::T002.n_scenes, DatasetShape::T002.n_receivers), (20, 5));
    }

    #[test]
    fn episode_structure_and_determinism() {
        let (s, _) = preset("t001").unwrap();
        let a = simulate_episode(&s, 3, 10, 2, 99).unwrap();
        let b = simulate_episode(&s, 3, 10, 2, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.scenes.len(), 10);
        for (i, sc) in a.scenes.iter().enumerate() {
            assert_eq!(sc.scene_id as usize, i);
            assert_eq!(sc.t_ms, 20 * i as u64);
            assert_eq!(sc.per_receiver_rays.len(), 2);
            assert_eq!(sc.receivers().count(), 2);
        }
        let c = simulate_episode(&s, 3, 10, 2, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn kinematics_straight_and_ring() {
        for name in ["t001", "t002"] {
            let (s, _) = preset(name).unwrap();
            let ep = simulate_episode(&s, 0, 20, 2, 5).unwrap();
            let dt = s.scene_interval_s();
            for w in ep.scenes.windows(2) {
                for (v0, v1) in w[0].vehicles.iter().zip(&w[1].vehicles) {
                    assert!((v0.speed() - v1.speed()).abs() < 1e-9);
                    let lane_is_line = (v0.heading - v1.heading).abs() < 1e-12;
                    if lane_is_line {
                        let moved = v1.position - v0.position;
                        assert!((moved - v0.velocity * dt).norm() < 1e-9);
                    }
                    if v0.speed() > 0.0 {
                        let dir = v0.velocity.normalized();
                        let (sh, ch) = v0.heading.sin_cos();
                        assert!((dir.x - ch).abs() < 1e-9 && (dir.y - sh).abs() < 1e-9);
                    }
                    assert!(s.speed_bounds_ok(v0.speed()));
                }
            }
        }
    }

    #[test]
    fn too_short_episode_rejected() {
        let (s, _) = preset("t001").unwrap();
        assert!(simulate_episode(&s, 0, 1, 1, 0).is_err());
        assert!(simulate_episode(&s, 0, 5, 0, 0).is_err());
    }

    #[test]
    fn truncates_when_receiver_leaves() {
        let (mut s, _) = preset("t001").unwrap();
        s.speed_range = [150.0, 150.0];
        s.lanes.iter_mut().for_each(|l| l.spawn = [0.9, 0.9]);
        s.n_traffic = 0;
        // First lane heads +y from y=0, second heads -y from y=200; at 3 m per
        // scene from 90% of the length one of them exits within ~7 scenes.
        let ep = simulate_episode(&s, 0, 50, 1, 1);
        match ep {
            Ok(ep) => assert!(ep.scenes.len() >= 2 && ep.scenes.len() < 50),
            Err(e) => assert!(matches!(e, Error::OutOfBounds(_)), "{e}"),
        }
    }

    #[test]
    fn frozen_scenario_is_static() {
        let (s, _) = preset("t002").unwrap();
        let ep = simulate_episode(&s.frozen(), 0, 5, 3, 11).unwrap();
        for sc in &ep.scenes {
            assert_eq!(sc.vehicles, ep.scenes[0].vehicles);
            assert_eq!(sc.per_receiver_rays, ep.scenes[0].per_receiver_rays);
        }
    }
}
