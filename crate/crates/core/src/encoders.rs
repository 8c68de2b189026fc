//! Scene encoders: virtual LIDAR, voxel occupancy grid and GNSS coordinate
//! matrix.
//!
//! Voxel codes: `-1` obstacle, `0` empty, `-2` base station, `-3` user
//! equipment. Coordinate matrix codes: `1` scatterer, `10` transmitter and a
//! run `3, 4, ...` starting at the receiver and growing along its heading.

use serde::{Deserialize, Serialize};

use crate::blob::{Blob, BlobData};
use crate::error::{Error, Result};
use crate::geometry::{ray_hit_distance, Aabb, Vec3};
use crate::scene::{Scenario, ScenarioKind, Scene, VehicleState};

pub const OBSTACLE: i8 = -1;
pub const BS_MARK: i8 = -2;
pub const UE_MARK: i8 = -3;
pub const SCATTERER: i8 = 1;
pub const TX_MARK: i8 = 10;
pub const GRADIENT_START: i8 = 3;

/// Regular grid anchored at `origin` (minimum corner).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    /// Cell edge per axis in metres.
    pub cell_size: [f64; 3],
    /// `[X, Y, Z]` for voxel grids, `[X, Y]` for coordinate matrices.
    pub dims: Vec<usize>,
}

impl GridSpec {
    pub fn validate(&self, rank: usize) -> Result<()> {
        if self.dims.len() != rank {
            return Err(Error::Dimension(format!("grid of rank {} where {rank} is needed", self.dims.len())));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Domain("grid dims must be at least 1".into()));
        }
        if self.cell_size[..rank].iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Domain("cell size must be positive".into()));
        }
        if !self.origin.is_finite() {
            return Err(Error::Domain("grid origin must be finite".into()));
        }
        Ok(())
    }

    /// Cell index of `p` along the first `rank` axes, or `None` outside.
    pub fn cell(&self, p: Vec3) -> Option<Vec<usize>> {
        let mut idx = Vec::with_capacity(self.dims.len());
        for (i, &n) in self.dims.iter().enumerate() {
            let f = ((p.axis(i) - self.origin.axis(i)) / self.cell_size[i]).floor();
            if !(f >= 0.0 && f < n as f64) {
                return None;
            }
            idx.push(f as usize);
        }
        Some(idx)
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn translated(&self, d: Vec3) -> Self {
        Self {
            origin: self.origin + d,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    /// Elevation fan `[lowest, highest]` in radians.
    pub elevation_range: [f64; 2],
    pub max_range: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            n_azimuth: 360,
            n_elevation: 16,
            elevation_range: [-0.5, 0.5],
            max_range: 150.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorPose {
    pub position: Vec3,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub sensor_pose: SensorPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// Row-major `[X][Y][Z]`.
    pub values: Vec<i8>,
}

impl VoxelGrid {
    pub fn get(&self, x: usize, y: usize, z: usize) -> i8 {
        self.values[(x * self.dims[1] + y) * self.dims[2] + z]
    }

    pub fn count(&self, v: i8) -> usize {
        self.values.iter().filter(|&&x| x == v).count()
    }

    pub fn to_blob(&self) -> Blob {
        Blob::new(self.dims.iter().map(|&d| d as u32).collect(), BlobData::I8(self.values.clone()))
            .expect("consistent dims")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordMatrix {
    pub dims: [usize; 2],
    /// Row-major `[X][Y]`.
    pub values: Vec<i8>,
}

impl CoordMatrix {
    pub fn get(&self, x: usize, y: usize) -> i8 {
        self.values[x * self.dims[1] + y]
    }

    pub fn count(&self, v: i8) -> usize {
        self.values.iter().filter(|&&x| x == v).count()
    }

    pub fn to_blob(&self) -> Blob {
        Blob::new(self.dims.iter().map(|&d| d as u32).collect(), BlobData::I8(self.values.clone()))
            .expect("consistent dims")
    }
}

/// Static and dynamic obstacles of a scene.
pub fn scene_boxes(scenario: &Scenario, scene: &Scene, include_vehicles: bool) -> Vec<Aabb> {
    let mut boxes = scenario.buildings.clone();
    if include_vehicles {
        boxes.extend(scene.vehicles.iter().map(VehicleState::aabb));
    }
    boxes
}

/// Casts `n_azimuth x n_elevation` rays from the sensor and keeps the nearest
/// box hit of each within `max_range`.
pub fn virtual_lidar(boxes: &[Aabb], sensor: SensorPose, cfg: &LidarConfig) -> PointCloud {
    let mut points = Vec::new();
    let [el_lo, el_hi] = cfg.elevation_range;
    for j in 0..cfg.n_elevation {
        let el = if cfg.n_elevation == 1 {
            0.5 * (el_lo + el_hi)
        } else {
            el_lo + (el_hi - el_lo) * j as f64 / (cfg.n_elevation - 1) as f64
        };
        let (se, ce) = el.sin_cos();
        for k in 0..cfg.n_azimuth {
            let az = sensor.heading + 2.0 * std::f64::consts::PI * k as f64 / cfg.n_azimuth as f64;
            let (sa, ca) = az.sin_cos();
            let dir = Vec3::new(ce * ca, ce * sa, se);
            let nearest = boxes
                .iter()
                .filter_map(|b| ray_hit_distance(sensor.position, dir, b))
                .filter(|&t| t <= cfg.max_range)
                .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))));
            if let Some(t) = nearest {
                points.push(sensor.position + dir * t);
            }
        }
    }
    PointCloud {
        points,
        sensor_pose: sensor,
    }
}

/// Quantizes a point cloud and stamps the BS and UE markers.
///
/// Marker precedence: UE over BS over obstacle. Points outside the grid are
/// dropped; markers outside the grid are an error.
pub fn voxelize(cloud: &PointCloud, grid: &GridSpec, bs_pos: Vec3, ue_pos: Vec3) -> Result<VoxelGrid> {
    grid.validate(3)?;
    let bs = grid
        .cell(bs_pos)
        .ok_or_else(|| Error::OutOfBounds(format!("base station {bs_pos:?} outside voxel grid")))?;
    let ue = grid
        .cell(ue_pos)
        .ok_or_else(|| Error::OutOfBounds(format!("user equipment {ue_pos:?} outside voxel grid")))?;
    let mut values = vec![0i8; grid.len()];
    for p in &cloud.points {
        if let Some(idx) = grid.cell(*p) {
            values[grid.flat(&idx)] = OBSTACLE;
        }
    }
    values[grid.flat(&bs)] = BS_MARK;
    values[grid.flat(&ue)] = UE_MARK;
    Ok(VoxelGrid {
        dims: [grid.dims[0], grid.dims[1], grid.dims[2]],
        values,
    })
}

/// Ground-plane coordinate matrix of a scene seen from receiver `rx`.
///
/// Buildings and every vehicle other than `rx` are scatterers. The receiver
/// run follows the heading snapped to the nearest grid axis and stops at the
/// grid edge or at the transmitter cell, which always keeps its code.
pub fn coord_matrix(
    scene: &Scene,
    buildings: &[Aabb],
    grid: &GridSpec,
    tx_pos: Vec3,
    rx: usize,
    gradient_len: usize,
) -> Result<CoordMatrix> {
    grid.validate(2)?;
    let (nx, ny) = (grid.dims[0], grid.dims[1]);
    let tx = grid
        .cell(tx_pos)
        .ok_or_else(|| Error::OutOfBounds(format!("transmitter {tx_pos:?} outside coordinate grid")))?;
    let rx_vehicle_index = scene.receiver_vehicle_index(rx);
    let receiver = &scene.vehicles[rx_vehicle_index];
    let start = grid
        .cell(receiver.position)
        .ok_or_else(|| Error::OutOfBounds(format!("receiver {:?} outside coordinate grid", receiver.position)))?;
    let mut values = vec![0i8; nx * ny];

    let mut stamp = |b: &Aabb| {
        let range = |axis: usize, n: usize| -> Option<(usize, usize)> {
            let lo = ((b.min.axis(axis) - grid.origin.axis(axis)) / grid.cell_size[axis]).floor();
            let hi = ((b.max.axis(axis) - grid.origin.axis(axis)) / grid.cell_size[axis]).ceil() - 1.0;
            let lo = lo.max(0.0);
            let hi = hi.min(n as f64 - 1.0);
            (lo <= hi).then_some((lo as usize, hi as usize))
        };
        if let (Some((x0, x1)), Some((y0, y1))) = (range(0, nx), range(1, ny)) {
            for x in x0..=x1 {
                for y in y0..=y1 {
                    values[x * ny + y] = SCATTERER;
                }
            }
        }
    };
    buildings.iter().for_each(&mut stamp);
    scene
        .vehicles
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != rx_vehicle_index)
        .for_each(|(_, v)| stamp(&v.aabb()));

    let tx_flat = tx[0] * ny + tx[1];
    let (gx, gy) = (
        receiver.heading.cos() / grid.cell_size[0],
        receiver.heading.sin() / grid.cell_size[1],
    );
    let step: (isize, isize) = if gx.abs() >= gy.abs() {
        (if gx >= 0.0 { 1 } else { -1 }, 0)
    } else {
        (0, if gy >= 0.0 { 1 } else { -1 })
    };
    for k in 0..gradient_len {
        let x = start[0] as isize + step.0 * k as isize;
        let y = start[1] as isize + step.1 * k as isize;
        if x < 0 || y < 0 || x >= nx as isize || y >= ny as isize {
            break;
        }
        let flat = x as usize * ny + y as usize;
        if flat == tx_flat {
            break;
        }
        values[flat] = GRADIENT_START + k as i8;
    }
    values[tx_flat] = TX_MARK;
    Ok(CoordMatrix { dims: [nx, ny], values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Lidar,
    Gnss,
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lidar" => Ok(InputMode::Lidar),
            "gnss" => Ok(InputMode::Gnss),
            other => Err(Error::Domain(format!("unknown input mode {other:?}"))),
        }
    }
}

/// Everything the encoders need besides the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub voxel_grid: GridSpec,
    pub coord_grid: GridSpec,
    pub lidar: LidarConfig,
    pub gradient_len: usize,
    /// Whether vehicles are visible to the LIDAR (buildings always are).
    pub include_vehicles: bool,
}

impl EncoderConfig {
    /// Default grids for a scenario: a 20 x 200 x 10 corridor at 1 m for the
    /// urban canyon, a 64 x 64 x 10 square at 1 m for the roundabout. The
    /// coordinate matrix is 64 x 64 over the same footprint.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let b = &scenario.bounds;
        let (voxel_grid, coord_grid) = match scenario.kind {
            ScenarioKind::UrbanCanyon => (
                GridSpec {
                    origin: Vec3::new(b.min.x, b.min.y, 0.0),
                    cell_size: [1.0, 1.0, 1.0],
                    dims: vec![20, 200, 10],
                },
                GridSpec {
                    origin: Vec3::new(b.min.x, b.min.y, 0.0),
                    cell_size: [(b.max.x - b.min.x) / 64.0, (b.max.y - b.min.y) / 64.0, 1.0],
                    dims: vec![64, 64],
                },
            ),
            ScenarioKind::Roundabout => (
                GridSpec {
                    origin: Vec3::new(b.min.x, b.min.y, 0.0),
                    cell_size: [1.0, 1.0, 1.0],
                    dims: vec![64, 64, 10],
                },
                GridSpec {
                    origin: Vec3::new(b.min.x, b.min.y, 0.0),
                    cell_size: [1.0, 1.0, 1.0],
                    dims: vec![64, 64],
                },
            ),
        };
        Self {
            voxel_grid,
            coord_grid,
            lidar: LidarConfig::default(),
            gradient_len: 4,
            include_vehicles: true,
        }
    }
}

/// An encoded scene matrix with the scale that maps it to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedScene {
    /// `[X, Y, Z]` or `[X, Y]`.
    pub dims: Vec<usize>,
    pub values: Vec<i8>,
}

impl EncodedScene {
    /// Network input shape `[C, H, W]`: voxel heights become channels.
    pub fn input_shape(&self) -> [usize; 3] {
        match self.dims.as_slice() {
            [x, y, z] => [*z, *x, *y],
            [x, y] => [1, *x, *y],
            _ => unreachable!("encoded scenes are rank 2 or 3"),
        }
    }

    /// Values divided by the largest code magnitude, laid out as `[C, H, W]`.
    pub fn normalized(&self) -> Vec<f64> {
        let scale = self.values.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0).max(1) as f64;
        match self.dims.as_slice() {
            [x, y, z] => {
                let (x, y, z) = (*x, *y, *z);
                let mut out = vec![0.0; x * y * z];
                for i in 0..x {
                    for j in 0..y {
                        for k in 0..z {
                            out[(k * x + i) * y + j] = f64::from(self.values[(i * y + j) * z + k]) / scale;
                        }
                    }
                }
                out
            }
            _ => self.values.iter().map(|&v| f64::from(v) / scale).collect(),
        }
    }

    pub fn from_blob(blob: &Blob) -> Result<Self> {
        match &blob.data {
            BlobData::I8(v) if blob.dims.len() == 2 || blob.dims.len() == 3 => Ok(Self {
                dims: blob.dims_usize(),
                values: v.clone(),
            }),
            _ => Err(Error::Dimension("encoded scenes are rank-2 or rank-3 int8 tensors".into())),
        }
    }

    pub fn to_blob(&self) -> Blob {
        Blob::new(self.dims.iter().map(|&d| d as u32).collect(), BlobData::I8(self.values.clone()))
            .expect("consistent dims")
    }
}

impl From<VoxelGrid> for EncodedScene {
    fn from(g: VoxelGrid) -> Self {
        Self {
            dims: g.dims.to_vec(),
            values: g.values,
        }
    }
}

impl From<CoordMatrix> for EncodedScene {
    fn from(g: CoordMatrix) -> Self {
        Self {
            dims: g.dims.to_vec(),
            values: g.values,
        }
    }
}

/// Encodes receiver `rx` of `scene` in the requested mode. The LIDAR sits at
/// the receiver's serving base station.
pub fn encode_scene(
    scenario: &Scenario,
    scene: &Scene,
    rx: usize,
    mode: InputMode,
    cfg: &EncoderConfig,
) -> Result<EncodedScene> {
    let bs = &scenario.base_stations[scene.serving_bs[rx]];
    let receiver = scene.receiver(rx);
    match mode {
        InputMode::Lidar => {
            let boxes = scene_boxes(scenario, scene, cfg.include_vehicles);
            let cloud = virtual_lidar(
                &boxes,
                SensorPose {
                    position: bs.position,
                    heading: 0.0,
                },
                &cfg.lidar,
            );
            Ok(voxelize(&cloud, &cfg.voxel_grid, bs.position, receiver.antenna(scenario.antenna_mast))?.into())
        }
        InputMode::Gnss => Ok(coord_matrix(scene, &scenario.buildings, &cfg.coord_grid, bs.position, rx, cfg.gradient_len)?.into()),
    }
}
