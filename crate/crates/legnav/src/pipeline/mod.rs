//! Depth-cloud to planner-ready map pipeline: ceiling point filtering,
//! max-fusion elevation integration, virtual surfaces from depth rays,
//! foothold scoring, and the dilate-then-erode safety margin.

mod foothold;
pub mod morphology;
pub mod raycast;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geom::Point3;
use crate::mlp::MlpError;
use crate::terrain::{CellIndex, HeightMap};

pub use foothold::{score_footholds, FootholdModel, HeuristicFootholdParams, FOOTHOLD_MLP_INPUTS};
pub use raycast::{compute_virtual_surfaces, traverse_cells, ELEVATION_REFUTE_CLEARANCE};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("point cloud line {line}: {msg}")]
    BadCloud { line: usize, msg: String },
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

/// A depth observation: sensor origin plus hit points, world frame, meters.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub sensor_origin: Point3,
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(sensor_origin: Point3) -> Self {
        assert!(sensor_origin.is_finite());
        Self {
            sensor_origin,
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, p: Point3) {
        assert!(p.is_finite(), "point cloud coordinates must be finite");
        self.points.push(p);
    }

    /// `.pts` text format: `sensor <x> <y> <z>` then one `x y z` per line.
    pub fn to_pts(&self) -> String {
        let mut s = String::new();
        let o = self.sensor_origin;
        let _ = writeln!(s, "sensor {} {} {}", o.x, o.y, o.z);
        for p in &self.points {
            let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
        }
        s
    }

    pub fn from_pts(text: &str) -> Result<Self, PipelineError> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(PipelineError::BadCloud {
            line: 1,
            msg: "empty file".into(),
        })?;
        let mut tok = first.split_whitespace();
        if tok.next() != Some("sensor") {
            return Err(PipelineError::BadCloud {
                line: 1,
                msg: "expected `sensor <x> <y> <z>`".into(),
            });
        }
        let mut parse3 = |line: usize, tok: &mut dyn Iterator<Item = &str>| -> Result<Point3, PipelineError> {
            let mut v = [0.0f64; 3];
            for slot in &mut v {
                let t = tok.next().ok_or(PipelineError::BadCloud {
                    line,
                    msg: "expected 3 coordinates".into(),
                })?;
                *slot = t.parse().map_err(|_| PipelineError::BadCloud {
                    line,
                    msg: format!("bad number `{t}`"),
                })?;
            }
            let p = Point3::new(v[0], v[1], v[2]);
            if !p.is_finite() {
                return Err(PipelineError::BadCloud {
                    line,
                    msg: "non-finite coordinate".into(),
                });
            }
            Ok(p)
        };
        let sensor_origin = parse3(1, &mut tok)?;
        let mut cloud = PointCloud::new(sensor_origin);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let p = parse3(i + 1, &mut tok)?;
            cloud.points.push(p);
        }
        Ok(cloud)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, self.to_pts())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_pts(&fs::read_to_string(path)?)
    }
}

/// Distance-dependent overhead point rejection. Points just above the robot
/// are dropped nearby; the threshold rises linearly with distance so slopes
/// and stairs ahead still reach the map.
#[derive(Debug, Clone)]
pub struct CeilingFilterParams {
    /// Threshold height above robot base within `d_0`, meters.
    pub h_near: f64,
    /// Distance at which the threshold starts rising, meters.
    pub d_0: f64,
    /// Threshold rise per meter of distance beyond `d_0`.
    pub slope: f64,
    /// Threshold ceiling above robot base, meters.
    pub h_cap: f64,
}

impl Default for CeilingFilterParams {
    fn default() -> Self {
        Self {
            h_near: 0.8,
            d_0: 1.0,
            slope: 0.3,
            h_cap: 2.5,
        }
    }
}

impl CeilingFilterParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.h_near > 0.0) {
            return Err("ceiling filter: h_near must be > 0".into());
        }
        if !(self.slope >= 0.0) {
            return Err("ceiling filter: slope must be >= 0".into());
        }
        if !(self.h_cap >= self.h_near) {
            return Err("ceiling filter: h_cap must be >= h_near".into());
        }
        Ok(())
    }

    /// Height above robot base below which a point at planar distance
    /// `dist` is kept.
    pub fn threshold(&self, dist: f64) -> f64 {
        (self.h_near + self.slope * (dist - self.d_0).max(0.0)).min(self.h_cap)
    }
}

/// Keep point q iff `q.z <= robot_base_z + threshold(dist_xy(q, robot_xy))`.
/// Order is preserved; the boundary is inclusive. `robot_base_z` is the
/// ground-level z of the robot (pose z minus torso height), not the torso
/// center.
pub fn ceiling_filter(
    cloud: &PointCloud,
    robot_base_z: f64,
    robot_xy: (f64, f64),
    p: &CeilingFilterParams,
) -> PointCloud {
    let mut out = PointCloud::new(cloud.sensor_origin);
    out.points = cloud
        .points
        .iter()
        .filter(|q| {
            let dist = ((q.x - robot_xy.0).powi(2) + (q.y - robot_xy.1).powi(2)).sqrt();
            q.z <= robot_base_z + p.threshold(dist)
        })
        .copied()
        .collect();
    out
}

/// Max-fuse cloud points into the elevation layer and record the sensor
/// height used for this frame. Points outside the grid are ignored.
pub fn integrate_cloud(map: &mut HeightMap, cloud: &PointCloud) {
    map.set_frame_z_sensor(cloud.sensor_origin.z);
    for p in &cloud.points {
        if let Some(c) = map.world_to_cell(p.x, p.y) {
            map.fuse_elevation_max(c, p.z);
        }
    }
}

/// Safety margin morphology parameters plus the steppable score cutoff.
#[derive(Debug, Clone)]
pub struct SafetyParams {
    pub r_dilate: f64,
    pub r_erode: f64,
    /// Foothold score at or above which a cell is steppable.
    pub s_min: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            r_dilate: 0.06,
            r_erode: 0.15,
            s_min: 0.5,
        }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.r_dilate > 0.0 && self.r_dilate < self.r_erode) {
            return Err("safety margin: need 0 < r_dilate < r_erode".into());
        }
        if !(self.s_min > 0.0 && self.s_min < 1.0) {
            return Err("safety margin: need 0 < s_min < 1".into());
        }
        Ok(())
    }
}

/// Steppable before morphology: scored at or above `s_min` with a known
/// effective elevation.
fn base_steppable(map: &HeightMap, s_min: f64) -> Vec<bool> {
    map.cells()
        .map(|c| {
            map.foothold_cell(c).is_some_and(|s| s >= s_min)
                && map.effective_elevation(c).is_some()
        })
        .collect()
}

fn write_steppable(map: &mut HeightMap, mask: &[bool]) {
    let cells: Vec<CellIndex> = map.cells().collect();
    for (c, &v) in cells.iter().zip(mask) {
        // Morphology may grow the mask onto unknown cells; those cannot
        // support planning, so known effective elevation is re-required.
        map.set_steppable(*c, v && map.effective_elevation(*c).is_some());
    }
}

/// Threshold the foothold layer into a steppable mask, dilate by the small
/// radius (erasing sub-threshold obstacles), then erode by the larger one
/// (retreating from real hazards and the map border).
pub fn apply_safety_margin(map: &mut HeightMap, p: &SafetyParams) {
    let (sx, sy) = (map.size_x(), map.size_y());
    let res = map.resolution();
    let base = base_steppable(map, p.s_min);
    let mask = morphology::erode(
        &morphology::dilate(&base, sx, sy, p.r_dilate, res),
        sx,
        sy,
        p.r_erode,
        res,
    );
    write_steppable(map, &mask);
}

/// Pipeline switches and parameters for one frame.
#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub ceiling: CeilingFilterParams,
    pub safety: SafetyParams,
    pub foothold: FootholdModel,
    pub disable_ceiling_filter: bool,
    pub disable_virtual_surfaces: bool,
    pub disable_safety_margin: bool,
}

/// Run the full per-frame pipeline: recenter on the robot, filter ceiling
/// points, integrate, cast virtual surfaces, score footholds and derive the
/// steppable mask. Identical inputs produce identical maps.
pub fn process_frame(
    map: &HeightMap,
    cloud: &PointCloud,
    robot_xy: (f64, f64),
    robot_base_z: f64,
    cfg: &PipelineConfig,
) -> HeightMap {
    let mut m = map.recenter(robot_xy);
    let filtered;
    let cloud = if cfg.disable_ceiling_filter {
        cloud
    } else {
        filtered = ceiling_filter(cloud, robot_base_z, robot_xy, &cfg.ceiling);
        &filtered
    };
    integrate_cloud(&mut m, cloud);
    if !cfg.disable_virtual_surfaces {
        compute_virtual_surfaces(&mut m, cloud);
    }
    score_footholds(&mut m, &cfg.foothold);
    if cfg.disable_safety_margin {
        let base = base_steppable(&m, cfg.safety.s_min);
        write_steppable(&mut m, &base);
    } else {
        apply_safety_margin(&mut m, &cfg.safety);
    }
    m
}
