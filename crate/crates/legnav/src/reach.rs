//! Reachability pose validity: torso boxes must be collision-free against
//! all known geometry while each limb box must contain enough steppable
//! support cells.
//!
//! Collision semantics convention: boxes stay yaw-aligned (they do not tilt
//! with roll/pitch); roll and pitch displace each box center through the
//! full ZYX body rotation. A map cell belongs to a box when its center lies
//! inside the box's yaw-frame planar extent, and the box's vertical span at
//! every such cell is its displaced center z plus/minus its half-height.

use std::path::Path;

use crate::config::{load_entries, ConfigError, Entry};
use crate::geom::{rotate2, rotate2_inv, wrap_angle};
use crate::terrain::{CellIndex, HeightMap};

/// 3D pose; roll and pitch derive from the local support plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl Pose {
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z: 0.0,
            yaw: wrap_angle(yaw),
            roll: 0.0,
            pitch: 0.0,
        }
    }

    pub fn planar_dist(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned box in the body frame: center offset plus half-extents.
#[derive(Debug, Clone, Copy)]
pub struct BodyBox {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
}

impl BodyBox {
    pub fn validate(&self) -> Result<(), String> {
        if self.hx > 0.0 && self.hy > 0.0 && self.hz > 0.0 {
            Ok(())
        } else {
            Err("box half-extents must be > 0".into())
        }
    }
}

pub const LIMB_NAMES: [&str; 4] = ["lf", "rf", "lh", "rh"];

/// Torso collision volumes plus four limb reachability volumes.
#[derive(Debug, Clone)]
pub struct RobotShape {
    pub torso_boxes: Vec<BodyBox>,
    /// Order: left-fore, right-fore, left-hind, right-hind.
    pub limb_boxes: [BodyBox; 4],
    /// Minimum steppable in-range cells per limb box.
    pub min_contact_cells: usize,
}

impl Default for RobotShape {
    fn default() -> Self {
        let limb = |cx: f64, cy: f64| BodyBox {
            cx,
            cy,
            cz: -0.45,
            hx: 0.16,
            hy: 0.14,
            hz: 0.25,
        };
        Self {
            torso_boxes: vec![BodyBox {
                cx: 0.0,
                cy: 0.0,
                cz: 0.0,
                hx: 0.45,
                hy: 0.20,
                hz: 0.15,
            }],
            limb_boxes: [
                limb(0.36, 0.22),
                limb(0.36, -0.22),
                limb(-0.36, 0.22),
                limb(-0.36, -0.22),
            ],
            min_contact_cells: 4,
        }
    }
}

impl RobotShape {
    /// Load from a `shape.cfg` key-value file. Requires at least one
    /// `torso_box` and all four `limb_box_<lf|rf|lh|rh>` entries.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let entries = load_entries(path)?;
        let parse_box = |e: &Entry| -> Result<BodyBox, ConfigError> {
            e.require_len(6)?;
            let b = BodyBox {
                cx: e.f64(0)?,
                cy: e.f64(1)?,
                cz: e.f64(2)?,
                hx: e.f64(3)?,
                hy: e.f64(4)?,
                hz: e.f64(5)?,
            };
            b.validate().map_err(|m| e.err(m))?;
            Ok(b)
        };
        let mut torso = Vec::new();
        let mut limbs: [Option<BodyBox>; 4] = [None; 4];
        let mut min_contact_cells = 4usize;
        for e in &entries {
            match e.key.as_str() {
                "torso_box" => torso.push(parse_box(e)?),
                "min_contact_cells" => min_contact_cells = e.usize(0)?,
                key => {
                    let limb = key
                        .strip_prefix("limb_box_")
                        .and_then(|n| LIMB_NAMES.iter().position(|l| *l == n));
                    match limb {
                        Some(i) => limbs[i] = Some(parse_box(e)?),
                        None => {
                            return Err(ConfigError::UnknownKey {
                                key: key.to_string(),
                                line: e.line,
                            })
                        }
                    }
                }
            }
        }
        if torso.is_empty() {
            return Err(ConfigError::MissingKey("torso_box".into()));
        }
        let mut limb_boxes = [BodyBox {
            cx: 0.0,
            cy: 0.0,
            cz: 0.0,
            hx: 1.0,
            hy: 1.0,
            hz: 1.0,
        }; 4];
        for (i, l) in limbs.into_iter().enumerate() {
            limb_boxes[i] = l.ok_or_else(|| {
                ConfigError::MissingKey(format!("limb_box_{}", LIMB_NAMES[i]))
            })?;
        }
        Ok(Self {
            torso_boxes: torso,
            limb_boxes,
            min_contact_cells,
        })
    }

    /// Planar torso footprint rectangles (body frame).
    pub fn torso_footprint(&self) -> Vec<PlanarRect> {
        self.torso_boxes
            .iter()
            .map(|b| PlanarRect {
                cx: b.cx,
                cy: b.cy,
                hx: b.hx,
                hy: b.hy,
            })
            .collect()
    }

    /// Shape with every torso box dimension reduced by `shrink` meters
    /// (half-extents by `shrink / 2`), floored at 1 mm.
    pub fn with_torso_shrunk(&self, shrink: f64) -> RobotShape {
        let mut out = self.clone();
        for b in &mut out.torso_boxes {
            b.hx = (b.hx - shrink / 2.0).max(1e-3);
            b.hy = (b.hy - shrink / 2.0).max(1e-3);
            b.hz = (b.hz - shrink / 2.0).max(1e-3);
        }
        out
    }
}

/// Planar rectangle in the body frame.
#[derive(Debug, Clone, Copy)]
pub struct PlanarRect {
    pub cx: f64,
    pub cy: f64,
    pub hx: f64,
    pub hy: f64,
}

/// Visit every map cell whose center lies inside `rect` placed at planar
/// pose (x, y, yaw).
pub fn for_each_cell_in_rect(
    map: &HeightMap,
    x: f64,
    y: f64,
    yaw: f64,
    rect: &PlanarRect,
    mut f: impl FnMut(CellIndex),
) {
    let (wcx, wcy) = rotate2(rect.cx, rect.cy, yaw);
    let (center_x, center_y) = (x + wcx, y + wcy);
    let reach = rect.hx.hypot(rect.hy);
    let res = map.resolution();
    let (ox, oy) = map.origin();
    let min_ix = (((center_x - reach - ox) / res).ceil().max(0.0)) as usize;
    let min_iy = (((center_y - reach - oy) / res).ceil().max(0.0)) as usize;
    let max_ix = (((center_x + reach - ox) / res).floor()).min(map.size_x() as f64 - 1.0);
    let max_iy = (((center_y + reach - oy) / res).floor()).min(map.size_y() as f64 - 1.0);
    if max_ix < 0.0 || max_iy < 0.0 {
        return;
    }
    for iy in min_iy..=max_iy as usize {
        for ix in min_ix..=max_ix as usize {
            let c = CellIndex { ix, iy };
            let (cx, cy) = map.cell_center(c);
            let (bx, by) = rotate2_inv(cx - x, cy - y, yaw);
            if (bx - rect.cx).abs() <= rect.hx && (by - rect.cy).abs() <= rect.hy {
                f(c);
            }
        }
    }
}

/// Rotate a body-frame offset into the world frame with ZYX (yaw, pitch,
/// roll) convention. Negative pitch is nose-up.
fn rotate_zyx(v: (f64, f64, f64), yaw: f64, pitch: f64, roll: f64) -> (f64, f64, f64) {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let (x, y, z) = v;
    // Rx then Ry then Rz.
    let (y1, z1) = (cr * y - sr * z, sr * y + cr * z);
    let (x2, z2) = (cp * x + sp * z1, -sp * x + cp * z1);
    let (x3, y3) = (cy * x2 - sy * y1, sy * x2 + cy * y1);
    (x3, y3, z2)
}

pub const MAX_TILT_RAD: f64 = 0.6;

/// Lift a planar sample to a full pose: z from a least-squares plane over
/// the steppable cells under the torso footprint plus `h_torso`, roll and
/// pitch from the plane normal (clamped). Returns None with fewer than 3
/// support cells.
pub fn augment_pose(map: &HeightMap, x: f64, y: f64, yaw: f64, h_torso: f64) -> Option<Pose> {
    augment_pose_with(map, x, y, yaw, h_torso, &RobotShape::default().torso_footprint())
}

pub fn augment_pose_with(
    map: &HeightMap,
    x: f64,
    y: f64,
    yaw: f64,
    h_torso: f64,
    footprint: &[PlanarRect],
) -> Option<Pose> {
    let mut pts: Vec<(f64, f64, f64)> = Vec::new();
    for rect in footprint {
        for_each_cell_in_rect(map, x, y, yaw, rect, |c| {
            if map.steppable_cell(c) {
                if let Some(z) = map.effective_elevation(c) {
                    let (cx, cy) = map.cell_center(c);
                    pts.push((cx - x, cy - y, z));
                }
            }
        });
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    if pts.len() < 3 {
        return None;
    }

    // Least squares z = a + b*dx + c*dy around the query point.
    let n = pts.len() as f64;
    let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(dx, dy, z) in &pts {
        sx += dx;
        sy += dy;
        sz += z;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * z;
        syz += dy * z;
    }
    // Normal equations for [a, b, c].
    let m = [[n, sx, sy], [sx, sxx, sxy], [sy, sxy, syy]];
    let rhs = [sz, sxz, syz];
    let (a, b, c) = match solve3(m, rhs) {
        Some(s) => (s[0], s[1], s[2]),
        // Degenerate support (collinear cells): horizontal plane at mean z.
        None => (sz / n, 0.0, 0.0),
    };

    let yaw = wrap_angle(yaw);
    let (cy, sy_) = (yaw.cos(), yaw.sin());
    let slope_fwd = b * cy + c * sy_;
    let slope_left = -b * sy_ + c * cy;
    let pitch = (-slope_fwd.atan()).clamp(-MAX_TILT_RAD, MAX_TILT_RAD);
    let roll = slope_left.atan().clamp(-MAX_TILT_RAD, MAX_TILT_RAD);
    Some(Pose {
        x,
        y,
        z: a + h_torso,
        yaw,
        roll,
        pitch,
    })
}

fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    // Scale-aware singularity guard.
    let scale = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if det.abs() <= 1e-12 * scale.powi(3).max(1e-12) {
        return None;
    }
    let mut out = [0.0f64; 3];
    for k in 0..3 {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = rhs[r];
        }
        let detk = mk[0][0] * (mk[1][1] * mk[2][2] - mk[1][2] * mk[2][1])
            - mk[0][1] * (mk[1][0] * mk[2][2] - mk[1][2] * mk[2][0])
            + mk[0][2] * (mk[1][0] * mk[2][1] - mk[1][1] * mk[2][0]);
        out[k] = detk / det;
    }
    Some(out)
}

/// Verdict of a reachability check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseCheck {
    Valid,
    TorsoCollision,
    /// Index into [`RobotShape::limb_boxes`] of the first failing limb.
    LimbUnreachable(usize),
}

impl PoseCheck {
    pub fn is_valid(&self) -> bool {
        matches!(self, PoseCheck::Valid)
    }
}

/// Torso boxes must not contain known effective geometry above their lower
/// face; every limb box needs `min_contact_cells` steppable cells whose
/// effective elevation falls inside the box's vertical span. Unknown cells
/// never collide and never support.
pub fn check_pose(map: &HeightMap, shape: &RobotShape, pose: &Pose) -> PoseCheck {
    for b in &shape.torso_boxes {
        let (cx, cy, cz) = rotate_zyx((b.cx, b.cy, b.cz), pose.yaw, pose.pitch, pose.roll);
        let center_z = pose.z + cz;
        let low = center_z - b.hz;
        let rect = PlanarRect {
            cx: 0.0,
            cy: 0.0,
            hx: b.hx,
            hy: b.hy,
        };
        let mut collided = false;
        for_each_cell_in_rect(map, pose.x + cx, pose.y + cy, pose.yaw, &rect, |c| {
            if collided {
                return;
            }
            if let Some(z) = map.effective_elevation(c) {
                if z > low {
                    collided = true;
                }
            }
        });
        if collided {
            return PoseCheck::TorsoCollision;
        }
    }
    for (i, b) in shape.limb_boxes.iter().enumerate() {
        let (cx, cy, cz) = rotate_zyx((b.cx, b.cy, b.cz), pose.yaw, pose.pitch, pose.roll);
        let center_z = pose.z + cz;
        let (low, high) = (center_z - b.hz, center_z + b.hz);
        let rect = PlanarRect {
            cx: 0.0,
            cy: 0.0,
            hx: b.hx,
            hy: b.hy,
        };
        let mut contacts = 0usize;
        for_each_cell_in_rect(map, pose.x + cx, pose.y + cy, pose.yaw, &rect, |c| {
            if map.steppable_cell(c) {
                if let Some(z) = map.effective_elevation(c) {
                    if z >= low && z <= high {
                        contacts += 1;
                    }
                }
            }
        });
        if contacts < shape.min_contact_cells {
            return PoseCheck::LimbUnreachable(i);
        }
    }
    PoseCheck::Valid
}
