//! Exact 2D line-cell traversal and ray-derived elevation upper bounds.

use crate::geom::Point3;
use crate::terrain::{CellIndex, HeightMap};

use super::PointCloud;

/// Rays passing this far below an observed elevation refute it: the cell
/// reverts to unknown (free-space evidence contradicts the old reading).
/// The terminal cell of a ray is exempt because the ray hit geometry there.
pub const ELEVATION_REFUTE_CLEARANCE: f64 = 0.05;

const MIN_CROSSING_SPAN: f64 = 1e-12;

/// Walk the cells crossed by the ground projection of segment p0 -> p1 over
/// a grid whose cell (0,0) is centered at `origin` with spacing `resolution`.
/// `visit(ix, iy, t_in, t_out)` receives signed cell coordinates (callers
/// bound-check) and the segment parameter span inside the cell; spans are
/// clamped to [0, 1]. Corner touches and boundary grazes may be emitted with
/// zero span; consumers should ignore spans below `MIN_CROSSING_SPAN`.
pub fn traverse_cells(
    origin: (f64, f64),
    resolution: f64,
    p0: (f64, f64),
    p1: (f64, f64),
    mut visit: impl FnMut(i64, i64, f64, f64),
) {
    // Continuous cell coordinates: cell k spans [k, k+1).
    let u0 = (
        (p0.0 - origin.0) / resolution + 0.5,
        (p0.1 - origin.1) / resolution + 0.5,
    );
    let u1 = (
        (p1.0 - origin.0) / resolution + 0.5,
        (p1.1 - origin.1) / resolution + 0.5,
    );
    let du = (u1.0 - u0.0, u1.1 - u0.1);
    let mut ix = u0.0.floor() as i64;
    let mut iy = u0.1.floor() as i64;
    let end_ix = u1.0.floor() as i64;
    let end_iy = u1.1.floor() as i64;

    let step_x: i64 = if du.0 > 0.0 {
        1
    } else if du.0 < 0.0 {
        -1
    } else {
        0
    };
    let step_y: i64 = if du.1 > 0.0 {
        1
    } else if du.1 < 0.0 {
        -1
    } else {
        0
    };
    let t_delta_x = if du.0 != 0.0 { 1.0 / du.0.abs() } else { f64::INFINITY };
    let t_delta_y = if du.1 != 0.0 { 1.0 / du.1.abs() } else { f64::INFINITY };
    let mut t_max_x = if du.0 > 0.0 {
        (ix as f64 + 1.0 - u0.0) * t_delta_x
    } else if du.0 < 0.0 {
        (u0.0 - ix as f64) * t_delta_x
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if du.1 > 0.0 {
        (iy as f64 + 1.0 - u0.1) * t_delta_y
    } else if du.1 < 0.0 {
        (u0.1 - iy as f64) * t_delta_y
    } else {
        f64::INFINITY
    };

    let max_steps = (du.0.abs() + du.1.abs()).ceil() as usize + 4;
    let mut t_in = 0.0f64;
    for _ in 0..max_steps {
        let boundary = t_max_x.min(t_max_y);
        let t_out = boundary.min(1.0).max(t_in);
        visit(ix, iy, t_in, t_out);
        if (ix == end_ix && iy == end_iy) || boundary >= 1.0 {
            return;
        }
        t_in = boundary;
        if t_max_x < t_max_y {
            ix += step_x;
            t_max_x += t_delta_x;
        } else if t_max_y < t_max_x {
            iy += step_y;
            t_max_y += t_delta_y;
        } else {
            // Exact corner crossing: advance both axes.
            ix += step_x;
            iy += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        }
    }
}

fn cell_of(map: &HeightMap, x: f64, y: f64) -> (i64, i64) {
    let (ox, oy) = map.origin();
    let res = map.resolution();
    (
        ((x - ox) / res + 0.5).floor() as i64,
        ((y - oy) / res + 0.5).floor() as i64,
    )
}

/// Min-fuse the crossing height of every sensor->point ray into the
/// upper-bound layer. The crossing height of a cell is the ray z evaluated
/// at the parameter midway between the cell's entry and exit.
///
/// Observed elevations that sit above a crossing by more than
/// [`ELEVATION_REFUTE_CLEARANCE`] are cleared: the ray proves that space
/// free, so the old reading (typically a stale ceiling spike) is dropped.
/// The ray's terminal cell never refutes since the ray stopped on geometry.
pub fn compute_virtual_surfaces(map: &mut HeightMap, cloud: &PointCloud) {
    let origin = map.origin();
    let res = map.resolution();
    let (sx, sy) = (map.size_x() as i64, map.size_y() as i64);
    let s = cloud.sensor_origin;
    for p in &cloud.points {
        let end = cell_of(map, p.x, p.y);
        ray_into_map(map, origin, res, (sx, sy), s, *p, end);
    }
}

fn ray_into_map(
    map: &mut HeightMap,
    origin: (f64, f64),
    res: f64,
    size: (i64, i64),
    s: Point3,
    p: Point3,
    end: (i64, i64),
) {
    traverse_cells(origin, res, (s.x, s.y), (p.x, p.y), |ix, iy, t_in, t_out| {
        if t_out - t_in <= MIN_CROSSING_SPAN {
            return;
        }
        if ix < 0 || iy < 0 || ix >= size.0 || iy >= size.1 {
            return;
        }
        let c = CellIndex {
            ix: ix as usize,
            iy: iy as usize,
        };
        let t_mid = 0.5 * (t_in + t_out);
        let z = s.z + t_mid * (p.z - s.z);
        map.fuse_upper_bound_min(c, z);
        let terminal = (ix, iy) == end;
        if !terminal {
            if let Some(elev) = map.elevation_cell(c) {
                if elev > z + ELEVATION_REFUTE_CLEARANCE {
                    map.clear_elevation(c);
                    map.clear_foothold(c);
                }
            }
        }
    });
}
