//! Boolean disk morphology on the steppable mask.
//!
//! Cells outside the grid count as unsteppable, so erosion retreats from the
//! map border as well as from in-map hazards.

/// Offsets of all cells whose center distance is at most `radius_m`.
pub fn disk_offsets(radius_m: f64, resolution: f64) -> Vec<(i64, i64)> {
    assert!(radius_m >= 0.0 && resolution > 0.0);
    let r_cells = (radius_m / resolution).floor() as i64 + 1;
    let r2 = radius_m * radius_m;
    let mut out = Vec::new();
    for dy in -r_cells..=r_cells {
        for dx in -r_cells..=r_cells {
            let d2 = (dx * dx + dy * dy) as f64 * resolution * resolution;
            if d2 <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn morph(
    mask: &[bool],
    size_x: usize,
    size_y: usize,
    offsets: &[(i64, i64)],
    erode: bool,
) -> Vec<bool> {
    assert_eq!(mask.len(), size_x * size_y);
    let mut out = vec![false; mask.len()];
    for iy in 0..size_y as i64 {
        for ix in 0..size_x as i64 {
            let mut acc = erode;
            for &(dx, dy) in offsets {
                let nx = ix + dx;
                let ny = iy + dy;
                let v = if nx < 0 || ny < 0 || nx >= size_x as i64 || ny >= size_y as i64 {
                    false // outside the grid is unsteppable
                } else {
                    mask[ny as usize * size_x + nx as usize]
                };
                if erode {
                    if !v {
                        acc = false;
                        break;
                    }
                } else if v {
                    acc = true;
                    break;
                }
            }
            out[iy as usize * size_x + ix as usize] = acc;
        }
    }
    out
}

/// Mask OR-ed over a disk: grows steppable regions, closing small holes.
pub fn dilate(mask: &[bool], size_x: usize, size_y: usize, radius_m: f64, resolution: f64) -> Vec<bool> {
    morph(mask, size_x, size_y, &disk_offsets(radius_m, resolution), false)
}

/// Mask AND-ed over a disk: retreats steppable regions from hazards and from
/// the grid border.
pub fn erode(mask: &[bool], size_x: usize, size_y: usize, radius_m: f64, resolution: f64) -> Vec<bool> {
    morph(mask, size_x, size_y, &disk_offsets(radius_m, resolution), true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_is_symmetric_and_inclusive() {
        let d = disk_offsets(0.15, 0.04);
        assert!(d.contains(&(0, 0)));
        assert!(d.contains(&(3, 0)) && d.contains(&(-3, 0)));
        assert!(d.contains(&(3, 1)));
        assert!(!d.contains(&(3, 3))); // distance 0.1697 > 0.15
        assert!(!d.contains(&(4, 0)));
    }

    #[test]
    fn dilate_then_erode_closes_single_cell_hole() {
        let (sx, sy) = (20, 20);
        let mut mask = vec![true; sx * sy];
        mask[10 * sx + 10] = false;
        let closed = erode(&dilate(&mask, sx, sy, 0.06, 0.04), sx, sy, 0.15, 0.04);
        assert!(closed[10 * sx + 10], "isolated spot should be erased");
    }

    #[test]
    fn half_plane_retreats_by_radius_difference() {
        let (sx, sy) = (40, 12);
        // Unsteppable half-plane for ix >= 20.
        let mut mask = vec![true; sx * sy];
        for iy in 0..sy {
            for ix in 20..sx {
                mask[iy * sx + ix] = false;
            }
        }
        let out = erode(&dilate(&mask, sx, sy, 0.06, 0.04), sx, sy, 0.15, 0.04);
        // Net retreat 0.09 m ~ 2 cells at 0.04: boundary moves from ix=19 to ix=17.
        let mid = (sy / 2) * sx;
        assert!(out[mid + 16]);
        assert!(!out[mid + 18]);
        assert!(!out[mid + 19]);
    }

    #[test]
    fn all_true_interior_survives_border_erodes() {
        let (sx, sy) = (30, 30);
        let mask = vec![true; sx * sy];
        let out = erode(&dilate(&mask, sx, sy, 0.06, 0.04), sx, sy, 0.15, 0.04);
        // Interior unchanged.
        assert!(out[15 * sx + 15]);
        // Within r_erode of the border: unsteppable (outside counts as false).
        assert!(!out[0]);
        assert!(!out[2 * sx + 15]);
        assert!(out[4 * sx + 15]);
    }
}
