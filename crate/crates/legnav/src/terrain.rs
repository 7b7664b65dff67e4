//! Layered 2.5D robo-centric height map.
//!
//! The map holds five layers over a regular grid: observed elevation,
//! foothold score, ray-derived elevation upper bound, an observed flag and
//! the derived steppable mask. Unknown float cells are stored as NaN in
//! memory and serialized as the literal token `nan` in the `.ahm` text
//! format, which round-trips bit-exact through shortest-decimal printing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Integer cell coordinates; valid when `0 <= ix < size_x` and `0 <= iy < size_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellIndex {
    pub ix: usize,
    pub iy: usize,
}

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header at line {0}")]
    MalformedHeader(usize),
    #[error("unsupported map format version `{0}` (expected 1)")]
    UnsupportedVersion(String),
    #[error("resolution must be finite and > 0")]
    BadResolution,
    #[error("layer `{layer}`: {msg}")]
    DimensionMismatch { layer: String, msg: String },
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("line {line}: bad value `{value}`")]
    BadValue { line: usize, value: String },
}

/// Robo-centric layered height map. Immutable snapshot once a pipeline
/// frame finishes; all queries are read-only and safe to run concurrently.
#[derive(Debug, Clone)]
pub struct HeightMap {
    size_x: usize,
    size_y: usize,
    resolution: f64,
    origin_x: f64,
    origin_y: f64,
    /// Sensor origin height of the last integrated cloud; gates which
    /// upper-bound cells are eligible to support planning.
    frame_z_sensor: f64,
    elevation: Vec<f64>,
    foothold: Vec<f64>,
    upper_bound: Vec<f64>,
    observed: Vec<bool>,
    steppable: Vec<bool>,
}

impl PartialEq for HeightMap {
    /// Bitwise equality on float layers so that unknown (NaN) cells compare
    /// equal; this is the round-trip identity used by the file format tests.
    fn eq(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.size_x == other.size_x
            && self.size_y == other.size_y
            && self.resolution.to_bits() == other.resolution.to_bits()
            && self.origin_x.to_bits() == other.origin_x.to_bits()
            && self.origin_y.to_bits() == other.origin_y.to_bits()
            && self.frame_z_sensor.to_bits() == other.frame_z_sensor.to_bits()
            && bits(&self.elevation) == bits(&other.elevation)
            && bits(&self.foothold) == bits(&other.foothold)
            && bits(&self.upper_bound) == bits(&other.upper_bound)
            && self.observed == other.observed
            && self.steppable == other.steppable
    }
}

impl Default for HeightMap {
    /// 8 m x 8 m at 0.04 m resolution (200x200 cells), centered on the world origin.
    fn default() -> Self {
        Self::new(200, 200, 0.04, (0.0, 0.0))
    }
}

impl HeightMap {
    /// Fully-unknown map whose grid is centered at `center`.
    pub fn new(size_x: usize, size_y: usize, resolution: f64, center: (f64, f64)) -> Self {
        assert!(
            resolution.is_finite() && resolution > 0.0,
            "resolution must be finite and > 0"
        );
        assert!(size_x > 0 && size_y > 0, "map must have at least one cell");
        let n = size_x * size_y;
        let origin_x = center.0 - (size_x as f64 - 1.0) / 2.0 * resolution;
        let origin_y = center.1 - (size_y as f64 - 1.0) / 2.0 * resolution;
        Self {
            size_x,
            size_y,
            resolution,
            origin_x,
            origin_y,
            frame_z_sensor: 0.0,
            elevation: vec![f64::NAN; n],
            foothold: vec![f64::NAN; n],
            upper_bound: vec![f64::NAN; n],
            observed: vec![false; n],
            steppable: vec![false; n],
        }
    }

    /// Flat fully-observed fixture: constant elevation, foothold score 1,
    /// everything steppable. Handy for tests and synthetic scenarios.
    pub fn flat(size_x: usize, size_y: usize, resolution: f64, center: (f64, f64), z: f64) -> Self {
        let mut m = Self::new(size_x, size_y, resolution, center);
        for i in 0..m.elevation.len() {
            m.elevation[i] = z;
            m.observed[i] = true;
            m.foothold[i] = 1.0;
            m.steppable[i] = true;
        }
        m
    }

    pub fn size_x(&self) -> usize {
        self.size_x
    }

    pub fn size_y(&self) -> usize {
        self.size_y
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// World coordinates of cell (0,0)'s center.
    pub fn origin(&self) -> (f64, f64) {
        (self.origin_x, self.origin_y)
    }

    pub fn frame_z_sensor(&self) -> f64 {
        self.frame_z_sensor
    }

    pub fn set_frame_z_sensor(&mut self, z: f64) {
        self.frame_z_sensor = z;
    }

    /// Grid extent in world coordinates (outer cell edges): (min_x, min_y, max_x, max_y).
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x - 0.5 * self.resolution,
            self.origin_y - 0.5 * self.resolution,
            self.origin_x + (self.size_x as f64 - 0.5) * self.resolution,
            self.origin_y + (self.size_y as f64 - 0.5) * self.resolution,
        )
    }

    fn idx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.size_x && iy < self.size_y);
        iy * self.size_x + ix
    }

    pub fn cell_center(&self, c: CellIndex) -> (f64, f64) {
        (
            self.origin_x + c.ix as f64 * self.resolution,
            self.origin_y + c.iy as f64 * self.resolution,
        )
    }

    /// Cell whose center is nearest to (x, y), or None outside the grid.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<CellIndex> {
        let fx = ((x - self.origin_x) / self.resolution).round();
        let fy = ((y - self.origin_y) / self.resolution).round();
        if fx < 0.0 || fy < 0.0 || fx >= self.size_x as f64 || fy >= self.size_y as f64 {
            return None;
        }
        Some(CellIndex {
            ix: fx as usize,
            iy: fy as usize,
        })
    }

    pub fn elevation_cell(&self, c: CellIndex) -> Option<f64> {
        let v = self.elevation[self.idx(c.ix, c.iy)];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn foothold_cell(&self, c: CellIndex) -> Option<f64> {
        let v = self.foothold[self.idx(c.ix, c.iy)];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn upper_bound_cell(&self, c: CellIndex) -> Option<f64> {
        let v = self.upper_bound[self.idx(c.ix, c.iy)];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn observed_cell(&self, c: CellIndex) -> bool {
        self.observed[self.idx(c.ix, c.iy)]
    }

    pub fn steppable_cell(&self, c: CellIndex) -> bool {
        self.steppable[self.idx(c.ix, c.iy)]
    }

    /// Upper bound usable for planning: known and at or above the sensor
    /// height of the frame that produced this map.
    pub fn upper_bound_eligible(&self, c: CellIndex) -> Option<f64> {
        self.upper_bound_cell(c).filter(|&ub| ub >= self.frame_z_sensor)
    }

    /// Elevation the planner may rely on: observed elevation when present,
    /// else an eligible (above-sensor) upper bound.
    pub fn effective_elevation(&self, c: CellIndex) -> Option<f64> {
        if self.observed_cell(c) {
            self.elevation_cell(c)
        } else {
            self.upper_bound_eligible(c)
        }
    }

    pub fn set_elevation(&mut self, c: CellIndex, z: f64) {
        assert!(z.is_finite());
        let i = self.idx(c.ix, c.iy);
        self.elevation[i] = z;
        self.observed[i] = true;
    }

    /// Forget an observed elevation (free-space refutation or test setup).
    pub fn clear_elevation(&mut self, c: CellIndex) {
        let i = self.idx(c.ix, c.iy);
        self.elevation[i] = f64::NAN;
        self.observed[i] = false;
    }

    /// Max-fuse a measurement into the elevation layer and mark observed.
    pub fn fuse_elevation_max(&mut self, c: CellIndex, z: f64) {
        assert!(z.is_finite());
        let i = self.idx(c.ix, c.iy);
        let cur = self.elevation[i];
        self.elevation[i] = if cur.is_nan() { z } else { cur.max(z) };
        self.observed[i] = true;
    }

    /// Min-fuse a ray crossing height into the upper-bound layer.
    pub fn fuse_upper_bound_min(&mut self, c: CellIndex, z: f64) {
        assert!(z.is_finite());
        let i = self.idx(c.ix, c.iy);
        let cur = self.upper_bound[i];
        self.upper_bound[i] = if cur.is_nan() { z } else { cur.min(z) };
    }

    pub fn set_foothold(&mut self, c: CellIndex, score: f64) {
        assert!(
            (0.0..=1.0).contains(&score),
            "foothold score out of [0,1]: {score}"
        );
        let i = self.idx(c.ix, c.iy);
        self.foothold[i] = score;
    }

    pub fn clear_foothold(&mut self, c: CellIndex) {
        let i = self.idx(c.ix, c.iy);
        self.foothold[i] = f64::NAN;
    }

    pub fn set_steppable(&mut self, c: CellIndex, v: bool) {
        let i = self.idx(c.ix, c.iy);
        self.steppable[i] = v;
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        let sx = self.size_x;
        (0..self.size_x * self.size_y).map(move |i| CellIndex {
            ix: i % sx,
            iy: i / sx,
        })
    }

    /// Elevation at a world point. Bilinear over the four surrounding cells
    /// when all are known; nearest known of the four when some are unknown;
    /// None when all four are unknown or the point is outside the grid.
    /// Queries landing on a known cell center return the stored value exactly.
    pub fn elevation_at(&self, x: f64, y: f64) -> Option<f64> {
        let near = self.world_to_cell(x, y)?;
        let fx = (x - self.origin_x) / self.resolution;
        let fy = (y - self.origin_y) / self.resolution;
        // Exactly-at-center queries short-circuit to the stored sample.
        if (fx - fx.round()).abs() <= 1e-9 && (fy - fy.round()).abs() <= 1e-9 {
            if let Some(v) = self.elevation_cell(near) {
                return Some(v);
            }
        }
        let ix0 = fx.floor();
        let iy0 = fy.floor();
        let tx = fx - ix0;
        let ty = fy - iy0;
        let mut vals = [[None::<f64>; 2]; 2];
        for (dy, row) in vals.iter_mut().enumerate() {
            for (dx, v) in row.iter_mut().enumerate() {
                let cx = ix0 + dx as f64;
                let cy = iy0 + dy as f64;
                if cx >= 0.0 && cy >= 0.0 && cx < self.size_x as f64 && cy < self.size_y as f64 {
                    *v = self.elevation_cell(CellIndex {
                        ix: cx as usize,
                        iy: cy as usize,
                    });
                }
            }
        }
        let known = vals.iter().flatten().filter(|v| v.is_some()).count();
        match known {
            0 => None,
            4 => {
                let v00 = vals[0][0].unwrap();
                let v10 = vals[0][1].unwrap();
                let v01 = vals[1][0].unwrap();
                let v11 = vals[1][1].unwrap();
                Some(
                    v00 * (1.0 - tx) * (1.0 - ty)
                        + v10 * tx * (1.0 - ty)
                        + v01 * (1.0 - tx) * ty
                        + v11 * tx * ty,
                )
            }
            _ => {
                // Nearest-known fallback keeps sparse maps queryable.
                let mut best: Option<(f64, f64)> = None;
                for (dy, row) in vals.iter().enumerate() {
                    for (dx, v) in row.iter().enumerate() {
                        if let Some(v) = v {
                            let ddx = tx - dx as f64;
                            let ddy = ty - dy as f64;
                            let d2 = ddx * ddx + ddy * ddy;
                            if best.map_or(true, |(bd, _)| d2 < bd) {
                                best = Some((d2, *v));
                            }
                        }
                    }
                }
                best.map(|(_, v)| v)
            }
        }
    }

    /// Shift the grid by whole cells so `new_center` lies within half a cell
    /// of the grid center. Overlapping cells are copied; exposed cells
    /// become unknown. No resampling.
    pub fn recenter(&self, new_center: (f64, f64)) -> HeightMap {
        let center_x = self.origin_x + (self.size_x as f64 - 1.0) / 2.0 * self.resolution;
        let center_y = self.origin_y + (self.size_y as f64 - 1.0) / 2.0 * self.resolution;
        let dx = ((new_center.0 - center_x) / self.resolution).round() as i64;
        let dy = ((new_center.1 - center_y) / self.resolution).round() as i64;
        if dx == 0 && dy == 0 {
            return self.clone();
        }
        let mut out = HeightMap {
            size_x: self.size_x,
            size_y: self.size_y,
            resolution: self.resolution,
            origin_x: self.origin_x + dx as f64 * self.resolution,
            origin_y: self.origin_y + dy as f64 * self.resolution,
            frame_z_sensor: self.frame_z_sensor,
            elevation: vec![f64::NAN; self.size_x * self.size_y],
            foothold: vec![f64::NAN; self.size_x * self.size_y],
            upper_bound: vec![f64::NAN; self.size_x * self.size_y],
            observed: vec![false; self.size_x * self.size_y],
            steppable: vec![false; self.size_x * self.size_y],
        };
        for ny in 0..self.size_y {
            let oy = ny as i64 + dy;
            if oy < 0 || oy >= self.size_y as i64 {
                continue;
            }
            for nx in 0..self.size_x {
                let ox = nx as i64 + dx;
                if ox < 0 || ox >= self.size_x as i64 {
                    continue;
                }
                let src = oy as usize * self.size_x + ox as usize;
                let dst = ny * self.size_x + nx;
                out.elevation[dst] = self.elevation[src];
                out.foothold[dst] = self.foothold[src];
                out.upper_bound[dst] = self.upper_bound[src];
                out.observed[dst] = self.observed[src];
                out.steppable[dst] = self.steppable[src];
            }
        }
        out
    }

    /// Serialize in the `ahm 1` text format.
    pub fn to_ahm(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ahm 1");
        let _ = writeln!(s, "size {} {}", self.size_x, self.size_y);
        let _ = writeln!(s, "resolution {}", self.resolution);
        let _ = writeln!(s, "origin {} {}", self.origin_x, self.origin_y);
        let _ = writeln!(s, "sensor_z {}", self.frame_z_sensor);
        let float_layer = |s: &mut String, name: &str, data: &[f64]| {
            let _ = writeln!(s, "layer {name}");
            for iy in 0..self.size_y {
                for ix in 0..self.size_x {
                    if ix > 0 {
                        s.push(' ');
                    }
                    let v = data[iy * self.size_x + ix];
                    if v.is_nan() {
                        s.push_str("nan");
                    } else {
                        let _ = write!(s, "{v}");
                    }
                }
                s.push('\n');
            }
        };
        let bool_layer = |s: &mut String, name: &str, data: &[bool]| {
            let _ = writeln!(s, "layer {name}");
            for iy in 0..self.size_y {
                for ix in 0..self.size_x {
                    if ix > 0 {
                        s.push(' ');
                    }
                    s.push(if data[iy * self.size_x + ix] { '1' } else { '0' });
                }
                s.push('\n');
            }
        };
        float_layer(&mut s, "elevation", &self.elevation);
        float_layer(&mut s, "foothold", &self.foothold);
        float_layer(&mut s, "upper_bound", &self.upper_bound);
        bool_layer(&mut s, "observed", &self.observed);
        bool_layer(&mut s, "steppable", &self.steppable);
        s
    }

    pub fn from_ahm(text: &str) -> Result<HeightMap, TerrainError> {
        let mut lines = text.lines().enumerate().peekable();
        let (_, magic) = lines.next().ok_or(TerrainError::MalformedHeader(1))?;
        let mut it = magic.split_whitespace();
        match (it.next(), it.next()) {
            (Some("ahm"), Some("1")) => {}
            (Some("ahm"), Some(v)) => return Err(TerrainError::UnsupportedVersion(v.to_string())),
            _ => return Err(TerrainError::MalformedHeader(1)),
        }

        let mut size: Option<(usize, usize)> = None;
        let mut resolution: Option<f64> = None;
        let mut origin: Option<(f64, f64)> = None;
        let mut sensor_z: Option<f64> = None;

        // Header key lines until the first `layer`.
        while let Some(&(i, line)) = lines.peek() {
            let mut tok = line.split_whitespace();
            let key = match tok.next() {
                Some(k) => k,
                None => {
                    lines.next();
                    continue;
                }
            };
            if key == "layer" {
                break;
            }
            let lineno = i + 1;
            let parse_f = |t: Option<&str>| -> Result<f64, TerrainError> {
                let t = t.ok_or(TerrainError::MalformedHeader(lineno))?;
                t.parse::<f64>().map_err(|_| TerrainError::BadValue {
                    line: lineno,
                    value: t.to_string(),
                })
            };
            match key {
                "size" => {
                    let sx = tok
                        .next()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or(TerrainError::MalformedHeader(lineno))?;
                    let sy = tok
                        .next()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or(TerrainError::MalformedHeader(lineno))?;
                    size = Some((sx, sy));
                }
                "resolution" => resolution = Some(parse_f(tok.next())?),
                "origin" => {
                    let x = parse_f(tok.next())?;
                    let y = parse_f(tok.next())?;
                    origin = Some((x, y));
                }
                "sensor_z" => sensor_z = Some(parse_f(tok.next())?),
                _ => return Err(TerrainError::MalformedHeader(lineno)),
            }
            lines.next();
        }

        let (size_x, size_y) = size.ok_or(TerrainError::MalformedHeader(1))?;
        let resolution = resolution.ok_or(TerrainError::MalformedHeader(1))?;
        if !resolution.is_finite() || resolution <= 0.0 {
            return Err(TerrainError::BadResolution);
        }
        let (origin_x, origin_y) = origin.ok_or(TerrainError::MalformedHeader(1))?;
        let frame_z_sensor = sensor_z.ok_or(TerrainError::MalformedHeader(1))?;
        if size_x == 0 || size_y == 0 {
            return Err(TerrainError::DimensionMismatch {
                layer: "header".to_string(),
                msg: "zero-sized map".to_string(),
            });
        }

        let n = size_x * size_y;
        let mut map = HeightMap {
            size_x,
            size_y,
            resolution,
            origin_x,
            origin_y,
            frame_z_sensor,
            elevation: vec![f64::NAN; n],
            foothold: vec![f64::NAN; n],
            upper_bound: vec![f64::NAN; n],
            observed: vec![false; n],
            steppable: vec![false; n],
        };

        while let Some((i, line)) = lines.next() {
            let mut tok = line.split_whitespace();
            match tok.next() {
                None => continue,
                Some("layer") => {}
                Some(other) => {
                    return Err(TerrainError::BadValue {
                        line: i + 1,
                        value: other.to_string(),
                    })
                }
            }
            let name = tok
                .next()
                .ok_or(TerrainError::MalformedHeader(i + 1))?
                .to_string();
            let is_float = match name.as_str() {
                "elevation" | "foothold" | "upper_bound" => true,
                "observed" | "steppable" => false,
                _ => return Err(TerrainError::UnknownLayer(name)),
            };
            let mut rows = 0usize;
            while rows < size_y {
                let (j, row) = match lines.peek() {
                    Some(&(j, row)) if !row.trim_start().starts_with("layer") => (j, row),
                    _ => {
                        return Err(TerrainError::DimensionMismatch {
                            layer: name,
                            msg: format!("expected {size_y} rows, got {rows}"),
                        })
                    }
                };
                let toks: Vec<&str> = row.split_whitespace().collect();
                if toks.len() != size_x {
                    return Err(TerrainError::DimensionMismatch {
                        layer: name,
                        msg: format!(
                            "row {rows} has {} values, expected {size_x}",
                            toks.len()
                        ),
                    });
                }
                for (ix, t) in toks.iter().enumerate() {
                    let idx = rows * size_x + ix;
                    if is_float {
                        let v = if *t == "nan" {
                            f64::NAN
                        } else {
                            let v: f64 = t.parse().map_err(|_| TerrainError::BadValue {
                                line: j + 1,
                                value: t.to_string(),
                            })?;
                            if v.is_nan() {
                                f64::NAN
                            } else {
                                v
                            }
                        };
                        match name.as_str() {
                            "elevation" => map.elevation[idx] = v,
                            "foothold" => {
                                if !v.is_nan() && !(0.0..=1.0).contains(&v) {
                                    return Err(TerrainError::BadValue {
                                        line: j + 1,
                                        value: t.to_string(),
                                    });
                                }
                                map.foothold[idx] = v;
                            }
                            _ => map.upper_bound[idx] = v,
                        }
                    } else {
                        let v = match *t {
                            "0" => false,
                            "1" => true,
                            _ => {
                                return Err(TerrainError::BadValue {
                                    line: j + 1,
                                    value: t.to_string(),
                                })
                            }
                        };
                        match name.as_str() {
                            "observed" => map.observed[idx] = v,
                            _ => map.steppable[idx] = v,
                        }
                    }
                }
                lines.next();
                rows += 1;
            }
        }
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<(), TerrainError> {
        fs::write(path, self.to_ahm())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<HeightMap, TerrainError> {
        Self::from_ahm(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_map() -> HeightMap {
        let mut m = HeightMap::new(3, 3, 0.5, (0.5, 0.5));
        for c in [(0, 0), (1, 0), (2, 0), (0, 1), (2, 2)] {
            m.set_elevation(
                CellIndex { ix: c.0, iy: c.1 },
                0.1 * (c.0 as f64) - 0.2 * (c.1 as f64),
            );
        }
        m.set_foothold(CellIndex { ix: 1, iy: 1 }, 0.75);
        m.fuse_upper_bound_min(CellIndex { ix: 2, iy: 1 }, 1.25);
        m.set_steppable(CellIndex { ix: 0, iy: 0 }, true);
        m.set_frame_z_sensor(0.55);
        m
    }

    #[test]
    fn world_to_cell_origin_and_multiples() {
        let m = HeightMap::new(200, 200, 0.04, (0.0, 0.0));
        let (ox, oy) = m.origin();
        assert_eq!(m.world_to_cell(ox, oy), Some(CellIndex { ix: 0, iy: 0 }));
        for k in [1usize, 7, 120, 199] {
            assert_eq!(
                m.world_to_cell(ox + 0.04 * k as f64, oy),
                Some(CellIndex { ix: k, iy: 0 }),
                "k={k}"
            );
        }
        // Rounds to ix = -1: out of bounds.
        assert_eq!(m.world_to_cell(ox - 0.03, oy), None);
        // Still rounds into cell 0.
        assert!(m.world_to_cell(ox - 0.019, oy).is_some());
    }

    #[test]
    fn elevation_at_constant_field() {
        let m = HeightMap::flat(10, 10, 0.1, (0.0, 0.0), 0.5);
        let (ox, oy) = m.origin();
        assert_eq!(m.elevation_at(ox + 0.33, oy + 0.47), Some(0.5));
    }

    #[test]
    fn elevation_at_bilinear_symmetry() {
        let mut m = HeightMap::new(2, 2, 1.0, (0.5, 0.5));
        m.set_elevation(CellIndex { ix: 0, iy: 0 }, 0.0);
        m.set_elevation(CellIndex { ix: 1, iy: 0 }, 0.0);
        m.set_elevation(CellIndex { ix: 0, iy: 1 }, 1.0);
        m.set_elevation(CellIndex { ix: 1, iy: 1 }, 1.0);
        let v = m.elevation_at(0.5, 0.5).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn elevation_at_nearest_known_fallback() {
        let mut m = HeightMap::new(2, 2, 1.0, (0.5, 0.5));
        m.set_elevation(CellIndex { ix: 0, iy: 0 }, 0.2);
        m.set_elevation(CellIndex { ix: 1, iy: 0 }, 0.2);
        m.set_elevation(CellIndex { ix: 0, iy: 1 }, 0.2);
        assert_eq!(m.elevation_at(0.5, 0.5), Some(0.2));
    }

    #[test]
    fn elevation_at_cell_center_is_exact() {
        let mut m = HeightMap::new(5, 5, 0.04, (37.13, -12.4));
        let c = CellIndex { ix: 3, iy: 2 };
        m.set_elevation(c, 0.123456789012345);
        let (cx, cy) = m.cell_center(c);
        assert_eq!(m.elevation_at(cx, cy), Some(0.123456789012345));
    }

    #[test]
    fn recenter_identity_and_translation() {
        let m = small_map();
        assert_eq!(m.recenter((0.5, 0.5)), m);

        let big = HeightMap::flat(20, 20, 0.1, (0.0, 0.0), 0.3);
        let shifted = big.recenter((1.0, 0.0)); // +10 cells in x
        for iy in 0..20 {
            for ix in 0..10 {
                // old cell (ix+10, iy) == new cell (ix, iy)
                assert_eq!(
                    shifted.elevation_cell(CellIndex { ix, iy }),
                    big.elevation_cell(CellIndex { ix: ix + 10, iy })
                );
            }
            for ix in 10..20 {
                assert_eq!(shifted.elevation_cell(CellIndex { ix, iy }), None);
            }
        }
    }

    #[test]
    fn recenter_no_overlap() {
        let m = HeightMap::flat(200, 200, 0.04, (0.0, 0.0), 1.0);
        let far = m.recenter((250.0 * 0.04, 0.0));
        assert!(far.cells().all(|c| far.elevation_cell(c).is_none()));
    }

    #[test]
    fn recenter_round_trip_restricted() {
        let m = small_map();
        let there = m.recenter((1.5, 0.0));
        let back = there.recenter((0.5, 0.5));
        assert_eq!(back.origin(), m.origin());
        for c in m.cells() {
            match back.elevation_cell(c) {
                Some(v) => assert_eq!(Some(v), m.elevation_cell(c)),
                None => {} // left the grid at some point
            }
        }
    }

    #[test]
    fn ahm_round_trip() {
        let m = small_map();
        let text = m.to_ahm();
        let loaded = HeightMap::from_ahm(&text).unwrap();
        assert_eq!(loaded, m);
    }

    #[test]
    fn ahm_version_gate() {
        let m = small_map();
        let text = m.to_ahm().replacen("ahm 1", "ahm 2", 1);
        assert!(matches!(
            HeightMap::from_ahm(&text),
            Err(TerrainError::UnsupportedVersion(_))
        ));
    }

    #[test]
    fn ahm_row_count_mismatch() {
        let m = small_map();
        let full = m.to_ahm();
        let mut lines: Vec<&str> = full.lines().collect();
        // Drop the last row of the last layer.
        lines.pop();
        let text = lines.join("\n");
        assert!(matches!(
            HeightMap::from_ahm(&text),
            Err(TerrainError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ahm_row_width_mismatch() {
        let m = small_map();
        let text = m.to_ahm();
        // Duplicate a value on the first elevation row.
        let mut out = String::new();
        let mut in_first_row = false;
        for line in text.lines() {
            if in_first_row {
                out.push_str(line);
                out.push_str(" 0");
                out.push('\n');
                in_first_row = false;
                continue;
            }
            if line == "layer elevation" {
                in_first_row = true;
            }
            out.push_str(line);
            out.push('\n');
        }
        assert!(matches!(
            HeightMap::from_ahm(&out),
            Err(TerrainError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn effective_elevation_gates_upper_bound_by_sensor_height() {
        let mut m = HeightMap::new(2, 1, 0.1, (0.0, 0.0));
        m.set_frame_z_sensor(0.5);
        let c = CellIndex { ix: 0, iy: 0 };
        m.fuse_upper_bound_min(c, 0.4);
        assert_eq!(m.effective_elevation(c), None);
        let c1 = CellIndex { ix: 1, iy: 0 };
        m.fuse_upper_bound_min(c1, 0.6);
        assert_eq!(m.effective_elevation(c1), Some(0.6));
        // Observed elevation wins over the upper bound.
        m.set_elevation(c1, 0.05);
        assert_eq!(m.effective_elevation(c1), Some(0.05));
    }

    proptest! {
        #[test]
        fn ahm_round_trip_random(values in proptest::collection::vec(
            proptest::option::of(-100.0f64..100.0), 12
        )) {
            let mut m = HeightMap::new(4, 3, 0.25, (0.0, 0.0));
            for (i, v) in values.iter().enumerate() {
                let c = CellIndex { ix: i % 4, iy: i / 4 };
                if let Some(v) = v {
                    m.set_elevation(c, *v);
                    m.fuse_upper_bound_min(c, v * 0.5);
                }
            }
            let loaded = HeightMap::from_ahm(&m.to_ahm()).unwrap();
            prop_assert!(loaded == m);
        }

        #[test]
        fn recenter_translation_is_pure(dx in -30i64..30, dy in -30i64..30) {
            let m = small_map();
            let (cx, cy) = (
                m.origin().0 + 1.0 * m.resolution(),
                m.origin().1 + 1.0 * m.resolution(),
            );
            let shifted = m.recenter((
                cx + dx as f64 * m.resolution(),
                cy + dy as f64 * m.resolution(),
            ));
            for c in m.cells() {
                let sx = c.ix as i64 - dx;
                let sy = c.iy as i64 - dy;
                if sx >= 0 && sx < 3 && sy >= 0 && sy < 3 {
                    let s = CellIndex { ix: sx as usize, iy: sy as usize };
                    prop_assert_eq!(
                        shifted.elevation_cell(s).map(f64::to_bits),
                        m.elevation_cell(c).map(f64::to_bits)
                    );
                }
            }
        }
    }
}
