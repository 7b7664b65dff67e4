//! Per-cell foothold scoring over the effective elevation surface.

use crate::mlp::{logistic, MlpNetwork};
use crate::terrain::{CellIndex, HeightMap};

use super::PipelineError;

/// Slope/roughness surrogate for the learned foothold score. Produces 1.0 on
/// flat smooth ground and decays toward 0 as local slope or roughness
/// saturate their caps.
#[derive(Debug, Clone)]
pub struct HeuristicFootholdParams {
    pub w_slope: f64,
    pub w_rough: f64,
    /// Slope saturation (rise over run).
    pub slope_max: f64,
    /// Roughness saturation: elevation standard deviation in the 5x5 window, meters.
    pub rough_max: f64,
}

impl Default for HeuristicFootholdParams {
    fn default() -> Self {
        Self {
            w_slope: 0.7,
            w_rough: 0.5,
            slope_max: 40f64.to_radians().tan(),
            rough_max: 0.05,
        }
    }
}

/// Number of inputs the MLP foothold model consumes: a 5x5 window of
/// elevation deltas relative to the center cell, row-major, unknown -> -1.
pub const FOOTHOLD_MLP_INPUTS: usize = 25;

#[derive(Debug, Clone)]
pub enum FootholdModel {
    Heuristic(HeuristicFootholdParams),
    Mlp(MlpNetwork),
}

impl Default for FootholdModel {
    fn default() -> Self {
        FootholdModel::Heuristic(HeuristicFootholdParams::default())
    }
}

impl FootholdModel {
    pub fn mlp(net: MlpNetwork) -> Result<Self, PipelineError> {
        net.require_shape(FOOTHOLD_MLP_INPUTS, 1)?;
        Ok(FootholdModel::Mlp(net))
    }

    pub fn mlp_from_file(path: &std::path::Path) -> Result<Self, PipelineError> {
        Self::mlp(MlpNetwork::load(path)?)
    }
}

fn effective(map: &HeightMap, ix: i64, iy: i64) -> Option<f64> {
    if ix < 0 || iy < 0 || ix >= map.size_x() as i64 || iy >= map.size_y() as i64 {
        return None;
    }
    map.effective_elevation(CellIndex {
        ix: ix as usize,
        iy: iy as usize,
    })
}

fn heuristic_score(map: &HeightMap, c: CellIndex, center: f64, p: &HeuristicFootholdParams) -> f64 {
    let res = map.resolution();
    let mut slope = 0.0f64;
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            if let Some(zn) = effective(map, c.ix as i64 + dx, c.iy as i64 + dy) {
                let dist = if dx != 0 && dy != 0 {
                    res * std::f64::consts::SQRT_2
                } else {
                    res
                };
                slope = slope.max((zn - center).abs() / dist);
            }
        }
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            if let Some(zn) = effective(map, c.ix as i64 + dx, c.iy as i64 + dy) {
                sum += zn;
                sum_sq += zn * zn;
                n += 1;
            }
        }
    }
    let rough = if n >= 2 {
        let mean = sum / n as f64;
        (sum_sq / n as f64 - mean * mean).max(0.0).sqrt()
    } else {
        0.0
    };
    let s = 1.0 - p.w_slope * (slope / p.slope_max).min(1.0) - p.w_rough * (rough / p.rough_max).min(1.0);
    s.clamp(0.0, 1.0)
}

fn mlp_score(map: &HeightMap, c: CellIndex, center: f64, net: &MlpNetwork) -> f64 {
    let mut input = [-1.0f64; FOOTHOLD_MLP_INPUTS];
    let mut k = 0;
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            if let Some(zn) = effective(map, c.ix as i64 + dx, c.iy as i64 + dy) {
                input[k] = zn - center;
            }
            k += 1;
        }
    }
    logistic(net.forward(&input)[0])
}

/// Fill the foothold layer for every cell with a known effective elevation;
/// cells without one get an unknown score.
pub fn score_footholds(map: &mut HeightMap, model: &FootholdModel) {
    let cells: Vec<CellIndex> = map.cells().collect();
    for c in cells {
        match map.effective_elevation(c) {
            None => map.clear_foothold(c),
            Some(center) => {
                let score = match model {
                    FootholdModel::Heuristic(p) => heuristic_score(map, c, center, p),
                    FootholdModel::Mlp(net) => mlp_score(map, c, center, net),
                };
                map.set_foothold(c, score);
            }
        }
    }
}
