//! Motion cost evaluation: (time, energy, risk) per candidate transition,
//! the weighted-sum combiner and the risk-threshold predicate.
//!
//! Two backends share the [`CostBackend`] contract: a deterministic analytic
//! surrogate (time from straight-line kinematics, risk from foothold hazard
//! sampled along the segment) and a loadable feedforward network in the
//! `amc 1` weight format.

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{rotate2, wrap_angle};
use crate::mlp::{logistic, softplus, MlpError, MlpNetwork};
use crate::reach::{for_each_cell_in_rect, PlanarRect, RobotShape};
use crate::terrain::HeightMap;

#[derive(Debug, Error)]
pub enum CostError {
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("query {index}: {source}")]
    Query {
        index: usize,
        #[source]
        source: Box<CostError>,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Normalized time, normalized energy and failure probability of one
/// candidate transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionCost {
    pub c_t: f64,
    pub c_e: f64,
    pub c_r: f64,
}

/// Weights of the scalar edge cost `w_t*c_t + w_e*c_e + w_r*c_r`.
#[derive(Debug, Clone, Copy)]
pub struct CostWeights {
    w_t: f64,
    w_e: f64,
    w_r: f64,
}

impl Default for CostWeights {
    /// Deployment weights: time 1, energy 0, risk 5.
    fn default() -> Self {
        Self {
            w_t: 1.0,
            w_e: 0.0,
            w_r: 5.0,
        }
    }
}

impl CostWeights {
    pub fn new(w_t: f64, w_e: f64, w_r: f64) -> Result<Self, CostError> {
        if !(w_t >= 0.0 && w_e >= 0.0 && w_r >= 0.0) {
            return Err(CostError::Invalid("cost weights must be >= 0".into()));
        }
        if w_t == 0.0 && w_e == 0.0 && w_r == 0.0 {
            return Err(CostError::Invalid("cost weights must not all be zero".into()));
        }
        Ok(Self { w_t, w_e, w_r })
    }

    pub fn w_t(&self) -> f64 {
        self.w_t
    }

    pub fn w_e(&self) -> f64 {
        self.w_e
    }

    pub fn w_r(&self) -> f64 {
        self.w_r
    }

    pub fn scaled(&self, a: f64) -> Result<Self, CostError> {
        if !(a > 0.0) {
            return Err(CostError::Invalid("scale must be > 0".into()));
        }
        Self::new(self.w_t * a, self.w_e * a, self.w_r * a)
    }
}

/// Scalar edge cost per the weighted sum of time, energy and risk.
pub fn combine(c: &MotionCost, w: &CostWeights) -> f64 {
    w.w_t * c.c_t + w.w_e * c.c_e + w.w_r * c.c_r
}

/// Strict-exceed convention: an edge with `c_r` exactly at the threshold
/// survives.
pub fn exceeds_risk(c: &MotionCost, threshold: f64) -> bool {
    debug_assert!((0.0..=1.0).contains(&threshold));
    c.c_r > threshold
}

/// One cost query: a start pose on the shared map plus the relative goal in
/// the start body frame.
#[derive(Debug, Clone, Copy)]
pub struct MotionQuery {
    pub start_x: f64,
    pub start_y: f64,
    pub start_yaw: f64,
    pub dx: f64,
    pub dy: f64,
    pub dyaw: f64,
}

/// Cost model contract: deterministic, immutable after construction, safe
/// to query from many threads.
pub trait CostBackend: Sync {
    fn evaluate(&self, map: &HeightMap, q: &MotionQuery) -> Result<MotionCost, CostError>;
}

/// Evaluate all queries against one map snapshot. Results are in input
/// order and identical to sequential evaluation; execution may be parallel.
/// The first failing query (by index) is reported.
pub fn batch_evaluate(
    backend: &dyn CostBackend,
    map: &HeightMap,
    queries: &[MotionQuery],
) -> Result<Vec<MotionCost>, CostError> {
    let results: Vec<Result<MotionCost, CostError>> = queries
        .par_iter()
        .map(|q| backend.evaluate(map, q))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => out.push(c),
            Err(e) => {
                return Err(CostError::Query {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

/// Parameters of the analytic surrogate backend.
#[derive(Debug, Clone)]
pub struct SurrogateParams {
    /// Peak locomotion speed, m/s.
    pub v_max: f64,
    /// Peak turn rate, rad/s.
    pub omega_max: f64,
    /// Time normalization constant, seconds.
    pub t_norm: f64,
    /// Energy as a fixed ratio of normalized time.
    pub energy_ratio: f64,
    /// Per-sample hazard gain in the risk product.
    pub hazard_gain: f64,
    /// Segment sampling stride, meters.
    pub sample_stride: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            v_max: 0.9,
            omega_max: 1.0,
            t_norm: 10.0,
            energy_ratio: 0.8,
            hazard_gain: 0.2,
            sample_stride: 0.10,
        }
    }
}

impl SurrogateParams {
    pub fn validate(&self) -> Result<(), CostError> {
        for (v, name) in [
            (self.v_max, "v_max"),
            (self.omega_max, "omega_max"),
            (self.t_norm, "t_norm"),
            (self.energy_ratio, "energy_ratio"),
            (self.hazard_gain, "hazard_gain"),
            (self.sample_stride, "sample_stride"),
        ] {
            if !(v > 0.0) {
                return Err(CostError::Invalid(format!("surrogate: {name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Deterministic analytic stand-in for a learned cost model.
///
/// Time is straight-line translation plus in-place rotation at peak rates.
/// Risk composes per-sample hazard along the segment:
/// `c_r = 1 - prod_i (1 - gain * H_i)` where `H_i` is the mean foothold
/// hazard (1 - score, unknown cells count 1) over the torso footprint at
/// evenly spaced sample poses no more than one stride apart, endpoints
/// included.
pub struct SurrogateBackend {
    params: SurrogateParams,
    footprint: Vec<PlanarRect>,
}

impl SurrogateBackend {
    pub fn new(params: SurrogateParams, shape: &RobotShape) -> Result<Self, CostError> {
        params.validate()?;
        Ok(Self {
            params,
            footprint: shape.torso_footprint(),
        })
    }

    pub fn params(&self) -> &SurrogateParams {
        &self.params
    }

    /// Mean hazard over footprint cells at a pose; 1.0 when the footprint
    /// contains no map cells at all.
    fn hazard_at(&self, map: &HeightMap, x: f64, y: f64, yaw: f64) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for rect in &self.footprint {
            for_each_cell_in_rect(map, x, y, yaw, rect, |c| {
                sum += 1.0 - map.foothold_cell(c).unwrap_or(0.0);
                n += 1;
            });
        }
        if n == 0 {
            1.0
        } else {
            sum / n as f64
        }
    }
}

impl CostBackend for SurrogateBackend {
    fn evaluate(&self, map: &HeightMap, q: &MotionQuery) -> Result<MotionCost, CostError> {
        let p = &self.params;
        let dist = q.dx.hypot(q.dy);
        let raw_time = dist / p.v_max + q.dyaw.abs() / p.omega_max;
        let c_t = raw_time / p.t_norm;
        let c_e = p.energy_ratio * c_t;

        let samples = if dist <= 1e-12 {
            1
        } else {
            (dist / p.sample_stride - 1e-9).ceil() as usize + 1
        };
        let mut survive = 1.0f64;
        for i in 0..samples {
            let t = if samples == 1 {
                0.0
            } else {
                i as f64 / (samples - 1) as f64
            };
            let (wx, wy) = rotate2(q.dx * t, q.dy * t, q.start_yaw);
            let yaw = q.start_yaw + q.dyaw * t;
            let h = self.hazard_at(map, q.start_x + wx, q.start_y + wy, yaw);
            survive *= (1.0 - p.hazard_gain * h).max(0.0);
        }
        let c_r = (1.0 - survive).clamp(0.0, 1.0);
        Ok(MotionCost { c_t, c_e, c_r })
    }
}

/// Input width of the cost network: a 16x16 downsampled map patch plus
/// (sin yaw, cos yaw, dx, dy, sin dyaw, cos dyaw).
pub const COST_MLP_PATCH: usize = 16;
pub const COST_MLP_INPUTS: usize = COST_MLP_PATCH * COST_MLP_PATCH + 6;

/// Learned cost model loaded from an `amc 1` weight file. The three raw
/// outputs map to (c_t, c_e) through softplus and to c_r through the
/// logistic, so the cost triple invariants hold for any weights.
pub struct MlpCostBackend {
    net: MlpNetwork,
    /// World edge length of the input patch, meters.
    patch_extent: f64,
}

impl MlpCostBackend {
    pub fn new(net: MlpNetwork) -> Result<Self, CostError> {
        net.require_shape(COST_MLP_INPUTS, 3)?;
        Ok(Self {
            net,
            patch_extent: 3.2,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CostError> {
        Ok(Self::new(MlpNetwork::load(path)?)?)
    }

    /// Block-mean downsample of effective elevation around (x, y), relative
    /// to the start cell's elevation; fully-unknown blocks become -1.
    fn patch(&self, map: &HeightMap, x: f64, y: f64) -> Vec<f64> {
        let n = COST_MLP_PATCH;
        let block = self.patch_extent / n as f64;
        let x0 = x - self.patch_extent / 2.0;
        let y0 = y - self.patch_extent / 2.0;
        let ref_z = map
            .world_to_cell(x, y)
            .and_then(|c| map.effective_elevation(c))
            .unwrap_or(0.0);
        let res = map.resolution();
        let (ox, oy) = map.origin();
        let mut out = vec![-1.0f64; n * n];
        for by in 0..n {
            for bx in 0..n {
                let bx0 = x0 + bx as f64 * block;
                let by0 = y0 + by as f64 * block;
                let min_ix = ((bx0 - ox) / res).ceil().max(0.0) as usize;
                let max_ix = ((bx0 + block - ox) / res).floor().min(map.size_x() as f64 - 1.0);
                let min_iy = ((by0 - oy) / res).ceil().max(0.0) as usize;
                let max_iy = ((by0 + block - oy) / res).floor().min(map.size_y() as f64 - 1.0);
                if max_ix < 0.0 || max_iy < 0.0 {
                    continue;
                }
                let mut sum = 0.0;
                let mut cnt = 0usize;
                for iy in min_iy..=max_iy as usize {
                    for ix in min_ix..=max_ix as usize {
                        if let Some(z) = map.effective_elevation(crate::terrain::CellIndex { ix, iy })
                        {
                            sum += z - ref_z;
                            cnt += 1;
                        }
                    }
                }
                if cnt > 0 {
                    out[by * n + bx] = sum / cnt as f64;
                }
            }
        }
        out
    }
}

impl CostBackend for MlpCostBackend {
    fn evaluate(&self, map: &HeightMap, q: &MotionQuery) -> Result<MotionCost, CostError> {
        let mut input = self.patch(map, q.start_x, q.start_y);
        let yaw = wrap_angle(q.start_yaw);
        let dyaw = wrap_angle(q.dyaw);
        input.extend_from_slice(&[yaw.sin(), yaw.cos(), q.dx, q.dy, dyaw.sin(), dyaw.cos()]);
        let raw = self.net.forward(&input);
        Ok(MotionCost {
            c_t: softplus(raw[0]),
            c_e: softplus(raw[1]),
            c_r: logistic(raw[2]),
        })
    }
}
