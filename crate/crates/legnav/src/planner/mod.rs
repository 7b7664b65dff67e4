//! Budget-bounded lazy graph construction, batched edge validation with
//! risk pruning, A* path query, start/goal snapping and exploration-path
//! goal selection.
//!
//! A fresh graph is built for every query: vertices are validity-checked as
//! they are sampled, edges stay unchecked until one batched cost query
//! validates or prunes them all, after which a single A* search is exact.

mod astar;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;

use crate::config::{load_entries, ConfigError};
use crate::cost::{
    batch_evaluate, combine, exceeds_risk, CostBackend, CostError, CostWeights, MotionCost,
    MotionQuery, SurrogateParams,
};
use crate::geom::{rotate2_inv, wrap_angle};
use crate::reach::{augment_pose_with, check_pose, Pose, RobotShape};
use crate::terrain::HeightMap;

/// Hard sampling caps: max valid vertices, max unchecked edges, max
/// sampling time and the edge risk threshold.
#[derive(Debug, Clone)]
pub struct PlannerBudgets {
    pub max_vertices: usize,
    pub max_unchecked_edges: usize,
    pub max_sampling_seconds: f64,
    pub risk_threshold: f64,
    /// When set, the time budget counts sampling attempts instead of wall
    /// time: `attempts = max_sampling_seconds * SIM_SAMPLE_ATTEMPTS_PER_SEC`.
    /// Simulation uses this to stay deterministic.
    pub deterministic_sampling: bool,
}

/// Conversion used when the sampling budget is counted in attempts rather
/// than wall seconds (one attempt stands in for 50 us of sampling).
pub const SIM_SAMPLE_ATTEMPTS_PER_SEC: f64 = 20_000.0;

impl Default for PlannerBudgets {
    fn default() -> Self {
        Self {
            max_vertices: 1000,
            max_unchecked_edges: 20_000,
            max_sampling_seconds: 2.0,
            risk_threshold: 0.5,
            deterministic_sampling: false,
        }
    }
}

impl PlannerBudgets {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_vertices < 2 {
            return Err("budgets: need max_vertices >= 2".into());
        }
        if self.max_unchecked_edges < 1 {
            return Err("budgets: need max_unchecked_edges >= 1".into());
        }
        if !(self.max_sampling_seconds > 0.0) {
            return Err("budgets: need max_sampling_seconds > 0".into());
        }
        if !(0.0..=1.0).contains(&self.risk_threshold) {
            return Err("budgets: risk_threshold must be in [0, 1]".into());
        }
        Ok(())
    }

    fn attempt_budget(&self) -> u64 {
        (self.max_sampling_seconds * SIM_SAMPLE_ATTEMPTS_PER_SEC).ceil() as u64
    }
}

/// Everything a planning query needs besides the map, shape and backend.
#[derive(Debug, Clone)]
pub struct PlannerConfig {
    pub budgets: PlannerBudgets,
    pub weights: CostWeights,
    pub surrogate: SurrogateParams,
    /// Connection radius for new vertices, meters.
    pub r_conn: f64,
    /// Max neighbors a new vertex connects to (each adds two directed edges).
    pub k_max: usize,
    /// Density-bias bucket edge length, meters.
    pub density_bucket: f64,
    /// Rejection cap: a bucket holding this many vertices rejects all new
    /// samples.
    pub density_cap: usize,
    /// Start/goal snapping search radius, meters.
    pub snap_radius: f64,
    /// Start/goal snapping yaw half-range, radians.
    pub snap_yaw: f64,
    pub snap_attempts: usize,
    /// Nominal torso height above the support plane, meters.
    pub h_torso: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            budgets: PlannerBudgets::default(),
            weights: CostWeights::default(),
            surrogate: SurrogateParams::default(),
            r_conn: 1.0,
            k_max: 10,
            density_bucket: 0.5,
            density_cap: 5,
            snap_radius: 0.3,
            snap_yaw: 30f64.to_radians(),
            snap_attempts: 100,
            h_torso: 0.55,
        }
    }
}

/// Which cost model a run uses; `Mlp` carries the weight file path.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum BackendChoice {
    #[default]
    Surrogate,
    Mlp(std::path::PathBuf),
}

impl PlannerConfig {
    /// A* heuristic scale: straight-line time lower bound per meter.
    fn heuristic_scale(&self) -> f64 {
        self.weights.w_t() / (self.surrogate.v_max * self.surrogate.t_norm)
    }

    /// Parse a `planner.cfg` key-value file; unknown keys are rejected.
    /// Returns the config plus the backend choice.
    pub fn load(path: &Path) -> Result<(Self, BackendChoice), ConfigError> {
        let mut cfg = PlannerConfig::default();
        let mut backend = BackendChoice::Surrogate;
        let mut w = (1.0, 0.0, 5.0);
        for e in load_entries(path)? {
            match e.key.as_str() {
                "n_max" => cfg.budgets.max_vertices = e.usize(0)?,
                "m_max" => cfg.budgets.max_unchecked_edges = e.usize(0)?,
                "t_max" => cfg.budgets.max_sampling_seconds = e.f64(0)?,
                "risk_threshold" => cfg.budgets.risk_threshold = e.f64(0)?,
                "w_t" => w.0 = e.f64(0)?,
                "w_e" => w.1 = e.f64(0)?,
                "w_r" => w.2 = e.f64(0)?,
                "v_max" => cfg.surrogate.v_max = e.f64(0)?,
                "omega_max" => cfg.surrogate.omega_max = e.f64(0)?,
                "t_norm" => cfg.surrogate.t_norm = e.f64(0)?,
                "energy_ratio" => cfg.surrogate.energy_ratio = e.f64(0)?,
                "hazard_gain" => cfg.surrogate.hazard_gain = e.f64(0)?,
                "sample_stride" => cfg.surrogate.sample_stride = e.f64(0)?,
                "r_conn" => cfg.r_conn = e.f64(0)?,
                "k_max" => cfg.k_max = e.usize(0)?,
                "density_bucket" => cfg.density_bucket = e.f64(0)?,
                "density_cap" => cfg.density_cap = e.usize(0)?,
                "snap_radius" => cfg.snap_radius = e.f64(0)?,
                "snap_yaw_deg" => cfg.snap_yaw = e.f64(0)?.to_radians(),
                "snap_attempts" => cfg.snap_attempts = e.usize(0)?,
                "h_torso" => cfg.h_torso = e.f64(0)?,
                "backend" => {
                    backend = match e.str(0)? {
                        "surrogate" => BackendChoice::Surrogate,
                        "mlp" => BackendChoice::Mlp(e.str(1)?.into()),
                        other => return Err(e.err(format!("unknown backend `{other}`"))),
                    }
                }
                key => {
                    return Err(ConfigError::UnknownKey {
                        key: key.to_string(),
                        line: e.line,
                    })
                }
            }
        }
        cfg.budgets.validate().map_err(ConfigError::MissingKey)?;
        cfg.weights = CostWeights::new(w.0, w.1, w.2)
            .map_err(|err| ConfigError::MissingKey(err.to_string()))?;
        Ok((cfg, backend))
    }
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeState {
    Unchecked,
    Valid { cost: f64, motion: MotionCost },
    Pruned,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub state: EdgeState,
}

/// Sampled navigation graph. Vertex ids are insertion order; edges are
/// directed with independent costs per direction.
#[derive(Debug, Default)]
pub struct NavGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub(crate) out_edges: Vec<Vec<usize>>,
    /// Spatial hash for neighbor queries, bucket edge = r_conn.
    neighbor_grid: HashMap<(i64, i64), Vec<usize>>,
    neighbor_bucket: f64,
    /// Vertex counts per density bucket.
    density: HashMap<(i64, i64), usize>,
    density_bucket: f64,
}

impl NavGraph {
    pub fn new(cfg: &PlannerConfig) -> Self {
        Self {
            vertices: Vec::new(),
            edges: Vec::new(),
            out_edges: Vec::new(),
            neighbor_grid: HashMap::new(),
            neighbor_bucket: cfg.r_conn.max(1e-6),
            density: HashMap::new(),
            density_bucket: cfg.density_bucket.max(1e-6),
        }
    }

    fn density_key(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (x / self.density_bucket).floor() as i64,
            (y / self.density_bucket).floor() as i64,
        )
    }

    /// Vertices currently in the density bucket containing (x, y).
    pub fn density_count(&self, x: f64, y: f64) -> usize {
        *self.density.get(&self.density_key(x, y)).unwrap_or(&0)
    }

    pub fn add_vertex(&mut self, pose: Pose) -> usize {
        let id = self.vertices.len();
        let nb = (
            (pose.x / self.neighbor_bucket).floor() as i64,
            (pose.y / self.neighbor_bucket).floor() as i64,
        );
        self.neighbor_grid.entry(nb).or_default().push(id);
        *self.density.entry(self.density_key(pose.x, pose.y)).or_default() += 1;
        self.vertices.push(Vertex { pose });
        self.out_edges.push(Vec::new());
        id
    }

    /// Ids of up to `k` nearest vertices within `radius` of `v` (planar),
    /// excluding `v` itself; ties broken by insertion index.
    fn nearest_within(&self, v: usize, radius: f64, k: usize) -> Vec<usize> {
        let p = self.vertices[v].pose;
        let b = self.neighbor_bucket;
        let reach = (radius / b).ceil() as i64;
        let (bx, by) = ((p.x / b).floor() as i64, (p.y / b).floor() as i64);
        let mut cand: Vec<(f64, usize)> = Vec::new();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if let Some(ids) = self.neighbor_grid.get(&(bx + dx, by + dy)) {
                    for &id in ids {
                        if id == v {
                            continue;
                        }
                        let d = self.vertices[id].pose.planar_dist(&p);
                        if d <= radius {
                            cand.push((d, id));
                        }
                    }
                }
            }
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand.truncate(k);
        cand.into_iter().map(|(_, id)| id).collect()
    }

    fn add_edge_pair(&mut self, a: usize, b: usize) {
        debug_assert_ne!(a, b, "self-edges are not allowed");
        for (from, to) in [(a, b), (b, a)] {
            let id = self.edges.len();
            self.edges.push(Edge {
                from,
                to,
                state: EdgeState::Unchecked,
            });
            self.out_edges[from].push(id);
        }
    }

    pub fn unchecked_edge_count(&self) -> usize {
        self.edges
            .iter()
            .filter(|e| e.state == EdgeState::Unchecked)
            .count()
    }

    pub fn pruned_edge_count(&self) -> usize {
        self.edges
            .iter()
            .filter(|e| e.state == EdgeState::Pruned)
            .count()
    }
}

/// Draw one candidate pose: position uniform over the map extent, yaw
/// uniform, then density rejection, pose augmentation and the reachability
/// check. Only a fully valid pose is returned.
pub fn sample_vertex<R: Rng>(
    map: &HeightMap,
    shape: &RobotShape,
    graph: &NavGraph,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Option<Pose> {
    let (min_x, min_y, max_x, max_y) = map.extent();
    let x = rng.gen_range(min_x..max_x);
    let y = rng.gen_range(min_y..max_y);
    let yaw = wrap_angle(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
    // Low-density bias: reject proportionally to bucket occupancy.
    let n = graph.density_count(x, y);
    let u: f64 = rng.gen_range(0.0..1.0);
    if u < n as f64 / cfg.density_cap as f64 {
        return None;
    }
    let pose = augment_pose_with(map, x, y, yaw, cfg.h_torso, &shape.torso_footprint())?;
    if check_pose(map, shape, &pose).is_valid() {
        Some(pose)
    } else {
        None
    }
}

/// Wire a newly added vertex to its nearest neighbors with unchecked edges
/// in both directions. No validity work happens here.
pub fn connect_vertex(graph: &mut NavGraph, v: usize, cfg: &PlannerConfig) -> usize {
    let neighbors = graph.nearest_within(v, cfg.r_conn, cfg.k_max);
    let added = neighbors.len() * 2;
    for u in neighbors {
        graph.add_edge_pair(v, u);
    }
    added
}

#[derive(Debug, Clone, Default)]
pub struct BuildStats {
    pub sampling_seconds: f64,
    pub attempts: u64,
    pub vertices: usize,
    pub unchecked_edges: usize,
}

/// Sample a fresh graph seeded with the start and goal poses until a budget
/// trips: vertex count, unchecked edge count or sampling time, whichever
/// first. Overshoot past the edge budget is bounded by one vertex's fanout.
pub fn build_graph<R: Rng>(
    map: &HeightMap,
    shape: &RobotShape,
    start: &Pose,
    goals: &[Pose],
    cfg: &PlannerConfig,
    rng: &mut R,
) -> (NavGraph, BuildStats) {
    let mut graph = NavGraph::new(cfg);
    let s = graph.add_vertex(*start);
    connect_vertex(&mut graph, s, cfg);
    for g in goals {
        let id = graph.add_vertex(*g);
        connect_vertex(&mut graph, id, cfg);
    }

    let clock = Instant::now();
    let budgets = &cfg.budgets;
    let attempt_budget = budgets.attempt_budget();
    let mut attempts: u64 = 0;
    loop {
        if graph.vertices.len() >= budgets.max_vertices
            || graph.edges.len() >= budgets.max_unchecked_edges
        {
            break;
        }
        let time_out = if budgets.deterministic_sampling {
            attempts >= attempt_budget
        } else {
            clock.elapsed().as_secs_f64() >= budgets.max_sampling_seconds
        };
        if time_out {
            break;
        }
        attempts += 1;
        if let Some(pose) = sample_vertex(map, shape, &graph, cfg, rng) {
            let id = graph.add_vertex(pose);
            connect_vertex(&mut graph, id, cfg);
        }
    }
    let stats = BuildStats {
        sampling_seconds: clock.elapsed().as_secs_f64(),
        attempts,
        vertices: graph.vertices.len(),
        unchecked_edges: graph.edges.len(),
    };
    (graph, stats)
}

#[derive(Debug, Clone, Default)]
pub struct ValidateStats {
    pub evaluated: usize,
    pub pruned: usize,
    pub seconds: f64,
}

/// One batched cost query over every unchecked edge; each becomes Valid
/// with its combined cost or Pruned when its risk strictly exceeds the
/// threshold. On backend error the graph is left untouched.
pub fn validate_graph(
    graph: &mut NavGraph,
    map: &HeightMap,
    backend: &dyn CostBackend,
    weights: &CostWeights,
    risk_threshold: f64,
) -> Result<ValidateStats, CostError> {
    let clock = Instant::now();
    let ids: Vec<usize> = (0..graph.edges.len())
        .filter(|&i| graph.edges[i].state == EdgeState::Unchecked)
        .collect();
    let queries: Vec<MotionQuery> = ids
        .iter()
        .map(|&i| {
            let e = &graph.edges[i];
            let a = &graph.vertices[e.from].pose;
            let b = &graph.vertices[e.to].pose;
            let (dx, dy) = rotate2_inv(b.x - a.x, b.y - a.y, a.yaw);
            MotionQuery {
                start_x: a.x,
                start_y: a.y,
                start_yaw: a.yaw,
                dx,
                dy,
                dyaw: wrap_angle(b.yaw - a.yaw),
            }
        })
        .collect();
    let costs = batch_evaluate(backend, map, &queries)?;
    let mut pruned = 0usize;
    for (&i, motion) in ids.iter().zip(costs) {
        graph.edges[i].state = if exceeds_risk(&motion, risk_threshold) {
            pruned += 1;
            EdgeState::Pruned
        } else {
            EdgeState::Valid {
                cost: combine(&motion, weights),
                motion,
            }
        };
    }
    Ok(ValidateStats {
        evaluated: ids.len(),
        pruned,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Per-segment cost annotation of a returned path.
#[derive(Debug, Clone, Copy)]
pub struct SegmentCost {
    pub c_t: f64,
    pub c_e: f64,
    pub c_r: f64,
    pub cost: f64,
}

/// A planned path: poses plus one cost record per segment.
#[derive(Debug, Clone, Default)]
pub struct NavPath {
    pub poses: Vec<Pose>,
    pub segments: Vec<SegmentCost>,
}

impl NavPath {
    pub fn total_cost(&self) -> f64 {
        self.segments.iter().map(|s| s.cost).sum()
    }

    pub fn total_c_t(&self) -> f64 {
        self.segments.iter().map(|s| s.c_t).sum()
    }

    /// Planar polyline length.
    pub fn length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| w[0].planar_dist(&w[1]))
            .sum()
    }

    /// CSV rows `x,y,z,yaw,seg_ct,seg_ce,seg_cr,seg_cost`; row i carries the
    /// cost of the segment arriving at pose i (zeros for the first row).
    /// `# key=value` comment lines carry optional metadata.
    pub fn to_csv(&self, planning_ms: Option<f64>) -> String {
        let mut s = String::new();
        if let Some(ms) = planning_ms {
            let _ = writeln!(s, "# planning_ms={ms}");
        }
        let _ = writeln!(s, "x,y,z,yaw,seg_ct,seg_ce,seg_cr,seg_cost");
        for (i, p) in self.poses.iter().enumerate() {
            let seg = if i == 0 {
                SegmentCost {
                    c_t: 0.0,
                    c_e: 0.0,
                    c_r: 0.0,
                    cost: 0.0,
                }
            } else {
                self.segments[i - 1]
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                p.x, p.y, p.z, p.yaw, seg.c_t, seg.c_e, seg.c_r, seg.cost
            );
        }
        s
    }

    /// Parse the CSV form; roll/pitch are not serialized and come back 0.
    pub fn from_csv(text: &str) -> Result<(NavPath, Option<f64>), String> {
        let mut path = NavPath::default();
        let mut planning_ms = None;
        let mut saw_header = false;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    if k.trim() == "planning_ms" {
                        planning_ms = v.trim().parse::<f64>().ok();
                    }
                }
                continue;
            }
            if !saw_header {
                if !line.starts_with("x,") {
                    return Err(format!("line {}: missing header", ln + 1));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(format!("line {}: expected 8 fields", ln + 1));
            }
            let num = |i: usize| -> Result<f64, String> {
                fields[i]
                    .parse::<f64>()
                    .map_err(|_| format!("line {}: bad number `{}`", ln + 1, fields[i]))
            };
            let pose = Pose {
                x: num(0)?,
                y: num(1)?,
                z: num(2)?,
                yaw: num(3)?,
                roll: 0.0,
                pitch: 0.0,
            };
            let seg = SegmentCost {
                c_t: num(4)?,
                c_e: num(5)?,
                c_r: num(6)?,
                cost: num(7)?,
            };
            if !path.poses.is_empty() {
                path.segments.push(seg);
            }
            path.poses.push(pose);
        }
        if path.poses.is_empty() {
            return Err("empty path file".into());
        }
        Ok((path, planning_ms))
    }
}

/// Optimal path between two graph vertices over Valid edges, or None when
/// disconnected. Requires a fully validated graph.
pub fn astar(graph: &NavGraph, start: usize, goal: usize, cfg: &PlannerConfig) -> Option<NavPath> {
    debug_assert_eq!(graph.unchecked_edge_count(), 0, "graph must be validated");
    let r = astar::search(graph, start, goal, cfg.heuristic_scale())?;
    let poses = r.vertices.iter().map(|&v| graph.vertices[v].pose).collect();
    let segments = r
        .edges
        .iter()
        .map(|&e| match graph.edges[e].state {
            EdgeState::Valid { cost, motion } => SegmentCost {
                c_t: motion.c_t,
                c_e: motion.c_e,
                c_r: motion.c_r,
                cost,
            },
            _ => unreachable!("A* only walks valid edges"),
        })
        .collect();
    Some(NavPath { poses, segments })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoPathReason {
    StartSnapFailed,
    GoalSnapFailed,
    Unreachable,
}

#[derive(Debug)]
pub enum PlanOutcome {
    Path(NavPath),
    NoPath(NoPathReason),
}

impl PlanOutcome {
    pub fn path(&self) -> Option<&NavPath> {
        match self {
            PlanOutcome::Path(p) => Some(p),
            PlanOutcome::NoPath(_) => None,
        }
    }
}

/// Wall-time and size accounting of one plan query.
#[derive(Debug, Clone, Default)]
pub struct PlanStats {
    pub snap_seconds: f64,
    pub sampling_seconds: f64,
    pub validation_seconds: f64,
    pub search_seconds: f64,
    pub total_seconds: f64,
    pub sampling_attempts: u64,
    pub vertices: usize,
    pub edges: usize,
    pub pruned: usize,
}

#[derive(Debug)]
pub struct PlanReport {
    pub outcome: PlanOutcome,
    pub stats: PlanStats,
}

/// Accept the guess if valid; otherwise sample candidates in a small disk
/// and yaw range around it, taking the first valid pose.
pub fn snap_pose<R: Rng>(
    map: &HeightMap,
    shape: &RobotShape,
    guess: &Pose,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Option<Pose> {
    let footprint = shape.torso_footprint();
    if let Some(p) = augment_pose_with(map, guess.x, guess.y, guess.yaw, cfg.h_torso, &footprint) {
        if check_pose(map, shape, &p).is_valid() {
            return Some(p);
        }
    }
    for _ in 0..cfg.snap_attempts {
        let r = cfg.snap_radius * rng.gen_range(0.0f64..1.0).sqrt();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let dyaw = rng.gen_range(-cfg.snap_yaw..cfg.snap_yaw);
        let x = guess.x + r * theta.cos();
        let y = guess.y + r * theta.sin();
        let yaw = wrap_angle(guess.yaw + dyaw);
        if let Some(p) = augment_pose_with(map, x, y, yaw, cfg.h_torso, &footprint) {
            if check_pose(map, shape, &p).is_valid() {
                return Some(p);
            }
        }
    }
    None
}

/// Full query: snap start and goal, build a fresh graph, validate every
/// edge in one batch, prune by risk, then A*.
pub fn plan<R: Rng>(
    map: &HeightMap,
    shape: &RobotShape,
    start_guess: &Pose,
    goal_guess: &Pose,
    cfg: &PlannerConfig,
    backend: &dyn CostBackend,
    rng: &mut R,
) -> Result<PlanReport, CostError> {
    let total_clock = Instant::now();
    let mut stats = PlanStats::default();

    let snap_clock = Instant::now();
    let start = snap_pose(map, shape, start_guess, cfg, rng);
    let goal = snap_pose(map, shape, goal_guess, cfg, rng);
    stats.snap_seconds = snap_clock.elapsed().as_secs_f64();

    let (Some(start), Some(goal)) = (start, goal) else {
        let reason = if start.is_none() {
            NoPathReason::StartSnapFailed
        } else {
            NoPathReason::GoalSnapFailed
        };
        stats.total_seconds = total_clock.elapsed().as_secs_f64();
        return Ok(PlanReport {
            outcome: PlanOutcome::NoPath(reason),
            stats,
        });
    };

    let (mut graph, build) = build_graph(map, shape, &start, &[goal], cfg, rng);
    stats.sampling_seconds = build.sampling_seconds;
    stats.sampling_attempts = build.attempts;
    stats.vertices = build.vertices;
    stats.edges = build.unchecked_edges;

    let validate = validate_graph(
        &mut graph,
        map,
        backend,
        &cfg.weights,
        cfg.budgets.risk_threshold,
    )?;
    stats.validation_seconds = validate.seconds;
    stats.pruned = validate.pruned;

    let search_clock = Instant::now();
    let path = astar(&graph, 0, 1, cfg);
    stats.search_seconds = search_clock.elapsed().as_secs_f64();
    stats.total_seconds = total_clock.elapsed().as_secs_f64();

    Ok(PlanReport {
        outcome: match path {
            Some(p) => PlanOutcome::Path(p),
            None => PlanOutcome::NoPath(NoPathReason::Unreachable),
        },
        stats,
    })
}

/// Goal selection over an exploration path, farthest-first.
#[derive(Debug)]
pub enum SelectOutcome {
    /// Planning to `expl[goal_index]` succeeded; all earlier poses count as
    /// reached.
    Planned {
        goal_index: usize,
        path: NavPath,
        stats: PlanStats,
    },
    /// No poses remain beyond the reached prefix.
    Exhausted,
    /// No remaining pose is plannable.
    Infeasible,
}

/// Walk the exploration poses from the farthest toward `start_from`,
/// planning to each until one succeeds. Poses before `start_from` are
/// already reached and are skipped.
pub fn select_goal<R: Rng>(
    map: &HeightMap,
    shape: &RobotShape,
    expl: &[Pose],
    start_from: usize,
    robot: &Pose,
    cfg: &PlannerConfig,
    backend: &dyn CostBackend,
    rng: &mut R,
) -> Result<SelectOutcome, CostError> {
    assert!(!expl.is_empty(), "exploration path must be nonempty");
    if start_from >= expl.len() {
        return Ok(SelectOutcome::Exhausted);
    }
    for i in (start_from..expl.len()).rev() {
        let report = plan(map, shape, robot, &expl[i], cfg, backend, rng)?;
        if let PlanOutcome::Path(path) = report.outcome {
            return Ok(SelectOutcome::Planned {
                goal_index: i,
                path,
                stats: report.stats,
            });
        }
    }
    Ok(SelectOutcome::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::SurrogateBackend;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_map() -> HeightMap {
        HeightMap::flat(200, 200, 0.04, (0.0, 0.0), 0.0)
    }

    fn surrogate(cfg: &PlannerConfig, shape: &RobotShape) -> SurrogateBackend {
        SurrogateBackend::new(cfg.surrogate.clone(), shape).unwrap()
    }

    #[test]
    fn first_vertex_has_no_edges_second_connects_both_ways() {
        let cfg = PlannerConfig::default();
        let mut g = NavGraph::new(&cfg);
        let a = g.add_vertex(Pose::planar(0.0, 0.0, 0.0));
        assert_eq!(connect_vertex(&mut g, a, &cfg), 0);
        let b = g.add_vertex(Pose::planar(0.5, 0.0, 0.0));
        assert_eq!(connect_vertex(&mut g, b, &cfg), 2);
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.edges[0].from, b);
        assert_eq!(g.edges[0].to, a);
    }

    #[test]
    fn connection_caps_at_k_nearest() {
        let cfg = PlannerConfig::default();
        let mut g = NavGraph::new(&cfg);
        // 15 vertices in a tight cluster.
        for i in 0..15 {
            let a = i as f64 * 0.4;
            let id = g.add_vertex(Pose::planar(0.3 * a.cos(), 0.3 * a.sin(), 0.0));
            connect_vertex(&mut g, id, &cfg);
        }
        let before = g.edges.len();
        let v = g.add_vertex(Pose::planar(0.0, 0.0, 0.0));
        let added = connect_vertex(&mut g, v, &cfg);
        assert_eq!(added, 20, "10 nearest, both directions");
        assert_eq!(g.edges.len(), before + 20);

        // Nearest-neighbor oracle: the connected set must be the 10 closest.
        let mut dists: Vec<(f64, usize)> = (0..15)
            .map(|i| (g.vertices[i].pose.planar_dist(&g.vertices[v].pose), i))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expect: std::collections::BTreeSet<usize> =
            dists.iter().take(10).map(|&(_, i)| i).collect();
        let got: std::collections::BTreeSet<usize> = g.edges[before..]
            .iter()
            .filter(|e| e.from == v)
            .map(|e| e.to)
            .collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn density_rejection_saturates() {
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let shape = RobotShape::default();
        let mut g = NavGraph::new(&cfg);
        // Stuff one bucket with density_cap vertices.
        for _ in 0..cfg.density_cap {
            g.add_vertex(Pose::planar(0.1, 0.1, 0.0));
        }
        assert_eq!(g.density_count(0.1, 0.1), 5);
        // Samples landing in that bucket must always be rejected; elsewhere
        // acceptance is possible. Statistically verify both.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut in_bucket_accepts = 0;
        let mut total_accepts = 0;
        for _ in 0..4000 {
            if let Some(p) = sample_vertex(&map, &shape, &g, &cfg, &mut rng) {
                total_accepts += 1;
                if (0.0..0.5).contains(&p.x) && (0.0..0.5).contains(&p.y) {
                    in_bucket_accepts += 1;
                }
            }
        }
        assert_eq!(in_bucket_accepts, 0);
        assert!(total_accepts > 100);
    }

    #[test]
    fn budget_met_at_seed_time_stops_immediately() {
        let mut cfg = PlannerConfig::default();
        cfg.budgets.max_vertices = 2;
        let map = flat_map();
        let shape = RobotShape::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start = snap_pose(&map, &shape, &Pose::planar(-2.0, 0.0, 0.0), &cfg, &mut rng).unwrap();
        let goal = snap_pose(&map, &shape, &Pose::planar(2.0, 0.0, 0.0), &cfg, &mut rng).unwrap();
        let (g, stats) = build_graph(&map, &shape, &start, &[goal], &cfg, &mut rng);
        assert_eq!(g.vertices.len(), 2);
        assert_eq!(stats.attempts, 0);
    }

    #[test]
    fn tiny_time_budget_limits_sampling() {
        let mut cfg = PlannerConfig::default();
        cfg.budgets.max_sampling_seconds = 0.001;
        let map = flat_map();
        let shape = RobotShape::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let start = Pose::planar(-2.0, 0.0, 0.0);
        let (g, stats) = build_graph(&map, &shape, &start, &[], &cfg, &mut rng);
        assert!(g.vertices.len() < cfg.budgets.max_vertices / 2);
        // One-iteration slack documented at 50 ms.
        assert!(stats.sampling_seconds <= 0.001 + 0.05);
    }

    #[test]
    fn edge_budget_overshoot_bounded() {
        let mut cfg = PlannerConfig::default();
        cfg.budgets.max_unchecked_edges = 100;
        let map = flat_map();
        let shape = RobotShape::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let start = Pose::planar(-2.0, 0.0, 0.0);
        let (g, _) = build_graph(&map, &shape, &start, &[], &cfg, &mut rng);
        assert!(g.edges.len() <= 100 + 2 * cfg.k_max, "edges = {}", g.edges.len());
        assert!(g.edges.len() >= 100);
    }

    #[test]
    fn validation_leaves_no_unchecked_and_flat_prunes_nothing() {
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let shape = RobotShape::default();
        let backend = surrogate(&cfg, &shape);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut small = cfg.clone();
        small.budgets.max_vertices = 60;
        let start = snap_pose(&map, &shape, &Pose::planar(-2.0, 0.0, 0.0), &small, &mut rng).unwrap();
        let (mut g, _) = build_graph(&map, &shape, &start, &[], &small, &mut rng);
        let stats =
            validate_graph(&mut g, &map, &backend, &small.weights, small.budgets.risk_threshold)
                .unwrap();
        assert_eq!(g.unchecked_edge_count(), 0);
        assert_eq!(stats.pruned, 0);
        assert!(stats.evaluated > 0);
    }

    #[test]
    fn validate_empty_graph_is_noop() {
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let shape = RobotShape::default();
        let backend = surrogate(&cfg, &shape);
        let mut g = NavGraph::new(&cfg);
        let stats =
            validate_graph(&mut g, &map, &backend, &cfg.weights, 0.5).unwrap();
        assert_eq!(stats.evaluated, 0);
    }

    #[test]
    fn astar_textbook_triangle() {
        let cfg = PlannerConfig::default();
        let mut g = NavGraph::new(&cfg);
        let a = g.add_vertex(Pose::planar(0.0, 0.0, 0.0));
        let b = g.add_vertex(Pose::planar(0.1, 0.0, 0.0));
        let c = g.add_vertex(Pose::planar(0.2, 0.0, 0.0));
        let mk = |cost: f64| EdgeState::Valid {
            cost,
            motion: MotionCost {
                c_t: cost,
                c_e: 0.0,
                c_r: 0.0,
            },
        };
        for (from, to, cost) in [(a, b, 1.0), (b, c, 1.0), (a, c, 3.0)] {
            let id = g.edges.len();
            g.edges.push(Edge {
                from,
                to,
                state: mk(cost),
            });
            g.out_edges[from].push(id);
        }
        let path = astar(&g, a, c, &cfg).unwrap();
        let ids: Vec<f64> = path.poses.iter().map(|p| p.x).collect();
        assert_eq!(ids, vec![0.0, 0.1, 0.2]);
        assert!((path.total_cost() - 2.0).abs() < 1e-12);

        let trivial = astar(&g, a, a, &cfg).unwrap();
        assert_eq!(trivial.poses.len(), 1);
        assert_eq!(trivial.total_cost(), 0.0);
    }

    #[test]
    fn plan_on_flat_map_finds_valid_path() {
        let cfg = PlannerConfig::default();
        let map = flat_map();
        let shape = RobotShape::default();
        let backend = surrogate(&cfg, &shape);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let report = plan(
            &map,
            &shape,
            &Pose::planar(-2.0, 0.0, 0.0),
            &Pose::planar(2.0, 0.0, 0.0),
            &cfg,
            &backend,
            &mut rng,
        )
        .unwrap();
        let path = report.outcome.path().expect("path on flat map");
        // Straight-line time lower bound.
        assert!(path.total_c_t() >= (4.0 / 0.9) / 10.0 - 1e-9);
        for p in &path.poses {
            assert!(check_pose(&map, &shape, p).is_valid());
        }
        // Endpoints near the guesses (snapping tolerance).
        assert!(path.poses[0].planar_dist(&Pose::planar(-2.0, 0.0, 0.0)) <= 0.3 + 1e-9);
        assert!(
            path.poses.last().unwrap().planar_dist(&Pose::planar(2.0, 0.0, 0.0)) <= 0.3 + 1e-9
        );
    }

    #[test]
    fn goal_in_unsteppable_disk_snaps_to_nothing() {
        let mut map = flat_map();
        for c in map.cells().collect::<Vec<_>>() {
            let (x, y) = map.cell_center(c);
            if (x - 2.0).hypot(y) < 2.0 {
                map.set_foothold(c, 0.0);
                map.set_steppable(c, false);
            }
        }
        let cfg = PlannerConfig::default();
        let shape = RobotShape::default();
        let backend = surrogate(&cfg, &shape);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let report = plan(
            &map,
            &shape,
            &Pose::planar(-3.0, 0.0, 0.0),
            &Pose::planar(2.0, 0.0, 0.0),
            &cfg,
            &backend,
            &mut rng,
        )
        .unwrap();
        match report.outcome {
            PlanOutcome::NoPath(reason) => assert_eq!(reason, NoPathReason::GoalSnapFailed),
            PlanOutcome::Path(_) => panic!("goal snap must fail inside the disk"),
        }
    }

    #[test]
    fn identical_seeds_produce_identical_paths() {
        let map = flat_map();
        let mut cfg = PlannerConfig::default();
        cfg.budgets.max_vertices = 120;
        cfg.budgets.deterministic_sampling = true;
        let shape = RobotShape::default();
        let backend = surrogate(&cfg, &shape);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let r = plan(
                &map,
                &shape,
                &Pose::planar(-2.0, 1.0, 0.5),
                &Pose::planar(2.0, -1.0, -0.5),
                &cfg,
                &backend,
                &mut rng,
            )
            .unwrap();
            match r.outcome {
                PlanOutcome::Path(p) => p,
                PlanOutcome::NoPath(r) => panic!("expected a path, got {r:?}"),
            }
        };
        let a = run();
        let b = run();
        assert_eq!(a.poses.len(), b.poses.len());
        for (pa, pb) in a.poses.iter().zip(&b.poses) {
            assert_eq!(pa, pb);
        }
        assert_eq!(a.total_cost(), b.total_cost());
    }

    #[test]
    fn fresh_graph_semantics_between_plans() {
        let map = flat_map();
        let mut cfg = PlannerConfig::default();
        cfg.budgets.max_vertices = 60;
        cfg.budgets.deterministic_sampling = true;
        let shape = RobotShape::default();
        let backend = surrogate(&cfg, &shape);
        // Two sequential plans from one rng; then the same two with an
        // unrelated plan wedged in between re-run from the same seed points.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p1 = plan(
            &map,
            &shape,
            &Pose::planar(-2.0, 0.0, 0.0),
            &Pose::planar(2.0, 0.0, 0.0),
            &cfg,
            &backend,
            &mut rng,
        )
        .unwrap();
        assert!(p1.outcome.path().is_some());
        let mut rng2 = ChaCha8Rng::seed_from_u64(10);
        let p2a = plan(
            &map,
            &shape,
            &Pose::planar(0.0, -2.0, 0.0),
            &Pose::planar(0.0, 2.0, 0.0),
            &cfg,
            &backend,
            &mut rng2,
        )
        .unwrap();
        let mut rng3 = ChaCha8Rng::seed_from_u64(10);
        let p2b = plan(
            &map,
            &shape,
            &Pose::planar(0.0, -2.0, 0.0),
            &Pose::planar(0.0, 2.0, 0.0),
            &cfg,
            &backend,
            &mut rng3,
        )
        .unwrap();
        let (a, b) = (p2a.outcome.path().unwrap(), p2b.outcome.path().unwrap());
        assert_eq!(a.poses.len(), b.poses.len());
        assert_eq!(a.total_cost(), b.total_cost());
    }

    #[test]
    fn select_goal_farthest_first_and_prefix() {
        let map = flat_map();
        let mut cfg = PlannerConfig::default();
        cfg.budgets.max_vertices = 150;
        cfg.budgets.deterministic_sampling = true;
        let shape = RobotShape::default();
        let backend = surrogate(&cfg, &shape);
        let expl: Vec<Pose> = (0..5)
            .map(|i| Pose::planar(-3.0 + i as f64 * 1.4, 0.0, 0.0))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let robot = Pose::planar(-3.0, 0.0, 0.0);
        match select_goal(&map, &shape, &expl, 0, &robot, &cfg, &backend, &mut rng).unwrap() {
            SelectOutcome::Planned { goal_index, .. } => assert_eq!(goal_index, 4),
            other => panic!("expected Planned, got {other:?}"),
        }
        // All reached: exhausted.
        match select_goal(&map, &shape, &expl, 5, &robot, &cfg, &backend, &mut rng).unwrap() {
            SelectOutcome::Exhausted => {}
            other => panic!("expected Exhausted, got {other:?}"),
        }
    }

    #[test]
    fn select_goal_blocked_suffix_picks_reachable_pose() {
        // Wall at x = 1.0 blocks poses beyond it; goals 3 and 4 are behind.
        let mut map = flat_map();
        for c in map.cells().collect::<Vec<_>>() {
            let (x, _) = map.cell_center(c);
            if (1.0..1.2).contains(&x) {
                map.set_elevation(c, 1.2);
                map.set_foothold(c, 0.0);
                map.set_steppable(c, false);
            }
        }
        let mut cfg = PlannerConfig::default();
        cfg.budgets.max_vertices = 200;
        cfg.budgets.deterministic_sampling = true;
        let shape = RobotShape::default();
        let backend = surrogate(&cfg, &shape);
        let expl = vec![
            Pose::planar(-2.0, 0.0, 0.0),
            Pose::planar(-0.5, 0.0, 0.0),
            Pose::planar(2.0, 0.0, 0.0),
            Pose::planar(3.0, 0.0, 0.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let robot = Pose::planar(-3.0, 0.0, 0.0);
        match select_goal(&map, &shape, &expl, 0, &robot, &cfg, &backend, &mut rng).unwrap() {
            SelectOutcome::Planned { goal_index, .. } => assert_eq!(goal_index, 1),
            other => panic!("expected Planned, got {other:?}"),
        }
    }

    #[test]
    fn select_goal_all_blocked_is_infeasible() {
        let map = HeightMap::new(200, 200, 0.04, (0.0, 0.0)); // fully unknown
        let cfg = PlannerConfig::default();
        let shape = RobotShape::default();
        let backend = surrogate(&cfg, &shape);
        let expl = vec![Pose::planar(0.0, 0.0, 0.0), Pose::planar(1.0, 0.0, 0.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let robot = Pose::planar(0.0, 0.0, 0.0);
        match select_goal(&map, &shape, &expl, 0, &robot, &cfg, &backend, &mut rng).unwrap() {
            SelectOutcome::Infeasible => {}
            other => panic!("expected Infeasible, got {other:?}"),
        }
    }

    #[test]
    fn path_csv_round_trip() {
        let path = NavPath {
            poses: vec![
                Pose::planar(0.0, 0.0, 0.0),
                Pose {
                    x: 1.0,
                    y: 0.5,
                    z: 0.55,
                    yaw: 0.3,
                    roll: 0.0,
                    pitch: 0.0,
                },
            ],
            segments: vec![SegmentCost {
                c_t: 0.125,
                c_e: 0.1,
                c_r: 0.0625,
                cost: 0.4375,
            }],
        };
        let text = path.to_csv(Some(12.5));
        let (parsed, ms) = NavPath::from_csv(&text).unwrap();
        assert_eq!(ms, Some(12.5));
        assert_eq!(parsed.poses.len(), 2);
        assert_eq!(parsed.segments[0].cost, 0.4375);
        assert_eq!(parsed.poses[1].yaw, 0.3);
        assert!(NavPath::from_csv("").is_err());
    }

    #[test]
    fn planner_cfg_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("planner.cfg");
        std::fs::write(
            &path,
            "n_max = 500\nm_max = 1000\nt_max = 1.5\nrisk_threshold = 0.4\n\
             w_t = 2 # doubled\nw_r = 10\nr_conn = 0.8\nk_max = 6\n\
             snap_yaw_deg = 15\nbackend = surrogate\n",
        )
        .unwrap();
        let (cfg, backend) = PlannerConfig::load(&path).unwrap();
        assert_eq!(cfg.budgets.max_vertices, 500);
        assert_eq!(cfg.budgets.max_unchecked_edges, 1000);
        assert!((cfg.budgets.max_sampling_seconds - 1.5).abs() < 1e-12);
        assert!((cfg.weights.w_t() - 2.0).abs() < 1e-12);
        assert_eq!(cfg.k_max, 6);
        assert!((cfg.snap_yaw - 15f64.to_radians()).abs() < 1e-12);
        assert_eq!(backend, BackendChoice::Surrogate);

        std::fs::write(&path, "nonsense_key = 1\n").unwrap();
        assert!(PlannerConfig::load(&path).is_err());
    }
}
