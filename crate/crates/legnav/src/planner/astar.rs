//! A* over a validated navigation graph.

use std::collections::BinaryHeap;

use super::{EdgeState, NavGraph};

/// Max-heap entry ordered so the smallest f pops first; ties pop the
/// smaller vertex insertion index for reproducible searches.
#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    f: f64,
    vertex: usize,
    g: f64,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f && self.vertex == other.vertex
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

pub(super) struct SearchResult {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
    pub cost: f64,
}

/// Minimal-cost path over Valid edges; `h_scale` converts planar distance
/// to the admissible time-cost lower bound (w_t / (v_max * t_norm)).
pub(super) fn search(
    graph: &NavGraph,
    start: usize,
    goal: usize,
    h_scale: f64,
) -> Option<SearchResult> {
    let n = graph.vertices.len();
    assert!(start < n && goal < n, "vertex id out of range");
    if start == goal {
        return Some(SearchResult {
            vertices: vec![start],
            edges: Vec::new(),
            cost: 0.0,
        });
    }
    let goal_pose = graph.vertices[goal].pose;
    let h = |v: usize| -> f64 {
        let p = &graph.vertices[v].pose;
        h_scale * p.planar_dist(&goal_pose)
    };

    let mut g = vec![f64::INFINITY; n];
    let mut parent_edge = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    g[start] = 0.0;
    heap.push(QueueEntry {
        f: h(start),
        vertex: start,
        g: 0.0,
    });

    while let Some(QueueEntry { vertex, g: gq, .. }) = heap.pop() {
        if gq > g[vertex] {
            continue; // stale entry
        }
        if vertex == goal {
            let mut vertices = vec![goal];
            let mut edges = Vec::new();
            let mut v = goal;
            while v != start {
                let e = parent_edge[v];
                edges.push(e);
                v = graph.edges[e].from;
                vertices.push(v);
            }
            vertices.reverse();
            edges.reverse();
            return Some(SearchResult {
                vertices,
                edges,
                cost: g[goal],
            });
        }
        for &eid in &graph.out_edges[vertex] {
            let edge = &graph.edges[eid];
            let EdgeState::Valid { cost, .. } = edge.state else {
                continue;
            };
            let cand = g[vertex] + cost;
            if cand < g[edge.to] {
                g[edge.to] = cand;
                parent_edge[edge.to] = eid;
                heap.push(QueueEntry {
                    f: cand + h(edge.to),
                    vertex: edge.to,
                    g: cand,
                });
            }
        }
    }
    None
}
