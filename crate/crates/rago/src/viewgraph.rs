//! View-graph data model and its text serialization.
//!
//! A view-graph stores undirected edges canonically as `(u, v)` with `u < v`;
//! querying the measurement from the `v` side returns the transpose. Graphs
//! are validated at construction (no self loops, no duplicates, connected)
//! and immutable afterwards.
//!
//! File format, one record per line:
//!
//! ```text
//! # comment
//! VERTEX <id> [<9 row-major floats of the ground-truth rotation>]
//! EDGE <u> <v> <9 row-major floats of the observed relative rotation> [O]
//! ```
//!
//! A trailing `O` marks a ground-truth outlier flag. Canonical files (sorted
//! edges, shortest round-trip float formatting) survive a save/load cycle
//! byte for byte.

use crate::so3::Rotation;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("graph is not connected")]
    Disconnected,
    #[error("duplicate edge ({u}, {v})")]
    DuplicateEdge { u: usize, v: usize },
    #[error("self loop at node {u}")]
    SelfLoop { u: usize },
    #[error("node id {id} out of range (n_nodes = {n})")]
    NodeOutOfRange { id: usize, n: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An undirected edge `(u, v)` with `u < v` carrying the observed relative
/// rotation `R_uv ≈ R_u R_vᵀ`.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub r_obs: Rotation,
}

/// Per-edge mutable solver state: the rectified relative rotation, which
/// starts at the identity.
#[derive(Debug, Clone, Copy)]
pub struct EdgeState {
    pub r_rect: Rotation,
}

impl Default for EdgeState {
    fn default() -> Self {
        EdgeState {
            r_rect: Rotation::identity(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViewGraph {
    n_nodes: usize,
    edges: Vec<Edge>,
    gt_abs: Option<Vec<Rotation>>,
    est_abs: Option<Vec<Rotation>>,
    outlier_flags: Option<Vec<bool>>,
    /// Per node: (neighbor, edge index), ascending by neighbor id.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl ViewGraph {
    /// Builds a validated graph. Edges may arrive in either orientation and
    /// are canonicalized to `u < v` (transposing the rotation as needed).
    pub fn new(
        n_nodes: usize,
        raw_edges: Vec<(usize, usize, Rotation)>,
        gt_abs: Option<Vec<Rotation>>,
        outlier_flags: Option<Vec<bool>>,
    ) -> Result<Self, GraphError> {
        if n_nodes == 0 {
            return Err(GraphError::Invalid("graph must have at least one node".into()));
        }
        if let Some(gt) = &gt_abs {
            if gt.len() != n_nodes {
                return Err(GraphError::Invalid(format!(
                    "gt_abs has {} entries for {} nodes",
                    gt.len(),
                    n_nodes
                )));
            }
        }
        if let Some(flags) = &outlier_flags {
            if flags.len() != raw_edges.len() {
                return Err(GraphError::Invalid(format!(
                    "outlier_flags has {} entries for {} edges",
                    flags.len(),
                    raw_edges.len()
                )));
            }
        }
        let mut edges = Vec::with_capacity(raw_edges.len());
        for &(u, v, r) in &raw_edges {
            if u == v {
                return Err(GraphError::SelfLoop { u });
            }
            for id in [u, v] {
                if id >= n_nodes {
                    return Err(GraphError::NodeOutOfRange { id, n: n_nodes });
                }
            }
            let edge = if u < v {
                Edge { u, v, r_obs: r }
            } else {
                Edge {
                    u: v,
                    v: u,
                    r_obs: r.transpose(),
                }
            };
            edges.push(edge);
        }
        // Sort edges and the flags aligned with them into canonical order.
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&i| (edges[i].u, edges[i].v));
        let edges: Vec<Edge> = order.iter().map(|&i| edges[i]).collect();
        let outlier_flags =
            outlier_flags.map(|f| order.iter().map(|&i| f[i]).collect::<Vec<bool>>());
        for w in edges.windows(2) {
            if w[0].u == w[1].u && w[0].v == w[1].v {
                return Err(GraphError::DuplicateEdge {
                    u: w[0].u,
                    v: w[0].v,
                });
            }
        }
        if !edges_connected(n_nodes, edges.iter().map(|e| (e.u, e.v))) {
            return Err(GraphError::Disconnected);
        }
        let mut adjacency = vec![Vec::new(); n_nodes];
        for (i, e) in edges.iter().enumerate() {
            adjacency[e.u].push((e.v, i));
            adjacency[e.v].push((e.u, i));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(ViewGraph {
            n_nodes,
            edges,
            gt_abs,
            est_abs: None,
            outlier_flags,
            adjacency,
        })
    }

    pub fn with_est_abs(mut self, est: Vec<Rotation>) -> Result<Self, GraphError> {
        if est.len() != self.n_nodes {
            return Err(GraphError::Invalid(format!(
                "est_abs has {} entries for {} nodes",
                est.len(),
                self.n_nodes
            )));
        }
        self.est_abs = Some(est);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn gt_abs(&self) -> Option<&[Rotation]> {
        self.gt_abs.as_deref()
    }

    pub fn est_abs(&self) -> Option<&[Rotation]> {
        self.est_abs.as_deref()
    }

    pub fn outlier_flags(&self) -> Option<&[bool]> {
        self.outlier_flags.as_deref()
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    /// Directed measurements seen from `u`, ascending by neighbor id. For an
    /// edge stored as `(u, v, R)`, the view from `v` is `Rᵀ`.
    pub fn neighbors(&self, u: usize) -> Vec<(usize, Rotation)> {
        self.adjacency[u]
            .iter()
            .map(|&(v, ei)| {
                let e = &self.edges[ei];
                let r = if e.u == u { e.r_obs } else { e.r_obs.transpose() };
                (v, r)
            })
            .collect()
    }

    /// Like [`neighbors`](Self::neighbors) but also yields the edge index.
    pub fn neighbors_with_edge(&self, u: usize) -> Vec<(usize, usize, Rotation)> {
        self.adjacency[u]
            .iter()
            .map(|&(v, ei)| {
                let e = &self.edges[ei];
                let r = if e.u == u { e.r_obs } else { e.r_obs.transpose() };
                (v, ei, r)
            })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        edges_connected(self.n_nodes, self.edges.iter().map(|e| (e.u, e.v)))
    }

    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut seen: Vec<(usize, Option<Rotation>)> = Vec::new();
        let mut raw_edges: Vec<(usize, usize, Rotation)> = Vec::new();
        let mut flags: Vec<bool> = Vec::new();
        let mut any_flag = false;

        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let parse_err = |msg: String| GraphError::Parse { line: line_no, msg };
            match tokens[0] {
                "VERTEX" => {
                    if tokens.len() != 2 && tokens.len() != 11 {
                        return Err(parse_err(format!(
                            "VERTEX expects 1 or 10 fields, got {}",
                            tokens.len() - 1
                        )));
                    }
                    let id: usize = tokens[1]
                        .parse()
                        .map_err(|_| parse_err(format!("bad vertex id `{}`", tokens[1])))?;
                    let rot = if tokens.len() == 11 {
                        Some(parse_rotation_tokens(&tokens[2..11], line_no)?)
                    } else {
                        None
                    };
                    seen.push((id, rot));
                }
                "EDGE" => {
                    let has_flag = tokens.last() == Some(&"O");
                    let expect = if has_flag { 13 } else { 12 };
                    if tokens.len() != expect {
                        return Err(parse_err(format!(
                            "EDGE expects 11 fields plus optional O, got {}",
                            tokens.len() - 1
                        )));
                    }
                    let u: usize = tokens[1]
                        .parse()
                        .map_err(|_| parse_err(format!("bad node id `{}`", tokens[1])))?;
                    let v: usize = tokens[2]
                        .parse()
                        .map_err(|_| parse_err(format!("bad node id `{}`", tokens[2])))?;
                    if u == v {
                        return Err(parse_err(format!("self loop at node {u}")));
                    }
                    let r = parse_rotation_tokens(&tokens[3..12], line_no)?;
                    raw_edges.push((u, v, r));
                    flags.push(has_flag);
                    any_flag |= has_flag;
                }
                other => {
                    return Err(parse_err(format!("unknown record `{other}`")));
                }
            }
        }

        let n = seen.len();
        if n == 0 {
            return Err(GraphError::Invalid("file declares no vertices".into()));
        }
        let mut by_id: Vec<Option<Option<Rotation>>> = vec![None; n];
        for (id, rot) in seen {
            if id >= n {
                return Err(GraphError::Invalid(format!(
                    "vertex ids must cover 0..{n}, found id {id}"
                )));
            }
            if by_id[id].is_some() {
                return Err(GraphError::Invalid(format!("vertex {id} declared twice")));
            }
            by_id[id] = Some(rot);
        }
        let rots: Vec<Option<Rotation>> = by_id.into_iter().map(|o| o.unwrap()).collect();
        let with_rot = rots.iter().filter(|r| r.is_some()).count();
        let gt_abs = if with_rot == n {
            Some(rots.into_iter().map(|r| r.unwrap()).collect())
        } else if with_rot == 0 {
            None
        } else {
            return Err(GraphError::Invalid(
                "either every vertex or no vertex may carry a rotation".into(),
            ));
        };
        let outlier_flags = if any_flag { Some(flags) } else { None };
        ViewGraph::new(n, raw_edges, gt_abs, outlier_flags)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Canonical text form: vertices ascending, edges sorted by `(u, v)`,
    /// floats printed with shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n_nodes {
            match &self.gt_abs {
                Some(gt) => {
                    out.push_str(&format!("VERTEX {i}"));
                    push_rotation(&mut out, &gt[i]);
                    out.push('\n');
                }
                None => {
                    let _ = writeln!(out, "VERTEX {i}");
                }
            }
        }
        for (ei, e) in self.edges.iter().enumerate() {
            out.push_str(&format!("EDGE {} {}", e.u, e.v));
            push_rotation(&mut out, &e.r_obs);
            if self.outlier_flags.as_ref().is_some_and(|f| f[ei]) {
                out.push_str(" O");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn push_rotation(out: &mut String, r: &Rotation) {
    for x in r.to_row_major() {
        let _ = write!(out, " {x}");
    }
}

fn parse_rotation_tokens(tokens: &[&str], line_no: usize) -> Result<Rotation, GraphError> {
    let mut vals = [0.0f64; 9];
    for (k, t) in tokens.iter().enumerate() {
        vals[k] = t.parse().map_err(|_| GraphError::Parse {
            line: line_no,
            msg: format!("bad float `{t}`"),
        })?;
    }
    Rotation::from_row_major(&vals).map_err(|e| GraphError::Parse {
        line: line_no,
        msg: e.to_string(),
    })
}

/// BFS reachability from node 0 over an undirected edge list.
pub fn edges_connected(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> bool {
    if n_nodes == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n_nodes];
    for (u, v) in edges {
        if u >= n_nodes || v >= n_nodes {
            return false;
        }
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut visited = vec![false; n_nodes];
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !visited[v] {
                visited[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n_nodes
}

/// Parses a vertex file: every `VERTEX` record must carry a rotation; `EDGE`
/// records are ignored. Used to read estimate/ground-truth rotation lists.
pub fn parse_rotations(text: &str) -> Result<Vec<Rotation>, GraphError> {
    let mut seen: Vec<(usize, Rotation)> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() || tokens[0] == "EDGE" {
            continue;
        }
        if tokens[0] != "VERTEX" {
            return Err(GraphError::Parse {
                line: line_no,
                msg: format!("unknown record `{}`", tokens[0]),
            });
        }
        if tokens.len() != 11 {
            return Err(GraphError::Parse {
                line: line_no,
                msg: "VERTEX in a rotation list must carry 9 floats".into(),
            });
        }
        let id: usize = tokens[1].parse().map_err(|_| GraphError::Parse {
            line: line_no,
            msg: format!("bad vertex id `{}`", tokens[1]),
        })?;
        let r = parse_rotation_tokens(&tokens[2..11], line_no)?;
        seen.push((id, r));
    }
    let n = seen.len();
    if n == 0 {
        return Err(GraphError::Invalid("file declares no vertices".into()));
    }
    let mut by_id: Vec<Option<Rotation>> = vec![None; n];
    for (id, r) in seen {
        if id >= n {
            return Err(GraphError::Invalid(format!(
                "vertex ids must cover 0..{n}, found id {id}"
            )));
        }
        if by_id[id].is_some() {
            return Err(GraphError::Invalid(format!("vertex {id} declared twice")));
        }
        by_id[id] = Some(r);
    }
    Ok(by_id.into_iter().map(|r| r.unwrap()).collect())
}

pub fn load_rotations(path: impl AsRef<Path>) -> Result<Vec<Rotation>, GraphError> {
    let text = std::fs::read_to_string(path)?;
    parse_rotations(&text)
}

pub fn save_rotations(path: impl AsRef<Path>, rots: &[Rotation]) -> Result<(), GraphError> {
    let mut out = String::new();
    for (i, r) in rots.iter().enumerate() {
        out.push_str(&format!("VERTEX {i}"));
        push_rotation(&mut out, r);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
