//! Non-learned baselines: spanning-tree initialization and Weiszfeld-style
//! rotation averaging.

use crate::so3::{geodesic_deg, Rotation};
use crate::viewgraph::ViewGraph;
use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::VecDeque;

/// Distance floor for Weiszfeld weights 1/max(dist, ε), in radians.
pub const WEISZFELD_EPS_RAD: f64 = 1e-6;
/// Inner Weiszfeld iterations per node visit in a Gauss-Seidel sweep.
pub const WEISZFELD_INNER_ITERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SptPolicy {
    RandomRoot,
    MaxDegreeRoot,
}

/// Axis-angle vector of a rotation, radians. Evaluated with atan2 so the
/// near-identity and near-π regions stay finite under fp noise.
fn log_map(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let s = 0.5
        * Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
    let sin_t = s.norm();
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_t.atan2(cos_t);
    if sin_t > 1e-6 {
        return s * (theta / sin_t);
    }
    if cos_t > 0.0 {
        // Tiny angle: s already equals θ·axis to third order.
        return s;
    }
    // Angle near π: recover the axis from M + I ≈ 2aaᵀ.
    let b = m + nalgebra::Matrix3::identity();
    let j = (0..3)
        .max_by(|&a, &c| b[(a, a)].abs().total_cmp(&b[(c, c)].abs()))
        .unwrap();
    let mut axis = b.column(j).normalize();
    if sin_t > 0.0 && axis.dot(&s) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

fn exp_map(v: &Vector3<f64>) -> Rotation {
    Rotation::from_matrix_unchecked(*Rotation3::new(*v).matrix())
}

/// Absolute rotations from a BFS spanning tree: the root gets the identity
/// and each tree edge (u, v) walked from u assigns R_v = R_uvᵀ·R_u.
///
/// `RandomRoot` draws the root uniformly and shuffles each adjacency list;
/// `MaxDegreeRoot` starts from the highest-degree node (lowest id on ties)
/// and visits neighbors in ascending order, consuming no randomness.
pub fn spt_init<R: Rng + ?Sized>(g: &ViewGraph, policy: SptPolicy, rng: &mut R) -> Vec<Rotation> {
    let n = g.n_nodes();
    let (root, shuffle) = match policy {
        SptPolicy::RandomRoot => (rng.gen_range(0..n), true),
        SptPolicy::MaxDegreeRoot => {
            let root = (0..n)
                .max_by_key(|&u| (g.degree(u), std::cmp::Reverse(u)))
                .unwrap();
            (root, false)
        }
    };
    let mut est = vec![Rotation::identity(); n];
    let mut visited = vec![false; n];
    visited[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let mut nbrs = g.neighbors(u);
        if shuffle {
            nbrs.shuffle(rng);
        }
        for (v, r_uv) in nbrs {
            if !visited[v] {
                visited[v] = true;
                est[v] = r_uv.transpose() * est[u];
                queue.push_back(v);
            }
        }
    }
    est
}

/// One geodesic-median refinement: proposals are mapped to the tangent space
/// at the current estimate, combined with Weiszfeld weights 1/max(dist, ε),
/// and the weighted mean is exponentiated back. Repeats `iters` times.
pub fn weiszfeld_sra(current: &Rotation, proposals: &[Rotation], iters: usize) -> Rotation {
    assert!(!proposals.is_empty(), "proposals must be nonempty");
    let mut r = *current;
    for _ in 0..iters {
        let mut acc = Vector3::zeros();
        let mut w_sum = 0.0;
        for p in proposals {
            let v = log_map(&(*p * r.transpose()));
            let w = 1.0 / v.norm().max(WEISZFELD_EPS_RAD);
            acc += w * v;
            w_sum += w;
        }
        let step = acc / w_sum;
        r = exp_map(&step) * r;
        if step.norm() < 1e-12 {
            break;
        }
    }
    r
}

/// Gauss-Seidel sweeps of per-node Weiszfeld averaging: node u is refit to
/// the proposals {R_uv·R_v} from its neighbors, nodes in ascending id order,
/// updates visible within the same sweep.
pub fn weiszfeld_mra(g: &ViewGraph, init: &[Rotation], sweeps: usize) -> Vec<Rotation> {
    weiszfeld_mra_iters(g, init, sweeps, WEISZFELD_INNER_ITERS)
}

pub fn weiszfeld_mra_iters(
    g: &ViewGraph,
    init: &[Rotation],
    sweeps: usize,
    inner_iters: usize,
) -> Vec<Rotation> {
    assert_eq!(init.len(), g.n_nodes(), "init length must match node count");
    let mut est = init.to_vec();
    for _ in 0..sweeps {
        for u in 0..g.n_nodes() {
            let proposals: Vec<Rotation> = g
                .neighbors(u)
                .into_iter()
                .map(|(v, r_uv)| r_uv * est[v])
                .collect();
            est[u] = weiszfeld_sra(&est[u], &proposals, inner_iters);
        }
    }
    est
}

/// Robust consistency objective: Σ_u (1/|N_u|) Σ_{v∈N_u} geodesic(R_u, R_uv·R_v)
/// in degrees. Used to monitor Gauss-Seidel sweeps.
pub fn sra_objective_deg(g: &ViewGraph, est: &[Rotation]) -> f64 {
    (0..g.n_nodes())
        .map(|u| {
            let nbrs = g.neighbors(u);
            let sum: f64 = nbrs
                .iter()
                .map(|(v, r_uv)| geodesic_deg(&est[u], &(*r_uv * est[*v])))
                .sum();
            sum / nbrs.len() as f64
        })
        .sum()
}
