//! Precomputed index layout for message passing on a view-graph.
//!
//! Directed messages are stored as `[canonical edges 0..m, reversed edges
//! m..2m]`; row `k` and row `k + m` describe the two directions of undirected
//! edge `k`, with the reversed direction carrying the transposed measurement.

use crate::so3::Rotation;
use crate::viewgraph::ViewGraph;
use ndarray::Array2;

pub(crate) struct GraphCache {
    pub n: usize,
    pub m: usize,
    /// Source node of each directed message, length 2m.
    pub dir_src: Vec<usize>,
    /// Destination node of each directed message, length 2m.
    pub dir_dst: Vec<usize>,
    /// Undirected edge behind each directed message, length 2m.
    pub dir_edge: Vec<usize>,
    pub edge_u: Vec<usize>,
    pub edge_v: Vec<usize>,
    /// Observed measurement per directed message, 2m×9 row-major.
    pub obs_dir: Array2<f64>,
    /// Observed measurement per undirected edge, m×9 row-major.
    pub obs_canon: Array2<f64>,
    /// Ground-truth relative rotation per undirected edge when known.
    pub gt_rel: Option<Array2<f64>>,
}

impl GraphCache {
    pub fn new(g: &ViewGraph) -> Self {
        let n = g.n_nodes();
        let m = g.n_edges();
        let mut dir_src = Vec::with_capacity(2 * m);
        let mut dir_dst = Vec::with_capacity(2 * m);
        let mut dir_edge = Vec::with_capacity(2 * m);
        let mut edge_u = Vec::with_capacity(m);
        let mut edge_v = Vec::with_capacity(m);
        let mut obs_dir = Array2::zeros((2 * m, 9));
        let mut obs_canon = Array2::zeros((m, 9));
        for (k, e) in g.edges().iter().enumerate() {
            dir_src.push(e.u);
            dir_dst.push(e.v);
            dir_edge.push(k);
            edge_u.push(e.u);
            edge_v.push(e.v);
            write_row(&mut obs_dir, k, &e.r_obs);
            write_row(&mut obs_canon, k, &e.r_obs);
        }
        for (k, e) in g.edges().iter().enumerate() {
            dir_src.push(e.v);
            dir_dst.push(e.u);
            dir_edge.push(k);
            write_row(&mut obs_dir, m + k, &e.r_obs.transpose());
        }
        let gt_rel = g.gt_abs().map(|gt| {
            let mut rel = Array2::zeros((m, 9));
            for (k, e) in g.edges().iter().enumerate() {
                let r = gt[e.u] * gt[e.v].transpose();
                write_row(&mut rel, k, &r);
            }
            rel
        });
        GraphCache {
            n,
            m,
            dir_src,
            dir_dst,
            dir_edge,
            edge_u,
            edge_v,
            obs_dir,
            obs_canon,
            gt_rel,
        }
    }
}

fn write_row(m: &mut Array2<f64>, row: usize, r: &Rotation) {
    for (j, v) in r.to_row_major().into_iter().enumerate() {
        m[(row, j)] = v;
    }
}

pub(crate) fn rotations_to_rows(rots: &[Rotation]) -> Array2<f64> {
    let mut out = Array2::zeros((rots.len(), 9));
    for (i, r) in rots.iter().enumerate() {
        write_row(&mut out, i, r);
    }
    out
}

pub(crate) fn rows_to_rotations(rows: &Array2<f64>) -> Result<Vec<Rotation>, crate::so3::So3Error> {
    let mut out = Vec::with_capacity(rows.nrows());
    for i in 0..rows.nrows() {
        let mut v = [0.0; 9];
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = rows[(i, j)];
        }
        out.push(Rotation::from_row_major(&v)?);
    }
    Ok(out)
}
