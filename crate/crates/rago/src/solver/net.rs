//! Parameter layout and differentiable forward passes of the solver networks.
//!
//! All multilayer perceptrons in the model are 3-layer with ReLU between
//! layers. One edge convolution runs an edge MLP on the concatenated source
//! node, destination node, and directed edge features, averages the two
//! directions back onto undirected edges, and a node MLP on the mean of
//! incident directed messages. The parameter catalog is the single source of
//! truth for names and shapes; initialization and binding both walk it.

use super::cache::GraphCache;
use super::{ArchConfig, CostGraph, CostMetric, SolverError};
use crate::nn::{
    gru_cell, he_uniform, mlp_forward, Activation, GruWeights, ModelWeights, Tape, ValueId,
};
use crate::so3::{entrywise_l1, Rotation};
use crate::viewgraph::ViewGraph;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identity element of the Orth6D parameterization; added to the update
/// head's output so a zero head predicts no rotation change.
pub(crate) const BIAS6: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Pseudo-parameter holding the architecture record inside weight files.
pub(crate) const META_ARCH: &str = "meta.arch";

enum Init {
    He,
    Zero,
}

struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

fn mlp_specs(out: &mut Vec<ParamSpec>, prefix: &str, dims: &[usize; 4], zero_last: bool) {
    for k in 0..3 {
        let (rows, cols) = (dims[k], dims[k + 1]);
        let weight_init = if zero_last && k == 2 { Init::Zero } else { Init::He };
        out.push(ParamSpec {
            name: format!("{prefix}.w{k}"),
            rows,
            cols,
            init: weight_init,
        });
        out.push(ParamSpec {
            name: format!("{prefix}.b{k}"),
            rows: 1,
            cols,
            init: Init::Zero,
        });
    }
}

fn gru_specs(out: &mut Vec<ParamSpec>, prefix: &str, h_dim: usize, x_dim: usize) {
    for gate in ["z", "r", "h"] {
        out.push(ParamSpec {
            name: format!("{prefix}.w{gate}"),
            rows: h_dim + x_dim,
            cols: h_dim,
            init: Init::He,
        });
        out.push(ParamSpec {
            name: format!("{prefix}.b{gate}"),
            rows: 1,
            cols: h_dim,
            init: Init::Zero,
        });
    }
}

fn conv_specs(out: &mut Vec<ParamSpec>, prefix: &str, node_in: usize, edge_in: usize, feat: usize) {
    mlp_specs(
        out,
        &format!("{prefix}.edge_mlp"),
        &[2 * node_in + edge_in, feat, feat, feat],
        false,
    );
    mlp_specs(out, &format!("{prefix}.node_mlp"), &[feat, feat, feat, feat], false);
}

fn catalog(arch: &ArchConfig) -> Vec<ParamSpec> {
    let f = arch.feat_dim;
    let h = arch.hidden_dim;
    let gru_x = 2 * f + 9;
    let mut out = Vec::new();
    for prefix in ["theta_feat", "theta_state"] {
        for k in 0..arch.n_feat_convs {
            let (ni, ei) = if k == 0 { (9, 9) } else { (f, f) };
            conv_specs(&mut out, &format!("{prefix}.conv{k}"), ni, ei, f);
        }
        mlp_specs(&mut out, &format!("{prefix}.node_head"), &[f, f, f, f], false);
        mlp_specs(&mut out, &format!("{prefix}.edge_head"), &[f, f, f, f], false);
    }
    mlp_specs(&mut out, "theta_cost.node_lift", &[1, f, f, f], false);
    mlp_specs(&mut out, "theta_cost.edge_lift", &[2, f, f, f], false);
    for k in 0..arch.n_cost_convs {
        conv_specs(&mut out, &format!("theta_cost.conv{k}"), f, f, f);
    }
    mlp_specs(&mut out, "theta_cost.node_head", &[f, f, f, f], false);
    mlp_specs(&mut out, "theta_cost.edge_head", &[f, f, f, f], false);
    gru_specs(&mut out, "node_gru", h, gru_x);
    gru_specs(&mut out, "edge_gru", h, gru_x);
    mlp_specs(&mut out, "node_delta", &[h, h, h, 6], true);
    mlp_specs(&mut out, "edge_delta", &[h, h, h, 6], true);
    out
}

/// Shape-checks a stored parameter set against an architecture without
/// building a tape.
pub(crate) fn check_shapes(weights: &ModelWeights, arch: &ArchConfig) -> Result<(), SolverError> {
    for spec in catalog(arch) {
        weights.require(&spec.name, spec.rows, spec.cols)?;
    }
    Ok(())
}

/// Fresh parameter set for an architecture: fan-in uniform weights, zero
/// biases, and a zeroed final layer in both update heads so the untrained
/// model is a no-op. Includes the architecture record.
pub fn init_weights(arch: &ArchConfig, seed: u64) -> ModelWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = ModelWeights::new();
    for spec in catalog(arch) {
        let arr = match spec.init {
            Init::He => he_uniform(&mut rng, spec.rows, spec.cols),
            Init::Zero => Array2::zeros((spec.rows, spec.cols)),
        };
        w.insert(spec.name, arr);
    }
    w.insert(META_ARCH, arch.to_meta());
    w
}

pub(crate) struct MlpIds(pub Vec<(ValueId, ValueId)>);

pub(crate) struct ConvIds {
    pub edge_mlp: MlpIds,
    pub node_mlp: MlpIds,
}

pub(crate) struct EncoderIds {
    pub convs: Vec<ConvIds>,
    pub node_head: MlpIds,
    pub edge_head: MlpIds,
}

pub(crate) struct CostNetIds {
    pub node_lift: MlpIds,
    pub edge_lift: MlpIds,
    pub convs: Vec<ConvIds>,
    pub node_head: MlpIds,
    pub edge_head: MlpIds,
}

pub(crate) struct BoundModel {
    pub feat: EncoderIds,
    pub state: EncoderIds,
    pub cost: CostNetIds,
    pub node_gru: GruWeights,
    pub edge_gru: GruWeights,
    pub node_delta: MlpIds,
    pub edge_delta: MlpIds,
    pub bias6: ValueId,
    /// Catalog name of every bound tensor, for gradient collection.
    pub param_ids: Vec<(String, ValueId)>,
}

struct Binder<'a> {
    weights: &'a ModelWeights,
    shapes: std::collections::BTreeMap<String, (usize, usize)>,
    trainable: bool,
    param_ids: Vec<(String, ValueId)>,
}

impl Binder<'_> {
    fn get(&mut self, tape: &mut Tape, name: String) -> Result<ValueId, SolverError> {
        let (rows, cols) = self.shapes[&name];
        let arr = self.weights.require(&name, rows, cols)?.clone();
        let id = if self.trainable {
            tape.param(arr)
        } else {
            tape.constant(arr)
        };
        self.param_ids.push((name, id));
        Ok(id)
    }

    fn mlp(&mut self, tape: &mut Tape, prefix: &str) -> Result<MlpIds, SolverError> {
        let mut layers = Vec::new();
        for k in 0..3 {
            let w = self.get(tape, format!("{prefix}.w{k}"))?;
            let b = self.get(tape, format!("{prefix}.b{k}"))?;
            layers.push((w, b));
        }
        Ok(MlpIds(layers))
    }

    fn conv(&mut self, tape: &mut Tape, prefix: &str) -> Result<ConvIds, SolverError> {
        Ok(ConvIds {
            edge_mlp: self.mlp(tape, &format!("{prefix}.edge_mlp"))?,
            node_mlp: self.mlp(tape, &format!("{prefix}.node_mlp"))?,
        })
    }

    fn encoder(&mut self, tape: &mut Tape, prefix: &str, n: usize) -> Result<EncoderIds, SolverError> {
        let mut convs = Vec::new();
        for k in 0..n {
            convs.push(self.conv(tape, &format!("{prefix}.conv{k}"))?);
        }
        Ok(EncoderIds {
            convs,
            node_head: self.mlp(tape, &format!("{prefix}.node_head"))?,
            edge_head: self.mlp(tape, &format!("{prefix}.edge_head"))?,
        })
    }

    fn gru(&mut self, tape: &mut Tape, prefix: &str) -> Result<GruWeights, SolverError> {
        Ok(GruWeights {
            wz: self.get(tape, format!("{prefix}.wz"))?,
            bz: self.get(tape, format!("{prefix}.bz"))?,
            wr: self.get(tape, format!("{prefix}.wr"))?,
            br: self.get(tape, format!("{prefix}.br"))?,
            wh: self.get(tape, format!("{prefix}.wh"))?,
            bh: self.get(tape, format!("{prefix}.bh"))?,
        })
    }
}

/// Puts every catalog parameter on the tape, checking stored shapes. With
/// `trainable` false the values are constants and backward skips them.
pub(crate) fn bind(
    tape: &mut Tape,
    weights: &ModelWeights,
    arch: &ArchConfig,
    trainable: bool,
) -> Result<BoundModel, SolverError> {
    let mut shapes = std::collections::BTreeMap::new();
    for spec in catalog(arch) {
        shapes.insert(spec.name, (spec.rows, spec.cols));
    }
    let mut b = Binder {
        weights,
        shapes,
        trainable,
        param_ids: Vec::new(),
    };
    let feat = b.encoder(tape, "theta_feat", arch.n_feat_convs)?;
    let state = b.encoder(tape, "theta_state", arch.n_feat_convs)?;
    let cost = CostNetIds {
        node_lift: b.mlp(tape, "theta_cost.node_lift")?,
        edge_lift: b.mlp(tape, "theta_cost.edge_lift")?,
        convs: {
            let mut convs = Vec::new();
            for k in 0..arch.n_cost_convs {
                convs.push(b.conv(tape, &format!("theta_cost.conv{k}"))?);
            }
            convs
        },
        node_head: b.mlp(tape, "theta_cost.node_head")?,
        edge_head: b.mlp(tape, "theta_cost.edge_head")?,
    };
    let node_gru = b.gru(tape, "node_gru")?;
    let edge_gru = b.gru(tape, "edge_gru")?;
    let node_delta = b.mlp(tape, "node_delta")?;
    let edge_delta = b.mlp(tape, "edge_delta")?;
    let bias6 = tape.constant(Array2::from_shape_vec((1, 6), BIAS6.to_vec()).unwrap());
    Ok(BoundModel {
        feat,
        state,
        cost,
        node_gru,
        edge_gru,
        node_delta,
        edge_delta,
        bias6,
        param_ids: b.param_ids,
    })
}

/// One edge convolution. `edge_dir` holds per-direction edge inputs (2m
/// rows); returns updated node features (n rows) and undirected edge features
/// (m rows, mean of the two directions).
fn edge_conv(
    tape: &mut Tape,
    cache: &GraphCache,
    conv: &ConvIds,
    node_f: ValueId,
    edge_dir: ValueId,
) -> (ValueId, ValueId) {
    let src_f = tape.gather_rows(node_f, &cache.dir_src);
    let dst_f = tape.gather_rows(node_f, &cache.dir_dst);
    let x = tape.concat_cols(&[src_f, dst_f, edge_dir]);
    let f_dir = mlp_forward(tape, x, &conv.edge_mlp.0, Activation::Relu);
    let forward_ix: Vec<usize> = (0..cache.m).collect();
    let reverse_ix: Vec<usize> = (cache.m..2 * cache.m).collect();
    let f_fwd = tape.gather_rows(f_dir, &forward_ix);
    let f_rev = tape.gather_rows(f_dir, &reverse_ix);
    let summed = tape.add(f_fwd, f_rev);
    let edge_out = tape.scale(summed, 0.5);
    let node_agg = tape.scatter_mean(f_dir, &cache.dir_src, cache.n);
    let node_out = mlp_forward(tape, node_agg, &conv.node_mlp.0, Activation::Relu);
    (node_out, edge_out)
}

pub(crate) struct EncoderOut {
    pub node: ValueId,
    pub edge: ValueId,
}

/// Shared encoder body: node inputs are zeros, per-direction edge inputs are
/// the flattened measurements (transposed on the reverse direction). `squash`
/// maps outputs into (−1, 1) for hidden-state initialization.
pub(crate) fn encoder_forward(
    tape: &mut Tape,
    cache: &GraphCache,
    enc: &EncoderIds,
    squash: bool,
) -> EncoderOut {
    let mut node = tape.constant(Array2::zeros((cache.n, 9)));
    let mut edge_dir = tape.constant(cache.obs_dir.clone());
    let mut edge_undir = None;
    for (k, conv) in enc.convs.iter().enumerate() {
        if k > 0 {
            edge_dir = tape.gather_rows(edge_undir.unwrap(), &cache.dir_edge);
        }
        let (n2, e2) = edge_conv(tape, cache, conv, node, edge_dir);
        node = n2;
        edge_undir = Some(e2);
    }
    let mut node_out = mlp_forward(tape, node, &enc.node_head.0, Activation::Relu);
    let mut edge_out = mlp_forward(tape, edge_undir.unwrap(), &enc.edge_head.0, Activation::Relu);
    if squash {
        node_out = tape.tanh(node_out);
        edge_out = tape.tanh(edge_out);
    }
    EncoderOut {
        node: node_out,
        edge: edge_out,
    }
}

/// Differentiable cost-graph inputs from the current state: per-node scalar
/// and per-edge 2-vector, with the distance chosen by the metric switch.
pub(crate) fn cost_inputs(
    tape: &mut Tape,
    cache: &GraphCache,
    metric: CostMetric,
    est: ValueId,
    rect: ValueId,
) -> (ValueId, ValueId) {
    if metric == CostMetric::Null {
        let node = tape.constant(Array2::zeros((cache.n, 1)));
        let edge = tape.constant(Array2::zeros((cache.m, 2)));
        return (node, edge);
    }
    let obs_dir = tape.constant(cache.obs_dir.clone());
    let obs_canon = tape.constant(cache.obs_canon.clone());
    let est_src = tape.gather_rows(est, &cache.dir_src);
    let est_dst = tape.gather_rows(est, &cache.dir_dst);
    let per_dir = match metric {
        CostMetric::L1 => {
            let prop = tape.rot_mul(obs_dir, est_dst);
            tape.row_l1(est_src, prop)
        }
        CostMetric::Degree => {
            let prop = tape.rot_mul(obs_dir, est_dst);
            tape.rot_geodesic_deg(est_src, prop)
        }
        CostMetric::Mra => {
            let rel = tape.rot_mul_transpose(est_src, est_dst);
            tape.row_l1(obs_dir, rel)
        }
        CostMetric::Null => unreachable!(),
    };
    let node_cost = tape.scatter_mean(per_dir, &cache.dir_src, cache.n);
    let est_u = tape.gather_rows(est, &cache.edge_u);
    let est_v = tape.gather_rows(est, &cache.edge_v);
    let rel = tape.rot_mul_transpose(est_u, est_v);
    let (e1, e2) = match metric {
        CostMetric::Degree => (
            tape.rot_geodesic_deg(rect, rel),
            tape.rot_geodesic_deg(rect, obs_canon),
        ),
        _ => (tape.row_l1(rect, rel), tape.row_l1(rect, obs_canon)),
    };
    let edge_cost = tape.concat_cols(&[e1, e2]);
    (node_cost, edge_cost)
}

/// Cost-feature network: lift the scalar inputs, run the stacked edge
/// convolutions, and project with per-entity heads.
pub(crate) fn cost_features(
    tape: &mut Tape,
    cache: &GraphCache,
    net: &CostNetIds,
    node_cost: ValueId,
    edge_cost: ValueId,
) -> (ValueId, ValueId) {
    let mut node = mlp_forward(tape, node_cost, &net.node_lift.0, Activation::Relu);
    let mut edge = mlp_forward(tape, edge_cost, &net.edge_lift.0, Activation::Relu);
    for conv in &net.convs {
        let edge_dir = tape.gather_rows(edge, &cache.dir_edge);
        let (n2, e2) = edge_conv(tape, cache, conv, node, edge_dir);
        node = n2;
        edge = e2;
    }
    let c_node = mlp_forward(tape, node, &net.node_head.0, Activation::Relu);
    let c_edge = mlp_forward(tape, edge, &net.edge_head.0, Activation::Relu);
    (c_node, c_edge)
}

/// Recurrent update of one entity class: GRU over [cost feature, flattened
/// rotation, static feature], then an identity-biased Orth6D correction
/// applied on the right.
pub(crate) fn recurrent_update(
    tape: &mut Tape,
    gru: &GruWeights,
    delta_head: &MlpIds,
    bias6: ValueId,
    h: ValueId,
    cost_feat: ValueId,
    rot_rows: ValueId,
    static_feat: ValueId,
) -> (ValueId, ValueId) {
    let x = tape.concat_cols(&[cost_feat, rot_rows, static_feat]);
    let h2 = gru_cell(tape, h, x, gru);
    let d6 = mlp_forward(tape, h2, &delta_head.0, Activation::Relu);
    let d6b = tape.add_bias(d6, bias6);
    let delta = tape.orth6d_to_rot(d6b);
    let rot2 = tape.rot_mul(rot_rows, delta);
    (h2, rot2)
}

/// Exact consistency costs of `(est, rect)` on `g` under the default
/// entrywise metric: per-node mean residual against propagated neighbor
/// proposals, per-edge residuals against the estimates and the observation.
pub fn build_cost_graph(g: &ViewGraph, est: &[Rotation], rect: &[Rotation]) -> CostGraph {
    assert_eq!(est.len(), g.n_nodes(), "est length mismatch");
    assert_eq!(rect.len(), g.n_edges(), "rect length mismatch");
    let node_cost = (0..g.n_nodes())
        .map(|u| {
            let nbrs = g.neighbors(u);
            let total: f64 = nbrs
                .iter()
                .map(|(v, r_uv)| entrywise_l1(est[u].matrix(), (*r_uv * est[*v]).matrix()))
                .sum();
            total / nbrs.len() as f64
        })
        .collect();
    let edge_cost = g
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let rel = est[e.u] * est[e.v].transpose();
            (
                entrywise_l1(rect[k].matrix(), rel.matrix()),
                entrywise_l1(rect[k].matrix(), e.r_obs.matrix()),
            )
        })
        .collect();
    CostGraph {
        node_cost,
        edge_cost,
    }
}
