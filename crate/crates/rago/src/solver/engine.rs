//! Model lifecycle, the alternating inference schedule, and training.
//!
//! Inference runs each phase on a fresh tape with the weights bound as
//! constants, carrying plain arrays between phases; memory stays bounded on
//! large graphs. Training unrolls the whole schedule on a single tape so one
//! backward pass reaches every iteration, then takes one AdamW step per
//! graph.

use super::cache::{rotations_to_rows, rows_to_rotations, GraphCache};
use super::net::{
    bind, build_cost_graph, check_shapes, cost_features, cost_inputs, encoder_forward,
    init_weights, recurrent_update, BoundModel, META_ARCH,
};
use super::{
    ArchConfig, Phase, ScheduleMode, SolverError, SolverState, TraceRow,
};
use crate::classical::{spt_init, SptPolicy};
use crate::eval::mn_md_error;
use crate::nn::{lr_schedule, AdamW, ModelWeights, Tape, ValueId};
use crate::so3::{random_rotation, Rotation};
use crate::synth::{load_manifest, manifest_graph_path};
use crate::viewgraph::{edges_connected, ViewGraph};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// Node initialization for inference.
#[derive(Debug, Clone)]
pub enum InferInit<'a> {
    /// Independent random rotations from the given seed.
    Random(u64),
    /// Deterministic spanning-tree propagation from the max-degree root.
    Spt,
    /// Caller-supplied rotations, one per node.
    Provided(&'a [Rotation]),
}

#[derive(Debug, Clone)]
pub struct InferOutput {
    pub est_abs: Vec<Rotation>,
    pub rect_rel: Vec<Rotation>,
    pub trace: Vec<TraceRow>,
}

/// Unrolled differentiable loss of one graph: the tape retains every
/// intermediate, `loss` is 1×1, and `params` names each bound weight tensor.
pub struct GraphLoss {
    pub tape: Tape,
    pub loss: ValueId,
    pub params: Vec<(String, ValueId)>,
}

pub struct Model {
    pub arch: ArchConfig,
    pub weights: ModelWeights,
}

struct StateIds {
    est: ValueId,
    rect: ValueId,
    h_node: ValueId,
    h_edge: ValueId,
    f_node: ValueId,
    f_edge: ValueId,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum StepKind {
    Edge,
    Node,
    Joint,
}

/// Supervision weight of the i-th update (1-based) out of `total`; the final
/// update gets weight 1 and earlier ones decay geometrically.
pub(crate) fn decay_weight(gamma: f64, total: usize, i: usize) -> f64 {
    gamma.powi((total - i) as i32)
}

/// One schedule phase: rebuild the cost graph from the current state, encode
/// it, and update the selected entity class. Joint phases update both from
/// the same pre-update state.
fn run_phase(
    tape: &mut Tape,
    cache: &GraphCache,
    bound: &BoundModel,
    metric: super::CostMetric,
    ids: &mut StateIds,
    kind: StepKind,
) {
    let (nc, ec) = cost_inputs(tape, cache, metric, ids.est, ids.rect);
    let nc = tape.scale(nc, metric.input_scale());
    let ec = tape.scale(ec, metric.input_scale());
    let (c_node, c_edge) = cost_features(tape, cache, &bound.cost, nc, ec);
    if kind != StepKind::Node {
        let (h2, rect2) = recurrent_update(
            tape,
            &bound.edge_gru,
            &bound.edge_delta,
            bound.bias6,
            ids.h_edge,
            c_edge,
            ids.rect,
            ids.f_edge,
        );
        ids.h_edge = h2;
        ids.rect = rect2;
    }
    if kind != StepKind::Edge {
        let (h2, est2) = recurrent_update(
            tape,
            &bound.node_gru,
            &bound.node_delta,
            bound.bias6,
            ids.h_node,
            c_node,
            ids.est,
            ids.f_node,
        );
        ids.h_node = h2;
        ids.est = est2;
    }
}

fn numerical(e: impl std::fmt::Display) -> SolverError {
    SolverError::Numerical(e.to_string())
}

fn trace_row(
    g: &ViewGraph,
    state: &SolverState,
    iter: usize,
    phase: Phase,
) -> Result<TraceRow, SolverError> {
    let cg = build_cost_graph(g, &state.est_abs, &state.rect_rel);
    let mean = cg.node_cost.iter().sum::<f64>() / cg.node_cost.len() as f64;
    let (mn, md) = match g.gt_abs() {
        Some(gt) => {
            let (a, b) = mn_md_error(&state.est_abs, gt).map_err(numerical)?;
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    Ok(TraceRow {
        iter,
        phase,
        mean_node_cost: mean,
        mn_deg: mn,
        md_deg: md,
    })
}

impl Model {
    /// Fresh model with identity-biased update heads.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Model, SolverError> {
        arch.validate()?;
        Ok(Model {
            arch: arch.clone(),
            weights: init_weights(arch, seed),
        })
    }

    /// Rebuilds a model from a stored parameter set, reading the embedded
    /// architecture record and checking every shape.
    pub fn from_weights(weights: ModelWeights) -> Result<Model, SolverError> {
        let meta = weights.get(META_ARCH).ok_or_else(|| {
            SolverError::Config(format!("weights carry no `{META_ARCH}` record"))
        })?;
        let arch = ArchConfig::from_meta(meta)?;
        check_shapes(&weights, &arch)?;
        Ok(Model { arch, weights })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, SolverError> {
        Model::from_weights(ModelWeights::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SolverError> {
        self.weights.save(path)?;
        Ok(())
    }

    /// Static features from the measurement encoder.
    pub fn extract_features(
        &self,
        g: &ViewGraph,
    ) -> Result<(Array2<f64>, Array2<f64>), SolverError> {
        let cache = GraphCache::new(g);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.weights, &self.arch, false)?;
        let out = encoder_forward(&mut tape, &cache, &bound.feat, false);
        Ok((tape.data(out.node).clone(), tape.data(out.edge).clone()))
    }

    /// Initial hidden states, squashed into (−1, 1).
    pub fn init_hidden(&self, g: &ViewGraph) -> Result<(Array2<f64>, Array2<f64>), SolverError> {
        let cache = GraphCache::new(g);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.weights, &self.arch, false)?;
        let out = encoder_forward(&mut tape, &cache, &bound.state, true);
        Ok((tape.data(out.node).clone(), tape.data(out.edge).clone()))
    }

    /// Full starting state: chosen node rotations, identity edge rotations,
    /// and freshly encoded features and hidden states.
    pub fn init_state(&self, g: &ViewGraph, init: &InferInit) -> Result<SolverState, SolverError> {
        let n = g.n_nodes();
        let est_abs = match init {
            InferInit::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..n).map(|_| random_rotation(&mut rng)).collect()
            }
            InferInit::Spt => {
                let mut unused = ChaCha8Rng::seed_from_u64(0);
                spt_init(g, SptPolicy::MaxDegreeRoot, &mut unused)
            }
            InferInit::Provided(rots) => {
                if rots.len() != n {
                    return Err(SolverError::Config(format!(
                        "provided init has {} rotations for {n} nodes",
                        rots.len()
                    )));
                }
                rots.to_vec()
            }
        };
        let cache = GraphCache::new(g);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.weights, &self.arch, false)?;
        let feat = encoder_forward(&mut tape, &cache, &bound.feat, false);
        let hidden = encoder_forward(&mut tape, &cache, &bound.state, true);
        Ok(SolverState {
            est_abs,
            rect_rel: vec![Rotation::identity(); g.n_edges()],
            h_node: tape.data(hidden.node).clone(),
            h_edge: tape.data(hidden.edge).clone(),
            f_node: tape.data(feat.node).clone(),
            f_edge: tape.data(feat.edge).clone(),
            edge_steps: 0,
            node_steps: 0,
        })
    }

    /// Applies one phase to `state`. `which` selects edges, nodes, or (in
    /// simultaneous mode) a joint update; the initial phase is not a step.
    pub fn update_step(
        &self,
        g: &ViewGraph,
        state: &mut SolverState,
        which: Phase,
    ) -> Result<(), SolverError> {
        let cache = GraphCache::new(g);
        let kind = match which {
            Phase::Edge => StepKind::Edge,
            Phase::Node => StepKind::Node,
            Phase::Joint => StepKind::Joint,
            Phase::Init => {
                return Err(SolverError::Config(
                    "update_step needs an edge, node, or joint phase".into(),
                ))
            }
        };
        self.step_on_cache(&cache, state, kind)
    }

    fn step_on_cache(
        &self,
        cache: &GraphCache,
        state: &mut SolverState,
        kind: StepKind,
    ) -> Result<(), SolverError> {
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.weights, &self.arch, false)?;
        let mut ids = StateIds {
            est: tape.constant(rotations_to_rows(&state.est_abs)),
            rect: tape.constant(rotations_to_rows(&state.rect_rel)),
            h_node: tape.constant(state.h_node.clone()),
            h_edge: tape.constant(state.h_edge.clone()),
            f_node: tape.constant(state.f_node.clone()),
            f_edge: tape.constant(state.f_edge.clone()),
        };
        run_phase(
            &mut tape,
            cache,
            &bound,
            self.arch.cost_metric,
            &mut ids,
            kind,
        );
        if kind != StepKind::Node {
            state.rect_rel = rows_to_rotations(tape.data(ids.rect)).map_err(numerical)?;
            state.h_edge = tape.data(ids.h_edge).clone();
            state.edge_steps += 1;
        }
        if kind != StepKind::Edge {
            state.est_abs = rows_to_rotations(tape.data(ids.est)).map_err(numerical)?;
            state.h_node = tape.data(ids.h_node).clone();
            state.node_steps += 1;
        }
        Ok(())
    }

    /// Runs the full schedule for `t_g_test` outer rounds and returns the
    /// refined rotations with a per-phase trace.
    pub fn infer(&self, g: &ViewGraph, init: InferInit) -> Result<InferOutput, SolverError> {
        let cache = GraphCache::new(g);
        let mut state = self.init_state(g, &init)?;
        let mut trace = vec![trace_row(g, &state, 0, Phase::Init)?];
        let mut iter = 0;
        for _ in 0..self.arch.t_g_test {
            match self.arch.mode {
                ScheduleMode::Alternating => {
                    for _ in 0..self.arch.t_e {
                        self.step_on_cache(&cache, &mut state, StepKind::Edge)?;
                        iter += 1;
                        trace.push(trace_row(g, &state, iter, Phase::Edge)?);
                    }
                    for _ in 0..self.arch.t_n {
                        self.step_on_cache(&cache, &mut state, StepKind::Node)?;
                        iter += 1;
                        trace.push(trace_row(g, &state, iter, Phase::Node)?);
                    }
                }
                ScheduleMode::Simultaneous => {
                    self.step_on_cache(&cache, &mut state, StepKind::Joint)?;
                    iter += 1;
                    trace.push(trace_row(g, &state, iter, Phase::Joint)?);
                }
            }
        }
        Ok(InferOutput {
            est_abs: state.est_abs,
            rect_rel: state.rect_rel,
            trace,
        })
    }

    /// Builds the unrolled training loss of one graph on a single tape:
    /// after every edge update the rectified rotations are scored against the
    /// ground-truth relative rotations, after every node update the pairwise
    /// estimates are, each term decayed by distance from the final update and
    /// normalized by the edge count.
    pub fn graph_loss(
        &self,
        g: &ViewGraph,
        node_init: &[Rotation],
        gamma: f64,
        t_g: usize,
    ) -> Result<GraphLoss, SolverError> {
        if node_init.len() != g.n_nodes() {
            return Err(SolverError::Config(format!(
                "node init has {} rotations for {} nodes",
                node_init.len(),
                g.n_nodes()
            )));
        }
        let cache = GraphCache::new(g);
        let Some(gt_rel) = cache.gt_rel.clone() else {
            return Err(SolverError::Config(
                "training graphs need ground truth".into(),
            ));
        };
        let (total_e, total_n) = self.arch.schedule_totals(t_g);
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &self.weights, &self.arch, true)?;
        let feat = encoder_forward(&mut tape, &cache, &bound.feat, false);
        let hidden = encoder_forward(&mut tape, &cache, &bound.state, true);
        let rect0 = vec![Rotation::identity(); cache.m];
        let mut ids = StateIds {
            est: tape.constant(rotations_to_rows(node_init)),
            rect: tape.constant(rotations_to_rows(&rect0)),
            h_node: hidden.node,
            h_edge: hidden.edge,
            f_node: feat.node,
            f_edge: feat.edge,
        };
        let gt_id = tape.constant(gt_rel);
        let mut loss = tape.constant(Array2::zeros((1, 1)));
        let mut edge_i = 0;
        let mut node_i = 0;
        let add_edge_term = |tape: &mut Tape, ids: &StateIds, loss: &mut ValueId, i: usize| {
            let term = tape.l1_loss(ids.rect, gt_id);
            let term = tape.scale(term, decay_weight(gamma, total_e, i));
            *loss = tape.add(*loss, term);
        };
        let add_node_term = |tape: &mut Tape, ids: &StateIds, loss: &mut ValueId, i: usize| {
            let eu = tape.gather_rows(ids.est, &cache.edge_u);
            let ev = tape.gather_rows(ids.est, &cache.edge_v);
            let rel = tape.rot_mul_transpose(eu, ev);
            let term = tape.l1_loss(rel, gt_id);
            let term = tape.scale(term, decay_weight(gamma, total_n, i));
            *loss = tape.add(*loss, term);
        };
        for _ in 0..t_g {
            match self.arch.mode {
                ScheduleMode::Alternating => {
                    for _ in 0..self.arch.t_e {
                        run_phase(
                            &mut tape,
                            &cache,
                            &bound,
                            self.arch.cost_metric,
                            &mut ids,
                            StepKind::Edge,
                        );
                        edge_i += 1;
                        add_edge_term(&mut tape, &ids, &mut loss, edge_i);
                    }
                    for _ in 0..self.arch.t_n {
                        run_phase(
                            &mut tape,
                            &cache,
                            &bound,
                            self.arch.cost_metric,
                            &mut ids,
                            StepKind::Node,
                        );
                        node_i += 1;
                        add_node_term(&mut tape, &ids, &mut loss, node_i);
                    }
                }
                ScheduleMode::Simultaneous => {
                    run_phase(
                        &mut tape,
                        &cache,
                        &bound,
                        self.arch.cost_metric,
                        &mut ids,
                        StepKind::Joint,
                    );
                    edge_i += 1;
                    node_i += 1;
                    add_edge_term(&mut tape, &ids, &mut loss, edge_i);
                    add_node_term(&mut tape, &ids, &mut loss, node_i);
                }
            }
        }
        Ok(GraphLoss {
            tape,
            loss,
            params: bound.param_ids,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub gamma: f64,
    pub edge_dropout: f64,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            gamma: 0.8,
            edge_dropout: 0.2,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Edge indices of one BFS spanning tree, used to restore connectivity after
/// dropout.
fn spanning_tree_edges(g: &ViewGraph) -> Vec<usize> {
    let n = g.n_nodes();
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = std::collections::VecDeque::from([0]);
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    while let Some(u) = queue.pop_front() {
        for (v, ei, _) in g.neighbors_with_edge(u) {
            if !seen[v] {
                seen[v] = true;
                tree.push(ei);
                queue.push_back(v);
            }
        }
    }
    tree
}

/// Connected subgraph with a fixed fraction of edges removed. Dropped
/// spanning-tree edges are restored when removal disconnects the graph.
/// Returns None when the rounded drop count is zero.
fn dropout_subgraph(
    g: &ViewGraph,
    tree: &[usize],
    frac: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<ViewGraph>, SolverError> {
    let m = g.n_edges();
    let k = (frac * m as f64).round() as usize;
    if k == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..m).collect();
    for i in 0..k {
        let j = rng.gen_range(i..m);
        order.swap(i, j);
    }
    let dropped: std::collections::HashSet<usize> = order[..k].iter().copied().collect();
    let mut kept: Vec<usize> = (0..m).filter(|e| !dropped.contains(e)).collect();
    let connected = edges_connected(
        g.n_nodes(),
        kept.iter().map(|&e| (g.edges()[e].u, g.edges()[e].v)),
    );
    if !connected {
        kept.extend(tree.iter().copied().filter(|e| dropped.contains(e)));
        kept.sort_unstable();
    }
    let edges = kept
        .iter()
        .map(|&e| {
            let edge = &g.edges()[e];
            (edge.u, edge.v, edge.r_obs)
        })
        .collect();
    let sub = ViewGraph::new(g.n_nodes(), edges, g.gt_abs().map(|s| s.to_vec()), None)?;
    Ok(Some(sub))
}

/// Trains `model` in place on the graphs listed in a dataset manifest and
/// returns the per-epoch loss curve. One optimizer step per graph; node
/// initializations and edge dropout are redrawn every visit.
pub fn train(
    model: &mut Model,
    manifest_path: impl AsRef<Path>,
    cfg: &TrainConfig,
) -> Result<Vec<LossRow>, SolverError> {
    let manifest_path = manifest_path.as_ref();
    if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
        return Err(SolverError::Config(format!(
            "gamma must lie in (0, 1], got {}",
            cfg.gamma
        )));
    }
    if !(0.0..1.0).contains(&cfg.edge_dropout) {
        return Err(SolverError::Config(format!(
            "edge_dropout must lie in [0, 1), got {}",
            cfg.edge_dropout
        )));
    }
    if cfg.epochs == 0 {
        return Err(SolverError::Config("epochs must be positive".into()));
    }
    let rows = load_manifest(manifest_path)
        .map_err(|e| SolverError::Config(format!("manifest: {e}")))?;
    if rows.is_empty() {
        return Err(SolverError::Config("manifest lists no graphs".into()));
    }
    let mut graphs = Vec::with_capacity(rows.len());
    for row in &rows {
        let g = ViewGraph::load(manifest_graph_path(manifest_path, row))?;
        if g.gt_abs().is_none() {
            return Err(SolverError::Config(format!(
                "training graph {} has no ground truth",
                row.file
            )));
        }
        let tree = spanning_tree_edges(&g);
        graphs.push((g, tree));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(epoch);
        let mut total = 0.0;
        for (gi, (g, tree)) in graphs.iter().enumerate() {
            let node_init: Vec<Rotation> =
                (0..g.n_nodes()).map(|_| random_rotation(&mut rng)).collect();
            let sub = if cfg.edge_dropout > 0.0 {
                dropout_subgraph(g, tree, cfg.edge_dropout, &mut rng)?
            } else {
                None
            };
            let target = sub.as_ref().unwrap_or(g);
            let mut gl = model.graph_loss(target, &node_init, cfg.gamma, model.arch.t_g)?;
            let value = gl.tape.data(gl.loss)[(0, 0)];
            if !value.is_finite() {
                return Err(SolverError::NonFiniteLoss {
                    epoch,
                    graph: gi,
                    value,
                });
            }
            gl.tape.backward(gl.loss);
            let mut grads = BTreeMap::new();
            for (name, id) in &gl.params {
                grads.insert(name.clone(), gl.tape.grad(*id));
            }
            opt.step(&mut model.weights.params, &grads, lr);
            total += value;
        }
        curve.push(LossRow {
            epoch,
            loss: total / graphs.len() as f64,
            lr,
        });
    }
    Ok(curve)
}
