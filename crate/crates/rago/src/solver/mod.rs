//! Recurrent graph optimizer for rotation averaging.
//!
//! The solver keeps two sets of unknowns on a view-graph: absolute rotations
//! on nodes and rectified relative rotations on edges. Static features and
//! initial hidden states come from two message-passing encoders over the
//! observed measurements. Each iteration builds a consistency cost graph from
//! the current state, encodes it with a stack of edge convolutions, feeds the
//! result through per-entity GRUs, and applies a small rotation correction
//! predicted in the Orth6D parameterization. Edges and nodes are refined on an
//! alternating schedule; training supervises every iteration against
//! ground-truth relative rotations with exponentially decayed weights.

mod cache;
mod engine;
mod net;

pub use engine::{train, InferInit, InferOutput, LossRow, Model, TrainConfig};
pub use net::{build_cost_graph, init_weights};

use crate::nn::WeightsError;
use crate::so3::Rotation;
use crate::viewgraph::GraphError;
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver config: {0}")]
    Config(String),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("non-finite training loss {value} at epoch {epoch}, graph {graph}")]
    NonFiniteLoss {
        epoch: usize,
        graph: usize,
        value: f64,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Update order. Alternating runs `t_e` edge phases then `t_n` node phases per
/// outer round; simultaneous updates both entity classes from the same cost
/// graph once per round and ignores the split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Alternating,
    Simultaneous,
}

impl ScheduleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleMode::Alternating => "alternating",
            ScheduleMode::Simultaneous => "simultaneous",
        }
    }
}

impl std::str::FromStr for ScheduleMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "alternating" => Ok(ScheduleMode::Alternating),
            "simultaneous" => Ok(ScheduleMode::Simultaneous),
            other => Err(format!("unknown schedule mode `{other}`")),
        }
    }
}

/// Distance fed into the cost graph. `L1` is the default entrywise metric.
/// The other variants are ablation switches: `Degree` uses geodesic angles,
/// `Mra` scores nodes by relative-rotation residuals instead of propagated
/// absolute ones, and `Null` zeroes the cost inputs entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMetric {
    L1,
    Degree,
    Mra,
    Null,
}

impl CostMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            CostMetric::L1 => "l1",
            CostMetric::Degree => "degree",
            CostMetric::Mra => "mra",
            CostMetric::Null => "null",
        }
    }

    /// Reciprocal of the metric's typical magnitude. Costs are multiplied by
    /// this before the lift MLPs so every GRU input block has comparable
    /// scale; raw entrywise distances run an order of magnitude larger than
    /// the unit-bounded rotation entries and saturate the gates.
    pub(crate) fn input_scale(self) -> f64 {
        match self {
            CostMetric::L1 | CostMetric::Mra => 1.0 / 9.0,
            CostMetric::Degree => 1.0 / 90.0,
            CostMetric::Null => 1.0,
        }
    }
}

impl std::str::FromStr for CostMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "l1" => Ok(CostMetric::L1),
            "degree" => Ok(CostMetric::Degree),
            "mra" => Ok(CostMetric::Mra),
            "null" => Ok(CostMetric::Null),
            other => Err(format!("unknown cost metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub n_cost_convs: usize,
    pub n_feat_convs: usize,
    pub t_g: usize,
    pub t_e: usize,
    pub t_n: usize,
    pub t_g_test: usize,
    pub mode: ScheduleMode,
    pub cost_metric: CostMetric,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            feat_dim: 48,
            hidden_dim: 48,
            n_cost_convs: 3,
            n_feat_convs: 1,
            t_g: 3,
            t_e: 1,
            t_n: 4,
            t_g_test: 5,
            mode: ScheduleMode::Alternating,
            cost_metric: CostMetric::L1,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        for (name, v) in [
            ("feat_dim", self.feat_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_cost_convs", self.n_cost_convs),
            ("n_feat_convs", self.n_feat_convs),
            ("t_g", self.t_g),
            ("t_e", self.t_e),
            ("t_n", self.t_n),
            ("t_g_test", self.t_g_test),
        ] {
            if v == 0 {
                return Err(SolverError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Total edge and node updates for one full run at the given outer count.
    pub fn schedule_totals(&self, t_g: usize) -> (usize, usize) {
        match self.mode {
            ScheduleMode::Alternating => (t_g * self.t_e, t_g * self.t_n),
            ScheduleMode::Simultaneous => (t_g, t_g),
        }
    }

    /// Flat numeric encoding embedded in weight files so a saved model is
    /// self-describing.
    pub(crate) fn to_meta(&self) -> Array2<f64> {
        let vals = [
            self.feat_dim as f64,
            self.hidden_dim as f64,
            self.n_cost_convs as f64,
            self.n_feat_convs as f64,
            self.t_g as f64,
            self.t_e as f64,
            self.t_n as f64,
            self.t_g_test as f64,
            match self.mode {
                ScheduleMode::Alternating => 0.0,
                ScheduleMode::Simultaneous => 1.0,
            },
            match self.cost_metric {
                CostMetric::L1 => 0.0,
                CostMetric::Degree => 1.0,
                CostMetric::Mra => 2.0,
                CostMetric::Null => 3.0,
            },
        ];
        Array2::from_shape_vec((1, vals.len()), vals.to_vec()).unwrap()
    }

    pub(crate) fn from_meta(row: &Array2<f64>) -> Result<Self, SolverError> {
        if row.dim() != (1, 10) {
            return Err(SolverError::Config(format!(
                "architecture record has shape {:?}, expected (1, 10)",
                row.dim()
            )));
        }
        let int = |i: usize, name: &str| -> Result<usize, SolverError> {
            let v = row[(0, i)];
            if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
                return Err(SolverError::Config(format!(
                    "architecture field {name} has invalid value {v}"
                )));
            }
            Ok(v as usize)
        };
        let cfg = ArchConfig {
            feat_dim: int(0, "feat_dim")?,
            hidden_dim: int(1, "hidden_dim")?,
            n_cost_convs: int(2, "n_cost_convs")?,
            n_feat_convs: int(3, "n_feat_convs")?,
            t_g: int(4, "t_g")?,
            t_e: int(5, "t_e")?,
            t_n: int(6, "t_n")?,
            t_g_test: int(7, "t_g_test")?,
            mode: match int(8, "mode")? {
                0 => ScheduleMode::Alternating,
                1 => ScheduleMode::Simultaneous,
                v => return Err(SolverError::Config(format!("unknown mode code {v}"))),
            },
            cost_metric: match int(9, "cost_metric")? {
                0 => CostMetric::L1,
                1 => CostMetric::Degree,
                2 => CostMetric::Mra,
                3 => CostMetric::Null,
                v => return Err(SolverError::Config(format!("unknown cost metric code {v}"))),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Consistency costs of a state on its graph: one scalar per node, one
/// 2-vector per edge (residual to the current estimates, residual to the
/// observation).
#[derive(Debug, Clone)]
pub struct CostGraph {
    pub node_cost: Vec<f64>,
    pub edge_cost: Vec<(f64, f64)>,
}

/// Full solver state between iterations. Hidden rows live in (−1, 1); static
/// features are computed once per graph.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub est_abs: Vec<Rotation>,
    pub rect_rel: Vec<Rotation>,
    pub h_node: Array2<f64>,
    pub h_edge: Array2<f64>,
    pub f_node: Array2<f64>,
    pub f_edge: Array2<f64>,
    pub edge_steps: usize,
    pub node_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Edge,
    Node,
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Edge => "edge",
            Phase::Node => "node",
            Phase::Joint => "joint",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "init" => Ok(Phase::Init),
            "edge" => Ok(Phase::Edge),
            "node" => Ok(Phase::Node),
            "joint" => Ok(Phase::Joint),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

/// One inference trace record. `iter` is the running update index (0 for the
/// initial state), `mean_node_cost` always uses the default entrywise metric
/// so traces stay comparable across cost-metric variants, and the error
/// columns are present only when the graph carries ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub phase: Phase,
    pub mean_node_cost: f64,
    pub mn_deg: Option<f64>,
    pub md_deg: Option<f64>,
}

pub const TRACE_HEADER: &str = "iter,phase,mean_node_cost,mn_deg,md_deg";

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.9}"),
        None => String::new(),
    };
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.9},{},{}\n",
            r.iter,
            r.phase.as_str(),
            r.mean_node_cost,
            opt(r.mn_deg),
            opt(r.md_deg)
        ));
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>, SolverError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => {
            return Err(SolverError::Config(format!(
                "bad trace header {other:?}, expected `{TRACE_HEADER}`"
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(SolverError::Config(format!(
                "trace line {}: expected 5 fields, got {}",
                ln + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| SolverError::Config(format!("trace line {}: bad {what}", ln + 2));
        let opt = |s: &str, what: &str| -> Result<Option<f64>, SolverError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(what))
            }
        };
        rows.push(TraceRow {
            iter: fields[0].parse().map_err(|_| bad("iter"))?,
            phase: fields[1].parse().map_err(|_| bad("phase"))?,
            mean_node_cost: fields[2].parse().map_err(|_| bad("mean_node_cost"))?,
            mn_deg: opt(fields[3], "mn_deg")?,
            md_deg: opt(fields[4], "md_deg")?,
        });
    }
    Ok(rows)
}
