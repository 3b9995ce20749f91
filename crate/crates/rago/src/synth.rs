//! Synthetic view-graph generation.
//!
//! Pipeline per graph: sample a node count, draw ground-truth absolute
//! rotations (yaw-only or full), build an Erdős–Rényi edge set augmented
//! with a uniform random spanning tree for connectivity, perturb each
//! ground-truth relative rotation by angular noise with one σ per graph,
//! then replace a fraction of edges with uniformly random rotations and
//! flag them as outliers. Everything is deterministic given the seed.

use crate::so3::{random_perturbation, random_rotation, Rotation};
use crate::viewgraph::{GraphError, ViewGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_nodes_range: (usize, usize),
    pub edge_fraction_range: (f64, f64),
    pub sigma_deg_range: (f64, f64),
    pub outlier_fraction_range: (f64, f64),
    /// Yaw-only ground truth when set; full uniform rotations otherwise.
    pub planar_gt: bool,
    pub seed: u64,
}

impl SynthConfig {
    /// Paper-scale training distribution: 250..1000 nodes, 10..30% edge
    /// density, σ in 5..30°, up to 30% outliers.
    pub fn paper_training(seed: u64) -> Self {
        SynthConfig {
            n_nodes_range: (250, 1000),
            edge_fraction_range: (0.10, 0.30),
            sigma_deg_range: (5.0, 30.0),
            outlier_fraction_range: (0.0, 0.30),
            planar_gt: true,
            seed,
        }
    }

    /// Default point of the robustness grid: 600 nodes, 30% density,
    /// σ = 15°, 15% outliers.
    pub fn robustness_default(seed: u64) -> Self {
        SynthConfig {
            n_nodes_range: (600, 600),
            edge_fraction_range: (0.30, 0.30),
            sigma_deg_range: (15.0, 15.0),
            outlier_fraction_range: (0.15, 0.15),
            planar_gt: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |msg: String| Err(SynthError::Config(msg));
        if self.n_nodes_range.0 < 1 || self.n_nodes_range.0 > self.n_nodes_range.1 {
            return err(format!("bad n_nodes_range {:?}", self.n_nodes_range));
        }
        for (name, (lo, hi)) in [
            ("edge_fraction_range", self.edge_fraction_range),
            ("outlier_fraction_range", self.outlier_fraction_range),
        ] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return err(format!("bad {name} ({lo}, {hi})"));
            }
        }
        let (slo, shi) = self.sigma_deg_range;
        if !(slo >= 0.0 && slo <= shi && shi.is_finite()) {
            return err(format!("bad sigma_deg_range ({slo}, {shi})"));
        }
        Ok(())
    }
}

fn sample_f64<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..=range.1)
    }
}

/// Decodes a uniform random Prüfer sequence into a uniform random labeled
/// tree on `n` nodes.
fn random_spanning_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    if n == 2 {
        return vec![(0, 1)];
    }
    let prufer: Vec<usize> = (0..n - 2).map(|_| rng.gen_range(0..n)).collect();
    let mut degree = vec![1usize; n];
    for &p in &prufer {
        degree[p] += 1;
    }
    let mut leaves: BinaryHeap<Reverse<usize>> = (0..n)
        .filter(|&i| degree[i] == 1)
        .map(Reverse)
        .collect();
    let mut edges = Vec::with_capacity(n - 1);
    for &p in &prufer {
        let Reverse(leaf) = leaves.pop().unwrap();
        edges.push((leaf.min(p), leaf.max(p)));
        degree[p] -= 1;
        if degree[p] == 1 {
            leaves.push(Reverse(p));
        }
    }
    let Reverse(a) = leaves.pop().unwrap();
    let Reverse(b) = leaves.pop().unwrap();
    edges.push((a.min(b), a.max(b)));
    edges
}

/// Output of one generation run: the graph plus the per-graph draws the
/// manifest records.
struct Generated {
    graph: ViewGraph,
    sigma_deg: f64,
    outlier_frac: f64,
}

fn generate_impl(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Generated, SynthError> {
    let (nlo, nhi) = cfg.n_nodes_range;
    let n = rng.gen_range(nlo..=nhi);
    let gt: Vec<Rotation> = if cfg.planar_gt {
        (0..n)
            .map(|_| Rotation::rot_z_deg(rng.gen_range(0.0..360.0)))
            .collect()
    } else {
        (0..n).map(|_| random_rotation(rng)).collect()
    };

    let frac = sample_f64(rng, cfg.edge_fraction_range);
    let pairs = n * (n - 1) / 2;
    if frac * (pairs as f64) < (n - 1) as f64 {
        return Err(SynthError::Config(format!(
            "edge fraction {frac} yields {:.1} edges on {n} nodes, below the {} needed for connectivity",
            frac * pairs as f64,
            n - 1
        )));
    }
    let m_target = ((frac * pairs as f64).round() as usize).min(pairs);
    let mut edge_set: HashSet<(usize, usize)> = HashSet::with_capacity(m_target + n);
    while edge_set.len() < m_target {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            edge_set.insert((u.min(v), u.max(v)));
        }
    }
    for e in random_spanning_tree(n, rng) {
        edge_set.insert(e);
    }
    let mut edge_list: Vec<(usize, usize)> = edge_set.into_iter().collect();
    edge_list.sort_unstable();
    let m = edge_list.len();

    let sigma = sample_f64(rng, cfg.sigma_deg_range);
    let mut raw: Vec<(usize, usize, Rotation)> = edge_list
        .iter()
        .map(|&(u, v)| {
            let rel = gt[u] * gt[v].transpose();
            (u, v, random_perturbation(sigma, rng) * rel)
        })
        .collect();

    let o = sample_f64(rng, cfg.outlier_fraction_range);
    let k = (o * m as f64).round() as usize;
    let mut idx: Vec<usize> = (0..m).collect();
    for i in 0..k {
        let j = rng.gen_range(i..m);
        idx.swap(i, j);
    }
    let mut chosen: Vec<usize> = idx[..k].to_vec();
    chosen.sort_unstable();
    let mut flags = vec![false; m];
    for &i in &chosen {
        raw[i].2 = random_rotation(rng);
        flags[i] = true;
    }

    let graph = ViewGraph::new(n, raw, Some(gt), Some(flags))?;
    Ok(Generated {
        graph,
        sigma_deg: sigma,
        outlier_frac: o,
    })
}

pub fn generate(cfg: &SynthConfig) -> Result<ViewGraph, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    generate_impl(cfg, &mut rng).map(|g| g.graph)
}

pub const MANIFEST_HEADER: &str = "file,n_nodes,n_edges,sigma_deg,outlier_frac,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub file: String,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub sigma_deg: f64,
    pub outlier_frac: f64,
    pub seed: u64,
}

/// Writes `count` graph files plus `manifest.csv` into `out_dir` and
/// returns the manifest path. Graph `i` uses seed `cfg.seed ^ i`.
pub fn make_dataset(
    cfg: &SynthConfig,
    count: usize,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf, SynthError> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let rows: Vec<ManifestRow> = (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed ^ (i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gen = generate_impl(cfg, &mut rng)?;
            let file = format!("graph_{i:04}.vg");
            gen.graph.save(out_dir.join(&file))?;
            Ok(ManifestRow {
                file,
                n_nodes: gen.graph.n_nodes(),
                n_edges: gen.graph.n_edges(),
                sigma_deg: gen.sigma_deg,
                outlier_frac: gen.outlier_frac,
                seed,
            })
        })
        .collect::<Result<_, SynthError>>()?;
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for r in &rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            r.file, r.n_nodes, r.n_edges, r.sigma_deg, r.outlier_frac, r.seed
        );
    }
    let manifest = out_dir.join("manifest.csv");
    std::fs::write(&manifest, text)?;
    Ok(manifest)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>, SynthError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SynthError::Config("empty manifest".into()))?;
    if header.trim() != MANIFEST_HEADER {
        return Err(SynthError::Config(format!(
            "bad manifest header `{header}`"
        )));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(SynthError::Config(format!(
                "manifest line {} has {} fields, expected 6",
                idx + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| SynthError::Config(format!("manifest line {}: bad {what}", idx + 2));
        rows.push(ManifestRow {
            file: fields[0].to_string(),
            n_nodes: fields[1].parse().map_err(|_| bad("n_nodes"))?,
            n_edges: fields[2].parse().map_err(|_| bad("n_edges"))?,
            sigma_deg: fields[3].parse().map_err(|_| bad("sigma_deg"))?,
            outlier_frac: fields[4].parse().map_err(|_| bad("outlier_frac"))?,
            seed: fields[5].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>, SynthError> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

/// Resolves a manifest `file` entry relative to the manifest's directory.
pub fn manifest_graph_path(manifest: &Path, row: &ManifestRow) -> PathBuf {
    match manifest.parent() {
        Some(dir) => dir.join(&row.file),
        None => PathBuf::from(&row.file),
    }
}
