//! Reverse-mode autodiff over dense f64 matrices.
//!
//! A `Tape` owns every intermediate of one forward computation. Values are
//! matrices whose rows index entities (nodes, edges) and whose columns are
//! feature channels. `backward` walks the tape once in reverse topological
//! order (creation order is already topological) and accumulates gradients
//! for every value reachable from a parameter.
//!
//! Shape rules are enforced by panics at op-construction time; fallible
//! validation belongs to the layers above, which check dimensions before
//! building graphs. Reductions use a fixed summation order so forward and
//! backward passes are bitwise reproducible.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, Axis};
use std::rc::Rc;

/// Handle to one value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

enum Op {
    Leaf,
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, f64),
    AddBiasRow(ValueId, ValueId),
    ConcatCols(Vec<ValueId>),
    Tanh(ValueId),
    Sigmoid(ValueId),
    Relu(ValueId),
    MeanAll(ValueId),
    ScatterMean {
        src: ValueId,
        index: Rc<Vec<usize>>,
        counts: Vec<usize>,
    },
    GatherRows {
        src: ValueId,
        index: Rc<Vec<usize>>,
    },
    RowL1(ValueId, ValueId),
    RotMul(ValueId, ValueId),
    RotMulTranspose(ValueId, ValueId),
    Orth6dToRot(ValueId),
    RotGeodesicDegRows(ValueId, ValueId),
}

struct Node {
    data: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

/// L1 subgradient with the 0 ↦ 0 convention (f64::signum maps ±0 to ±1).
fn l1_sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: participates in gradient accumulation.
    pub fn param(&mut self, data: Array2<f64>) -> ValueId {
        self.push(data, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, data: Array2<f64>) -> ValueId {
        self.push(data, Op::Leaf, false)
    }

    pub fn data(&self, id: ValueId) -> &Array2<f64> {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: ValueId) -> (usize, usize) {
        self.nodes[id.0].data.dim()
    }

    /// Gradient accumulated by the last `backward` call. Zero matrix when the
    /// value did not influence the loss.
    pub fn grad(&self, id: ValueId) -> Array2<f64> {
        match &self.grads.get(id.0) {
            Some(Some(g)) => g.clone(),
            _ => Array2::zeros(self.nodes[id.0].data.dim()),
        }
    }

    fn push(&mut self, data: Array2<f64>, op: Op, needs_grad: bool) -> ValueId {
        self.nodes.push(Node {
            data,
            op,
            needs_grad,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn derived(&mut self, data: Array2<f64>, op: Op, inputs: &[ValueId]) -> ValueId {
        let needs = inputs.iter().any(|&i| self.nodes[i.0].needs_grad);
        self.push(data, op, needs)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ca, rb, "matmul shape mismatch ({ra}x{ca})({rb}x{cb})");
        let mut out = Array2::zeros((ra, cb));
        general_mat_mul(1.0, &self.nodes[a.0].data, &self.nodes[b.0].data, 0.0, &mut out);
        self.derived(out, Op::MatMul(a, b), &[a, b])
    }

    fn assert_same_shape(&self, a: ValueId, b: ValueId, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what} shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.assert_same_shape(a, b, "add");
        let out = &self.nodes[a.0].data + &self.nodes[b.0].data;
        self.derived(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.assert_same_shape(a, b, "sub");
        let out = &self.nodes[a.0].data - &self.nodes[b.0].data;
        self.derived(out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.assert_same_shape(a, b, "mul");
        let out = &self.nodes[a.0].data * &self.nodes[b.0].data;
        self.derived(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let out = self.nodes[a.0].data.mapv(|x| k * x);
        self.derived(out, Op::Scale(a, k), &[a])
    }

    /// Adds a 1×d bias row to every row of an n×d matrix.
    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> ValueId {
        let (_, cx) = self.shape(x);
        let (rb, cb) = self.shape(bias);
        assert_eq!((rb, cb), (1, cx), "bias must be 1x{cx}, got {rb}x{cb}");
        let out = &self.nodes[x.0].data + &self.nodes[bias.0].data;
        self.derived(out, Op::AddBiasRow(x, bias), &[x, bias])
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> ValueId {
        assert!(!parts.is_empty(), "concat of zero parts");
        let rows = self.shape(parts[0]).0;
        for &p in parts {
            assert_eq!(self.shape(p).0, rows, "concat row mismatch");
        }
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p.0].data.view()).collect();
        let out = concatenate(Axis(1), &views).expect("concat");
        self.derived(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let out = self.nodes[a.0].data.mapv(f64::tanh);
        self.derived(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let out = self.nodes[a.0].data.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.derived(out, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let out = self.nodes[a.0].data.mapv(|x| x.max(0.0));
        self.derived(out, Op::Relu(a), &[a])
    }

    /// Mean over all entries, as a 1×1 value.
    pub fn mean_all(&mut self, a: ValueId) -> ValueId {
        let m = self.nodes[a.0].data.mean().expect("mean of empty value");
        let out = Array2::from_elem((1, 1), m);
        self.derived(out, Op::MeanAll(a), &[a])
    }

    /// Rowwise mean aggregation: output row t is the mean of source rows i
    /// with index[i] == t, or zero when no source maps to t. Summation runs
    /// in ascending source order.
    pub fn scatter_mean(&mut self, src: ValueId, index: &[usize], n_out: usize) -> ValueId {
        let (rows, cols) = self.shape(src);
        assert_eq!(index.len(), rows, "scatter index length mismatch");
        let mut counts = vec![0usize; n_out];
        for &t in index {
            assert!(t < n_out, "scatter target {t} out of range {n_out}");
            counts[t] += 1;
        }
        let mut out = Array2::zeros((n_out, cols));
        {
            let data = &self.nodes[src.0].data;
            for (i, &t) in index.iter().enumerate() {
                let mut row = out.row_mut(t);
                row += &data.row(i);
            }
            for t in 0..n_out {
                if counts[t] > 0 {
                    let mut row = out.row_mut(t);
                    row /= counts[t] as f64;
                }
            }
        }
        self.derived(
            out,
            Op::ScatterMean {
                src,
                index: Rc::new(index.to_vec()),
                counts,
            },
            &[src],
        )
    }

    /// Output row i is source row index[i].
    pub fn gather_rows(&mut self, src: ValueId, index: &[usize]) -> ValueId {
        let (rows, cols) = self.shape(src);
        let mut out = Array2::zeros((index.len(), cols));
        {
            let data = &self.nodes[src.0].data;
            for (i, &j) in index.iter().enumerate() {
                assert!(j < rows, "gather source {j} out of range {rows}");
                out.row_mut(i).assign(&data.row(j));
            }
        }
        self.derived(
            out,
            Op::GatherRows {
                src,
                index: Rc::new(index.to_vec()),
            },
            &[src],
        )
    }

    /// Rowwise L1 distance Σ_j |a_ij − b_ij| as an n×1 value. The subgradient
    /// of |·| at 0 is taken as 0.
    pub fn row_l1(&mut self, a: ValueId, b: ValueId) -> ValueId {
        self.assert_same_shape(a, b, "row_l1");
        let (rows, _) = self.shape(a);
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let mut out = Array2::zeros((rows, 1));
        for i in 0..rows {
            let mut acc = 0.0;
            for (x, y) in da.row(i).iter().zip(db.row(i)) {
                acc += (x - y).abs();
            }
            out[(i, 0)] = acc;
        }
        self.derived(out, Op::RowL1(a, b), &[a, b])
    }

    /// Mean over rows of the rowwise L1 distance, as a 1×1 value.
    pub fn l1_loss(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let rl = self.row_l1(a, b);
        self.mean_all(rl)
    }

    /// Per-row product of 3×3 matrices stored row-major in 9 columns.
    pub fn rot_mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let out = self.rot_mul_forward(a, b, false);
        self.derived(out, Op::RotMul(a, b), &[a, b])
    }

    /// Per-row product A·Bᵀ of 3×3 matrices stored row-major in 9 columns.
    pub fn rot_mul_transpose(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let out = self.rot_mul_forward(a, b, true);
        self.derived(out, Op::RotMulTranspose(a, b), &[a, b])
    }

    fn rot_mul_forward(&self, a: ValueId, b: ValueId, transpose_b: bool) -> Array2<f64> {
        let (rows, ca) = self.shape(a);
        assert_eq!(ca, 9, "rot_mul expects 9 columns");
        self.assert_same_shape(a, b, "rot_mul");
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let mut out = Array2::zeros((rows, 9));
        for i in 0..rows {
            let (x, y) = (da.row(i), db.row(i));
            for r in 0..3 {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        let ye = if transpose_b { y[3 * c + k] } else { y[3 * k + c] };
                        acc += x[3 * r + k] * ye;
                    }
                    out[(i, 3 * r + c)] = acc;
                }
            }
        }
        out
    }

    /// Per-row Gram-Schmidt lift of a 6-column value to a 9-column rotation
    /// (row-major; the two 3-vectors become the first two matrix columns).
    /// Degenerate rows (zero or parallel vectors) produce non-finite output,
    /// which callers detect downstream.
    pub fn orth6d_to_rot(&mut self, src: ValueId) -> ValueId {
        let (rows, cols) = self.shape(src);
        assert_eq!(cols, 6, "orth6d expects 6 columns");
        let data = &self.nodes[src.0].data;
        let mut out = Array2::zeros((rows, 9));
        for i in 0..rows {
            let s = data.row(i);
            let r = orth6d_row_forward([s[0], s[1], s[2], s[3], s[4], s[5]]);
            for (j, v) in r.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        self.derived(out, Op::Orth6dToRot(src), &[src])
    }

    /// Per-row geodesic angle in degrees between 3×3 rotations stored
    /// row-major in 9 columns, as an n×1 value. The angle is recovered with
    /// atan2 from the skew and trace parts of AᵀB, which stays well behaved
    /// near 0 and π. Rows with coincident inputs get a zero gradient.
    pub fn rot_geodesic_deg(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (rows, ca) = self.shape(a);
        assert_eq!(ca, 9, "rot_geodesic_deg expects 9 columns");
        self.assert_same_shape(a, b, "rot_geodesic_deg");
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let mut out = Array2::zeros((rows, 1));
        for i in 0..rows {
            let q = qmat(da.row(i), db.row(i));
            let (s, c) = skew_trace(&q);
            out[(i, 0)] = s.atan2(c).to_degrees();
        }
        self.derived(out, Op::RotGeodesicDegRows(a, b), &[a, b])
    }

    fn accum(&mut self, target: usize, delta: &Array2<f64>) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let slot = &mut self.grads[target];
        match slot {
            Some(g) => *g += delta,
            None => *slot = Some(delta.clone()),
        }
    }

    /// Reverse pass from a 1×1 loss. Gradients of earlier calls are dropped.
    pub fn backward(&mut self, loss: ValueId) {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn backprop_node(&mut self, i: usize, g: &Array2<f64>) {
        // Ops reference strictly earlier tape entries, so moving the op out
        // briefly is safe; Leaf is a placeholder with no inputs.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (da, db);
                {
                    let am = &self.nodes[a.0].data;
                    let bm = &self.nodes[b.0].data;
                    let mut ga = Array2::zeros(am.dim());
                    general_mat_mul(1.0, g, &bm.t(), 0.0, &mut ga);
                    let mut gb = Array2::zeros(bm.dim());
                    general_mat_mul(1.0, &am.t(), g, 0.0, &mut gb);
                    (da, db) = (ga, gb);
                }
                self.accum(a.0, &da);
                self.accum(b.0, &db);
            }
            Op::Add(a, b) => {
                self.accum(a.0, g);
                self.accum(b.0, g);
            }
            Op::Sub(a, b) => {
                self.accum(a.0, g);
                let neg = g.mapv(|x| -x);
                self.accum(b.0, &neg);
            }
            Op::Mul(a, b) => {
                let da = g * &self.nodes[b.0].data;
                let db = g * &self.nodes[a.0].data;
                self.accum(a.0, &da);
                self.accum(b.0, &db);
            }
            Op::Scale(a, k) => {
                let da = g.mapv(|x| k * x);
                self.accum(a.0, &da);
            }
            Op::AddBiasRow(x, bias) => {
                self.accum(x.0, g);
                let db = g
                    .sum_axis(Axis(0))
                    .insert_axis(Axis(0));
                self.accum(bias.0, &db);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    let slice = g.slice(s![.., offset..offset + w]).to_owned();
                    self.accum(p.0, &slice);
                    offset += w;
                }
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].data;
                let da = g * &y.mapv(|t| 1.0 - t * t);
                self.accum(a.0, &da);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].data;
                let da = g * &y.mapv(|t| t * (1.0 - t));
                self.accum(a.0, &da);
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].data;
                let da = g * &x.mapv(|t| if t > 0.0 { 1.0 } else { 0.0 });
                self.accum(a.0, &da);
            }
            Op::MeanAll(a) => {
                let (r, c) = self.shape(*a);
                let da = Array2::from_elem((r, c), g[(0, 0)] / (r * c) as f64);
                self.accum(a.0, &da);
            }
            Op::ScatterMean { src, index, counts } => {
                let (rows, cols) = self.shape(*src);
                let mut da = Array2::zeros((rows, cols));
                for (i_src, &t) in index.iter().enumerate() {
                    let scale = 1.0 / counts[t] as f64;
                    let grow = g.row(t);
                    let mut drow = da.row_mut(i_src);
                    for (dv, gv) in drow.iter_mut().zip(grow) {
                        *dv += scale * gv;
                    }
                }
                self.accum(src.0, &da);
            }
            Op::GatherRows { src, index } => {
                let (rows, cols) = self.shape(*src);
                let mut da = Array2::zeros((rows, cols));
                for (i_out, &j) in index.iter().enumerate() {
                    let grow = g.row(i_out);
                    let mut drow = da.row_mut(j);
                    for (dv, gv) in drow.iter_mut().zip(grow) {
                        *dv += gv;
                    }
                }
                self.accum(src.0, &da);
            }
            Op::RowL1(a, b) => {
                let da_mat;
                {
                    let am = &self.nodes[a.0].data;
                    let bm = &self.nodes[b.0].data;
                    let mut da = Array2::zeros(am.dim());
                    for r in 0..am.nrows() {
                        let gr = g[(r, 0)];
                        for c in 0..am.ncols() {
                            da[(r, c)] = l1_sign(am[(r, c)] - bm[(r, c)]) * gr;
                        }
                    }
                    da_mat = da;
                }
                self.accum(a.0, &da_mat);
                let db = da_mat.mapv(|x| -x);
                self.accum(b.0, &db);
            }
            Op::RotMul(a, b) => {
                // C_i = A_i B_i: dA_i += G_i B_iᵀ, dB_i += A_iᵀ G_i.
                let (da, db) = self.rot_mul_backward(*a, *b, g, false);
                self.accum(a.0, &da);
                self.accum(b.0, &db);
            }
            Op::RotMulTranspose(a, b) => {
                // C_i = A_i B_iᵀ: dA_i += G_i B_i, dB_i += G_iᵀ A_i.
                let (da, db) = self.rot_mul_backward(*a, *b, g, true);
                self.accum(a.0, &da);
                self.accum(b.0, &db);
            }
            Op::Orth6dToRot(src) => {
                let da_mat;
                {
                    let sm = &self.nodes[src.0].data;
                    let mut da = Array2::zeros(sm.dim());
                    for r in 0..sm.nrows() {
                        let srow = sm.row(r);
                        let grow = g.row(r);
                        let mut g9 = [0.0; 9];
                        for (j, v) in grow.iter().enumerate() {
                            g9[j] = *v;
                        }
                        let ds = orth6d_row_backward(
                            [srow[0], srow[1], srow[2], srow[3], srow[4], srow[5]],
                            g9,
                        );
                        for (j, v) in ds.into_iter().enumerate() {
                            da[(r, j)] = v;
                        }
                    }
                    da_mat = da;
                }
                self.accum(src.0, &da_mat);
            }
            Op::RotGeodesicDegRows(a, b) => {
                let (da_mat, db_mat);
                {
                    let am = &self.nodes[a.0].data;
                    let bm = &self.nodes[b.0].data;
                    let rows = am.nrows();
                    let mut da = Array2::zeros((rows, 9));
                    let mut db = Array2::zeros((rows, 9));
                    for i in 0..rows {
                        let (x, y) = (am.row(i), bm.row(i));
                        let q = qmat(x, y);
                        let (s, c) = skew_trace(&q);
                        if s < 1e-12 {
                            continue;
                        }
                        // θ = atan2(s, c), s = ‖vee(Q)‖, c = (tr Q − 1)/2.
                        let k = g[(i, 0)] * 180.0 / std::f64::consts::PI;
                        let ds = k * c / (s * s + c * c);
                        let dc = -k * s / (s * s + c * c);
                        let v = [
                            0.5 * (q[2][1] - q[1][2]) / s,
                            0.5 * (q[0][2] - q[2][0]) / s,
                            0.5 * (q[1][0] - q[0][1]) / s,
                        ];
                        let mut gq = [[0.0; 3]; 3];
                        for d in 0..3 {
                            gq[d][d] = 0.5 * dc;
                        }
                        gq[2][1] += 0.5 * ds * v[0];
                        gq[1][2] -= 0.5 * ds * v[0];
                        gq[0][2] += 0.5 * ds * v[1];
                        gq[2][0] -= 0.5 * ds * v[1];
                        gq[1][0] += 0.5 * ds * v[2];
                        gq[0][1] -= 0.5 * ds * v[2];
                        // Q = AᵀB: dA = B Gqᵀ, dB = A Gq.
                        for r in 0..3 {
                            for cc in 0..3 {
                                for t in 0..3 {
                                    da[(i, 3 * r + cc)] += y[3 * r + t] * gq[cc][t];
                                    db[(i, 3 * r + cc)] += x[3 * r + t] * gq[t][cc];
                                }
                            }
                        }
                    }
                    da_mat = da;
                    db_mat = db;
                }
                self.accum(a.0, &da_mat);
                self.accum(b.0, &db_mat);
            }
        }
        self.nodes[i].op = op;
    }

    fn rot_mul_backward(
        &self,
        a: ValueId,
        b: ValueId,
        g: &Array2<f64>,
        transpose_b: bool,
    ) -> (Array2<f64>, Array2<f64>) {
        let am = &self.nodes[a.0].data;
        let bm = &self.nodes[b.0].data;
        let rows = am.nrows();
        let mut da = Array2::zeros((rows, 9));
        let mut db = Array2::zeros((rows, 9));
        for i in 0..rows {
            let (x, y, gr) = (am.row(i), bm.row(i), g.row(i));
            for r in 0..3 {
                for c in 0..3 {
                    for k in 0..3 {
                        if transpose_b {
                            // d a[r,k] += g[r,c] b[c,k]; d b[c,k] += g[r,c] a[r,k]
                            da[(i, 3 * r + k)] += gr[3 * r + c] * y[3 * c + k];
                            db[(i, 3 * c + k)] += gr[3 * r + c] * x[3 * r + k];
                        } else {
                            // d a[r,k] += g[r,c] b[k,c]; d b[k,c] += a[r,k] g[r,c]
                            da[(i, 3 * r + k)] += gr[3 * r + c] * y[3 * k + c];
                            db[(i, 3 * k + c)] += x[3 * r + k] * gr[3 * r + c];
                        }
                    }
                }
            }
        }
        (da, db)
    }
}

type V3 = nalgebra::Vector3<f64>;

/// Q = AᵀB for two row-major 9-column rows.
fn qmat(x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>) -> [[f64; 3]; 3] {
    let mut q = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                q[r][c] += x[3 * k + r] * y[3 * k + c];
            }
        }
    }
    q
}

/// Norm of the vee of the skew part, and (tr − 1)/2.
fn skew_trace(q: &[[f64; 3]; 3]) -> (f64, f64) {
    let sx = 0.5 * (q[2][1] - q[1][2]);
    let sy = 0.5 * (q[0][2] - q[2][0]);
    let sz = 0.5 * (q[1][0] - q[0][1]);
    let s = (sx * sx + sy * sy + sz * sz).sqrt();
    let c = 0.5 * (q[0][0] + q[1][1] + q[2][2] - 1.0);
    (s, c)
}

/// Gram-Schmidt lift of (a, b) to a rotation, row-major output with the
/// orthonormalized vectors as matrix columns. Matches the scalar rotation
/// math used elsewhere in the crate.
fn orth6d_row_forward(s: [f64; 6]) -> [f64; 9] {
    let a = V3::new(s[0], s[1], s[2]);
    let b = V3::new(s[3], s[4], s[5]);
    let c1 = a / a.norm();
    let w = b - c1.dot(&b) * c1;
    let c2 = w / w.norm();
    let c3 = c1.cross(&c2);
    [
        c1.x, c2.x, c3.x, //
        c1.y, c2.y, c3.y, //
        c1.z, c2.z, c3.z,
    ]
}

/// Adjoint of `orth6d_row_forward`: pulls a gradient on the 9 output entries
/// back to the 6 inputs through the cross product, both normalizations, and
/// the projection.
fn orth6d_row_backward(s: [f64; 6], g: [f64; 9]) -> [f64; 6] {
    let a = V3::new(s[0], s[1], s[2]);
    let b = V3::new(s[3], s[4], s[5]);
    let na = a.norm();
    let c1 = a / na;
    let w = b - c1.dot(&b) * c1;
    let nw = w.norm();
    let c2 = w / nw;

    let g1 = V3::new(g[0], g[3], g[6]);
    let g2 = V3::new(g[1], g[4], g[7]);
    let g3 = V3::new(g[2], g[5], g[8]);

    // c3 = c1 × c2.
    let g1 = g1 + c2.cross(&g3);
    let g2 = g2 + g3.cross(&c1);
    // c2 = w/|w|: project out the radial component.
    let gw = (g2 - c2.dot(&g2) * c2) / nw;
    // w = b − (c1·b)c1.
    let gb = gw - c1.dot(&gw) * c1;
    let g1 = g1 - c1.dot(&b) * gw - c1.dot(&gw) * b;
    // c1 = a/|a|.
    let ga = (g1 - c1.dot(&g1) * c1) / na;

    [ga.x, ga.y, ga.z, gb.x, gb.y, gb.z]
}
