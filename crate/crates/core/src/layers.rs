//! GCN, GAT and GraphSage step layers. Each is applied to one metapath hop
//! and keeps the full `V × d` node layout: every node has a self-edge, so
//! nodes that are not targets of the hop still get a representation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::par::ExecMode;
use crate::sparse::{CsrMatrix, SparseOperator};

/// Negative slope of the LeakyReLU inside GAT scoring.
pub const GAT_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Gat,
    Sage,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Gcn => "gcn",
            LayerKind::Gat => "gat",
            LayerKind::Sage => "sage",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gcn" => Ok(LayerKind::Gcn),
            "gat" => Ok(LayerKind::Gat),
            "sage" | "graphsage" => Ok(LayerKind::Sage),
            other => Err(Error::Config(format!(
                "unknown layer kind {other:?} (expected gcn, gat or sage)"
            ))),
        }
    }
}

/// Weights of one (metapath, hop) layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T: Scalar = f32> {
    pub kind: LayerKind,
    /// `d_in × d_out` neighbour transform.
    pub w: Tensor<T>,
    /// `d_in × d_out` self transform (Sage).
    pub w_self: Option<Tensor<T>>,
    /// `2·d_out × 1` attention vector (GAT); the first half scores the
    /// target, the second half the source.
    pub attn: Option<Tensor<T>>,
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

impl<T: Scalar> LayerParams<T> {
    pub fn init<R: Rng + ?Sized>(kind: LayerKind, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = xavier_uniform(d_in, d_out, rng);
        let w_self = (kind == LayerKind::Sage).then(|| xavier_uniform(d_in, d_out, rng));
        let attn = (kind == LayerKind::Gat).then(|| xavier_uniform(2 * d_out, 1, rng));
        LayerParams {
            kind,
            w,
            w_self,
            attn,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.rows()
    }

    pub fn cast<U: Scalar>(&self) -> LayerParams<U> {
        LayerParams {
            kind: self.kind,
            w: self.w.cast(),
            w_self: self.w_self.as_ref().map(Tensor::cast),
            attn: self.attn.as_ref().map(Tensor::cast),
        }
    }

    pub fn d_out(&self) -> usize {
        self.w.cols()
    }

    /// Parameter tensors in a fixed order: `w`, then `w_self` or `attn`.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.w];
        v.extend(self.w_self.iter());
        v.extend(self.attn.iter());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.w];
        v.extend(self.w_self.iter_mut());
        v.extend(self.attn.iter_mut());
        v
    }

    /// Records the weights as trainable leaves.
    pub fn register(&self, tape: &mut Tape<T>) -> LayerVars {
        LayerVars {
            kind: self.kind,
            w: tape.param(self.w.clone()),
            w_self: self.w_self.as_ref().map(|t| tape.param(t.clone())),
            attn: self.attn.as_ref().map(|t| tape.param(t.clone())),
        }
    }

    fn check(&self) -> Result<()> {
        let shape_ok = |t: &Option<Tensor<T>>, want: bool| t.is_some() == want;
        if !shape_ok(&self.w_self, self.kind == LayerKind::Sage)
            || !shape_ok(&self.attn, self.kind == LayerKind::Gat)
        {
            return Err(Error::Contract(format!(
                "{} layer has the wrong parameter set",
                self.kind
            )));
        }
        if let Some(ws) = &self.w_self {
            if ws.shape() != self.w.shape() {
                return Err(Error::dims("sage w_self", ws.shape(), self.w.shape()));
            }
        }
        if let Some(a) = &self.attn {
            if a.shape() != [2 * self.d_out(), 1] {
                return Err(Error::dims("gat attn", a.shape(), &[2 * self.d_out(), 1]));
            }
        }
        Ok(())
    }
}

/// Tape handles of one layer's weights.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub kind: LayerKind,
    pub w: Var,
    pub w_self: Option<Var>,
    pub attn: Option<Var>,
}

impl LayerVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.w];
        v.extend(self.w_self);
        v.extend(self.attn);
        v
    }
}

/// A hop adjacency preprocessed for one layer kind: `rownorm(A + I)` for
/// GCN, the pattern of `A + I` for GAT and `rownorm(A)` for Sage.
#[derive(Clone, Debug)]
pub struct PreparedStep {
    pub kind: LayerKind,
    op: Option<Arc<SparseOperator>>,
    pattern: Option<Arc<CsrMatrix>>,
}

impl PreparedStep {
    pub fn new(kind: LayerKind, a: &CsrMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::dims(
                "step adjacency",
                &[a.n_rows(), a.n_cols()],
                &[a.n_rows(), a.n_rows()],
            ));
        }
        Ok(match kind {
            LayerKind::Gcn => PreparedStep {
                kind,
                op: Some(Arc::new(SparseOperator::new(
                    a.pattern().with_identity()?.pattern().row_normalize()?,
                ))),
                pattern: None,
            },
            LayerKind::Gat => PreparedStep {
                kind,
                op: None,
                pattern: Some(Arc::new(a.pattern().with_identity()?.pattern())),
            },
            LayerKind::Sage => PreparedStep {
                kind,
                op: Some(Arc::new(SparseOperator::new(a.pattern().row_normalize()?))),
                pattern: None,
            },
        })
    }

    pub fn num_nodes(&self) -> usize {
        match (&self.op, &self.pattern) {
            (Some(op), _) => op.matrix().n_rows(),
            (None, Some(p)) => p.n_rows(),
            (None, None) => unreachable!("constructed with one of the two"),
        }
    }
}

/// One layer application on the tape: `x` is `V × d_in`, the result
/// `V × d_out` after ReLU.
pub fn apply_layer<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    step: &PreparedStep,
    p: &LayerVars,
) -> Result<Var> {
    if step.kind != p.kind {
        return Err(Error::Contract(format!(
            "{} adjacency used with a {} layer",
            step.kind, p.kind
        )));
    }
    let z = tape.matmul(x, p.w)?;
    let pre = match p.kind {
        LayerKind::Gcn => tape.spmm(step.op.as_ref().expect("gcn operator"), z)?,
        LayerKind::Sage => {
            let neigh = tape.spmm(step.op.as_ref().expect("sage operator"), z)?;
            let w_self = p
                .w_self
                .ok_or_else(|| Error::Contract("sage layer without w_self".into()))?;
            let own = tape.matmul(x, w_self)?;
            tape.add(own, neigh)?
        }
        LayerKind::Gat => {
            let attn = p
                .attn
                .ok_or_else(|| Error::Contract("gat layer without attn".into()))?;
            let d = tape.value(z).cols();
            let a_dst = tape.slice_rows(attn, 0, d)?;
            let a_src = tape.slice_rows(attn, d, 2 * d)?;
            let s_dst = tape.matmul(z, a_dst)?;
            let s_src = tape.matmul(z, a_src)?;
            let pattern = step.pattern.as_ref().expect("gat pattern");
            tape.gat_aggregate(pattern, z, s_dst, s_src, GAT_SLOPE)?
        }
    };
    Ok(tape.relu(pre))
}

fn step_eager<T: Scalar>(
    kind: LayerKind,
    x: &Tensor<T>,
    a: &CsrMatrix,
    p: &LayerParams<T>,
) -> Result<Tensor<T>> {
    if p.kind != kind {
        return Err(Error::Contract(format!(
            "expected {kind} parameters, got {}",
            p.kind
        )));
    }
    p.check()?;
    let (n, d_in) = x.matrix_dims("layer input")?;
    if d_in != p.d_in() || a.n_rows() != n {
        return Err(Error::dims("layer", x.shape(), &[a.n_rows(), p.d_in()]));
    }
    let step = PreparedStep::new(kind, a)?;
    let mut tape = Tape::with_mode(ExecMode::Auto);
    let xv = tape.constant(x.clone());
    let pv = p.register(&mut tape);
    let out = apply_layer(&mut tape, xv, &step, &pv)?;
    Ok(tape.value(out).clone())
}

/// `ReLU(rownorm(A + I) · X · W)`.
pub fn gcn_step<T: Scalar>(x: &Tensor<T>, a: &CsrMatrix, p: &LayerParams<T>) -> Result<Tensor<T>> {
    step_eager(LayerKind::Gcn, x, a, p)
}

/// Single-head attention over each target's in-neighbours plus itself.
pub fn gat_step<T: Scalar>(x: &Tensor<T>, a: &CsrMatrix, p: &LayerParams<T>) -> Result<Tensor<T>> {
    step_eager(LayerKind::Gat, x, a, p)
}

/// `ReLU(X · W_self + rownorm(A) · X · W)`; nodes without in-neighbours get
/// only the self term.
pub fn sage_step<T: Scalar>(x: &Tensor<T>, a: &CsrMatrix, p: &LayerParams<T>) -> Result<Tensor<T>> {
    step_eager(LayerKind::Sage, x, a, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eye(n: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    fn params(kind: LayerKind, w: Tensor<f64>) -> LayerParams<f64> {
        let d = w.cols();
        LayerParams {
            kind,
            w_self: (kind == LayerKind::Sage).then(|| Tensor::zeros(w.shape().to_vec())),
            attn: (kind == LayerKind::Gat).then(|| Tensor::zeros(vec![2 * d, 1])),
            w,
        }
    }

    #[test]
    fn gcn_identity_passthrough() {
        let x = Tensor::new(vec![3, 2], vec![1.0, 2.0, 0.5, 0.0, 3.0, 1.0]).unwrap();
        let out = gcn_step(&x, &CsrMatrix::zeros(3, 3), &params(LayerKind::Gcn, eye(2))).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn gcn_single_edge_averages_self_and_neighbour() {
        let x = Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        // edge 0 -> 1: row 1 (target), column 0 (source)
        let a = CsrMatrix::from_edges(2, 2, [(1, 0, 1.0)]).unwrap();
        let out = gcn_step(&x, &a, &params(LayerKind::Gcn, eye(2))).unwrap();
        assert_eq!(out.row(1), &[1.0, 0.0]);
        assert_eq!(out.row(0), &[2.0, 0.0]);
    }

    #[test]
    fn gat_with_zero_attention_is_a_mean() {
        let x = Tensor::new(vec![3, 2], vec![3.0, 0.0, 0.0, 6.0, 0.0, 0.0]).unwrap();
        let a = CsrMatrix::from_edges(3, 3, [(2, 0, 1.0), (2, 1, 1.0)]).unwrap();
        let out = gat_step(&x, &a, &params(LayerKind::Gat, eye(2))).unwrap();
        let r = out.row(2);
        assert!(
            (r[0] - 1.0).abs() < 1e-12 && (r[1] - 2.0).abs() < 1e-12,
            "{r:?}"
        );
        // no in-edges: attends to itself only
        assert_eq!(out.row(0), &[3.0, 0.0]);
    }

    #[test]
    fn gat_attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: LayerParams<f64> = LayerParams::init(LayerKind::Gat, 4, 3, &mut rng);
        let x = xavier_uniform::<f64, _>(6, 4, &mut rng);
        let a = CsrMatrix::from_edges(6, 6, [(0, 1, 1.0), (0, 2, 1.0), (3, 4, 1.0), (5, 0, 1.0)])
            .unwrap();
        let step = PreparedStep::new(LayerKind::Gat, &a).unwrap();
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x);
        let pv = p.register(&mut tape);
        let out = apply_layer(&mut tape, xv, &step, &pv).unwrap();
        // the aggregation node precedes the final ReLU
        let agg = Var::from_index(out.index() - 1);
        let alpha = tape.gat_attention(agg).unwrap();
        let pat = a.pattern().with_identity().unwrap();
        for r in 0..6 {
            let (lo, hi) = (pat.row_ptr()[r], pat.row_ptr()[r + 1]);
            let s: f64 = alpha[lo..hi].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sage_rules() {
        let x = Tensor::new(
            vec![4, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 5.0, 5.0, 5.0],
        )
        .unwrap();
        let a = CsrMatrix::from_edges(4, 4, [(3, 0, 1.0), (3, 1, 1.0), (3, 2, 1.0)]).unwrap();
        let out = sage_step(&x, &a, &params(LayerKind::Sage, eye(3))).unwrap();
        // normalized weights are stored in f32
        for v in out.row(3) {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        // empty neighbourhood and zero self weight
        assert_eq!(out.row(0), &[0.0, 0.0, 0.0]);

        let mut p = params(LayerKind::Sage, eye(3));
        p.w_self = Some(eye(3));
        let only_self = sage_step(&x, &CsrMatrix::zeros(4, 4), &p).unwrap();
        assert_eq!(only_self, x);

        let one = CsrMatrix::from_edges(4, 4, [(0, 3, 1.0)]).unwrap();
        let out = sage_step(&x, &one, &params(LayerKind::Sage, eye(3))).unwrap();
        assert_eq!(out.row(0), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn wrong_kind_or_shape_is_rejected() {
        let x = Tensor::<f64>::zeros(vec![2, 2]);
        let a = CsrMatrix::zeros(2, 2);
        assert!(gcn_step(&x, &a, &params(LayerKind::Sage, eye(2))).is_err());
        assert!(gcn_step(&x, &CsrMatrix::zeros(3, 3), &params(LayerKind::Gcn, eye(2))).is_err());
        assert!(gcn_step(&x, &a, &params(LayerKind::Gcn, eye(3))).is_err());
        assert!("gin".parse::<LayerKind>().is_err());
        assert_eq!("GraphSage".parse::<LayerKind>().unwrap(), LayerKind::Sage);
    }
}
