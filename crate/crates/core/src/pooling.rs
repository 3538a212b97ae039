//! Sequence pooling operators `ℝ^{n×d} → ℝ^d`.
//!
//! Four fixed operators (average, sum, max, last token) and two learnable
//! ones (weighted average over positions, attention against one latent
//! query). The fixed operators that are linear in `Z` can be written as a
//! `1 × n` matrix acting on the rows; their operator norms are the scale
//! factors returned by [`pooling_factor`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{softmax, spectral_norm, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolingSpec {
    Avg,
    Sum,
    Max,
    Last,
    WeightedAvg,
    Attention,
}

impl PoolingSpec {
    pub const ALL: [PoolingSpec; 6] = [
        PoolingSpec::Avg,
        PoolingSpec::Sum,
        PoolingSpec::Max,
        PoolingSpec::Last,
        PoolingSpec::WeightedAvg,
        PoolingSpec::Attention,
    ];

    /// The four operators with closed-form scale factors.
    pub const FIXED: [PoolingSpec; 4] = [PoolingSpec::Avg, PoolingSpec::Sum, PoolingSpec::Max, PoolingSpec::Last];

    pub fn is_learnable(self) -> bool {
        matches!(self, PoolingSpec::WeightedAvg | PoolingSpec::Attention)
    }

    pub fn name(self) -> &'static str {
        match self {
            PoolingSpec::Avg => "avg",
            PoolingSpec::Sum => "sum",
            PoolingSpec::Max => "max",
            PoolingSpec::Last => "last",
            PoolingSpec::WeightedAvg => "weighted-avg",
            PoolingSpec::Attention => "attention",
        }
    }
}

impl fmt::Display for PoolingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PoolingSpec::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .or(match s {
                "mean" => Some(PoolingSpec::Avg),
                "wavg" => Some(PoolingSpec::WeightedAvg),
                "attn" => Some(PoolingSpec::Attention),
                _ => None,
            })
            .ok_or_else(|| Error::config("pooling", format!("unknown pooling {s:?}")))
    }
}

/// Learnable pooling parameters. Also used to carry gradients of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolParams {
    /// Fixed operators take no parameters.
    None,
    /// One logit per position; weights are `softmax(logits)`.
    WeightedAvg { logits: Vector },
    /// Latent query `q ∈ ℝ^d`; weights are `softmax(Z q / √d)`.
    Attention { query: Vector },
}

impl PoolParams {
    /// Uniform weighted average over `n` positions.
    pub fn uniform_weights(n: usize) -> Self {
        PoolParams::WeightedAvg {
            logits: Vector::zeros(n),
        }
    }

    /// Zero latent query, which attends uniformly.
    pub fn zero_query(d: usize) -> Self {
        PoolParams::Attention {
            query: Vector::zeros(d),
        }
    }

    /// Default initial parameters for `spec` on `n × d` inputs.
    pub fn init(spec: PoolingSpec, n: usize, d: usize) -> Self {
        match spec {
            PoolingSpec::WeightedAvg => PoolParams::uniform_weights(n),
            PoolingSpec::Attention => PoolParams::zero_query(d),
            _ => PoolParams::None,
        }
    }

    /// The flat parameter vector (empty for [`PoolParams::None`]).
    pub fn as_slice(&self) -> &[f64] {
        match self {
            PoolParams::None => &[],
            PoolParams::WeightedAvg { logits } => logits,
            PoolParams::Attention { query } => query,
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        match self {
            PoolParams::None => &mut [],
            PoolParams::WeightedAvg { logits } => &mut logits.0,
            PoolParams::Attention { query } => &mut query.0,
        }
    }

    /// Position weights of a weighted average, `softmax(logits)`.
    pub fn position_weights(&self) -> Option<Vector> {
        match self {
            PoolParams::WeightedAvg { logits } => Some(softmax(logits)),
            _ => None,
        }
    }
}

/// Checks that `params` fits `spec` on an `n × d` input.
fn check_params(spec: PoolingSpec, params: &PoolParams, n: usize, d: usize) -> Result<()> {
    match (spec, params) {
        (PoolingSpec::WeightedAvg, PoolParams::WeightedAvg { logits }) => {
            if logits.dim() != n {
                return Err(Error::config(
                    "pooling.logits",
                    format!("weighted average has {} logits for {n} positions", logits.dim()),
                ));
            }
        }
        (PoolingSpec::Attention, PoolParams::Attention { query }) => {
            if query.dim() != d {
                return Err(Error::config(
                    "pooling.query",
                    format!("attention query has dimension {}, expected {d}", query.dim()),
                ));
            }
        }
        (PoolingSpec::Avg | PoolingSpec::Sum | PoolingSpec::Max | PoolingSpec::Last, PoolParams::None) => {}
        (spec, _) => {
            return Err(Error::config(
                "pooling",
                format!("parameters do not match pooling kind {spec}"),
            ));
        }
    }
    Ok(())
}

/// Attention weights `softmax(Z q / √d)`.
fn attention_weights(z: &Matrix, query: &[f64]) -> Vector {
    let scale = 1.0 / (z.cols() as f64).sqrt();
    let logits: Vec<f64> = z.matvec(query).iter().map(|s| s * scale).collect();
    softmax(&logits)
}

/// Pools the rows of `z` into one `d`-vector.
pub fn pool(z: &Matrix, spec: PoolingSpec, params: &PoolParams) -> Result<Vector> {
    let (n, d) = z.shape();
    check_params(spec, params, n, d)?;
    Ok(match (spec, params) {
        (PoolingSpec::Avg, _) => z.column_means(),
        (PoolingSpec::Sum, _) => z.column_sums(),
        (PoolingSpec::Max, _) => {
            let mut out = z.row(0).to_vec();
            for i in 1..n {
                for (o, &v) in out.iter_mut().zip(z.row(i)) {
                    *o = o.max(v);
                }
            }
            Vector(out)
        }
        (PoolingSpec::Last, _) => Vector(z.row(n - 1).to_vec()),
        (PoolingSpec::WeightedAvg, PoolParams::WeightedAvg { logits }) => z.t_matvec(&softmax(logits)),
        (PoolingSpec::Attention, PoolParams::Attention { query }) => z.t_matvec(&attention_weights(z, query)),
        _ => unreachable!("checked above"),
    })
}

/// Scale factor the operator contributes to the perturbation bound:
/// `1/√n` (avg), `√n` (sum), `1` (last), `√min(n, d)` (max).
pub fn pooling_factor(spec: PoolingSpec, n: usize, d: usize) -> Result<f64> {
    if n == 0 || d == 0 {
        return Err(Error::Domain("pooling factor needs n, d >= 1".into()));
    }
    match spec {
        PoolingSpec::Avg => Ok(1.0 / (n as f64).sqrt()),
        PoolingSpec::Sum => Ok((n as f64).sqrt()),
        PoolingSpec::Last => Ok(1.0),
        PoolingSpec::Max => Ok((n.min(d) as f64).sqrt()),
        learnable => Err(Error::Unsupported(format!(
            "no closed-form scale factor for learnable pooling {learnable}"
        ))),
    }
}

/// Explicit `1 × n` matrix of a linear pooling operator.
pub fn pooling_matrix(spec: PoolingSpec, n: usize) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::Domain("pooling matrix needs n >= 1".into()));
    }
    let row: Vec<f64> = match spec {
        PoolingSpec::Avg => vec![1.0 / n as f64; n],
        PoolingSpec::Sum => vec![1.0; n],
        PoolingSpec::Last => (0..n).map(|i| if i == n - 1 { 1.0 } else { 0.0 }).collect(),
        other => {
            return Err(Error::Unsupported(format!("{other} pooling is not a fixed linear map")));
        }
    };
    Matrix::from_vec(1, n, row)
}

/// Spectral norm of the explicit pooling matrix.
pub fn pooling_matrix_norm_check(spec: PoolingSpec, n: usize) -> Result<f64> {
    spectral_norm(&pooling_matrix(spec, n)?)
}

/// Gradient of `⟨upstream, pool(z)⟩` with respect to the learnable
/// parameters, returned in the same shape as `params`.
pub fn pool_param_grad(z: &Matrix, spec: PoolingSpec, params: &PoolParams, upstream: &[f64]) -> Result<PoolParams> {
    let (n, d) = z.shape();
    if !spec.is_learnable() {
        return Err(Error::Unsupported(format!("{spec} pooling has no parameters")));
    }
    check_params(spec, params, n, d)?;
    if upstream.len() != d {
        return Err(Error::InvalidInput(format!(
            "upstream gradient has dimension {}, expected {d}",
            upstream.len()
        )));
    }
    // Per-position scores gᵢ = ⟨zᵢ, upstream⟩; the objective is Σ wᵢ gᵢ with
    // w = softmax(s), so ∂/∂s = w ⊙ (g − ⟨w, g⟩).
    let g = z.matvec(upstream);
    let softmax_pullback = |w: &Vector| -> Vec<f64> {
        let mean = w.dot(&g);
        w.iter().zip(g.iter()).map(|(wi, gi)| wi * (gi - mean)).collect()
    };
    match params {
        PoolParams::WeightedAvg { logits } => {
            let w = softmax(logits);
            Ok(PoolParams::WeightedAvg {
                logits: Vector(softmax_pullback(&w)),
            })
        }
        PoolParams::Attention { query } => {
            let w = attention_weights(z, query);
            let ds = softmax_pullback(&w);
            let scale = 1.0 / (d as f64).sqrt();
            Ok(PoolParams::Attention {
                query: z.t_matvec(&ds).scale(scale),
            })
        }
        PoolParams::None => unreachable!("checked above"),
    }
}
