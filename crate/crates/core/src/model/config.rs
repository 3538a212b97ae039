use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, Matrix, RngStream};

/// Attention mechanism used by every layer of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Scaled dot-product attention.
    DotProduct,
    /// L2-distance kernel attention with tied query/key projections.
    L2Tied,
    /// Scaled cosine-similarity attention applied within local windows.
    Scsa,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::DotProduct, Variant::L2Tied, Variant::Scsa];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DotProduct => "dot",
            Variant::L2Tied => "l2",
            Variant::Scsa => "scsa",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" | "dot-product" => Ok(Variant::DotProduct),
            "l2" | "l2-tied" => Ok(Variant::L2Tied),
            "scsa" => Ok(Variant::Scsa),
            other => Err(Error::config(
                "variant",
                format!("unknown variant {other:?} (expected dot, l2 or scsa)"),
            )),
        }
    }
}

/// Key projection of a head: either its own matrix or tied to the query.
#[derive(Debug, Clone, PartialEq)]
enum KeyProjection {
    Separate(Matrix),
    Tied,
}

/// Query, key and value projections of one head, each `d × d_head`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    w_q: Matrix,
    w_k: KeyProjection,
    w_v: Matrix,
}

impl HeadWeights {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Result<Self> {
        if w_q.shape() != w_k.shape() || w_q.shape() != w_v.shape() {
            return Err(Error::InvalidInput(format!(
                "head projections disagree in shape: q {:?}, k {:?}, v {:?}",
                w_q.shape(),
                w_k.shape(),
                w_v.shape()
            )));
        }
        Ok(HeadWeights {
            w_q,
            w_k: KeyProjection::Separate(w_k),
            w_v,
        })
    }

    /// A head whose key projection is the query projection itself.
    pub fn tied(w_q: Matrix, w_v: Matrix) -> Result<Self> {
        if w_q.shape() != w_v.shape() {
            return Err(Error::InvalidInput(format!(
                "head projections disagree in shape: q {:?}, v {:?}",
                w_q.shape(),
                w_v.shape()
            )));
        }
        Ok(HeadWeights {
            w_q,
            w_k: KeyProjection::Tied,
            w_v,
        })
    }

    pub fn zeros(d: usize, d_head: usize) -> Self {
        let z = Matrix::zeros(d, d_head);
        HeadWeights::new(z.clone(), z.clone(), z).expect("equal shapes")
    }

    pub fn w_q(&self) -> &Matrix {
        &self.w_q
    }

    pub fn w_k(&self) -> &Matrix {
        match &self.w_k {
            KeyProjection::Separate(m) => m,
            KeyProjection::Tied => &self.w_q,
        }
    }

    pub fn w_v(&self) -> &Matrix {
        &self.w_v
    }

    pub fn is_tied(&self) -> bool {
        matches!(self.w_k, KeyProjection::Tied)
    }

    /// Embedding dimension `d`.
    pub fn input_dim(&self) -> usize {
        self.w_q.rows()
    }

    /// Per-head dimension `d / H`.
    pub fn head_dim(&self) -> usize {
        self.w_q.cols()
    }

    fn is_finite(&self) -> bool {
        self.w_q.is_finite() && self.w_k().is_finite() && self.w_v.is_finite()
    }
}

/// All weights of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub heads: Vec<HeadWeights>,
    /// Output projection, `d × d`.
    pub w_o: Matrix,
    /// Feed-forward weight, `d × d`.
    pub w_ffn: Matrix,
}

impl LayerWeights {
    pub fn zeros(d: usize, num_heads: usize) -> Self {
        assert!(num_heads >= 1 && d.is_multiple_of(num_heads));
        let d_head = d / num_heads;
        LayerWeights {
            heads: (0..num_heads).map(|_| HeadWeights::zeros(d, d_head)).collect(),
            w_o: Matrix::zeros(d, d),
            w_ffn: Matrix::zeros(d, d),
        }
    }

    /// Gaussian weights with standard deviation `1/√d`. Key projections are
    /// tied to the query projections when `tied` is set.
    pub fn gaussian(d: usize, num_heads: usize, tied: bool, rng: &mut RngStream) -> Self {
        assert!(num_heads >= 1 && d.is_multiple_of(num_heads));
        let d_head = d / num_heads;
        let std = 1.0 / (d as f64).sqrt();
        let mut draw = |r, c| gaussian_matrix(r, c, rng).scale(std);
        let heads = (0..num_heads)
            .map(|_| {
                let w_q = draw(d, d_head);
                if tied {
                    let w_v = draw(d, d_head);
                    HeadWeights::tied(w_q, w_v).expect("equal shapes")
                } else {
                    let w_k = draw(d, d_head);
                    let w_v = draw(d, d_head);
                    HeadWeights::new(w_q, w_k, w_v).expect("equal shapes")
                }
            })
            .collect();
        let w_o = draw(d, d);
        let w_ffn = draw(d, d);
        LayerWeights { heads, w_o, w_ffn }
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }
}

/// Hyper-parameters of scaled cosine-similarity attention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScsaParams {
    /// Additive constant in the row-normalisation denominator.
    pub nabla: f64,
    /// Output scale.
    pub nu: f64,
    /// Softmax temperature.
    pub tau: f64,
    /// Window length in tokens.
    pub window: usize,
}

impl Default for ScsaParams {
    fn default() -> Self {
        ScsaParams {
            nabla: 1.0,
            nu: 1.0,
            tau: 1.0,
            window: 4,
        }
    }
}

impl ScsaParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("scsa.nabla", self.nabla), ("scsa.nu", self.nu), ("scsa.tau", self.tau)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be a positive finite number, got {v}")));
            }
        }
        if self.window < 2 {
            return Err(Error::config(
                "scsa.window",
                format!("must be at least 2, got {}", self.window),
            ));
        }
        Ok(())
    }
}

/// A fully specified model: shape, input bound, attention variant and the
/// weights of every layer. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    n: usize,
    d: usize,
    num_heads: usize,
    bound: f64,
    variant: Variant,
    layers: Vec<LayerWeights>,
    scsa: Option<ScsaParams>,
}

impl ModelConfig {
    /// Validates and assembles a model.
    ///
    /// `bound` is the per-row ℓ2 bound on inputs used by the bound formulas.
    pub fn new(
        n: usize,
        d: usize,
        num_heads: usize,
        bound: f64,
        variant: Variant,
        layers: Vec<LayerWeights>,
        scsa: Option<ScsaParams>,
    ) -> Result<Self> {
        if n < 1 {
            return Err(Error::config("n", "token count must be at least 1"));
        }
        if d < 2 {
            return Err(Error::config(
                "d",
                format!("embedding dimension must be at least 2, got {d}"),
            ));
        }
        if num_heads < 1 || !d.is_multiple_of(num_heads) {
            return Err(Error::config(
                "heads",
                format!("head count {num_heads} must be positive and divide d = {d}"),
            ));
        }
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::config(
                "bound",
                format!("must be positive and finite, got {bound}"),
            ));
        }
        if layers.is_empty() {
            return Err(Error::config("layers", "at least one layer is required"));
        }
        let d_head = d / num_heads;
        for (l, layer) in layers.iter().enumerate() {
            if layer.heads.len() != num_heads {
                return Err(Error::config(
                    "heads",
                    format!("layer {l} has {} heads, expected {num_heads}", layer.heads.len()),
                ));
            }
            for (h, head) in layer.heads.iter().enumerate() {
                if head.w_q().shape() != (d, d_head) {
                    return Err(Error::config(
                        "layers",
                        format!(
                            "layer {l} head {h} projections are {:?}, expected ({d}, {d_head})",
                            head.w_q().shape()
                        ),
                    ));
                }
                if !head.is_finite() {
                    return Err(Error::config(
                        "layers",
                        format!("layer {l} head {h} has non-finite weights"),
                    ));
                }
                if variant == Variant::L2Tied && !head.is_tied() {
                    return Err(Error::config(
                        "variant",
                        format!("l2 attention requires tied query/key projections (layer {l} head {h})"),
                    ));
                }
            }
            for (name, m) in [("w_o", &layer.w_o), ("w_ffn", &layer.w_ffn)] {
                if m.shape() != (d, d) {
                    return Err(Error::config(
                        "layers",
                        format!("layer {l} {name} is {:?}, expected ({d}, {d})", m.shape()),
                    ));
                }
                if !m.is_finite() {
                    return Err(Error::config(
                        "layers",
                        format!("layer {l} {name} has non-finite weights"),
                    ));
                }
            }
        }
        match (variant, scsa) {
            (Variant::Scsa, None) => {
                return Err(Error::config("scsa", "scsa variant requires scsa parameters"));
            }
            (Variant::Scsa, Some(p)) => {
                p.validate()?;
                if !n.is_multiple_of(p.window) {
                    return Err(Error::config(
                        "scsa.window",
                        format!("window {} must divide n = {n}", p.window),
                    ));
                }
            }
            _ => {}
        }
        Ok(ModelConfig {
            n,
            d,
            num_heads,
            bound,
            variant,
            layers,
            scsa,
        })
    }

    /// Model with `num_layers` layers of Gaussian weights (std `1/√d`) drawn
    /// from `weight_seed`. Query/key projections are tied for the L2 variant.
    #[allow(clippy::too_many_arguments)]
    pub fn gaussian(
        n: usize,
        d: usize,
        num_heads: usize,
        bound: f64,
        variant: Variant,
        num_layers: usize,
        scsa: Option<ScsaParams>,
        weight_seed: u64,
    ) -> Result<Self> {
        if num_heads < 1 || d < 2 || !d.is_multiple_of(num_heads) {
            // Defer to the validator for the message.
            return ModelConfig::new(n, d, num_heads, bound, variant, Vec::new(), scsa);
        }
        let layers = (0..num_layers)
            .map(|l| {
                let mut rng = RngStream::new(weight_seed, l as u64);
                LayerWeights::gaussian(d, num_heads, variant == Variant::L2Tied, &mut rng)
            })
            .collect();
        ModelConfig::new(n, d, num_heads, bound, variant, layers, scsa)
    }

    /// Model whose weights are all zero.
    pub fn zeros(
        n: usize,
        d: usize,
        num_heads: usize,
        bound: f64,
        variant: Variant,
        num_layers: usize,
        scsa: Option<ScsaParams>,
    ) -> Result<Self> {
        if num_heads < 1 || d < 2 || !d.is_multiple_of(num_heads) {
            return ModelConfig::new(n, d, num_heads, bound, variant, Vec::new(), scsa);
        }
        let d_head = d / num_heads;
        let layers = (0..num_layers)
            .map(|_| {
                let mut layer = LayerWeights::zeros(d, num_heads);
                if variant == Variant::L2Tied {
                    layer.heads = (0..num_heads)
                        .map(|_| {
                            HeadWeights::tied(Matrix::zeros(d, d_head), Matrix::zeros(d, d_head)).expect("equal shapes")
                        })
                        .collect();
                }
                layer
            })
            .collect();
        ModelConfig::new(n, d, num_heads, bound, variant, layers, scsa)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.num_heads
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn scsa(&self) -> Option<&ScsaParams> {
        self.scsa.as_ref()
    }

    /// Same model truncated or extended to the given layers.
    pub fn with_layers(&self, layers: Vec<LayerWeights>) -> Result<Self> {
        ModelConfig::new(
            self.n,
            self.d,
            self.num_heads,
            self.bound,
            self.variant,
            layers,
            self.scsa,
        )
    }

    /// Draws an input whose entries are uniform on `[0, B/√d]`, so every row
    /// has ℓ2 norm at most `B` and every entry lies in `[0, B]`.
    pub fn sample_input(&self, rng: &mut RngStream) -> Matrix {
        sample_bounded_input(self.n, self.d, self.bound, rng)
    }
}

/// `n × d` matrix with entries uniform on `[0, bound/√d]`.
pub fn sample_bounded_input(n: usize, d: usize, bound: f64, rng: &mut RngStream) -> Matrix {
    let hi = bound / (d as f64).sqrt();
    Matrix::from_fn(n, d, |_, _| rng.uniform(0.0, hi))
}
