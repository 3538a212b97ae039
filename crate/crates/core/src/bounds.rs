//! Closed-form Lipschitz constants and `(ε, σ, γ)` bounds.
//!
//! Each attention block is bounded by `(d/(d−1))² · C1 · C2`, where
//! `C2 = 1 + ‖W_FFN‖` covers the residual feed-forward map and `C1` covers
//! the residual attention map for the chosen variant. Layers compose
//! multiplicatively. The pooling operator contributes its own factor, and a
//! Markov step turns the resulting Lipschitz bound into
//!
//! ```text
//! γ = (ε/σ) · pool_factor · Π_layers (d/(d−1))² C1 C2
//! ```
//!
//! which upper-bounds the probability that an `ε`-perturbation moves the
//! pooled output by more than `σ`. The value is reported unclamped; anything
//! above 1 is vacuous.

use std::f64::consts::E;

use crate::error::{Error, Result};
use crate::linalg::{lambert_w0, spectral_norm};
use crate::model::{center_norm_factor, LayerWeights, ModelConfig, ScsaParams, Variant};
use crate::pooling::{pooling_factor, PoolingSpec};

/// Bound for one `(model, pooling, ε, σ)` tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub variant: Variant,
    pub pooling: PoolingSpec,
    pub n: usize,
    pub d: usize,
    pub num_heads: usize,
    pub bound: f64,
    /// Input-neighbourhood radius (Frobenius norm).
    pub eps: f64,
    /// Output threshold (Euclidean norm).
    pub sigma: f64,
    pub c1_per_layer: Vec<f64>,
    pub c2_per_layer: Vec<f64>,
    /// `(d/(d−1))²`.
    pub ln_factor: f64,
    pub pool_factor: f64,
    /// `Π_layers ln_factor · c1 · c2`; Lipschitz bound of the backbone.
    pub lipschitz_total: f64,
    pub gamma: f64,
}

impl BoundReport {
    pub fn num_layers(&self) -> usize {
        self.c1_per_layer.len()
    }

    /// Lipschitz bound of backbone plus pooling: `pool_factor · lipschitz_total`.
    pub fn pooled_lipschitz(&self) -> f64 {
        self.pool_factor * self.lipschitz_total
    }

    /// A probability bound above one says nothing.
    pub fn is_vacuous(&self) -> bool {
        self.gamma > 1.0
    }
}

/// `C2 = 1 + ‖W_FFN‖`.
pub fn c2(layer: &LayerWeights) -> Result<f64> {
    Ok(1.0 + spectral_norm(&layer.w_ffn)?)
}

/// Dot-product `C1`:
/// `1 + ‖W_O‖ √H · max_h ‖W^V_h‖ (4 n/√(d/H) B² ‖W^Q_h‖ ‖W^K_h‖ + 1)`.
pub fn c1_dot(layer: &LayerWeights, n: usize, d: usize, num_heads: usize, bound: f64) -> Result<f64> {
    check_heads(layer, d, num_heads)?;
    let d_head = (d / num_heads) as f64;
    let mut worst = 0.0_f64;
    for head in &layer.heads {
        let wq = spectral_norm(head.w_q())?;
        let wk = spectral_norm(head.w_k())?;
        let wv = spectral_norm(head.w_v())?;
        let head_bound = wv * (4.0 * n as f64 / d_head.sqrt() * bound * bound * wq * wk + 1.0);
        worst = worst.max(head_bound);
    }
    Ok(1.0 + spectral_norm(&layer.w_o)? * (num_heads as f64).sqrt() * worst)
}

/// L2-kernel `C1`:
/// `1 + √n/√(d/H) · (4 W₀(n/e) + 1) · √(Σ_h ‖W^Q_h‖² ‖W^V_h‖²) · ‖W_O‖`.
pub fn c1_l2(layer: &LayerWeights, n: usize, d: usize, num_heads: usize) -> Result<f64> {
    check_heads(layer, d, num_heads)?;
    if let Some(h) = layer.heads.iter().position(|h| !h.is_tied()) {
        return Err(Error::Unsupported(format!(
            "l2 bound requires tied query/key projections (head {h} is untied)"
        )));
    }
    let d_head = (d / num_heads) as f64;
    let lambert = lambert_w0(n as f64 / E)?;
    let mut sum_sq = 0.0;
    for head in &layer.heads {
        let wq = spectral_norm(head.w_q())?;
        let wv = spectral_norm(head.w_v())?;
        sum_sq += wq * wq * wv * wv;
    }
    Ok(1.0 + (n as f64).sqrt() / d_head.sqrt() * (4.0 * lambert + 1.0) * sum_sq.sqrt() * spectral_norm(&layer.w_o)?)
}

/// Windowed scaled-cosine `C1`:
/// `1 + ‖W_O‖ √H · max_h { 2w(w−1)ντ∇^{-1/2}‖W^K_h‖ + 2(w−1)ντ∇^{-1/2}‖W^Q_h‖ + 2wν∇^{-1/2}‖W^V_h‖ }`.
pub fn c1_scsa(layer: &LayerWeights, p: &ScsaParams, num_heads: usize) -> Result<f64> {
    if layer.heads.len() != num_heads {
        return Err(Error::InvalidInput(format!(
            "layer has {} heads, expected {num_heads}",
            layer.heads.len()
        )));
    }
    if !(p.nabla > 0.0 && p.nu > 0.0 && p.tau > 0.0) || p.window == 0 {
        return Err(Error::Domain(format!("scsa parameters must be positive, got {p:?}")));
    }
    let w = p.window as f64;
    let inv_sqrt_nabla = 1.0 / p.nabla.sqrt();
    let mut worst = 0.0_f64;
    for head in &layer.heads {
        let wq = spectral_norm(head.w_q())?;
        let wk = spectral_norm(head.w_k())?;
        let wv = spectral_norm(head.w_v())?;
        let head_bound = 2.0 * w * (w - 1.0) * p.nu * p.tau * inv_sqrt_nabla * wk
            + 2.0 * (w - 1.0) * p.nu * p.tau * inv_sqrt_nabla * wq
            + 2.0 * w * p.nu * inv_sqrt_nabla * wv;
        worst = worst.max(head_bound);
    }
    Ok(1.0 + spectral_norm(&layer.w_o)? * (num_heads as f64).sqrt() * worst)
}

fn check_heads(layer: &LayerWeights, d: usize, num_heads: usize) -> Result<()> {
    if num_heads == 0 || !d.is_multiple_of(num_heads) || layer.heads.len() != num_heads {
        return Err(Error::InvalidInput(format!(
            "layer has {} heads, expected {num_heads} dividing d = {d}",
            layer.heads.len()
        )));
    }
    Ok(())
}

/// `C1` for the variant configured in `cfg`.
pub fn c1(layer: &LayerWeights, cfg: &ModelConfig) -> Result<f64> {
    match cfg.variant() {
        Variant::DotProduct => c1_dot(layer, cfg.n(), cfg.d(), cfg.num_heads(), cfg.bound()),
        Variant::L2Tied => c1_l2(layer, cfg.n(), cfg.d(), cfg.num_heads()),
        Variant::Scsa => {
            let p = cfg
                .scsa()
                .ok_or_else(|| Error::config("scsa", "scsa variant requires scsa parameters"))?;
            c1_scsa(layer, p, cfg.num_heads())
        }
    }
}

/// `(d/(d−1))²`, the Lipschitz factor of the two centre-norms in a block.
pub fn ln_factor(d: usize) -> f64 {
    center_norm_factor(d).powi(2)
}

/// Lipschitz bound of one attention block: `(d/(d−1))² · C1 · C2`.
pub fn layer_lipschitz(layer: &LayerWeights, cfg: &ModelConfig) -> Result<f64> {
    Ok(ln_factor(cfg.d()) * c1(layer, cfg)? * c2(layer)?)
}

/// Full `(ε, σ, γ)` report for a non-learnable pooling operator.
///
/// Every layer uses the same `n` and input bound `B`; growth of
/// intermediate representations across layers is not tracked.
pub fn gamma_bound(cfg: &ModelConfig, spec: PoolingSpec, eps: f64, sigma: f64) -> Result<BoundReport> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let pool_factor = pooling_factor(spec, cfg.n(), cfg.d())?;
    let ln = ln_factor(cfg.d());
    let mut c1s = Vec::with_capacity(cfg.num_layers());
    let mut c2s = Vec::with_capacity(cfg.num_layers());
    let mut total = 1.0;
    for layer in cfg.layers() {
        let a = c1(layer, cfg)?;
        let b = c2(layer)?;
        total *= ln * a * b;
        c1s.push(a);
        c2s.push(b);
    }
    Ok(BoundReport {
        variant: cfg.variant(),
        pooling: spec,
        n: cfg.n(),
        d: cfg.d(),
        num_heads: cfg.num_heads(),
        bound: cfg.bound(),
        eps,
        sigma,
        c1_per_layer: c1s,
        c2_per_layer: c2s,
        ln_factor: ln,
        pool_factor,
        lipschitz_total: total,
        gamma: eps / sigma * pool_factor * total,
    })
}
