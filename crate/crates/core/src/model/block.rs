use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::pooling::{pool, PoolParams, PoolingSpec};

use super::attention::multi_head_attention;
use super::config::{LayerWeights, ModelConfig, ScsaParams, Variant};

/// Lipschitz constant `d/(d−1)` of [`center_norm`] on `d`-dimensional rows.
pub fn center_norm_factor(d: usize) -> f64 {
    d as f64 / (d as f64 - 1.0)
}

/// Row-wise centring scaled by `d/(d−1)`: `yᵢ = d/(d−1) · (xᵢ − mean(xᵢ)·1)`.
///
/// A linear map whose operator norm is exactly `d/(d−1)`; constant rows are
/// sent to zero.
pub fn center_norm(x: &Matrix) -> Matrix {
    let d = x.cols();
    assert!(d >= 2, "center_norm needs d >= 2");
    let factor = center_norm_factor(d);
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        row.iter_mut().for_each(|v| *v = factor * (*v - mean));
    }
    out
}

/// `ReLU(x · W_FFN)`.
pub fn ffn(x: &Matrix, w_ffn: &Matrix) -> Result<Matrix> {
    if x.cols() != w_ffn.rows() || w_ffn.rows() != w_ffn.cols() {
        return Err(Error::InvalidInput(format!(
            "ffn weight {:?} does not fit input width {}",
            w_ffn.shape(),
            x.cols()
        )));
    }
    Ok(x.matmul(w_ffn).map(|v| v.max(0.0)))
}

/// Post-norm attention block:
/// `X' = CN(X + MHA(X))`, output `CN(X' + FFN(X'))`.
pub fn attention_block(
    x: &Matrix,
    layer: &LayerWeights,
    variant: Variant,
    scsa: Option<&ScsaParams>,
) -> Result<Matrix> {
    if x.cols() < 2 {
        return Err(Error::InvalidInput("attention block needs d >= 2".into()));
    }
    let attended = multi_head_attention(x, layer, variant, scsa)?;
    let mid = center_norm(&x.add(&attended));
    let fed = ffn(&mid, &layer.w_ffn)?;
    Ok(center_norm(&mid.add(&fed)))
}

/// Applies every layer of `cfg` in order and returns the final `n × d`
/// representation.
pub fn backbone(x: &Matrix, cfg: &ModelConfig) -> Result<Matrix> {
    if x.shape() != (cfg.n(), cfg.d()) {
        return Err(Error::InvalidInput(format!(
            "input is {:?}, model expects ({}, {})",
            x.shape(),
            cfg.n(),
            cfg.d()
        )));
    }
    let mut z = x.clone();
    for layer in cfg.layers() {
        z = attention_block(&z, layer, cfg.variant(), cfg.scsa())?;
    }
    Ok(z)
}

/// Full model: backbone followed by pooling.
pub fn forward(x: &Matrix, cfg: &ModelConfig, spec: PoolingSpec, params: &PoolParams) -> Result<Vector> {
    pool(&backbone(x, cfg)?, spec, params)
}
