//! The three attention mechanisms and their multi-head assembly.

use crate::error::{Error, Result};
use crate::linalg::{norm2, softmax_rows, Matrix};

use super::config::{HeadWeights, LayerWeights, ScsaParams, Variant};

fn check_head(x: &Matrix, head: &HeadWeights, d_head: usize) -> Result<()> {
    if x.cols() != head.input_dim() {
        return Err(Error::InvalidInput(format!(
            "input has {} columns but head expects d = {}",
            x.cols(),
            head.input_dim()
        )));
    }
    if head.head_dim() != d_head {
        return Err(Error::InvalidInput(format!(
            "head projections have {} columns, expected d_head = {d_head}",
            head.head_dim()
        )));
    }
    Ok(())
}

/// Attention matrix `softmax((XW^Q)(XW^K)ᵀ / √d_head)` of a dot-product head.
pub fn dot_attention_probs(x: &Matrix, head: &HeadWeights, d_head: usize) -> Result<Matrix> {
    check_head(x, head, d_head)?;
    let q = x.matmul(head.w_q());
    let k = x.matmul(head.w_k());
    let logits = q.matmul(&k.transpose()).scale(1.0 / (d_head as f64).sqrt());
    Ok(softmax_rows(&logits))
}

/// One scaled dot-product attention head: `P · (XW^V)`.
pub fn attention_head_dot(x: &Matrix, head: &HeadWeights, d_head: usize) -> Result<Matrix> {
    let p = dot_attention_probs(x, head, d_head)?;
    Ok(p.matmul(&x.matmul(head.w_v())))
}

/// Attention matrix of the L2 kernel:
/// `Pᵢⱼ ∝ exp(−‖xᵢW^Q − xⱼW^K‖² / √d_head)`.
pub fn l2_attention_probs(x: &Matrix, head: &HeadWeights, d_head: usize) -> Result<Matrix> {
    check_head(x, head, d_head)?;
    if !head.is_tied() {
        return Err(Error::Unsupported(
            "l2 attention requires a head with tied query/key projections".into(),
        ));
    }
    let q = x.matmul(head.w_q());
    let k = x.matmul(head.w_k());
    let n = x.rows();
    let scale = 1.0 / (d_head as f64).sqrt();
    let logits = Matrix::from_fn(n, n, |i, j| {
        let sq: f64 = q.row(i).iter().zip(k.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        -sq * scale
    });
    Ok(softmax_rows(&logits))
}

/// One L2-kernel attention head: `P · (XW^V)`.
pub fn attention_head_l2(x: &Matrix, head: &HeadWeights, d_head: usize) -> Result<Matrix> {
    let p = l2_attention_probs(x, head, d_head)?;
    Ok(p.matmul(&x.matmul(head.w_v())))
}

/// Rows divided by `‖row‖₂ + nabla`.
fn soft_normalize_rows(m: &Matrix, nabla: f64) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let denom = norm2(m.row(i)) + nabla;
        out.row_mut(i).iter_mut().for_each(|v| *v /= denom);
    }
    out
}

/// One scaled cosine-similarity head on a single window:
/// `ν · softmax(τ QKᵀ) V` where `Q`, `K`, `V` are the projected rows divided
/// by `‖·‖₂ + ∇`.
pub fn attention_head_scsa(x_window: &Matrix, head: &HeadWeights, p: &ScsaParams, d_head: usize) -> Result<Matrix> {
    check_head(x_window, head, d_head)?;
    if x_window.rows() != p.window {
        return Err(Error::InvalidInput(format!(
            "window has {} rows, expected {}",
            x_window.rows(),
            p.window
        )));
    }
    let q = soft_normalize_rows(&x_window.matmul(head.w_q()), p.nabla);
    let k = soft_normalize_rows(&x_window.matmul(head.w_k()), p.nabla);
    let v = soft_normalize_rows(&x_window.matmul(head.w_v()), p.nabla);
    let attn = softmax_rows(&q.matmul(&k.transpose()).scale(p.tau));
    Ok(attn.matmul(&v).scale(p.nu))
}

fn check_layer(x: &Matrix, layer: &LayerWeights) -> Result<usize> {
    let h = layer.num_heads();
    if h == 0 {
        return Err(Error::InvalidInput("layer has no heads".into()));
    }
    let d = x.cols();
    if !d.is_multiple_of(h) || layer.w_o.shape() != (d, d) {
        return Err(Error::InvalidInput(format!(
            "layer with {h} heads and W_O {:?} does not fit input width {d}",
            layer.w_o.shape()
        )));
    }
    Ok(d / h)
}

/// Windowed multi-head SCSA: each contiguous block of `window` rows is
/// attended independently, heads are concatenated and projected by `W_O`.
pub fn scsa_layer(x: &Matrix, layer: &LayerWeights, p: &ScsaParams) -> Result<Matrix> {
    let d_head = check_layer(x, layer)?;
    let n = x.rows();
    if p.window == 0 || !n.is_multiple_of(p.window) {
        return Err(Error::config(
            "scsa.window",
            format!("window {} does not divide n = {n}", p.window),
        ));
    }
    let mut outputs = Vec::with_capacity(layer.num_heads());
    for head in &layer.heads {
        let mut out = Matrix::zeros(n, d_head);
        for start in (0..n).step_by(p.window) {
            let window = x.row_block(start, p.window);
            out.set_row_block(start, &attention_head_scsa(&window, head, p, d_head)?);
        }
        outputs.push(out);
    }
    Ok(Matrix::hcat(&outputs).matmul(&layer.w_o))
}

/// Multi-head attention: per-head outputs concatenated along the feature
/// axis and projected by `W_O`.
pub fn multi_head_attention(
    x: &Matrix,
    layer: &LayerWeights,
    variant: Variant,
    scsa: Option<&ScsaParams>,
) -> Result<Matrix> {
    let d_head = check_layer(x, layer)?;
    let head_fn = match variant {
        Variant::DotProduct => attention_head_dot,
        Variant::L2Tied => attention_head_l2,
        Variant::Scsa => {
            let p = scsa.ok_or_else(|| Error::config("scsa", "scsa variant requires scsa parameters"))?;
            return scsa_layer(x, layer, p);
        }
    };
    let heads = layer
        .heads
        .iter()
        .map(|h| head_fn(x, h, d_head))
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::hcat(&heads).matmul(&layer.w_o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, RngStream};

    fn random_head(d: usize, d_head: usize, tied: bool, seed: u64) -> HeadWeights {
        let mut rng = RngStream::new(seed, 0);
        let w_q = gaussian_matrix(d, d_head, &mut rng);
        let w_k = gaussian_matrix(d, d_head, &mut rng);
        let w_v = gaussian_matrix(d, d_head, &mut rng);
        if tied {
            HeadWeights::tied(w_q, w_v).unwrap()
        } else {
            HeadWeights::new(w_q, w_k, w_v).unwrap()
        }
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn single_token_returns_value_projection() {
        let head = random_head(4, 2, false, 1);
        let x = gaussian_matrix(1, 4, &mut RngStream::new(2, 0));
        let out = attention_head_dot(&x, &head, 2).unwrap();
        assert_close(&out, &x.matmul(head.w_v()), 1e-15);
        let tied = random_head(4, 2, true, 1);
        let p = l2_attention_probs(&x, &tied, 2).unwrap();
        assert_eq!(p.as_slice(), &[1.0]);
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        let mut rng = RngStream::new(3, 0);
        let w_v = gaussian_matrix(4, 4, &mut rng);
        let head = HeadWeights::new(Matrix::zeros(4, 4), Matrix::zeros(4, 4), w_v.clone()).unwrap();
        let x = gaussian_matrix(5, 4, &mut rng);
        let out = attention_head_dot(&x, &head, 4).unwrap();
        let mean = x.matmul(&w_v).column_means();
        for i in 0..5 {
            for j in 0..4 {
                assert!((out[(i, j)] - mean[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn l2_identical_rows_are_uniform() {
        let head = random_head(3, 3, true, 4);
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3]; 4]).unwrap();
        let p = l2_attention_probs(&x, &head, 3).unwrap();
        for v in p.as_slice() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let untied = random_head(3, 3, false, 4);
        assert!(matches!(l2_attention_probs(&x, &untied, 3), Err(Error::Unsupported(_))));
    }

    #[test]
    fn scsa_rows_are_strictly_inside_unit_ball() {
        let head = random_head(4, 2, false, 5);
        let p = ScsaParams {
            nabla: 0.1,
            nu: 1.0,
            tau: 2.0,
            window: 4,
        };
        let x = gaussian_matrix(4, 4, &mut RngStream::new(6, 0)).scale(100.0);
        let q = soft_normalize_rows(&x.matmul(head.w_q()), p.nabla);
        for i in 0..4 {
            assert!(norm2(q.row(i)) < 1.0);
        }
        let out = attention_head_scsa(&Matrix::zeros(4, 4), &head, &p, 2).unwrap();
        assert_eq!(out, Matrix::zeros(4, 2));
        assert!(attention_head_scsa(&Matrix::zeros(3, 4), &head, &p, 2).is_err());
    }

    #[test]
    fn scsa_window_must_divide_n() {
        let layer = LayerWeights::zeros(4, 2);
        let p = ScsaParams {
            window: 3,
            ..Default::default()
        };
        let err = scsa_layer(&Matrix::zeros(4, 4), &layer, &p).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn scsa_full_window_equals_global() {
        let mut rng = RngStream::new(7, 0);
        let layer = LayerWeights::gaussian(4, 1, false, &mut rng);
        let p = ScsaParams {
            window: 6,
            ..Default::default()
        };
        let x = gaussian_matrix(6, 4, &mut rng);
        let global = attention_head_scsa(&x, &layer.heads[0], &p, 4)
            .unwrap()
            .matmul(&layer.w_o);
        assert_eq!(scsa_layer(&x, &layer, &p).unwrap(), global);
    }

    #[test]
    fn scsa_identical_windows_identical_outputs() {
        let mut rng = RngStream::new(8, 0);
        let layer = LayerWeights::gaussian(4, 2, false, &mut rng);
        let p = ScsaParams::default();
        let half = gaussian_matrix(4, 4, &mut rng);
        let mut x = Matrix::zeros(8, 4);
        x.set_row_block(0, &half);
        x.set_row_block(4, &half);
        let out = scsa_layer(&x, &layer, &p).unwrap();
        assert_eq!(out.row_block(0, 4), out.row_block(4, 4));
    }

    #[test]
    fn mha_single_head_identity_projection() {
        let head = random_head(3, 3, false, 9);
        let layer = LayerWeights {
            heads: vec![head.clone()],
            w_o: Matrix::identity(3),
            w_ffn: Matrix::zeros(3, 3),
        };
        let x = gaussian_matrix(4, 3, &mut RngStream::new(10, 0));
        let out = multi_head_attention(&x, &layer, Variant::DotProduct, None).unwrap();
        assert_eq!(out, attention_head_dot(&x, &head, 3).unwrap());
    }

    #[test]
    fn zero_values_give_zero_output() {
        let mut rng = RngStream::new(11, 0);
        let mut layer = LayerWeights::gaussian(4, 2, true, &mut rng);
        for h in &mut layer.heads {
            *h = HeadWeights::tied(h.w_q().clone(), Matrix::zeros(4, 2)).unwrap();
        }
        let x = gaussian_matrix(4, 4, &mut rng);
        for variant in Variant::ALL {
            let out = multi_head_attention(&x, &layer, variant, Some(&ScsaParams::default())).unwrap();
            assert_eq!(out, Matrix::zeros(4, 4), "{variant}");
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let head = random_head(4, 2, false, 12);
        let x = Matrix::zeros(3, 5);
        assert!(matches!(attention_head_dot(&x, &head, 2), Err(Error::InvalidInput(_))));
        assert!(attention_head_dot(&Matrix::zeros(3, 4), &head, 4).is_err());
    }
}
