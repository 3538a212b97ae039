//! Closed-form Jacobian of the un-projected dot-product attention map
//! `h(X) = P(X) · X`, with `P(X) = softmax(X Aᵀ Xᵀ)` and
//! `A = W^K W^Qᵀ / √d_head`.
//!
//! Block `(i, j)` is `∂hᵢ/∂xⱼ`, a `d × d` matrix whose entry `(a, b)` is
//! `∂(hᵢ)ₐ / ∂(xⱼ)_b`:
//!
//! ```text
//! Jᵢⱼ = Xᵀ P⁽ⁱ⁾ eⱼ (A xᵢ)ᵀ + δᵢⱼ Xᵀ P⁽ⁱ⁾ X A + Pᵢⱼ I
//! ```
//!
//! where `P⁽ⁱ⁾ = diag(Pᵢ:) − Pᵢ:ᵀ Pᵢ:` is the softmax Jacobian of row `i`.

use crate::error::{Error, Result};
use crate::linalg::{softmax_jacobian, Matrix};

use super::attention::dot_attention_probs;
use super::config::{HeadWeights, Variant};

/// All `n²` blocks of the Jacobian of `h`, plus the bilinear form `A`.
#[derive(Debug, Clone)]
pub struct AttentionJacobian {
    n: usize,
    blocks: Vec<Matrix>,
    a_matrix: Matrix,
}

impl AttentionJacobian {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `∂hᵢ/∂xⱼ`.
    pub fn block(&self, i: usize, j: usize) -> &Matrix {
        &self.blocks[i * self.n + j]
    }

    /// `A = W^K W^Qᵀ / √d_head`.
    pub fn a_matrix(&self) -> &Matrix {
        &self.a_matrix
    }

    /// Iterator over `((i, j), block)`.
    pub fn blocks(&self) -> impl Iterator<Item = ((usize, usize), &Matrix)> {
        self.blocks
            .iter()
            .enumerate()
            .map(move |(k, b)| ((k / self.n, k % self.n), b))
    }
}

/// The map `h(X) = P X` whose Jacobian [`analytic_attention_jacobian`] returns.
pub fn attention_map(x: &Matrix, head: &HeadWeights, d_head: usize) -> Result<Matrix> {
    Ok(dot_attention_probs(x, head, d_head)?.matmul(x))
}

/// `A = W^K W^Qᵀ / √d_head`.
pub fn bilinear_form(head: &HeadWeights, d_head: usize) -> Matrix {
    head.w_k()
        .matmul(&head.w_q().transpose())
        .scale(1.0 / (d_head as f64).sqrt())
}

/// Analytic Jacobian of `h(X) = P X` for a dot-product head.
pub fn analytic_attention_jacobian(
    x: &Matrix,
    head: &HeadWeights,
    d_head: usize,
    variant: Variant,
) -> Result<AttentionJacobian> {
    if variant != Variant::DotProduct {
        return Err(Error::Unsupported(format!(
            "analytic attention Jacobian is only derived for dot-product attention, not {variant}"
        )));
    }
    let p = dot_attention_probs(x, head, d_head)?;
    let a = bilinear_form(head, d_head);
    let (n, d) = x.shape();

    let mut blocks = Vec::with_capacity(n * n);
    for i in 0..n {
        let soft_jac = softmax_jacobian(p.row(i))?;
        // Xᵀ P⁽ⁱ⁾, a d × n matrix; column j is Xᵀ P⁽ⁱ⁾ eⱼ.
        let xt_pi = x.t_matmul(&soft_jac);
        let a_xi = a.matvec(x.row(i));
        let diag_term = xt_pi.matmul(x).matmul(&a);
        for j in 0..n {
            let mut block = Matrix::from_fn(d, d, |r, c| xt_pi[(r, j)] * a_xi[c]);
            if i == j {
                block = block.add(&diag_term);
            }
            for k in 0..d {
                block[(k, k)] += p[(i, j)];
            }
            blocks.push(block);
        }
    }
    Ok(AttentionJacobian { n, blocks, a_matrix: a })
}
