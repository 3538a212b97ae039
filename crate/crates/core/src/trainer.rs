//! Learnable pooling plus a scalar linear head, trained on synthetic
//! regression tasks over a frozen backbone.
//!
//! Backbone outputs are computed once per sample; only the pooling
//! parameters and the head move. Gradients come from
//! [`pool_param_grad`](crate::pooling::pool_param_grad) and the closed-form
//! head gradient, so nothing is differentiated through attention.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream, Vector};
use crate::model::{backbone, sample_bounded_input, ModelConfig};
use crate::pooling::{pool, pool_param_grad, PoolParams, PoolingSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Target depends only on the column mean of the input.
    GlobalMean,
    /// Target depends only on the final row.
    LastToken,
    /// Average of the two.
    Mixed,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::GlobalMean, TaskKind::LastToken, TaskKind::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::GlobalMean => "global-mean",
            TaskKind::LastToken => "last-token",
            TaskKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "global-mean" | "globalmean" | "mean" => Ok(TaskKind::GlobalMean),
            "last-token" | "lasttoken" | "last" => Ok(TaskKind::LastToken),
            "mixed" => Ok(TaskKind::Mixed),
            other => Err(Error::config(
                "training.task",
                format!("unknown task `{other}` (expected global-mean, last-token or mixed)"),
            )),
        }
    }
}

/// Inputs, scalar targets and the probe that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub inputs: Vec<Matrix>,
    pub targets: Vec<f64>,
    /// Zero-mean direction used to read targets off the input.
    pub probe: Vector,
    pub seed: u64,
}

/// Target of one input for `kind` and `probe`.
pub fn task_target(kind: TaskKind, x: &Matrix, probe: &[f64]) -> f64 {
    let global = || crate::linalg::dot(probe, &x.column_means());
    let last = || crate::linalg::dot(probe, x.row(x.rows() - 1));
    match kind {
        TaskKind::GlobalMean => global(),
        TaskKind::LastToken => last(),
        TaskKind::Mixed => 0.5 * global() + 0.5 * last(),
    }
}

/// Draws `samples` inputs with entries uniform on `[0, bound/√d]` and labels
/// them with a probe drawn from the same stream.
///
/// The probe is Gaussian with its mean removed, rescaled to norm `√d`. Row
/// centering in the backbone discards the all-ones direction, and a mean-free
/// probe keeps every target recoverable from the backbone output. The fixed
/// norm gives every seed the same signal strength.
pub fn gen_task(
    kind: TaskKind,
    n: usize,
    d: usize,
    bound: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<SyntheticTask> {
    if samples == 0 {
        return Err(Error::config("training.samples", "at least one sample is required"));
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "task shape must be non-empty, got {n} x {d}"
        )));
    }
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::config("bound", format!("must be positive, got {bound}")));
    }
    let seed = rng.seed();
    let raw: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let mean = raw.iter().sum::<f64>() / d as f64;
    let centered: Vector = raw.iter().map(|v| v - mean).collect();
    let norm = centered.norm();
    let probe = if norm > 0.0 {
        centered.scale((d as f64).sqrt() / norm)
    } else {
        centered
    };
    let inputs: Vec<Matrix> = (0..samples).map(|_| sample_bounded_input(n, d, bound, rng)).collect();
    let targets = inputs.iter().map(|x| task_target(kind, x, &probe)).collect();
    Ok(SyntheticTask {
        kind,
        inputs,
        targets,
        probe,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Samples per gradient step. Zero, or any value at least the sample
    /// count, means full-batch descent.
    pub batch: usize,
    /// Seeds the minibatch order; unused for full-batch descent.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 2000,
            batch: 0,
            seed: 0,
        }
    }
}

/// Largest step tried that keeps every reference loss curve non-increasing.
/// The bias direction has curvature 2, so full-batch steps of 1 or more
/// oscillate.
pub const DEFAULT_LEARNING_RATE: f64 = 0.8;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(
                "training.lr",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("training.epochs", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub pool_params: PoolParams,
    pub head_w: Vector,
    pub head_b: f64,
    /// Full-batch loss before each epoch, followed by the final loss.
    pub loss_curve: Vec<f64>,
}

impl TrainedHead {
    pub fn final_loss(&self) -> f64 {
        *self.loss_curve.last().expect("loss curve is never empty")
    }

    /// `⟨head_w, pool(z)⟩ + head_b`.
    pub fn predict(&self, z: &Matrix, spec: PoolingSpec) -> Result<f64> {
        Ok(pool(z, spec, &self.pool_params)?.dot(&self.head_w) + self.head_b)
    }
}

/// Mean squared error and its gradient with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub pool: PoolParams,
    pub head_w: Vector,
    pub head_b: f64,
}

/// Backbone output for every input of `task`.
pub fn backbone_features(cfg: &ModelConfig, task: &SyntheticTask) -> Result<Vec<Matrix>> {
    task.inputs.iter().map(|x| backbone(x, cfg)).collect()
}

/// `mean_s (⟨w, pool(z_s)⟩ + b − y_s)²` and its gradient.
pub fn loss_and_grad(
    features: &[Matrix],
    targets: &[f64],
    spec: PoolingSpec,
    params: &PoolParams,
    head_w: &Vector,
    head_b: f64,
) -> Result<LossGrad> {
    if features.is_empty() || features.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature matrices for {} targets",
            features.len(),
            targets.len()
        )));
    }
    let scale = 1.0 / features.len() as f64;
    let mut loss = 0.0;
    let mut g_pool = vec![0.0; params.as_slice().len()];
    let mut g_w = Vector::zeros(head_w.dim());
    let mut g_b = 0.0;
    for (z, &y) in features.iter().zip(targets) {
        let pooled = pool(z, spec, params)?;
        let residual = pooled.dot(head_w) + head_b - y;
        loss += residual * residual;
        let r = 2.0 * residual * scale;
        for (g, p) in g_w.0.iter_mut().zip(pooled.iter()) {
            *g += r * p;
        }
        g_b += r;
        let upstream: Vec<f64> = head_w.iter().map(|w| r * w).collect();
        let gp = pool_param_grad(z, spec, params, &upstream)?;
        for (acc, g) in g_pool.iter_mut().zip(gp.as_slice()) {
            *acc += g;
        }
    }
    let mut pool_grad = params.clone();
    pool_grad.as_mut_slice().copy_from_slice(&g_pool);
    Ok(LossGrad {
        loss: loss * scale,
        pool: pool_grad,
        head_w: g_w,
        head_b: g_b,
    })
}

/// Fits the pooling parameters and head by gradient descent on the mean
/// squared error, starting from uniform pooling and a zero head.
pub fn train(cfg: &ModelConfig, spec: PoolingSpec, task: &SyntheticTask, tc: &TrainConfig) -> Result<TrainedHead> {
    if !spec.is_learnable() {
        return Err(Error::Unsupported(format!(
            "{spec} pooling has no trainable parameters"
        )));
    }
    tc.validate()?;
    if let Some(x) = task.inputs.iter().find(|x| x.shape() != (cfg.n(), cfg.d())) {
        return Err(Error::InvalidInput(format!(
            "task input is {:?}, model expects {:?}",
            x.shape(),
            (cfg.n(), cfg.d())
        )));
    }
    let features = backbone_features(cfg, task)?;
    let (n, d) = (cfg.n(), cfg.d());
    let samples = features.len();

    let mut params = PoolParams::init(spec, n, d);
    let mut head_w = Vector::zeros(d);
    let mut head_b = 0.0;
    let mut loss_curve = Vec::with_capacity(tc.epochs + 1);

    let full_batch = tc.batch == 0 || tc.batch >= samples;
    let mut order: Vec<usize> = (0..samples).collect();
    let mut shuffle_rng = RngStream::new(tc.seed, 0);

    let diverged = |epoch, loss: f64| -> Result<()> {
        if loss.is_finite() {
            Ok(())
        } else {
            Err(Error::TrainingDiverged { epoch, loss })
        }
    };
    let step =
        |batch_feat: &[Matrix], batch_y: &[f64], params: &mut PoolParams, w: &mut Vector, b: &mut f64| -> Result<f64> {
            let g = loss_and_grad(batch_feat, batch_y, spec, params, w, *b)?;
            for (p, gp) in params.as_mut_slice().iter_mut().zip(g.pool.as_slice()) {
                *p -= tc.learning_rate * gp;
            }
            for (p, gp) in w.0.iter_mut().zip(g.head_w.iter()) {
                *p -= tc.learning_rate * gp;
            }
            *b -= tc.learning_rate * g.head_b;
            Ok(g.loss)
        };

    for epoch in 0..tc.epochs {
        if full_batch {
            let loss = step(&features, &task.targets, &mut params, &mut head_w, &mut head_b)?;
            diverged(epoch, loss)?;
            loss_curve.push(loss);
        } else {
            let start = loss_and_grad(&features, &task.targets, spec, &params, &head_w, head_b)?.loss;
            diverged(epoch, start)?;
            loss_curve.push(start);
            shuffle_rng.shuffle(&mut order);
            for chunk in order.chunks(tc.batch) {
                let feat: Vec<Matrix> = chunk.iter().map(|&i| features[i].clone()).collect();
                let ys: Vec<f64> = chunk.iter().map(|&i| task.targets[i]).collect();
                step(&feat, &ys, &mut params, &mut head_w, &mut head_b)?;
            }
        }
    }
    let last = loss_and_grad(&features, &task.targets, spec, &params, &head_w, head_b)?.loss;
    diverged(tc.epochs, last)?;
    loss_curve.push(last);

    Ok(TrainedHead {
        pool_params: params,
        head_w,
        head_b,
        loss_curve,
    })
}

/// Summary of a learned weighted-average distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStats {
    /// Natural-log entropy of the position weights.
    pub entropy: f64,
    /// Zero-based position of the largest weight.
    pub argmax_index: usize,
    pub max_weight: f64,
    /// Weight on the final position.
    pub last_mass: f64,
}

pub fn weight_stats(params: &PoolParams, spec: PoolingSpec) -> Result<WeightStats> {
    if spec != PoolingSpec::WeightedAvg {
        return Err(Error::Unsupported(format!(
            "weight statistics need weighted-avg pooling, got {spec}"
        )));
    }
    let w = params
        .position_weights()
        .ok_or_else(|| Error::config("pooling", "weighted-avg pooling needs logits"))?;
    let entropy = -w.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    let (argmax_index, max_weight) =
        w.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, p)| if p > best.1 { (i, p) } else { best },
        );
    Ok(WeightStats {
        entropy,
        argmax_index,
        max_weight,
        last_mass: w[w.dim() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_kind_round_trip() {
        for k in TaskKind::ALL {
            assert_eq!(k.name().parse::<TaskKind>().unwrap(), k);
        }
        assert!(matches!("median".parse::<TaskKind>(), Err(Error::Config { key, .. }) if key == "training.task"));
    }

    #[test]
    fn probe_is_mean_free_and_task_deterministic() {
        let a = gen_task(TaskKind::Mixed, 4, 6, 1.0, 10, &mut RngStream::new(3, 0)).unwrap();
        let b = gen_task(TaskKind::Mixed, 4, 6, 1.0, 10, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.probe.iter().sum::<f64>().abs() < 1e-12);
        assert!(gen_task(TaskKind::Mixed, 4, 6, 1.0, 0, &mut RngStream::new(3, 0)).is_err());
    }

    #[test]
    fn uniform_stats() {
        let s = weight_stats(&PoolParams::uniform_weights(4), PoolingSpec::WeightedAvg).unwrap();
        assert!((s.entropy - 4f64.ln()).abs() < 1e-12);
        assert!((s.last_mass - 0.25).abs() < 1e-15);
    }

    #[test]
    fn dominant_logit_stats() {
        let p = PoolParams::WeightedAvg {
            logits: Vector(vec![0.0, 0.0, 0.0, 60.0]),
        };
        let s = weight_stats(&p, PoolingSpec::WeightedAvg).unwrap();
        assert!(s.entropy < 1e-20);
        assert_eq!(s.argmax_index, 3);
        assert!((s.last_mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stats_need_weighted_avg() {
        let p = PoolParams::zero_query(3);
        assert!(matches!(
            weight_stats(&p, PoolingSpec::Attention),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn config_validation() {
        let bad_lr = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad_lr.validate(), Err(Error::Config { key, .. }) if key == "training.lr"));
        let bad_epochs = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(bad_epochs.validate(), Err(Error::Config { key, .. }) if key == "training.epochs"));
    }

    #[test]
    fn fixed_pooling_rejected() {
        let cfg = ModelConfig::zeros(4, 4, 1, 1.0, crate::model::Variant::DotProduct, 1, None).unwrap();
        let task = gen_task(TaskKind::LastToken, 4, 4, 1.0, 4, &mut RngStream::new(0, 0)).unwrap();
        assert!(matches!(
            train(&cfg, PoolingSpec::Avg, &task, &TrainConfig::default()),
            Err(Error::Unsupported(_))
        ));
    }
}
