//! Online pose refinement: gradient descent of the mean squared
//! coordinate residual over rotation and translation.
//!
//! The objective couples each camera-frame point `p` with its metric
//! canonical target `q` (canonical coordinates pre-scaled per axis by the
//! voted scale, so both sides are in meters):
//!
//! `L(R, t) = mean over pairs of ‖Rᵀ(p − t) − q‖²`
//!
//! Updates live on the se(3) tangent: a 6-vector `[δω, δt]` retracting as
//! `R ← exp(δω)·R` with Euclidean translation. Adam moments are kept in
//! tangent coordinates across the whole run. Scale is held fixed — the
//! vote's scale estimate is already an average, and the residual is
//! insensitive to it once targets are pre-scaled.
//!
//! The returned pose is the best iterate by loss, never the last one, so
//! refinement cannot worsen the initial estimate.

use crate::error::{Error, Result};
use crate::geom::{so3_exp, Mat3, Pose9D, Rotation, Vec3};

/// Eigenvalue ratio below which the target spread is treated as
/// rank-deficient (collinear or coincident points).
const RANK_EIGEN_RATIO: f64 = 1e-10;
/// Best-iterate bookkeeping slack.
const LOSS_IMPROVEMENT_SLACK: f64 = 1e-12;

/// Optimizer settings for [`refine`].
#[derive(Clone, Copy, Debug)]
pub struct RefineConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            learning_rate: 1e-2,
            iterations: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "refinement needs a positive learning rate and iteration count".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(Error::InvalidConfig(
                "Adam moments need betas in [0,1) and a positive epsilon".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of a refinement run.
#[derive(Clone, Debug)]
pub struct RefineResult {
    /// Best-loss pose encountered (scale copied from the initial pose).
    pub pose: Pose9D,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss per iterate: entry 0 is the initial pose, entry k the pose
    /// after k updates.
    pub loss_trace: Vec<f64>,
    /// True when the correspondences were rank-deficient and the initial
    /// pose was returned untouched.
    pub degenerate: bool,
}

/// One camera-point / metric-canonical-target pair.
pub type Correspondence = (Vec3, Vec3);

fn mean_loss(pairs: &[Correspondence], rotation: &Rotation, t: &Vec3) -> f64 {
    let mut acc = 0.0;
    for (p, q) in pairs {
        let r = rotation.apply_inverse(&(p - t)) - q;
        acc += r.norm_squared();
    }
    acc / pairs.len() as f64
}

/// Analytic gradient of the mean loss on the `[δω, δt]` tangent at the
/// current state. Exposed within the crate for the finite-difference
/// tests.
pub(crate) fn tangent_gradient(
    pairs: &[Correspondence],
    rotation: &Rotation,
    t: &Vec3,
) -> (Vec3, Vec3) {
    let mut g_rot = Vec3::zeros();
    let mut g_t = Vec3::zeros();
    for (p, q) in pairs {
        let u = p - t;
        let residual = rotation.apply_inverse(&u) - q;
        let back = rotation.apply(&residual);
        g_rot -= u.cross(&back);
        g_t -= back;
    }
    let scale = 2.0 / pairs.len() as f64;
    (g_rot * scale, g_t * scale)
}

/// True when the targets span less than a plane (no unique alignment).
fn rank_deficient(pairs: &[Correspondence]) -> bool {
    if pairs.len() < 3 {
        return true;
    }
    let mut mean = Vec3::zeros();
    for (_, q) in pairs {
        mean += q;
    }
    mean /= pairs.len() as f64;
    let mut cov = Mat3::zeros();
    for (_, q) in pairs {
        let d = q - mean;
        cov += d * d.transpose();
    }
    cov /= pairs.len() as f64;
    let mut eigen: Vec<f64> = cov.symmetric_eigenvalues().iter().cloned().collect();
    eigen.sort_by(|a, b| b.total_cmp(a));
    eigen[1] <= eigen[0].max(f64::MIN_POSITIVE) * RANK_EIGEN_RATIO
}

/// Refines rotation and translation against metric canonical targets.
///
/// Rank-deficient inputs return the initial pose with the `degenerate`
/// flag set rather than an error: the vote's answer stands when the view
/// cannot constrain the alignment.
pub fn refine(
    pairs: &[Correspondence],
    initial: &Pose9D,
    cfg: &RefineConfig,
) -> Result<RefineResult> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyView);
    }
    for (p, q) in pairs {
        if !(p.iter().all(|v| v.is_finite()) && q.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("refinement correspondences".into()));
        }
    }
    let initial_loss = mean_loss(pairs, &initial.rotation, &initial.translation);
    if rank_deficient(pairs) {
        return Ok(RefineResult {
            pose: initial.clone(),
            initial_loss,
            final_loss: initial_loss,
            loss_trace: vec![initial_loss],
            degenerate: true,
        });
    }

    let mut rotation = initial.rotation.clone();
    let mut t = initial.translation;
    let mut best_loss = initial_loss;
    let mut best = (rotation.clone(), t);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(initial_loss);

    let mut m = [0.0f64; 6];
    let mut v = [0.0f64; 6];
    for step in 1..=cfg.iterations {
        let (g_rot, g_t) = tangent_gradient(pairs, &rotation, &t);
        let g = [g_rot.x, g_rot.y, g_rot.z, g_t.x, g_t.y, g_t.z];
        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        let mut delta = [0.0f64; 6];
        for k in 0..6 {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            delta[k] = -cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        let d_omega = Vec3::new(delta[0], delta[1], delta[2]);
        rotation = so3_exp(&d_omega).compose(&rotation);
        t += Vec3::new(delta[3], delta[4], delta[5]);
        let loss = mean_loss(pairs, &rotation, &t);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "refinement loss diverged at iteration {step}"
            )));
        }
        trace.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = (rotation.clone(), t);
        }
    }

    debug_assert!(best_loss <= initial_loss + LOSS_IMPROVEMENT_SLACK);
    let pose = Pose9D::new(best.0, best.1, initial.scale)?;
    Ok(RefineResult {
        pose,
        initial_loss,
        final_loss: best_loss,
        loss_trace: trace,
        degenerate: false,
    })
}

/// Mean squared alignment residual of a pose against correspondences —
/// the quantity [`refine`] descends, exposed for reporting and model
/// selection.
pub fn alignment_loss(pairs: &[Correspondence], pose: &Pose9D) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyView);
    }
    Ok(mean_loss(pairs, &pose.rotation, &pose.translation))
}

/// Least-squares rigid alignment (fixed scale) of metric canonical targets
/// onto camera points: the closed-form optimum of the same objective
/// [`refine`] descends, via orthogonal Procrustes. Returned with unit
/// scale — it aligns already-scaled targets.
pub fn closed_form_align(pairs: &[Correspondence]) -> Result<Pose9D> {
    if rank_deficient(pairs) {
        return Err(Error::DegenerateGeometry(
            "alignment needs at least 3 non-collinear targets".into(),
        ));
    }
    let n = pairs.len() as f64;
    let mut p_mean = Vec3::zeros();
    let mut q_mean = Vec3::zeros();
    for (p, q) in pairs {
        p_mean += p;
        q_mean += q;
    }
    p_mean /= n;
    q_mean /= n;
    let mut cross = Mat3::zeros();
    for (p, q) in pairs {
        cross += (p - p_mean) * (q - q_mean).transpose();
    }
    let svd = cross.svd(true, true);
    let u = svd.u.ok_or_else(|| {
        Error::DegenerateGeometry("alignment SVD failed to produce U".into())
    })?;
    let v_t = svd.v_t.ok_or_else(|| {
        Error::DegenerateGeometry("alignment SVD failed to produce V".into())
    })?;
    let det = (u * v_t).determinant();
    let d = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, det.signum()));
    let rotation = Rotation::from_matrix(u * d * v_t)?;
    let t = p_mean - rotation.apply(&q_mean);
    Pose9D::new(rotation, t, Vec3::repeat(1.0))
}
