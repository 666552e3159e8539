//! Trajectory metrics: timestamp association, Horn's closed-form rigid
//! alignment, absolute trajectory error, and relative pose error over
//! fixed-length segments.

use nalgebra::{Matrix3, Vector3, SVD};
use thiserror::Error;

use crate::manifold::{relative_pose, Pose, UnitQuat};

pub const DEFAULT_ASSOCIATION_TOLERANCE: f64 = 0.02;
/// KITTI-style segment lengths, meters.
pub const DEFAULT_RPE_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("timestamps must be strictly increasing: {t} after {last}")]
    NonMonotoneTimestamp { t: f64, last: f64 },
    #[error("no associated sample pairs within {max_dt} s")]
    NoAssociations { max_dt: f64 },
    #[error("alignment needs at least 3 point pairs, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate (collinear) point configuration")]
    Degenerate,
    #[error("trajectory is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub time: f64,
    pub pose: Pose,
}

/// Timestamped pose sequence with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new() -> Self {
        Trajectory { samples: Vec::new() }
    }

    pub fn push(&mut self, time: f64, pose: Pose) -> Result<(), EvaluationError> {
        if let Some(last) = self.samples.last() {
            if time <= last.time {
                return Err(EvaluationError::NonMonotoneTimestamp { t: time, last: last.time });
            }
        }
        self.samples.push(TrajectorySample { time, pose });
        Ok(())
    }

    pub fn from_samples(
        samples: impl IntoIterator<Item = (f64, Pose)>,
    ) -> Result<Self, EvaluationError> {
        let mut t = Trajectory::new();
        for (time, pose) in samples {
            t.push(time, pose)?;
        }
        Ok(t)
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Applies a rigid transform to every pose.
    pub fn transformed(&self, t: &Pose) -> Trajectory {
        Trajectory {
            samples: self
                .samples
                .iter()
                .map(|s| TrajectorySample { time: s.time, pose: t.compose(&s.pose) })
                .collect(),
        }
    }
}

/// Nearest-timestamp pairs `(est index, gt index)` with `|dt| <= max_dt`;
/// each ground-truth sample is used at most once.
pub fn associate(
    est: &Trajectory,
    gt: &Trajectory,
    max_dt: f64,
) -> Result<Vec<(usize, usize)>, EvaluationError> {
    if est.is_empty() || gt.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let gts = gt.samples();
    let mut used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (ei, e) in est.samples().iter().enumerate() {
        let idx = gts.partition_point(|s| s.time < e.time);
        let mut best: Option<(f64, usize)> = None;
        for gi in [idx.checked_sub(1), Some(idx)].into_iter().flatten() {
            if gi < gts.len() && !used[gi] {
                let dt = (gts[gi].time - e.time).abs();
                let better = match best {
                    None => true,
                    Some((bdt, _)) => dt < bdt,
                };
                if better {
                    best = Some((dt, gi));
                }
            }
        }
        if let Some((dt, gi)) = best {
            if dt <= max_dt {
                used[gi] = true;
                pairs.push((ei, gi));
            }
        }
    }
    if pairs.is_empty() {
        return Err(EvaluationError::NoAssociations { max_dt });
    }
    Ok(pairs)
}

/// Closed-form least-squares rigid transform `T` minimizing
/// `sum || gt_i - T(est_i) ||^2` (rotation plus translation, no scale),
/// via the SVD formulation with the determinant of the rotation forced to +1.
///
/// Requires at least three non-collinear pairs.
pub fn horn_align(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Pose, EvaluationError> {
    assert_eq!(est.len(), gt.len());
    if est.len() < 3 {
        return Err(EvaluationError::TooFewPoints(est.len()));
    }
    let (transform, _, singular) = kabsch(est, gt, false);
    // collinear when the second singular value of the centered covariance
    // vanishes; planar (rank 2) configurations are fine
    if singular[1] <= 1e-9 * singular[0].max(1e-300) {
        return Err(EvaluationError::Degenerate);
    }
    Ok(transform)
}

/// Kabsch/Horn solution without the degeneracy guard; also used for the
/// alignment inside [`ate_rmse`], where collinear or two-point inputs still
/// have a well-defined minimum residual. With `with_scale` the similarity
/// (Umeyama) scale is estimated too, for monocular-style inputs.
fn kabsch(
    est: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    with_scale: bool,
) -> (Pose, f64, Vector3<f64>) {
    let n = est.len() as f64;
    let est_c: Vector3<f64> = est.iter().sum::<Vector3<f64>>() / n;
    let gt_c: Vector3<f64> = gt.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut est_var = 0.0;
    for (e, g) in est.iter().zip(gt) {
        h += (g - gt_c) * (e - est_c).transpose();
        est_var += (e - est_c).norm_squared();
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant();
    let sign = if d < 0.0 { -1.0 } else { 1.0 };
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * v_t;
    let rotation = UnitQuat::from_rotation_matrix(&r);
    let sv = svd.singular_values;
    let scale = if with_scale && est_var > 0.0 {
        (sv[0] + sv[1] + sign * sv[2]) / est_var
    } else {
        1.0
    };
    let translation = gt_c - rotation.rotate(&est_c) * scale;
    (Pose::new(translation, rotation), scale, sv)
}

fn paired_positions(
    est: &Trajectory,
    gt: &Trajectory,
    max_dt: f64,
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>), EvaluationError> {
    let pairs = associate(est, gt, max_dt)?;
    let e = pairs.iter().map(|&(ei, _)| est.samples()[ei].pose.position).collect();
    let g = pairs.iter().map(|&(_, gi)| gt.samples()[gi].pose.position).collect();
    Ok((e, g))
}

/// Root-mean-square absolute trajectory error after rigid alignment.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<f64, EvaluationError> {
    ate_rmse_aligned(est, gt, max_dt, false)
}

/// ATE with a choice of alignment: rigid, or similarity (rotation,
/// translation, and scale) for inputs with unobservable metric scale.
pub fn ate_rmse_aligned(
    est: &Trajectory,
    gt: &Trajectory,
    max_dt: f64,
    similarity: bool,
) -> Result<f64, EvaluationError> {
    let (e, g) = paired_positions(est, gt, max_dt)?;
    let (transform, scale, _) = kabsch(&e, &g, similarity);
    let residual = |t: &Pose, s: f64| -> f64 {
        e.iter()
            .zip(&g)
            .map(|(pe, pg)| (pg - (t.orientation.rotate(pe) * s + t.position)).norm_squared())
            .sum()
    };
    // the closed form is the exact minimizer, so the identity candidate only
    // wins by floating-point noise; it makes identical inputs score exactly 0
    let sum_sq = residual(&transform, scale).min(residual(&Pose::identity(), 1.0));
    Ok((sum_sq / e.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpeBucket {
    pub length: f64,
    /// mean translation error as a percentage of the segment length
    pub translation_percent: f64,
    /// mean rotation error in degrees per 100 m
    pub rotation_deg_per_100m: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RpeReport {
    pub buckets: Vec<RpeBucket>,
    /// true when no segment length fit inside the trajectory
    pub empty: bool,
}

/// KITTI-style relative pose error: for every start index and each segment
/// length, the error of the estimated relative motion against ground truth,
/// averaged per length.
pub fn rpe(
    est: &Trajectory,
    gt: &Trajectory,
    segment_lengths: &[f64],
    max_dt: f64,
) -> Result<RpeReport, EvaluationError> {
    let pairs = associate(est, gt, max_dt)?;
    let est_p: Vec<Pose> = pairs.iter().map(|&(ei, _)| est.samples()[ei].pose).collect();
    let gt_p: Vec<Pose> = pairs.iter().map(|&(_, gi)| gt.samples()[gi].pose).collect();
    // cumulative ground-truth path length
    let mut dist = Vec::with_capacity(gt_p.len());
    let mut acc = 0.0;
    dist.push(0.0);
    for w in gt_p.windows(2) {
        acc += (w[1].position - w[0].position).norm();
        dist.push(acc);
    }

    let mut buckets = Vec::new();
    for &length in segment_lengths {
        let mut t_sum = 0.0;
        let mut r_sum = 0.0;
        let mut count = 0usize;
        for i in 0..gt_p.len() {
            let target = dist[i] + length;
            let j = dist.partition_point(|&d| d < target);
            if j >= dist.len() {
                break;
            }
            let g = relative_pose(&gt_p[i], &gt_p[j]);
            let e = relative_pose(&est_p[i], &est_p[j]);
            let err = g.inverse().compose(&e);
            t_sum += err.position.norm() / length * 100.0;
            let angle = err.orientation.log().norm();
            r_sum += angle.to_degrees() / length * 100.0;
            count += 1;
        }
        if count > 0 {
            buckets.push(RpeBucket {
                length,
                translation_percent: t_sum / count as f64,
                rotation_deg_per_100m: r_sum / count as f64,
                count,
            });
        }
    }
    let empty = buckets.is_empty();
    Ok(RpeReport { buckets, empty })
}

/// Combined metric report produced by the evaluate command.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub ate_rmse: f64,
    pub rpe: RpeReport,
    pub pairs: usize,
    pub est_samples: usize,
    pub gt_samples: usize,
}

pub fn evaluate(
    est: &Trajectory,
    gt: &Trajectory,
    segment_lengths: &[f64],
    max_dt: f64,
    similarity: bool,
) -> Result<MetricReport, EvaluationError> {
    let pairs = associate(est, gt, max_dt)?;
    Ok(MetricReport {
        ate_rmse: ate_rmse_aligned(est, gt, max_dt, similarity)?,
        rpe: rpe(est, gt, segment_lengths, max_dt)?,
        pairs: pairs.len(),
        est_samples: est.len(),
        gt_samples: gt.len(),
    })
}
