//! Nonlinear least-squares engine: linearizes all factors about the current
//! states on the pose manifold and minimizes the Mahalanobis cost by
//! Levenberg-Marquardt with Gauss-Newton steps.
//!
//! The graph is a chain with unary attachments, so the normal equations are
//! block tridiagonal in node order; the solve is a block Cholesky sweep that
//! runs in O(n) time and memory.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector6};
use thiserror::Error;

use crate::factors::{Factor, FactorKind, FactorNodes, RobustLoss};
use crate::graph::{GraphSnapshot, NodeId};
use crate::manifold::{pose_boxplus, quat_boxminus, relative_pose, skew, Pose, Tangent6};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no free nodes to optimize")]
    NoFreeNodes,
    #[error("gauge failure: {description}; unconstrained directions: {directions:?}")]
    Gauge { description: String, directions: Vec<(NodeId, &'static str)> },
    #[error("factor evaluation failed: {0}")]
    Factor(#[from] crate::factors::FactorError),
    #[error("local factor between non-adjacent free nodes breaks the banded structure")]
    NonAdjacentBinding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    Numeric,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// relative accepted-cost decrease below which iteration stops
    pub cost_decrease_tolerance: f64,
    /// infinity norm of the gradient below which iteration stops
    pub gradient_tolerance: f64,
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    pub max_damping: f64,
    pub jacobian_mode: JacobianMode,
    /// central-difference step for numeric Jacobians
    pub numeric_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 50,
            cost_decrease_tolerance: 1e-8,
            gradient_tolerance: 1e-8,
            initial_damping: 1e-4,
            damping_increase: 10.0,
            damping_decrease: 0.5,
            max_damping: 1e10,
            jacobian_mode: JacobianMode::Analytic,
            numeric_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientConverged,
    CostConverged,
    MaxIterations,
    /// damping exhausted without a cost-decreasing step
    Stalled,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub final_gradient_norm: f64,
    pub termination: Termination,
    /// accepted cost after each iteration; nonincreasing by construction
    pub accepted_costs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub states: Vec<(NodeId, Pose)>,
    pub report: SolveReport,
}

/// Normal equations of the linearized problem in block-tridiagonal form.
/// Block `i` belongs to the i-th free node in node order.
pub struct LinearSystem {
    pub diag: Vec<Matrix6<f64>>,
    pub upper: Vec<Matrix6<f64>>,
    pub gradient: Vec<Vector6<f64>>,
    pub cost: f64,
}

impl LinearSystem {
    fn zeros(n_free: usize) -> Self {
        LinearSystem {
            diag: vec![Matrix6::zeros(); n_free],
            upper: vec![Matrix6::zeros(); n_free.saturating_sub(1)],
            gradient: vec![Vector6::zeros(); n_free],
            cost: 0.0,
        }
    }

    pub fn dimension(&self) -> usize {
        6 * self.diag.len()
    }

    pub fn gradient_inf_norm(&self) -> f64 {
        self.gradient.iter().map(|g| g.amax()).fold(0.0, f64::max)
    }
}

/// Whitened (and robust-weighted) residual and per-node Jacobian blocks of
/// one factor. Jacobians are with respect to each bound node's [`Tangent6`],
/// translation columns first.
pub struct FactorLinearization {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
    pub cost: f64,
}

/// Linearizes one factor at the given bound states (binding order).
pub fn factor_jacobian(
    factor: &Factor,
    states: &[Pose],
    mode: JacobianMode,
    numeric_step: f64,
) -> Result<FactorLinearization, SolverError> {
    let raw = factor.residual(states)?;
    let raw_jac = match mode {
        JacobianMode::Analytic => analytic_jacobian(factor, states),
        JacobianMode::Numeric => numeric_jacobian(factor, states, numeric_step)?,
    };
    let w = factor.sqrt_info();
    let mut residual = w * &raw;
    let mut jacobians: Vec<DMatrix<f64>> = raw_jac.iter().map(|j| w * j).collect();
    let s = residual.norm_squared();
    let cost;
    match factor.loss {
        RobustLoss::None => cost = s,
        RobustLoss::Huber { delta } => {
            let (loss, dloss) = crate::factors::huber_loss(s, delta);
            cost = loss;
            let scale = dloss.sqrt();
            residual *= scale;
            for j in &mut jacobians {
                *j *= scale;
            }
        }
    }
    Ok(FactorLinearization { residual, jacobians, cost })
}

/// Analytic Jacobians of the raw residual for all four factor types, in the
/// right-perturbation parameterization of [`pose_boxplus`].
pub fn analytic_jacobian(factor: &Factor, states: &[Pose]) -> Vec<DMatrix<f64>> {
    match &factor.kind {
        FactorKind::Gps(_) => {
            let mut j = DMatrix::zeros(3, 6);
            for i in 0..3 {
                j[(i, i)] = -1.0;
            }
            vec![j]
        }
        FactorKind::Baro(_) => {
            let mut j = DMatrix::zeros(1, 6);
            j[(0, 2)] = -1.0;
            vec![j]
        }
        FactorKind::Mag { reference, .. } => {
            let x = &states[0];
            let r_mb = reference.body_to_sensor.rotation_matrix();
            let wn = reference.world_field.norm();
            let world_unit = reference.world_field / wn;
            let in_body = x.orientation.inverse().rotate(&world_unit);
            let block: Matrix3<f64> = -r_mb * skew(&in_body);
            let mut j = DMatrix::zeros(3, 6);
            j.view_mut((0, 3), (3, 3)).copy_from(&block);
            vec![j]
        }
        FactorKind::Local(z) => {
            let (xi, xj) = (&states[0], &states[1]);
            let ri_t = xi.orientation.rotation_matrix().transpose();
            let rel = relative_pose(xi, xj);
            // rotation error e = (q_i^-1 q_j)^-1 * z = q_j^-1 q_i z
            let err_quat = rel.orientation.inverse().compose(&z.relative.orientation);
            let rot_err = quat_boxminus(&z.relative.orientation, &rel.orientation);
            let jr_inv = inverse_right_jacobian(&rot_err);
            let rz_t = z.relative.orientation.rotation_matrix().transpose();
            let re_t = err_quat.rotation_matrix().transpose();

            let mut ji = DMatrix::zeros(6, 6);
            let mut jj = DMatrix::zeros(6, 6);
            // position rows: r_p = z_p - q_i^-1 (p_j - p_i)
            ji.view_mut((0, 0), (3, 3)).copy_from(&ri_t);
            ji.view_mut((0, 3), (3, 3)).copy_from(&(-skew(&rel.position)));
            jj.view_mut((0, 0), (3, 3)).copy_from(&(-ri_t));
            // rotation rows: r_q = Log(q_j^-1 q_i z_q)
            ji.view_mut((3, 3), (3, 3)).copy_from(&(jr_inv * rz_t));
            jj.view_mut((3, 3), (3, 3)).copy_from(&(-(jr_inv * re_t)));
            vec![ji, jj]
        }
    }
}

/// Central finite differences of the raw residual through `pose_boxplus`
/// perturbations; the solver's verification oracle and fallback mode.
pub fn numeric_jacobian(
    factor: &Factor,
    states: &[Pose],
    step: f64,
) -> Result<Vec<DMatrix<f64>>, SolverError> {
    assert!(step > 0.0);
    let dim = factor.kind.residual_dim();
    let n_bound = states.len();
    let mut out = Vec::with_capacity(n_bound);
    for b in 0..n_bound {
        let mut j = DMatrix::zeros(dim, 6);
        for k in 0..6 {
            let mut delta = [0.0; 6];
            delta[k] = step;
            let dp = Tangent6::from_slice(&delta);
            delta[k] = -step;
            let dm = Tangent6::from_slice(&delta);
            let mut plus = states.to_vec();
            plus[b] = pose_boxplus(&states[b], &dp);
            let mut minus = states.to_vec();
            minus[b] = pose_boxplus(&states[b], &dm);
            let rp = factor.residual(&plus)?;
            let rm = factor.residual(&minus)?;
            let col = (rp - rm) / (2.0 * step);
            j.set_column(k, &col);
        }
        out.push(j);
    }
    Ok(out)
}

/// Inverse of the SO(3) right Jacobian at rotation vector `r` (norm <= pi).
fn inverse_right_jacobian(r: &nalgebra::Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let w = skew(r);
    let c = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        // stable form of 1/theta^2 - (1 + cos t)/(2 t sin t)
        let half = 0.5 * theta;
        1.0 / (theta * theta) - half.cos() / (2.0 * theta * half.sin())
    };
    Matrix3::identity() + 0.5 * w + c * (w * w)
}

struct Layout {
    /// free-block index per node position, `None` for fixed nodes
    free_index: Vec<Option<usize>>,
    n_free: usize,
}

fn layout(snapshot: &GraphSnapshot) -> Layout {
    let mut free_index = Vec::with_capacity(snapshot.nodes.len());
    let mut n_free = 0;
    for n in &snapshot.nodes {
        if n.fixed {
            free_index.push(None);
        } else {
            free_index.push(Some(n_free));
            n_free += 1;
        }
    }
    Layout { free_index, n_free }
}

/// Assembles the normal equations about `states` (node order).
fn linearize(
    snapshot: &GraphSnapshot,
    states: &[Pose],
    lay: &Layout,
    options: &SolverOptions,
) -> Result<LinearSystem, SolverError> {
    let mut sys = LinearSystem::zeros(lay.n_free);
    for factor in &snapshot.factors {
        let positions: Vec<usize> =
            factor.nodes.ids().map(|id| snapshot.index_of(id)).collect();
        let bound: Vec<Pose> = positions.iter().map(|&p| states[p]).collect();
        let lin = factor_jacobian(factor, &bound, options.jacobian_mode, options.numeric_step)?;
        sys.cost += lin.cost;
        let free: Vec<Option<usize>> = positions.iter().map(|&p| lay.free_index[p]).collect();
        for (bi, fi) in free.iter().enumerate() {
            let Some(fi) = *fi else { continue };
            let j = &lin.jacobians[bi];
            let jt_j = j.transpose() * j;
            let jt_r = j.transpose() * &lin.residual;
            for r in 0..6 {
                for c in 0..6 {
                    sys.diag[fi][(r, c)] += jt_j[(r, c)];
                }
                sys.gradient[fi][r] += jt_r[r];
            }
        }
        if free.len() == 2 {
            if let (Some(fa), Some(fb)) = (free[0], free[1]) {
                let (lo, hi, ja, jb) = if fa < fb {
                    (fa, fb, &lin.jacobians[0], &lin.jacobians[1])
                } else {
                    (fb, fa, &lin.jacobians[1], &lin.jacobians[0])
                };
                if hi != lo + 1 {
                    return Err(SolverError::NonAdjacentBinding);
                }
                let cross = ja.transpose() * jb;
                for r in 0..6 {
                    for c in 0..6 {
                        sys.upper[lo][(r, c)] += cross[(r, c)];
                    }
                }
            }
        }
    }
    Ok(sys)
}

/// Total robust Mahalanobis cost at `states`.
fn total_cost(
    snapshot: &GraphSnapshot,
    states: &[Pose],
) -> Result<f64, SolverError> {
    let mut cost = 0.0;
    for factor in &snapshot.factors {
        let bound: Vec<Pose> = factor
            .nodes
            .ids()
            .map(|id| states[snapshot.index_of(id)])
            .collect();
        let raw = factor.residual(&bound)?;
        let s = (factor.sqrt_info() * raw).norm_squared();
        cost += match factor.loss {
            RobustLoss::None => s,
            RobustLoss::Huber { delta } => crate::factors::huber_loss(s, delta).0,
        };
    }
    Ok(cost)
}

/// Solves `(H + lambda diag(H)) delta = -g` by a block-tridiagonal Cholesky
/// sweep. Returns one [`Tangent6`] per free node, or `None` when a block
/// factorization fails (caller raises the damping).
pub fn solve_normal_equations(system: &LinearSystem, damping: f64) -> Option<Vec<Tangent6>> {
    let n = system.diag.len();
    if n == 0 {
        return Some(Vec::new());
    }
    // damped diagonal blocks; a small absolute floor keeps exactly-null
    // gauge directions finite without disturbing well-scaled ones
    let mut damped: Vec<Matrix6<f64>> = Vec::with_capacity(n);
    for d in &system.diag {
        let mut m = *d;
        for k in 0..6 {
            m[(k, k)] += damping * (d[(k, k)] + 1e-9);
        }
        damped.push(m);
    }

    // forward block elimination
    let mut chol: Vec<nalgebra::Cholesky<f64, nalgebra::Const<6>>> = Vec::with_capacity(n);
    let mut y: Vec<Vector6<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = damped[i];
        let mut b = -system.gradient[i];
        if i > 0 {
            let u = &system.upper[i - 1];
            // C_i -= U^T C_{i-1}^-1 U ; b_i -= U^T C_{i-1}^-1 y_{i-1}
            let inv_u = chol[i - 1].solve(u);
            c -= u.transpose() * inv_u;
            let inv_y = chol[i - 1].solve(&y[i - 1]);
            b -= u.transpose() * inv_y;
        }
        let f = nalgebra::Cholesky::new(c)?;
        chol.push(f);
        y.push(b);
    }

    // back substitution
    let mut x = vec![Vector6::zeros(); n];
    x[n - 1] = chol[n - 1].solve(&y[n - 1]);
    for i in (0..n - 1).rev() {
        let rhs = y[i] - system.upper[i] * x[i + 1];
        x[i] = chol[i].solve(&rhs);
    }
    Some(
        x.into_iter()
            .map(|v| Tangent6 {
                translation: nalgebra::Vector3::new(v[0], v[1], v[2]),
                rotation: nalgebra::Vector3::new(v[3], v[4], v[5]),
            })
            .collect(),
    )
}

/// Every free node must reach a fixed node or a node carrying a global
/// factor through the chain of local factors, otherwise the problem has a
/// floating component.
fn check_anchoring(snapshot: &GraphSnapshot) -> Result<(), SolverError> {
    let n = snapshot.nodes.len();
    let mut anchored = vec![false; n];
    for (i, node) in snapshot.nodes.iter().enumerate() {
        if node.fixed {
            anchored[i] = true;
        }
    }
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for f in &snapshot.factors {
        match f.nodes {
            FactorNodes::One(id) => anchored[snapshot.index_of(id)] = true,
            FactorNodes::Two(a, b) => {
                let (ia, ib) = (snapshot.index_of(a), snapshot.index_of(b));
                adjacency[ia].push(ib);
                adjacency[ib].push(ia);
            }
        }
    }
    let mut reached = anchored.clone();
    let mut stack: Vec<usize> = (0..n).filter(|&i| reached[i]).collect();
    while let Some(i) = stack.pop() {
        for &j in &adjacency[i] {
            if !reached[j] {
                reached[j] = true;
                stack.push(j);
            }
        }
    }
    let unreachable: Vec<(NodeId, &'static str)> = (0..n)
        .filter(|&i| !reached[i])
        .map(|i| (snapshot.nodes[i].id, "all"))
        .collect();
    if unreachable.is_empty() {
        Ok(())
    } else {
        Err(SolverError::Gauge {
            description: "free nodes unreachable from any anchor".into(),
            directions: unreachable,
        })
    }
}

fn unconstrained_directions(
    snapshot: &GraphSnapshot,
    lay: &Layout,
    sys: &LinearSystem,
) -> Vec<(NodeId, &'static str)> {
    const AXES: [&str; 6] = ["tx", "ty", "tz", "rx", "ry", "rz"];
    let mut max_diag: f64 = 0.0;
    for d in &sys.diag {
        for k in 0..6 {
            max_diag = max_diag.max(d[(k, k)]);
        }
    }
    let threshold = 1e-12 * max_diag.max(1.0);
    let mut out = Vec::new();
    for (pos, fi) in lay.free_index.iter().enumerate() {
        let Some(fi) = *fi else { continue };
        for k in 0..6 {
            if sys.diag[fi][(k, k)] <= threshold {
                out.push((snapshot.nodes[pos].id, AXES[k]));
            }
        }
    }
    out
}

/// Levenberg-Marquardt over the snapshot. States of fixed nodes are
/// returned untouched.
pub fn optimize(
    snapshot: &GraphSnapshot,
    options: &SolverOptions,
) -> Result<OptimizeOutcome, SolverError> {
    let lay = layout(snapshot);
    if lay.n_free == 0 {
        return Err(SolverError::NoFreeNodes);
    }
    check_anchoring(snapshot)?;

    let mut states: Vec<Pose> = snapshot.nodes.iter().map(|n| n.state).collect();
    let mut cost = total_cost(snapshot, &states)?;
    let initial_cost = cost;
    let mut lambda = options.initial_damping;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut gradient_norm = f64::NAN;
    let mut accepted_costs = Vec::new();

    'outer: for _ in 0..options.max_iterations {
        iterations += 1;
        let sys = linearize(snapshot, &states, &lay, options)?;
        gradient_norm = sys.gradient_inf_norm();
        if gradient_norm <= options.gradient_tolerance {
            termination = Termination::GradientConverged;
            iterations -= 1; // no step taken this round
            break;
        }
        loop {
            match solve_normal_equations(&sys, lambda) {
                Some(step) => {
                    let mut candidate = states.clone();
                    let mut si = 0;
                    for (pos, fi) in lay.free_index.iter().enumerate() {
                        if fi.is_some() {
                            candidate[pos] = pose_boxplus(&candidate[pos], &step[si]);
                            si += 1;
                        }
                    }
                    let new_cost = total_cost(snapshot, &candidate)?;
                    if new_cost <= cost {
                        let decrease = cost - new_cost;
                        states = candidate;
                        cost = new_cost;
                        accepted_costs.push(cost);
                        lambda = (lambda * options.damping_decrease).max(1e-12);
                        let rel = decrease / cost.max(1e-300);
                        if rel < options.cost_decrease_tolerance {
                            termination = Termination::CostConverged;
                            break 'outer;
                        }
                        break;
                    }
                    lambda *= options.damping_increase;
                    if lambda > options.max_damping {
                        termination = Termination::Stalled;
                        break 'outer;
                    }
                }
                None => {
                    lambda *= options.damping_increase;
                    if lambda > options.max_damping {
                        return Err(SolverError::Gauge {
                            description: "normal equations not positive definite at max damping"
                                .into(),
                            directions: unconstrained_directions(snapshot, &lay, &sys),
                        });
                    }
                }
            }
        }
    }

    let outcome_states = snapshot
        .nodes
        .iter()
        .zip(&states)
        .map(|(n, s)| (n.id, *s))
        .collect();
    Ok(OptimizeOutcome {
        states: outcome_states,
        report: SolveReport {
            iterations,
            initial_cost,
            final_cost: cost,
            final_gradient_norm: gradient_norm,
            termination,
            accepted_costs,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{GpsMeasurement, LocalMeasurement, MagMeasurement, MagReference};
    use crate::graph::GraphNode;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use crate::manifold::UnitQuat;

    fn node(id: u64, t: f64, state: Pose, fixed: bool) -> GraphNode {
        GraphNode { id: NodeId(id), time: t, state, fixed }
    }

    fn gps_factor(id: u64, p: Vector3<f64>, sigma: f64) -> Factor {
        Factor::new(
            FactorNodes::One(NodeId(id)),
            FactorKind::Gps(GpsMeasurement { position: p, satellites: None, time: 0.0 }),
            DMatrix::from_diagonal(&nalgebra::DVector::from_element(3, sigma * sigma)),
            RobustLoss::None,
        )
        .unwrap()
    }

    fn local_factor(a: u64, b: u64, rel: Pose, sigma: f64) -> Factor {
        Factor::new(
            FactorNodes::Two(NodeId(a), NodeId(b)),
            FactorKind::Local(LocalMeasurement { relative: rel }),
            DMatrix::from_diagonal(&nalgebra::DVector::from_element(6, sigma * sigma)),
            RobustLoss::None,
        )
        .unwrap()
    }

    fn random_quat(rng: &mut impl Rng) -> UnitQuat {
        UnitQuat::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        Pose::new(
            Vector3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            ),
            random_quat(rng),
        )
    }

    fn jacobian_gap(factor: &Factor, states: &[Pose]) -> f64 {
        let analytic = analytic_jacobian(factor, states);
        let numeric = numeric_jacobian(factor, states, 1e-6).unwrap();
        analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| {
                let scale = a.norm().max(n.norm()).max(1.0);
                (a - n).norm() / scale
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn gps_jacobian_structure() {
        let f = gps_factor(0, Vector3::new(1.0, 2.0, 3.0), 1.0);
        let j = &analytic_jacobian(&f, &[Pose::identity()])[0];
        for r in 0..3 {
            for c in 0..6 {
                let expect = if r == c { -1.0 } else { 0.0 };
                assert_eq!(j[(r, c)], expect);
            }
        }
    }

    #[test]
    fn baro_jacobian_structure() {
        let f = Factor::new(
            FactorNodes::One(NodeId(0)),
            FactorKind::Baro(crate::factors::BaroMeasurement { height: 1.0, variance: 1.0, time: 0.0 }),
            DMatrix::from_vec(1, 1, vec![1.0]),
            RobustLoss::None,
        )
        .unwrap();
        let j = &analytic_jacobian(&f, &[Pose::identity()])[0];
        assert_eq!(j[(0, 0)], 0.0);
        assert_eq!(j[(0, 1)], 0.0);
        assert_eq!(j[(0, 2)], -1.0);
        for c in 3..6 {
            assert_eq!(j[(0, c)], 0.0);
        }
    }

    #[test]
    fn analytic_matches_numeric_all_factor_types() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x = random_pose(&mut rng);
            let gps = gps_factor(0, Vector3::new(1.0, -2.0, 0.5), 1.0);
            assert!(jacobian_gap(&gps, &[x]) < 1e-8, "gps");

            let mag = Factor::new(
                FactorNodes::One(NodeId(0)),
                FactorKind::Mag {
                    measurement: MagMeasurement { field: Vector3::new(0.2, 0.9, -0.3), time: 0.0 },
                    reference: MagReference {
                        world_field: Vector3::new(0.1, 1.0, -0.8),
                        body_to_sensor: random_quat(&mut rng),
                    },
                },
                DMatrix::identity(3, 3),
                RobustLoss::None,
            )
            .unwrap();
            assert!(jacobian_gap(&mag, &[x]) < 1e-5, "mag");

            // local factor evaluated near its operating point
            let xa = random_pose(&mut rng);
            let step = Pose::new(
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                UnitQuat::exp(&(Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ) * 0.4)),
            );
            let xb = xa.compose(&step);
            let noise = Pose::new(
                Vector3::new(0.05, -0.02, 0.01),
                UnitQuat::exp(&Vector3::new(0.03, -0.05, 0.08)),
            );
            let local = local_factor(0, 1, step.compose(&noise), 0.5);
            assert!(jacobian_gap(&local, &[xa, xb]) < 1e-5, "local");
        }
    }

    #[test]
    fn single_node_gps_converges_immediately() {
        let snapshot = GraphSnapshot {
            nodes: vec![node(0, 0.0, Pose::identity(), false)],
            factors: vec![gps_factor(0, Vector3::new(1.0, 2.0, 3.0), 1.0)],
        };
        let out = optimize(&snapshot, &SolverOptions::default()).unwrap();
        let p = out.states[0].1.position;
        assert_abs_diff_eq!((p - Vector3::new(1.0, 2.0, 3.0)).norm(), 0.0, epsilon = 1e-10);
        assert!(out.report.iterations <= 3, "iterations {}", out.report.iterations);
        assert!(out.report.final_cost <= 1e-18);
    }

    #[test]
    fn two_node_weighted_mean_closed_form() {
        // hand-solved normal equations: minimize p0^2 + (p1-2)^2 + (p1-p0-1)^2
        // gives p0 = 1/3, p1 = 5/3
        let snapshot = GraphSnapshot {
            nodes: vec![
                node(0, 0.0, Pose::identity(), false),
                node(1, 1.0, Pose::new(Vector3::new(1.0, 0.0, 0.0), UnitQuat::identity()), false),
            ],
            factors: vec![
                gps_factor(0, Vector3::zeros(), 1.0),
                gps_factor(1, Vector3::new(2.0, 0.0, 0.0), 1.0),
                local_factor(0, 1, Pose::new(Vector3::new(1.0, 0.0, 0.0), UnitQuat::identity()), 1.0),
            ],
        };
        let out = optimize(&snapshot, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(out.states[0].1.position.x, 1.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out.states[1].1.position.x, 5.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out.states[0].1.position.y, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn identity_system_solves_negative_gradient() {
        let mut sys = LinearSystem::zeros(2);
        for d in &mut sys.diag {
            *d = Matrix6::identity();
        }
        sys.gradient[0] = Vector6::repeat(1.0);
        sys.gradient[1] = Vector6::repeat(-2.0);
        let x = solve_normal_equations(&sys, 0.0).unwrap();
        assert_abs_diff_eq!((x[0].translation - Vector3::repeat(-1.0)).norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!((x[1].rotation - Vector3::repeat(2.0)).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn huge_damping_shrinks_step_to_zero() {
        let mut sys = LinearSystem::zeros(1);
        sys.diag[0] = Matrix6::identity();
        sys.gradient[0] = Vector6::repeat(1.0);
        let x = solve_normal_equations(&sys, 1e12).unwrap();
        assert!(x[0].translation.norm() < 1e-10);
        assert!(x[0].rotation.norm() < 1e-10);
    }

    #[test]
    fn fixed_node_untouched_and_dead_reckoning_stays() {
        // odometry-only chain with a fixed head: residuals are already zero,
        // so optimization must leave every state exactly as initialized
        let mut nodes = vec![node(0, 0.0, Pose::identity(), true)];
        let mut factors = Vec::new();
        let step = Pose::new(Vector3::new(0.5, 0.1, 0.0), UnitQuat::from_axis_angle(&Vector3::z(), 0.05));
        for k in 1..20u64 {
            let prev = nodes[(k - 1) as usize].state;
            nodes.push(node(k, k as f64, prev.compose(&step), false));
            factors.push(local_factor(k - 1, k, step, 0.1));
        }
        let snapshot = GraphSnapshot { nodes: nodes.clone(), factors };
        let out = optimize(&snapshot, &SolverOptions::default()).unwrap();
        assert_eq!(out.report.termination, Termination::GradientConverged);
        for (before, (_, after)) in nodes.iter().zip(&out.states) {
            assert_eq!(before.state.position, after.position);
            assert_eq!(before.state.orientation, after.orientation);
        }
    }

    #[test]
    fn accepted_costs_never_increase() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut nodes = Vec::new();
        let mut factors = Vec::new();
        let step = Pose::new(Vector3::new(1.0, 0.0, 0.0), UnitQuat::from_axis_angle(&Vector3::z(), 0.1));
        let mut truth = Pose::identity();
        for k in 0..30u64 {
            let noisy = Pose::new(
                truth.position + Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0),
                truth.orientation,
            );
            nodes.push(node(k, k as f64, noisy, false));
            if k > 0 {
                factors.push(local_factor(k - 1, k, step, 0.05));
            }
            if k % 3 == 0 {
                factors.push(gps_factor(k, truth.position, 0.5));
            }
            truth = truth.compose(&step);
        }
        let snapshot = GraphSnapshot { nodes, factors };
        let out = optimize(&snapshot, &SolverOptions::default()).unwrap();
        let mut prev = f64::INFINITY;
        for &c in &out.report.accepted_costs {
            assert!(c <= prev + 1e-12, "cost increased: {prev} -> {c}");
            prev = c;
        }
        assert!(out.report.final_cost <= out.report.initial_cost);
    }

    #[test]
    fn unanchored_chain_is_a_gauge_error() {
        let step = Pose::new(Vector3::new(1.0, 0.0, 0.0), UnitQuat::identity());
        let snapshot = GraphSnapshot {
            nodes: vec![
                node(0, 0.0, Pose::identity(), false),
                node(1, 1.0, Pose::new(Vector3::x(), UnitQuat::identity()), false),
            ],
            factors: vec![local_factor(0, 1, step, 0.1)],
        };
        match optimize(&snapshot, &SolverOptions::default()) {
            Err(SolverError::Gauge { directions, .. }) => {
                assert!(!directions.is_empty());
            }
            other => panic!("expected gauge error, got {other:?}"),
        }
    }

    #[test]
    fn no_free_nodes_is_an_error() {
        let snapshot = GraphSnapshot {
            nodes: vec![node(0, 0.0, Pose::identity(), true)],
            factors: vec![],
        };
        assert!(matches!(
            optimize(&snapshot, &SolverOptions::default()),
            Err(SolverError::NoFreeNodes)
        ));
    }

    #[test]
    fn numeric_mode_matches_analytic_result() {
        let snapshot = GraphSnapshot {
            nodes: vec![node(0, 0.0, Pose::identity(), false)],
            factors: vec![gps_factor(0, Vector3::new(0.3, -0.7, 0.2), 0.5)],
        };
        let a = optimize(&snapshot, &SolverOptions::default()).unwrap();
        let n = optimize(
            &snapshot,
            &SolverOptions { jacobian_mode: JacobianMode::Numeric, ..SolverOptions::default() },
        )
        .unwrap();
        assert_abs_diff_eq!(
            (a.states[0].1.position - n.states[0].1.position).norm(),
            0.0,
            epsilon = 1e-8
        );
    }

    #[test]
    fn deterministic_given_same_snapshot() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut nodes = Vec::new();
        let mut factors = Vec::new();
        let step = Pose::new(Vector3::new(1.0, 0.2, 0.0), UnitQuat::from_axis_angle(&Vector3::z(), 0.02));
        let mut truth = Pose::identity();
        for k in 0..25u64 {
            nodes.push(node(
                k,
                k as f64,
                Pose::new(truth.position + Vector3::new(rng.gen_range(-0.2..0.2), 0.0, 0.0), truth.orientation),
                false,
            ));
            if k > 0 {
                factors.push(local_factor(k - 1, k, step, 0.1));
            }
            if k % 4 == 0 {
                factors.push(gps_factor(k, truth.position, 1.0));
            }
            truth = truth.compose(&step);
        }
        let snapshot = GraphSnapshot { nodes, factors };
        let a = optimize(&snapshot, &SolverOptions::default()).unwrap();
        let b = optimize(&snapshot, &SolverOptions::default()).unwrap();
        for ((_, pa), (_, pb)) in a.states.iter().zip(&b.states) {
            assert_eq!(pa.position, pb.position);
            assert_eq!(pa.orientation, pb.orientation);
        }
        assert_eq!(a.report.final_cost, b.report.final_cost);
    }

    #[test]
    fn factor_order_does_not_change_converged_cost() {
        let step = Pose::new(Vector3::new(1.0, 0.0, 0.0), UnitQuat::identity());
        let mk = |order_swap: bool| {
            let mut factors = vec![
                gps_factor(0, Vector3::zeros(), 1.0),
                local_factor(0, 1, step, 0.3),
                gps_factor(1, Vector3::new(1.5, 0.2, 0.0), 1.0),
            ];
            if order_swap {
                factors.reverse();
            }
            GraphSnapshot {
                nodes: vec![
                    node(0, 0.0, Pose::identity(), false),
                    node(1, 1.0, Pose::new(Vector3::x(), UnitQuat::identity()), false),
                ],
                factors,
            }
        };
        let a = optimize(&mk(false), &SolverOptions::default()).unwrap();
        let b = optimize(&mk(true), &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(a.report.final_cost, b.report.final_cost, epsilon = 1e-10);
    }
}
