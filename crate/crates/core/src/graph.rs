//! The pose-graph data model: node creation from odometry, time-association
//! of global measurements to nodes, window trimming, and the local-to-global
//! transform used for high-rate output.
//!
//! Single-writer: one ingestion stream mutates the graph. The optimizer works
//! on a [`GraphSnapshot`] and its result is applied back atomically through
//! [`PoseGraph::apply_states`].

use nalgebra::{DMatrix, Vector3};
use thiserror::Error;

use crate::factors::{
    baro_variance, gps_covariance, local_covariance, mag_covariance, mag_residual,
    BaroMeasurement, Factor, FactorError, FactorKind, FactorNodes, GpsMeasurement,
    LocalMeasurement, LocalNoiseParams, MagMeasurement, MagReference, RobustLoss,
};
use crate::geodesy::EnuOrigin;
use crate::manifold::{relative_pose, Pose, UnitQuat};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("non-monotone timestamp {t}, last was {last}")]
    NonMonotoneTimestamp { t: f64, last: f64 },
    #[error("global measurement arrived before any odometry")]
    NoNodes,
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("graph invariant violated: {0}")]
    InvariantViolated(String),
}

/// Monotone node identifier; never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

#[derive(Debug, Clone, Copy)]
pub struct GraphNode {
    pub id: NodeId,
    pub time: f64,
    pub state: Pose,
    pub fixed: bool,
}

/// Rigid map from the local odometry frame to the global world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTransform {
    pub rotation: UnitQuat,
    pub translation: Vector3<f64>,
}

impl FrameTransform {
    pub fn identity() -> Self {
        FrameTransform { rotation: UnitQuat::identity(), translation: Vector3::zeros() }
    }
}

/// Transform satisfying `T * local = global` for the given pose pair.
pub fn frame_transform(node_state: &Pose, local_pose: &Pose) -> FrameTransform {
    let rotation = node_state.orientation.compose(&local_pose.orientation.inverse());
    let translation = node_state.position - rotation.rotate(&local_pose.position);
    FrameTransform { rotation, translation }
}

/// Applies a frame transform to a high-rate local pose.
pub fn predict_global(local_pose: &Pose, t: &FrameTransform) -> Pose {
    Pose {
        position: t.rotation.rotate(&local_pose.position) + t.translation,
        orientation: t.rotation.compose(&local_pose.orientation),
    }
}

/// A global measurement to associate with a node by timestamp.
#[derive(Debug, Clone)]
pub enum GlobalMeasurement {
    Gps(GpsMeasurement),
    Mag(MagMeasurement),
    Baro(BaroMeasurement),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachOutcome {
    Attached(NodeId),
    /// ahead of all nodes; retried on the next node creation
    Buffered,
    /// no node within the association tolerance
    Dropped,
    /// measurement failed validation (e.g. zero-norm magnetometer field)
    Rejected,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DropCounters {
    pub gps: u64,
    pub mag: u64,
    pub baro: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FactorCounts {
    pub local: u64,
    pub gps: u64,
    pub mag: u64,
    pub baro: u64,
}

/// Covariance policies and structural parameters of the graph.
#[derive(Debug, Clone)]
pub struct GraphConfig {
    /// minimum data-time spacing between nodes, seconds
    pub keyframe_interval: f64,
    /// maximum node count before trimming
    pub window_capacity: usize,
    /// timestamp association tolerance for global measurements, seconds
    pub association_tolerance: f64,
    pub local_noise: LocalNoiseParams,
    pub gps_base_sigma: f64,
    pub gps_loss: RobustLoss,
    pub mag_base_sigma: f64,
    pub mag_reference: MagReference,
    pub baro_default_variance: f64,
    /// number of trailing barometer samples used for the variance window
    pub baro_window: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            keyframe_interval: 0.1,
            window_capacity: 100_000,
            association_tolerance: 0.05,
            local_noise: LocalNoiseParams::default(),
            gps_base_sigma: 1.0,
            gps_loss: RobustLoss::Huber { delta: 1.0 },
            mag_base_sigma: 0.05,
            mag_reference: MagReference {
                world_field: Vector3::new(0.0, 1.0, 0.0),
                body_to_sensor: UnitQuat::identity(),
            },
            baro_default_variance: 1.0,
            baro_window: 10,
        }
    }
}

#[derive(Debug, Clone)]
struct PendingGlobal {
    measurement: GlobalMeasurement,
    time: f64,
}

/// Immutable view handed to the solver.
#[derive(Debug, Clone)]
pub struct GraphSnapshot {
    pub nodes: Vec<GraphNode>,
    pub factors: Vec<Factor>,
}

impl GraphSnapshot {
    /// Node ids are contiguous within a snapshot; maps an id to its index.
    pub fn index_of(&self, id: NodeId) -> usize {
        debug_assert!(!self.nodes.is_empty());
        (id.0 - self.nodes[0].id.0) as usize
    }
}

pub struct PoseGraph {
    config: GraphConfig,
    nodes: Vec<GraphNode>,
    factors: Vec<Factor>,
    enu_origin: Option<EnuOrigin>,
    next_id: u64,
    /// last odometry sample received, at any rate
    last_odometry: Option<(f64, Pose)>,
    /// local pose at the most recent keyframe
    last_keyframe_local: Option<(f64, Pose)>,
    pending: Vec<PendingGlobal>,
    drops: DropCounters,
    counts: FactorCounts,
    gps_attached: bool,
    baro_history: Vec<f64>,
}

impl PoseGraph {
    pub fn new(config: GraphConfig) -> Self {
        PoseGraph {
            config,
            nodes: Vec::new(),
            factors: Vec::new(),
            enu_origin: None,
            next_id: 0,
            last_odometry: None,
            last_keyframe_local: None,
            pending: Vec::new(),
            drops: DropCounters::default(),
            counts: FactorCounts::default(),
            gps_attached: false,
            baro_history: Vec::new(),
        }
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn drop_counters(&self) -> DropCounters {
        self.drops
    }

    pub fn factor_counts(&self) -> FactorCounts {
        self.counts
    }

    pub fn enu_origin(&self) -> Option<&EnuOrigin> {
        self.enu_origin.as_ref()
    }

    /// Set by the ingestion layer when the first LLA-frame GPS record arrives.
    pub fn set_enu_origin(&mut self, origin: EnuOrigin) {
        self.enu_origin.get_or_insert(origin);
    }

    /// Feeds one local odometry pose. Creates a node when the keyframe gate
    /// passes and returns its id; otherwise the pose only advances the
    /// high-rate state.
    pub fn add_odometry(
        &mut self,
        local_pose: Pose,
        t: f64,
        covariance: Option<DMatrix<f64>>,
    ) -> Result<Option<NodeId>, GraphError> {
        if let Some((last_t, _)) = self.last_odometry {
            if t <= last_t {
                return Err(GraphError::NonMonotoneTimestamp { t, last: last_t });
            }
        }
        self.last_odometry = Some((t, local_pose));

        if self.nodes.is_empty() {
            // bootstrap: the world frame starts at the first keyframe
            let id = self.push_node(t, Pose::identity(), true);
            self.last_keyframe_local = Some((t, local_pose));
            self.retry_pending();
            return Ok(Some(id));
        }

        let (kf_t, kf_local) = self.last_keyframe_local.expect("nodes imply a keyframe");
        if t - kf_t < self.config.keyframe_interval - 1e-9 {
            return Ok(None);
        }

        let step = relative_pose(&kf_local, &local_pose);
        let prev = *self.nodes.last().expect("nonempty");
        let state = prev.state.compose(&step);
        let id = self.push_node(t, state, false);
        let cov = match covariance {
            Some(c) => c,
            None => local_covariance(&step, &self.config.local_noise),
        };
        let factor = Factor::new(
            FactorNodes::Two(prev.id, id),
            FactorKind::Local(LocalMeasurement { relative: step }),
            cov,
            RobustLoss::None,
        )?;
        self.factors.push(factor);
        self.counts.local += 1;
        self.last_keyframe_local = Some((t, local_pose));
        self.retry_pending();
        Ok(Some(id))
    }

    fn push_node(&mut self, t: f64, state: Pose, fixed: bool) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        self.nodes.push(GraphNode { id, time: t, state, fixed });
        id
    }

    /// Associates a global measurement with the node nearest in time.
    pub fn attach_global(
        &mut self,
        measurement: GlobalMeasurement,
        t: f64,
    ) -> Result<AttachOutcome, GraphError> {
        match self.try_attach(&measurement, t)? {
            TryAttach::Attach(node) => match self.bind_measurement(measurement, node) {
                Ok(id) => Ok(AttachOutcome::Attached(id)),
                Err(GraphError::Factor(FactorError::ZeroNormMeasurement)) => {
                    self.drops.rejected += 1;
                    Ok(AttachOutcome::Rejected)
                }
                Err(e) => Err(e),
            },
            TryAttach::Ahead => {
                self.pending.push(PendingGlobal { measurement, time: t });
                Ok(AttachOutcome::Buffered)
            }
            TryAttach::NoMatch => {
                self.count_drop(&measurement);
                Ok(AttachOutcome::Dropped)
            }
        }
    }

    fn count_drop(&mut self, measurement: &GlobalMeasurement) {
        match measurement {
            GlobalMeasurement::Gps(_) => self.drops.gps += 1,
            GlobalMeasurement::Mag(_) => self.drops.mag += 1,
            GlobalMeasurement::Baro(_) => self.drops.baro += 1,
        }
    }

    fn try_attach(&self, _m: &GlobalMeasurement, t: f64) -> Result<TryAttach, GraphError> {
        let tol = self.config.association_tolerance;
        if self.nodes.is_empty() {
            return Ok(TryAttach::Ahead);
        }
        let last_t = self.nodes.last().unwrap().time;
        if t > last_t + tol {
            return Ok(TryAttach::Ahead);
        }
        // nearest node; ties go to the earlier one
        let idx = self.nodes.partition_point(|n| n.time < t);
        let mut best: Option<(f64, usize)> = None;
        for i in [idx.checked_sub(1), Some(idx)].into_iter().flatten() {
            if i < self.nodes.len() {
                let dt = (self.nodes[i].time - t).abs();
                let better = match best {
                    None => true,
                    Some((bdt, _)) => dt < bdt - 1e-15,
                };
                if better {
                    best = Some((dt, i));
                }
            }
        }
        match best {
            Some((dt, i)) if dt <= tol => Ok(TryAttach::Attach(self.nodes[i].id)),
            _ => Ok(TryAttach::NoMatch),
        }
    }

    fn bind_measurement(
        &mut self,
        measurement: GlobalMeasurement,
        node: NodeId,
    ) -> Result<NodeId, GraphError> {
        match measurement {
            GlobalMeasurement::Gps(z) => {
                let sats = z.satellites.unwrap_or(crate::factors::GPS_REFERENCE_SATELLITES);
                let cov3 = gps_covariance(sats, self.config.gps_base_sigma);
                let cov = DMatrix::from_column_slice(3, 3, cov3.as_slice());
                let factor = Factor::new(
                    FactorNodes::One(node),
                    FactorKind::Gps(z),
                    cov,
                    self.config.gps_loss,
                )?;
                self.factors.push(factor);
                self.counts.gps += 1;
                if !self.gps_attached {
                    // the first GPS fix anchors the world frame; release the
                    // bootstrap anchor so the graph can move onto it
                    self.gps_attached = true;
                    for n in &mut self.nodes {
                        n.fixed = false;
                    }
                }
                Ok(node)
            }
            GlobalMeasurement::Mag(z) => {
                let reference = self.config.mag_reference;
                let node_state = self.state_of(node);
                // validates the measurement; zero-norm fields are rejected
                mag_residual(&node_state, &z, &reference)?;
                let cov3 = mag_covariance(
                    z.field.norm(),
                    reference.world_field.norm(),
                    self.config.mag_base_sigma,
                );
                let cov = DMatrix::from_column_slice(3, 3, cov3.as_slice());
                let factor = Factor::new(
                    FactorNodes::One(node),
                    FactorKind::Mag { measurement: z, reference },
                    cov,
                    RobustLoss::None,
                )?;
                self.factors.push(factor);
                self.counts.mag += 1;
                Ok(node)
            }
            GlobalMeasurement::Baro(mut z) => {
                self.baro_history.push(z.height);
                let keep = self.config.baro_window.max(2);
                if self.baro_history.len() > keep {
                    let cut = self.baro_history.len() - keep;
                    self.baro_history.drain(..cut);
                }
                z.variance = baro_variance(&self.baro_history, self.config.baro_default_variance);
                let cov = DMatrix::from_vec(1, 1, vec![z.variance]);
                let factor = Factor::new(
                    FactorNodes::One(node),
                    FactorKind::Baro(z),
                    cov,
                    RobustLoss::None,
                )?;
                self.factors.push(factor);
                self.counts.baro += 1;
                Ok(node)
            }
        }
    }

    fn state_of(&self, id: NodeId) -> Pose {
        let first = self.nodes[0].id.0;
        self.nodes[(id.0 - first) as usize].state
    }

    fn retry_pending(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let pending = std::mem::take(&mut self.pending);
        for p in pending {
            match self.try_attach(&p.measurement, p.time) {
                Ok(TryAttach::Attach(node)) => match self.bind_measurement(p.measurement, node) {
                    Ok(_) => {}
                    Err(GraphError::Factor(FactorError::ZeroNormMeasurement)) => {
                        self.drops.rejected += 1;
                    }
                    Err(_) => self.drops.rejected += 1,
                },
                Ok(TryAttach::Ahead) => self.pending.push(p),
                Ok(TryAttach::NoMatch) | Err(_) => self.count_drop(&p.measurement),
            }
        }
    }

    /// Drops any still-buffered measurements (end of stream).
    pub fn drain_pending(&mut self) {
        let pending = std::mem::take(&mut self.pending);
        for p in pending {
            self.count_drop(&p.measurement);
        }
    }

    /// Removes the oldest nodes beyond the window capacity together with
    /// every factor touching them, anchors the new oldest node, and returns
    /// the removed nodes in time order.
    pub fn trim_window(&mut self) -> Vec<GraphNode> {
        if self.nodes.len() <= self.config.window_capacity {
            return Vec::new();
        }
        let excess = self.nodes.len() - self.config.window_capacity;
        let removed: Vec<GraphNode> = self.nodes.drain(..excess).collect();
        let first_kept = self.nodes[0].id;
        self.factors.retain(|f| f.nodes.ids().all(|id| id >= first_kept));
        for n in &mut self.nodes {
            n.fixed = false;
        }
        self.nodes[0].fixed = true;
        removed
    }

    /// Local-to-global transform at the newest node; `None` before the first node.
    pub fn latest_frame_transform(&self) -> Option<FrameTransform> {
        let node = self.nodes.last()?;
        let (_, local) = self.last_keyframe_local?;
        Some(frame_transform(&node.state, &local))
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot { nodes: self.nodes.clone(), factors: self.factors.clone() }
    }

    /// Applies optimized states back; fixed nodes are never touched.
    pub fn apply_states(&mut self, updated: &[(NodeId, Pose)]) {
        let first = match self.nodes.first() {
            Some(n) => n.id.0,
            None => return,
        };
        for (id, state) in updated {
            let idx = (id.0).wrapping_sub(first) as usize;
            if idx < self.nodes.len() && self.nodes[idx].id == *id && !self.nodes[idx].fixed {
                self.nodes[idx].state = *state;
            }
        }
    }

    /// Structural invariants; used by tests and debug builds.
    pub fn check_invariants(&self) -> Result<(), GraphError> {
        let mut fixed = 0;
        for w in self.nodes.windows(2) {
            if w[1].time <= w[0].time {
                return Err(GraphError::InvariantViolated(format!(
                    "node times not strictly increasing: {} then {}",
                    w[0].time, w[1].time
                )));
            }
            if w[1].id.0 != w[0].id.0 + 1 {
                return Err(GraphError::InvariantViolated("node ids not contiguous".into()));
            }
        }
        for n in &self.nodes {
            if n.fixed {
                fixed += 1;
            }
        }
        if fixed > 1 {
            return Err(GraphError::InvariantViolated(format!("{fixed} fixed nodes")));
        }
        let ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        let mut local_pairs = 0;
        for f in &self.factors {
            for id in f.nodes.ids() {
                if !ids.contains(&id) {
                    return Err(GraphError::InvariantViolated(format!(
                        "factor references missing node {:?}",
                        id
                    )));
                }
            }
            if let (FactorKind::Local(_), FactorNodes::Two(a, b)) = (&f.kind, &f.nodes) {
                if b.0 != a.0 + 1 {
                    return Err(GraphError::InvariantViolated(
                        "local factor not between consecutive nodes".into(),
                    ));
                }
                local_pairs += 1;
            }
        }
        if !self.nodes.is_empty() && local_pairs != self.nodes.len() - 1 {
            return Err(GraphError::InvariantViolated(format!(
                "{} local factors for {} nodes",
                local_pairs,
                self.nodes.len()
            )));
        }
        Ok(())
    }
}

enum TryAttach {
    Attach(NodeId),
    Ahead,
    NoMatch,
}
