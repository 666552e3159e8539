//! Run orchestration for the four commands: simulate, fuse, evaluate, plot.
//!
//! The fuse pipeline replays sensor files in data-time order through the
//! pose graph, runs an optimization cycle every `optimize_period` seconds of
//! data, and emits the optimized node trajectory, the high-rate predicted
//! trajectory, and a deterministic run log. Everything is keyed to data
//! time, never wall time, so replays are reproducible byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluation::{self, MetricReport, Trajectory};
use crate::factors::{BaroMeasurement, GpsMeasurement, MagMeasurement};
use crate::geodesy::{lla_to_enu, pressure_to_height, EnuOrigin};
use crate::graph::{GlobalMeasurement, GraphError, GraphNode, PoseGraph, predict_global};
use crate::io::{
    self, BaroKind, EvaluateOptions, GpsFrame, GpsRecord, IoError, RunConfig,
};
use crate::manifold::Pose;
use crate::simulate::{self, Scenario, SimulateError};
use crate::solver::{self, SolverError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Evaluation(#[from] evaluation::EvaluationError),
    #[error("{0}")]
    Data(String),
}

impl PipelineError {
    /// CLI exit code: 1 usage/config, 2 data, 3 numeric/gauge.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Io(IoError::Config(_)) => 1,
            PipelineError::Solver(_) | PipelineError::Graph(GraphError::Factor(_)) => 3,
            _ => 2,
        }
    }
}

fn ensure_out_dir(out_dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Config(format!("cannot create {}: {e}", out_dir.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Output files produced by the simulate command.
#[derive(Debug, Clone)]
pub struct SimulateOutputs {
    pub truth: PathBuf,
    pub odometry: PathBuf,
    pub gps: PathBuf,
    pub mag: PathBuf,
    pub baro: PathBuf,
}

/// Generates the scenario streams and writes them as fuse-ready input files.
pub fn run_simulate(scenario: &Scenario, out_dir: &Path) -> Result<SimulateOutputs, PipelineError> {
    ensure_out_dir(out_dir)?;
    let streams = simulate::generate(scenario)?;
    let start = streams.truth.samples()[0];
    let local = simulate::integrate_odometry(start.time, &Pose::identity(), &streams.odometry);

    let outputs = SimulateOutputs {
        truth: out_dir.join("truth.txt"),
        odometry: out_dir.join("odometry.txt"),
        gps: out_dir.join("gps.txt"),
        mag: out_dir.join("mag.txt"),
        baro: out_dir.join("baro.txt"),
    };
    io::write_trajectory(&outputs.truth, &streams.truth)?;
    io::write_trajectory(&outputs.odometry, &local)?;
    io::write_gps_enu(&outputs.gps, &streams.gps)?;
    io::write_mag(&outputs.mag, &streams.mag)?;
    io::write_baro_heights(&outputs.baro, &streams.baro)?;
    Ok(outputs)
}

enum Event {
    Odometry(f64, Pose),
    Global(f64, GlobalMeasurement),
}

impl Event {
    fn time(&self) -> f64 {
        match self {
            Event::Odometry(t, _) => *t,
            Event::Global(t, _) => *t,
        }
    }

    /// replay priority for equal timestamps: odometry first, then gps/mag/baro
    fn priority(&self) -> u8 {
        match self {
            Event::Odometry(..) => 0,
            Event::Global(_, GlobalMeasurement::Gps(_)) => 1,
            Event::Global(_, GlobalMeasurement::Mag(_)) => 2,
            Event::Global(_, GlobalMeasurement::Baro(_)) => 3,
        }
    }
}

/// Summary of a fuse run, also serialized into the run log.
#[derive(Debug, Clone)]
pub struct FuseSummary {
    pub fused_path: PathBuf,
    pub highrate_path: PathBuf,
    pub log_path: PathBuf,
    pub nodes: usize,
    pub cycles: usize,
    pub warnings: Vec<String>,
}

pub fn run_fuse(config: &RunConfig, out_dir: &Path) -> Result<FuseSummary, PipelineError> {
    ensure_out_dir(out_dir)?;
    let mut required: Vec<(&str, Option<&PathBuf>)> = vec![("odometry", Some(&config.odometry_path))];
    if config.enable_gps {
        required.push(("gps", config.gps_path.as_ref()));
    }
    if config.enable_mag {
        required.push(("mag", config.mag_path.as_ref()));
    }
    if config.enable_baro {
        required.push(("baro", config.baro_path.as_ref()));
    }
    for (name, path) in required {
        let path = path
            .ok_or_else(|| PipelineError::Config(format!("enable_{name} set but no {name} file")))?;
        if !path.is_file() {
            return Err(PipelineError::Config(format!(
                "{name} file {} does not exist",
                path.display()
            )));
        }
    }

    let mut warnings = Vec::new();
    let mut log = String::new();
    log.push_str("# fuse run log\n");
    let _ = writeln!(log, "config_sha256 = {}", sha256_hex(config.source_text.as_bytes()));

    // ingest inputs
    let odometry = io::read_trajectory(&config.odometry_path)?;
    let _ = writeln!(
        log,
        "input_odometry = {} sha256 {}",
        config.odometry_path.display(),
        file_digest(&config.odometry_path)?
    );

    let mut events: Vec<Event> = odometry
        .samples()
        .iter()
        .map(|s| Event::Odometry(s.time, s.pose))
        .collect();

    let mut graph = PoseGraph::new(config.graph.clone());

    if config.enable_gps {
        let path = config
            .gps_path
            .as_ref()
            .ok_or_else(|| PipelineError::Config("enable_gps set but no gps file".into()))?;
        let (frame, records) = io::read_gps(path)?;
        let _ = writeln!(log, "input_gps = {} sha256 {}", path.display(), file_digest(path)?);
        let mut origin: Option<EnuOrigin> = None;
        for r in &records {
            let (t, position, sats) = match (frame, r) {
                (GpsFrame::Enu, GpsRecord::Enu { time, position, satellites }) => {
                    (*time, *position, *satellites)
                }
                (GpsFrame::Lla, GpsRecord::Lla { time, point, satellites }) => {
                    // the first fix anchors the ENU world frame
                    let origin = origin.get_or_insert_with(|| EnuOrigin::new(*point));
                    (*time, lla_to_enu(point, origin), *satellites)
                }
                _ => unreachable!("record frame matches file frame"),
            };
            events.push(Event::Global(
                t,
                GlobalMeasurement::Gps(GpsMeasurement {
                    position,
                    satellites: Some(sats),
                    time: t,
                }),
            ));
        }
        if let Some(origin) = origin {
            graph.set_enu_origin(origin);
        }
    }

    if config.enable_mag {
        let path = config
            .mag_path
            .as_ref()
            .ok_or_else(|| PipelineError::Config("enable_mag set but no mag file".into()))?;
        let records = io::read_mag(path)?;
        let _ = writeln!(log, "input_mag = {} sha256 {}", path.display(), file_digest(path)?);
        for r in &records {
            events.push(Event::Global(
                r.time,
                GlobalMeasurement::Mag(MagMeasurement { field: r.field, time: r.time }),
            ));
        }
    }

    if config.enable_baro {
        let path = config
            .baro_path
            .as_ref()
            .ok_or_else(|| PipelineError::Config("enable_baro set but no baro file".into()))?;
        let (kind, records) = io::read_baro(path)?;
        let _ = writeln!(log, "input_baro = {} sha256 {}", path.display(), file_digest(path)?);
        let reference_pressure = records.first().map(|r| r.value);
        for r in &records {
            let height = match kind {
                BaroKind::HeightM => r.value,
                BaroKind::PressurePa => pressure_to_height(
                    r.value,
                    reference_pressure.expect("nonempty"),
                    config.baro_meters_per_pascal,
                )
                .map_err(|e| PipelineError::Data(e.to_string()))?,
            };
            events.push(Event::Global(
                r.time,
                // variance is reassigned from the sliding window at attach time
                GlobalMeasurement::Baro(BaroMeasurement { height, variance: 1.0, time: r.time }),
            ));
        }
    }

    if !config.enable_gps && !config.enable_mag && !config.enable_baro {
        warnings.push("all global sensors disabled: output is dead-reckoned odometry".to_string());
    }

    events.sort_by(|a, b| {
        a.time()
            .partial_cmp(&b.time())
            .expect("finite timestamps")
            .then(a.priority().cmp(&b.priority()))
    });

    // replay
    let mut transform = crate::graph::FrameTransform::identity();
    let mut highrate = Trajectory::new();
    let mut archive: Vec<GraphNode> = Vec::new();
    let mut cycles = 0usize;
    let t0 = events.first().map(|e| e.time()).unwrap_or(0.0);
    let mut next_cycle = t0 + config.optimize_period;

    let solver_options = config.solver.clone();
    let run_cycle = |graph: &mut PoseGraph,
                     transform: &mut crate::graph::FrameTransform,
                     archive: &mut Vec<GraphNode>,
                     cycles: &mut usize,
                     log: &mut String,
                     label: f64|
     -> Result<(), PipelineError> {
        let snapshot = graph.snapshot();
        if snapshot.nodes.is_empty() || snapshot.nodes.iter().all(|n| n.fixed) {
            return Ok(());
        }
        let outcome = solver::optimize(&snapshot, &solver_options)?;
        graph.apply_states(&outcome.states);
        if let Some(t) = graph.latest_frame_transform() {
            *transform = t;
        }
        archive.extend(graph.trim_window());
        *cycles += 1;
        let r = &outcome.report;
        let _ = writeln!(
            log,
            "cycle t={label} nodes={} iters={} cost0={:.6e} cost1={:.6e} grad={:.3e} term={:?}",
            snapshot.nodes.len(),
            r.iterations,
            r.initial_cost,
            r.final_cost,
            r.final_gradient_norm,
            r.termination
        );
        Ok(())
    };

    for event in &events {
        while event.time() >= next_cycle - 1e-12 {
            run_cycle(&mut graph, &mut transform, &mut archive, &mut cycles, &mut log, next_cycle)?;
            next_cycle += config.optimize_period;
        }
        match event {
            Event::Odometry(t, pose) => {
                graph.add_odometry(*pose, *t, None)?;
                highrate
                    .push(*t, predict_global(pose, &transform))
                    .map_err(|e| PipelineError::Data(e.to_string()))?;
            }
            Event::Global(t, m) => {
                if graph.attach_global(m.clone(), *t)? == crate::graph::AttachOutcome::Rejected {
                    warnings.push(format!("t={t}: invalid measurement rejected"));
                }
            }
        }
    }
    graph.drain_pending();
    // final cycle over whatever data remains
    run_cycle(&mut graph, &mut transform, &mut archive, &mut cycles, &mut log, next_cycle)?;

    if graph.nodes().is_empty() {
        return Err(PipelineError::Data("no odometry records; nothing to fuse".into()));
    }

    // fused output: archived (trimmed) nodes followed by the live window
    let mut fused = Trajectory::new();
    for n in archive.iter().chain(graph.nodes()) {
        fused
            .push(n.time, n.state)
            .map_err(|e| PipelineError::Data(e.to_string()))?;
    }

    let counts = graph.factor_counts();
    let drops = graph.drop_counters();
    let _ = writeln!(
        log,
        "factors local={} gps={} mag={} baro={}",
        counts.local, counts.gps, counts.mag, counts.baro
    );
    let _ = writeln!(
        log,
        "dropped gps={} mag={} baro={} rejected={}",
        drops.gps, drops.mag, drops.baro, drops.rejected
    );
    let _ = writeln!(log, "nodes = {}", archive.len() + graph.nodes().len());
    let _ = writeln!(log, "cycles = {cycles}");
    for w in &warnings {
        let _ = writeln!(log, "warning = {w}");
    }

    let summary = FuseSummary {
        fused_path: out_dir.join("fused.txt"),
        highrate_path: out_dir.join("highrate.txt"),
        log_path: out_dir.join("run_log.txt"),
        nodes: archive.len() + graph.nodes().len(),
        cycles,
        warnings,
    };
    io::write_trajectory(&summary.fused_path, &fused)?;
    io::write_trajectory(&summary.highrate_path, &highrate)?;
    crate::io::write_atomic_pub(&summary.log_path, &log)?;
    Ok(summary)
}

/// Renders the metric report in both human-readable and key-value forms.
pub fn run_evaluate(
    est_path: &Path,
    gt_path: &Path,
    options: &EvaluateOptions,
    out_dir: &Path,
) -> Result<MetricReport, PipelineError> {
    ensure_out_dir(out_dir)?;
    let est = io::read_trajectory(est_path)?;
    let gt = io::read_trajectory(gt_path)?;
    let report = evaluation::evaluate(
        &est,
        &gt,
        &options.rpe_lengths,
        options.association_tolerance,
        options.similarity,
    )?;

    // paths stay out of the report files so identical runs into different
    // output directories stay byte-identical
    eprintln!("evaluating {} against {}", est_path.display(), gt_path.display());
    let mut human = String::new();
    let _ = writeln!(human, "trajectory evaluation");
    let _ = writeln!(human, "  pairs: {} (est {}, gt {})", report.pairs, report.est_samples, report.gt_samples);
    let _ = writeln!(human, "  ATE RMSE: {:.6} m", report.ate_rmse);
    if report.rpe.empty {
        let _ = writeln!(human, "  RPE: trajectory shorter than every segment length");
    } else {
        let _ = writeln!(human, "  RPE  length[m]  trans[%]  rot[deg/100m]  segments");
        for b in &report.rpe.buckets {
            let _ = writeln!(
                human,
                "       {:>9.1}  {:>8.4}  {:>13.6}  {:>8}",
                b.length, b.translation_percent, b.rotation_deg_per_100m, b.count
            );
        }
    }

    let mut kv = String::new();
    let _ = writeln!(kv, "ate_rmse_m = {}", report.ate_rmse);
    let _ = writeln!(kv, "pairs = {}", report.pairs);
    let _ = writeln!(kv, "rpe_empty = {}", report.rpe.empty);
    for b in &report.rpe.buckets {
        let _ = writeln!(kv, "rpe_{}m_translation_percent = {}", b.length, b.translation_percent);
        let _ = writeln!(kv, "rpe_{}m_rotation_deg_per_100m = {}", b.length, b.rotation_deg_per_100m);
        let _ = writeln!(kv, "rpe_{}m_segments = {}", b.length, b.count);
    }

    crate::io::write_atomic_pub(&out_dir.join("report.txt"), &human)?;
    crate::io::write_atomic_pub(&out_dir.join("report.kv"), &kv)?;
    print!("{human}");
    Ok(report)
}

/// Emits aligned x/y/z series for any number of trajectories; the first is
/// the reference, every other is rigidly aligned onto it. The legend lives
/// in the file header.
pub fn run_plot(paths: &[PathBuf], out_file: &Path) -> Result<(), PipelineError> {
    if paths.is_empty() {
        return Err(PipelineError::Config("plot needs at least one trajectory".into()));
    }
    let mut out = String::new();
    out.push_str("# overlay plot data\n");
    out.push_str("# columns: series t x y z\n");
    let reference = io::read_trajectory(&paths[0])?;
    let _ = writeln!(out, "# series 0: {} (reference)", paths[0].display());

    let mut series: Vec<(usize, Trajectory)> = vec![(0, reference.clone())];
    for (i, path) in paths.iter().enumerate().skip(1) {
        let traj = io::read_trajectory(path)?;
        let pairs = evaluation::associate(&traj, &reference, 0.1)?;
        let est: Vec<_> = pairs.iter().map(|&(e, _)| traj.samples()[e].pose.position).collect();
        let gt: Vec<_> = pairs.iter().map(|&(_, g)| reference.samples()[g].pose.position).collect();
        let aligned = match evaluation::horn_align(&est, &gt) {
            Ok(t) => traj.transformed(&t),
            // degenerate geometry: emit unaligned rather than fail the plot
            Err(_) => traj,
        };
        let _ = writeln!(out, "# series {i}: {}", path.display());
        series.push((i, aligned));
    }
    for (i, traj) in &series {
        for s in traj.samples() {
            let p = s.pose.position;
            let _ = writeln!(out, "{i} {} {} {} {}", s.time, p.x, p.y, p.z);
        }
    }
    if let Some(parent) = out_file.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_out_dir(parent)?;
        }
    }
    crate::io::write_atomic_pub(out_file, &out)?;
    Ok(())
}
