//! The simulate, sweep, calibrate and metrics subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ncl_core::export::{fmt6, read_trajectories, write_pet_events, write_trajectories};
use ncl_core::irl::{
    demos_from_tracks, elbow_k, elbow_sse, extract_cluster_features, generate_synthetic_demos, kmeans, maxent_irl,
    ClusterFeatures, ExpertDemo, IrlConfig, SyntheticConfig, Track,
};
use ncl_core::metrics::VehicleMetrics;
use ncl_core::{
    build_intersection, run_with_log, summarize, ConflictCounts, DriverKind, DriverProfile, IntersectionLayout, Method,
    MetricsError, RewardWeights, SimConfig, SimLog, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::CliError;

pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PET_FILE: &str = "pet.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Contents of metrics.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub status: String,
    pub frames_run: u64,
    pub spawned: usize,
    /// Zero when recomputed from a trajectories file, which stores no exits.
    pub exited: usize,
    pub unspawned: usize,
    /// Absent when no vehicle ever entered the network.
    pub avg_travel_speed: Option<f64>,
    pub total_delay: f64,
    pub conflict_counts: ConflictCounts,
    pub pet_count: usize,
    pub per_vehicle: Vec<VehicleMetrics>,
}

fn layout_of(cfg: &SimConfig) -> Result<IntersectionLayout, CliError> {
    build_intersection(&cfg.scenario).map_err(|e| CliError::Config(e.to_string()))
}

/// Writes metrics.json and pet.csv for `log`; returns the metrics and the file bytes.
fn metrics_files(log: &SimLog, layout: &IntersectionLayout, status: String) -> Result<(RunMetrics, Vec<u8>, Vec<u8>), CliError> {
    let (summary, pets) = match summarize(log, layout) {
        Ok(s) => {
            let pets = s.pet_list.clone();
            (Some(s), pets)
        }
        Err(MetricsError::EmptyLog) => (None, Vec::new()),
    };
    let m = RunMetrics {
        status,
        frames_run: log.frames_run,
        spawned: log.spawned(),
        exited: log.exited(),
        unspawned: log.unspawned,
        avg_travel_speed: summary.as_ref().map(|s| s.avg_travel_speed),
        total_delay: summary.as_ref().map_or(0.0, |s| s.total_delay),
        conflict_counts: summary.as_ref().map(|s| s.conflict_counts).unwrap_or_default(),
        pet_count: pets.len(),
        per_vehicle: summary.map(|s| s.per_vehicle).unwrap_or_default(),
    };
    let mut json = serde_json::to_vec_pretty(&m).map_err(|e| CliError::Io(e.into()))?;
    json.push(b'\n');
    let mut pet = Vec::new();
    write_pet_events(&pets, &mut pet)?;
    Ok((m, json, pet))
}

/// Runs one simulation and writes the four output files to `out`. A failed
/// run still writes its partial outputs before the error is returned.
pub fn simulate(cfg: &SimConfig, out: &Path) -> Result<RunMetrics, CliError> {
    let layout = layout_of(cfg)?;
    let (log, err) = run_with_log(cfg);
    let status = err.as_ref().map_or_else(|| "ok".to_string(), |e| e.to_string());
    std::fs::create_dir_all(out)?;
    let mut traj = Vec::new();
    write_trajectories(&log, &mut traj)?;
    let (metrics, json, pet) = metrics_files(&log, &layout, status.clone())?;
    let mut manifest = RunManifest::new(cfg, status);
    for (name, bytes) in [(TRAJECTORIES_FILE, &traj), (METRICS_FILE, &json), (PET_FILE, &pet)] {
        std::fs::write(out.join(name), bytes)?;
        manifest.record(name, bytes);
    }
    let mut mj = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.into()))?;
    mj.push(b'\n');
    std::fs::write(out.join(MANIFEST_FILE), mj)?;
    match err {
        Some(e) => Err(CliError::Sim(e)),
        None => Ok(metrics),
    }
}

/// Recomputes metrics.json and pet.csv from a trajectories file.
pub fn recompute_metrics(trajectories: &Path, cfg: &SimConfig, out: &Path) -> Result<RunMetrics, CliError> {
    let layout = layout_of(cfg)?;
    let file = std::fs::File::open(trajectories)?;
    let log = read_trajectories(std::io::BufReader::new(file))?;
    let (metrics, json, pet) = metrics_files(&log, &layout, "recomputed".to_string())?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(METRICS_FILE), json)?;
    std::fs::write(out.join(PET_FILE), pet)?;
    Ok(metrics)
}

#[derive(Debug, Clone)]
pub struct SweepAxes {
    pub methods: Vec<Method>,
    pub volumes: Vec<f64>,
    pub rops: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub volume: f64,
    pub rop: f64,
    /// Seeds that finished without error; the averages cover only these.
    pub seed_count: usize,
    pub avg_speed: Option<f64>,
    pub total_delay: Option<f64>,
    pub status: String,
}

pub fn cell_dir(out: &Path, method: Method, volume: f64, rop: f64, seed: u64) -> PathBuf {
    out.join(format!("{}_v{volume}_r{rop}_s{seed}", method.as_str()))
}

/// Runs the Cartesian product of the axes, one subdirectory per run, and
/// writes sweep.csv with one row per (method, volume, rop).
pub fn sweep(base: &SimConfig, axes: &SweepAxes, out: &Path) -> Result<Vec<SweepRow>, CliError> {
    if axes.methods.is_empty() || axes.volumes.is_empty() || axes.rops.is_empty() || axes.seeds.is_empty() {
        return Err(CliError::Config("every sweep axis needs at least one value".into()));
    }
    let mut rows = Vec::new();
    for &method in &axes.methods {
        for &volume in &axes.volumes {
            for &rop in &axes.rops {
                let mut speeds = Vec::new();
                let mut delays = Vec::new();
                let mut failures = Vec::new();
                for &seed in &axes.seeds {
                    let cfg = SimConfig {
                        method,
                        lane_volume: volume,
                        rop,
                        seed,
                        ..base.clone()
                    };
                    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
                    match simulate(&cfg, &cell_dir(out, method, volume, rop, seed)) {
                        Ok(m) => {
                            if let Some(v) = m.avg_travel_speed {
                                speeds.push(v);
                            }
                            delays.push(m.total_delay);
                        }
                        Err(CliError::Sim(e)) => failures.push(format!("seed {seed}: {e}")),
                        Err(e) => return Err(e),
                    }
                }
                let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
                rows.push(SweepRow {
                    method,
                    volume,
                    rop,
                    seed_count: delays.len(),
                    avg_speed: mean(&speeds),
                    total_delay: mean(&delays),
                    status: if failures.is_empty() {
                        "ok".to_string()
                    } else {
                        format!("failed {}/{}: {}", failures.len(), axes.seeds.len(), failures.join("; "))
                    },
                });
            }
        }
    }
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join(SWEEP_FILE)).map_err(|e| CliError::Io(e.into()))?;
    let io = |e: csv::Error| CliError::Io(e.into());
    w.write_record(["method", "volume", "rop", "seed_count", "avg_speed", "total_delay", "status"])
        .map_err(io)?;
    for r in &rows {
        w.write_record([
            r.method.as_str().to_string(),
            r.volume.to_string(),
            r.rop.to_string(),
            r.seed_count.to_string(),
            r.avg_speed.map(fmt6).unwrap_or_default(),
            r.total_delay.map(fmt6).unwrap_or_default(),
            r.status.clone(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub enum DemoSource {
    /// Trajectories file in the simulator's output format.
    File(PathBuf),
    /// Demos planted with each driver preset.
    Synthetic { scenarios: usize },
}

#[derive(Debug, Clone)]
pub struct CalibrateOptions {
    pub source: DemoSource,
    /// Cluster count; chosen by the elbow of the SSE curve when absent.
    pub clusters: Option<usize>,
    pub irl: IrlConfig,
    pub seed: u64,
    /// Frames between consecutive demos taken from one recorded track.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub index: usize,
    pub members: usize,
    pub demos: usize,
    pub center: ClusterFeatures,
    /// Absent when no member produced a demo.
    pub weights: Option<RewardWeights>,
    pub theta_normalized: Option<[f64; 3]>,
    pub likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub driver_type: DriverKind,
    pub planted: RewardWeights,
    pub recovered: RewardWeights,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub source: String,
    pub k: usize,
    /// SSE per cluster count 1..=len, when the elbow picked k.
    pub sse_curve: Vec<f64>,
    pub clusters: Vec<ClusterReport>,
    /// Per-preset fit on its own demos; synthetic runs only.
    pub recovery: Vec<RecoveryReport>,
    /// w_eff aggressive > normal > conservative and w_safe the reverse.
    pub orderings_hold: Option<bool>,
}

pub fn cosine(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Per-vehicle tracks of a log, in frame order.
fn tracks_of(log: &SimLog) -> Vec<Track> {
    let mut by_id: BTreeMap<u32, Vec<_>> = BTreeMap::new();
    for r in &log.records {
        by_id.entry(r.vehicle_id).or_default().push(r);
    }
    by_id
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_by_key(|r| r.frame);
            Track {
                id,
                stream: rs[0].stream,
                first_frame: rs[0].frame,
                states: rs.iter().map(|r| r.state).collect(),
            }
        })
        .collect()
}

fn irl_err(e: ncl_core::IrlError) -> CliError {
    CliError::DemoFormat(e.to_string())
}

/// Cluster units (one feature row each) and the demos each unit owns.
struct Units {
    features: Vec<ClusterFeatures>,
    demos: Vec<Vec<ExpertDemo>>,
}

fn file_units(path: &Path, layout: &IntersectionLayout, opts: &CalibrateOptions) -> Result<Units, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::DemoFormat(format!("{}: {e}", path.display())))?;
    let log = read_trajectories(std::io::BufReader::new(file)).map_err(|e| CliError::DemoFormat(e.to_string()))?;
    // Short tracks still act as opponents; they just yield no demos.
    let tracks: Vec<Track> = tracks_of(&log).into_iter().filter(|t| t.states.len() >= 2).collect();
    if tracks.iter().all(|t| t.states.len() <= opts.irl.horizon) {
        return Err(CliError::DemoFormat(format!(
            "{}: no track longer than the {}-frame horizon",
            path.display(),
            opts.irl.horizon
        )));
    }
    let features = tracks
        .iter()
        .map(|t| extract_cluster_features(&t.trajectory(log.dt)))
        .collect::<Result<_, _>>()
        .map_err(irl_err)?;
    Ok(Units {
        features,
        demos: demos_from_tracks(&tracks, layout, opts.irl.horizon, opts.stride, log.dt),
    })
}

pub fn calibrate(cfg: &SimConfig, opts: &CalibrateOptions) -> Result<CalibrationReport, CliError> {
    opts.irl.validate().map_err(CliError::Config)?;
    let layout = layout_of(cfg)?;
    let mut recovery = Vec::new();
    let (source, units) = match &opts.source {
        DemoSource::File(path) => (format!("file:{}", path.display()), file_units(path, &layout, opts)?),
        DemoSource::Synthetic { scenarios } => {
            let syn = SyntheticConfig {
                horizon: opts.irl.horizon,
                dt: cfg.dt,
                ..SyntheticConfig::default()
            };
            let mut units = Units {
                features: Vec::new(),
                demos: Vec::new(),
            };
            // Scenario seeds are shared by the three presets.
            let mut seeds = ChaCha8Rng::seed_from_u64(opts.seed);
            let scenario_seeds: Vec<u64> = (0..(*scenarios).max(1)).map(|_| seeds.random()).collect();
            for kind in DriverKind::ALL {
                let preset = DriverProfile::preset(kind);
                let mut all = Vec::new();
                for &seed in &scenario_seeds {
                    let demos = generate_synthetic_demos(&preset, &layout, 1, seed, &syn);
                    // Cluster on the states the driver actually went through.
                    let driven = Trajectory {
                        t0: 0.0,
                        dt: syn.dt,
                        states: demos.iter().filter_map(|d| d.context.as_ref().map(|c| c.ego)).collect(),
                    };
                    if let Ok(f) = extract_cluster_features(&driven) {
                        units.features.push(f);
                        units.demos.push(demos.clone());
                    }
                    all.extend(demos);
                }
                let fit = maxent_irl(&all, &opts.irl, opts.seed).map_err(irl_err)?;
                recovery.push(RecoveryReport {
                    driver_type: kind,
                    planted: preset.weights,
                    recovered: fit.weights,
                    cosine: cosine(preset.weights.to_array(), fit.weights.to_array()),
                });
            }
            ("synthetic".to_string(), units)
        }
    };
    let n = units.features.len();
    let (k, sse_curve) = match opts.clusters {
        Some(k) if k == 0 || k > n => {
            return Err(CliError::Config(format!("--clusters must lie in 1..={n}, got {k}")));
        }
        Some(k) => (k, Vec::new()),
        None => {
            let sse = elbow_sse(&units.features, n.min(8), opts.seed).map_err(irl_err)?;
            (elbow_k(&sse), sse)
        }
    };
    let km = kmeans(&units.features, k, opts.seed).map_err(irl_err)?;
    let mut clusters = Vec::with_capacity(k);
    for (index, center) in km.centers.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| km.labels[i] == index).collect();
        let demos: Vec<ExpertDemo> = members.iter().flat_map(|&i| units.demos[i].iter().cloned()).collect();
        let fit = if demos.is_empty() {
            None
        } else {
            Some(maxent_irl(&demos, &opts.irl, opts.seed).map_err(irl_err)?)
        };
        clusters.push(ClusterReport {
            index,
            members: members.len(),
            demos: demos.len(),
            center: *center,
            weights: fit.as_ref().map(|f| f.weights),
            theta_normalized: fit.as_ref().map(|f| f.theta_normalized),
            likelihood_trace: fit.map(|f| f.likelihood_trace).unwrap_or_default(),
        });
    }
    if clusters.iter().all(|c| c.weights.is_none()) {
        return Err(CliError::DemoFormat("no demonstrations".into()));
    }
    let orderings_hold = (recovery.len() == 3).then(|| {
        let w = |i: usize| recovery[i].recovered;
        w(0).w_eff > w(1).w_eff && w(1).w_eff > w(2).w_eff && w(2).w_safe > w(1).w_safe && w(1).w_safe > w(0).w_safe
    });
    Ok(CalibrationReport {
        source,
        k,
        sse_curve,
        clusters,
        recovery,
        orderings_hold,
    })
}
