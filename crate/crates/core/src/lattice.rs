//! Sampling-based trajectory planner in path (Frenet) coordinates.
//!
//! Candidates combine a constant-acceleration speed profile with a quartic
//! lateral polynomial `l(s)`. The best collision-free candidate under the
//! horizon-averaged reward wins; the grid is enlarged once before giving up.

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::dynamics::{normalize_angle, Trajectory, VehicleState, MAX_BRAKE, MAX_YAW_RATE};
use crate::error::PlanError;
use crate::features::{pair_ttc, safety_feature, FeatureVector, RewardWeights, FOOTPRINT_RADIUS};
use crate::scenario::{project_to_path, Point, ReferencePath};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrenetState {
    pub s: f64,
    pub s_dot: f64,
    pub l: f64,
    pub l_prime: f64,
}

pub fn cartesian_to_frenet(state: &VehicleState, path: &ReferencePath) -> FrenetState {
    let (s, l) = project_to_path(path, state.position());
    let (_, h) = path.pose_at(s);
    let k = path.curvature_at(s);
    let psi = normalize_angle(state.gamma - h);
    let one = 1.0 - k * l;
    FrenetState {
        s,
        s_dot: state.v * psi.cos() / one,
        l,
        l_prime: one * psi.tan(),
    }
}

pub fn frenet_to_cartesian(fs: &FrenetState, path: &ReferencePath) -> VehicleState {
    let p = path.frenet_point(fs.s, fs.l);
    let (_, h) = path.pose_at(fs.s);
    let one = 1.0 - path.curvature_at(fs.s) * fs.l;
    let psi = fs.l_prime.atan2(one);
    let v = fs.s_dot * one / psi.cos();
    VehicleState::new(p[0], p[1], v, normalize_angle(h + psi))
}

/// Quartic `l(u) = Σ c_i u^i` on `u = s - s_start ∈ [0, span]`, constant past `span`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralPoly {
    pub coeffs: [f64; 5],
    pub span: f64,
}

impl LateralPoly {
    pub fn eval(&self, u: f64) -> (f64, f64) {
        let u = u.clamp(0.0, self.span);
        let c = &self.coeffs;
        let l = c[0] + u * (c[1] + u * (c[2] + u * (c[3] + u * c[4])));
        let dl = c[1] + u * (2.0 * c[2] + u * (3.0 * c[3] + u * 4.0 * c[4]));
        (l, dl)
    }
}

/// Quartic matching `l, l'` at the start and `l, l' = 0, l'' = 0` at the end.
pub fn fit_polynomial(start: &FrenetState, end: &FrenetState, span: f64) -> LateralPoly {
    assert!(span > 0.0, "arc span must be positive");
    let s = span;
    #[rustfmt::skip]
    let m = Matrix5::new(
        1.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0, 0.0,
        1.0, s, s * s, s * s * s, s * s * s * s,
        0.0, 1.0, 2.0 * s, 3.0 * s * s, 4.0 * s * s * s,
        0.0, 0.0, 2.0, 6.0 * s, 12.0 * s * s,
    );
    let rhs = Vector5::new(start.l, start.l_prime, end.l, 0.0, 0.0);
    let c = m.lu().solve(&rhs).expect("boundary system is nonsingular for span > 0");
    LateralPoly {
        coeffs: [c[0], c[1], c[2], c[3], c[4]],
        span,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObstacleKind {
    /// Frozen at its current position.
    Static,
    /// Plan of a cooperating vehicle.
    Planned,
    /// Constant-speed prediction of a human driver.
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub id: u32,
    pub kind: ObstacleKind,
    /// `states[k]` is the pose `k` frames from now; extrapolated at constant velocity past the end.
    pub trajectory: Trajectory,
}

impl Obstacle {
    pub fn fixed(id: u32, p: Point) -> Self {
        Obstacle {
            id,
            kind: ObstacleKind::Static,
            trajectory: Trajectory {
                t0: 0.0,
                dt: 0.1,
                states: vec![VehicleState::new(p[0], p[1], 0.0, 0.0)],
            },
        }
    }

    fn state_at(&self, k: usize) -> VehicleState {
        let t = &self.trajectory;
        if k < t.states.len() {
            t.states[k]
        } else {
            let p = t.position_at(k);
            let last = t.states[t.states.len() - 1];
            VehicleState::new(p[0], p[1], last.v, last.gamma)
        }
    }
}

/// The ego footprint must stay out of the disc `(center, reach)` over
/// frames `[from, to]` (inclusive, relative to now).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeepOut {
    pub center: Point,
    pub reach: f64,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub margin: f64,
    pub horizons_s: Vec<f64>,
    pub speed_factors: Vec<f64>,
    pub lateral_offsets: Vec<f64>,
    pub enlarged_speed_factors: Vec<f64>,
    pub enlarged_lateral_offsets: Vec<f64>,
    pub creep_distances: Vec<f64>,
    pub max_accel: f64,
    /// Obstacles farther than this (plus travel) are skipped.
    pub relevance_radius: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 30,
            margin: 0.3,
            horizons_s: vec![1.0, 2.0, 3.0],
            speed_factors: vec![0.4, 0.7, 1.0],
            lateral_offsets: vec![-1.0, 0.0, 1.0],
            enlarged_speed_factors: (0..8).map(|i| 0.1 + 0.15 * i as f64).collect(),
            enlarged_lateral_offsets: (0..11).map(|i| -2.5 + 0.5 * i as f64).collect(),
            creep_distances: vec![0.5, 1.0, 2.0],
            max_accel: 2.0,
            relevance_radius: 40.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanRequest<'a> {
    pub start: VehicleState,
    pub path: &'a ReferencePath,
    pub obstacles: Vec<Obstacle>,
    pub keep_out: Vec<KeepOut>,
    /// Arclength of the in-stream predecessor at each frame. Candidates stay
    /// `2 * radius + margin` behind it whatever their lateral offset.
    pub lead: Option<Vec<f64>>,
    pub weights: RewardWeights,
    /// Desired cruise speed that scales the longitudinal samples.
    pub v_desired: f64,
    pub horizon: usize,
    pub dt: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Profile {
    /// Reach `v_end` at constant acceleration within `t_reach` seconds, then hold.
    Reach { v_end: f64, t_reach: f64 },
    /// Come to rest after `distance` meters.
    StopWithin { distance: f64 },
    /// Strongest braking to rest.
    FullStop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub trajectory: Trajectory,
    pub s: Vec<f64>,
    pub l: Vec<f64>,
    pub full_stop: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub trajectory: Trajectory,
    pub s: Vec<f64>,
    pub l: Vec<f64>,
    pub reward: f64,
    pub enlarged: bool,
}

fn speed_series(profile: Profile, v0: f64, n: usize, dt: f64, max_accel: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(n + 1);
    v.push(v0);
    match profile {
        Profile::Reach { v_end, t_reach } => {
            // Speed-ups use the full actuation limit: replanning every frame
            // would otherwise turn a (v_end - v0) / T ramp into a 1 s lag.
            let a = if v_end > v0 { max_accel } else { ((v_end - v0) / t_reach).max(-MAX_BRAKE) };
            for k in 1..=n {
                let prev = v[k - 1];
                let next = if a >= 0.0 { (prev + a * dt).min(v_end.max(v0)) } else { (prev + a * dt).max(v_end.min(v0)) };
                v.push(next.max(0.0));
            }
        }
        Profile::StopWithin { distance } => {
            // Gentle accelerate-then-brake envelope that rests at `distance`.
            let b = 2.0;
            let mut travelled = 0.0;
            for k in 1..=n {
                let prev = v[k - 1];
                travelled += prev * dt;
                let rem = (distance - travelled).max(0.0);
                let cap = (2.0 * b * rem).sqrt();
                let next = (prev + max_accel.min(1.0) * dt).min(cap).max(prev - MAX_BRAKE * dt).max(0.0);
                v.push(if next < 1e-9 { 0.0 } else { next });
            }
        }
        Profile::FullStop => {
            for k in 1..=n {
                let next = v[k - 1] - MAX_BRAKE * dt;
                v.push(if next < 1e-12 { 0.0 } else { next });
            }
        }
    }
    v
}

fn build_candidate(
    req: &PlanRequest,
    start: &FrenetState,
    profile: Profile,
    lateral: f64,
    cfg: &PlannerConfig,
) -> Candidate {
    let n = req.horizon;
    let dt = req.dt;
    let v = speed_series(profile, req.start.v, n, dt, cfg.max_accel);
    let t_span = match profile {
        Profile::Reach { t_reach, .. } => t_reach,
        _ => 3.0,
    };
    let frames_span = ((t_span / dt).round() as usize).min(n);
    let ds_span: f64 = v[..frames_span].iter().sum::<f64>() * dt;
    let span = ds_span.max(5.0);
    let poly = fit_polynomial(
        start,
        &FrenetState {
            l: lateral,
            ..FrenetState::default()
        },
        span,
    );

    let mut s = Vec::with_capacity(n + 1);
    let mut l = Vec::with_capacity(n + 1);
    let mut pts: Vec<Point> = Vec::with_capacity(n + 1);
    s.push(start.s);
    l.push(start.l);
    pts.push(req.start.position());
    for k in 0..n {
        let step = v[k] * dt;
        let (sk, lk) = (s[k], l[k]);
        let mut next_s = sk;
        let mut next_l = lk;
        let mut p = pts[k];
        if step > 0.0 {
            let (_, dl) = poly.eval(sk - start.s);
            let kappa = req.path.curvature_at(sk);
            let stretch = ((1.0 - kappa * lk).powi(2) + dl * dl).sqrt().max(1e-6);
            let mut ds = step / stretch;
            for _ in 0..8 {
                next_s = sk + ds;
                next_l = poly.eval(next_s - start.s).0;
                p = req.path.frenet_point(next_s, next_l);
                let d = crate::scenario::distance(p, pts[k]);
                if d <= step {
                    break;
                }
                ds *= step / d * 0.999;
            }
            if crate::scenario::distance(p, pts[k]) > step {
                next_s = sk;
                next_l = lk;
                p = pts[k];
            }
        }
        s.push(next_s);
        l.push(next_l);
        pts.push(p);
    }

    let mut states = Vec::with_capacity(n + 1);
    states.push(req.start);
    for k in 1..=n {
        let (_, h) = req.path.pose_at(s[k]);
        let (_, dl) = poly.eval(s[k] - start.s);
        let one = 1.0 - req.path.curvature_at(s[k]) * l[k];
        let gamma = normalize_angle(h + dl.atan2(one));
        states.push(VehicleState::new(pts[k][0], pts[k][1], v[k], gamma));
    }
    Candidate {
        trajectory: Trajectory { t0: 0.0, dt, states },
        s,
        l,
        full_stop: matches!(profile, Profile::FullStop),
    }
}

/// Stop profiles hold the current lateral offset: braking never steers.
fn grid(req: &PlanRequest, cfg: &PlannerConfig, enlarged: bool, hold: f64) -> Vec<(Profile, f64)> {
    let (factors, laterals) = if enlarged {
        (&cfg.enlarged_speed_factors, &cfg.enlarged_lateral_offsets)
    } else {
        (&cfg.speed_factors, &cfg.lateral_offsets)
    };
    let mut out = Vec::new();
    for &t in &cfg.horizons_s {
        for &c in factors {
            for &lat in laterals {
                out.push((
                    Profile::Reach {
                        v_end: c * req.v_desired,
                        t_reach: t,
                    },
                    lat,
                ));
            }
        }
    }
    if req.start.v < 0.1 {
        for &d in &cfg.creep_distances {
            out.push((Profile::StopWithin { distance: d }, hold));
        }
    }
    if enlarged {
        for &t in &cfg.horizons_s {
            let d = req.start.v * t / 2.0;
            if d > 0.0 {
                out.push((Profile::StopWithin { distance: d }, hold));
            }
        }
        out.push((Profile::FullStop, hold));
    }
    out
}

/// Candidates of the initial sampling grid.
pub fn sample_candidates(req: &PlanRequest, cfg: &PlannerConfig) -> Vec<Candidate> {
    let start = cartesian_to_frenet(&req.start, req.path);
    grid(req, cfg, false, start.l)
        .into_iter()
        .map(|(p, lat)| build_candidate(req, &start, p, lat, cfg))
        .collect()
}

/// Heading change per frame within the steering bound of the action set.
pub fn trackable(candidate: &Trajectory) -> bool {
    let limit = MAX_YAW_RATE * candidate.dt + 1e-9;
    candidate
        .states
        .windows(2)
        .all(|w| normalize_angle(w[1].gamma - w[0].gamma).abs() <= limit)
}

/// Center distance never below `2 * radius + margin` at any shared frame.
/// An obstacle already inside that distance must not get any closer.
pub fn collision_free(candidate: &Trajectory, obstacles: &[Obstacle], radius: f64, margin: f64) -> bool {
    let min = 2.0 * radius + margin;
    let p0 = candidate.states[0].position();
    obstacles.iter().all(|o| {
        let d0 = crate::scenario::dist2(p0, o.state_at(0).position());
        let min2 = (min * min).min(d0);
        (1..candidate.states.len()).all(|k| {
            let p = candidate.states[k].position();
            let q = o.state_at(k).position();
            crate::scenario::dist2(p, q) >= min2
        })
    })
}

fn keeps_behind(c: &Candidate, lead: &[f64], gap: f64) -> bool {
    c.s.iter().zip(lead).skip(1).all(|(s, l)| *s <= l - gap)
}

fn respects_keep_out(candidate: &Trajectory, zones: &[KeepOut]) -> bool {
    zones.iter().all(|z| {
        let hi = z.to.min(candidate.states.len() - 1);
        (z.from.max(1)..=hi).all(|k| crate::scenario::dist2(candidate.states[k].position(), z.center) > z.reach * z.reach)
    })
}

/// Horizon-averaged reward of a candidate against the obstacles.
pub fn candidate_reward(c: &Candidate, req: &PlanRequest) -> f64 {
    let n = c.trajectory.states.len() - 1;
    let len = req.path.length();
    let mut f = [0.0; 3];
    for k in 1..=n {
        let st = &c.trajectory.states[k];
        let (p, vp) = (st.position(), st.velocity());
        let ttc = req
            .obstacles
            .iter()
            .map(|o| {
                let os = o.state_at(k);
                pair_ttc(p, vp, os.position(), os.velocity(), FOOTPRINT_RADIUS)
            })
            .fold(f64::INFINITY, f64::min);
        f[0] -= (len - c.s[k]).max(0.0);
        f[1] -= c.l[k].abs();
        f[2] += safety_feature(ttc);
    }
    let nf = n as f64;
    req.weights.dot(&FeatureVector::new(f[0] / nf, f[1] / nf, f[2] / nf))
}

fn relevant(req: &PlanRequest, cfg: &PlannerConfig) -> Vec<Obstacle> {
    let reach = cfg.relevance_radius + req.start.v * req.horizon as f64 * req.dt;
    req.obstacles
        .iter()
        .filter(|o| {
            let st = &o.trajectory.states[0];
            let travel = o.trajectory.states.iter().map(|s| s.v).fold(0.0, f64::max) * req.horizon as f64 * req.dt;
            crate::scenario::distance(st.position(), req.start.position()) <= reach + travel
        })
        .cloned()
        .collect()
}

/// Candidates for one start state, shared by every request that differs
/// only in obstacles, keep-out windows or weights.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    base: Option<Vec<Candidate>>,
    enlarged: Option<Vec<Candidate>>,
}

impl CandidatePool {
    pub fn new() -> Self {
        CandidatePool::default()
    }

    fn get(&mut self, req: &PlanRequest, cfg: &PlannerConfig, enlarged: bool) -> &[Candidate] {
        let slot = if enlarged { &mut self.enlarged } else { &mut self.base };
        slot.get_or_insert_with(|| {
            let start = cartesian_to_frenet(&req.start, req.path);
            grid(req, cfg, enlarged, start.l)
                .into_iter()
                .map(|(p, lat)| build_candidate(req, &start, p, lat, cfg))
                .filter(|c| c.full_stop || trackable(&c.trajectory))
                .collect()
        })
    }
}

fn select(req: &PlanRequest, enlarged: bool, obstacles: &[Obstacle], candidates: &[Candidate]) -> Option<Plan> {
    let hard: Vec<Obstacle> = obstacles.iter().filter(|o| o.kind != ObstacleKind::Predicted).cloned().collect();
    let mut best: Option<(f64, &Candidate)> = None;
    for c in candidates {
        let ok = if c.full_stop {
            collision_free(&c.trajectory, &hard, FOOTPRINT_RADIUS, req.margin)
        } else {
            collision_free(&c.trajectory, obstacles, FOOTPRINT_RADIUS, req.margin)
                && respects_keep_out(&c.trajectory, &req.keep_out)
                && req.lead.as_ref().is_none_or(|l| keeps_behind(c, l, 2.0 * FOOTPRINT_RADIUS + req.margin))
        };
        if !ok {
            continue;
        }
        let r = candidate_reward(c, req);
        if best.as_ref().is_none_or(|(b, _)| r > *b) {
            best = Some((r, c));
        }
    }
    best.map(|(reward, c)| Plan {
        trajectory: c.trajectory.clone(),
        s: c.s.clone(),
        l: c.l.clone(),
        reward,
        enlarged,
    })
}

/// Best collision-free candidate; one enlarged retry, then `NoSolution`.
///
/// The full-stop profile is exempt from keep-out windows and from
/// predicted (human) obstacles, which are expected to yield to a stopped
/// vehicle.
pub fn plan(req: &PlanRequest, cfg: &PlannerConfig) -> Result<Plan, PlanError> {
    plan_with_pool(req, cfg, &mut CandidatePool::new())
}

/// `plan` reusing candidates from `pool`, which must have been built for
/// the same start state, path, desired speed, horizon and step.
pub fn plan_with_pool(req: &PlanRequest, cfg: &PlannerConfig, pool: &mut CandidatePool) -> Result<Plan, PlanError> {
    let obstacles = relevant(req, cfg);
    if let Some(p) = select(req, false, &obstacles, pool.get(req, cfg, false)) {
        return Ok(p);
    }
    select(req, true, &obstacles, pool.get(req, cfg, true)).ok_or(PlanError::NoSolution)
}
