//! Intersection geometry: approaches, traffic streams, reference paths and
//! the conflict points where stream paths cross.
//!
//! The intersection is centred on the origin with right-hand traffic. Each
//! road carries up to two inbound and two outbound lanes, so the conflict
//! box is a square of half-width `2 * lane_width`. Approach `i` is the road
//! vehicles arrive *from*: 0 = north, 1 = east, 2 = south, 3 = west.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;

/// Maximum spacing between resampled polyline points, meters.
pub const RESAMPLE_SPACING: f64 = 0.5;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Straight,
    Left,
    Right,
}

impl Movement {
    pub fn is_turn(self) -> bool {
        !matches!(self, Movement::Straight)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub id: u32,
    pub approach: usize,
    pub movement: Movement,
}

/// Static disc obstacle (e.g. a broken-down vehicle) with the vehicle footprint radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blocker {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub approaches: usize,
    pub approach_length: f64,
    pub lane_width: f64,
    pub exit_length: f64,
    pub zone_radius: f64,
    /// Radius of the two 45 degree arcs of a left turn; capped at the single
    /// quarter-circle radius. Tighter turns keep opposing lefts apart.
    pub left_turn_radius: f64,
    pub streams: Vec<StreamSpec>,
    pub blockers: Vec<Blocker>,
}

impl Default for ScenarioConfig {
    /// Four straight streams plus left turns from the north and south approaches.
    fn default() -> Self {
        let s = |id, approach, movement| StreamSpec { id, approach, movement };
        ScenarioConfig {
            approaches: 4,
            approach_length: 40.0,
            lane_width: 3.5,
            exit_length: 11.0,
            zone_radius: 2.0,
            left_turn_radius: 6.0,
            streams: vec![
                s(0, 0, Movement::Straight),
                s(1, 1, Movement::Straight),
                s(2, 2, Movement::Straight),
                s(3, 3, Movement::Straight),
                s(4, 0, Movement::Left),
                s(5, 2, Movement::Left),
            ],
            blockers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Approach {
    pub index: usize,
    pub name: String,
    /// Unit travel direction of inbound vehicles.
    pub heading: Point,
}

/// Exact geometric primitive of a reference path.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Primitive {
    Line {
        start: Point,
        heading: f64,
        length: f64,
    },
    /// `turn` is +1 for counter-clockwise (left) and -1 for clockwise (right).
    Arc {
        center: Point,
        radius: f64,
        start_angle: f64,
        sweep: f64,
        turn: f64,
    },
}

impl Primitive {
    fn length(&self) -> f64 {
        match *self {
            Primitive::Line { length, .. } => length,
            Primitive::Arc { radius, sweep, .. } => radius * sweep,
        }
    }

    fn curvature(&self) -> f64 {
        match *self {
            Primitive::Line { .. } => 0.0,
            Primitive::Arc { radius, turn, .. } => turn / radius,
        }
    }

    /// Position and heading at local arclength `u` (may lie outside the primitive).
    fn eval(&self, u: f64) -> (Point, f64) {
        match *self {
            Primitive::Line { start, heading, .. } => {
                let (s, c) = heading.sin_cos();
                ([start[0] + u * c, start[1] + u * s], heading)
            }
            Primitive::Arc {
                center,
                radius,
                start_angle,
                turn,
                ..
            } => {
                let ang = start_angle + turn * u / radius;
                let (s, c) = ang.sin_cos();
                ([center[0] + radius * c, center[1] + radius * s], ang + turn * FRAC_PI_2)
            }
        }
    }

    /// Closest local arclength (clamped to the primitive) and squared distance.
    fn closest(&self, p: Point) -> (f64, f64) {
        match *self {
            Primitive::Line { start, heading, length } => {
                let (s, c) = heading.sin_cos();
                let u = ((p[0] - start[0]) * c + (p[1] - start[1]) * s).clamp(0.0, length);
                let q = [start[0] + u * c, start[1] + u * s];
                (u, dist2(p, q))
            }
            Primitive::Arc {
                center,
                radius,
                start_angle,
                sweep,
                turn,
            } => {
                let ang = (p[1] - center[1]).atan2(p[0] - center[0]);
                // Angular offset from the start in the direction of travel.
                let mut rel = turn * (ang - start_angle);
                rel = rel.rem_euclid(2.0 * PI);
                // Map the unreachable back side to whichever end is nearer.
                if rel > sweep {
                    rel = if rel - sweep < 2.0 * PI - rel { sweep } else { 0.0 };
                }
                let u = rel * radius;
                let (q, _) = self.eval(u);
                (u, dist2(p, q))
            }
        }
    }
}

/// Reference path: an exact line/arc chain plus its resampled polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    pub points: Vec<Point>,
    pub cumulative_arclength: Vec<f64>,
    primitives: Vec<Primitive>,
    offsets: Vec<f64>,
    length: f64,
}

impl ReferencePath {
    fn from_primitives(primitives: Vec<Primitive>) -> Self {
        let mut offsets = Vec::with_capacity(primitives.len());
        let mut acc = 0.0;
        for p in &primitives {
            offsets.push(acc);
            acc += p.length();
        }
        let length = acc;
        let n = (length / RESAMPLE_SPACING).ceil().max(1.0) as usize;
        let mut path = ReferencePath {
            points: Vec::with_capacity(n + 1),
            cumulative_arclength: Vec::with_capacity(n + 1),
            primitives,
            offsets,
            length,
        };
        for k in 0..=n {
            let s = length * k as f64 / n as f64;
            let (p, _) = path.pose_at(s);
            path.points.push(p);
            path.cumulative_arclength.push(s);
        }
        path
    }

    /// Straight path from `start` along `heading` for `length` meters.
    pub fn straight(start: Point, heading: f64, length: f64) -> Self {
        Self::from_primitives(vec![Primitive::Line { start, heading, length }])
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    fn locate(&self, s: f64) -> usize {
        match self.offsets.binary_search_by(|o| o.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// Point and tangent heading at arclength `s`; extrapolates linearly past either end.
    pub fn pose_at(&self, s: f64) -> (Point, f64) {
        if s <= 0.0 {
            let (p, h) = self.primitives[0].eval(0.0);
            let (sn, cs) = h.sin_cos();
            return ([p[0] + s * cs, p[1] + s * sn], h);
        }
        if s >= self.length {
            let last = self.primitives.len() - 1;
            let (p, h) = self.primitives[last].eval(self.primitives[last].length());
            let (sn, cs) = h.sin_cos();
            let over = s - self.length;
            return ([p[0] + over * cs, p[1] + over * sn], h);
        }
        let i = self.locate(s);
        self.primitives[i].eval(s - self.offsets[i])
    }

    /// Signed curvature at arclength `s` (positive when turning left).
    pub fn curvature_at(&self, s: f64) -> f64 {
        if s <= 0.0 || s >= self.length {
            return 0.0;
        }
        self.primitives[self.locate(s)].curvature()
    }

    /// Cartesian point at Frenet coordinates `(s, l)`.
    pub fn frenet_point(&self, s: f64, l: f64) -> Point {
        let (p, h) = self.pose_at(s);
        let (sn, cs) = h.sin_cos();
        [p[0] - l * sn, p[1] + l * cs]
    }

    pub fn start(&self) -> Point {
        self.points[0]
    }

    pub fn end(&self) -> Point {
        *self.points.last().unwrap()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Project a point onto a path: `(s, l)` with `l` positive to the left of travel.
pub fn project_to_path(path: &ReferencePath, position: Point) -> (f64, f64) {
    let mut best = (0usize, 0.0, f64::INFINITY);
    for (i, prim) in path.primitives.iter().enumerate() {
        let (u, d2) = prim.closest(position);
        if d2 < best.2 {
            best = (i, u, d2);
        }
    }
    let (i, u, _) = best;
    let s = (path.offsets[i] + u).clamp(0.0, path.length);
    let (q, h) = path.primitives[i].eval(u);
    let (sn, cs) = h.sin_cos();
    let l = cs * (position[1] - q[1]) - sn * (position[0] - q[0]);
    (s, l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficStream {
    pub id: u32,
    pub approach: usize,
    pub movement: Movement,
    pub path: ReferencePath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictPoint {
    pub stream_a: u32,
    pub stream_b: u32,
    pub arc_pos_a: f64,
    pub arc_pos_b: f64,
    pub position: Point,
    pub zone_radius: f64,
}

impl ConflictPoint {
    pub fn involves(&self, stream: u32) -> bool {
        self.stream_a == stream || self.stream_b == stream
    }

    /// Arclength of the crossing along `stream`'s path.
    pub fn arc_pos(&self, stream: u32) -> Option<f64> {
        if stream == self.stream_a {
            Some(self.arc_pos_a)
        } else if stream == self.stream_b {
            Some(self.arc_pos_b)
        } else {
            None
        }
    }

    pub fn other(&self, stream: u32) -> Option<u32> {
        if stream == self.stream_a {
            Some(self.stream_b)
        } else if stream == self.stream_b {
            Some(self.stream_a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionLayout {
    pub approaches: Vec<Approach>,
    pub approach_length: f64,
    pub lane_width: f64,
    pub box_half_width: f64,
    pub zone_radius: f64,
    pub streams: Vec<TrafficStream>,
    pub conflict_points: Vec<ConflictPoint>,
    pub blockers: Vec<Blocker>,
    /// Per stream, the arclength spans over which it interacts with each conflict point.
    pub zone_spans: BTreeMap<u32, Vec<ZoneSpan>>,
    index: BTreeMap<u32, usize>,
}

/// Interval of a stream's path whose footprint can touch a crossing
/// vehicle near a conflict point: the path point lies within
/// `zone_radius + radius` of the conflict point, or within the same reach
/// of the other path's local segment (wider for oblique crossings).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneSpan {
    pub conflict: usize,
    pub other_stream: u32,
    pub s_conflict: f64,
    pub s_in: f64,
    pub s_out: f64,
    /// Arclength window over which the footprint overlaps the zone disc
    /// around the conflict point (the occupancy used for PET).
    pub disc_in: f64,
    pub disc_out: f64,
}

impl IntersectionLayout {
    pub fn stream(&self, id: u32) -> Option<&TrafficStream> {
        self.index.get(&id).map(|&i| &self.streams[i])
    }

    pub fn path(&self, id: u32) -> &ReferencePath {
        &self.stream(id).expect("unknown stream id").path
    }

    /// Indices of conflict points involving `stream`.
    pub fn conflicts_of(&self, stream: u32) -> impl Iterator<Item = (usize, &ConflictPoint)> + '_ {
        self.conflict_points
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.involves(stream))
    }

    pub fn spans(&self, stream: u32) -> &[ZoneSpan] {
        self.zone_spans.get(&stream).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Span of `stream` for conflict point `conflict`.
    pub fn span(&self, stream: u32, conflict: usize) -> Option<&ZoneSpan> {
        self.spans(stream).iter().find(|z| z.conflict == conflict)
    }

    pub fn streams_conflict(&self, a: u32, b: u32) -> bool {
        a != b
            && self
                .conflict_points
                .iter()
                .any(|c| c.involves(a) && c.involves(b))
    }
}

const APPROACH_NAMES: [&str; 4] = ["north", "east", "south", "west"];

fn approach_heading(index: usize) -> Point {
    match index {
        0 => [0.0, -1.0],
        1 => [-1.0, 0.0],
        2 => [0.0, 1.0],
        _ => [1.0, 0.0],
    }
}

fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

fn scale(a: Point, k: f64) -> Point {
    [a[0] * k, a[1] * k]
}

pub(crate) fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

pub fn distance(a: Point, b: Point) -> f64 {
    dist2(a, b).sqrt()
}

fn heading_of(v: Point) -> f64 {
    v[1].atan2(v[0])
}

fn lane_index(movement: Movement, siblings: &[Movement]) -> usize {
    match movement {
        Movement::Left => 0,
        Movement::Right => 1,
        Movement::Straight => {
            if siblings.contains(&Movement::Right) {
                0
            } else {
                1
            }
        }
    }
}

fn build_path(cfg: &ScenarioConfig, approach: usize, movement: Movement, lane: usize) -> ReferencePath {
    let w = cfg.lane_width;
    let b = 2.0 * w;
    let h = approach_heading(approach);
    let r = [h[1], -h[0]];
    let off = (lane as f64 + 0.5) * w;
    let entry = add(scale(h, -(b + cfg.approach_length)), scale(r, off));
    match movement {
        Movement::Straight => ReferencePath::from_primitives(vec![Primitive::Line {
            start: entry,
            heading: heading_of(h),
            length: cfg.approach_length + 2.0 * b + cfg.exit_length,
        }]),
        Movement::Left => {
            // Arc, diagonal, arc: symmetric about the bisector of entry and exit.
            let rt = cfg.left_turn_radius.min(b + off);
            let left = scale(r, -1.0);
            let p1 = add(scale(h, -b), scale(r, off));
            let c1 = add(p1, scale(left, rt));
            let a1 = heading_of(r);
            let p2 = add(c1, [rt * (a1 + FRAC_PI_4).cos(), rt * (a1 + FRAC_PI_4).sin()]);
            let diag = std::f64::consts::SQRT_2 * (b + off - rt);
            let p4 = add(scale(r, -b), scale(h, off));
            let c2 = add(p4, scale(h, -rt));
            let mut prims = vec![
                Primitive::Line {
                    start: entry,
                    heading: heading_of(h),
                    length: cfg.approach_length,
                },
                Primitive::Arc {
                    center: c1,
                    radius: rt,
                    start_angle: a1,
                    sweep: FRAC_PI_4,
                    turn: 1.0,
                },
            ];
            if diag > 1e-9 {
                prims.push(Primitive::Line {
                    start: p2,
                    heading: heading_of(h) + FRAC_PI_4,
                    length: diag,
                });
            }
            prims.push(Primitive::Arc {
                center: c2,
                radius: rt,
                start_angle: heading_of(h) - FRAC_PI_4,
                sweep: FRAC_PI_4,
                turn: 1.0,
            });
            prims.push(Primitive::Line {
                start: p4,
                heading: heading_of(left),
                length: cfg.exit_length,
            });
            ReferencePath::from_primitives(prims)
        }
        Movement::Right => {
            let radius = b - off;
            let center = add(scale(r, off + radius), scale(h, -(off + radius)));
            let start_angle = heading_of(scale(r, -1.0));
            let arc_end = add(scale(r, off + radius), scale(h, -off));
            ReferencePath::from_primitives(vec![
                Primitive::Line {
                    start: entry,
                    heading: heading_of(h),
                    length: cfg.approach_length + b - (off + radius) + off,
                },
                Primitive::Arc {
                    center,
                    radius,
                    start_angle,
                    sweep: FRAC_PI_2,
                    turn: -1.0,
                },
                Primitive::Line {
                    start: arc_end,
                    heading: heading_of(r),
                    length: cfg.exit_length,
                },
            ])
        }
    }
}

fn point_segment_dist2(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist2(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

/// Arclength window of `path` around `s_c` within `reach` of the other path's
/// local piece (12 m either side of its crossing).
fn zone_interval(path: &ReferencePath, s_c: f64, other: &ReferencePath, s_other: f64, reach: f64) -> (f64, f64) {
    const LOCAL: f64 = 12.0;
    const STEP: f64 = 0.05;
    let lo = (s_other - LOCAL).max(0.0);
    let hi = (s_other + LOCAL).min(other.length());
    let n = ((hi - lo) / 0.25).ceil().max(1.0) as usize;
    let local: Vec<Point> = (0..=n).map(|k| other.pose_at(lo + (hi - lo) * k as f64 / n as f64).0).collect();
    let near = |s: f64| {
        let p = path.pose_at(s).0;
        local.windows(2).any(|w| point_segment_dist2(p, w[0], w[1]) <= reach * reach)
    };
    let mut s_in = s_c;
    while s_in - STEP >= 0.0 && near(s_in - STEP) {
        s_in -= STEP;
    }
    let mut s_out = s_c;
    while s_out + STEP <= path.length() && near(s_out + STEP) {
        s_out += STEP;
    }
    (s_in, s_out)
}

/// Arclength window of `path` around `s_c` within `reach` of `center`.
fn disc_interval(path: &ReferencePath, s_c: f64, center: Point, reach: f64) -> (f64, f64) {
    const STEP: f64 = 0.01;
    let near = |s: f64| dist2(path.pose_at(s).0, center) <= reach * reach;
    let mut lo = s_c;
    while lo - STEP >= 0.0 && near(lo - STEP) {
        lo -= STEP;
    }
    let mut hi = s_c;
    while hi + STEP <= path.length() && near(hi + STEP) {
        hi += STEP;
    }
    (lo, hi)
}

/// Proper crossing of segments `p0-p1` and `q0-q1` with half-open parameters in `[0, 1)`.
pub(crate) fn segment_crossing(p0: Point, p1: Point, q0: Point, q1: Point) -> Option<(f64, f64)> {
    let d1 = [p1[0] - p0[0], p1[1] - p0[1]];
    let d2 = [q1[0] - q0[0], q1[1] - q0[1]];
    let den = d1[0] * d2[1] - d1[1] * d2[0];
    if den.abs() < 1e-15 {
        return None;
    }
    let e = [q0[0] - p0[0], q0[1] - p0[1]];
    let t = (e[0] * d2[1] - e[1] * d2[0]) / den;
    let u = (e[0] * d1[1] - e[1] * d1[0]) / den;
    if (0.0..1.0).contains(&t) && (0.0..1.0).contains(&u) {
        Some((t, u))
    } else {
        None
    }
}

fn bbox(path: &ReferencePath) -> [f64; 4] {
    path.points.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
    )
}

fn path_crossings(a: &TrafficStream, b: &TrafficStream, zone_radius: f64) -> Vec<ConflictPoint> {
    let (ba, bb) = (bbox(&a.path), bbox(&b.path));
    if ba[0] > bb[2] || bb[0] > ba[2] || ba[1] > bb[3] || bb[1] > ba[3] {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, (p0, p1)) in a.path.segments().enumerate() {
        let (lo_x, hi_x) = (p0[0].min(p1[0]), p0[0].max(p1[0]));
        let (lo_y, hi_y) = (p0[1].min(p1[1]), p0[1].max(p1[1]));
        if hi_x < bb[0] || lo_x > bb[2] || hi_y < bb[1] || lo_y > bb[3] {
            continue;
        }
        for (j, (q0, q1)) in b.path.segments().enumerate() {
            if q0[0].max(q1[0]) < lo_x
                || q0[0].min(q1[0]) > hi_x
                || q0[1].max(q1[1]) < lo_y
                || q0[1].min(q1[1]) > hi_y
            {
                continue;
            }
            if let Some((t, u)) = segment_crossing(p0, p1, q0, q1) {
                let sa = a.path.cumulative_arclength[i];
                let sb = b.path.cumulative_arclength[j];
                let la = a.path.cumulative_arclength[i + 1] - sa;
                let lb = b.path.cumulative_arclength[j + 1] - sb;
                out.push(ConflictPoint {
                    stream_a: a.id,
                    stream_b: b.id,
                    arc_pos_a: sa + t * la,
                    arc_pos_b: sb + u * lb,
                    position: [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])],
                    zone_radius,
                });
            }
        }
    }
    out
}

/// Build the layout for `config`, computing every pairwise conflict point.
pub fn build_intersection(config: &ScenarioConfig) -> Result<IntersectionLayout, ScenarioError> {
    if config.approaches != 4 {
        return Err(ScenarioError::InvalidConfig(format!(
            "expected 4 approaches, got {}",
            config.approaches
        )));
    }
    if !(config.lane_width > 0.0 && config.approach_length > 0.0 && config.exit_length >= 0.0) {
        return Err(ScenarioError::InvalidConfig("non-positive geometry".into()));
    }
    if !(config.left_turn_radius > 0.0) {
        return Err(ScenarioError::InvalidConfig("left_turn_radius must be positive".into()));
    }
    if !(config.zone_radius > 0.0) {
        return Err(ScenarioError::InvalidConfig("zone_radius must be positive".into()));
    }
    let mut per_approach: BTreeMap<usize, Vec<Movement>> = BTreeMap::new();
    let mut ids = BTreeMap::new();
    for s in &config.streams {
        if s.approach >= 4 {
            return Err(ScenarioError::InvalidConfig(format!(
                "stream {} references approach {}",
                s.id, s.approach
            )));
        }
        if ids.insert(s.id, ()).is_some() {
            return Err(ScenarioError::InvalidConfig(format!("duplicate stream id {}", s.id)));
        }
        let movements = per_approach.entry(s.approach).or_default();
        if movements.contains(&s.movement) {
            return Err(ScenarioError::InvalidConfig(format!(
                "approach {} has two {:?} streams",
                s.approach, s.movement
            )));
        }
        movements.push(s.movement);
        if movements.len() > 2 {
            return Err(ScenarioError::InvalidConfig(format!(
                "approach {} has more than two streams",
                s.approach
            )));
        }
    }

    let mut specs = config.streams.clone();
    specs.sort_by_key(|s| s.id);
    let streams: Vec<TrafficStream> = specs
        .iter()
        .map(|s| {
            let lane = lane_index(s.movement, &per_approach[&s.approach]);
            TrafficStream {
                id: s.id,
                approach: s.approach,
                movement: s.movement,
                path: build_path(config, s.approach, s.movement, lane),
            }
        })
        .collect();

    let mut conflict_points = Vec::new();
    for i in 0..streams.len() {
        for j in i + 1..streams.len() {
            conflict_points.extend(path_crossings(&streams[i], &streams[j], config.zone_radius));
        }
    }
    conflict_points.sort_by(|a, b| {
        (a.stream_a, a.stream_b)
            .cmp(&(b.stream_a, b.stream_b))
            .then(a.arc_pos_a.partial_cmp(&b.arc_pos_a).unwrap())
    });

    let reach = config.zone_radius + crate::features::FOOTPRINT_RADIUS;
    let mut zone_spans: BTreeMap<u32, Vec<ZoneSpan>> = streams.iter().map(|s| (s.id, Vec::new())).collect();
    let by_id: BTreeMap<u32, &TrafficStream> = streams.iter().map(|s| (s.id, s)).collect();
    for (ci, cp) in conflict_points.iter().enumerate() {
        for (me, other, s_me, s_other) in [
            (cp.stream_a, cp.stream_b, cp.arc_pos_a, cp.arc_pos_b),
            (cp.stream_b, cp.stream_a, cp.arc_pos_b, cp.arc_pos_a),
        ] {
            let (s_in, s_out) = zone_interval(&by_id[&me].path, s_me, &by_id[&other].path, s_other, reach);
            let (disc_in, disc_out) = disc_interval(&by_id[&me].path, s_me, cp.position, reach);
            zone_spans.get_mut(&me).unwrap().push(ZoneSpan {
                conflict: ci,
                other_stream: other,
                s_conflict: s_me,
                s_in,
                s_out,
                disc_in,
                disc_out,
            });
        }
    }
    for spans in zone_spans.values_mut() {
        spans.sort_by(|a, b| a.s_in.partial_cmp(&b.s_in).unwrap().then(a.conflict.cmp(&b.conflict)));
    }

    let index = streams.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    Ok(IntersectionLayout {
        approaches: (0..4)
            .map(|i| Approach {
                index: i,
                name: APPROACH_NAMES[i].to_string(),
                heading: approach_heading(i),
            })
            .collect(),
        approach_length: config.approach_length,
        lane_width: config.lane_width,
        box_half_width: 2.0 * config.lane_width,
        zone_radius: config.zone_radius,
        streams,
        conflict_points,
        blockers: config.blockers.clone(),
        zone_spans,
        index,
    })
}
