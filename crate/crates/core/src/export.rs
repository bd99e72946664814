//! Fixed-precision CSV output for trajectories and PET events, and the
//! reverse parse used to recompute metrics from disk.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::dynamics::{Action, VehicleState};
use crate::hv::{DriverKind, DriverProfile};
use crate::metrics::PetEvent;
use crate::sim::{FrameRecord, SimLog, VehicleInfo};
use crate::world::VehicleClass;

pub const TRAJECTORY_COLUMNS: [&str; 13] = [
    "frame",
    "time_s",
    "vehicle_id",
    "class",
    "driver_type",
    "stream_id",
    "x",
    "y",
    "v",
    "yaw",
    "a",
    "omega",
    "k_level",
];

pub const PET_COLUMNS: [&str; 6] = ["conflict_id", "leader_id", "follower_id", "t_leader_exit", "t_follower_entry", "pet"];

/// Six decimals; negative zero prints as zero so equal runs give equal bytes.
pub fn fmt6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub fn write_trajectories<W: Write>(log: &SimLog, out: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_COLUMNS)?;
    for r in &log.records {
        w.write_record([
            r.frame.to_string(),
            fmt6(r.time),
            r.vehicle_id.to_string(),
            r.class.as_str().to_string(),
            r.kind.as_str().to_string(),
            r.stream.to_string(),
            fmt6(r.state.x),
            fmt6(r.state.y),
            fmt6(r.state.v),
            fmt6(r.state.gamma),
            fmt6(r.action.a),
            fmt6(r.action.omega),
            r.k_level.map(|k| k.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pet_events<W: Write>(events: &[PetEvent], out: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PET_COLUMNS)?;
    for e in events {
        w.write_record([
            e.conflict.to_string(),
            e.leader.to_string(),
            e.follower.to_string(),
            fmt6(e.t_leader_exit),
            fmt6(e.t_follower_entry),
            fmt6(e.pet),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T, ExportError> {
    let raw = rec.get(i).ok_or_else(|| ExportError::Parse {
        line,
        msg: format!("missing column {}", TRAJECTORY_COLUMNS[i]),
    })?;
    raw.trim().parse().map_err(|_| ExportError::Parse {
        line,
        msg: format!("bad {} value {raw:?}", TRAJECTORY_COLUMNS[i]),
    })
}

fn parse_class(s: &str) -> Option<VehicleClass> {
    match s {
        "cav" => Some(VehicleClass::Cav),
        "hv" => Some(VehicleClass::Hv),
        _ => None,
    }
}

fn parse_kind(s: &str) -> Option<DriverKind> {
    DriverKind::ALL.into_iter().find(|k| k.as_str() == s)
}

/// Rebuild a log from a trajectories file. The vehicle table carries preset
/// targets and first-seen times; exits are not stored in the file.
pub fn read_trajectories<R: Read>(input: R) -> Result<SimLog, ExportError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(TRAJECTORY_COLUMNS.iter().copied()) {
        return Err(ExportError::Parse {
            line: 1,
            msg: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut records = Vec::new();
    let mut vehicles = BTreeMap::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |msg: String| ExportError::Parse { line, msg };
        let class = parse_class(&row[3]).ok_or_else(|| bad(format!("bad class {:?}", &row[3])))?;
        let kind = parse_kind(&row[4]).ok_or_else(|| bad(format!("bad driver_type {:?}", &row[4])))?;
        let k_level = if row[12].trim().is_empty() {
            None
        } else {
            Some(field::<u8>(&row, 12, line)?)
        };
        let r = FrameRecord {
            frame: field(&row, 0, line)?,
            time: field(&row, 1, line)?,
            vehicle_id: field(&row, 2, line)?,
            class,
            kind,
            stream: field(&row, 5, line)?,
            state: VehicleState::new(field(&row, 6, line)?, field(&row, 7, line)?, field(&row, 8, line)?, field(&row, 9, line)?),
            action: Action {
                a: field(&row, 10, line)?,
                omega: field(&row, 11, line)?,
            },
            k_level,
        };
        vehicles.entry(r.vehicle_id).or_insert_with(|| VehicleInfo {
            id: r.vehicle_id,
            class,
            kind,
            stream: r.stream,
            v_target: DriverProfile::preset(kind).v_target,
            spawn_time: r.time,
            exit_time: None,
        });
        records.push(r);
    }
    let dt = records
        .iter()
        .find(|r| r.frame > 0)
        .map_or(0.1, |r| r.time / r.frame as f64);
    let frames_run = records.iter().map(|r| r.frame + 1).max().unwrap_or(0);
    Ok(SimLog {
        dt,
        frames_run,
        records,
        vehicles,
        ..SimLog::default()
    })
}
