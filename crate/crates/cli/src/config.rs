//! Config file loading and command-line overrides.

use std::path::Path;

use ncl_core::{HvComposition, Method, SimConfig};

use crate::manifest::RunManifest;
use crate::CliError;

/// Overrides applied on top of the file, in field order.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub volume: Option<f64>,
    pub rop: Option<f64>,
    pub composition: Option<HvComposition>,
    pub frames: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut SimConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(v) = self.volume {
            cfg.lane_volume = v;
        }
        if let Some(r) = self.rop {
            cfg.rop = r;
        }
        if let Some(c) = self.composition {
            cfg.hv_composition = c;
        }
        if let Some(f) = self.frames {
            cfg.frames = f;
        }
    }
}

/// `a,n,c` shares of aggressive, normal and conservative HVs.
pub fn parse_composition(s: &str) -> Result<HvComposition, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad share {p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, n, c] => Ok(HvComposition::new(a, n, c)),
        _ => Err(format!("expected three comma-separated shares, got {}", parts.len())),
    }
}

/// Dotted paths of keys in `given` that `known` does not have. Arrays are
/// not descended into.
fn unknown_keys(given: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => out.push(path),
            (toml::Value::Table(g), Some(toml::Value::Table(d))) => unknown_keys(g, d, &path, out),
            _ => {}
        }
    }
}

/// Parses a TOML config. Every key must name a config field; omitted
/// fields take their defaults.
pub fn parse_config(text: &str) -> Result<SimConfig, CliError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    let defaults = toml::Table::try_from(SimConfig::default()).map_err(|e| CliError::Config(e.to_string()))?;
    let mut unknown = Vec::new();
    unknown_keys(&table, &defaults, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

/// Loads a TOML config, or the config snapshot of a `manifest.json`.
pub fn load(path: Option<&Path>) -> Result<SimConfig, CliError> {
    let Some(path) = path else {
        return Ok(SimConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return Ok(m.config);
    }
    parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn validated(mut cfg: SimConfig, ov: &Overrides) -> Result<SimConfig, CliError> {
    ov.apply(&mut cfg);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(parse_config("").unwrap(), SimConfig::default());
    }

    #[test]
    fn nested_fields_parse() {
        let cfg = parse_config("method = \"fcfs\"\nrop = 0.4\n[hv]\nlane_bound = 0.3\n").unwrap();
        assert_eq!(cfg.method, Method::Fcfs);
        assert_eq!(cfg.rop, 0.4);
        assert_eq!(cfg.hv.lane_bound, 0.3);
    }

    #[test]
    fn typos_are_rejected() {
        let err = parse_config("lane_volum = 200.0\n[ncl]\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lane_volum") && msg.contains("ncl.bogus"), "{msg}");
        assert!(matches!(parse_config("rop = \"high\""), Err(CliError::Config(_))));
        assert!(matches!(parse_config("rop = "), Err(CliError::Config(_))));
    }

    #[test]
    fn config_survives_a_toml_round_trip() {
        let cfg = SimConfig::default();
        assert_eq!(parse_config(&toml::to_string(&cfg).unwrap()).unwrap(), cfg);
    }

    #[test]
    fn composition_flag() {
        assert_eq!(parse_composition("0.2,0.3,0.5").unwrap(), HvComposition::new(0.2, 0.3, 0.5));
        assert!(parse_composition("0.2,0.8").is_err());
        assert!(parse_composition("a,b,c").is_err());
    }

    #[test]
    fn overrides_then_validation() {
        let ov = Overrides {
            rop: Some(1.5),
            ..Overrides::default()
        };
        assert!(matches!(validated(SimConfig::default(), &ov), Err(CliError::Config(_))));
        let ov = Overrides {
            seed: Some(9),
            frames: Some(50),
            ..Overrides::default()
        };
        let cfg = validated(SimConfig::default(), &ov).unwrap();
        assert_eq!((cfg.seed, cfg.frames), (9, 50));
    }
}
