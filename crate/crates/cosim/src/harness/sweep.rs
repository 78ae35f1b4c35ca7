//! Parameter sweeps over scenario fields.
//!
//! A sweep takes the raw scenario document, one or more axes (dotted paths
//! into the TOML tree with a value list each), and runs one experiment per
//! grid point of the cartesian product. Every cell gets its own seed,
//! derived deterministically from the scenario seed and the cell index, so
//! each cell can be reproduced in isolation. Cell failures land in the
//! result table; the sweep continues. Pacing is always disabled in sweeps.

use std::path::Path;

use rayon::prelude::*;

use super::metrics::{Metrics, StabilityVerdict};
use super::run::run_experiment_with;
use super::scenario::parse_scenario_value;
use super::HarnessError;

#[derive(Debug, Clone)]
pub struct SweepAxis {
    /// Dotted path into the scenario document. Array-of-table segments are
    /// addressed by the `name`/`id`/`port` field of their entries, e.g.
    /// `power.hut_side.elements.Rh.ohms`.
    pub path: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub index: u64,
    /// (axis path, applied value) pairs for this grid point.
    pub settings: Vec<(String, String)>,
    pub seed: u64,
    pub outcome: Result<Metrics, String>,
}

/// Per-cell seed: splitmix64 of the scenario seed xor the golden-ratio
/// multiple of the 1-based cell index, masked to 63 bits so the value
/// round-trips through TOML integers. Stable and documented so single
/// cells can be re-run with `run --seed`.
pub fn derive_cell_seed(scenario_seed: u64, index: u64) -> u64 {
    let mut z = scenario_seed ^ (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) & (i64::MAX as u64)
}

/// Interprets a CLI-provided value: integer, float, boolean, else string.
fn parse_value(text: &str) -> toml::Value {
    if let Ok(v) = text.parse::<i64>() {
        return toml::Value::Integer(v);
    }
    if let Ok(v) = text.parse::<f64>() {
        return toml::Value::Float(v);
    }
    if let Ok(v) = text.parse::<bool>() {
        return toml::Value::Boolean(v);
    }
    toml::Value::String(text.to_string())
}

fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), String> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() {
        return Err("empty axis path".into());
    }
    let mut current = root;
    for (depth, segment) in segments.iter().enumerate() {
        let last = depth == segments.len() - 1;
        match current {
            toml::Value::Table(table) => {
                if last {
                    if !table.contains_key(*segment) {
                        return Err(format!("path `{path}`: key `{segment}` does not exist"));
                    }
                    table.insert(segment.to_string(), value);
                    return Ok(());
                }
                current = table
                    .get_mut(*segment)
                    .ok_or_else(|| format!("path `{path}`: key `{segment}` does not exist"))?;
            }
            toml::Value::Array(array) => {
                // address array entries by index or by their name/id/port field
                let found = if let Ok(idx) = segment.parse::<usize>() {
                    array.get_mut(idx)
                } else {
                    array.iter_mut().find(|entry| {
                        ["name", "id", "port"].iter().any(|key| {
                            entry.get(key).and_then(|v| v.as_str()) == Some(*segment)
                        })
                    })
                };
                let entry =
                    found.ok_or_else(|| format!("path `{path}`: no array entry `{segment}`"))?;
                if last {
                    return Err(format!("path `{path}` ends at an array entry, not a field"));
                }
                current = entry;
            }
            _ => return Err(format!("path `{path}`: `{segment}` is not a table or array")),
        }
    }
    Err(format!("path `{path}` ends at a table, not a field"))
}

/// Runs the full cartesian grid. Cells execute in parallel; results come
/// back in grid order.
pub fn run_sweep(
    scenario_text: &str,
    origin: &Path,
    axes: &[SweepAxis],
) -> Result<Vec<SweepCell>, HarnessError> {
    if axes.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one axis".into()));
    }
    let base_table: toml::Table = scenario_text
        .parse()
        .map_err(|e: toml::de::Error| HarnessError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
    let base_seed = base_table
        .get("seed")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| HarnessError::Config("scenario lacks an integer `seed`".into()))?
        as u64;
    let base = toml::Value::Table(base_table);

    let grid_size: usize = axes.iter().map(|a| a.values.len()).product();
    let cells: Vec<SweepCell> = (0..grid_size as u64)
        .into_par_iter()
        .map(|index| {
            let mut settings = Vec::new();
            let mut value = base.clone();
            let mut remainder = index as usize;
            let mut apply_error = None;
            for axis in axes {
                let pick = remainder % axis.values.len();
                remainder /= axis.values.len();
                let text = &axis.values[pick];
                settings.push((axis.path.clone(), text.clone()));
                if apply_error.is_none() {
                    if let Err(e) = set_path(&mut value, &axis.path, parse_value(text)) {
                        apply_error = Some(e);
                    }
                }
            }
            let seed = derive_cell_seed(base_seed, index);
            let outcome = match apply_error {
                Some(e) => Err(e),
                None => {
                    if let toml::Value::Table(table) = &mut value {
                        table.insert("seed".into(), toml::Value::Integer(seed as i64));
                        table.remove("pacing");
                    }
                    parse_scenario_value(value, origin)
                        .and_then(|scenario| run_experiment_with(&scenario, false))
                        .map(|(_, metrics)| metrics)
                        .map_err(|e| e.to_string())
                }
            };
            SweepCell { index, settings, seed, outcome }
        })
        .collect();
    Ok(cells)
}

/// Renders the sweep result table as CSV.
pub fn render_sweep_csv(axes: &[SweepAxis], cells: &[SweepCell]) -> String {
    let mut out = String::from("index,seed");
    for axis in axes {
        out.push_str(&format!(",{}", axis.path));
    }
    out.push_str(",verdict,onset(s),max_rms(%),stale_commands,dropped_packets,error\n");
    for cell in cells {
        out.push_str(&format!("{},{}", cell.index, cell.seed));
        for (_, value) in &cell.settings {
            out.push_str(&format!(",{value}"));
        }
        match &cell.outcome {
            Ok(metrics) => {
                let (verdict, onset) = match &metrics.stability {
                    StabilityVerdict::Stable => ("stable".to_string(), String::new()),
                    StabilityVerdict::Unstable { onset_seconds } => {
                        ("unstable".to_string(), format!("{onset_seconds:.9}"))
                    }
                };
                let max_rms = metrics
                    .rms_error_percent
                    .values()
                    .fold(None::<f64>, |m, v| Some(m.map_or(*v, |m| m.max(*v))))
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default();
                out.push_str(&format!(
                    ",{verdict},{onset},{max_rms},{},{},\n",
                    metrics.stale_commands, metrics.dropped_packets
                ));
            }
            Err(message) => {
                out.push_str(&format!(",,,,,,\"{}\"\n", message.replace('"', "'")));
            }
        }
    }
    out
}
