//! On-disk artifacts: binary state snapshots, diagnostics CSV, and the run
//! manifest with content hashes.
//!
//! Snapshot layout (bit-exact round-trip guaranteed):
//!
//! ```text
//! bytes 0..8    magic  b"KVSNAP01"
//! bytes 8..12   format version, u32 little-endian (currently 1)
//! bytes 12..16  JSON header length in bytes, u32 little-endian
//! bytes 16..64  zero padding
//! bytes 64..64+len   JSON header (grid parameters, step, time, label,
//!                    byte order "LE", element type "f64", value count)
//! remainder     count raw IEEE-754 binary64 values, little-endian,
//!               row-major with the first velocity axis slowest
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KineticError, Result};
use crate::functionals::DiagnosticsRecord;
use crate::grid::{make_grid, Distribution, VelocityGrid};
use crate::integrator::{AbortInfo, ExtraColumn, Scenario, Snapshot, Trajectory};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"KVSNAP01";
pub const SNAPSHOT_VERSION: u32 = 1;
const PREAMBLE_LEN: usize = 64;

/// The self-describing JSON block stored after the fixed preamble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub d: usize,
    pub n: usize,
    pub lmax: f64,
    pub step: u64,
    pub time: f64,
    pub label: String,
    pub byte_order: String,
    pub element: String,
    pub count: usize,
}

/// Serialize one stored state to `path`.
pub fn write_snapshot(path: &Path, grid: &VelocityGrid, snap: &Snapshot) -> Result<()> {
    if snap.values.len() != grid.len() {
        return Err(KineticError::Shape(format!(
            "snapshot holds {} values but the grid has {} nodes",
            snap.values.len(),
            grid.len()
        )));
    }
    let header = SnapshotHeader {
        d: grid.d(),
        n: grid.n(),
        lmax: grid.lmax(),
        step: snap.step,
        time: snap.time,
        label: snap.label.clone(),
        byte_order: "LE".into(),
        element: "f64".into(),
        count: snap.values.len(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| KineticError::Format(format!("snapshot header serialization: {e}")))?;
    let mut bytes = Vec::with_capacity(PREAMBLE_LEN + header_json.len() + 8 * snap.values.len());
    bytes.extend_from_slice(SNAPSHOT_MAGIC);
    bytes.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.resize(PREAMBLE_LEN, 0);
    bytes.extend_from_slice(&header_json);
    for v in &snap.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a snapshot back; every structural defect is a `Format` error.
pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, Vec<f64>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < PREAMBLE_LEN {
        return Err(KineticError::Format(format!(
            "snapshot file is {} bytes, shorter than the 64-byte preamble",
            bytes.len()
        )));
    }
    if &bytes[0..8] != SNAPSHOT_MAGIC {
        return Err(KineticError::Format("snapshot magic mismatch".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(KineticError::Format(format!(
            "unsupported snapshot version {version} (expected {SNAPSHOT_VERSION})"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() < PREAMBLE_LEN + header_len {
        return Err(KineticError::Format(
            "snapshot file truncated inside the JSON header".into(),
        ));
    }
    let header: SnapshotHeader =
        serde_json::from_slice(&bytes[PREAMBLE_LEN..PREAMBLE_LEN + header_len])
            .map_err(|e| KineticError::Format(format!("snapshot header: {e}")))?;
    if header.byte_order != "LE" {
        return Err(KineticError::Format(format!(
            "unsupported byte order {:?}",
            header.byte_order
        )));
    }
    if header.element != "f64" {
        return Err(KineticError::Format(format!(
            "unsupported element type {:?}",
            header.element
        )));
    }
    if header.count != header.n.pow(header.d as u32) {
        return Err(KineticError::Format(format!(
            "header count {} does not match n^d = {}",
            header.count,
            header.n.pow(header.d as u32)
        )));
    }
    let data = &bytes[PREAMBLE_LEN + header_len..];
    if data.len() != 8 * header.count {
        return Err(KineticError::Format(format!(
            "snapshot data section holds {} bytes, expected {}",
            data.len(),
            8 * header.count
        )));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

/// Read a snapshot and rebuild its grid and distribution.
pub fn read_snapshot_distribution(path: &Path) -> Result<(SnapshotHeader, Distribution)> {
    let (header, values) = read_snapshot(path)?;
    let grid = make_grid(header.d, header.n, header.lmax)?;
    let dist = Distribution::new(grid, values, &header.label)?;
    Ok((header, dist))
}

/// Render the diagnostics table: the fixed column prefix, then the
/// configured extras, one row per record.
pub fn diagnostics_csv(records: &[DiagnosticsRecord], extras: &[ExtraColumn]) -> String {
    let mut header: Vec<String> = DiagnosticsRecord::base_columns()
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(extras.iter().map(ExtraColumn::column_name));
    let mut out = header.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Run summary written next to the outputs; `files` maps relative paths to
/// SHA-256 content hashes.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: Scenario,
    pub steps_taken: u64,
    pub clipped_total: f64,
    pub aborted: Option<AbortInfo>,
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Keep file names portable: alphanumerics and dashes only.
fn sanitize_label(label: &str) -> String {
    let cleaned: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' })
        .collect();
    if cleaned.is_empty() {
        "state".into()
    } else {
        cleaned
    }
}

/// Write `diagnostics.csv`, `snapshots/`, and `manifest.json` into an
/// existing directory (the caller owns directory creation and atomicity).
/// Returns the manifest path.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<PathBuf> {
    let mut files = BTreeMap::new();
    let csv = diagnostics_csv(&traj.records, &traj.scenario.extras);
    fs::write(dir.join("diagnostics.csv"), csv.as_bytes())?;
    files.insert("diagnostics.csv".to_string(), sha256_hex(csv.as_bytes()));
    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir)?;
    for (idx, snap) in traj.snapshots.iter().enumerate() {
        let name = format!(
            "snap_{idx:04}_{:08}_{}.bin",
            snap.step,
            sanitize_label(&snap.label)
        );
        let path = snap_dir.join(&name);
        write_snapshot(&path, &traj.grid, snap)?;
        let bytes = fs::read(&path)?;
        files.insert(format!("snapshots/{name}"), sha256_hex(&bytes));
    }
    let manifest = Manifest {
        scenario: traj.scenario.clone(),
        steps_taken: traj.steps_taken,
        clipped_total: traj.clipped_total,
        aborted: traj.aborted.clone(),
        files,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| KineticError::Format(format!("manifest serialization: {e}")))?;
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, manifest_json.as_bytes())?;
    Ok(manifest_path)
}

/// Verify every hash recorded in a manifest against the bytes on disk.
/// Returns the list of files that fail (empty means intact).
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let manifest_json = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_json)
        .map_err(|e| KineticError::Format(format!("manifest: {e}")))?;
    let mut bad = Vec::new();
    for (rel, want) in &manifest.files {
        let bytes = fs::read(dir.join(rel))?;
        if &sha256_hex(&bytes) != want {
            bad.push(rel.clone());
        }
    }
    Ok(bad)
}
