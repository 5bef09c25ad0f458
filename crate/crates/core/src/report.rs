//! Machine-readable outputs: CSV data files and the per-run manifest.
//!
//! Every data file starts with a comment line carrying the configuration
//! hash, then a header row. Data rows are written in deterministic order
//! with shortest round-trip float formatting, so identical inputs yield
//! byte-identical files; manifests may differ in recorded wall-clock
//! times only.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::electrostatics::PotentialField;
use crate::mechanics::{von_mises, StressField};
use crate::mesh::{VoxelMesh, NO_MATERIAL};
use crate::optics::SectionBirefringence;
use crate::signal::DriftFit;
use crate::sweep::{ModeResult, SweepReport};
use crate::thermal::TemperatureHistory;

/// Hex SHA-256 of the configuration text; stable across platforms.
pub fn config_hash(config_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn open(path: &Path) -> std::io::Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn preamble<W: Write>(w: &mut W, hash: &str, header: &str) -> std::io::Result<()> {
    writeln!(w, "# config={hash}")?;
    writeln!(w, "{header}")
}

/// Error-versus-temperature curve of one mode.
pub fn write_curve_csv(path: &Path, hash: &str, result: &ModeResult) -> std::io::Result<()> {
    let mut w = open(path)?;
    preamble(&mut w, hash, "time_s,crystal_t_k,error")?;
    for p in &result.curve {
        writeln!(w, "{},{},{}", p.time, p.crystal_t, p.error)?;
    }
    w.flush()
}

/// Mode comparison table, rows in ranking order.
pub fn write_report_csv(path: &Path, hash: &str, report: &SweepReport) -> std::io::Result<()> {
    let mut w = open(path)?;
    preamble(&mut w, hash, "mode,mean_angle_deg,hwv_v,total_error,corrected_total")?;
    for &i in &report.ranking {
        let r = &report.results[i];
        writeln!(
            w,
            "{},{},{},{},{}",
            r.name, r.mean_angle, r.hwv, r.total_error, r.corrected_total
        )?;
    }
    w.flush()
}

/// Optimizer trace (evaluated ratios and objectives).
pub fn write_trace_csv(path: &Path, hash: &str, report: &SweepReport) -> std::io::Result<()> {
    let mut w = open(path)?;
    preamble(&mut w, hash, "mode,ratio_x_m,ratio_y_m,objective")?;
    for t in &report.trace {
        writeln!(w, "{},{},{},{}", t.name, t.ratio_x, t.ratio_y, t.objective)?;
    }
    w.flush()
}

/// One temperature CSV per snapshot: node id and position with its
/// temperature.
pub fn write_temperature_dumps(
    dir: &Path,
    hash: &str,
    mesh: &VoxelMesh,
    history: &TemperatureHistory,
) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (k, field) in history.fields.iter().enumerate() {
        let path = dir.join(format!("temps_{k:03}.csv"));
        let mut w = open(&path)?;
        preamble(&mut w, hash, "node,x_m,y_m,z_m,t_k")?;
        writeln!(w, "# time_s={}", history.times[k])?;
        for (n, &t) in field.iter().enumerate() {
            let p = mesh.node_position(n);
            writeln!(w, "{},{},{},{},{}", n, p[0], p[1], p[2], t)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// One stress CSV per snapshot: element id, centroid, the six stress
/// components and the von Mises magnitude.
pub fn write_stress_dumps(
    dir: &Path,
    hash: &str,
    mesh: &VoxelMesh,
    times: &[f64],
    snapshots: &[StressField],
) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (k, field) in snapshots.iter().enumerate() {
        let path = dir.join(format!("stress_{k:03}.csv"));
        let mut w = open(&path)?;
        preamble(
            &mut w,
            hash,
            "element,x_m,y_m,z_m,sxx,syy,szz,sxy,syz,szx,von_mises",
        )?;
        writeln!(w, "# time_s={}", times[k])?;
        for e in 0..mesh.material.len() {
            if mesh.material[e] == NO_MATERIAL {
                continue;
            }
            let c = mesh.element_centroid(e);
            let s = &field.stress[e];
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                e,
                c[0],
                c[1],
                c[2],
                s.xx,
                s.yy,
                s.zz,
                s.xy,
                s.yz,
                s.zx,
                von_mises(s)
            )?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Electric field per crystal element.
pub fn write_field_dump(
    path: &Path,
    hash: &str,
    mesh: &VoxelMesh,
    field: &PotentialField,
) -> std::io::Result<()> {
    let mut w = open(path)?;
    preamble(&mut w, hash, "element,x_m,y_m,z_m,ex_v_per_m,ey_v_per_m,ez_v_per_m,magnitude")?;
    for (slot, &e) in field.elements.iter().enumerate() {
        let c = mesh.element_centroid(e);
        let ef = field.e_field[slot];
        let mag = (ef[0] * ef[0] + ef[1] * ef[1] + ef[2] * ef[2]).sqrt();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            e, c[0], c[1], c[2], ef[0], ef[1], ef[2], mag
        )?;
    }
    w.flush()
}

/// Per-snapshot path sections: birefringence, axis angle, retardation.
pub fn write_sections_dump(
    path: &Path,
    hash: &str,
    times: &[f64],
    snapshots: &[Vec<SectionBirefringence>],
) -> std::io::Result<()> {
    let mut w = open(path)?;
    preamble(&mut w, hash, "time_s,section,delta_n,theta_rad,delta_m_rad")?;
    for (k, sections) in snapshots.iter().enumerate() {
        for (m, s) in sections.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", times[k], m, s.delta_n, s.theta, s.delta_m)?;
        }
    }
    w.flush()
}

/// Fit report for a measured or synthesized trace.
pub fn write_fit_report(path: &Path, hash: &str, fit: &DriftFit) -> std::io::Result<()> {
    let mut w = open(path)?;
    preamble(&mut w, hash, "i_ac,phi_rad,a,b,c,residual_rms,mean_dc")?;
    writeln!(
        w,
        "{},{},{},{},{},{},{}",
        fit.i_ac, fit.phi, fit.a, fit.b, fit.c, fit.residual_rms, fit.mean_dc
    )?;
    w.flush()
}

/// Record of one toolkit invocation.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub toolkit_version: String,
    pub subcommand: String,
    pub flags: Vec<String>,
    /// Wall-clock seconds per pipeline stage.
    pub stage_seconds: BTreeMap<String, f64>,
    /// Files produced by the run, repo-relative or absolute as invoked.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(config_hash: String, subcommand: &str, flags: Vec<String>) -> RunManifest {
        RunManifest {
            config_hash,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            flags,
            stage_seconds: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_stage(&mut self, stage: &str, seconds: f64) {
        self.stage_seconds.insert(stage.to_string(), seconds);
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
        self.outputs.sort();
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut w = open(path)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serialization");
        writeln!(w, "{text}")?;
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable() {
        let h = config_hash("hello");
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash("hello"));
        assert_ne!(h, config_hash("hello "));
        // Known SHA-256 of "hello".
        assert_eq!(
            h,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }

    #[test]
    fn curve_csv_layout() {
        let result = ModeResult {
            name: "cu_10_0".into(),
            mean_angle: 89.9,
            hwv: 4.7e4,
            curve: vec![crate::sweep::CurvePoint { time: 0.0, crystal_t: 300.0, error: 0.0 }],
            total_error: 0.0,
            corrected_total: 0.0,
        };
        let dir = std::env::temp_dir().join("ovs_report_test");
        let path = dir.join("curve.csv");
        write_curve_csv(&path, "abc", &result).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# config=abc");
        assert_eq!(lines.next().unwrap(), "time_s,crystal_t_k,error");
        assert_eq!(lines.next().unwrap(), "0,300,0");
        std::fs::remove_dir_all(&dir).ok();
    }
}
