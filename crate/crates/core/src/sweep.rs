//! Full-pipeline evaluation per electrode mode and the search over
//! electrode-ratio space.
//!
//! One mode evaluation runs: voxelize -> classify -> electrostatics (once)
//! -> transient thermal -> per-snapshot thermoelasticity -> per-snapshot
//! birefringence accumulation, producing the error-versus-temperature
//! curve. Mode evaluations are independent and may run concurrently;
//! results are merged in deterministic order.

use rayon::prelude::*;
use thiserror::Error;

use crate::electrostatics::{
    self, dominant_axis, mean_field_angle, solve_potential, FieldError, FieldSummary,
    PotentialField,
};
use crate::mechanics::{MechBc, MechanicsError, StressField, ThermoelasticSystem};
use crate::mesh::{optical_path_samples, MeshError, PathSamples, VoxelMesh};
use crate::optics::{
    birefringence_error, build_transforms, delta_b_from_stress, principal_birefringence,
    SectionBirefringence,
};
use crate::scene::{ElectrodeMaterial, ElectrodeMode, Scene, DEFAULT_APPLIED_VOLTAGE};
use crate::signal::bias_correct;
use crate::thermal::{run_transient, TemperatureHistory, ThermalError};

/// Reference timescale for drift normalization, s.
pub const TAU_REF: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Mechanics(#[from] MechanicsError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("mode `{name}` failed ({completed} of {total} modes completed): {source}")]
    Mode {
        name: String,
        completed: usize,
        total: usize,
        source: EvalError,
    },
    #[error("empty mode list")]
    NoModes,
    #[error("empty ratio grid")]
    EmptyGrid,
}

/// One point of the error-versus-temperature curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub time: f64,
    /// Volume-mean crystal temperature, K.
    pub crystal_t: f64,
    /// Intensity deviation from the static work point.
    pub error: f64,
}

/// Summary of one modulation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub name: String,
    /// Path-averaged field angle, degrees.
    pub mean_angle: f64,
    /// Half-wave voltage, V; infinite when the retardation per volt is
    /// below the numeric floor.
    pub hwv: f64,
    pub curve: Vec<CurvePoint>,
    /// Range (max - min) of the signed error over the window.
    pub total_error: f64,
    /// Total error normalized to the reference timescale.
    pub corrected_total: f64,
}

/// Heavyweight byproducts of an evaluation, retained on request for file
/// dumps and diagnostics.
pub struct ModeEvaluation {
    pub result: ModeResult,
    pub mesh: VoxelMesh,
    pub samples: PathSamples,
    pub history: TemperatureHistory,
    pub potential: PotentialField,
    pub field_summary: FieldSummary,
    /// Per-snapshot stress fields (empty unless requested).
    pub stress_snapshots: Vec<StressField>,
    /// Per-snapshot path sections.
    pub sections_snapshots: Vec<Vec<SectionBirefringence>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Keep the per-snapshot stress fields (memory heavy).
    pub keep_stress: bool,
}

/// Run the full pipeline for one mode.
pub fn evaluate_mode(scene: &Scene, mode: &ElectrodeMode) -> Result<ModeResult, EvalError> {
    Ok(evaluate_mode_detailed(scene, mode, EvalOptions::default())?.result)
}

/// Run the full pipeline keeping intermediate fields.
pub fn evaluate_mode_detailed(
    scene: &Scene,
    mode: &ElectrodeMode,
    options: EvalOptions,
) -> Result<ModeEvaluation, EvalError> {
    let scene = scene.with_mode(mode.clone());
    let mesh = VoxelMesh::build(&scene)?;
    let samples = optical_path_samples(&mesh, &scene)?;
    let optics = &scene.optics;
    let rel_tol = scene.sim.solver_rel_tol;

    // Electrostatics once per mode: field direction and half-wave voltage.
    let potential = solve_potential(&mesh, mode, optics, rel_tol)?;
    let field_summary = mean_field_angle(&potential, &samples)?;
    let hwv = match electrostatics::half_wave_voltage(&mesh, mode, optics, &samples, rel_tol) {
        Ok(v) => v,
        Err(FieldError::EffectivelyInfiniteHwv) => f64::INFINITY,
        Err(e) => return Err(e.into()),
    };

    // Transient heating.
    let history = run_transient(&mesh, &scene.sim)?;
    let reference_t = scene.sim.reference_t();

    // Quasi-static mechanics per snapshot; the stiffness is shared and
    // consecutive snapshots warm-start from a linear extrapolation.
    let system = ThermoelasticSystem::new(&mesh, MechBc::Standard, rel_tol)?;
    let transforms = build_transforms(optics);
    let axis = dominant_axis(samples.direction);

    let mut curve = Vec::with_capacity(history.times.len());
    let mut stress_snapshots = Vec::new();
    let mut sections_snapshots = Vec::with_capacity(history.times.len());
    let mut prev: Option<crate::mechanics::DisplacementField> = None;
    let mut prev2: Option<crate::mechanics::DisplacementField> = None;

    for (k, &time) in history.times.iter().enumerate() {
        let t_nodes = &history.fields[k];
        let crystal_t = history.crystal_mean(&mesh, k);

        let uniform_reference = t_nodes.iter().all(|&t| t == reference_t);
        let (error, sections, stress) = if uniform_reference {
            let sections: Vec<SectionBirefringence> =
                samples.lengths.iter().map(|&l| SectionBirefringence::neutral(l)).collect();
            (0.0, sections, None)
        } else {
            let guess = match (&prev, &prev2) {
                (Some(p), Some(p2)) => {
                    let mut u = p.u.clone();
                    for (i, v) in u.iter_mut().enumerate() {
                        for c in 0..3 {
                            v[c] += p.u[i][c] - p2.u[i][c];
                        }
                    }
                    Some(crate::mechanics::DisplacementField { u, report: p.report })
                }
                (Some(p), None) => Some(p.clone()),
                _ => None,
            };
            let field = system.solve(t_nodes, reference_t, guess.as_ref())?;
            let stress = system.recover_stress(&field, t_nodes, reference_t);
            let sections: Vec<SectionBirefringence> = samples
                .elements
                .iter()
                .zip(&samples.lengths)
                .map(|(&e, &l)| {
                    let db = delta_b_from_stress(&stress.stress[e], &transforms);
                    principal_birefringence(&db, axis, optics.base_index, l, optics.wavelength)
                })
                .collect();
            let error = birefringence_error(&sections);
            prev2 = prev.take();
            prev = Some(field);
            (error, sections, Some(stress))
        };

        curve.push(CurvePoint { time, crystal_t, error });
        sections_snapshots.push(sections);
        if options.keep_stress {
            stress_snapshots.push(stress.unwrap_or_else(|| StressField {
                stress: vec![crate::mechanics::SymTensor::ZERO; mesh.material.len()],
                strain: vec![crate::mechanics::SymTensor::ZERO; mesh.material.len()],
            }));
        }
    }

    let max = curve.iter().map(|p| p.error).fold(f64::NEG_INFINITY, f64::max);
    let min = curve.iter().map(|p| p.error).fold(f64::INFINITY, f64::min);
    let total_error = max - min;
    let corrected_total =
        bias_correct(total_error, scene.sim.t_total, TAU_REF).expect("positive window");

    let result = ModeResult {
        name: mode.name.clone(),
        mean_angle: field_summary.mean_angle,
        hwv,
        curve,
        total_error,
        corrected_total,
    };
    Ok(ModeEvaluation {
        result,
        mesh,
        samples,
        history,
        potential,
        field_summary,
        stress_snapshots,
        sections_snapshots,
    })
}

/// One evaluated point of a ratio search.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub name: String,
    pub ratio_x: f64,
    pub ratio_y: f64,
    pub objective: f64,
}

/// Results for a set of modes with a deterministic ranking.
#[derive(Debug, Clone)]
pub struct SweepReport {
    /// Results in input order.
    pub results: Vec<ModeResult>,
    /// Indices into `results`, sorted by corrected total (ties by name).
    pub ranking: Vec<usize>,
    /// Search trace; empty outside ratio optimization.
    pub trace: Vec<TracePoint>,
}

/// Evaluate all modes (concurrently when a rayon pool is configured) and
/// rank them.
pub fn compare_modes(scene: &Scene, modes: &[ElectrodeMode]) -> Result<SweepReport, SweepError> {
    if modes.is_empty() {
        return Err(SweepError::NoModes);
    }
    let outcomes: Vec<Result<ModeResult, EvalError>> = modes
        .par_iter()
        .map(|mode| evaluate_mode(scene, mode))
        .collect();
    let completed = outcomes.iter().filter(|r| r.is_ok()).count();
    let mut results = Vec::with_capacity(outcomes.len());
    for (mode, outcome) in modes.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(source) => {
                return Err(SweepError::Mode {
                    name: mode.name.clone(),
                    completed,
                    total: modes.len(),
                    source,
                })
            }
        }
    }
    let ranking = rank(&results);
    Ok(SweepReport { results, ranking, trace: Vec::new() })
}

fn rank(results: &[ModeResult]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        results[a]
            .corrected_total
            .partial_cmp(&results[b].corrected_total)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| results[a].name.cmp(&results[b].name))
    });
    order
}

/// Electrode family for ratio optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Cu,
    Ito,
}

impl Family {
    fn waypoints(self) -> [(f64, f64); 3] {
        match self {
            // Built-in coverage endpoints in meters, ordered by falling
            // field angle.
            Family::Cu => [(10e-3, 0.0), (5e-3, 2e-3), (5e-3, 4e-3)],
            Family::Ito => [(0.0, 5e-3), (0.0, 7e-3), (0.0, 10e-3)],
        }
    }

    fn material(self) -> ElectrodeMaterial {
        match self {
            Family::Cu => ElectrodeMaterial::Cu,
            Family::Ito => ElectrodeMaterial::Ito,
        }
    }

    fn thickness(self) -> f64 {
        match self {
            Family::Cu => 0.5e-3,
            Family::Ito => 1e-3,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Family::Cu => "cu",
            Family::Ito => "ito",
        }
    }

    /// Mode at parameter s in [0, 2]: piecewise-linear interpolation of
    /// the electrode coverage through the family's built-in geometries.
    pub fn mode_at(self, s: f64) -> ElectrodeMode {
        let w = self.waypoints();
        let s = s.clamp(0.0, 2.0);
        let (seg, local) = if s <= 1.0 { (0, s) } else { (1, s - 1.0) };
        let (x0, y0) = w[seg];
        let (x1, y1) = w[seg + 1];
        let ratio_x = x0 + (x1 - x0) * local;
        let ratio_y = y0 + (y1 - y0) * local;
        ElectrodeMode {
            name: format!("{}_s{:.4}", self.prefix(), s),
            material: self.material(),
            ratio_x,
            ratio_y,
            thickness: self.thickness(),
            applied_voltage: DEFAULT_APPLIED_VOLTAGE,
        }
    }
}

/// Grid search over one electrode family, minimizing the corrected total
/// error. Returns the best mode and a report carrying the full trace.
pub fn optimize_ratio(
    scene: &Scene,
    family: Family,
    grid_points: usize,
) -> Result<(ElectrodeMode, SweepReport), SweepError> {
    if grid_points == 0 {
        return Err(SweepError::EmptyGrid);
    }
    let modes: Vec<ElectrodeMode> = if grid_points == 1 {
        vec![family.mode_at(0.0)]
    } else {
        (0..grid_points)
            .map(|i| family.mode_at(2.0 * i as f64 / (grid_points - 1) as f64))
            .collect()
    };
    let mut report = compare_modes(scene, &modes)?;
    report.trace = modes
        .iter()
        .zip(&report.results)
        .map(|(m, r)| TracePoint {
            name: m.name.clone(),
            ratio_x: m.ratio_x,
            ratio_y: m.ratio_y,
            objective: r.corrected_total,
        })
        .collect();
    let best_idx = report.ranking[0];
    Ok((modes[best_idx].clone(), report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_interpolation_hits_builtins() {
        let cu = Family::Cu;
        let m0 = cu.mode_at(0.0);
        assert_eq!((m0.ratio_x, m0.ratio_y), (10e-3, 0.0));
        let m1 = cu.mode_at(1.0);
        assert_eq!((m1.ratio_x, m1.ratio_y), (5e-3, 2e-3));
        let m2 = cu.mode_at(2.0);
        assert_eq!((m2.ratio_x, m2.ratio_y), (5e-3, 4e-3));
        let ito = Family::Ito;
        assert_eq!((ito.mode_at(0.0).ratio_x, ito.mode_at(0.0).ratio_y), (0.0, 5e-3));
        assert_eq!((ito.mode_at(2.0).ratio_x, ito.mode_at(2.0).ratio_y), (0.0, 10e-3));
    }

    #[test]
    fn ranking_is_stable_and_complete() {
        let mk = |name: &str, total: f64| ModeResult {
            name: name.into(),
            mean_angle: 0.0,
            hwv: 1.0,
            curve: Vec::new(),
            total_error: total,
            corrected_total: total,
        };
        let results = vec![mk("b", 2.0), mk("a", 1.0), mk("c", 1.0)];
        let order = rank(&results);
        assert_eq!(order, vec![1, 2, 0]);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }
}
