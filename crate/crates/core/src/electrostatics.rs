//! Electrode-driven potential field inside the crystal, path-averaged
//! field direction and the half-wave voltage of a modulation mode.
//!
//! The solve domain is the crystal volume only: electrode footprints are
//! equipotential node sets on its surface and every other face carries a
//! zero-flux condition, which approximates the field confinement of a
//! high-permittivity crystal in air. The per-mode angle tolerance budget
//! accounts for that closed-domain simplification.

use std::collections::HashMap;
use std::sync::OnceLock;

use thiserror::Error;

use crate::linalg::{pcg, Csr, JacobiCsr, SolveError};
use crate::mesh::{PathSamples, VoxelMesh};
use crate::optics::{electrooptic_delta_b, principal_birefringence, PerturbationVector};
use crate::scene::{Axis, ElectrodeMode, OpticalProps};

/// Half-wave voltages beyond this are reported as effectively infinite;
/// the retardation at any realistic drive is below the numeric floor.
pub const HWV_CEILING: f64 = 1e10;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("electrode terminals missing from the mesh (no interface faces classified)")]
    ElectrodesMissing,
    #[error("electrodes short-circuited: {0} shared surface nodes")]
    ShortCircuit(usize),
    #[error("potential solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("path-averaged field is zero; field angle undefined")]
    ZeroField,
    #[error("accumulated retardation below the numeric floor; effectively infinite half-wave voltage")]
    EffectivelyInfiniteHwv,
}

/// Solved potential over the crystal subdomain with per-element fields.
#[derive(Debug, Clone)]
pub struct PotentialField {
    /// Active node ids of the crystal subdomain.
    pub nodes: Vec<usize>,
    /// Potential per subdomain node, V.
    pub phi: Vec<f64>,
    /// Crystal element ids.
    pub elements: Vec<usize>,
    /// Field vector per crystal element, V/m.
    pub e_field: Vec<[f64; 3]>,
    element_slot: HashMap<usize, usize>,
}

/// Path-averaged field direction summary.
#[derive(Debug, Clone)]
pub struct FieldSummary {
    /// Angle between the length-weighted average field and the
    /// propagation direction, degrees in [0, 90].
    pub mean_angle: f64,
    /// Field vector per path section, V/m.
    pub section_fields: Vec<[f64; 3]>,
}

// Reference conduction-style matrix of a unit hex, grad(N_a) . grad(N_b).
static K_SCALAR: OnceLock<[[f64; 8]; 8]> = OnceLock::new();

fn reference_laplacian() -> &'static [[f64; 8]; 8] {
    K_SCALAR.get_or_init(|| {
        let gp = 1.0 / 3.0f64.sqrt();
        let mut k = [[0.0; 8]; 8];
        for &xi in &[-gp, gp] {
            for &eta in &[-gp, gp] {
                for &zeta in &[-gp, gp] {
                    let g = scalar_grads(xi, eta, zeta);
                    let w = 1.0 / 8.0;
                    for a in 0..8 {
                        for b in 0..8 {
                            k[a][b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1] + g[a][2] * g[b][2]);
                        }
                    }
                }
            }
        }
        k
    })
}

fn scalar_grads(xi: f64, eta: f64, zeta: f64) -> [[f64; 3]; 8] {
    let mut g = [[0.0; 3]; 8];
    for (k, gk) in g.iter_mut().enumerate() {
        let s = [
            if k & 1 == 0 { -1.0 } else { 1.0 },
            if k & 2 == 0 { -1.0 } else { 1.0 },
            if k & 4 == 0 { -1.0 } else { 1.0 },
        ];
        gk[0] = 2.0 * s[0] * (1.0 + eta * s[1]) * (1.0 + zeta * s[2]) / 8.0;
        gk[1] = 2.0 * s[1] * (1.0 + xi * s[0]) * (1.0 + zeta * s[2]) / 8.0;
        gk[2] = 2.0 * s[2] * (1.0 + xi * s[0]) * (1.0 + eta * s[1]) / 8.0;
    }
    g
}

/// Solve the Laplace problem on the crystal with the mode's terminals at
/// +V/2 and -V/2.
pub fn solve_potential(
    mesh: &VoxelMesh,
    mode: &ElectrodeMode,
    optics: &OpticalProps,
    rel_tol: f64,
) -> Result<PotentialField, FieldError> {
    let elements = mesh.crystal_elements();
    if mesh.electrodes.len() != 2
        || mesh.electrodes.iter().any(|s| s.nodes.is_empty())
    {
        return Err(FieldError::ElectrodesMissing);
    }
    let positive = &mesh.electrodes[0].nodes;
    let negative = &mesh.electrodes[1].nodes;
    let shared = positive.iter().filter(|n| negative.binary_search(n).is_ok()).count();
    if shared > 0 {
        return Err(FieldError::ShortCircuit(shared));
    }

    // Local numbering of crystal-subdomain nodes.
    let mut local_of_active: HashMap<usize, usize> = HashMap::new();
    let mut nodes: Vec<usize> = Vec::new();
    for &e in &elements {
        for n in mesh.element_active_nodes(e) {
            local_of_active.entry(n).or_insert_with(|| {
                nodes.push(n);
                nodes.len() - 1
            });
        }
    }
    let n_local = nodes.len();

    let voltage = if mode.applied_voltage != 0.0 { mode.applied_voltage } else { 1.0 };
    let mut dirichlet = vec![0.0f64; n_local];
    let mut is_fixed = vec![false; n_local];
    for (&set, sign) in [(positive, 0.5), (negative, -0.5)].iter().map(|(s, v)| (s, *v)) {
        for &n in set.iter() {
            if let Some(&l) = local_of_active.get(&n) {
                is_fixed[l] = true;
                dirichlet[l] = sign * voltage;
            }
        }
    }

    // Pattern from element connectivity (full symmetric storage).
    let mut patterns: Vec<Vec<u32>> = vec![Vec::new(); n_local];
    for &e in &elements {
        let locs: Vec<usize> = mesh
            .element_active_nodes(e)
            .iter()
            .map(|n| local_of_active[n])
            .collect();
        for &a in &locs {
            for &b in &locs {
                patterns[a].push(b as u32);
            }
        }
    }
    for row in &mut patterns {
        row.sort_unstable();
        row.dedup();
    }
    let mut matrix = Csr::from_pattern(&patterns);

    let kref = reference_laplacian();
    let h = mesh.spacing;
    let eps = optics.rel_permittivity;
    let mut rhs = vec![0.0f64; n_local];
    for &e in &elements {
        let locs: Vec<usize> = mesh
            .element_active_nodes(e)
            .iter()
            .map(|n| local_of_active[n])
            .collect();
        for a in 0..8 {
            let la = locs[a];
            if is_fixed[la] {
                continue;
            }
            for b in 0..8 {
                let lb = locs[b];
                let v = eps * h * kref[a][b];
                if is_fixed[lb] {
                    rhs[la] -= v * dirichlet[lb];
                } else {
                    matrix.add(la, lb, v);
                }
            }
        }
    }
    for l in 0..n_local {
        if is_fixed[l] {
            matrix.add(l, l, 1.0);
            rhs[l] = dirichlet[l];
        }
    }

    let op = JacobiCsr::new(&matrix)?;
    let mut phi = vec![0.0f64; n_local];
    pcg(&op, &rhs, &mut phi, rel_tol, 100_000)?;

    // Per-element field from the centroid potential gradient.
    let inv4h = 1.0 / (4.0 * h);
    let mut e_field = Vec::with_capacity(elements.len());
    let mut element_slot = HashMap::with_capacity(elements.len());
    for (slot, &e) in elements.iter().enumerate() {
        let mut grad = [0.0f64; 3];
        for (k, n) in mesh.element_active_nodes(e).into_iter().enumerate() {
            let s = [
                if k & 1 == 0 { -1.0 } else { 1.0 },
                if k & 2 == 0 { -1.0 } else { 1.0 },
                if k & 4 == 0 { -1.0 } else { 1.0 },
            ];
            let p = phi[local_of_active[&n]];
            for d in 0..3 {
                grad[d] += p * s[d] * inv4h;
            }
        }
        e_field.push([-grad[0], -grad[1], -grad[2]]);
        element_slot.insert(e, slot);
    }

    Ok(PotentialField { nodes, phi, elements, e_field, element_slot })
}

impl PotentialField {
    pub fn field_at_element(&self, element: usize) -> Option<[f64; 3]> {
        self.element_slot.get(&element).map(|&s| self.e_field[s])
    }
}

/// Length-weighted mean field along the path and its angle to the
/// propagation direction, folded into [0, 90] degrees.
pub fn mean_field_angle(field: &PotentialField, samples: &PathSamples) -> Result<FieldSummary, FieldError> {
    let mut mean = [0.0f64; 3];
    let mut section_fields = Vec::with_capacity(samples.len());
    let mut total = 0.0;
    for (&e, &l) in samples.elements.iter().zip(&samples.lengths) {
        let ef = field.field_at_element(e).ok_or(FieldError::ZeroField)?;
        section_fields.push(ef);
        for d in 0..3 {
            mean[d] += l * ef[d];
        }
        total += l;
    }
    for m in &mut mean {
        *m /= total;
    }
    let norm = (mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]).sqrt();
    if norm == 0.0 {
        return Err(FieldError::ZeroField);
    }
    let along = (mean[0] * samples.direction[0]
        + mean[1] * samples.direction[1]
        + mean[2] * samples.direction[2])
        .abs();
    let mean_angle = (along / norm).clamp(0.0, 1.0).acos().to_degrees();
    Ok(FieldSummary { mean_angle, section_fields })
}

/// Electro-optic index perturbation of one section's field.
pub fn electrooptic_delta_b_for(e: [f64; 3], optics: &OpticalProps) -> PerturbationVector {
    electrooptic_delta_b(e, optics.r41)
}

/// Voltage at which the accumulated electro-optic retardation along the
/// path reaches pi, by linear scaling from the reference solve. Stress
/// does not enter: the half-wave voltage is defined at the zero-stress
/// datum.
pub fn half_wave_voltage(
    mesh: &VoxelMesh,
    mode: &ElectrodeMode,
    optics: &OpticalProps,
    samples: &PathSamples,
    rel_tol: f64,
) -> Result<f64, FieldError> {
    let field = solve_potential(mesh, mode, optics, rel_tol)?;
    let v_ref = if mode.applied_voltage != 0.0 { mode.applied_voltage } else { 1.0 };
    let gamma = retardation_at(&field, optics, samples)?;
    let hwv = std::f64::consts::PI * v_ref.abs() / gamma;
    if !hwv.is_finite() || hwv > HWV_CEILING {
        return Err(FieldError::EffectivelyInfiniteHwv);
    }
    Ok(hwv)
}

/// Accumulated electro-optic retardation of a solved field, radians.
pub fn retardation_at(
    field: &PotentialField,
    optics: &OpticalProps,
    samples: &PathSamples,
) -> Result<f64, FieldError> {
    let axis = dominant_axis(samples.direction);
    let mut gamma = 0.0;
    for (&e, &l) in samples.elements.iter().zip(&samples.lengths) {
        let ef = field.field_at_element(e).ok_or(FieldError::ZeroField)?;
        let db = electrooptic_delta_b(ef, optics.r41);
        let section = principal_birefringence(&db, axis, optics.base_index, l, optics.wavelength);
        gamma += section.delta_m;
    }
    Ok(gamma)
}

/// Propagation axis for transverse-index selection.
pub fn dominant_axis(direction: [f64; 3]) -> Axis {
    let ax = direction[0].abs();
    let ay = direction[1].abs();
    let az = direction[2].abs();
    if ax >= ay && ax >= az {
        Axis::X
    } else if ay >= az {
        Axis::Y
    } else {
        Axis::Z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::optical_path_samples;
    use crate::scene::{ElectrodeMode, Scene};

    fn default_with(mode: &str) -> (Scene, VoxelMesh, PathSamples) {
        let scene = Scene::default_scene().with_mode(ElectrodeMode::builtin(mode).unwrap());
        let mesh = VoxelMesh::build(&scene).unwrap();
        let samples = optical_path_samples(&mesh, &scene).unwrap();
        (scene, mesh, samples)
    }

    #[test]
    fn parallel_plates_give_uniform_field() {
        let (scene, mesh, samples) = default_with("cu_10_0");
        let field = solve_potential(&mesh, scene.electrode.as_ref().unwrap(), &scene.optics, 1e-12).unwrap();
        let expected = scene.electrode.as_ref().unwrap().applied_voltage / 0.01;
        for (&e, _) in samples.elements.iter().zip(&samples.lengths) {
            let ef = field.field_at_element(e).unwrap();
            let mag = (ef[0] * ef[0] + ef[1] * ef[1] + ef[2] * ef[2]).sqrt();
            assert!((mag - expected).abs() < 5e-3 * expected, "|E| {mag} vs {expected}");
            assert!(ef[1].abs() / mag > 0.999, "field should be along y");
        }
        let summary = mean_field_angle(&field, &samples).unwrap();
        assert!((summary.mean_angle - 90.0).abs() < 0.5);
    }

    #[test]
    fn longitudinal_plates_align_with_beam() {
        let (scene, mesh, samples) = default_with("ito_0_10");
        let field = solve_potential(&mesh, scene.electrode.as_ref().unwrap(), &scene.optics, 1e-12).unwrap();
        let summary = mean_field_angle(&field, &samples).unwrap();
        assert!(summary.mean_angle < 0.5, "angle {}", summary.mean_angle);
    }

    #[test]
    fn potential_scales_linearly_with_voltage() {
        let (scene, mesh, _) = default_with("cu_5_4");
        let mut mode = scene.electrode.clone().unwrap();
        let a = solve_potential(&mesh, &mode, &scene.optics, 1e-10).unwrap();
        mode.applied_voltage *= 2.0;
        let b = solve_potential(&mesh, &mode, &scene.optics, 1e-10).unwrap();
        for (pa, pb) in a.phi.iter().zip(&b.phi) {
            assert_eq!(2.0 * pa, *pb);
        }
    }

    #[test]
    fn polarity_swap_negates_potential() {
        let (scene, mesh, _) = default_with("cu_5_2");
        let mode = scene.electrode.clone().unwrap();
        let a = solve_potential(&mesh, &mode, &scene.optics, 1e-10).unwrap();
        let mut swapped = mode;
        swapped.applied_voltage = -swapped.applied_voltage;
        let b = solve_potential(&mesh, &swapped, &scene.optics, 1e-10).unwrap();
        for (pa, pb) in a.phi.iter().zip(&b.phi) {
            assert_eq!(-pa, *pb);
        }
    }

    #[test]
    fn angle_invariant_under_voltage_scaling() {
        let (scene, mesh, samples) = default_with("cu_5_4");
        let mut mode = scene.electrode.clone().unwrap();
        let a = solve_potential(&mesh, &mode, &scene.optics, 1e-10).unwrap();
        let angle_a = mean_field_angle(&a, &samples).unwrap().mean_angle;
        mode.applied_voltage *= 8.0;
        let b = solve_potential(&mesh, &mode, &scene.optics, 1e-10).unwrap();
        let angle_b = mean_field_angle(&b, &samples).unwrap().mean_angle;
        assert_eq!(angle_a, angle_b);
    }

    #[test]
    fn halving_r41_doubles_hwv_exactly() {
        let (scene, mesh, samples) = default_with("cu_10_0");
        let mode = scene.electrode.as_ref().unwrap();
        let hwv = half_wave_voltage(&mesh, mode, &scene.optics, &samples, 1e-12).unwrap();
        let mut halved = scene.optics.clone();
        halved.r41 *= 0.5;
        let hwv2 = half_wave_voltage(&mesh, mode, &halved, &samples, 1e-12).unwrap();
        assert_eq!(hwv2, 2.0 * hwv);
    }

    #[test]
    fn transverse_hwv_matches_closed_form() {
        // Uniform transverse field: half-wave when n0^3 r41 E L = lambda/2,
        // and E = V/d with d = L, so V_hw = lambda / (2 n0^3 r41).
        let (scene, mesh, samples) = default_with("cu_10_0");
        let o = &scene.optics;
        let expected = o.wavelength / (2.0 * o.base_index.powi(3) * o.r41);
        let hwv = half_wave_voltage(&mesh, scene.electrode.as_ref().unwrap(), o, &samples, 1e-12).unwrap();
        assert!(
            (hwv - expected).abs() < 0.01 * expected,
            "hwv {hwv} vs closed form {expected}"
        );
    }

    #[test]
    fn longitudinal_mode_reports_infinite_hwv() {
        let (scene, mesh, samples) = default_with("ito_0_10");
        let err = half_wave_voltage(&mesh, scene.electrode.as_ref().unwrap(), &scene.optics, &samples, 1e-12);
        assert!(matches!(err, Err(FieldError::EffectivelyInfiniteHwv)), "{err:?}");
    }

    #[test]
    fn missing_electrodes_detected() {
        let mut scene = Scene::default_scene();
        scene.electrode = None;
        let mesh = VoxelMesh::build(&scene).unwrap();
        let mode = ElectrodeMode::builtin("cu_10_0").unwrap();
        let err = solve_potential(&mesh, &mode, &scene.optics, 1e-10);
        assert!(matches!(err, Err(FieldError::ElectrodesMissing)));
    }
}
