//! Transient heat conduction on the voxel mesh.
//!
//! Discretization: node-centered finite volumes on the structured grid.
//! Each axis edge of an element carries a conductance k*h/4, each node an
//! eighth of the element heat capacity, and exterior faces exchange
//! h_conv*(T - T_ambient) lumped onto their corner nodes. Off-diagonal
//! entries are nonpositive, so together with backward-difference stepping
//! the discrete solution respects the continuous temperature bounds.
//!
//! The t = 0 snapshot is the uniform initial state; the heater base is
//! held at its setpoint from the first step onward.

use thiserror::Error;

use crate::linalg::{pcg, Csr, JacobiCsr, SolveError};
use crate::mesh::{VoxelMesh, NO_MATERIAL};
use crate::scene::SimParams;

#[derive(Debug, Error)]
pub enum ThermalError {
    #[error("thermal solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("t_total is not an integer multiple of t_step")]
    StepMismatch,
    #[error("probe point outside the mesh")]
    OutOfDomain,
    #[error("probe time {0} outside the simulated window")]
    OutOfWindow(f64),
}

/// Temperature snapshots at every step, kelvin per active node.
#[derive(Debug, Clone)]
pub struct TemperatureHistory {
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
}

// The maximum-principle checks sit at 1e-9 K, so thermal steps converge
// well past the configured tolerance; the solves are cheap.
const THERMAL_EXTRA_TOL: f64 = 1e-14;

/// Edge conductances, lumped capacities and convection terms of the mesh.
struct ConductionSystem {
    matrix: Csr,
    /// Lumped heat capacity per node, J/K.
    capacity: Vec<f64>,
    /// Convective conductance h*A per node, W/K.
    convection: Vec<f64>,
    /// Dirichlet flags for heater nodes.
    heater: Vec<bool>,
}

fn build_system(mesh: &VoxelMesh, params: &SimParams) -> ConductionSystem {
    let n = mesh.n_active_nodes();
    let h = mesh.spacing;

    // Per-row column pattern: the node itself and its six axis neighbors.
    let sx = 1i64;
    let sy = (mesh.nx + 1) as i64;
    let sz = ((mesh.nx + 1) * (mesh.ny + 1)) as i64;
    let offsets = [-sz, -sy, -sx, 0, sx, sy, sz];
    let n_dense = (mesh.nx + 1) * (mesh.ny + 1) * (mesh.nz + 1);
    let mut patterns: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (active, &dense) in mesh.active_nodes.iter().enumerate() {
        for &off in &offsets {
            let nb = dense as i64 + off;
            if nb < 0 || nb >= n_dense as i64 {
                continue;
            }
            let nb_active = mesh.node_index[nb as usize];
            if nb_active >= 0 {
                patterns[active].push(nb_active as u32);
            }
        }
        patterns[active].sort_unstable();
    }
    let mut matrix = Csr::from_pattern(&patterns);

    let mut capacity = vec![0.0f64; n];
    let mut convection = vec![0.0f64; n];

    // Local edges of a hex element: pairs of corner indices along an axis.
    const EDGES: [(usize, usize); 12] = [
        (0, 1),
        (2, 3),
        (4, 5),
        (6, 7), // x edges
        (0, 2),
        (1, 3),
        (4, 6),
        (5, 7), // y edges
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7), // z edges
    ];

    for e in 0..mesh.material.len() {
        let m = mesh.material[e];
        if m == NO_MATERIAL {
            continue;
        }
        let mat = &mesh.materials[m as usize];
        let g = mat.conductivity * h / 4.0;
        let c = mat.volumetric_heat_capacity() * h * h * h / 8.0;
        let nodes = mesh.element_active_nodes(e);
        for &nd in &nodes {
            capacity[nd] += c;
        }
        for &(a, b) in &EDGES {
            let (na, nb) = (nodes[a], nodes[b]);
            matrix.add(na, na, g);
            matrix.add(nb, nb, g);
            matrix.add(na, nb, -g);
            matrix.add(nb, na, -g);
        }
    }

    for face in &mesh.convective_exterior {
        let ga = params.convection_h * h * h / 4.0;
        for nd in mesh.face_active_nodes(*face) {
            convection[nd] += ga;
        }
    }

    let mut heater = vec![false; n];
    for face in &mesh.heater_base {
        for nd in mesh.face_active_nodes(*face) {
            heater[nd] = true;
        }
    }

    ConductionSystem { matrix, capacity, convection, heater }
}

/// Backward-difference transient over the configured window, starting
/// from a uniform ambient field.
pub fn run_transient(mesh: &VoxelMesh, params: &SimParams) -> Result<TemperatureHistory, ThermalError> {
    let steps = params.t_total / params.t_step;
    if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
        return Err(ThermalError::StepMismatch);
    }
    let steps = steps.round() as usize;
    let dt = params.t_step;
    let n = mesh.n_active_nodes();

    let sys = build_system(mesh, params);

    // System matrix for one implicit step: C/dt + K + convection,
    // with heater rows replaced by the identity.
    let mut step_matrix = sys.matrix.clone();
    for i in 0..n {
        if sys.heater[i] {
            for k in step_matrix.row_ptr[i]..step_matrix.row_ptr[i + 1] {
                step_matrix.vals[k] = if step_matrix.cols[k] as usize == i { 1.0 } else { 0.0 };
            }
        } else {
            step_matrix.add(i, i, sys.capacity[i] / dt + sys.convection[i]);
            // Couplings into heater nodes move to the right-hand side.
            for k in step_matrix.row_ptr[i]..step_matrix.row_ptr[i + 1] {
                if sys.heater[step_matrix.cols[k] as usize] {
                    step_matrix.vals[k] = 0.0;
                }
            }
        }
    }
    // Symmetry: zero the (free, heater) couplings stored on heater rows
    // was handled above by rewriting heater rows; the matrix stays
    // symmetric because both halves are now structural zeros.
    let op = JacobiCsr::new(&step_matrix)?;

    let mut times = Vec::with_capacity(steps + 1);
    let mut fields = Vec::with_capacity(steps + 1);
    times.push(0.0);
    fields.push(vec![params.ambient_t; n]);

    let rel_tol = params.solver_rel_tol.min(THERMAL_EXTRA_TOL);
    let mut current = vec![params.ambient_t; n];
    // Conduction coupling into heater nodes, for the RHS.
    let heater_coupling: Vec<f64> = {
        let mut out = vec![0.0; n];
        for i in 0..n {
            if sys.heater[i] {
                continue;
            }
            for k in sys.matrix.row_ptr[i]..sys.matrix.row_ptr[i + 1] {
                let j = sys.matrix.cols[k] as usize;
                if sys.heater[j] {
                    out[i] -= sys.matrix.vals[k]; // -(-g) = +g
                }
            }
        }
        out
    };

    let mut rhs = vec![0.0f64; n];
    for step in 1..=steps {
        for i in 0..n {
            rhs[i] = if sys.heater[i] {
                params.heater_t
            } else {
                sys.capacity[i] / dt * current[i]
                    + sys.convection[i] * params.ambient_t
                    + heater_coupling[i] * params.heater_t
            };
        }
        pcg(&op, &rhs, &mut current, rel_tol, 200_000)?;
        times.push(step as f64 * dt);
        fields.push(current.clone());
    }

    Ok(TemperatureHistory { times, fields })
}

impl TemperatureHistory {
    /// Trilinear interpolation in space, linear in time. Heater nodes
    /// carry the setpoint from the first step onward.
    pub fn probe(&self, mesh: &VoxelMesh, point: [f64; 3], time: f64) -> Result<f64, ThermalError> {
        let t_end = *self.times.last().unwrap();
        if time < 0.0 || time > t_end + 1e-12 {
            return Err(ThermalError::OutOfWindow(time));
        }
        let e = mesh.locate(point).ok_or(ThermalError::OutOfDomain)?;

        // Fractional coordinates within the element.
        let (ix, iy, iz) = mesh.element_coords(e);
        let h = mesh.spacing;
        let fx = ((point[0] - mesh.origin[0]) / h - ix as f64).clamp(0.0, 1.0);
        let fy = ((point[1] - mesh.origin[1]) / h - iy as f64).clamp(0.0, 1.0);
        let fz = ((point[2] - mesh.origin[2]) / h - iz as f64).clamp(0.0, 1.0);
        let nodes = mesh.element_active_nodes(e);

        let spatial = |field: &[f64]| -> f64 {
            let mut acc = 0.0;
            for (k, &n) in nodes.iter().enumerate() {
                let wx = if k & 1 == 0 { 1.0 - fx } else { fx };
                let wy = if k & 2 == 0 { 1.0 - fy } else { fy };
                let wz = if k & 4 == 0 { 1.0 - fz } else { fz };
                acc += wx * wy * wz * field[n];
            }
            acc
        };

        // Linear interpolation between the bracketing snapshots.
        let time = time.min(t_end);
        let k = self
            .times
            .iter()
            .rposition(|&t| t <= time + 1e-12)
            .unwrap_or(0);
        if k + 1 >= self.times.len() || (self.times[k] - time).abs() < 1e-12 {
            return Ok(spatial(&self.fields[k]));
        }
        let t0 = self.times[k];
        let t1 = self.times[k + 1];
        let w = (time - t0) / (t1 - t0);
        Ok((1.0 - w) * spatial(&self.fields[k]) + w * spatial(&self.fields[k + 1]))
    }

    /// Volume-average temperature over the crystal elements of one
    /// snapshot (mean of the element-corner averages).
    pub fn crystal_mean(&self, mesh: &VoxelMesh, snapshot: usize) -> f64 {
        let field = &self.fields[snapshot];
        let mut acc = 0.0;
        let mut count = 0usize;
        for e in mesh.crystal_elements() {
            let nodes = mesh.element_active_nodes(e);
            let mut t = 0.0;
            for &n in &nodes {
                t += field[n];
            }
            acc += t / 8.0;
            count += 1;
        }
        acc / count as f64
    }

    /// Energy bookkeeping for one step: change in stored heat versus net
    /// boundary inflow through the heater links and convective faces,
    /// evaluated on the implicit (end-of-step) field. Returns
    /// (stored_change, boundary_inflow), J.
    pub fn energy_balance_step(
        &self,
        mesh: &VoxelMesh,
        params: &SimParams,
        step: usize,
    ) -> (f64, f64) {
        let sys = build_system(mesh, params);
        let n = mesh.n_active_nodes();
        let prev = &self.fields[step - 1];
        let next = &self.fields[step];
        let dt = params.t_step;

        let mut stored = 0.0;
        let mut inflow = 0.0;
        for i in 0..n {
            if sys.heater[i] {
                continue;
            }
            stored += sys.capacity[i] * (next[i] - prev[i]);
            inflow += dt * sys.convection[i] * (params.ambient_t - next[i]);
            for k in sys.matrix.row_ptr[i]..sys.matrix.row_ptr[i + 1] {
                let j = sys.matrix.cols[k] as usize;
                if sys.heater[j] {
                    // conductance g is stored as -g off-diagonal
                    inflow += dt * (-sys.matrix.vals[k]) * (next[j] - next[i]);
                }
            }
        }
        (stored, inflow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Scene;

    fn slab_scene(height_mm: usize, h: f64, t_step: f64, t_total: f64, conv: f64) -> Scene {
        let height = height_mm as f64 * 1e-3;
        let doc = format!(
            r#"
[materials.sio2]
density = 2200.0
specific_heat = 891.0
poisson = 0.17
youngs = 7.50e10
thermal_expansion = 5.5e-7
conductivity = 1.46

[materials.bgo]
density = 7130.0
specific_heat = 350.0
poisson = 0.20
youngs = 7.31e10
thermal_expansion = 6.3e-6
conductivity = 0.18

[optics]
crystal_material = "bgo"
base_index = 2.07
q11 = -2.995e-13
q44 = -1.365e-12
r41 = 1.03e-12
rel_permittivity = 16.0
wavelength = 976e-9

[[geometry.primitives]]
shape = "box"
material = "sio2"
origin = [0.0, 0.0, 0.0]
extents = [0.004, 0.004, {height}]

[[geometry.primitives]]
shape = "box"
material = "bgo"
origin = [0.001, 0.001, {height}]
extents = [0.002, 0.002, 0.002]

[path]
entry = [0.001, 0.002, {mid}]
direction = [1.0, 0.0, 0.0]
length = 0.002

[sim]
t_total = {t_total}
t_step = {t_step}
ambient_t = 300.0
heater_t = 358.0
heater_material = "sio2"
convection_h = {conv}
mesh_resolution = {h}
"#,
            height = height,
            mid = height + 0.001,
            t_total = t_total,
            t_step = t_step,
            h = h,
            conv = conv,
        );
        Scene::parse(&doc).unwrap()
    }

    /// Dirichlet base, insulated far end: quarter-range series solution.
    fn slab_series(z: f64, t: f64, length: f64, alpha: f64) -> f64 {
        let mut acc = 0.0;
        for n in 0..200 {
            let mu = (2 * n + 1) as f64 * std::f64::consts::PI / (2.0 * length);
            acc += 4.0 / ((2 * n + 1) as f64 * std::f64::consts::PI)
                * (mu * z).sin()
                * (-alpha * mu * mu * t).exp();
        }
        1.0 - acc
    }

    #[test]
    fn equilibrium_when_heater_matches_ambient() {
        let mut scene = slab_scene(6, 1e-3, 5.0, 20.0, 10.0);
        scene.sim.heater_t = scene.sim.ambient_t;
        let mesh = VoxelMesh::build(&scene).unwrap();
        let hist = run_transient(&mesh, &scene.sim).unwrap();
        for field in &hist.fields {
            for &t in field {
                assert_eq!(t, scene.sim.ambient_t);
            }
        }
    }

    #[test]
    fn slab_matches_series_oracle() {
        // Insulated sides (h = 0) make the solution one-dimensional; only
        // the silica bar, no crystal cap.
        let mut scene_bar = slab_scene(12, 0.5e-3, 0.25, 30.0, 0.0);
        scene_bar.primitives.truncate(1);
        let mesh = VoxelMesh::build(&scene_bar).unwrap();
        let hist = run_transient(&mesh, &scene_bar.sim).unwrap();

        let mat = &scene_bar.materials["sio2"];
        let alpha = mat.conductivity / mat.volumetric_heat_capacity();
        let length = 0.012;
        let dt_scale = scene_bar.sim.heater_t - scene_bar.sim.ambient_t;

        // The instantaneous base step makes t -> 0 singular for any fixed
        // time step; compare once the startup layer is resolved.
        let mut worst = 0.0f64;
        for (k, &time) in hist.times.iter().enumerate() {
            if time < 5.0 {
                continue;
            }
            for (active, &dense) in mesh.active_nodes.iter().enumerate() {
                let p = mesh.dense_node_position(dense);
                // Distance from the fixed-temperature base at z = 0.
                let analytic = scene_bar.sim.ambient_t
                    + dt_scale * slab_series(p[2], time, length, alpha);
                let got = hist.fields[k][active];
                worst = worst.max((got - analytic).abs());
            }
        }
        assert!(
            worst < 0.01 * dt_scale,
            "worst nodal error {worst} K vs budget {}",
            0.01 * dt_scale
        );
    }

    #[test]
    fn temperature_bounds_and_monotonicity() {
        let scene = slab_scene(8, 1e-3, 5.0, 60.0, 10.0);
        let mesh = VoxelMesh::build(&scene).unwrap();
        let hist = run_transient(&mesh, &scene.sim).unwrap();
        let lo = scene.sim.ambient_t - 1e-9;
        let hi = scene.sim.heater_t + 1e-9;
        for field in &hist.fields {
            for &t in field {
                assert!(t >= lo && t <= hi, "{t}");
            }
        }
        for w in hist.fields.windows(2) {
            for i in 0..w[0].len() {
                assert!(w[1][i] >= w[0][i] - 1e-9, "node {i}");
            }
        }
    }

    #[test]
    fn energy_balance_per_step() {
        let scene = slab_scene(8, 1e-3, 5.0, 40.0, 15.0);
        let mesh = VoxelMesh::build(&scene).unwrap();
        let hist = run_transient(&mesh, &scene.sim).unwrap();
        for step in 1..hist.times.len() {
            let (stored, inflow) = hist.energy_balance_step(&mesh, &scene.sim, step);
            let scale = stored.abs().max(inflow.abs()).max(1e-30);
            assert!(
                (stored - inflow).abs() / scale < 1e-6,
                "step {step}: stored {stored}, inflow {inflow}"
            );
        }
    }

    #[test]
    fn temporal_refinement_changes_little() {
        let coarse = slab_scene(15, 1e-3, 5.0, 60.0, 10.0);
        let fine = slab_scene(15, 1e-3, 1.0, 60.0, 10.0);
        let mesh_c = VoxelMesh::build(&coarse).unwrap();
        let mesh_f = VoxelMesh::build(&fine).unwrap();
        let hc = run_transient(&mesh_c, &coarse.sim).unwrap();
        let hf = run_transient(&mesh_f, &fine.sim).unwrap();
        let mc = hc.crystal_mean(&mesh_c, hc.times.len() - 1);
        let mf = hf.crystal_mean(&mesh_f, hf.times.len() - 1);
        assert!((mc - mf).abs() < 0.5, "coarse {mc}, fine {mf}");
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let scene = slab_scene(6, 1e-3, 5.0, 20.0, 10.0);
        let mesh = VoxelMesh::build(&scene).unwrap();
        let a = run_transient(&mesh, &scene.sim).unwrap();
        let b = run_transient(&mesh, &scene.sim).unwrap();
        for (fa, fb) in a.fields.iter().zip(&b.fields) {
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn probe_contracts() {
        let scene = slab_scene(8, 1e-3, 5.0, 30.0, 10.0);
        let mesh = VoxelMesh::build(&scene).unwrap();
        let hist = run_transient(&mesh, &scene.sim).unwrap();

        // Heater base holds the setpoint at any solved time.
        for time in [5.0, 12.5, 30.0] {
            let t = hist.probe(&mesh, [0.002, 0.002, 0.0], time).unwrap();
            assert_eq!(t, scene.sim.heater_t);
        }

        // A node probe at a snapshot time returns the stored value.
        let dense = mesh.active_nodes[137];
        let p = mesh.dense_node_position(dense);
        let t = hist.probe(&mesh, p, 10.0).unwrap();
        assert_eq!(t, hist.fields[2][137]);

        // Midway in time is the mean of the bracketing snapshots.
        let t_mid = hist.probe(&mesh, p, 12.5).unwrap();
        assert!((t_mid - 0.5 * (hist.fields[2][137] + hist.fields[3][137])).abs() < 1e-12);

        assert!(hist.probe(&mesh, [1.0, 0.0, 0.0], 5.0).is_err());
        assert!(hist.probe(&mesh, p, 1e4).is_err());
    }
}
