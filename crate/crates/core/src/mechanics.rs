//! Quasi-static linear thermoelasticity on the voxel mesh: displacement
//! solve per temperature snapshot, strain/stress recovery at element
//! centroids and stress sampling along the optical path.
//!
//! The constitutive law is isotropic Hooke with a thermal eigenstrain
//! alpha*(T - T_ref) on the diagonal:
//! sigma = 2 mu eps + lambda tr(eps) I - (3 lambda + 2 mu) alpha dT I.
//! Snapshots share the stiffness matrix; only the load vector changes, so
//! a system is assembled once per mesh and solved per snapshot with warm
//! starts.

use std::sync::OnceLock;

use thiserror::Error;

use crate::linalg::{pcg, BlockJacobiBsr3, CgReport, SolveError, SymBsr3};
use crate::mesh::{Face, PathSamples, VoxelMesh, NO_MATERIAL};

#[derive(Debug, Error)]
pub enum MechanicsError {
    #[error("thermoelastic solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("temperature field has {got} nodes, mesh has {want}")]
    SizeMismatch { got: usize, want: usize },
    #[error("no nodes available to constrain rigid modes")]
    Unconstrained,
}

/// Symmetric rank-2 tensor in simulation coordinates (tensor shear
/// components, not engineering strains).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub yz: f64,
    pub zx: f64,
}

impl SymTensor {
    pub const ZERO: SymTensor = SymTensor { xx: 0.0, yy: 0.0, zz: 0.0, xy: 0.0, yz: 0.0, zx: 0.0 };
}

/// Scalar deviatoric stress magnitude.
pub fn von_mises(s: &SymTensor) -> f64 {
    let d1 = s.xx - s.yy;
    let d2 = s.yy - s.zz;
    let d3 = s.zz - s.xx;
    (0.5 * (d1 * d1 + d2 * d2 + d3 * d3) + 3.0 * (s.xy * s.xy + s.yz * s.yz + s.zx * s.zx)).sqrt()
}

/// Per-node displacement vectors, m.
#[derive(Debug, Clone)]
pub struct DisplacementField {
    pub u: Vec<[f64; 3]>,
    pub report: CgReport,
}

/// Per-element stress and strain at centroids. Entries for untagged
/// voxels stay zero.
#[derive(Debug, Clone)]
pub struct StressField {
    pub stress: Vec<SymTensor>,
    pub strain: Vec<SymTensor>,
}

/// Rigid-body and support constraints.
///
/// `Standard` models the stack resting on the heater platform: the
/// heater-plate elements drive the thermal problem but are mechanically
/// inert (the platform is massive and the contact slides), so the solve
/// runs on the remaining elements with their resting surface held
/// vertically plus minimal in-plane pins. Falls back to `Minimal` when no
/// heater material is present, and to a vertically-held heater base when
/// the mesh is heater material only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechBc {
    Standard,
    /// Three-point minimal support permitting free expansion.
    Minimal,
    /// Every exterior-surface node fully clamped.
    ClampAllBoundary,
}

// Reference element matrices at unit spacing; the physical matrices are
// h * (lambda * K_LAMBDA + mu * K_MU) and the eigenstrain load uses the
// closed-form integral of the shape-gradient components.
static K_LAMBDA: OnceLock<[[f64; 24]; 24]> = OnceLock::new();
static K_MU: OnceLock<[[f64; 24]; 24]> = OnceLock::new();

fn corner_sign(k: usize) -> [f64; 3] {
    [
        if k & 1 == 0 { -1.0 } else { 1.0 },
        if k & 2 == 0 { -1.0 } else { 1.0 },
        if k & 4 == 0 { -1.0 } else { 1.0 },
    ]
}

/// Shape-function gradients at natural coordinates, unit spacing.
fn grads_at(xi: f64, eta: f64, zeta: f64) -> [[f64; 3]; 8] {
    let mut g = [[0.0; 3]; 8];
    for (k, gk) in g.iter_mut().enumerate() {
        let s = corner_sign(k);
        // d/dx = 2 * d/dxi at h = 1
        gk[0] = 2.0 * s[0] * (1.0 + eta * s[1]) * (1.0 + zeta * s[2]) / 8.0;
        gk[1] = 2.0 * s[1] * (1.0 + xi * s[0]) * (1.0 + zeta * s[2]) / 8.0;
        gk[2] = 2.0 * s[2] * (1.0 + xi * s[0]) * (1.0 + eta * s[1]) / 8.0;
    }
    g
}

fn strain_displacement(g: &[[f64; 3]; 8]) -> [[f64; 24]; 6] {
    let mut b = [[0.0; 24]; 6];
    for k in 0..8 {
        let (gx, gy, gz) = (g[k][0], g[k][1], g[k][2]);
        b[0][3 * k] = gx;
        b[1][3 * k + 1] = gy;
        b[2][3 * k + 2] = gz;
        // engineering shears
        b[3][3 * k] = gy;
        b[3][3 * k + 1] = gx;
        b[4][3 * k + 1] = gz;
        b[4][3 * k + 2] = gy;
        b[5][3 * k] = gz;
        b[5][3 * k + 2] = gx;
    }
    b
}

fn reference_stiffness() -> (&'static [[f64; 24]; 24], &'static [[f64; 24]; 24]) {
    let kl = K_LAMBDA.get_or_init(|| build_reference(|row, col, b| {
        // lambda part: B^T m m^T B
        let mut mb_row = 0.0;
        let mut mb_col = 0.0;
        for r in 0..3 {
            mb_row += b[r][row];
            mb_col += b[r][col];
        }
        mb_row * mb_col
    }));
    let km = K_MU.get_or_init(|| build_reference(|row, col, b| {
        // mu part: B^T diag(2,2,2,1,1,1) B
        let mut acc = 0.0;
        for r in 0..3 {
            acc += 2.0 * b[r][row] * b[r][col];
        }
        for r in 3..6 {
            acc += b[r][row] * b[r][col];
        }
        acc
    }));
    (kl, km)
}

fn build_reference<F: Fn(usize, usize, &[[f64; 24]; 6]) -> f64>(term: F) -> [[f64; 24]; 24] {
    let gp = 1.0 / 3.0f64.sqrt();
    let mut k = [[0.0; 24]; 24];
    for &xi in &[-gp, gp] {
        for &eta in &[-gp, gp] {
            for &zeta in &[-gp, gp] {
                let g = grads_at(xi, eta, zeta);
                let b = strain_displacement(&g);
                let w = 1.0 / 8.0; // |J| at h = 1, unit gauss weights
                for row in 0..24 {
                    for col in 0..24 {
                        k[row][col] += w * term(row, col, &b);
                    }
                }
            }
        }
    }
    k
}

/// Assembled stiffness system for one mesh and constraint policy.
pub struct ThermoelasticSystem<'m> {
    mesh: &'m VoxelMesh,
    matrix: SymBsr3,
    /// Per-dof constraint flags, 3 per active node.
    fixed: Vec<bool>,
    /// Elements participating in the solve.
    elements: Vec<usize>,
    rel_tol: f64,
}

fn collect_face_nodes(mesh: &VoxelMesh, faces: &[Face]) -> Vec<usize> {
    let mut nodes: Vec<usize> = faces
        .iter()
        .flat_map(|&f| mesh.face_active_nodes(f))
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

impl<'m> ThermoelasticSystem<'m> {
    pub fn new(mesh: &'m VoxelMesh, bc: MechBc, rel_tol: f64) -> Result<Self, MechanicsError> {
        let n_nodes = mesh.n_active_nodes();
        let mut fixed = vec![false; 3 * n_nodes];

        let tagged: Vec<usize> = (0..mesh.material.len())
            .filter(|&e| mesh.material[e] != NO_MATERIAL)
            .collect();

        // Mechanical domain and its resting surface.
        let (elements, support) = match bc {
            MechBc::Standard => {
                let non_heater: Vec<usize> = tagged
                    .iter()
                    .copied()
                    .filter(|&e| mesh.material[e] != mesh.heater_material)
                    .collect();
                if non_heater.is_empty() || non_heater.len() == tagged.len() {
                    // Nothing to split off: solve everything and hold the
                    // heater base vertically if there is one.
                    let support = collect_face_nodes(mesh, &mesh.heater_base);
                    (tagged, support)
                } else {
                    let mut support = Vec::new();
                    for &e in &non_heater {
                        for side in 0..6u8 {
                            let adjacent_heater = mesh
                                .element_neighbor(e, side)
                                .is_some_and(|nb| mesh.material[nb] == mesh.heater_material);
                            if adjacent_heater {
                                support.extend(mesh.face_active_nodes(Face { element: e, side }));
                            }
                        }
                    }
                    support.sort_unstable();
                    support.dedup();
                    (non_heater, support)
                }
            }
            _ => (tagged, Vec::new()),
        };

        // Nodes outside the domain are clamped outright; their rows reduce
        // to the identity.
        let mut in_domain = vec![false; n_nodes];
        for &e in &elements {
            for n in mesh.element_active_nodes(e) {
                in_domain[n] = true;
            }
        }
        for n in 0..n_nodes {
            if !in_domain[n] {
                fixed[3 * n] = true;
                fixed[3 * n + 1] = true;
                fixed[3 * n + 2] = true;
            }
        }

        apply_constraints(mesh, bc, &in_domain, &support, &mut fixed)?;

        // Upper-triangle block pattern from element connectivity.
        let mut patterns: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        for &e in &elements {
            let nodes = mesh.element_active_nodes(e);
            for a in 0..8 {
                for b in a..8 {
                    patterns[nodes[a]].push(nodes[b] as u32);
                }
            }
        }
        for (i, row) in patterns.iter_mut().enumerate() {
            row.push(i as u32); // ensure the diagonal block exists
            row.sort_unstable();
            row.dedup();
        }
        let mut matrix = SymBsr3::from_pattern(&patterns);

        let (kl, km) = reference_stiffness();
        let h = mesh.spacing;
        for &e in &elements {
            let mat = &mesh.materials[mesh.material[e] as usize];
            let (lambda, mu) = mat.lame();
            let nodes = mesh.element_active_nodes(e);
            for a in 0..8 {
                for b in a..8 {
                    let (na, nb) = (nodes[a], nodes[b]);
                    let mut block = [0.0f64; 9];
                    for r in 0..3 {
                        for c in 0..3 {
                            let row = 3 * a + r;
                            let col = 3 * b + c;
                            let v = h * (lambda * kl[row][col] + mu * km[row][col]);
                            let keep = !fixed[3 * na + r] && !fixed[3 * nb + c];
                            block[3 * r + c] = if keep { v } else { 0.0 };
                        }
                    }
                    matrix.add_block(na, nb, &block);
                }
            }
        }
        // Unit diagonal for constrained dofs keeps the operator SPD.
        for n in 0..n_nodes {
            let mut diag = [0.0f64; 9];
            let mut any = false;
            for c in 0..3 {
                if fixed[3 * n + c] {
                    diag[3 * c + c] = 1.0;
                    any = true;
                }
            }
            if any {
                matrix.add_block(n, n, &diag);
            }
        }

        Ok(ThermoelasticSystem { mesh, matrix, fixed, elements, rel_tol })
    }

    /// Thermal load vector for a nodal temperature snapshot.
    fn load_vector(&self, t_nodes: &[f64], reference_t: f64) -> Vec<f64> {
        let mesh = self.mesh;
        let h = mesh.spacing;
        let mut f = vec![0.0f64; 3 * mesh.n_active_nodes()];
        for &e in &self.elements {
            let mat = &mesh.materials[mesh.material[e] as usize];
            let (lambda, mu) = mat.lame();
            let beta = (3.0 * lambda + 2.0 * mu) * mat.thermal_expansion;
            let nodes = mesh.element_active_nodes(e);
            let mut dt = 0.0;
            for &n in &nodes {
                dt += t_nodes[n];
            }
            let dt = dt / 8.0 - reference_t;
            if dt == 0.0 {
                continue;
            }
            // integral of grad(N) over the element is h^2/4 per component,
            // signed by the corner position
            let scale = beta * dt * h * h / 4.0;
            for (k, &n) in nodes.iter().enumerate() {
                let s = corner_sign(k);
                for c in 0..3 {
                    if !self.fixed[3 * n + c] {
                        f[3 * n + c] += scale * s[c];
                    }
                }
            }
        }
        f
    }

    /// Solve for the displacement field of one snapshot. `warm_start`
    /// seeds the iteration, typically with the previous snapshot's field.
    pub fn solve(
        &self,
        t_nodes: &[f64],
        reference_t: f64,
        warm_start: Option<&DisplacementField>,
    ) -> Result<DisplacementField, MechanicsError> {
        let n_nodes = self.mesh.n_active_nodes();
        if t_nodes.len() != n_nodes {
            return Err(MechanicsError::SizeMismatch { got: t_nodes.len(), want: n_nodes });
        }
        let f = self.load_vector(t_nodes, reference_t);
        let mut x = vec![0.0f64; 3 * n_nodes];
        if let Some(w) = warm_start {
            for (n, u) in w.u.iter().enumerate() {
                for c in 0..3 {
                    if !self.fixed[3 * n + c] {
                        x[3 * n + c] = u[c];
                    }
                }
            }
        }
        let op = BlockJacobiBsr3::new(&self.matrix)?;
        let report = pcg(&op, &f, &mut x, self.rel_tol, 200_000)?;
        let u = (0..n_nodes).map(|n| [x[3 * n], x[3 * n + 1], x[3 * n + 2]]).collect();
        Ok(DisplacementField { u, report })
    }

    /// Stress and strain over the mechanical domain only; excluded
    /// (heater) elements stay zero.
    pub fn recover_stress(
        &self,
        field: &DisplacementField,
        t_nodes: &[f64],
        reference_t: f64,
    ) -> StressField {
        let n_elem = self.mesh.material.len();
        let mut out = StressField {
            stress: vec![SymTensor::ZERO; n_elem],
            strain: vec![SymTensor::ZERO; n_elem],
        };
        for &e in &self.elements {
            let (s, eps) = recover_element(self.mesh, field, t_nodes, reference_t, e);
            out.stress[e] = s;
            out.strain[e] = eps;
        }
        out
    }

    /// Residual of the assembled balance equations for a solved field,
    /// relative to the load norm.
    pub fn residual(&self, field: &DisplacementField, t_nodes: &[f64], reference_t: f64) -> f64 {
        let n = 3 * self.mesh.n_active_nodes();
        let f = self.load_vector(t_nodes, reference_t);
        let mut x = vec![0.0f64; n];
        for (i, u) in field.u.iter().enumerate() {
            x[3 * i] = u[0];
            x[3 * i + 1] = u[1];
            x[3 * i + 2] = u[2];
        }
        let mut ax = vec![0.0f64; n];
        self.matrix.matvec(&x, &mut ax);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            num += (f[i] - ax[i]).powi(2);
            den += f[i].powi(2);
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}

fn apply_constraints(
    mesh: &VoxelMesh,
    bc: MechBc,
    in_domain: &[bool],
    support: &[usize],
    fixed: &mut [bool],
) -> Result<(), MechanicsError> {
    match bc {
        MechBc::ClampAllBoundary => {
            let mut faces = mesh.heater_base.clone();
            faces.extend_from_slice(&mesh.convective_exterior);
            let nodes = collect_face_nodes(mesh, &faces);
            if nodes.is_empty() {
                return Err(MechanicsError::Unconstrained);
            }
            for n in nodes {
                fixed[3 * n] = true;
                fixed[3 * n + 1] = true;
                fixed[3 * n + 2] = true;
            }
        }
        MechBc::Standard if !support.is_empty() => {
            // Resting surface: held vertically, free to slide. One node
            // pinned in-plane and one far node held laterally to kill the
            // remaining rigid modes; support ids are dense-ordered, so
            // first/last are geometric extremes.
            for &n in support {
                fixed[3 * n + 2] = true;
            }
            let anchor = support[0];
            let partner = *support.last().unwrap();
            fixed[3 * anchor] = true;
            fixed[3 * anchor + 1] = true;
            fixed[3 * partner + 1] = true;
        }
        _ => {
            // Three-point support: pin the lowest-index domain node, hold
            // the far end of its x-row laterally, and hold one node of its
            // y-column vertically. A uniform dilatation about the anchor
            // satisfies all of these, so free expansion stays stress-free.
            let sx = mesh.nx + 1;
            let sy = mesh.ny + 1;
            let coords = |dense: usize| (dense % sx, (dense / sx) % sy, dense / (sx * sy));
            let anchor_active = match in_domain.iter().position(|&d| d) {
                Some(n) => n,
                None => return Err(MechanicsError::Unconstrained),
            };
            let (ax, ay, az) = coords(mesh.active_nodes[anchor_active]);
            let mut row_partner = None;
            let mut col_partner = None;
            for (active, &dense) in mesh.active_nodes.iter().enumerate() {
                if !in_domain[active] {
                    continue;
                }
                let (ix, iy, iz) = coords(dense);
                if iy == ay && iz == az && ix > ax {
                    row_partner = Some(active);
                }
                if ix == ax && iz == az && iy > ay {
                    col_partner = Some(active);
                }
            }
            let (row_partner, col_partner) = match (row_partner, col_partner) {
                (Some(r), Some(c)) => (r, c),
                _ => return Err(MechanicsError::Unconstrained),
            };
            fixed[3 * anchor_active] = true;
            fixed[3 * anchor_active + 1] = true;
            fixed[3 * anchor_active + 2] = true;
            fixed[3 * row_partner + 1] = true;
            fixed[3 * row_partner + 2] = true;
            fixed[3 * col_partner + 2] = true;
        }
    }
    Ok(())
}

/// One-shot convenience wrapper over [`ThermoelasticSystem`].
pub fn solve_thermoelastic(
    mesh: &VoxelMesh,
    t_nodes: &[f64],
    reference_t: f64,
    bc: MechBc,
    rel_tol: f64,
) -> Result<DisplacementField, MechanicsError> {
    ThermoelasticSystem::new(mesh, bc, rel_tol)?.solve(t_nodes, reference_t, None)
}

fn recover_element(
    mesh: &VoxelMesh,
    field: &DisplacementField,
    t_nodes: &[f64],
    reference_t: f64,
    e: usize,
) -> (SymTensor, SymTensor) {
    let mat = &mesh.materials[mesh.material[e] as usize];
    let (lambda, mu) = mat.lame();
    let inv4h = 1.0 / (4.0 * mesh.spacing);
    let nodes = mesh.element_active_nodes(e);
    let mut grad = [[0.0f64; 3]; 3]; // grad[i][j] = d u_i / d x_j
    let mut dt = 0.0;
    for (k, &n) in nodes.iter().enumerate() {
        let s = corner_sign(k);
        let u = field.u[n];
        for i in 0..3 {
            for j in 0..3 {
                grad[i][j] += u[i] * s[j] * inv4h;
            }
        }
        dt += t_nodes[n];
    }
    let dt = dt / 8.0 - reference_t;
    let eps = SymTensor {
        xx: grad[0][0],
        yy: grad[1][1],
        zz: grad[2][2],
        xy: 0.5 * (grad[0][1] + grad[1][0]),
        yz: 0.5 * (grad[1][2] + grad[2][1]),
        zx: 0.5 * (grad[2][0] + grad[0][2]),
    };
    let tr = eps.xx + eps.yy + eps.zz;
    let beta = (3.0 * lambda + 2.0 * mu) * mat.thermal_expansion;
    let stress = SymTensor {
        xx: 2.0 * mu * eps.xx + lambda * tr - beta * dt,
        yy: 2.0 * mu * eps.yy + lambda * tr - beta * dt,
        zz: 2.0 * mu * eps.zz + lambda * tr - beta * dt,
        xy: 2.0 * mu * eps.xy,
        yz: 2.0 * mu * eps.yz,
        zx: 2.0 * mu * eps.zx,
    };
    (stress, eps)
}

/// Strain from centroid shape-function gradients and stress through the
/// thermoelastic law, for every tagged element.
pub fn recover_stress(
    mesh: &VoxelMesh,
    field: &DisplacementField,
    t_nodes: &[f64],
    reference_t: f64,
) -> StressField {
    let n_elem = mesh.material.len();
    let mut out = StressField {
        stress: vec![SymTensor::ZERO; n_elem],
        strain: vec![SymTensor::ZERO; n_elem],
    };
    for e in 0..n_elem {
        if mesh.material[e] == NO_MATERIAL {
            continue;
        }
        let (s, eps) = recover_element(mesh, field, t_nodes, reference_t, e);
        out.stress[e] = s;
        out.strain[e] = eps;
    }
    out
}

/// Stress tensor per optical-path section, at element centroids.
pub fn stress_along_path(field: &StressField, samples: &PathSamples) -> Vec<SymTensor> {
    samples.elements.iter().map(|&e| field.stress[e]).collect()
}

/// Largest traction magnitude |sigma . n| over a face set, as a
/// discretization-quality report (not asserted).
pub fn max_boundary_traction(_mesh: &VoxelMesh, field: &StressField, faces: &[Face]) -> f64 {
    let mut worst = 0.0f64;
    for f in faces {
        let s = &field.stress[f.element];
        let n: [f64; 3] = match f.side {
            0 => [-1.0, 0.0, 0.0],
            1 => [1.0, 0.0, 0.0],
            2 => [0.0, -1.0, 0.0],
            3 => [0.0, 1.0, 0.0],
            4 => [0.0, 0.0, -1.0],
            _ => [0.0, 0.0, 1.0],
        };
        let t = [
            s.xx * n[0] + s.xy * n[1] + s.zx * n[2],
            s.xy * n[0] + s.yy * n[1] + s.yz * n[2],
            s.zx * n[0] + s.yz * n[1] + s.zz * n[2],
        ];
        let mag = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        worst = worst.max(mag);
    }
    worst
}
