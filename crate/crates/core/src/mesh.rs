//! Structured hexahedral voxelization of a scene: material tagging,
//! boundary-face classification and optical-path sampling.
//!
//! The grid is axis-aligned with uniform spacing. Elements without a
//! material are excluded from every solve; nodes are active when they
//! touch at least one tagged element. The mesh is immutable once
//! classified and reads may be shared freely.

use thiserror::Error;

use crate::scene::{MaterialProps, Scene};

pub const NO_MATERIAL: u16 = u16::MAX;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("resolution too coarse: electrode thickness {thickness:.3e} m is thinner than half a voxel ({spacing:.3e} m)")]
    ResolutionTooCoarse { thickness: f64, spacing: f64 },
    #[error("memory bound exceeded: {requested} voxels over the configured cap {cap}")]
    MemoryBound { requested: usize, cap: usize },
    #[error("scene has no crystal primitive tagged `{0}`")]
    NoCrystal(String),
    #[error("optical path leaves the crystal region at section {0}")]
    PathExitsCrystal(usize),
    #[error("scene invalid: {0}")]
    InvalidScene(String),
}

/// One face of an element; `side` indexes -x,+x,-y,+y,-z,+z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub element: usize,
    pub side: u8,
}

/// Voltage terminal of an electrode pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Positive,
    Negative,
}

impl Terminal {
    pub fn sign(self) -> f64 {
        match self {
            Terminal::Positive => 1.0,
            Terminal::Negative => -1.0,
        }
    }
}

/// Crystal/electrode interface for one terminal: the crystal-side faces
/// and the crystal surface nodes held at the terminal potential.
#[derive(Debug, Clone)]
pub struct ElectrodeSurface {
    pub terminal: Terminal,
    pub faces: Vec<Face>,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct VoxelMesh {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Voxel edge length, m.
    pub spacing: f64,
    /// Minimum corner of the grid, m.
    pub origin: [f64; 3],
    /// Per-element material id, `NO_MATERIAL` for untagged voxels.
    pub material: Vec<u16>,
    /// Electrode terminal ownership per element; 0 none, +1, -1.
    pub terminal: Vec<i8>,
    /// Material table, indexed by material id.
    pub materials: Vec<MaterialProps>,
    pub material_names: Vec<String>,
    pub crystal_material: u16,
    pub heater_material: u16,
    /// Dense node grid -> active node id, -1 when inactive.
    pub node_index: Vec<i32>,
    /// Active node id -> dense node grid index.
    pub active_nodes: Vec<usize>,
    /// Fixed-temperature base faces of the heater plate.
    pub heater_base: Vec<Face>,
    /// All remaining exterior faces, exchanging heat with ambient air.
    pub convective_exterior: Vec<Face>,
    /// Crystal/electrode interfaces, one entry per terminal.
    pub electrodes: Vec<ElectrodeSurface>,
    /// Non-fatal findings collected during construction.
    pub diagnostics: Vec<String>,
}

/// One electrode volume: the conductor (or substrate) body plus the
/// sub-box whose crystal interface is held at the terminal potential.
#[derive(Debug, Clone, Copy)]
pub struct ElectrodeVolume {
    pub terminal: Terminal,
    /// Mechanical/thermal body, axis-aligned.
    pub body_min: [f64; 3],
    pub body_max: [f64; 3],
    /// Conductive footprint; for copper foil it equals the body, for a
    /// transparent film on a silica substrate it is the film extent.
    pub film_min: [f64; 3],
    pub film_max: [f64; 3],
}

/// Outward-protruding electrode volumes derived from an electrode mode and
/// the crystal box: terminal A wraps the (+x, +y) vertical edge (a run of
/// `ratio_x` along x on the +y face joined to a run of `ratio_y` along y
/// on the +x face), terminal B mirrors it around the crystal center on the
/// (-x, -y) edge. Layers are snapped outward to whole voxels, at least
/// one. Copper foil is cut to the conductive footprint; transparent
/// electrodes are films on full-face silica slabs, so their substrate
/// spans the whole face while the equipotential is the film footprint.
pub fn electrode_boxes(
    mode: &crate::scene::ElectrodeMode,
    crystal_min: [f64; 3],
    crystal_max: [f64; 3],
    spacing: f64,
) -> Result<Vec<ElectrodeVolume>, MeshError> {
    if mode.thickness < 0.5 * spacing {
        return Err(MeshError::ResolutionTooCoarse { thickness: mode.thickness, spacing });
    }
    let layers = (mode.thickness / spacing).round().max(1.0);
    let t = layers * spacing;
    let full_face_body = mode.material == crate::scene::ElectrodeMaterial::Ito;
    let (c0, c1) = (crystal_min, crystal_max);
    let mut out = Vec::new();
    if mode.ratio_x > 0.0 {
        // +y face, anchored at the +x end.
        let film = ([c1[0] - mode.ratio_x, c1[1], c0[2]], [c1[0], c1[1] + t, c1[2]]);
        let body = if full_face_body {
            ([c0[0], c1[1], c0[2]], [c1[0], c1[1] + t, c1[2]])
        } else {
            film
        };
        out.push(ElectrodeVolume {
            terminal: Terminal::Positive,
            body_min: body.0,
            body_max: body.1,
            film_min: film.0,
            film_max: film.1,
        });
        // -y face, anchored at the -x end.
        let film = ([c0[0], c0[1] - t, c0[2]], [c0[0] + mode.ratio_x, c0[1], c1[2]]);
        let body = if full_face_body {
            ([c0[0], c0[1] - t, c0[2]], [c1[0], c0[1], c1[2]])
        } else {
            film
        };
        out.push(ElectrodeVolume {
            terminal: Terminal::Negative,
            body_min: body.0,
            body_max: body.1,
            film_min: film.0,
            film_max: film.1,
        });
    }
    if mode.ratio_y > 0.0 {
        // +x face, anchored at the +y end.
        let film = ([c1[0], c1[1] - mode.ratio_y, c0[2]], [c1[0] + t, c1[1], c1[2]]);
        let body = if full_face_body {
            ([c1[0], c0[1], c0[2]], [c1[0] + t, c1[1], c1[2]])
        } else {
            film
        };
        out.push(ElectrodeVolume {
            terminal: Terminal::Positive,
            body_min: body.0,
            body_max: body.1,
            film_min: film.0,
            film_max: film.1,
        });
        // -x face, anchored at the -y end.
        let film = ([c0[0] - t, c0[1], c0[2]], [c0[0], c0[1] + mode.ratio_y, c1[2]]);
        let body = if full_face_body {
            ([c0[0] - t, c0[1], c0[2]], [c0[0], c1[1], c1[2]])
        } else {
            film
        };
        out.push(ElectrodeVolume {
            terminal: Terminal::Negative,
            body_min: body.0,
            body_max: body.1,
            film_min: film.0,
            film_max: film.1,
        });
    }
    Ok(out)
}

impl VoxelMesh {
    /// Voxelize and classify in one step.
    pub fn build(scene: &Scene) -> Result<VoxelMesh, MeshError> {
        let mut mesh = VoxelMesh::voxelize(scene)?;
        mesh.classify_boundaries(scene);
        Ok(mesh)
    }

    /// Rasterize the scene onto a uniform grid. Each voxel takes the
    /// material of the last-listed primitive containing its centroid;
    /// electrode layers are appended after the scene primitives.
    pub fn voxelize(scene: &Scene) -> Result<VoxelMesh, MeshError> {
        let h = scene.sim.mesh_resolution;
        if !(h > 0.0) {
            return Err(MeshError::InvalidScene("mesh_resolution must be positive".into()));
        }

        // Material table in deterministic (BTreeMap) order.
        let material_names: Vec<String> = scene.materials.keys().cloned().collect();
        let materials: Vec<MaterialProps> = material_names.iter().map(|n| scene.materials[n]).collect();
        let mat_id = |tag: &str| -> Option<u16> {
            material_names.iter().position(|n| n == tag).map(|i| i as u16)
        };
        let crystal_material = mat_id(&scene.optics.crystal_material)
            .ok_or_else(|| MeshError::NoCrystal(scene.optics.crystal_material.clone()))?;
        let heater_material = mat_id(&scene.sim.heater_material)
            .ok_or_else(|| MeshError::InvalidScene(format!("unknown heater material `{}`", scene.sim.heater_material)))?;

        // Electrode volumes, if a mode is configured.
        let (electrode_vols, electrode_mat): (Vec<ElectrodeVolume>, u16) = match &scene.electrode {
            Some(mode) => {
                let prim = scene
                    .crystal_primitive()
                    .ok_or_else(|| MeshError::NoCrystal(scene.optics.crystal_material.clone()))?;
                let (cmin, cmax) = prim.bounds();
                let vols = electrode_boxes(mode, cmin, cmax, h)?;
                let em = mat_id(mode.material.material_tag()).ok_or_else(|| {
                    MeshError::InvalidScene(format!(
                        "electrode material tag `{}` not in material table",
                        mode.material.material_tag()
                    ))
                })?;
                (vols, em)
            }
            None => (Vec::new(), 0),
        };

        // Grid bounds snapped outward onto the spacing lattice.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &scene.primitives {
            let (pmin, pmax) = p.bounds();
            for d in 0..3 {
                lo[d] = lo[d].min(pmin[d]);
                hi[d] = hi[d].max(pmax[d]);
            }
        }
        for v in &electrode_vols {
            for d in 0..3 {
                lo[d] = lo[d].min(v.body_min[d]);
                hi[d] = hi[d].max(v.body_max[d]);
            }
        }
        let mut origin = [0.0; 3];
        let mut dims = [0usize; 3];
        for d in 0..3 {
            let i0 = (lo[d] / h - 1e-9).floor();
            let i1 = (hi[d] / h + 1e-9).ceil();
            origin[d] = i0 * h;
            dims[d] = (i1 - i0).round() as usize;
        }
        let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
        let n_elem = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or(MeshError::MemoryBound { requested: usize::MAX, cap: scene.sim.max_voxels })?;
        if n_elem > scene.sim.max_voxels {
            return Err(MeshError::MemoryBound { requested: n_elem, cap: scene.sim.max_voxels });
        }

        let mut material = vec![NO_MATERIAL; n_elem];
        let mut terminal = vec![0i8; n_elem];
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let c = [
                        origin[0] + (ix as f64 + 0.5) * h,
                        origin[1] + (iy as f64 + 0.5) * h,
                        origin[2] + (iz as f64 + 0.5) * h,
                    ];
                    let e = ix + nx * (iy + ny * iz);
                    for p in &scene.primitives {
                        if p.contains(c) {
                            material[e] = mat_id(p.material()).expect("validated material tag");
                        }
                    }
                    for v in &electrode_vols {
                        let inside = |lo: &[f64; 3], hi: &[f64; 3]| {
                            (0..3).all(|d| c[d] >= lo[d] - 1e-9 && c[d] <= hi[d] + 1e-9)
                        };
                        if inside(&v.body_min, &v.body_max) {
                            material[e] = electrode_mat;
                            if inside(&v.film_min, &v.film_max) {
                                terminal[e] = match v.terminal {
                                    Terminal::Positive => 1,
                                    Terminal::Negative => -1,
                                };
                            }
                        }
                    }
                }
            }
        }

        // Active node set.
        let n_nodes = (nx + 1) * (ny + 1) * (nz + 1);
        let mut node_active = vec![false; n_nodes];
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let e = ix + nx * (iy + ny * iz);
                    if material[e] == NO_MATERIAL {
                        continue;
                    }
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let n = (ix + dx) + (nx + 1) * ((iy + dy) + (ny + 1) * (iz + dz));
                                node_active[n] = true;
                            }
                        }
                    }
                }
            }
        }
        let mut node_index = vec![-1i32; n_nodes];
        let mut active_nodes = Vec::new();
        for (n, &act) in node_active.iter().enumerate() {
            if act {
                node_index[n] = active_nodes.len() as i32;
                active_nodes.push(n);
            }
        }

        Ok(VoxelMesh {
            nx,
            ny,
            nz,
            spacing: h,
            origin,
            material,
            terminal,
            materials,
            material_names,
            crystal_material,
            heater_material,
            node_index,
            active_nodes,
            heater_base: Vec::new(),
            convective_exterior: Vec::new(),
            electrodes: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    /// Classify exterior faces into the fixed-temperature heater base and
    /// the convective remainder, and record crystal/electrode interfaces.
    pub fn classify_boundaries(&mut self, scene: &Scene) {
        let _ = scene;
        self.heater_base.clear();
        self.convective_exterior.clear();
        self.electrodes.clear();
        self.diagnostics.clear();

        // Lowest z-layer that contains heater material.
        let mut heater_min_iz = None;
        for iz in 0..self.nz {
            let mut found = false;
            for iy in 0..self.ny {
                for ix in 0..self.nx {
                    if self.material[self.element_index(ix, iy, iz)] == self.heater_material {
                        found = true;
                        break;
                    }
                }
                if found {
                    break;
                }
            }
            if found {
                heater_min_iz = Some(iz);
                break;
            }
        }
        if heater_min_iz.is_none() {
            self.diagnostics.push(format!(
                "no heater-material (`{}`) elements found; heater base is empty",
                self.material_names[self.heater_material as usize]
            ));
        }

        let mut pos = ElectrodeSurface { terminal: Terminal::Positive, faces: Vec::new(), nodes: Vec::new() };
        let mut neg = ElectrodeSurface { terminal: Terminal::Negative, faces: Vec::new(), nodes: Vec::new() };

        for iz in 0..self.nz {
            for iy in 0..self.ny {
                for ix in 0..self.nx {
                    let e = self.element_index(ix, iy, iz);
                    let m = self.material[e];
                    if m == NO_MATERIAL {
                        continue;
                    }
                    for side in 0..6u8 {
                        let nb = self.neighbor(ix, iy, iz, side);
                        let nb_mat = nb.map(|n| self.material[n]).unwrap_or(NO_MATERIAL);
                        if nb_mat == NO_MATERIAL {
                            // Exterior face.
                            let face = Face { element: e, side };
                            let is_heater_base = side == 4
                                && m == self.heater_material
                                && Some(iz) == heater_min_iz;
                            if is_heater_base {
                                self.heater_base.push(face);
                            } else {
                                self.convective_exterior.push(face);
                            }
                        } else if m == self.crystal_material {
                            // Interior face: crystal against an electrode voxel?
                            let nb = nb.unwrap();
                            let t = self.terminal[nb];
                            if t != 0 && self.terminal[e] == 0 {
                                let face = Face { element: e, side };
                                let surf = if t > 0 { &mut pos } else { &mut neg };
                                surf.faces.push(face);
                                for n in self.face_nodes(ix, iy, iz, side) {
                                    surf.nodes.push(self.node_index[n] as usize);
                                }
                            }
                        }
                    }
                }
            }
        }

        for surf in [&mut pos, &mut neg] {
            surf.nodes.sort_unstable();
            surf.nodes.dedup();
        }
        if !pos.faces.is_empty() || !neg.faces.is_empty() {
            self.electrodes = vec![pos, neg];
        }
    }

    #[inline]
    pub fn element_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.nx * (iy + self.ny * iz)
    }

    #[inline]
    pub fn element_coords(&self, e: usize) -> (usize, usize, usize) {
        let ix = e % self.nx;
        let iy = (e / self.nx) % self.ny;
        let iz = e / (self.nx * self.ny);
        (ix, iy, iz)
    }

    /// Neighboring element across a face of element `e`, if inside the
    /// grid.
    pub fn element_neighbor(&self, e: usize, side: u8) -> Option<usize> {
        let (ix, iy, iz) = self.element_coords(e);
        self.neighbor(ix, iy, iz, side)
    }

    fn neighbor(&self, ix: usize, iy: usize, iz: usize, side: u8) -> Option<usize> {
        let (dx, dy, dz): (isize, isize, isize) = match side {
            0 => (-1, 0, 0),
            1 => (1, 0, 0),
            2 => (0, -1, 0),
            3 => (0, 1, 0),
            4 => (0, 0, -1),
            _ => (0, 0, 1),
        };
        let jx = ix as isize + dx;
        let jy = iy as isize + dy;
        let jz = iz as isize + dz;
        if jx < 0 || jy < 0 || jz < 0 || jx >= self.nx as isize || jy >= self.ny as isize || jz >= self.nz as isize {
            None
        } else {
            Some(self.element_index(jx as usize, jy as usize, jz as usize))
        }
    }

    /// Dense node-grid indices of an element's 8 corners, x fastest.
    pub fn element_nodes(&self, e: usize) -> [usize; 8] {
        let (ix, iy, iz) = self.element_coords(e);
        let sx = 1;
        let sy = self.nx + 1;
        let sz = (self.nx + 1) * (self.ny + 1);
        let base = ix * sx + iy * sy + iz * sz;
        [
            base,
            base + sx,
            base + sy,
            base + sx + sy,
            base + sz,
            base + sx + sz,
            base + sy + sz,
            base + sx + sy + sz,
        ]
    }

    /// Active node ids of an element's corners.
    pub fn element_active_nodes(&self, e: usize) -> [usize; 8] {
        let dense = self.element_nodes(e);
        let mut out = [0usize; 8];
        for (k, d) in dense.into_iter().enumerate() {
            out[k] = self.node_index[d] as usize;
        }
        out
    }

    /// Dense node-grid indices of the four corners of a face.
    fn face_nodes(&self, ix: usize, iy: usize, iz: usize, side: u8) -> [usize; 4] {
        let e = self.element_index(ix, iy, iz);
        let n = self.element_nodes(e);
        match side {
            0 => [n[0], n[2], n[4], n[6]],
            1 => [n[1], n[3], n[5], n[7]],
            2 => [n[0], n[1], n[4], n[5]],
            3 => [n[2], n[3], n[6], n[7]],
            4 => [n[0], n[1], n[2], n[3]],
            _ => [n[4], n[5], n[6], n[7]],
        }
    }

    /// Active node ids of a face.
    pub fn face_active_nodes(&self, face: Face) -> [usize; 4] {
        let (ix, iy, iz) = self.element_coords(face.element);
        let dense = self.face_nodes(ix, iy, iz, face.side);
        let mut out = [0usize; 4];
        for (k, d) in dense.into_iter().enumerate() {
            out[k] = self.node_index[d] as usize;
        }
        out
    }

    /// Position of a dense node-grid index.
    pub fn dense_node_position(&self, dense: usize) -> [f64; 3] {
        let sx = self.nx + 1;
        let sy = self.ny + 1;
        let ix = dense % sx;
        let iy = (dense / sx) % sy;
        let iz = dense / (sx * sy);
        [
            self.origin[0] + ix as f64 * self.spacing,
            self.origin[1] + iy as f64 * self.spacing,
            self.origin[2] + iz as f64 * self.spacing,
        ]
    }

    /// Position of an active node.
    pub fn node_position(&self, active: usize) -> [f64; 3] {
        self.dense_node_position(self.active_nodes[active])
    }

    pub fn element_centroid(&self, e: usize) -> [f64; 3] {
        let (ix, iy, iz) = self.element_coords(e);
        [
            self.origin[0] + (ix as f64 + 0.5) * self.spacing,
            self.origin[1] + (iy as f64 + 0.5) * self.spacing,
            self.origin[2] + (iz as f64 + 0.5) * self.spacing,
        ]
    }

    pub fn n_active_nodes(&self) -> usize {
        self.active_nodes.len()
    }

    /// Element containing `p`, resolving on-plane coordinates toward the
    /// positive side; `None` outside the grid or on untagged voxels.
    pub fn locate(&self, p: [f64; 3]) -> Option<usize> {
        let mut idx = [0usize; 3];
        let dims = [self.nx, self.ny, self.nz];
        for d in 0..3 {
            let f = (p[d] - self.origin[d]) / self.spacing;
            if f < -1e-9 || f > dims[d] as f64 + 1e-9 {
                return None;
            }
            idx[d] = (f.floor().max(0.0) as usize).min(dims[d] - 1);
        }
        let e = self.element_index(idx[0], idx[1], idx[2]);
        (self.material[e] != NO_MATERIAL).then_some(e)
    }

    /// Ids of elements tagged with the crystal material, grid order.
    pub fn crystal_elements(&self) -> Vec<usize> {
        (0..self.material.len())
            .filter(|&e| self.material[e] == self.crystal_material)
            .collect()
    }

    /// Volume fraction of each material among tagged voxels.
    pub fn material_volumes(&self) -> Vec<f64> {
        let mut vols = vec![0.0; self.materials.len()];
        let v = self.spacing.powi(3);
        for &m in &self.material {
            if m != NO_MATERIAL {
                vols[m as usize] += v;
            }
        }
        vols
    }

    /// Plain-text legacy unstructured-grid dump (points, hexahedra, cell
    /// material scalar) for external visualization.
    pub fn write_legacy_grid<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "voxel mesh")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.active_nodes.len())?;
        for &dense in &self.active_nodes {
            let p = self.dense_node_position(dense);
            writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
        }
        let elems: Vec<usize> = (0..self.material.len())
            .filter(|&e| self.material[e] != NO_MATERIAL)
            .collect();
        writeln!(w, "CELLS {} {}", elems.len(), elems.len() * 9)?;
        for &e in &elems {
            let n = self.element_active_nodes(e);
            // Hexahedron corner ordering: bottom ring counterclockwise,
            // then the top ring.
            writeln!(
                w,
                "8 {} {} {} {} {} {} {} {}",
                n[0], n[1], n[3], n[2], n[4], n[5], n[7], n[6]
            )?;
        }
        writeln!(w, "CELL_TYPES {}", elems.len())?;
        for _ in &elems {
            writeln!(w, "12")?;
        }
        writeln!(w, "CELL_DATA {}", elems.len())?;
        writeln!(w, "SCALARS material int 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for &e in &elems {
            writeln!(w, "{}", self.material[e])?;
        }
        Ok(())
    }
}

/// Ordered crystal elements crossed by the optical path, with per-section
/// chord lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSamples {
    /// Element ids, entry to exit.
    pub elements: Vec<usize>,
    /// Chord length inside each element, m.
    pub lengths: Vec<f64>,
    /// Unit propagation direction.
    pub direction: [f64; 3],
}

impl PathSamples {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }
}

/// Walk the path through the voxel grid and collect one section per
/// crossed crystal element. Section lengths come from the parametric
/// crossing points, so they sum to the path length exactly; points on grid
/// planes resolve toward the positive side.
pub fn optical_path_samples(mesh: &VoxelMesh, scene: &Scene) -> Result<PathSamples, MeshError> {
    let dir = scene.path.direction;
    let entry = scene.path.entry;
    let length = scene.path.length;
    let h = mesh.spacing;

    // Parametric breakpoints where the path crosses grid planes.
    let mut breaks = vec![0.0f64, length];
    for d in 0..3 {
        if dir[d].abs() < 1e-14 {
            continue;
        }
        let dims = [mesh.nx, mesh.ny, mesh.nz][d];
        for k in 0..=dims {
            let plane = mesh.origin[d] + k as f64 * h;
            let t = (plane - entry[d]) / dir[d];
            if t > 1e-12 && t < length - 1e-12 {
                breaks.push(t);
            }
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut elements = Vec::new();
    let mut lengths = Vec::new();
    for w in breaks.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 - t0 <= 1e-12 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let p = [
            entry[0] + dir[0] * tm,
            entry[1] + dir[1] * tm,
            entry[2] + dir[2] * tm,
        ];
        let e = mesh
            .locate(p)
            .ok_or(MeshError::PathExitsCrystal(elements.len()))?;
        if mesh.material[e] != mesh.crystal_material {
            return Err(MeshError::PathExitsCrystal(elements.len()));
        }
        if elements.last() == Some(&e) {
            *lengths.last_mut().unwrap() += t1 - t0;
        } else {
            elements.push(e);
            lengths.push(t1 - t0);
        }
    }
    Ok(PathSamples { elements, lengths, direction: dir })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ElectrodeMode;

    fn default_scene_at(h: f64) -> Scene {
        let mut s = Scene::default_scene();
        s.sim.mesh_resolution = h;
        s
    }

    fn scene_without_electrodes(h: f64) -> Scene {
        let mut s = default_scene_at(h);
        s.electrode = None;
        s
    }

    #[test]
    fn crystal_voxel_count_at_1mm() {
        let scene = default_scene_at(1e-3);
        let mesh = VoxelMesh::build(&scene).unwrap();
        assert_eq!(mesh.crystal_elements().len(), 1000);
    }

    #[test]
    fn default_scene_has_three_regions_plus_electrodes() {
        let scene = default_scene_at(1e-3);
        let mesh = VoxelMesh::build(&scene).unwrap();
        let vols = mesh.material_volumes();
        let idx = |tag: &str| mesh.material_names.iter().position(|n| n == tag).unwrap();
        assert!(vols[idx("bgo")] > 0.0);
        assert!(vols[idx("sio2")] > 0.0);
        assert!(vols[idx("al")] > 0.0);
        assert!(vols[idx("cu")] > 0.0, "electrode layers present");
        assert_eq!(mesh.electrodes.len(), 2);
        assert!(!mesh.electrodes[0].nodes.is_empty());
        assert!(!mesh.electrodes[1].nodes.is_empty());
    }

    #[test]
    fn cylinder_disc_area_close_to_analytic() {
        let scene = scene_without_electrodes(1e-3);
        let mesh = VoxelMesh::build(&scene).unwrap();
        let idx = mesh.material_names.iter().position(|n| n == "sio2").unwrap();
        // One z-layer of the cylinder equals the rasterized disc.
        let height = 0.015;
        let volume = mesh.material_volumes()[idx];
        let area = volume / height;
        let analytic = std::f64::consts::PI * 0.025 * 0.025;
        assert!(
            (area - analytic).abs() / analytic < 0.03,
            "area {area}, analytic {analytic}"
        );
    }

    #[test]
    fn material_volume_fractions_converge_monotonically() {
        let analytic = [
            0.01f64.powi(3),                                  // bgo
            std::f64::consts::PI * 0.025 * 0.025 * 0.015,     // sio2
            0.05 * 0.05 * 0.01,                               // al
        ];
        let total: f64 = analytic.iter().sum();
        let mut errors: Vec<[f64; 3]> = Vec::new();
        for h in [2e-3, 1e-3, 0.5e-3] {
            let scene = scene_without_electrodes(h);
            let mesh = VoxelMesh::build(&scene).unwrap();
            let vols = mesh.material_volumes();
            let tagged: f64 = vols.iter().sum();
            let mut err = [0.0f64; 3];
            for (k, tag) in ["bgo", "sio2", "al"].iter().enumerate() {
                let idx = mesh.material_names.iter().position(|n| n == tag).unwrap();
                err[k] = (vols[idx] / tagged - analytic[k] / total).abs();
            }
            errors.push(err);
        }
        for k in 0..3 {
            assert!(errors[1][k] <= errors[0][k] + 1e-12, "{errors:?}");
            assert!(errors[2][k] <= errors[1][k] + 1e-12, "{errors:?}");
        }
        // At 1 mm every primitive boundary sits on the lattice: boxes are
        // exact there.
        let scene = scene_without_electrodes(1e-3);
        let mesh = VoxelMesh::build(&scene).unwrap();
        let al = mesh.material_names.iter().position(|n| n == "al").unwrap();
        assert!((mesh.material_volumes()[al] - 0.05 * 0.05 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn heater_base_is_plate_bottom() {
        let scene = default_scene_at(1e-3);
        let mesh = VoxelMesh::build(&scene).unwrap();
        assert_eq!(mesh.heater_base.len(), 50 * 50);
        for f in &mesh.heater_base {
            assert_eq!(f.side, 4);
        }
    }

    #[test]
    fn exterior_face_count_of_solid_box() {
        let doc = r#"
[materials.al]
density = 2730.0
specific_heat = 750.0
poisson = 0.33
youngs = 7.0e10
thermal_expansion = 2.4e-5
conductivity = 238.0

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
material = "bgo"
origin = [0.0, 0.0, 0.0]
extents = [0.004, 0.003, 0.002]

[path]
entry = [0.0, 0.0015, 0.001]
direction = [1.0, 0.0, 0.0]
length = 0.004

[sim]
t_total = 10.0
t_step = 5.0
ambient_t = 300.0
heater_t = 358.0
heater_material = "al"
mesh_resolution = 1e-3
"#;
        let scene = Scene::parse(doc).unwrap();
        let mesh = VoxelMesh::build(&scene).unwrap();
        let (nx, ny, nz) = (4, 3, 2);
        let expected = 2 * (nx * ny + ny * nz + nz * nx);
        assert_eq!(mesh.convective_exterior.len() + mesh.heater_base.len(), expected);
        // No heater material present: base empty, diagnostic emitted.
        assert!(mesh.heater_base.is_empty());
        assert!(!mesh.diagnostics.is_empty());
    }

    #[test]
    fn boundary_sets_are_disjoint_and_cover_exterior() {
        let scene = default_scene_at(1e-3);
        let mesh = VoxelMesh::build(&scene).unwrap();
        let mut seen = std::collections::HashSet::new();
        for f in mesh.heater_base.iter().chain(&mesh.convective_exterior) {
            assert!(seen.insert((f.element, f.side)), "duplicate face");
        }
        // Electrode interfaces are interior faces, not part of the
        // exterior cover.
        for surf in &mesh.electrodes {
            for f in &surf.faces {
                assert!(!seen.contains(&(f.element, f.side)));
            }
        }
    }

    #[test]
    fn path_samples_axis_aligned() {
        let scene = default_scene_at(1e-3);
        let mesh = VoxelMesh::build(&scene).unwrap();
        let samples = optical_path_samples(&mesh, &scene).unwrap();
        assert_eq!(samples.len(), 10);
        for &l in &samples.lengths {
            assert!((l - 1e-3).abs() < 1e-12);
        }
        assert!((samples.total_length() - 0.01).abs() < 1e-12 * 0.01);

        let scene_fine = default_scene_at(0.5e-3);
        let mesh_fine = VoxelMesh::build(&scene_fine).unwrap();
        let samples_fine = optical_path_samples(&mesh_fine, &scene_fine).unwrap();
        assert_eq!(samples_fine.len(), 20);
        assert!((samples_fine.total_length() - 0.01).abs() < 1e-12 * 0.01);
    }

    #[test]
    fn path_length_invariant_across_resolutions() {
        for h in [0.25e-3, 0.5e-3, 1e-3, 2e-3] {
            let scene = scene_without_electrodes(h);
            let mesh = VoxelMesh::build(&scene).unwrap();
            let samples = optical_path_samples(&mesh, &scene)
                .unwrap_or_else(|e| panic!("resolution {h}: {e}"));
            assert!(
                (samples.total_length() - 0.01).abs() < 1e-12 * 0.01,
                "resolution {h}"
            );
        }
    }

    #[test]
    fn path_samples_independent_of_side_electrodes() {
        let base = scene_without_electrodes(1e-3);
        let mesh = VoxelMesh::build(&base).unwrap();
        let reference = optical_path_samples(&mesh, &base).unwrap();
        for name in ["cu_10_0", "cu_5_2", "cu_5_4"] {
            let scene = base.with_mode(ElectrodeMode::builtin(name).unwrap());
            let mesh = VoxelMesh::build(&scene).unwrap();
            let samples = optical_path_samples(&mesh, &scene).unwrap();
            assert_eq!(samples.lengths, reference.lengths, "{name}");
        }
    }

    #[test]
    fn coarse_resolution_rejects_thin_electrode() {
        let scene = default_scene_at(2e-3);
        let err = VoxelMesh::build(&scene).unwrap_err();
        assert!(matches!(err, MeshError::ResolutionTooCoarse { .. }), "{err}");
    }

    #[test]
    fn memory_cap_enforced() {
        let mut scene = default_scene_at(1e-3);
        scene.sim.max_voxels = 10;
        let err = VoxelMesh::build(&scene).unwrap_err();
        assert!(matches!(err, MeshError::MemoryBound { .. }));
    }

    #[test]
    fn electrode_layers_snap_to_one_voxel() {
        let scene = default_scene_at(1e-3);
        let mesh = VoxelMesh::build(&scene).unwrap();
        let cu = mesh.material_names.iter().position(|n| n == "cu").unwrap();
        // Two 10 mm x 10 mm plates, one voxel (1 mm) thick.
        let vol = mesh.material_volumes()[cu];
        assert!((vol - 2.0 * 0.01 * 0.01 * 1e-3).abs() < 1e-12, "{vol}");
    }
}
