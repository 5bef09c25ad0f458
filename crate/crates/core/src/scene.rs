//! Simulation configuration: geometry primitives, materials, electrode
//! modes, solver and optical parameters.
//!
//! A scene is parsed from a sectioned key-value document (TOML) and is
//! immutable after construction, so it can be shared freely across
//! concurrent evaluations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The default sensor-head document, also the base for the built-in presets.
pub const DEFAULT_DOCUMENT: &str = include_str!("../assets/default.toml");

/// Per-material thermal and mechanical constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialProps {
    /// kg/m^3
    pub density: f64,
    /// J/(kg K)
    pub specific_heat: f64,
    /// Poisson ratio, dimensionless, in (0, 0.5)
    pub poisson: f64,
    /// Young's modulus, Pa
    pub youngs: f64,
    /// Linear expansion coefficient, 1/K
    pub thermal_expansion: f64,
    /// W/(m K)
    pub conductivity: f64,
}

impl MaterialProps {
    /// Lame parameters (lambda, mu) of the isotropic elastic law.
    pub fn lame(&self) -> (f64, f64) {
        let e = self.youngs;
        let nu = self.poisson;
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        (lambda, mu)
    }

    /// Volumetric heat capacity rho*c, J/(m^3 K).
    pub fn volumetric_heat_capacity(&self) -> f64 {
        self.density * self.specific_heat
    }

    fn check(&self, tag: &str, out: &mut Vec<Diagnostic>) {
        let field = |name: &str| format!("materials.{tag}.{name}");
        if !(self.density > 0.0) {
            out.push(Diagnostic::new(field("density"), "must be positive"));
        }
        if !(self.specific_heat > 0.0) {
            out.push(Diagnostic::new(field("specific_heat"), "must be positive"));
        }
        if !(self.poisson > 0.0 && self.poisson < 0.5) {
            out.push(Diagnostic::new(field("poisson"), "poisson out of range (0, 0.5)"));
        }
        if !(self.youngs > 0.0) {
            out.push(Diagnostic::new(field("youngs"), "must be positive"));
        }
        if !(self.thermal_expansion > 0.0) {
            out.push(Diagnostic::new(field("thermal_expansion"), "must be positive"));
        }
        if !(self.conductivity > 0.0) {
            out.push(Diagnostic::new(field("conductivity"), "must be positive"));
        }
    }
}

/// Optical constants of the active crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalProps {
    /// Material tag of the electro-optic crystal.
    pub crystal_material: String,
    /// Unperturbed refractive index n0.
    pub base_index: f64,
    /// Photoelastic coefficients, m^2/N. Only differences of q11 and q12
    /// enter the transverse birefringence, so q12 may be stored as zero.
    pub q11: f64,
    #[serde(default)]
    pub q12: f64,
    pub q44: f64,
    /// Electro-optic coefficient, m/V.
    pub r41: f64,
    /// Static relative permittivity of the crystal.
    pub rel_permittivity: f64,
    /// Vacuum wavelength of the probe light, m.
    pub wavelength: f64,
}

impl OpticalProps {
    fn check(&self, out: &mut Vec<Diagnostic>) {
        if !(self.base_index > 1.0) {
            out.push(Diagnostic::new("optics.base_index", "must exceed 1"));
        }
        if !(self.q11 - self.q12).is_finite() || self.q11 - self.q12 == 0.0 {
            out.push(Diagnostic::new("optics.q11", "q11 - q12 must be finite and nonzero"));
        }
        if !self.q44.is_finite() || self.q44 == 0.0 {
            out.push(Diagnostic::new("optics.q44", "must be finite and nonzero"));
        }
        if !(self.r41 != 0.0 && self.r41.is_finite()) {
            out.push(Diagnostic::new("optics.r41", "must be finite and nonzero"));
        }
        if !(self.rel_permittivity > 0.0) {
            out.push(Diagnostic::new("optics.rel_permittivity", "must be positive"));
        }
        if !(self.wavelength > 0.0) {
            out.push(Diagnostic::new("optics.wavelength", "must be positive"));
        }
    }
}

/// Coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Solid primitive with a material tag. Later entries win where
/// primitives overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Box {
        material: String,
        /// Minimum corner, m.
        origin: [f64; 3],
        /// Edge lengths, m.
        extents: [f64; 3],
    },
    Cylinder {
        material: String,
        axis: Axis,
        /// Center of the base disc, m.
        base_center: [f64; 3],
        radius: f64,
        height: f64,
    },
}

impl Primitive {
    pub fn material(&self) -> &str {
        match self {
            Primitive::Box { material, .. } => material,
            Primitive::Cylinder { material, .. } => material,
        }
    }

    /// Axis-aligned bounding box (min, max).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Primitive::Box { origin, extents, .. } => {
                let max = [
                    origin[0] + extents[0],
                    origin[1] + extents[1],
                    origin[2] + extents[2],
                ];
                (*origin, max)
            }
            Primitive::Cylinder { axis, base_center, radius, height, .. } => {
                let mut min = *base_center;
                let mut max = *base_center;
                let a = axis.index();
                for d in 0..3 {
                    if d == a {
                        max[d] += height;
                    } else {
                        min[d] -= radius;
                        max[d] += radius;
                    }
                }
                (min, max)
            }
        }
    }

    /// Whether `p` lies inside the primitive. Boundaries are inclusive
    /// with a nanometer tolerance, far above float noise and far below
    /// any usable voxel size.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        const EPS: f64 = 1e-9;
        match self {
            Primitive::Box { origin, extents, .. } => (0..3).all(|d| {
                p[d] >= origin[d] - EPS && p[d] <= origin[d] + extents[d] + EPS
            }),
            Primitive::Cylinder { axis, base_center, radius, height, .. } => {
                let a = axis.index();
                if p[a] < base_center[a] - EPS || p[a] > base_center[a] + height + EPS {
                    return false;
                }
                let (u, v) = match a {
                    0 => (1, 2),
                    1 => (2, 0),
                    _ => (0, 1),
                };
                let du = p[u] - base_center[u];
                let dv = p[v] - base_center[v];
                du * du + dv * dv <= (radius + EPS) * (radius + EPS)
            }
        }
    }

    fn check(&self, idx: usize, out: &mut Vec<Diagnostic>) {
        let field = format!("geometry.primitives[{idx}]");
        match self {
            Primitive::Box { extents, .. } => {
                if extents.iter().any(|&e| !(e > 0.0)) {
                    out.push(Diagnostic::new(field, "degenerate box: extents must be positive"));
                }
            }
            Primitive::Cylinder { radius, height, .. } => {
                if !(*radius > 0.0) || !(*height > 0.0) {
                    out.push(Diagnostic::new(field, "degenerate cylinder: radius and height must be positive"));
                }
            }
        }
    }
}

/// Straight optical path through the crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    /// Entry point, m.
    pub entry: [f64; 3],
    /// Propagation direction (normalized on parse).
    pub direction: [f64; 3],
    /// Path length, m.
    pub length: f64,
}

impl PathSpec {
    pub fn exit(&self) -> [f64; 3] {
        [
            self.entry[0] + self.direction[0] * self.length,
            self.entry[1] + self.direction[1] * self.length,
            self.entry[2] + self.direction[2] * self.length,
        ]
    }
}

/// Electrode conductor type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElectrodeMaterial {
    /// Copper foil; opaque.
    Cu,
    /// Transparent conductive film on a fused-silica substrate. The film is
    /// mechanically and thermally negligible; the slab carries the silica
    /// material constants and the crystal-facing surface is treated as an
    /// equipotential.
    Ito,
}

impl ElectrodeMaterial {
    /// Material tag used for the electrode volume in the mesh.
    pub fn material_tag(self) -> &'static str {
        match self {
            ElectrodeMaterial::Cu => "cu",
            ElectrodeMaterial::Ito => "sio2",
        }
    }

    pub fn is_opaque(self) -> bool {
        matches!(self, ElectrodeMaterial::Cu)
    }
}

/// One electrode pair. Each terminal is an L-shaped patch wrapping a
/// vertical crystal edge: a run of `ratio_x` meters along x on a y-face
/// plus a run of `ratio_y` meters along y on an x-face. The two terminals
/// wrap diagonally opposite edges, which tilts the internal field anywhere
/// between the transverse (y) and longitudinal (x) directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeMode {
    pub name: String,
    pub material: ElectrodeMaterial,
    /// Electrode run along x on the y-faces, m.
    pub ratio_x: f64,
    /// Electrode run along y on the x-faces, m.
    pub ratio_y: f64,
    /// Electrode thickness normal to the crystal face, m.
    pub thickness: f64,
    /// Terminal-to-terminal drive voltage, V.
    pub applied_voltage: f64,
}

const BUILTIN_MODES: [(&str, ElectrodeMaterial, f64, f64, f64); 6] = [
    ("cu_10_0", ElectrodeMaterial::Cu, 10e-3, 0.0, 0.5e-3),
    ("cu_5_2", ElectrodeMaterial::Cu, 5e-3, 2e-3, 0.5e-3),
    ("cu_5_4", ElectrodeMaterial::Cu, 5e-3, 4e-3, 0.5e-3),
    ("ito_0_5", ElectrodeMaterial::Ito, 0.0, 5e-3, 1e-3),
    ("ito_0_7", ElectrodeMaterial::Ito, 0.0, 7e-3, 1e-3),
    ("ito_0_10", ElectrodeMaterial::Ito, 0.0, 10e-3, 1e-3),
];

pub const DEFAULT_APPLIED_VOLTAGE: f64 = 1000.0;

impl ElectrodeMode {
    /// Look up a built-in modulation mode. Accepts the canonical snake-case
    /// name (`cu_5_4`) or the display form (`Cu 5:4`).
    pub fn builtin(name: &str) -> Result<ElectrodeMode, SceneError> {
        let key = normalize_mode_name(name);
        BUILTIN_MODES
            .iter()
            .find(|(n, ..)| *n == key)
            .map(|&(n, material, ratio_x, ratio_y, thickness)| ElectrodeMode {
                name: n.to_string(),
                material,
                ratio_x,
                ratio_y,
                thickness,
                applied_voltage: DEFAULT_APPLIED_VOLTAGE,
            })
            .ok_or_else(|| SceneError::UnknownMode(name.to_string()))
    }

    /// Canonical names of the six built-in modes.
    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN_MODES.iter().map(|(n, ..)| *n).collect()
    }

    /// All six built-in modes.
    pub fn builtins() -> Vec<ElectrodeMode> {
        BUILTIN_MODES
            .iter()
            .map(|(n, ..)| ElectrodeMode::builtin(n).expect("builtin"))
            .collect()
    }

    fn check(&self, out: &mut Vec<Diagnostic>) {
        if self.ratio_x < 0.0 || self.ratio_y < 0.0 {
            out.push(Diagnostic::new("electrode.ratio", "ratios must be nonnegative"));
        }
        if self.ratio_x == 0.0 && self.ratio_y == 0.0 {
            out.push(Diagnostic::new("electrode.ratio", "ratio_x and ratio_y must not both be zero"));
        }
        if !(self.thickness > 0.0) {
            out.push(Diagnostic::new("electrode.thickness", "must be positive"));
        }
    }
}

fn normalize_mode_name(name: &str) -> String {
    let mut out = String::new();
    let mut last_sep = false;
    for c in name.trim().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            last_sep = false;
        } else if !last_sep && !out.is_empty() {
            out.push('_');
            last_sep = true;
        }
    }
    out.trim_end_matches('_').to_string()
}

/// Time stepping, boundary conditions and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Total simulated time, s.
    pub t_total: f64,
    /// Snapshot interval and implicit time step, s.
    pub t_step: f64,
    /// Ambient (and initial) temperature, K.
    pub ambient_t: f64,
    /// Fixed heater-base temperature, K.
    pub heater_t: f64,
    /// Material tag of the heater plate.
    pub heater_material: String,
    /// Convective film coefficient on exterior surfaces, W/(m^2 K).
    #[serde(default = "default_convection_h")]
    pub convection_h: f64,
    /// Zero-stress datum temperature, K. Defaults to `ambient_t`.
    #[serde(default)]
    pub reference_t: Option<f64>,
    /// Voxel edge length, m.
    pub mesh_resolution: f64,
    /// Relative residual target for the iterative solvers.
    #[serde(default = "default_solver_rel_tol")]
    pub solver_rel_tol: f64,
    /// Upper bound on voxel count, guards against accidental huge grids.
    #[serde(default = "default_max_voxels")]
    pub max_voxels: usize,
}

fn default_convection_h() -> f64 {
    10.0
}

fn default_solver_rel_tol() -> f64 {
    1e-9
}

fn default_max_voxels() -> usize {
    50_000_000
}

impl SimParams {
    pub fn reference_t(&self) -> f64 {
        self.reference_t.unwrap_or(self.ambient_t)
    }

    /// Snapshot times 0, t_step, ..., t_total.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let n = (self.t_total / self.t_step).round() as usize;
        (0..=n).map(|k| k as f64 * self.t_step).collect()
    }

    fn check(&self, out: &mut Vec<Diagnostic>) {
        if !(self.t_step > 0.0) {
            out.push(Diagnostic::new("sim.t_step", "nonpositive time step"));
        }
        if self.t_step > self.t_total {
            out.push(Diagnostic::new("sim.t_step", "t_step exceeds t_total"));
        }
        if !(self.ambient_t > 0.0) || !(self.heater_t > 0.0) {
            out.push(Diagnostic::new("sim.ambient_t", "temperatures must be positive"));
        }
        if let Some(r) = self.reference_t {
            if !(r > 0.0) {
                out.push(Diagnostic::new("sim.reference_t", "temperatures must be positive"));
            }
        }
        if !(self.mesh_resolution > 0.0) {
            out.push(Diagnostic::new("sim.mesh_resolution", "must be positive"));
        }
        if !(self.convection_h >= 0.0) {
            out.push(Diagnostic::new("sim.convection_h", "must be nonnegative"));
        }
        if !(self.solver_rel_tol > 0.0 && self.solver_rel_tol < 1.0) {
            out.push(Diagnostic::new("sim.solver_rel_tol", "must be in (0, 1)"));
        }
    }
}

/// A validation finding. Diagnostics are collected, not thrown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic { field: field.into(), message: message.into() }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("config syntax error: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("missing {0} section")]
    Missing(&'static str),
    #[error("invalid config: {0}")]
    Invalid(Diagnostic),
    #[error("unknown built-in electrode mode `{0}`")]
    UnknownMode(String),
}

/// A fully resolved simulation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub materials: BTreeMap<String, MaterialProps>,
    pub optics: OpticalProps,
    pub primitives: Vec<Primitive>,
    pub path: PathSpec,
    pub electrode: Option<ElectrodeMode>,
    pub sim: SimParams,
}

// Raw document shape. Sections are optional here so that presence can be
// reported explicitly instead of through serde's field ordering.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    geometry: Option<RawGeometry>,
    materials: Option<BTreeMap<String, MaterialProps>>,
    optics: Option<OpticalProps>,
    path: Option<PathSpec>,
    electrode: Option<RawElectrode>,
    sim: Option<SimParams>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    primitives: Vec<Primitive>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawElectrode {
    Named {
        mode: String,
        #[serde(default)]
        applied_voltage: Option<f64>,
    },
    Custom {
        #[serde(default)]
        name: Option<String>,
        material: ElectrodeMaterial,
        ratio_x: f64,
        ratio_y: f64,
        thickness: f64,
        #[serde(default)]
        applied_voltage: Option<f64>,
    },
}

#[derive(Debug, Serialize)]
struct DocumentView<'a> {
    materials: &'a BTreeMap<String, MaterialProps>,
    optics: &'a OpticalProps,
    geometry: GeometryView<'a>,
    path: &'a PathSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    electrode: Option<ElectrodeView<'a>>,
    sim: &'a SimParams,
}

#[derive(Debug, Serialize)]
struct GeometryView<'a> {
    primitives: &'a [Primitive],
}

#[derive(Debug, Serialize)]
struct ElectrodeView<'a> {
    name: &'a str,
    material: ElectrodeMaterial,
    ratio_x: f64,
    ratio_y: f64,
    thickness: f64,
    applied_voltage: f64,
}

impl Scene {
    /// Parse and resolve a configuration document. Hard invariant
    /// violations are rejected here; use [`Scene::validate`] for the full
    /// diagnostic sweep on an already constructed scene.
    pub fn parse(text: &str) -> Result<Scene, SceneError> {
        let raw: RawDocument = toml::from_str(text)?;
        let geometry = raw.geometry.ok_or(SceneError::Missing("geometry"))?;
        let materials = raw.materials.ok_or(SceneError::Missing("materials"))?;
        let optics = raw.optics.ok_or(SceneError::Missing("optics"))?;
        let path = raw.path.ok_or(SceneError::Missing("path"))?;
        let sim = raw.sim.ok_or(SceneError::Missing("sim"))?;

        let electrode = match raw.electrode {
            None => None,
            Some(RawElectrode::Named { mode, applied_voltage }) => {
                let mut m = ElectrodeMode::builtin(&mode)?;
                if let Some(v) = applied_voltage {
                    m.applied_voltage = v;
                }
                Some(m)
            }
            Some(RawElectrode::Custom { name, material, ratio_x, ratio_y, thickness, applied_voltage }) => {
                Some(ElectrodeMode {
                    name: name.unwrap_or_else(|| "custom".to_string()),
                    material,
                    ratio_x,
                    ratio_y,
                    thickness,
                    applied_voltage: applied_voltage.unwrap_or(DEFAULT_APPLIED_VOLTAGE),
                })
            }
        };

        let mut path = path;
        let norm = (path.direction[0].powi(2) + path.direction[1].powi(2) + path.direction[2].powi(2)).sqrt();
        if !(norm > 0.0) {
            return Err(SceneError::Invalid(Diagnostic::new("path.direction", "must be nonzero")));
        }
        for d in 0..3 {
            path.direction[d] /= norm;
        }

        let scene = Scene { materials, optics, primitives: geometry.primitives, path, electrode, sim };

        // Hard invariants become parse errors.
        if let Some(d) = scene.type_invariant_diagnostics().into_iter().next() {
            return Err(SceneError::Invalid(d));
        }
        Ok(scene)
    }

    /// Serialize back to the document format. `parse(to_toml(s)) == s` for
    /// every valid scene.
    pub fn to_toml(&self) -> String {
        let view = DocumentView {
            materials: &self.materials,
            optics: &self.optics,
            geometry: GeometryView { primitives: &self.primitives },
            path: &self.path,
            electrode: self.electrode.as_ref().map(|e| ElectrodeView {
                name: &e.name,
                material: e.material,
                ratio_x: e.ratio_x,
                ratio_y: e.ratio_y,
                thickness: e.thickness,
                applied_voltage: e.applied_voltage,
            }),
            sim: &self.sim,
        };
        toml::to_string(&view).expect("scene serialization")
    }

    /// The default configuration document.
    pub fn default_scene() -> Scene {
        Scene::parse(DEFAULT_DOCUMENT).expect("default document parses")
    }

    /// A preset document: the default scene with the named built-in mode.
    pub fn preset_document(mode: &str) -> Result<String, SceneError> {
        let m = ElectrodeMode::builtin(mode)?;
        let mut scene = Scene::default_scene();
        scene.electrode = Some(m);
        Ok(scene.to_toml())
    }

    /// Scene with a built-in electrode mode substituted in.
    pub fn with_mode(&self, mode: ElectrodeMode) -> Scene {
        let mut s = self.clone();
        s.electrode = Some(mode);
        s
    }

    /// The primitive holding the optical path.
    pub fn crystal_primitive(&self) -> Option<&Primitive> {
        self.primitives
            .iter()
            .find(|p| p.material() == self.optics.crystal_material)
    }

    fn type_invariant_diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.materials.is_empty() {
            out.push(Diagnostic::new("materials", "at least one material required"));
        }
        for (tag, m) in &self.materials {
            m.check(tag, &mut out);
        }
        self.optics.check(&mut out);
        if self.primitives.is_empty() {
            out.push(Diagnostic::new("geometry.primitives", "at least one primitive required"));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            p.check(i, &mut out);
            if !self.materials.contains_key(p.material()) {
                out.push(Diagnostic::new(
                    format!("geometry.primitives[{i}].material"),
                    format!("unknown material tag `{}`", p.material()),
                ));
            }
        }
        if !self.materials.contains_key(&self.sim.heater_material) {
            out.push(Diagnostic::new("sim.heater_material", format!("unknown material tag `{}`", self.sim.heater_material)));
        }
        if !self.materials.contains_key(&self.optics.crystal_material) {
            out.push(Diagnostic::new("optics.crystal_material", format!("unknown material tag `{}`", self.optics.crystal_material)));
        }
        if !(self.path.length > 0.0) {
            out.push(Diagnostic::new("path.length", "must be positive"));
        }
        if let Some(e) = &self.electrode {
            e.check(&mut out);
        }
        self.sim.check(&mut out);
        out
    }

    /// Full diagnostic sweep. Empty iff every type invariant holds and the
    /// optical path keeps at least one voxel of clearance from crystal
    /// faces covered by opaque electrodes it would pass through.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = self.type_invariant_diagnostics();

        // Path must sit inside exactly one crystal-tagged primitive.
        let crystal_tag = &self.optics.crystal_material;
        let mid = [
            self.path.entry[0] + self.path.direction[0] * self.path.length * 0.5,
            self.path.entry[1] + self.path.direction[1] * self.path.length * 0.5,
            self.path.entry[2] + self.path.direction[2] * self.path.length * 0.5,
        ];
        let holders: Vec<usize> = self
            .primitives
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                p.material() == crystal_tag
                    && p.contains(self.path.entry)
                    && p.contains(self.path.exit())
                    && p.contains(mid)
            })
            .map(|(i, _)| i)
            .collect();
        if holders.len() != 1 {
            out.push(Diagnostic::new(
                "path",
                format!("path must lie inside exactly one crystal-tagged primitive (found {})", holders.len()),
            ));
        }

        // Crystal edge must be a whole number of voxels.
        if let Some(Primitive::Box { extents, .. }) = self.crystal_primitive() {
            let h = self.sim.mesh_resolution;
            if h > 0.0 {
                for (d, &e) in extents.iter().enumerate() {
                    let n = e / h;
                    if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
                        out.push(Diagnostic::new(
                            "sim.mesh_resolution",
                            format!("resolution must divide crystal edge length (axis {d})"),
                        ));
                    }
                }
            }
        }

        // Opaque electrodes must not block the beam where it crosses the
        // crystal faces; transparent ones may cover the window.
        if let (Some(mode), Some(prim)) = (&self.electrode, self.crystal_primitive()) {
            if mode.material.is_opaque() && holders.len() == 1 {
                let (cmin, cmax) = prim.bounds();
                let h = self.sim.mesh_resolution;
                for (point, label) in [(self.path.entry, "entry"), (self.path.exit(), "exit")] {
                    // Which face does the beam pierce?
                    for d in 0..2usize {
                        // electrodes only occupy x- and y-faces
                        let on_min = (point[d] - cmin[d]).abs() < 1e-12;
                        let on_max = (point[d] - cmax[d]).abs() < 1e-12;
                        if !(on_min || on_max) {
                            continue;
                        }
                        let clearance = electrode_clearance(mode, cmin, cmax, d, on_max, point);
                        if clearance < h - 1e-12 {
                            out.push(Diagnostic::new(
                                format!("path.{label}"),
                                "path blocked by metal electrode",
                            ));
                        }
                    }
                }
            }
        }

        out
    }
}

/// Distance from a beam piercing point to the nearest opaque-electrode
/// footprint on that crystal face. Negative means the point is covered.
fn electrode_clearance(
    mode: &ElectrodeMode,
    cmin: [f64; 3],
    cmax: [f64; 3],
    face_axis: usize,
    on_max: bool,
    point: [f64; 3],
) -> f64 {
    // Terminal A wraps the (+x, +y) vertical edge, terminal B the (-x, -y)
    // edge; see `mesh::electrode_boxes` for the authoritative layout.
    match face_axis {
        0 => {
            // x-faces carry runs along y of length ratio_y.
            if mode.ratio_y <= 0.0 {
                return f64::INFINITY;
            }
            if on_max {
                // terminal A: y in [cmax - ratio_y, cmax]
                (cmax[1] - mode.ratio_y) - point[1]
            } else {
                // terminal B: y in [cmin, cmin + ratio_y]
                point[1] - (cmin[1] + mode.ratio_y)
            }
        }
        1 => {
            // y-faces carry runs along x of length ratio_x.
            if mode.ratio_x <= 0.0 {
                return f64::INFINITY;
            }
            if on_max {
                (cmax[0] - mode.ratio_x) - point[0]
            } else {
                point[0] - (cmin[0] + mode.ratio_x)
            }
        }
        _ => f64::INFINITY,
    }
}
