//! Shared fixtures for the solver benchmarks.

use ovs_core::scene::Scene;

/// A reduced sensor head (crystal on a small plate) that keeps solve
/// times in benchmark range.
pub fn small_scene() -> Scene {
    let doc = r#"
[materials.bgo]
density = 7130.0
specific_heat = 350.0
poisson = 0.20
youngs = 7.31e10
thermal_expansion = 6.3e-6
conductivity = 0.18

[materials.cu]
density = 8940.0
specific_heat = 385.0
poisson = 0.34
youngs = 12.6e10
thermal_expansion = 1.7e-5
conductivity = 400.0

[materials.al]
density = 2730.0
specific_heat = 750.0
poisson = 0.33
youngs = 7.0e10
thermal_expansion = 2.4e-5
conductivity = 238.0

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
material = "al"
origin = [-0.007, -0.007, 0.0]
extents = [0.014, 0.014, 0.004]

[[geometry.primitives]]
shape = "box"
material = "bgo"
origin = [-0.005, -0.005, 0.004]
extents = [0.01, 0.01, 0.01]

[path]
entry = [-0.005, 0.0, 0.009]
direction = [1.0, 0.0, 0.0]
length = 0.01

[electrode]
mode = "cu_10_0"

[sim]
t_total = 60.0
t_step = 5.0
ambient_t = 300.0
heater_t = 358.0
heater_material = "al"
convection_h = 10.0
mesh_resolution = 1e-3
"#;
    Scene::parse(doc).expect("benchmark scene parses")
}
