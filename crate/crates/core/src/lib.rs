//! Simulation toolkit for thermal-stress birefringence in electro-optic
//! voltage sensors: transient heating of the sensor head, quasi-static
//! thermoelasticity, electrostatic field shaping by electrode geometry,
//! photoelastic/electro-optic index perturbations accumulated through a
//! polarization chain, and signal-level drift statistics.

pub mod electrostatics;
pub mod linalg;
pub mod mechanics;
pub mod mesh;
pub mod optics;
pub mod report;
pub mod scene;
pub mod signal;
pub mod sweep;
pub mod thermal;

pub use mechanics::SymTensor;
pub use mesh::{PathSamples, VoxelMesh};
pub use scene::{ElectrodeMode, MaterialProps, OpticalProps, Scene, SimParams};
