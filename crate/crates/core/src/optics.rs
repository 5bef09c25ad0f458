//! Index-ellipsoid perturbations and Jones-calculus accumulation.
//!
//! Stress (or an applied electric field) perturbs the crystal's inverse
//! dielectric tensor B = 1/n^2. For light along a coordinate axis the two
//! transverse principal values of the perturbed B give the section's
//! birefringence magnitude and fast-axis angle; each section then acts as
//! a linear retarder and the chain polarizer -> crystal sections -> quarter
//! wave plate -> analyzer maps accumulated retardation to an intensity.
//!
//! Component order of every 6-vector and 6x6 matrix in this module is
//! (11, 22, 33, 12, 23, 31).
//!
//! The simulation frame is rotated 45 degrees about z with respect to the
//! cubic crystal axes: light travels along x = [-1 1 0], the nominal field
//! direction y = [110], and z = [001].

use num_complex::Complex64;

use crate::scene::{Axis, OpticalProps};

/// Index perturbation in 6-vector form, order (11, 22, 33, 12, 23, 31).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationVector(pub [f64; 6]);

impl PerturbationVector {
    pub const ZERO: PerturbationVector = PerturbationVector([0.0; 6]);

    pub fn b11(&self) -> f64 {
        self.0[0]
    }
    pub fn b22(&self) -> f64 {
        self.0[1]
    }
    pub fn b33(&self) -> f64 {
        self.0[2]
    }
    pub fn b12(&self) -> f64 {
        self.0[3]
    }
    pub fn b23(&self) -> f64 {
        self.0[4]
    }
    pub fn b31(&self) -> f64 {
        self.0[5]
    }
}

/// One optical-path section: birefringence magnitude, axis angle and phase
/// retardation over the section length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionBirefringence {
    /// |Delta n| between the transverse principal indices, >= 0.
    pub delta_n: f64,
    /// Principal-axis angle magnitude, radians in [0, pi/2]. Reported.
    pub theta: f64,
    /// Signed axis angle used to build the retarder; carries the sign of
    /// B_jk / (B_jj - B_kk).
    pub theta_signed: f64,
    /// Phase retardation 2*pi*L*delta_n/lambda, radians.
    pub delta_m: f64,
    /// Section length, m.
    pub length: f64,
}

impl SectionBirefringence {
    /// A section with no birefringence (identity retarder).
    pub fn neutral(length: f64) -> SectionBirefringence {
        SectionBirefringence { delta_n: 0.0, theta: 0.0, theta_signed: 0.0, delta_m: 0.0, length }
    }
}

/// Coordinate and constitutive transforms between the crystal frame and
/// the simulation frame.
#[derive(Debug, Clone)]
pub struct TransformSet {
    /// 3x3 axis map between simulation and crystal coordinates. The matrix
    /// is symmetric and involutive, so it serves both directions.
    pub t: [[f64; 3]; 3],
    /// 6x6 component transform taking crystal-frame 6-vectors to
    /// simulation-frame 6-vectors.
    pub a: [[f64; 6]; 6],
    pub a_inv: [[f64; 6]; 6],
    /// Photoelastic matrix in the crystal frame (three independent
    /// constants for a cubic crystal).
    pub q_cry: [[f64; 6]; 6],
    /// Photoelastic matrix in the simulation frame, A * Q_cry * A^-1.
    pub q_sim: [[f64; 6]; 6],
}

const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Axis map between simulation and crystal coordinates.
pub const FRAME_ROTATION: [[f64; 3]; 3] = [[-S, S, 0.0], [S, S, 0.0], [0.0, 0.0, 1.0]];

/// 6-vector component transform, crystal frame to simulation frame.
pub const COMPONENT_TRANSFORM: [[f64; 6]; 6] = [
    [0.5, 0.5, 0.0, 0.0, 0.0, -0.5],
    [0.5, 0.5, 0.0, 0.0, 0.0, 0.5],
    [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, S, S, 0.0],
    [0.0, 0.0, 0.0, S, -S, 0.0],
    [-0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
];

/// Closed-form inverse of `COMPONENT_TRANSFORM`.
pub const COMPONENT_TRANSFORM_INV: [[f64; 6]; 6] = [
    [0.5, 0.5, 0.0, 0.0, 0.0, -1.0],
    [0.5, 0.5, 0.0, 0.0, 0.0, 1.0],
    [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, S, S, 0.0],
    [0.0, 0.0, 0.0, S, -S, 0.0],
    [-1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
];

fn mat6_mul(a: &[[f64; 6]; 6], b: &[[f64; 6]; 6]) -> [[f64; 6]; 6] {
    let mut out = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            let mut acc = 0.0;
            for k in 0..6 {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn mat6_vec(a: &[[f64; 6]; 6], v: &[f64; 6]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (i, row) in a.iter().enumerate() {
        let mut acc = 0.0;
        for k in 0..6 {
            acc += row[k] * v[k];
        }
        out[i] = acc;
    }
    out
}

/// Build the transform set for the configured photoelastic constants.
pub fn build_transforms(optics: &OpticalProps) -> TransformSet {
    let (p, q, r) = (optics.q11, optics.q12, optics.q44);
    let q_cry = [
        [p, q, q, 0.0, 0.0, 0.0],
        [q, p, q, 0.0, 0.0, 0.0],
        [q, q, p, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, r, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, r, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, r],
    ];
    let q_sim = mat6_mul(&mat6_mul(&COMPONENT_TRANSFORM, &q_cry), &COMPONENT_TRANSFORM_INV);
    TransformSet {
        t: FRAME_ROTATION,
        a: COMPONENT_TRANSFORM,
        a_inv: COMPONENT_TRANSFORM_INV,
        q_cry,
        q_sim,
    }
}

/// Photoelastic index perturbation of a simulation-frame stress state.
pub fn delta_b_from_stress(
    stress: &crate::mechanics::SymTensor,
    transforms: &TransformSet,
) -> PerturbationVector {
    let v = [stress.xx, stress.yy, stress.zz, stress.xy, stress.yz, stress.zx];
    PerturbationVector(mat6_vec(&transforms.q_sim, &v))
}

/// Electro-optic index perturbation of a simulation-frame field vector.
/// The crystal-frame perturbation has r41 coupling the field components
/// into the shear slots only; it is rotated back with the 3x3 frame map.
pub fn electrooptic_delta_b(e_sim: [f64; 3], r41: f64) -> PerturbationVector {
    let t = &FRAME_ROTATION;
    let mut e_cry = [0.0f64; 3];
    for i in 0..3 {
        for j in 0..3 {
            e_cry[i] += t[i][j] * e_sim[j];
        }
    }
    // Crystal-frame perturbation: B23 = r41 Ex, B31 = r41 Ey, B12 = r41 Ez.
    let m = [
        [0.0, r41 * e_cry[2], r41 * e_cry[1]],
        [r41 * e_cry[2], 0.0, r41 * e_cry[0]],
        [r41 * e_cry[1], r41 * e_cry[0], 0.0],
    ];
    // Congruence back to the simulation frame (t is involutive).
    let mut tm = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += t[i][k] * m[k][j];
            }
            tm[i][j] = acc;
        }
    }
    let mut b = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += tm[i][k] * t[k][j];
            }
            b[i][j] = acc;
        }
    }
    PerturbationVector([b[0][0], b[1][1], b[2][2], b[0][1], b[1][2], b[2][0]])
}

/// Transverse birefringence of a section for light along `axis`.
///
/// With (j, k) the transverse indices, the principal split of the block
/// [[Bjj, Bjk], [Bjk, Bkk]] linearizes to
/// |Delta n| = n0^3/2 * sqrt((Bjj-Bkk)^2 + 4 Bjk^2) and the axis angle is
/// theta = 1/2 atan|2 Bjk / (Bjj - Bkk)|. The signed variant keeps the
/// sign of the ratio so consecutive retarders compose consistently; it is
/// what enters the Jones matrix, while the magnitude is reported.
pub fn principal_birefringence(
    delta_b: &PerturbationVector,
    axis: Axis,
    n0: f64,
    length: f64,
    wavelength: f64,
) -> SectionBirefringence {
    let b = &delta_b.0;
    let (bjj, bkk, bjk) = match axis {
        Axis::X => (b[1], b[2], b[4]),
        Axis::Y => (b[2], b[0], b[5]),
        Axis::Z => (b[0], b[1], b[3]),
    };
    let d = bjj - bkk;
    let c2 = 2.0 * bjk;
    // sqrt(d^2 + (2 bjk)^2) written so that scaling every input by a power
    // of two scales the result exactly.
    let split = (d * d + c2 * c2).sqrt();
    let delta_n = 0.5 * n0.powi(3) * split;
    let (theta, theta_signed) = if d == 0.0 {
        if bjk == 0.0 {
            (0.0, 0.0)
        } else {
            let t = std::f64::consts::FRAC_PI_4;
            (t, if bjk > 0.0 { t } else { -t })
        }
    } else {
        let mag = 0.5 * (c2 / d).abs().atan();
        let sign = if (bjk / d) >= 0.0 { 1.0 } else { -1.0 };
        (mag, sign * mag)
    };
    let delta_m = 2.0 * std::f64::consts::PI * length * delta_n / wavelength;
    SectionBirefringence { delta_n, theta, theta_signed, delta_m, length }
}

/// 2x2 complex matrix, row major.
pub type Mat2c = [[Complex64; 2]; 2];

pub const IDENTITY2: Mat2c = [
    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
    [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
];

pub fn mat2_mul(a: &Mat2c, b: &Mat2c) -> Mat2c {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn mat2_vec(a: &Mat2c, v: &[Complex64; 2]) -> [Complex64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// Input polarization after the polarizer.
pub const INPUT_JONES: [Complex64; 2] = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];

/// Quarter-wave plate of the readout chain.
pub fn qwp() -> Mat2c {
    let c = Complex64::new(S, 0.0);
    let ci = Complex64::new(0.0, S);
    [[c, ci], [ci, c]]
}

/// Analyzer passing the y component.
pub fn analyzer() -> Mat2c {
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    [[zero, zero], [zero, one]]
}

fn rotation(theta: f64) -> Mat2c {
    let c = Complex64::new(theta.cos(), 0.0);
    let s = Complex64::new(theta.sin(), 0.0);
    [[c, s], [-s, c]]
}

/// Retarder with phase `delta` and axes at `theta`:
/// J = R(theta)^-1 * P(delta) * R(theta).
pub fn retarder(theta: f64, delta: f64) -> Mat2c {
    let p = [
        [Complex64::from_polar(1.0, 0.5 * delta), Complex64::new(0.0, 0.0)],
        [Complex64::new(0.0, 0.0), Complex64::from_polar(1.0, -0.5 * delta)],
    ];
    let r = rotation(theta);
    let r_inv = rotation(-theta);
    mat2_mul(&r_inv, &mat2_mul(&p, &r))
}

/// Jones matrix of one path section, built from the signed axis angle.
pub fn section_jones(section: &SectionBirefringence) -> Mat2c {
    retarder(section.theta_signed, section.delta_m)
}

/// Product of the section retarders, entry to exit (later sections
/// multiply on the left).
pub fn jones_chain(sections: &[SectionBirefringence]) -> Mat2c {
    let mut acc = IDENTITY2;
    for s in sections {
        acc = mat2_mul(&section_jones(s), &acc);
    }
    acc
}

/// Output intensity of the chain polarizer -> sections -> QWP -> analyzer
/// for unit input power.
pub fn propagate(sections: &[SectionBirefringence]) -> f64 {
    intensity_through(&jones_chain(sections))
}

/// Intensity for an explicit crystal matrix (used by the signal stage to
/// insert the voltage-driven modulation retarder).
pub fn intensity_through(crystal: &Mat2c) -> f64 {
    let e = mat2_vec(crystal, &INPUT_JONES);
    let e = mat2_vec(&qwp(), &e);
    let e = mat2_vec(&analyzer(), &e);
    e[0].norm_sqr() + e[1].norm_sqr()
}

/// Deviation of the output intensity from the static work point 0.5.
pub fn birefringence_error(sections: &[SectionBirefringence]) -> f64 {
    if sections.iter().all(|s| s.delta_m == 0.0) {
        return 0.0;
    }
    propagate(sections) - 0.5
}
