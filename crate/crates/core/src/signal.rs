//! Output-waveform synthesis under AC drive, drift extraction by linear
//! least squares, and time-normalized drift statistics.
//!
//! The detector intensity under a drive voltage V is
//! sin^2((pi*V/V_hw + pi/2)/2) = (1 + sin(pi*V/V_hw))/2 at zero stress;
//! the synthesizer realizes the same transfer function as a 45-degree
//! retarder of phase pi*V/V_hw composed with the stress-section chain, so
//! stress drift rides on the modulated signal exactly as in measurement.

use thiserror::Error;

use crate::linalg::solve_dense;
use crate::optics::{intensity_through, jones_chain, mat2_mul, retarder, SectionBirefringence};

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("half-wave voltage must be positive and finite")]
    BadHalfWave,
    #[error("waveform must be uniformly sampled")]
    NonUniform,
    #[error("waveform too short: {got} samples over {periods:.2} drive periods, need >= 4 periods")]
    WindowTooShort { got: usize, periods: f64 },
    #[error("rank-deficient fit design (constant or degenerate window)")]
    RankDeficient,
    #[error("time constants must be positive")]
    NonpositiveTau,
}

/// Uniformly sampled waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    /// Time of the first sample, s.
    pub t0: f64,
    /// Samples per second.
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(t0: f64, sample_rate: f64, samples: Vec<f64>) -> Waveform {
        Waveform { t0, sample_rate, samples }
    }

    /// Build from (time, value) rows, verifying uniform sampling.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Waveform, SignalError> {
        if pairs.len() < 2 {
            return Err(SignalError::NonUniform);
        }
        let dt = pairs[1].0 - pairs[0].0;
        if !(dt > 0.0) {
            return Err(SignalError::NonUniform);
        }
        for w in pairs.windows(2) {
            if ((w[1].0 - w[0].0) - dt).abs() > 1e-6 * dt {
                return Err(SignalError::NonUniform);
            }
        }
        Ok(Waveform {
            t0: pairs[0].0,
            sample_rate: 1.0 / dt,
            samples: pairs.iter().map(|&(_, v)| v).collect(),
        })
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        (self.samples.len().saturating_sub(1)) as f64 / self.sample_rate
    }

    /// Sinusoidal drive voltage amplitude*cos(2 pi f t), sampled over
    /// `duration` seconds.
    pub fn sine_drive(amplitude: f64, freq: f64, sample_rate: f64, duration: f64) -> Waveform {
        let n = (duration * sample_rate).round() as usize;
        let samples = (0..n)
            .map(|k| {
                let t = k as f64 / sample_rate;
                amplitude * (2.0 * std::f64::consts::PI * freq * t).cos()
            })
            .collect();
        Waveform { t0: 0.0, sample_rate, samples }
    }
}

/// Default acquisition window: 8 periods of a 50 Hz drive at 100 kHz.
pub const DEFAULT_DRIVE_FREQ: f64 = 50.0;
pub const DEFAULT_SAMPLE_RATE: f64 = 100e3;
pub const DEFAULT_WINDOW: f64 = 0.16;

/// Detector intensity samples for a drive-voltage waveform over a frozen
/// stress state.
pub fn synthesize(
    sections: &[SectionBirefringence],
    drive: &Waveform,
    half_wave_voltage: f64,
) -> Result<Waveform, SignalError> {
    if !(half_wave_voltage > 0.0) || !half_wave_voltage.is_finite() {
        return Err(SignalError::BadHalfWave);
    }
    let chain = jones_chain(sections);
    let quarter = std::f64::consts::FRAC_PI_4;
    let samples = drive
        .samples
        .iter()
        .map(|&v| {
            let phase = std::f64::consts::PI * v / half_wave_voltage;
            let modulation = retarder(quarter, phase);
            intensity_through(&mat2_mul(&modulation, &chain))
        })
        .collect();
    Ok(Waveform { t0: drive.t0, sample_rate: drive.sample_rate, samples })
}

/// Drive-synchronous sinusoid plus quadratic drift decomposition.
#[derive(Debug, Clone)]
pub struct DriftFit {
    /// Amplitude of the drive-frequency component.
    pub i_ac: f64,
    /// Phase of the cosine component, radians.
    pub phi: f64,
    /// Quadratic drift coefficients of a*t^2 + b*t + c.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Root-mean-square residual of the fit.
    pub residual_rms: f64,
    /// Mean of the fitted drift over the window: the extracted
    /// birefringence error level.
    pub mean_dc: f64,
}

/// Least-squares fit of I_AC*cos(2 pi f t + phi) + a t^2 + b t + c.
///
/// The sinusoid is fitted through its two quadratures, which keeps the
/// problem linear and exact for this model class. Internally time is
/// centered and scaled for conditioning; coefficients are mapped back to
/// the raw time basis.
pub fn fit_drift(w: &Waveform, drive_freq: f64) -> Result<DriftFit, SignalError> {
    let n = w.samples.len();
    let periods = w.duration() * drive_freq;
    if n < 8 || periods < 4.0 - 1e-9 {
        return Err(SignalError::WindowTooShort { got: n, periods });
    }

    let t_mid = w.t0 + 0.5 * w.duration();
    let half_span = 0.5 * w.duration();
    let omega = 2.0 * std::f64::consts::PI * drive_freq;

    // Basis: cos(w tau), sin(w tau), (tau/s)^2, tau/s, 1 with tau = t - t_mid.
    let mut ata = vec![vec![0.0f64; 5]; 5];
    let mut atb = vec![0.0f64; 5];
    for k in 0..n {
        let t = w.time_at(k);
        let tau = t - t_mid;
        let ts = tau / half_span;
        let row = [(omega * tau).cos(), (omega * tau).sin(), ts * ts, ts, 1.0];
        let y = w.samples[k];
        for i in 0..5 {
            for j in 0..5 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * y;
        }
    }
    let coef = solve_dense(ata, atb).ok_or(SignalError::RankDeficient)?;

    let mut residual_sq = 0.0;
    for k in 0..n {
        let t = w.time_at(k);
        let tau = t - t_mid;
        let ts = tau / half_span;
        let fit = coef[0] * (omega * tau).cos()
            + coef[1] * (omega * tau).sin()
            + coef[2] * ts * ts
            + coef[3] * ts
            + coef[4];
        residual_sq += (w.samples[k] - fit).powi(2);
    }
    let residual_rms = (residual_sq / n as f64).sqrt();

    // cos/sin quadratures at centered time -> amplitude and phase at raw time.
    let (qc, qs) = (coef[0], coef[1]);
    let i_ac = (qc * qc + qs * qs).sqrt();
    let mut phi = (-qs).atan2(qc) - omega * t_mid;
    // Fold into (-pi, pi].
    phi = phi.rem_euclid(2.0 * std::f64::consts::PI);
    if phi > std::f64::consts::PI {
        phi -= 2.0 * std::f64::consts::PI;
    }

    // Scaled, centered quadratic back to the raw basis:
    // a2*(tau/s)^2 + a1*(tau/s) + a0 with tau = t - m.
    let (a2, a1, a0) = (coef[2], coef[3], coef[4]);
    let s = half_span;
    let m = t_mid;
    let a = a2 / (s * s);
    let b = a1 / s - 2.0 * a2 * m / (s * s);
    let c = a2 * m * m / (s * s) - a1 * m / s + a0;

    // Mean fitted drift over the sample window.
    let mut mean_dc = 0.0;
    for k in 0..n {
        let t = w.time_at(k);
        mean_dc += a * t * t + b * t + c;
    }
    mean_dc /= n as f64;

    Ok(DriftFit { i_ac, phi, a, b, c, residual_rms, mean_dc })
}

/// Build a model waveform I_AC cos(2 pi f t + phi) + a t^2 + b t + c.
pub fn model_waveform(
    i_ac: f64,
    phi: f64,
    a: f64,
    b: f64,
    c: f64,
    freq: f64,
    sample_rate: f64,
    duration: f64,
) -> Waveform {
    let n = (duration * sample_rate).round() as usize;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / sample_rate;
            i_ac * (2.0 * std::f64::consts::PI * freq * t + phi).cos() + a * t * t + b * t + c
        })
        .collect();
    Waveform { t0: 0.0, sample_rate, samples }
}

/// Scale a drift figure measured over `tau` seconds to the `tau_ref`
/// timescale; random low-frequency drift grows linearly with measurement
/// time, so this makes runs of different durations comparable.
pub fn bias_correct(raw_error: f64, tau: f64, tau_ref: f64) -> Result<f64, SignalError> {
    if !(tau > 0.0) || !(tau_ref > 0.0) {
        return Err(SignalError::NonpositiveTau);
    }
    Ok(raw_error * (tau_ref / tau))
}

/// Bias-instability level of a noise component of amplitude `b_s`
/// observed over `tau` seconds: (b_s^2 / 2 pi) * tau.
pub fn bias_instability(b_s: f64, tau: f64) -> f64 {
    b_s * b_s / (2.0 * std::f64::consts::PI) * tau
}

/// Drift statistics normalized per the 1/f noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasStats {
    pub b_s: f64,
    pub tau: f64,
    pub sigma_bi: f64,
    pub corrected_error: f64,
}

impl BiasStats {
    pub fn new(b_s: f64, tau: f64, raw_drift: f64) -> Result<BiasStats, SignalError> {
        if !(tau > 0.0) {
            return Err(SignalError::NonpositiveTau);
        }
        Ok(BiasStats {
            b_s,
            tau,
            sigma_bi: bias_instability(b_s, tau),
            corrected_error: raw_drift / tau,
        })
    }
}
