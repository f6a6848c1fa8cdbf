//! Synthetic emitter generator: QPSK with root-raised-cosine shaping passed
//! through a chain of transmitter impairments that act as the fingerprint.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EmitterId, IqSignal};
use crate::error::{CashError, Result};
use crate::rng;

/// Hardware impairments of one transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterProfile {
    pub iq_gain_imbalance_db: f64,
    pub iq_phase_imbalance_deg: f64,
    pub dc_offset: [f64; 2],
    pub freq_offset_ppm: f64,
    /// Standard deviation of the Wiener phase increment, radians per sample.
    pub phase_noise_std: f64,
    pub pa_cubic_coeff: f64,
    pub seed: u64,
}

impl EmitterProfile {
    /// A transmitter without impairments.
    pub fn ideal(seed: u64) -> Self {
        Self {
            iq_gain_imbalance_db: 0.0,
            iq_phase_imbalance_deg: 0.0,
            dc_offset: [0.0, 0.0],
            freq_offset_ppm: 0.0,
            phase_noise_std: 0.0,
            pa_cubic_coeff: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let values = [
            self.iq_gain_imbalance_db,
            self.iq_phase_imbalance_deg,
            self.dc_offset[0],
            self.dc_offset[1],
            self.freq_offset_ppm,
            self.phase_noise_std,
            self.pa_cubic_coeff,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CashError::InvalidParameter("non-finite emitter profile".into()));
        }
        if self.pa_cubic_coeff.abs() >= 1.0 {
            return Err(CashError::InvalidParameter(format!(
                "PA cubic coefficient {} must have magnitude < 1",
                self.pa_cubic_coeff
            )));
        }
        if self.phase_noise_std < 0.0 {
            return Err(CashError::InvalidParameter("negative phase noise".into()));
        }
        Ok(())
    }
}

/// Radio constants shared by every simulated capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatorParams {
    pub sample_rate_hz: f64,
    pub carrier_hz: f64,
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    /// Filter span in symbols.
    pub span: usize,
}

impl Default for SimulatorParams {
    fn default() -> Self {
        Self { sample_rate_hz: 2e6, carrier_hz: 1.09e9, samples_per_symbol: 4, rolloff: 0.35, span: 8 }
    }
}

impl SimulatorParams {
    /// Frequency offset in cycles per sample for a given ppm error.
    pub fn cycles_per_sample(&self, ppm: f64) -> f64 {
        ppm * 1e-6 * self.carrier_hz / self.sample_rate_hz
    }
}

/// Root-raised-cosine taps scaled so unit-power symbols give unit-power output.
fn rrc_taps(sps: usize, rolloff: f64, span: usize) -> Vec<f64> {
    let n = span * sps + 1;
    let half = (n / 2) as f64;
    let b = rolloff;
    let mut taps: Vec<f64> = (0..n)
        .map(|k| {
            let t = (k as f64 - half) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 - b + 4.0 * b / PI
            } else if b > 0.0 && ((4.0 * b * t).abs() - 1.0).abs() < 1e-9 {
                (b / 2f64.sqrt())
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                ((PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos())
                    / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|v| v * v).sum();
    let scale = (sps as f64 / energy).sqrt();
    for t in &mut taps {
        *t *= scale;
    }
    taps
}

/// The unimpaired modulated payload (random QPSK symbols, RRC shaping and
/// a random carrier phase) for a given profile seed and capture seed.
pub fn clean_payload(params: &SimulatorParams, length: usize, profile_seed: u64, seed: u64) -> Vec<Complex64> {
    let mut r = rng::indexed_stream(profile_seed, "payload", seed);
    let sps = params.samples_per_symbol;
    let taps = rrc_taps(sps, params.rolloff, params.span);
    let nsym = (length + taps.len()).div_ceil(sps) + 1;
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let symbols: Vec<Complex64> = (0..nsym)
        .map(|_| {
            let re = if r.random::<bool>() { a } else { -a };
            let im = if r.random::<bool>() { a } else { -a };
            Complex64::new(re, im)
        })
        .collect();
    let carrier = Complex64::from_polar(1.0, r.random_range(0.0..2.0 * PI));
    let delay = taps.len() - 1;
    (0..length)
        .map(|n| {
            let m = n + delay;
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &h) in taps.iter().enumerate() {
                let idx = m - k;
                if idx % sps == 0 {
                    acc += symbols[idx / sps] * h;
                }
            }
            acc * carrier
        })
        .collect()
}

/// Simulates one capture with the default radio constants.
/// `snr_db = f64::INFINITY` disables the additive noise.
pub fn simulate_emitter_signal(profile: &EmitterProfile, length: usize, snr_db: f64, seed: u64) -> Result<IqSignal> {
    simulate_with(&SimulatorParams::default(), profile, length, snr_db, seed, None)
}

pub fn simulate_with(
    params: &SimulatorParams,
    profile: &EmitterProfile,
    length: usize,
    snr_db: f64,
    seed: u64,
    emitter_id: Option<EmitterId>,
) -> Result<IqSignal> {
    profile.validate()?;
    if length == 0 {
        return Err(CashError::InvalidParameter("signal length must be positive".into()));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(CashError::InvalidParameter(format!("snr {snr_db} dB")));
    }
    let mut x = clean_payload(params, length, profile.seed, seed);

    // IQ imbalance: the Q branch sees gain g and a skew of phi.
    let g = 10f64.powf(profile.iq_gain_imbalance_db / 20.0);
    let phi = profile.iq_phase_imbalance_deg.to_radians();
    let (sphi, cphi) = phi.sin_cos();
    let dc = Complex64::new(profile.dc_offset[0], profile.dc_offset[1]);
    for s in &mut x {
        let (i, q) = (s.re, s.im);
        *s = Complex64::new(i, g * (q * cphi - i * sphi)) + dc;
        // cubic PA nonlinearity
        *s += *s * s.norm_sqr() * profile.pa_cubic_coeff;
    }

    let cps = params.cycles_per_sample(profile.freq_offset_ppm);
    for (n, s) in x.iter_mut().enumerate() {
        *s *= Complex64::from_polar(1.0, 2.0 * PI * cps * n as f64);
    }

    if profile.phase_noise_std > 0.0 {
        let mut r = rng::indexed_stream(profile.seed, "phase-noise", seed);
        let step = Normal::new(0.0, profile.phase_noise_std).expect("validated std");
        let mut phase = 0.0;
        for s in &mut x {
            phase += step.sample(&mut r);
            *s *= Complex64::from_polar(1.0, phase);
        }
    }

    if snr_db.is_finite() {
        let power = x.iter().map(|s| s.norm_sqr()).sum::<f64>() / length as f64;
        let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
        if sigma > 0.0 {
            let mut r = rng::indexed_stream(profile.seed, "awgn", seed);
            let noise = Normal::new(0.0, sigma).expect("finite sigma");
            for s in &mut x {
                *s += Complex64::new(noise.sample(&mut r), noise.sample(&mut r));
            }
        }
    }

    IqSignal::new(x, emitter_id, params.sample_rate_hz)
}

/// Closed intervals from which [`profile_bank_in`] draws impairment levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRanges {
    pub gain_db: [f64; 2],
    pub phase_deg: [f64; 2],
    pub dc_magnitude: [f64; 2],
    pub freq_offset_ppm: [f64; 2],
    pub phase_noise_std: [f64; 2],
    pub pa_cubic_coeff: [f64; 2],
}

impl Default for ProfileRanges {
    fn default() -> Self {
        Self {
            gain_db: [-1.5, 1.5],
            phase_deg: [-12.0, 12.0],
            dc_magnitude: [0.0, 0.2],
            freq_offset_ppm: [-6.0, 6.0],
            phase_noise_std: [0.001, 0.01],
            pa_cubic_coeff: [-0.15, 0.0],
        }
    }
}

impl ProfileRanges {
    /// Wider gain, phase, DC and PA spreads with a tight oscillator, so
    /// emitters differ mostly in impairments the front end preserves.
    pub fn separated() -> Self {
        Self {
            gain_db: [-3.0, 3.0],
            phase_deg: [-25.0, 25.0],
            dc_magnitude: [0.0, 0.4],
            freq_offset_ppm: [-1.0, 1.0],
            phase_noise_std: [0.001, 0.005],
            pa_cubic_coeff: [-0.3, 0.0],
        }
    }
}

/// [`profile_bank_in`] with the default ranges.
pub fn profile_bank(count: usize, seed: u64) -> Vec<EmitterProfile> {
    profile_bank_in(count, &ProfileRanges::default(), seed)
}

/// `count` profiles whose impairments are spread across their ranges: each
/// parameter takes evenly spaced levels, shuffled independently, so no two
/// emitters share a level of any parameter.
pub fn profile_bank_in(count: usize, ranges: &ProfileRanges, seed: u64) -> Vec<EmitterProfile> {
    let mut r = rng::stream(seed, "profile-bank");
    let mut levels = |[lo, hi]: [f64; 2]| -> Vec<f64> {
        let mut v: Vec<f64> = (0..count)
            .map(|k| {
                let frac = if count > 1 { k as f64 / (count - 1) as f64 } else { 0.5 };
                lo + (hi - lo) * frac
            })
            .collect();
        v.shuffle(&mut r);
        v
    };
    let gain = levels(ranges.gain_db);
    let phase = levels(ranges.phase_deg);
    let dc_mag = levels(ranges.dc_magnitude);
    let ppm = levels(ranges.freq_offset_ppm);
    let pn = levels(ranges.phase_noise_std);
    let pa = levels(ranges.pa_cubic_coeff);
    (0..count)
        .map(|k| {
            let angle = r.random_range(0.0..2.0 * PI);
            EmitterProfile {
                iq_gain_imbalance_db: gain[k],
                iq_phase_imbalance_deg: phase[k],
                dc_offset: [dc_mag[k] * angle.cos(), dc_mag[k] * angle.sin()],
                freq_offset_ppm: ppm[k],
                phase_noise_std: pn[k],
                pa_cubic_coeff: pa[k],
                seed: rng::derive_seed(seed, &format!("emitter-{k}")),
            }
        })
        .collect()
}
