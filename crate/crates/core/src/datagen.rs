//! Synthetic quasi-static protocols.
//!
//! Each record is a jittered acoustic tone plus intermittent low-frequency
//! burst packets and white noise. Approaching blowout the tone weakens while
//! bursts and noise grow; above the transition the tone keeps strengthening.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{ratio_eq, Label, Protocol, QuasiStaticRecord, TimeSeries};

pub const GRID_90_SLPM: [f64; 11] = [1.0, 1.142, 1.214, 1.285, 1.357, 1.428, 1.5, 1.571, 1.642, 1.714, 1.785];
pub const GRID_70_SLPM: [f64; 11] = [1.0, 1.076, 1.153, 1.23, 1.307, 1.384, 1.461, 1.538, 1.615, 1.692, 1.769];
pub const GRID_75_SLPM: [f64; 12] = [
    1.0, 1.071, 1.143, 1.214, 1.285, 1.357, 1.428, 1.5, 1.571, 1.643, 1.714, 1.785,
];
pub const GRID_80_SLPM: [f64; 11] = [1.0, 1.066, 1.133, 1.2, 1.266, 1.33, 1.4, 1.466, 1.533, 1.6, 1.67];
pub const GRID_85_SLPM: [f64; 12] = GRID_75_SLPM;

/// Annotated onset of healthy operation.
pub const TRANSITION_ONSET: f64 = 1.38;
pub const REFERENCE_TRANSITION: f64 = 1.428;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub name: String,
    pub air_flow_slpm: f64,
    pub sample_rate_hz: f64,
    pub samples_per_record: usize,
    pub base_freq_hz: f64,
    pub phi_grid: Vec<f64>,
    pub transition_ratio: f64,
    /// Burst events per second at blowout.
    pub burst_rate_at_lbo: f64,
    pub noise_floor: f64,
    /// Peak burst amplitude relative to the healthy tone.
    pub burst_amplitude: f64,
    pub burst_freq_hz: f64,
    /// Rise time of the burst envelope `u e^(1-u)`, seconds.
    pub burst_rise_s: f64,
    /// Per-sample innovation of the tone's phase jitter, radians.
    pub jitter_std: f64,
    /// AR(1) coefficient of the phase jitter.
    pub jitter_memory: f64,
    /// Relative change of the jitter innovation per unit of trend; the
    /// jitter grows towards blowout and keeps shrinking above the transition.
    pub jitter_slope: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "90slpm".into(),
            air_flow_slpm: 90.0,
            sample_rate_hz: 2000.0,
            samples_per_record: 20_000,
            base_freq_hz: 120.0,
            phi_grid: GRID_90_SLPM.to_vec(),
            transition_ratio: REFERENCE_TRANSITION,
            burst_rate_at_lbo: 6.0,
            noise_floor: 0.002,
            burst_amplitude: 1.0,
            burst_freq_hz: 6.0,
            burst_rise_s: 0.06,
            jitter_std: 0.12,
            jitter_memory: 0.99,
            jitter_slope: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Reference-style config for one of the built-in air-flow settings.
    pub fn for_air_flow(air_flow_slpm: u32, seed: u64) -> Result<Self> {
        let grid: &[f64] = match air_flow_slpm {
            70 => &GRID_70_SLPM,
            75 => &GRID_75_SLPM,
            80 => &GRID_80_SLPM,
            85 => &GRID_85_SLPM,
            90 => &GRID_90_SLPM,
            other => return Err(Error::ConfigInvalid(format!("no built-in grid for {other} SLPM"))),
        };
        let transition_ratio = if air_flow_slpm == 90 {
            REFERENCE_TRANSITION
        } else {
            first_healthy(grid)
        };
        Ok(Self {
            name: format!("{air_flow_slpm}slpm"),
            air_flow_slpm: air_flow_slpm as f64,
            phi_grid: grid.to_vec(),
            transition_ratio,
            seed,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if self.phi_grid.first().map_or(true, |&r| !ratio_eq(r, 1.0)) {
            return bad("grid must start at 1");
        }
        if self.phi_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("grid must be strictly increasing");
        }
        if self.transition_index().is_none() || ratio_eq(self.transition_ratio, 1.0) {
            return bad("transition ratio must be a grid point above 1");
        }
        let positive = [
            self.air_flow_slpm,
            self.sample_rate_hz,
            self.base_freq_hz,
            self.burst_rate_at_lbo,
            self.burst_freq_hz,
            self.burst_rise_s,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("rates, frequencies and air flow must be positive");
        }
        if self.samples_per_record < 2 {
            return bad("records need at least two samples");
        }
        if !(self.noise_floor >= 0.0 && self.burst_amplitude >= 0.0 && self.jitter_std >= 0.0) {
            return bad("noise floor, burst amplitude and jitter must be non-negative");
        }
        if !(0.0..1.0).contains(&self.jitter_slope) {
            return bad("jitter slope must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.jitter_memory) {
            return bad("jitter memory must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn transition_index(&self) -> Option<usize> {
        self.phi_grid.iter().position(|&r| ratio_eq(r, self.transition_ratio))
    }

    /// Signed distance from the transition in units of the blowout span; 1 at
    /// blowout, 0 at the transition, negative above it.
    pub fn trend(&self, phi_ratio: f64) -> f64 {
        (self.transition_ratio - phi_ratio) / (self.transition_ratio - 1.0)
    }

    /// Blowout severity in [0, 1]; zero from the transition upwards.
    pub fn severity(&self, phi_ratio: f64) -> f64 {
        self.trend(phi_ratio).clamp(0.0, 1.0)
    }

    /// Tone amplitude: halved at blowout, 1 at the transition, and still
    /// growing above it (capped at 1.5).
    pub fn tone_amplitude(&self, phi_ratio: f64) -> f64 {
        1.0 - 0.5 * self.trend(phi_ratio).clamp(-1.0, 1.0)
    }

    /// Phase-jitter innovation at `phi_ratio`.
    pub fn jitter_at(&self, phi_ratio: f64) -> f64 {
        self.jitter_std * (1.0 + self.jitter_slope * self.trend(phi_ratio).clamp(-1.0, 1.0))
    }
}

/// First grid point at or above the annotated onset of healthy operation.
pub fn first_healthy(grid: &[f64]) -> f64 {
    grid.iter()
        .copied()
        .find(|&r| r >= TRANSITION_ONSET)
        .unwrap_or(grid[grid.len() - 1])
}

fn mix(seed: u64, sub_seed: i64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (sub_seed as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D1_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One record at `phi_ratio`. Tone jitter, noise and bursts draw from separate
/// streams of a generator keyed by `(config.seed, sub_seed)`, so records that
/// share a sub-seed share their jitter and noise paths.
pub fn synth_record(config: &SynthConfig, phi_ratio: f64, sub_seed: i64) -> Result<QuasiStaticRecord> {
    config.validate()?;
    if !config.phi_grid.iter().any(|&r| ratio_eq(r, phi_ratio)) {
        return Err(Error::ConfigInvalid(format!(
            "phi ratio {phi_ratio} is not on the grid"
        )));
    }
    let key = mix(config.seed, sub_seed);
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(s);
        rng
    };
    let (mut jitter_rng, mut noise_rng, mut burst_rng) = (stream(1), stream(2), stream(3));

    let n = config.samples_per_record;
    let fs = config.sample_rate_hz;
    let s = config.severity(phi_ratio);
    let amp = config.tone_amplitude(phi_ratio);
    let jitter_std = config.jitter_at(phi_ratio);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut samples = Vec::with_capacity(n);
    let mut jitter = 0.0;
    let phase0 = jitter_rng.gen_range(0.0..TAU);
    for t in 0..n {
        let time = t as f64 / fs;
        samples.push(amp * (TAU * config.base_freq_hz * time + phase0 + jitter).sin());
        jitter = config.jitter_memory * jitter + jitter_std * std_normal.sample(&mut jitter_rng);
    }

    let sigma = config.noise_floor * (1.0 + 2.0 * s);
    for x in samples.iter_mut() {
        *x += sigma * std_normal.sample(&mut noise_rng);
    }

    let duration = n as f64 / fs;
    let rate = s * config.burst_rate_at_lbo * duration;
    if rate > 0.0 {
        let count = Poisson::new(rate).expect("positive rate").sample(&mut burst_rng) as usize;
        let rise = config.burst_rise_s;
        let span = (10.0 * rise * fs).ceil() as usize;
        for _ in 0..count {
            let start = burst_rng.gen_range(0..n);
            let peak = config.burst_amplitude * burst_rng.gen_range(0.5..1.0);
            let sign = if burst_rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let carrier = burst_rng.gen_range(0.0..TAU);
            for (k, x) in samples[start..(start + span).min(n)].iter_mut().enumerate() {
                let dt = k as f64 / fs;
                let u = dt / rise;
                *x += sign * peak * u * (1.0 - u).exp() * (TAU * config.burst_freq_hz * dt + carrier).cos();
            }
        }
    }

    let label = Label::for_ratio(phi_ratio, config.transition_ratio);
    QuasiStaticRecord::new(phi_ratio, TimeSeries::new(samples, fs)?, Some(label))
}

/// One record per grid point. Records at or above the transition use their
/// grid offset from it as sub-seed, so protocols generated with the same seed
/// share the noise paths of healthy records equally far from their
/// transitions. Records below the transition also mix in the air flow.
pub fn synth_protocol(config: &SynthConfig) -> Result<Protocol> {
    config.validate()?;
    let t_idx = config.transition_index().expect("validated") as i64;
    let records = config
        .phi_grid
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let offset = i as i64 - t_idx;
            let sub_seed = if offset >= 0 {
                offset
            } else {
                offset - 1000 * config.air_flow_slpm.round() as i64
            };
            synth_record(config, r, sub_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Protocol::new(
        config.name.clone(),
        config.air_flow_slpm,
        config.transition_ratio,
        records,
    )
}

/// The 90 SLPM reference protocol followed by the 70, 75, 80 and 85 SLPM test
/// protocols, all generated from `base` with their own grids.
pub fn default_protocols(base: &SynthConfig) -> Result<Vec<Protocol>> {
    [90u32, 70, 75, 80, 85]
        .iter()
        .map(|&flow| {
            let grid = SynthConfig::for_air_flow(flow, base.seed)?;
            synth_protocol(&SynthConfig {
                name: grid.name,
                air_flow_slpm: grid.air_flow_slpm,
                phi_grid: grid.phi_grid,
                transition_ratio: grid.transition_ratio,
                ..base.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            samples_per_record: 4000,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn severity_endpoints() {
        let c = SynthConfig::default();
        assert_eq!(c.severity(1.0), 1.0);
        assert_eq!(c.severity(1.428), 0.0);
        assert_eq!(c.severity(1.785), 0.0);
        assert_eq!(c.tone_amplitude(1.0), 0.5);
        assert_eq!(c.tone_amplitude(1.428), 1.0);
        assert!(c.tone_amplitude(1.785) > 1.0);
    }

    #[test]
    fn severity_and_amplitude_are_monotone() {
        let c = SynthConfig::default();
        for w in c.phi_grid.windows(2) {
            assert!(c.severity(w[1]) <= c.severity(w[0]));
            assert!(c.tone_amplitude(w[1]) >= c.tone_amplitude(w[0]));
            assert!(c.jitter_at(w[1]) < c.jitter_at(w[0]));
        }
        assert_eq!(c.jitter_at(c.transition_ratio), c.jitter_std);
    }

    #[test]
    fn records_are_deterministic() {
        let c = small();
        assert_eq!(synth_record(&c, 1.0, 3).unwrap(), synth_record(&c, 1.0, 3).unwrap());
        assert_ne!(synth_record(&c, 1.0, 3).unwrap(), synth_record(&c, 1.0, 4).unwrap());
    }

    #[test]
    fn healthy_record_has_no_bursts() {
        let c = SynthConfig {
            noise_floor: 0.0,
            jitter_std: 0.0,
            ..small()
        };
        let r = synth_record(&c, 1.5, 0).unwrap();
        let peak = r.series.samples().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(peak <= c.tone_amplitude(1.5) + 1e-12);
        let lbo = synth_record(&c, 1.0, 0).unwrap();
        let peak = lbo.series.samples().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(peak > 1.0, "blowout record should carry bursts");
    }

    #[test]
    fn grid_lengths_and_labels() {
        let p = synth_protocol(&small()).unwrap();
        assert_eq!(p.records().len(), 11);
        let c75 = SynthConfig {
            samples_per_record: 500,
            ..SynthConfig::for_air_flow(75, 0).unwrap()
        };
        let p75 = synth_protocol(&c75).unwrap();
        assert_eq!(p75.records().len(), 12);
        for p in [p, p75] {
            for r in p.records() {
                let expect = if r.phi_ratio < p.transition_ratio {
                    Label::Unhealthy
                } else {
                    Label::Healthy
                };
                assert_eq!(r.label, Some(expect));
            }
        }
    }

    #[test]
    fn test_protocol_transitions() {
        let t: Vec<f64> = [70, 75, 80, 85]
            .iter()
            .map(|&f| SynthConfig::for_air_flow(f, 0).unwrap().transition_ratio)
            .collect();
        assert_eq!(t, vec![1.384, 1.428, 1.4, 1.428]);
        assert!(SynthConfig::for_air_flow(60, 0).is_err());
    }

    #[test]
    fn transition_records_match_across_protocols() {
        let base = SynthConfig {
            samples_per_record: 300,
            ..SynthConfig::default()
        };
        let ps = default_protocols(&base).unwrap();
        let reference = ps[0].record_at(ps[0].transition_ratio).unwrap().series.clone();
        for p in &ps[1..] {
            assert_eq!(p.record_at(p.transition_ratio).unwrap().series, reference);
        }
    }

    #[test]
    fn invalid_configs() {
        let c = SynthConfig::default();
        assert!(synth_record(&c, 1.3, 0).is_err());
        assert!(SynthConfig {
            transition_ratio: 1.45,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            phi_grid: vec![1.1, 1.2],
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            sample_rate_hz: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            jitter_slope: 1.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            jitter_memory: 1.0,
            ..c
        }
        .validate()
        .is_err());
    }

    /// Periodogram argmax by direct DFT over the positive frequencies.
    fn dominant_bin(x: &[f64]) -> usize {
        let n = x.len();
        (1..n / 2)
            .map(|k| {
                let w = TAU * k as f64 / n as f64;
                let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                    (re + v * (w * t as f64).cos(), im - v * (w * t as f64).sin())
                });
                (k, re * re + im * im)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn healthy_spectrum_peaks_at_base_tone() {
        let c = small();
        let r = synth_record(&c, 1.571, 2).unwrap();
        let bin_hz = c.sample_rate_hz / c.samples_per_record as f64;
        let peak = dominant_bin(r.series.samples()) as f64 * bin_hz;
        assert!((peak - c.base_freq_hz).abs() <= bin_hz, "peak at {peak} Hz");
    }
}
