//! Synthetic ordinal EEG-like corpus.
//!
//! Score `k` on a label dimension drives an oscillation on that dimension's
//! channels whose frequency is `base + (k - 1)·step` and whose amplitude grows
//! with `k`. A fraction of that amplitude leaks into the neighbouring scores'
//! frequencies, so adjacent scores look more alike than distant ones.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{save_dataset, DataError, Dataset, Result, Signal, TrialRecord};
use crate::graph::DREAMER_CHANNELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub subjects: usize,
    pub trials_per_subject: usize,
    pub channels: Vec<String>,
    pub sample_rate_hz: u32,
    pub trial_seconds: f64,
    pub baseline_seconds: f64,
    pub num_classes: usize,
    pub valence_channels: Vec<String>,
    pub arousal_channels: Vec<String>,
    pub valence_base_hz: f64,
    pub arousal_base_hz: f64,
    pub freq_step_hz: f64,
    /// Amplitude of score 1, in units of the noise standard deviation.
    pub amplitude: f64,
    /// Relative amplitude increase per score step.
    pub amplitude_step: f64,
    /// Fraction of the amplitude placed on each neighbouring score frequency.
    pub leakage: f64,
    pub noise_std: f64,
    /// Depth of the slow amplitude envelope, in `[0, 1)`.
    pub envelope_depth: f64,
    pub envelope_hz: f64,
    /// Log-normal spread of the per-subject signal gain.
    pub subject_gain_spread: f64,
    /// Probability that a subject's rating moves one step off the trial's
    /// nominal score.
    pub rating_jitter: f64,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects: 23,
            trials_per_subject: 18,
            channels: names(&DREAMER_CHANNELS),
            sample_rate_hz: 128,
            trial_seconds: 60.0,
            baseline_seconds: 10.0,
            num_classes: 5,
            valence_channels: names(&["AF3", "F7", "F3", "FC5"]),
            arousal_channels: names(&["FC6", "F4", "F8", "AF4"]),
            valence_base_hz: 4.0,
            arousal_base_hz: 6.0,
            freq_step_hz: 4.0,
            amplitude: 0.5,
            amplitude_step: 0.25,
            leakage: 0.35,
            noise_std: 1.0,
            envelope_depth: 0.4,
            envelope_hz: 0.1,
            subject_gain_spread: 0.15,
            rating_jitter: 0.2,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::Validation(m));
        if self.subjects == 0 || self.trials_per_subject == 0 {
            return bad("at least one subject and one trial are required".into());
        }
        if self.channels.is_empty() || self.sample_rate_hz == 0 {
            return bad("channels and sample rate must be non-empty".into());
        }
        if !(self.trial_seconds > 0.0) || !(self.baseline_seconds > 0.0) {
            return bad("trial and baseline durations must be positive".into());
        }
        if !(2..=5).contains(&self.num_classes) {
            return bad(format!("num_classes {} outside 2..=5", self.num_classes));
        }
        for c in self.valence_channels.iter().chain(&self.arousal_channels) {
            if !self.channels.contains(c) {
                return bad(format!("class channel {c} is not in the channel list"));
            }
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        let top = self.valence_base_hz.max(self.arousal_base_hz)
            + self.num_classes as f64 * self.freq_step_hz;
        if top >= nyquist || self.valence_base_hz <= 0.0 || self.arousal_base_hz <= 0.0 {
            return bad(format!(
                "class frequencies must lie in (0, {nyquist}) Hz, highest is {top}"
            ));
        }
        if self.noise_std < 0.0
            || self.amplitude < 0.0
            || self.leakage < 0.0
            || !(0.0..1.0).contains(&self.envelope_depth)
            || !(0.0..=1.0).contains(&self.rating_jitter)
            || self.subject_gain_spread < 0.0
        {
            return bad("amplitudes, noise and probabilities out of range".into());
        }
        Ok(())
    }

    /// Nominal score of trial `t` (1-based) on a label dimension.
    pub fn nominal_score(&self, dimension: &str, trial: u32) -> usize {
        let k = self.num_classes as u32;
        let i = trial - 1;
        let s = match dimension {
            "valence" => i % k,
            _ => (i * 3 + 1) % k,
        };
        s as usize + 1
    }

    fn class_frequency(&self, base: f64, score: usize) -> f64 {
        base + (score as f64 - 1.0) * self.freq_step_hz
    }

    fn samples(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate_hz as f64).round() as usize
    }
}

fn trial_rng(seed: u64, subject: usize, trial: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((subject as u64) << 32) | u64::from(trial));
    rng
}

/// Builds the corpus in memory.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| DataError::Validation(e.to_string()))?;
    let gain_dist = Normal::new(0.0, spec.subject_gain_spread.max(f64::MIN_POSITIVE))
        .map_err(|e| DataError::Validation(e.to_string()))?;
    let rate = spec.sample_rate_hz as f64;
    let n = spec.samples(spec.trial_seconds);
    let nb = spec.samples(spec.baseline_seconds);
    let c = spec.channels.len();
    let dims = [
        ("valence", &spec.valence_channels, spec.valence_base_hz),
        ("arousal", &spec.arousal_channels, spec.arousal_base_hz),
    ];
    let mut trials = Vec::with_capacity(spec.subjects * spec.trials_per_subject);
    for s in 0..spec.subjects {
        let mut subject_rng = trial_rng(seed, s, 0);
        let gain = if spec.subject_gain_spread > 0.0 {
            gain_dist.sample(&mut subject_rng).exp()
        } else {
            1.0
        };
        for t in 1..=spec.trials_per_subject as u32 {
            let mut rng = trial_rng(seed, s, t);
            let draw_noise = |rng: &mut ChaCha8Rng| {
                if spec.noise_std > 0.0 {
                    noise.sample(rng)
                } else {
                    0.0
                }
            };
            let mut labels = BTreeMap::new();
            let mut data: Vec<f64> = Vec::with_capacity(c * n);
            for _ in 0..c * n {
                data.push(draw_noise(&mut rng));
            }
            for (dim, channels, base) in dims {
                let mut score = spec.nominal_score(dim, t);
                if rng.random::<f64>() < spec.rating_jitter {
                    score = if rng.random_bool(0.5) {
                        (score + 1).min(spec.num_classes)
                    } else {
                        score.saturating_sub(1).max(1)
                    };
                }
                labels.insert(dim.to_string(), score);
                let amp = gain * spec.amplitude * (1.0 + spec.amplitude_step * (score as f64 - 1.0));
                let mut tones = vec![(spec.class_frequency(base, score), amp)];
                for neighbour in [score.wrapping_sub(1), score + 1] {
                    if (1..=spec.num_classes).contains(&neighbour) {
                        tones.push((spec.class_frequency(base, neighbour), amp * spec.leakage));
                    }
                }
                for name in channels {
                    let ch = spec.channels.iter().position(|x| x == name).expect("validated");
                    let env_phase = rng.random_range(0.0..2.0 * PI);
                    let phases: Vec<f64> = tones.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                    let row = &mut data[ch * n..(ch + 1) * n];
                    for (i, v) in row.iter_mut().enumerate() {
                        let time = i as f64 / rate;
                        let env = 1.0
                            + spec.envelope_depth * (2.0 * PI * spec.envelope_hz * time + env_phase).sin();
                        let wave: f64 = tones
                            .iter()
                            .zip(&phases)
                            .map(|(&(f, a), &p)| a * (2.0 * PI * f * time + p).sin())
                            .sum();
                        *v += env * wave;
                    }
                }
            }
            let baseline: Vec<f64> = (0..c * nb).map(|_| draw_noise(&mut rng)).collect();
            let baseline = if spec.noise_std > 0.0 {
                baseline
            } else {
                // keep the baseline normalisable when noise is disabled
                (0..c * nb).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()
            };
            trials.push(TrialRecord {
                subject_id: format!("S{:02}", s + 1),
                trial_id: t,
                signal: Signal::new(c, n, data)?,
                baseline: Signal::new(c, nb, baseline)?,
                sample_rate_hz: spec.sample_rate_hz,
                labels,
            });
        }
    }
    Ok(Dataset {
        channels: spec.channels.clone(),
        sample_rate_hz: spec.sample_rate_hz,
        trials,
    })
}

/// Generates the corpus and writes it to `dir`.
pub fn synth_generate(spec: &SynthSpec, seed: u64, dir: &Path) -> Result<Dataset> {
    let ds = synth_dataset(spec, seed)?;
    save_dataset(&ds, dir)?;
    Ok(ds)
}

/// Power of each channel at each frequency (single-bin DFT), averaged over
/// the given channels.
pub fn bandpower_features(channels: &[&[f64]], rate: f64, freqs: &[f64]) -> Vec<f64> {
    freqs
        .iter()
        .map(|&f| {
            let total: f64 = channels
                .iter()
                .map(|x| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, v) in x.iter().enumerate() {
                        let w = 2.0 * PI * f * i as f64 / rate;
                        re += v * w.cos();
                        im -= v * w.sin();
                    }
                    (re * re + im * im) / (x.len() as f64).powi(2)
                })
                .sum();
            total / channels.len() as f64
        })
        .collect()
}
