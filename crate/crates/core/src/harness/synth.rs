//! Pseudo-speech: glottal pulse trains through time-varying formant
//! resonators, fricative noise bursts and pauses. Speakers differ in pitch,
//! vocal-tract scale, breathiness and spectral tilt; phrases are fixed unit
//! sequences shared by all speakers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Formant targets (Hz) of a small vowel inventory.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];
const BANDWIDTHS: [f64; 3] = [70.0, 100.0, 140.0];
/// Samples between resonator coefficient updates.
const CONTROL_STEP: usize = 32;
const EDGE_SILENCE_S: f64 = 0.15;
const PEAK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub f0_hz: f64,
    /// Multiplies all formant frequencies (vocal-tract length).
    pub formant_scale: f64,
    /// Aspiration noise relative to the glottal source.
    pub breathiness: f64,
    /// Pole of the one-pole glottal shaping filter.
    pub tilt: f64,
}

impl Voice {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            f0_hz: rng.random_range(95.0..230.0),
            formant_scale: rng.random_range(0.85..1.18),
            breathiness: rng.random_range(0.02..0.12),
            tilt: rng.random_range(0.88..0.97),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Unit {
    Vowel { formants: [f64; 3], dur_s: f64 },
    Fricative { center_hz: f64, dur_s: f64 },
    Pause { dur_s: f64 },
}

impl Unit {
    fn duration(&self) -> f64 {
        match *self {
            Unit::Vowel { dur_s, .. } | Unit::Fricative { dur_s, .. } | Unit::Pause { dur_s } => dur_s,
        }
    }
}

/// A fixed unit sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phrase {
    pub units: Vec<Unit>,
}

impl Phrase {
    pub fn random(seed: u64, syllables: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut units = Vec::new();
        for s in 0..syllables {
            if rng.random::<f64>() < 0.4 {
                units.push(Unit::Fricative {
                    center_hz: rng.random_range(3000.0..6500.0),
                    dur_s: rng.random_range(0.05..0.1),
                });
            }
            units.push(Unit::Vowel {
                formants: VOWELS[rng.random_range(0..VOWELS.len())],
                dur_s: rng.random_range(0.09..0.2),
            });
            if s + 1 < syllables && rng.random::<f64>() < 0.25 {
                units.push(Unit::Pause {
                    dur_s: rng.random_range(0.03..0.08),
                });
            }
        }
        Self { units }
    }

    pub fn duration(&self) -> f64 {
        self.units.iter().map(Unit::duration).sum()
    }
}

/// Digital resonator with unit gain at DC.
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tune(&mut self, freq: f64, bw: f64, rate: f64) {
        let r = (-std::f64::consts::PI * bw / rate).exp();
        self.b = 2.0 * r * (2.0 * std::f64::consts::PI * freq / rate).cos();
        self.c = -r * r;
        self.a = 1.0 - self.b - self.c;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders one utterance. `session_seed` drives pitch drift, tempo, jitter
/// and noise, so distinct sessions of a speaker and phrase differ.
pub fn synthesize(voice: &Voice, phrase: &Phrase, rate: u32, session_seed: u64) -> Result<Waveform> {
    if phrase.units.is_empty() {
        return Err(Error::Data("phrase has no units".into()));
    }
    let fs = rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(session_seed);
    let tempo: f64 = rng.random_range(0.9..1.1);
    let f0_shift: f64 = rng.random_range(0.93..1.07);
    let edge = (EDGE_SILENCE_S * fs) as usize;

    // per-sample targets, linearly interpolated between unit centres
    let lens: Vec<usize> = phrase
        .units
        .iter()
        .map(|u| ((u.duration() * tempo * fs) as usize).max(CONTROL_STEP))
        .collect();
    let body: usize = lens.iter().sum();
    let total = body + 2 * edge;
    let mut x = vec![0.0; total];

    let mut glottal_phase = 0.0;
    let mut glottal_state = 0.0;
    let mut res = [Resonator::new(), Resonator::new(), Resonator::new()];
    let mut fric = Resonator::new();
    let mut prev_formants = match phrase.units.iter().find_map(|u| match u {
        Unit::Vowel { formants, .. } => Some(*formants),
        _ => None,
    }) {
        Some(f) => f,
        None => VOWELS[0],
    };
    let mut pos = edge;
    for (unit, &len) in phrase.units.iter().zip(&lens) {
        let ramp = (0.015 * fs) as usize;
        for n in 0..len {
            let env = {
                let d = n.min(len - 1 - n);
                if d < ramp {
                    0.5 - 0.5 * (std::f64::consts::PI * d as f64 / ramp as f64).cos()
                } else {
                    1.0
                }
            };
            let noise: f64 = StandardNormal.sample(&mut rng);
            let s = match *unit {
                Unit::Vowel { formants, .. } => {
                    if n % CONTROL_STEP == 0 {
                        let glide = (n as f64 / (0.4 * len as f64)).min(1.0);
                        for (k, r) in res.iter_mut().enumerate() {
                            let f = prev_formants[k] + glide * (formants[k] - prev_formants[k]);
                            r.tune(f * voice.formant_scale, BANDWIDTHS[k], fs);
                        }
                    }
                    let progress = (pos + n - edge) as f64 / body as f64;
                    let f0 = voice.f0_hz * f0_shift * (1.0 + 0.08 * (1.0 - progress))
                        * (1.0 + 0.004 * noise);
                    glottal_phase += f0 / fs;
                    let pulse = if glottal_phase >= 1.0 {
                        glottal_phase -= 1.0;
                        1.0
                    } else {
                        0.0
                    };
                    glottal_state = voice.tilt * glottal_state + pulse;
                    let src = glottal_state + voice.breathiness * noise;
                    let mut y = src;
                    for r in &mut res {
                        y = r.step(y);
                    }
                    y
                }
                Unit::Fricative { center_hz, .. } => {
                    if n == 0 {
                        fric.tune((center_hz * voice.formant_scale).min(0.45 * fs), 1200.0, fs);
                    }
                    0.25 * fric.step(noise)
                }
                Unit::Pause { .. } => 0.0,
            };
            x[pos + n] = env * s;
        }
        if let Unit::Vowel { formants, .. } = *unit {
            prev_formants = formants;
        }
        pos += len;
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Numeric("synthesized utterance has no energy".into()));
    }
    let gain = PEAK / peak * rng.random_range(0.7..1.0);
    for v in &mut x {
        let floor: f64 = StandardNormal.sample(&mut rng);
        *v = *v * gain + 1e-4 * floor;
    }
    Waveform::new(x, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_session_dependent() {
        let v = Voice::random(1);
        let p = Phrase::random(2, 5);
        let a = synthesize(&v, &p, 16000, 3).unwrap();
        assert_eq!(a, synthesize(&v, &p, 16000, 3).unwrap());
        assert_ne!(a, synthesize(&v, &p, 16000, 4).unwrap());
        let peak = a.samples().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(peak <= PEAK + 1e-3 && peak > 0.3);
        assert!(a.duration_secs() > 0.5);
    }

    #[test]
    fn edges_are_quiet() {
        let w = synthesize(&Voice::random(5), &Phrase::random(6, 4), 16000, 7).unwrap();
        let edge = (EDGE_SILENCE_S * 16000.0) as usize;
        let s = w.samples();
        let e_edge = s[..edge].iter().map(|x| x * x).sum::<f64>() / edge as f64;
        let e_all = w.power();
        assert!(e_edge < 1e-4 * e_all);
    }
}
