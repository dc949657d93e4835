//! Synthetic speech-like test signals.
//!
//! A source-filter toy: a glottal harmonic series shaped by three formant
//! resonances, alternating between vowel, fricative and silence segments
//! with smoothed transitions. Different voices shift the pitch and scale
//! the formants.

#![allow(dead_code)]

pub mod grad;

use std::f64::consts::PI;
use std::path::Path;

use fragmentvc::audio::{write_wav, Waveform, SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct Voice {
    pub f0: f64,
    pub formant_scale: f64,
}

pub const VOICES: [Voice; 3] = [
    Voice { f0: 110.0, formant_scale: 1.0 },
    Voice { f0: 210.0, formant_scale: 1.17 },
    Voice { f0: 150.0, formant_scale: 1.08 },
];

const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
    [570.0, 840.0, 2410.0],
];

#[derive(Clone, Copy)]
enum Segment {
    Vowel([f64; 3]),
    Fricative,
    Silence,
}

fn resonance(f: f64, centre: f64, bandwidth: f64) -> f64 {
    let x = (f - centre) / bandwidth;
    1.0 / (1.0 + x * x)
}

/// `seconds` of audio for `voice`; the phone sequence is drawn from `seed`.
pub fn synth_utterance(voice: Voice, seconds: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let sr = SAMPLE_RATE as f64;

    let mut plan = Vec::new();
    let mut t = 0;
    while t < n {
        let len = (rng.random_range(0.08..0.25) * sr) as usize;
        let seg = match rng.random_range(0..10) {
            0 => Segment::Silence,
            1 | 2 => Segment::Fricative,
            _ => Segment::Vowel(VOWELS[rng.random_range(0..VOWELS.len())]),
        };
        let pitch = rng.random_range(0.85..1.2);
        plan.push((t, seg, pitch));
        t += len;
    }

    let smooth = 1.0 - (-1.0 / (0.012 * sr)).exp();
    let mut formants = VOWELS[0];
    let mut voiced_amp = 0.0;
    let mut noise_amp = 0.0;
    let mut pitch = 1.0;
    let mut phase = 0.0f64;
    let mut prev_noise = 0.0;
    let mut seg_idx = 0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        while seg_idx + 1 < plan.len() && plan[seg_idx + 1].0 <= i {
            seg_idx += 1;
        }
        let (_, seg, target_pitch) = plan[seg_idx];
        let (target_f, tv, tn) = match seg {
            Segment::Vowel(f) => (f, 1.0, 0.0),
            Segment::Fricative => (formants, 0.0, 1.0),
            Segment::Silence => (formants, 0.0, 0.0),
        };
        for k in 0..3 {
            formants[k] += smooth * (target_f[k] - formants[k]);
        }
        voiced_amp += smooth * (tv - voiced_amp);
        noise_amp += smooth * (tn - noise_amp);
        pitch += smooth * (target_pitch - pitch);

        let f0 = voice.f0 * pitch * (1.0 + 0.03 * (2.0 * PI * 4.0 * i as f64 / sr).sin());
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI * 64.0);
        let mut v = 0.0;
        let n_harm = (7600.0 / f0) as usize;
        for h in 1..=n_harm {
            let f = h as f64 * f0;
            let amp: f64 = formants
                .iter()
                .enumerate()
                .map(|(k, &c)| resonance(f, c * voice.formant_scale, 80.0 + 40.0 * k as f64) / (k + 1) as f64)
                .sum();
            v += amp * (h as f64 * phase).sin() / (h as f64).sqrt();
        }
        let white: f64 = rng.random_range(-1.0..1.0);
        let hiss = white - prev_noise;
        prev_noise = white;
        let s = 0.12 * voiced_amp * v + 0.08 * noise_amp * hiss + 1e-4 * white;
        out.push(s.clamp(-1.0, 1.0) as f32);
    }
    Waveform::new(out)
}

pub fn write_utterance(path: &Path, wave: &Waveform) {
    write_wav(path, wave).expect("write synthetic wav");
}
