//! Synthetic "pseudo-action" motion: sums of integer-bin sinusoids per
//! channel, so every spectrum is known in closed form.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{write_sequence_file, DatasetManifest, ManifestEntry, PoseSequence, Split, DEFAULT_FPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    /// Cycles per sequence length.
    pub bin: usize,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub offset: f64,
    pub harmonics: Vec<Harmonic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthActionSpec {
    pub frames: usize,
    pub channels: Vec<ChannelSpec>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthActionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(m));
        if self.frames < 2 {
            return bad(format!("need at least 2 frames, got {}", self.frames));
        }
        if self.channels.is_empty() {
            return bad("no channels".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std {} must be non-negative", self.noise_std));
        }
        for (j, c) in self.channels.iter().enumerate() {
            if !c.offset.is_finite() {
                return bad(format!("channel {j}: offset is not finite"));
            }
            for h in &c.harmonics {
                if h.bin < 1 || h.bin > self.frames / 2 {
                    return bad(format!("channel {j}: bin {} outside 1..={}", h.bin, self.frames / 2));
                }
                if !(h.amplitude >= 0.0 && h.amplitude.is_finite() && h.phase.is_finite()) {
                    return bad(format!("channel {j}: bad amplitude or phase"));
                }
            }
        }
        Ok(())
    }
}

/// `x_j[t] = offset_j + Σ a·sin(2π f t / T + φ) + noise`.
pub fn generate_action(spec: &SynthActionSpec) -> Result<PoseSequence> {
    spec.validate()?;
    let t_len = spec.frames;
    let mut frames = Array2::zeros((t_len, spec.channels.len()));
    for (j, c) in spec.channels.iter().enumerate() {
        for t in 0..t_len {
            frames[[t, j]] = c.offset
                + c.harmonics
                    .iter()
                    .map(|h| {
                        // reduce f·t mod T first so the argument stays exact
                        let k = (h.bin * t) % t_len;
                        h.amplitude * (2.0 * PI * k as f64 / t_len as f64 + h.phase).sin()
                    })
                    .sum::<f64>();
        }
    }
    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::BadSpec(e.to_string()))?;
        frames.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    PoseSequence::new(frames, DEFAULT_FPS)
}

/// Normalized one-sided power spectrum of each noise-free channel, bins
/// `0..=T/2` with the DC bin empty.
///
/// Harmonics sharing a bin add as phasors; a sinusoid at the Nyquist bin
/// only keeps its `sin φ` component.
pub fn analytic_spectrum(spec: &SynthActionSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if spec.noise_std != 0.0 {
        return Err(Error::NoiseNotZero);
    }
    let n = spec.frames;
    Ok(spec
        .channels
        .iter()
        .map(|c| {
            let mut re = vec![0.0; n / 2 + 1];
            let mut im = vec![0.0; n / 2 + 1];
            for h in &c.harmonics {
                if n % 2 == 0 && h.bin == n / 2 {
                    re[h.bin] += h.amplitude * h.phase.sin();
                } else {
                    // a·sin(θ + φ) contributes (a/2)·(sin φ − i cos φ) per unit length
                    re[h.bin] += 0.5 * h.amplitude * h.phase.sin();
                    im[h.bin] -= 0.5 * h.amplitude * h.phase.cos();
                }
            }
            let power: Vec<f64> = re.iter().zip(&im).map(|(a, b)| a * a + b * b).collect();
            crate::metrics::normalize_spectrum(&power)
        })
        .collect())
}

/// Shape of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetTemplate {
    pub frames: usize,
    pub channels: usize,
    pub harmonics_per_channel: usize,
    /// Highest bin any action may use.
    pub max_bin: usize,
    pub min_amplitude: f64,
    pub max_amplitude: f64,
    /// Offsets are drawn from `[-max_offset, max_offset]`.
    pub max_offset: f64,
    pub noise_std: f64,
    pub fps: f64,
}

impl Default for DatasetTemplate {
    fn default() -> Self {
        Self {
            frames: 256,
            channels: 54,
            harmonics_per_channel: 2,
            max_bin: 16,
            min_amplitude: 0.1,
            max_amplitude: 0.6,
            max_offset: 0.5,
            noise_std: 0.005,
            fps: DEFAULT_FPS,
        }
    }
}

/// Bins reserved for `action`: every `n_actions`-th bin starting at
/// `action + 1`, so different actions never share a bin.
pub fn action_bins(action: usize, n_actions: usize, max_bin: usize) -> Vec<usize> {
    (1..=max_bin).filter(|b| (b - 1) % n_actions == action).collect()
}

/// Harmonic signature of one pseudo-action: fixed bins, amplitudes and
/// offsets per channel. Phases are redrawn per sequence.
pub fn action_signature<R: Rng + ?Sized>(
    template: &DatasetTemplate,
    action: usize,
    n_actions: usize,
    rng: &mut R,
) -> Result<Vec<ChannelSpec>> {
    let pool = action_bins(action, n_actions, template.max_bin.min(template.frames / 2));
    if pool.is_empty() {
        return Err(Error::BadSpec(format!(
            "no bins left for action {action} below bin {}",
            template.max_bin
        )));
    }
    let per = template.harmonics_per_channel.min(pool.len());
    Ok((0..template.channels)
        .map(|_| {
            let mut bins = pool.clone();
            // partial shuffle: the first `per` entries become the picks
            for i in 0..per {
                let k = rng.gen_range(i..bins.len());
                bins.swap(i, k);
            }
            let mut harmonics: Vec<Harmonic> = bins[..per]
                .iter()
                .map(|&bin| Harmonic {
                    bin,
                    amplitude: rng.gen_range(template.min_amplitude..=template.max_amplitude),
                    phase: 0.0,
                })
                .collect();
            harmonics.sort_by_key(|h| h.bin);
            ChannelSpec {
                offset: rng.gen_range(-template.max_offset..=template.max_offset),
                harmonics,
            }
        })
        .collect())
}

pub fn action_name(action: usize) -> String {
    format!("action{action}")
}

/// Split by sequence index: the second to last is validation, the last is
/// test, the rest train (8 sequences give 6/1/1). Fewer than 3 sequences are
/// all training data.
pub fn split_for(index: usize, per_action: usize) -> Split {
    if per_action < 3 || index + 2 < per_action {
        Split::Train
    } else if index + 2 == per_action {
        Split::Val
    } else {
        Split::Test
    }
}

/// Writes `n_actions × seqs_per_action` CSV files plus `manifest.json` into
/// `dir` and returns the manifest.
pub fn make_dataset(
    dir: &Path,
    n_actions: usize,
    seqs_per_action: usize,
    template: &DatasetTemplate,
    seed: u64,
) -> Result<DatasetManifest> {
    if n_actions == 0 || seqs_per_action == 0 {
        return Err(Error::BadSpec("need at least one action and one sequence".into()));
    }
    if template.min_amplitude > template.max_amplitude || template.min_amplitude < 0.0 {
        return Err(Error::BadSpec("amplitude range is empty or negative".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for a in 0..n_actions {
        let signature = action_signature(template, a, n_actions, &mut rng)?;
        for i in 0..seqs_per_action {
            let mut channels = signature.clone();
            for c in &mut channels {
                for h in &mut c.harmonics {
                    h.phase = rng.gen_range(0.0..2.0 * PI);
                }
            }
            let spec = SynthActionSpec {
                frames: template.frames,
                channels,
                noise_std: template.noise_std,
                seed: rng.gen(),
            };
            let seq = generate_action(&spec)?;
            let file = format!("{}_{:02}.csv", action_name(a), i);
            write_sequence_file(dir.join(&file), seq.frames())?;
            entries.push(ManifestEntry {
                file: file.into(),
                subject: format!("s{i:02}"),
                action: action_name(a),
                split: split_for(i, seqs_per_action),
            });
        }
    }
    let mut manifest = DatasetManifest::new(template.fps, entries);
    manifest.validate()?;
    manifest.save(dir.join("manifest.json"))?;
    manifest.root = dir.to_path_buf();
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{npss, power_spectrum, EvalSet, NpssOptions};

    fn one_channel(harmonics: Vec<Harmonic>, frames: usize) -> SynthActionSpec {
        SynthActionSpec {
            frames,
            channels: vec![ChannelSpec { offset: 0.0, harmonics }],
            noise_std: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn constant_without_harmonics() {
        let spec = SynthActionSpec {
            frames: 10,
            channels: vec![ChannelSpec { offset: 0.7, harmonics: vec![] }; 2],
            noise_std: 0.0,
            seed: 0,
        };
        let seq = generate_action(&spec).unwrap();
        assert!(seq.frames().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn single_harmonic_spectrum() {
        let spec = one_channel(vec![Harmonic { bin: 4, amplitude: 1.0, phase: 0.0 }], 64);
        let seq = generate_action(&spec).unwrap();
        let p = power_spectrum(&seq.frames().column(0).to_vec(), true).unwrap();
        let total: f64 = p.iter().sum();
        assert!((p[4] / total - 1.0).abs() < 1e-12);
        let a = analytic_spectrum(&spec).unwrap();
        assert_eq!(a[0][4], 1.0);
    }

    #[test]
    fn two_harmonic_mass_split() {
        let spec = one_channel(
            vec![
                Harmonic { bin: 3, amplitude: 1.0, phase: 0.3 },
                Harmonic { bin: 7, amplitude: 1.0, phase: -1.0 },
            ],
            32,
        );
        let a = analytic_spectrum(&spec).unwrap();
        assert!((a[0][3] - 0.5).abs() < 1e-15 && (a[0][7] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn generator_matches_oracle() {
        let spec = SynthActionSpec {
            frames: 48,
            channels: vec![
                ChannelSpec {
                    offset: 0.2,
                    harmonics: vec![
                        Harmonic { bin: 2, amplitude: 0.5, phase: 0.1 },
                        Harmonic { bin: 2, amplitude: 0.3, phase: 2.0 },
                        Harmonic { bin: 9, amplitude: 0.8, phase: -0.4 },
                    ],
                },
                ChannelSpec {
                    offset: -1.0,
                    harmonics: vec![
                        Harmonic { bin: 24, amplitude: 0.4, phase: 0.9 },
                        Harmonic { bin: 1, amplitude: 1.2, phase: 0.0 },
                    ],
                },
            ],
            noise_std: 0.0,
            seed: 0,
        };
        let seq = generate_action(&spec).unwrap();
        let oracle = analytic_spectrum(&spec).unwrap();
        for (j, want) in oracle.iter().enumerate() {
            let p = power_spectrum(&seq.frames().column(j).to_vec(), true).unwrap();
            let got = crate::metrics::normalize_spectrum(&p);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() <= 1e-10 * w.max(1e-12) + 1e-14, "channel {j}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = one_channel(vec![Harmonic { bin: 40, amplitude: 1.0, phase: 0.0 }], 64);
        assert!(matches!(generate_action(&spec), Err(Error::BadSpec(_))));
        spec.channels[0].harmonics[0].bin = 2;
        spec.noise_std = 0.1;
        assert!(matches!(analytic_spectrum(&spec), Err(Error::NoiseNotZero)));
        spec.noise_std = -1.0;
        assert!(matches!(generate_action(&spec), Err(Error::BadSpec(_))));
    }

    #[test]
    fn deterministic_noise() {
        let mut spec = one_channel(vec![Harmonic { bin: 1, amplitude: 1.0, phase: 0.0 }], 16);
        spec.noise_std = 0.1;
        assert_eq!(generate_action(&spec).unwrap(), generate_action(&spec).unwrap());
    }

    #[test]
    fn phase_change_keeps_npss_zero() {
        let a = one_channel(vec![Harmonic { bin: 3, amplitude: 1.0, phase: 0.0 }, Harmonic { bin: 5, amplitude: 0.4, phase: 1.0 }], 40);
        let mut b = a.clone();
        b.channels[0].harmonics[0].phase = 2.2;
        b.channels[0].harmonics[1].phase = -0.7;
        let set = EvalSet::new(
            "x",
            vec![(generate_action(&a).unwrap().into_frames(), generate_action(&b).unwrap().into_frames())],
            25.0,
        )
        .unwrap();
        assert!(npss(&set, 0, 40, NpssOptions::default()).unwrap().npss <= 1e-9);
    }

    #[test]
    fn distinct_actions_are_disjoint() {
        let template = DatasetTemplate {
            frames: 64,
            channels: 3,
            noise_std: 0.0,
            ..DatasetTemplate::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s0 = action_signature(&template, 0, 4, &mut rng).unwrap();
        let s1 = action_signature(&template, 1, 4, &mut rng).unwrap();
        let gen = |channels: Vec<ChannelSpec>| {
            generate_action(&SynthActionSpec { frames: 64, channels, noise_std: 0.0, seed: 0 })
                .unwrap()
                .into_frames()
        };
        let set = EvalSet::new("x", vec![(gen(s0), gen(s1))], 25.0).unwrap();
        assert!((npss(&set, 0, 64, NpssOptions::default()).unwrap().npss - 2.0).abs() <= 1e-12);
        assert_eq!(action_bins(0, 4, 16), vec![1, 5, 9, 13]);
    }

    #[test]
    fn dataset_layout_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let template = DatasetTemplate {
            frames: 32,
            channels: 6,
            ..DatasetTemplate::default()
        };
        let m = make_dataset(dir.path(), 4, 8, &template, 42).unwrap();
        assert_eq!(m.entries.len(), 32);
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 33);
        for a in 0..4 {
            let splits: Vec<Split> = m.entries.iter().filter(|e| e.action == action_name(a)).map(|e| e.split).collect();
            assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 6);
            assert_eq!(splits.iter().filter(|s| **s == Split::Val).count(), 1);
            assert_eq!(splits.iter().filter(|s| **s == Split::Test).count(), 1);
        }
        let reloaded = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
        let train_actions = reloaded.actions();
        assert!(reloaded.entries_in(Split::Test).all(|e| train_actions.contains(&e.action)));

        let again = tempfile::tempdir().unwrap();
        make_dataset(again.path(), 4, 8, &template, 42).unwrap();
        for e in &m.entries {
            let a = std::fs::read(dir.path().join(&e.file)).unwrap();
            let b = std::fs::read(again.path().join(&e.file)).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(
            std::fs::read(dir.path().join("manifest.json")).unwrap(),
            std::fs::read(again.path().join("manifest.json")).unwrap()
        );
    }
}
