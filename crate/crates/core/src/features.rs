//! Log-mel band energy (LMBE) features.
//!
//! Hann-windowed STFT power spectra are mapped through a bank of
//! peak-normalized triangular mel filters, log-compressed, cut into
//! non-overlapping 128-frame segments and min-max normalized per segment.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::nn::{FeatureSegment, INPUT_SIZE};

pub const SAMPLE_RATE: u32 = 16_000;
/// Added to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;
pub const DEFAULT_WIN_S: f64 = 0.064;
pub const DEFAULT_HOP_S: f64 = 0.032;
pub const DEFAULT_MELS: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidArgument(format!(
                "sample rate {sample_rate} Hz, expected {SAMPLE_RATE}"
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Reads a 16-bit mono PCM WAV file, scaling samples to `[-1, 1)`.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::Format {
                what: "wav",
                detail: format!(
                    "need 16-bit mono PCM, got {} channels / {} bits",
                    spec.channels, spec.bits_per_sample
                ),
            });
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?;
        Self::new(samples, spec.sample_rate)
    }

    /// Writes a 16-bit mono PCM WAV file. Samples are clipped to `[-1, 1]`.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
        for s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            w.write_sample(v).map_err(wav_err)?;
        }
        w.finalize().map_err(wav_err)
    }
}

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(e) => Error::Io(e),
        other => Error::Format {
            what: "wav",
            detail: other.to_string(),
        },
    }
}

/// Frames x bins matrix of short-time power spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn samples_for(seconds: f64, rate: u32) -> Result<usize> {
    let n = seconds * rate as f64;
    if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "{seconds} s is not a whole number of samples at {rate} Hz"
        )));
    }
    Ok(n.round() as usize)
}

/// Magnitude-squared STFT with a Hann window.
pub fn stft_power(clip: &AudioClip, win_s: f64, hop_s: f64) -> Result<Spectrogram> {
    let win = samples_for(win_s, clip.sample_rate)?;
    let hop = samples_for(hop_s, clip.sample_rate)?;
    stft_power_samples(clip.samples(), win, hop)
}

pub fn stft_power_samples(x: &[f64], win: usize, hop: usize) -> Result<Spectrogram> {
    if x.len() < win {
        return Err(Error::TooShort { frames: 0, needed: 1 });
    }
    let frames = (x.len() - win) / hop + 1;
    let bins = win / 2 + 1;
    let window = hann(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let seg = &x[t * hop..t * hop + win];
        for ((b, s), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        data.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(Spectrogram { frames, bins, data })
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters, each peak-normalized to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    k: usize,
    n_fft: usize,
    rate: u32,
    /// Filter edges and centres in Hz: filter `i` spans `edges[i]..edges[i + 2]`.
    edges: Vec<f64>,
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(k: usize, n_fft: usize, rate: u32) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 mel filters, got {k}")));
        }
        let bins = n_fft / 2 + 1;
        let top = hz_to_mel(rate as f64 / 2.0);
        let edges: Vec<f64> = (0..k + 2)
            .map(|i| mel_to_hz(top * i as f64 / (k + 1) as f64))
            .collect();
        let bin_hz = rate as f64 / n_fft as f64;
        let mut weights = vec![0.0; k * bins];
        for i in 0..k {
            let (lo, c, hi) = (edges[i], edges[i + 1], edges[i + 2]);
            let row = &mut weights[i * bins..(i + 1) * bins];
            for (b, w) in row.iter_mut().enumerate() {
                let f = b as f64 * bin_hz;
                *w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
            }
            let peak = row.iter().cloned().fold(0.0, f64::max);
            if peak <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "mel filter {i} covers no FFT bin; use fewer filters or a longer FFT"
                )));
            }
            row.iter_mut().for_each(|w| *w /= peak);
        }
        Ok(Self {
            k,
            n_fft,
            rate,
            edges,
            weights,
        })
    }

    pub fn filters(&self) -> usize {
        self.k
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let b = self.bins();
        &self.weights[i * b..(i + 1) * b]
    }

    pub fn center_hz(&self, i: usize) -> f64 {
        self.edges[i + 1]
    }

    pub fn edges_hz(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.k + 1])
    }

    /// Mel energies (frames x filters) of a power spectrogram.
    pub fn apply(&self, spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
        if spec.bins != self.bins() {
            return Err(Error::LengthMismatch {
                expected: self.bins(),
                actual: spec.bins,
            });
        }
        Ok((0..spec.frames)
            .map(|t| {
                let frame = spec.frame(t);
                (0..self.k)
                    .map(|i| self.row(i).iter().zip(frame).map(|(w, p)| w * p).sum())
                    .collect()
            })
            .collect())
    }
}

/// Min-max normalizes in place; a constant input becomes all 0.5.
pub fn min_max_normalize(v: &mut [f64]) {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
    if hi > lo {
        let span = hi - lo;
        v.iter_mut().for_each(|x| *x = ((*x - lo) / span).clamp(0.0, 1.0));
    } else {
        v.fill(0.5);
    }
}

/// LMBE segments with a window of `fb.n_fft()` samples and half-window hop.
pub fn lmbe_segments(clip: &AudioClip, fb: &MelFilterbank) -> Result<Vec<FeatureSegment>> {
    lmbe_segments_with_hop(clip, fb, fb.n_fft() / 2)
}

/// Splits the log-mel spectrogram into non-overlapping `INPUT_SIZE`-frame
/// segments (trailing frames dropped), each laid out mel-band-major and
/// min-max normalized to `[0, 1]`.
pub fn lmbe_segments_with_hop(clip: &AudioClip, fb: &MelFilterbank, hop: usize) -> Result<Vec<FeatureSegment>> {
    if fb.filters() != INPUT_SIZE {
        return Err(Error::InvalidArgument(format!(
            "segments need {INPUT_SIZE} mel filters, filterbank has {}",
            fb.filters()
        )));
    }
    if clip.sample_rate() != fb.rate() {
        return Err(Error::InvalidArgument("filterbank rate differs from clip rate".into()));
    }
    let spec = match stft_power_samples(clip.samples(), fb.n_fft(), hop) {
        Ok(s) => s,
        Err(Error::TooShort { .. }) => {
            return Err(Error::TooShort {
                frames: 0,
                needed: INPUT_SIZE,
            })
        }
        Err(e) => return Err(e),
    };
    if spec.frames < INPUT_SIZE {
        return Err(Error::TooShort {
            frames: spec.frames,
            needed: INPUT_SIZE,
        });
    }
    let mel = fb.apply(&spec)?;
    let count = spec.frames / INPUT_SIZE;
    (0..count)
        .map(|s| {
            let mut v = vec![0.0; INPUT_SIZE * INPUT_SIZE];
            for t in 0..INPUT_SIZE {
                for (m, e) in mel[s * INPUT_SIZE + t].iter().enumerate() {
                    v[m * INPUT_SIZE + t] = (e + LOG_FLOOR).ln();
                }
            }
            min_max_normalize(&mut v);
            FeatureSegment::new(v, 0, s)
        })
        .collect()
}

/// Default 128-band filterbank for 64 ms windows at 16 kHz.
pub fn default_filterbank() -> MelFilterbank {
    let n_fft = (DEFAULT_WIN_S * SAMPLE_RATE as f64).round() as usize;
    MelFilterbank::new(DEFAULT_MELS, n_fft, SAMPLE_RATE).expect("default filterbank is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn frame_count_for_ten_seconds() {
        let s = stft_power(&clip(vec![0.0; 160_000]), 0.064, 0.032).unwrap();
        assert_eq!(s.frames, 311);
        assert_eq!(s.bins, 513);
        assert!(s.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dc_energy_stays_at_the_bottom() {
        // The Hann main lobe spreads a constant over bins 0 and 1 only.
        let s = stft_power(&clip(vec![0.7; 4096]), 0.064, 0.032).unwrap();
        for t in 0..s.frames {
            let f = s.frame(t);
            assert!(f[0] > f[1]);
            assert!(f[0] > 0.0);
            let rest: f64 = f[2..].iter().sum();
            assert!(rest < 1e-20 * f[0], "leak {rest}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(stft_power(&clip(vec![0.0; 100]), 0.064, 0.032).is_err());
        assert!(stft_power(&clip(vec![0.0; 4096]), 0.00001, 0.032).is_err());
        assert!(AudioClip::new(vec![0.0], 8000).is_err());
        assert!(MelFilterbank::new(1, 1024, SAMPLE_RATE).is_err());
    }

    #[test]
    fn filterbank_shape_and_peaks() {
        let fb = default_filterbank();
        assert_eq!((fb.filters(), fb.bins()), (128, 513));
        for i in 0..fb.filters() {
            let row = fb.row(i);
            let peak = row.iter().cloned().fold(0.0, f64::max);
            assert_eq!(peak, 1.0);
            assert!(row.iter().all(|w| *w >= 0.0));
            // Single peak: rises then falls.
            let argmax = row.iter().position(|w| *w == 1.0).unwrap();
            assert!(row[..=argmax].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[argmax..].windows(2).all(|w| w[0] >= w[1]));
        }
        for i in 1..fb.filters() {
            assert!(fb.center_hz(i) > fb.center_hz(i - 1));
        }
        let (lo, hi) = fb.edges_hz();
        assert_eq!(lo, 0.0);
        assert!((hi - 8000.0).abs() < 1e-6);
        let bin_hz = 16000.0 / 1024.0;
        for b in 0..fb.bins() {
            let f = b as f64 * bin_hz;
            if f > lo && f < hi {
                let total: f64 = (0..fb.filters()).map(|i| fb.row(i)[b]).sum();
                assert!(total > 0.0, "bin {b} uncovered");
            }
        }
    }

    #[test]
    fn ten_second_clip_gives_two_segments() {
        let fb = default_filterbank();
        let segs = lmbe_segments(&clip(noise(160_000, 1)), &fb).unwrap();
        assert_eq!(segs.len(), 2);
        for s in &segs {
            assert!(s.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let max = s.values().iter().cloned().fold(0.0, f64::max);
            assert_eq!(max, 1.0);
        }
        assert_eq!(segs[1].index, 1);
    }

    #[test]
    fn silent_clip_normalizes_to_half() {
        let fb = default_filterbank();
        let segs = lmbe_segments(&clip(vec![0.0; 70_000]), &fb).unwrap();
        assert_eq!(segs.len(), 1);
        assert!(segs[0].values().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn short_clip_is_an_error() {
        let fb = default_filterbank();
        let err = lmbe_segments(&clip(vec![0.0; 20_000]), &fb).unwrap_err();
        assert!(matches!(err, Error::TooShort { needed: 128, .. }));
    }

    #[test]
    fn wav_roundtrip() {
        let dir = std::env::temp_dir().join(format!("asncfl-wav-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.wav");
        let c = clip(noise(1000, 3).iter().map(|v| v * 0.5).collect());
        c.write_wav(&path).unwrap();
        let r = AudioClip::read_wav(&path).unwrap();
        assert_eq!(r.len(), 1000);
        for (a, b) in c.samples().iter().zip(r.samples()) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
        std::fs::remove_dir_all(dir).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn louder_clip_never_loses_mel_energy(seed in 0u64..1000, alpha in 1.0f64..10.0) {
            let fb = default_filterbank();
            let x = noise(4096, seed);
            let loud: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            let a = fb.apply(&stft_power_samples(&x, 1024, 512).unwrap()).unwrap();
            let b = fb.apply(&stft_power_samples(&loud, 1024, 512).unwrap()).unwrap();
            for (ra, rb) in a.iter().zip(&b) {
                for (ea, eb) in ra.iter().zip(rb) {
                    prop_assert!(eb >= ea);
                }
            }
        }

        #[test]
        fn normalization_is_idempotent(v in prop::collection::vec(-50.0f64..50.0, 2..64)) {
            let mut once = v.clone();
            min_max_normalize(&mut once);
            let mut twice = once.clone();
            min_max_normalize(&mut twice);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn segment_count_is_frames_div_128(extra in 0usize..200_000) {
            let n = 1024 + extra;
            let frames = (n - 1024) / 512 + 1;
            let fb = default_filterbank();
            let res = lmbe_segments(&clip(vec![0.0; n]), &fb);
            if frames < 128 {
                prop_assert!(res.is_err());
            } else {
                prop_assert_eq!(res.unwrap().len(), frames / 128);
            }
        }
    }
}
