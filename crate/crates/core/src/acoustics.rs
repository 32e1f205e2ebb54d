//! Shoebox scenarios, synthetic room impulse responses and node signals.
//!
//! The impulse response model is deliberately simple: a direct-path delta
//! at delay `d / c` with amplitude `1 / max(d, 0.1)`, followed by a
//! Gaussian-noise diffuse tail whose amplitude decays by 60 dB over T60.
//! The tail carries a fixed energy `1 / r_c^2`, so the direct-to-reverberant
//! ratio is exactly 1 at the critical distance `r_c` and the reverberant
//! field level is the same everywhere in the room.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AudioClip, SAMPLE_RATE};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const MIN_DISTANCE: f64 = 0.1;
pub const DEFAULT_ROOM: [f64; 3] = [4.7, 3.4, 2.4];
pub const DEFAULT_T60: f64 = 0.34;
pub const MAX_DRAWS: usize = 10_000;
pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
/// Nodes guaranteed inside each source's critical distance.
pub const NODES_NEAR_EACH_SOURCE: usize = 3;
/// Clearance kept between any position and the walls, in metres.
pub const WALL_MARGIN: f64 = 0.2;
/// -60 dB expressed as a natural-log amplitude decay.
const DECAY_60DB: f64 = 6.907_755_278_982_137;

pub type Position = [f64; 3];

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance at which direct and reverberant energy are equal:
/// `0.057 * sqrt(V / T60)`.
pub fn critical_distance(room: &Position, t60: f64) -> f64 {
    let volume = room[0] * room[1] * room[2];
    0.057 * (volume / t60).sqrt()
}

/// How the diffuse-tail noise seeds are assigned to source/node pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TailSeeding {
    /// Every pair gets an independent tail realization.
    PerPair,
    /// All nodes share one tail realization per source.
    #[default]
    PerSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    pub room: Position,
    pub t60: f64,
    pub sources: [Position; 2],
    pub nodes: Vec<Position>,
    /// `rir_seeds[node][source]`: seed of the diffuse tail for that pair.
    pub rir_seeds: Vec<[u64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioParams {
    pub room: Position,
    pub t60: f64,
    pub nodes: usize,
    pub tail_seeding: TailSeeding,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            room: DEFAULT_ROOM,
            t60: DEFAULT_T60,
            nodes: 16,
            tail_seeding: TailSeeding::default(),
        }
    }
}

impl Scenario {
    pub fn critical_distance(&self) -> f64 {
        critical_distance(&self.room, self.t60)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn room_center(&self) -> Position {
        [self.room[0] / 2.0, self.room[1] / 2.0, self.room[2] / 2.0]
    }

    /// Checks every structural invariant; returns a description of the
    /// first violation.
    pub fn validate(&self) -> Result<()> {
        let fail = |d: String| Err(Error::Format { what: "scenario", detail: d });
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return fail(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.room.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(self.t60.is_finite() && self.t60 > 0.0) {
            return fail("room extents and t60 must be positive".into());
        }
        if self.nodes.len() != self.rir_seeds.len() {
            return fail("rir_seeds must have one entry per node".into());
        }
        let inside = |p: &Position| p.iter().zip(&self.room).all(|(x, l)| *x > 0.0 && x < l);
        if !self.sources.iter().chain(&self.nodes).all(inside) {
            return fail("all positions must lie strictly inside the room".into());
        }
        let c = self.room_center();
        let (a, b) = (&self.sources[0], &self.sources[1]);
        if !((a[0] - c[0]) * (b[0] - c[0]) < 0.0 && (a[1] - c[1]) * (b[1] - c[1]) < 0.0) {
            return fail("sources must lie in opposing floor quadrants".into());
        }
        let rc = self.critical_distance();
        for (j, s) in self.sources.iter().enumerate() {
            let near = self.nodes.iter().filter(|n| distance(n, s) <= rc).count();
            if near < NODES_NEAR_EACH_SOURCE {
                return fail(format!("source {j} has only {near} nodes within critical distance"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }
}

/// Sub-seed derived from `seed` and two keys (splitmix64 finalizer).
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over a combined key
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Sampler {
    rng: ChaCha8Rng,
    draws: usize,
}

impl Sampler {
    fn draw<T>(&mut self, mut f: impl FnMut(&mut ChaCha8Rng) -> Option<T>) -> Result<T> {
        loop {
            if self.draws >= MAX_DRAWS {
                return Err(Error::Unsatisfiable { draws: self.draws });
            }
            self.draws += 1;
            if let Some(v) = f(&mut self.rng) {
                return Ok(v);
            }
        }
    }
}

fn uniform_in_room(rng: &mut ChaCha8Rng, room: &Position) -> Position {
    let mut p = [0.0; 3];
    for (x, l) in p.iter_mut().zip(room) {
        *x = rng.random_range(WALL_MARGIN..l - WALL_MARGIN);
    }
    p
}

/// Draws a random scenario by rejection sampling, deterministic in `seed`.
///
/// The two sources sit in opposite (x, y) quadrants around the floor centre,
/// at least two critical distances apart. Three nodes per source are placed
/// inside its critical-distance sphere, the rest uniformly in the room; the
/// node order is then shuffled.
pub fn generate_scenario(seed: u64, params: &ScenarioParams) -> Result<Scenario> {
    let ScenarioParams {
        room,
        t60,
        nodes: m,
        tail_seeding,
    } = *params;
    if m < 2 * NODES_NEAR_EACH_SOURCE {
        return Err(Error::InvalidArgument(format!("need at least 6 nodes, got {m}")));
    }
    if room.iter().any(|l| *l <= 2.0 * WALL_MARGIN) || !(t60 > 0.0) {
        return Err(Error::InvalidArgument("room too small or t60 not positive".into()));
    }
    let rc = critical_distance(&room, t60);
    let center = [room[0] / 2.0, room[1] / 2.0, room[2] / 2.0];
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        draws: 0,
    };

    let sources = s.draw(|rng| {
        let a = uniform_in_room(rng, &room);
        let b = uniform_in_room(rng, &room);
        let opposite = (a[0] - center[0]) * (b[0] - center[0]) < 0.0 && (a[1] - center[1]) * (b[1] - center[1]) < 0.0;
        (opposite && distance(&a, &b) >= 2.0 * rc).then_some([a, b])
    })?;

    let mut nodes = Vec::with_capacity(m);
    for src in &sources {
        for _ in 0..NODES_NEAR_EACH_SOURCE {
            let p = s.draw(|rng| {
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = src[k] + rng.random_range(-rc..rc);
                }
                let inside = p.iter().zip(&room).all(|(x, l)| *x > WALL_MARGIN && *x < l - WALL_MARGIN);
                (inside && distance(&p, src) <= rc).then_some(p)
            })?;
            nodes.push(p);
        }
    }
    while nodes.len() < m {
        let p = s.draw(|rng| Some(uniform_in_room(rng, &room)))?;
        nodes.push(p);
    }
    nodes.shuffle(&mut s.rng);

    let rir_seeds = (0..m)
        .map(|i| {
            let mut pair = [0u64; 2];
            for (j, v) in pair.iter_mut().enumerate() {
                *v = match tail_seeding {
                    TailSeeding::PerPair => mix_seed(seed, i as u64 + 1, j as u64 + 1),
                    TailSeeding::PerSource => mix_seed(seed, 0, j as u64 + 1),
                };
            }
            pair
        })
        .collect();

    Ok(Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        seed,
        room,
        t60,
        sources,
        nodes,
        rir_seeds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRir {
    pub taps: Vec<f64>,
    pub first_peak_delay: f64,
    pub source: usize,
    pub node: usize,
}

impl SyntheticRir {
    pub fn direct_amplitude(&self) -> f64 {
        let i = (self.first_peak_delay * SAMPLE_RATE as f64).round() as usize;
        self.taps[i]
    }

    /// Energy of everything after the direct-path tap.
    pub fn tail_energy(&self) -> f64 {
        let i = (self.first_peak_delay * SAMPLE_RATE as f64).round() as usize;
        self.taps[i + 1..].iter().map(|t| t * t).sum()
    }
}

/// Impulse response from `source` to `node` with tail noise drawn from `seed`.
pub fn synth_rir(scenario: &Scenario, source: usize, node: usize, seed: u64) -> SyntheticRir {
    let d = distance(&scenario.sources[source], &scenario.nodes[node]);
    rir_for_distance(d, scenario.t60, scenario.critical_distance(), seed, source, node)
}

pub(crate) fn rir_for_distance(d: f64, t60: f64, rc: f64, seed: u64, source: usize, node: usize) -> SyntheticRir {
    let fs = SAMPLE_RATE as f64;
    let delay = d / SPEED_OF_SOUND;
    let direct = (delay * fs).round() as usize;
    let tail_len = (t60 * fs).ceil() as usize;
    let mut taps = vec![0.0; direct + 1 + tail_len];
    taps[direct] = 1.0 / d.max(MIN_DISTANCE);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tail = &mut taps[direct + 1..];
    for (k, t) in tail.iter_mut().enumerate() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *t = n * (-DECAY_60DB * (k + 1) as f64 / fs / t60).exp();
    }
    let raw: f64 = tail.iter().map(|t| t * t).sum();
    let scale = (1.0 / (rc * rc) / raw).sqrt();
    tail.iter_mut().for_each(|t| *t *= scale);

    SyntheticRir {
        taps,
        first_peak_delay: delay,
        source,
        node,
    }
}

/// Full linear convolution truncated to `x.len()` samples.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
    a.resize(n, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = h.iter().map(|v| Complex::new(*v, 0.0)).collect();
    b.resize(n, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.iter().take(x.len()).map(|c| c.re / n as f64).collect()
}

/// Renders every node of a scenario for source clips of a fixed length,
/// reusing the impulse response spectra across calls.
pub struct NodeRenderer {
    len: usize,
    n: usize,
    /// `spectra[node][source]`.
    spectra: Vec<[Vec<Complex<f64>>; 2]>,
    planner: std::sync::Mutex<FftPlanner<f64>>,
}

impl NodeRenderer {
    pub fn new(scenario: &Scenario, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("render length must be positive".into()));
        }
        let rirs: Vec<[SyntheticRir; 2]> = (0..scenario.nodes.len())
            .map(|i| [0, 1].map(|j| synth_rir(scenario, j, i, scenario.rir_seeds[i][j])))
            .collect();
        let longest = rirs.iter().flatten().map(|r| r.taps.len()).max().unwrap_or(1);
        let n = (len + longest - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let spectra = rirs
            .iter()
            .map(|pair| {
                pair.each_ref().map(|r| {
                    let mut b: Vec<Complex<f64>> = r.taps.iter().map(|v| Complex::new(*v, 0.0)).collect();
                    b.resize(n, Complex::new(0.0, 0.0));
                    fwd.process(&mut b);
                    b
                })
            })
            .collect();
        Ok(Self {
            len,
            n,
            spectra,
            planner: std::sync::Mutex::new(planner),
        })
    }

    pub fn node_count(&self) -> usize {
        self.spectra.len()
    }

    /// Signals of all nodes for one pair of source clips.
    pub fn render(&self, s1: &AudioClip, s2: &AudioClip) -> Result<Vec<AudioClip>> {
        for s in [s1, s2] {
            if s.len() != self.len {
                return Err(Error::LengthMismatch {
                    expected: self.len,
                    actual: s.len(),
                });
            }
        }
        let (fwd, inv) = {
            let mut p = self.planner.lock().expect("planner lock");
            (p.plan_fft_forward(self.n), p.plan_fft_inverse(self.n))
        };
        let src = [s1, s2].map(|s| {
            let mut a: Vec<Complex<f64>> = s.samples().iter().map(|v| Complex::new(*v, 0.0)).collect();
            a.resize(self.n, Complex::new(0.0, 0.0));
            fwd.process(&mut a);
            a
        });
        self.spectra
            .iter()
            .map(|[g1, g2]| {
                let mut y: Vec<Complex<f64>> = (0..self.n).map(|k| src[0][k] * g1[k] + src[1][k] * g2[k]).collect();
                inv.process(&mut y);
                let samples = y.iter().take(self.len).map(|c| c.re / self.n as f64).collect();
                AudioClip::new(samples, s1.sample_rate())
            })
            .collect()
    }
}

/// `x_i = s1 * g_i^{s1} + s2 * g_i^{s2}`, truncated to the source length.
pub fn render_node_signal(scenario: &Scenario, s1: &AudioClip, s2: &AudioClip, node: usize) -> Result<AudioClip> {
    if s1.len() != s2.len() {
        return Err(Error::LengthMismatch {
            expected: s1.len(),
            actual: s2.len(),
        });
    }
    if node >= scenario.nodes.len() {
        return Err(Error::InvalidArgument(format!("node {node} out of range")));
    }
    let mut out = vec![0.0; s1.len()];
    for (j, s) in [s1, s2].into_iter().enumerate() {
        let rir = synth_rir(scenario, j, node, scenario.rir_seeds[node][j]);
        for (o, v) in out.iter_mut().zip(convolve_truncated(s.samples(), &rir.taps)) {
            *o += v;
        }
    }
    AudioClip::new(out, s1.sample_rate())
}

/// Source whose direct path arrives first at `node`; ties go to source 0.
pub fn dominant_source(scenario: &Scenario, node: usize) -> usize {
    let delays: Vec<f64> = scenario
        .sources
        .iter()
        .map(|s| distance(s, &scenario.nodes[node]) / SPEED_OF_SOUND)
        .collect();
    if delays[1] < delays[0] {
        1
    } else {
        0
    }
}

/// Dominant source of every node.
pub fn dominant_sources(scenario: &Scenario) -> Vec<usize> {
    (0..scenario.nodes.len()).map(|i| dominant_source(scenario, i)).collect()
}

/// Spectral profile of a synthetic talker: formant-like resonances on top
/// of a sloped noise floor, plus a slow syllabic amplitude envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    /// `(centre Hz, bandwidth Hz, gain dB)` per resonance.
    pub formants: Vec<(f64, f64, f64)>,
    /// Spectral tilt in dB per octave above 100 Hz.
    pub tilt_db_per_octave: f64,
    /// Syllable rate of the amplitude envelope in Hz.
    pub syllable_rate: f64,
    /// Burst length as a fraction of the syllable period, drawn per burst.
    pub burst_fraction: (f64, f64),
    /// Envelope level between bursts.
    pub envelope_floor: f64,
}

/// Built-in profiles. The spectra overlap; what separates the talkers is
/// mostly the envelope: 0 speaks in long slow phrases, 1 in short rapid
/// bursts with a brighter timbre. Both envelopes drop about 30 dB between
/// bursts.
pub fn source_profile(kind: usize) -> Result<SourceProfile> {
    match kind {
        0 => Ok(SourceProfile {
            formants: vec![(500.0, 300.0, 15.0), (1500.0, 500.0, 12.0), (3000.0, 800.0, 8.0)],
            tilt_db_per_octave: -3.0,
            syllable_rate: 1.2,
            burst_fraction: (0.6, 0.9),
            envelope_floor: 0.03,
        }),
        1 => Ok(SourceProfile {
            formants: vec![(700.0, 300.0, 12.0), (2000.0, 600.0, 15.0), (3500.0, 800.0, 10.0)],
            tilt_db_per_octave: -2.0,
            syllable_rate: 3.0,
            burst_fraction: (0.2, 0.4),
            envelope_floor: 0.03,
        }),
        k => Err(Error::InvalidArgument(format!("unknown source kind {k}"))),
    }
}

impl SourceProfile {
    /// Amplitude response (linear) at frequency `f`.
    pub fn gain(&self, f: f64) -> f64 {
        let octaves = (f.max(100.0) / 100.0).log2();
        let mut db = self.tilt_db_per_octave * octaves;
        let mut peak = 0.0f64;
        for &(c, bw, g) in &self.formants {
            let z = (f - c) / bw;
            peak = peak.max(g * (-0.5 * z * z).exp());
        }
        db += peak;
        10f64.powf(db / 20.0)
    }
}

/// Seeded filtered noise with the profile of `kind`, scaled to unit RMS.
pub fn synth_source_signal(kind: usize, seed: u64, duration_s: f64) -> Result<AudioClip> {
    let profile = source_profile(kind)?;
    synth_profile_signal(&profile, mix_seed(seed, 0xA0D1_0000, kind as u64), duration_s)
}

/// Seeded filtered noise with an arbitrary profile, scaled to unit RMS.
pub fn synth_profile_signal(profile: &SourceProfile, seed: u64, duration_s: f64) -> Result<AudioClip> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidArgument(format!("duration {duration_s}")));
    }
    let fs = SAMPLE_RATE as f64;
    let len = (duration_s * fs).round() as usize;
    if len == 0 {
        return Err(Error::InvalidArgument("duration shorter than one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = len.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = if k <= n / 2 { k } else { n - k };
        *c *= profile.gain(bin as f64 * fs / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut samples: Vec<f64> = buf.iter().take(len).map(|c| c.re).collect();

    // Syllabic envelope: raised cosine bursts with jittered onsets.
    let period = fs / profile.syllable_rate;
    let mut env = vec![profile.envelope_floor; len];
    let mut t = rng.random_range(0.0..period);
    while t < len as f64 {
        let (lo, hi) = profile.burst_fraction;
        let width = period * rng.random_range(lo..hi);
        let start = t as usize;
        let end = ((t + width) as usize).min(len);
        for (i, e) in env[start..end].iter_mut().enumerate() {
            let ph = i as f64 / width;
            *e = (*e).max((std::f64::consts::PI * ph).sin());
        }
        t += period * rng.random_range(0.8..1.25);
    }
    for (s, e) in samples.iter_mut().zip(&env) {
        *s *= e;
    }

    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / len as f64).sqrt();
    samples.iter_mut().for_each(|s| *s /= rms);
    AudioClip::new(samples, SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::stft_power;

    fn scenario(seed: u64) -> Scenario {
        generate_scenario(seed, &ScenarioParams::default()).unwrap()
    }

    #[test]
    fn critical_distance_of_default_room() {
        let rc = critical_distance(&DEFAULT_ROOM, DEFAULT_T60);
        let expected = 0.057 * (4.7f64 * 3.4 * 2.4 / 0.34).sqrt();
        assert!((rc - expected).abs() < 1e-15);
        assert!((rc - 0.605).abs() < 1e-3);
        let doubled = critical_distance(&[9.4, 3.4, 2.4], DEFAULT_T60);
        assert!((doubled / rc - 2f64.sqrt()).abs() < 1e-12);
        assert!(critical_distance(&DEFAULT_ROOM, 1e12) < 1e-5);
    }

    #[test]
    fn default_scenario_is_valid() {
        let s = scenario(1);
        assert_eq!(s.nodes.len(), 16);
        s.validate().unwrap();
        assert_eq!(s, scenario(1));
        assert_ne!(s, scenario(2));
    }

    #[test]
    fn scenarios_hold_invariants_over_many_seeds() {
        for seed in 0..100 {
            let s = scenario(seed);
            s.validate().unwrap();
            let doms = dominant_sources(&s);
            assert!(doms.contains(&0) && doms.contains(&1), "seed {seed}");
        }
    }

    #[test]
    fn too_few_nodes_rejected() {
        let p = ScenarioParams {
            nodes: 5,
            ..Default::default()
        };
        assert!(generate_scenario(0, &p).is_err());
    }

    #[test]
    fn impossible_constraints_fail_deterministically() {
        // Critical distance larger than half the room: sources can never be
        // two critical distances apart.
        let p = ScenarioParams {
            t60: 0.001,
            ..Default::default()
        };
        assert!(matches!(generate_scenario(0, &p), Err(Error::Unsatisfiable { draws: MAX_DRAWS })));
    }

    #[test]
    fn scenario_json_roundtrip() {
        let s = scenario(3);
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
        let mut bad = s.clone();
        bad.schema_version = 99;
        assert!(Scenario::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn rir_direct_path() {
        let rc = critical_distance(&DEFAULT_ROOM, DEFAULT_T60);
        let r = rir_for_distance(0.1, DEFAULT_T60, rc, 1, 0, 0);
        assert!((r.direct_amplitude() - 10.0).abs() < 1e-12);
        let r = rir_for_distance(0.01, DEFAULT_T60, rc, 1, 0, 0);
        assert!((r.direct_amplitude() - 10.0).abs() < 1e-12);
        let delays: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|d| rir_for_distance(*d, DEFAULT_T60, rc, 1, 0, 0).first_peak_delay)
            .collect();
        assert!(delays.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn direct_to_reverberant_ratio_is_one_at_critical_distance() {
        let rc = critical_distance(&DEFAULT_ROOM, DEFAULT_T60);
        for seed in 0..5 {
            let r = rir_for_distance(rc, DEFAULT_T60, rc, seed, 0, 0);
            let direct = r.direct_amplitude().powi(2);
            // Tail energy by direct summation of the taps after the peak.
            let i = (r.first_peak_delay * 16000.0).round() as usize;
            let tail: f64 = r.taps[i + 1..].iter().map(|t| t * t).sum();
            let ratio = direct / tail;
            assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn tail_decays_60db_over_t60() {
        let rc = critical_distance(&DEFAULT_ROOM, DEFAULT_T60);
        let r = rir_for_distance(1.0, DEFAULT_T60, rc, 9, 0, 0);
        let i = (r.first_peak_delay * 16000.0).round() as usize + 1;
        let tail = &r.taps[i..];
        let block = 400;
        let e_start: f64 = tail[..block].iter().map(|t| t * t).sum();
        let n = tail.len();
        let e_end: f64 = tail[n - block..].iter().map(|t| t * t).sum();
        let db = 10.0 * (e_start / e_end).log10();
        assert!((db - 60.0).abs() < 6.0, "decay {db} dB");
    }

    fn clip_of(v: Vec<f64>) -> AudioClip {
        AudioClip::new(v, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn rendering_is_linear_and_silent_sources_vanish() {
        let s = scenario(4);
        let a = synth_source_signal(0, 1, 0.5).unwrap();
        let b = synth_source_signal(1, 2, 0.5).unwrap();
        let silent = clip_of(vec![0.0; a.len()]);

        let both_silent = render_node_signal(&s, &silent, &silent, 0).unwrap();
        assert!(both_silent.samples().iter().all(|v| v.abs() < 1e-12));

        let alone = render_node_signal(&s, &a, &silent, 2).unwrap();
        let rir = synth_rir(&s, 0, 2, s.rir_seeds[2][0]);
        let direct = convolve_truncated(a.samples(), &rir.taps);
        for (x, y) in alone.samples().iter().zip(&direct) {
            assert!((x - y).abs() < 1e-9);
        }

        let mixed = render_node_signal(&s, &a, &b, 2).unwrap();
        let a3 = clip_of(a.samples().iter().map(|v| 3.0 * v).collect());
        let mixed3 = render_node_signal(&s, &a3, &b, 2).unwrap();
        let only_b = render_node_signal(&s, &silent, &b, 2).unwrap();
        for i in 0..a.len() {
            let contrib = mixed.samples()[i] - only_b.samples()[i];
            let contrib3 = mixed3.samples()[i] - only_b.samples()[i];
            assert!((contrib3 - 3.0 * contrib).abs() <= 1e-9 * (1.0 + contrib3.abs()));
        }

        assert!(render_node_signal(&s, &a, &clip_of(vec![0.0; 10]), 0).is_err());
    }

    #[test]
    fn mirrored_scenario_mirrors_the_output() {
        // Sources mirrored through the room centre; swapping the sources and
        // mirroring the node must give the same node signal.
        let room = DEFAULT_ROOM;
        let mirror = |p: Position| [room[0] - p[0], room[1] - p[1], p[2]];
        let s1 = [1.0, 1.0, 1.2];
        let node = [1.5, 0.8, 1.0];
        let sc = Scenario {
            schema_version: SCENARIO_SCHEMA_VERSION,
            seed: 0,
            room,
            t60: DEFAULT_T60,
            sources: [s1, mirror(s1)],
            nodes: vec![node, mirror(node)],
            rir_seeds: vec![[11, 22], [22, 11]],
        };
        let a = synth_source_signal(0, 5, 0.3).unwrap();
        let b = synth_source_signal(1, 6, 0.3).unwrap();
        let x = render_node_signal(&sc, &a, &b, 0).unwrap();
        let y = render_node_signal(&sc, &b, &a, 1).unwrap();
        for (p, q) in x.samples().iter().zip(y.samples()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn dominant_source_rules() {
        let mut s = scenario(5);
        s.nodes[0] = s.sources[1];
        assert_eq!(dominant_source(&s, 0), 1);
        s.nodes[0] = s.sources[0];
        assert_eq!(dominant_source(&s, 0), 0);
        let mid = [
            (s.sources[0][0] + s.sources[1][0]) / 2.0,
            (s.sources[0][1] + s.sources[1][1]) / 2.0,
            (s.sources[0][2] + s.sources[1][2]) / 2.0,
        ];
        s.nodes[0] = mid;
        let (d0, d1) = (distance(&mid, &s.sources[0]), distance(&mid, &s.sources[1]));
        let expected = if d1 < d0 { 1 } else { 0 };
        assert_eq!(dominant_source(&s, 0), expected);
        // Exact tie on a symmetric layout.
        let sym = Scenario {
            sources: [[1.0, 1.0, 1.0], [3.0, 2.0, 1.0]],
            nodes: vec![[2.0, 1.5, 1.0]],
            rir_seeds: vec![[0, 0]],
            ..s.clone()
        };
        assert_eq!(dominant_source(&sym, 0), 0);
        for seed in 0..20 {
            let s = scenario(seed);
            for i in 0..s.nodes.len() {
                let d: Vec<f64> = s.sources.iter().map(|p| distance(p, &s.nodes[i])).collect();
                let geo = if d[1] < d[0] { 1 } else { 0 };
                assert_eq!(dominant_source(&s, i), geo);
            }
        }
    }

    #[test]
    fn source_signals_are_unit_rms_and_deterministic() {
        for kind in 0..2 {
            let a = synth_source_signal(kind, 7, 1.0).unwrap();
            assert!((a.rms() - 1.0).abs() < 1e-6);
            assert_eq!(a, synth_source_signal(kind, 7, 1.0).unwrap());
            assert_ne!(a, synth_source_signal(kind, 8, 1.0).unwrap());
        }
        assert!(synth_source_signal(2, 0, 1.0).is_err());
        assert!(synth_source_signal(0, 0, 0.0).is_err());
    }

    #[test]
    fn renderer_matches_per_node_rendering() {
        let sc = scenario(3);
        let a = synth_source_signal(0, 1, 0.4).unwrap();
        let b = synth_source_signal(1, 2, 0.4).unwrap();
        let r = NodeRenderer::new(&sc, a.len()).unwrap();
        let all = r.render(&a, &b).unwrap();
        assert_eq!(all.len(), sc.nodes.len());
        for (i, clip) in all.iter().enumerate() {
            let one = render_node_signal(&sc, &a, &b, i).unwrap();
            let err = clip.samples().iter().zip(one.samples()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9 * one.rms().max(1.0), "node {i}: {err}");
        }
        let short = synth_source_signal(0, 1, 0.2).unwrap();
        assert!(r.render(&short, &b).is_err());
    }


    #[test]
    fn source_kinds_differ_in_envelope_and_timbre() {
        let duty = |clip: &AudioClip| {
            let s = stft_power(clip, 0.064, 0.032).unwrap();
            let e: Vec<f64> = (0..s.frames).map(|t| s.frame(t).iter().sum()).collect();
            let peak = e.iter().cloned().fold(0.0, f64::max);
            e.iter().filter(|v| **v > 0.1 * peak).count() as f64 / e.len() as f64
        };
        let db = |a: f64, b: f64| 10.0 * (a / b).log10();
        for seed in 0..4 {
            let slow = synth_source_signal(0, seed, 10.0).unwrap();
            let fast = synth_source_signal(1, seed, 10.0).unwrap();
            let (d0, d1) = (duty(&slow), duty(&fast));
            assert!(d0 > d1 + 0.2, "duty {d0} vs {d1}");
            let bright = db(band_share(&fast, 1500.0, 6000.0), band_share(&slow, 1500.0, 6000.0));
            assert!(bright > 2.0, "{bright} dB");
        }
    }

    /// Fraction of spectral energy between `lo` and `hi` Hz.
    fn band_share(clip: &AudioClip, lo: f64, hi: f64) -> f64 {
        let s = stft_power(clip, 0.064, 0.032).unwrap();
        let bin_hz = 16000.0 / 1024.0;
        let (mut band, mut total) = (0.0, 0.0);
        for t in 0..s.frames {
            for (b, p) in s.frame(t).iter().enumerate() {
                let f = b as f64 * bin_hz;
                total += p;
                if f >= lo && f < hi {
                    band += p;
                }
            }
        }
        band / total
    }
}
