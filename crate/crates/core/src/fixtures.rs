//! Seeded synthetic corpora: meeting audio, class-separable embeddings,
//! crowd votes and confounded telemetry.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{AudioChannel, SAMPLE_RATE};
use crate::causal::MeetingRecord;
use crate::class::Class;
use crate::error::Result;
use crate::features::{EmbeddingProfile, LayeredEmbedding};
use crate::labels::{Label, VoteRecord};
use crate::rng;

/// Speech spans `(start_s, end_s)` for each participant of the overlap fixture.
///
/// Four overlaps are engineered against the main speaker `p0`:
/// `p1` at 10.0 s (passes), `p2` at 20.0 s lasting 0.2 s (too short),
/// `p1` at 12.5 s after only 1.5 s of silence (rejected), and `p2` at
/// 40.0 s (passes).
pub const OVERLAP_FIXTURE: [(&str, &[(f64, f64)]); 3] = [
    ("p0", &[(2.0, 58.0)]),
    ("p1", &[(10.0, 11.0), (12.5, 13.5)]),
    ("p2", &[(20.0, 20.2), (40.0, 42.0)]),
];
pub const OVERLAP_FIXTURE_SECONDS: f64 = 60.0;

/// Tone bursts over digital silence, one frequency per participant.
pub fn tone_track(participant_id: &str, len_s: f64, spans: &[(f64, f64)], freq_hz: f64, amplitude: f32) -> AudioChannel {
    let rate = f64::from(SAMPLE_RATE);
    let n = (len_s * rate).round() as usize;
    let mut samples = vec![0.0f32; n];
    for &(a, b) in spans {
        let (a, b) = ((a * rate).round() as usize, ((b * rate).round() as usize).min(n));
        for (i, s) in samples.iter_mut().enumerate().take(b).skip(a) {
            *s = amplitude * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / rate).sin() as f32;
        }
    }
    AudioChannel::new(participant_id, samples, SAMPLE_RATE).expect("amplitude within range")
}

/// The three-party overlap fixture as audio channels.
pub fn overlap_meeting() -> Vec<AudioChannel> {
    OVERLAP_FIXTURE
        .iter()
        .enumerate()
        .map(|(i, (id, spans))| tone_track(id, OVERLAP_FIXTURE_SECONDS, spans, 220.0 + 110.0 * i as f64, 0.3))
        .collect()
}

/// Class-conditional frame pattern used by [`embedding_corpus`].
struct ClassPatterns {
    right: Vec<Vec<f32>>,
    left: Vec<Vec<f32>>,
}

impl ClassPatterns {
    fn new(dim: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || -> Vec<Vec<f32>> {
            (0..Class::COUNT).map(|_| (0..dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()).collect()
        };
        ClassPatterns { right: draw(), left: draw() }
    }
}

/// Default amplitude of the class pattern.
pub const EMBEDDING_SIGNAL: f32 = 2.0;

/// Synthetic encoder output for `per_class` clips of every class.
///
/// Each clip is unit Gaussian noise plus a per-clip speaker offset. Over a
/// random run of 40–120 frames, the middle layer of both channels carries
/// a class-specific sign pattern scaled by `signal`.
pub fn embedding_corpus(
    seed: u64,
    profile: EmbeddingProfile,
    per_class: usize,
    signal: f32,
    split: &str,
) -> Result<Vec<(String, Class, LayeredEmbedding)>> {
    let (layers, dim, frames) = (profile.layers(), profile.dim(), profile.frames());
    let patterns = ClassPatterns::new(dim, &mut rng::stream(seed, "embedding-patterns"));
    let mut rng = rng::stream(seed, &format!("embedding-{split}"));
    let noise = Normal::new(0.0f32, 1.0).expect("valid");
    let offset = Normal::new(0.0f32, 0.5).expect("valid");
    let signal_layer = layers / 2;

    let mut labels: Vec<Class> = Class::ALL.iter().flat_map(|&c| std::iter::repeat_n(c, per_class)).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, class)| {
            let mut values = vec![0.0f32; 2 * layers * dim * frames];
            let run = rng.random_range(40..=120);
            let start = rng.random_range(0..frames - run);
            for c in 0..2 {
                let pattern = if c == 0 { &patterns.left[class.index()] } else { &patterns.right[class.index()] };
                let speaker: Vec<f32> = (0..dim).map(|_| offset.sample(&mut rng)).collect();
                for l in 0..layers {
                    for r in 0..dim {
                        let base = ((c * layers + l) * dim + r) * frames;
                        for m in 0..frames {
                            let mut v = noise.sample(&mut rng) + speaker[r];
                            if l == signal_layer && (start..start + run).contains(&m) {
                                v += signal * pattern[r];
                            }
                            values[base + m] = v;
                        }
                    }
                }
            }
            let id = format!("{split}-{i:05}");
            LayeredEmbedding::new(2, layers, dim, frames, values).map(|e| (id, class, e))
        })
        .collect()
}

/// Seven votes per clip. Each annotator returns the true label with
/// probability `accuracy`, otherwise a uniformly random other label.
pub fn votes(seed: u64, clips: usize, accuracy: f64) -> (Vec<(String, Label)>, Vec<VoteRecord>) {
    let mut rng = rng::stream(seed, "votes");
    let pool: Vec<String> = (0..40).map(|i| format!("ann{i:03}")).collect();
    let mut truth = Vec::with_capacity(clips);
    let mut out = Vec::with_capacity(clips * 7);
    for c in 0..clips {
        let clip_id = format!("clip{c:05}");
        let label = Label::ALL[rng.random_range(0..Label::ALL.len())];
        let annotators: Vec<&String> = pool.choose_multiple(&mut rng, 7).collect();
        for a in annotators {
            let vote = if rng.random::<f64>() < accuracy {
                label
            } else {
                let others: Vec<Label> = Label::ALL.into_iter().filter(|&l| l != label).collect();
                others[rng.random_range(0..others.len())]
            };
            out.push(VoteRecord { clip_id: clip_id.clone(), annotator_id: a.clone(), label: vote });
        }
        truth.push((clip_id, label));
    }
    (truth, out)
}

/// Generative coefficients of the telemetry fixture.
pub struct TelemetryModel {
    pub treatment_intercept: f64,
    pub treatment_per_participant: f64,
    pub treatment_per_minute: f64,
    pub treatment_video: f64,
    pub treatment_screenshare: f64,
    pub outcome_base: f64,
    pub outcome_per_participant: f64,
    pub outcome_video: f64,
    pub outcome_screenshare: f64,
}

impl Default for TelemetryModel {
    fn default() -> Self {
        TelemetryModel {
            treatment_intercept: -1.8,
            treatment_per_participant: 0.25,
            treatment_per_minute: 0.02,
            treatment_video: 0.4,
            treatment_screenshare: 0.3,
            outcome_base: 0.40,
            outcome_per_participant: 0.010,
            outcome_video: 0.05,
            outcome_screenshare: 0.04,
        }
    }
}

/// Meetings where larger, longer, media-heavy meetings both use the feature
/// more and score higher, with an additive `effect` on the outcome rate.
pub fn telemetry(seed: u64, n: usize, effect: f64) -> Vec<MeetingRecord> {
    telemetry_with(seed, n, effect, &TelemetryModel::default())
}

pub fn telemetry_with(seed: u64, n: usize, effect: f64, g: &TelemetryModel) -> Vec<MeetingRecord> {
    let mut rng = rng::stream(seed, "telemetry");
    let log_duration = Normal::new(30f64.ln(), 0.5).expect("valid");
    (0..n)
        .map(|i| {
            let participants: u32 = rng.random_range(3..=12);
            let duration = log_duration.sample(&mut rng).exp();
            let video = rng.random::<f64>() < 0.5;
            let share = rng.random::<f64>() < 0.3;
            let (v, s) = (f64::from(u8::from(video)), f64::from(u8::from(share)));
            let p_centered = f64::from(participants) - 7.0;
            let lin = g.treatment_intercept
                + g.treatment_per_participant * p_centered
                + g.treatment_per_minute * (duration - 33.0)
                + g.treatment_video * v
                + g.treatment_screenshare * s;
            let treated = rng.random::<f64>() < 1.0 / (1.0 + (-lin).exp());
            let p = (g.outcome_base
                + g.outcome_per_participant * p_centered
                + g.outcome_video * v
                + g.outcome_screenshare * s
                + if treated { effect } else { 0.0 })
            .clamp(0.01, 0.99);
            MeetingRecord {
                meeting_id: format!("mtg{i:06}"),
                participant_count: participants,
                duration_min: (duration * 100.0).round() / 100.0,
                video_used: video,
                screenshare_used: share,
                extra: vec![],
                vrh_used: treated,
                predicted_inclusive: rng.random::<f64>() < p,
            }
        })
        .collect()
}
