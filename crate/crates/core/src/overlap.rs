//! Voice activity detection and overlap-candidate extraction.
//!
//! A candidate is the start of an interrupter's utterance that lands on top
//! of someone else's speech. Candidates are gated on pre-onset silence,
//! utterance length and on the 10 s clip window fitting inside the meeting.

use serde::{Deserialize, Serialize};

use crate::audio::{mixdown, AudioChannel, MeetingAudio, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Length of an exported clip in samples (10 s).
pub const CLIP_SAMPLES: usize = 160_000;
/// Offset of the overlap onset inside a clip in samples (5 s).
pub const ONSET_OFFSET: usize = CLIP_SAMPLES / 2;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechSegment {
    pub start_s: f64,
    pub end_s: f64,
}

impl SpeechSegment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }
}

/// Energy VAD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadParams {
    pub frame_ms: u32,
    pub energy_threshold_db: f64,
    /// Inactive runs of at most this many frames between two active frames are bridged.
    pub hangover_frames: usize,
    pub min_segment_ms: u32,
}

impl Default for VadParams {
    fn default() -> Self {
        VadParams { frame_ms: 20, energy_threshold_db: -45.0, hangover_frames: 5, min_segment_ms: 100 }
    }
}

impl VadParams {
    fn validate(&self) -> Result<()> {
        if self.frame_ms == 0 {
            return Err(Error::InvalidInput("frame_ms must be positive".into()));
        }
        if !self.energy_threshold_db.is_finite() {
            return Err(Error::InvalidInput("energy threshold must be finite".into()));
        }
        Ok(())
    }

    pub fn frame_len(&self, sample_rate: u32) -> usize {
        (sample_rate as usize * self.frame_ms as usize / 1000).max(1)
    }
}

/// Per-frame speech activity after gap bridging and short-segment removal.
pub fn vad_frames(channel: &AudioChannel, params: &VadParams) -> Result<Vec<bool>> {
    params.validate()?;
    channel.ensure_canonical_rate()?;
    if channel.is_empty() {
        return Err(Error::InvalidAudio(format!("channel {} is empty", channel.participant_id())));
    }
    let frame_len = params.frame_len(channel.sample_rate());
    let mut active: Vec<bool> = channel
        .samples()
        .chunks(frame_len)
        .map(|frame| {
            let energy: f64 = frame.iter().map(|&s| f64::from(s) * f64::from(s)).sum::<f64>() / frame.len() as f64;
            energy > 0.0 && 10.0 * energy.log10() > params.energy_threshold_db
        })
        .collect();

    // bridge short gaps
    let mut last_active: Option<usize> = None;
    for i in 0..active.len() {
        if active[i] {
            if let Some(prev) = last_active {
                let gap = i - prev - 1;
                if gap > 0 && gap <= params.hangover_frames {
                    active[prev + 1..i].iter_mut().for_each(|a| *a = true);
                }
            }
            last_active = Some(i);
        }
    }

    // drop short runs
    let mut i = 0;
    while i < active.len() {
        if !active[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < active.len() && active[i] {
            i += 1;
        }
        if ((i - start) as u64) * u64::from(params.frame_ms) < u64::from(params.min_segment_ms) {
            active[start..i].iter_mut().for_each(|a| *a = false);
        }
    }
    Ok(active)
}

/// Converts a frame activity mask into sorted, disjoint segments.
pub fn frames_to_segments(active: &[bool], frame_s: f64, duration_s: f64) -> Vec<SpeechSegment> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < active.len() {
        if active[i] {
            let start = i;
            while i < active.len() && active[i] {
                i += 1;
            }
            out.push(SpeechSegment {
                start_s: start as f64 * frame_s,
                end_s: (i as f64 * frame_s).min(duration_s),
            });
        } else {
            i += 1;
        }
    }
    out
}

/// Runs the energy VAD over one channel.
pub fn vad(channel: &AudioChannel, params: &VadParams) -> Result<Vec<SpeechSegment>> {
    let active = vad_frames(channel, params)?;
    let frame_s = params.frame_len(channel.sample_rate()) as f64 / f64::from(channel.sample_rate());
    Ok(frames_to_segments(&active, frame_s, channel.duration_s()))
}

/// Candidate gating rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// Required silence of the interrupter before the onset.
    pub pre_silence_s: f64,
    /// Minimum remaining length of the interrupter's utterance from the onset.
    pub min_utterance_s: f64,
    /// Half of the clip length; the window `[onset - half, onset + half)` must fit.
    pub half_window_s: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams { pre_silence_s: 3.0, min_utterance_s: 0.3, half_window_s: 5.0 }
    }
}

/// A gated overlap onset, not yet materialized as audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDescriptor {
    pub clip_id: String,
    pub meeting_id: String,
    pub interrupter_index: usize,
    pub interrupter_id: String,
    pub onset_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    PreSilence,
    TooShort,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub interrupter_index: usize,
    pub onset_s: f64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub candidates: Vec<CandidateDescriptor>,
    pub rejections: Vec<Rejection>,
}

impl DetectionReport {
    pub fn rejected(&self, reason: RejectReason) -> usize {
        self.rejections.iter().filter(|r| r.reason == reason).count()
    }
}

pub fn clip_id(meeting_id: &str, interrupter_id: &str, onset_s: f64) -> String {
    format!("{meeting_id}-{interrupter_id}-{:09}", (onset_s * 1000.0).round() as u64)
}

/// Earliest instant inside `seg` where any segment of another channel is active.
fn overlap_onset(seg: &SpeechSegment, others: &[&[SpeechSegment]]) -> Option<f64> {
    others
        .iter()
        .flat_map(|segs| segs.iter())
        .filter(|o| o.start_s < seg.end_s && o.end_s > seg.start_s)
        .map(|o| o.start_s.max(seg.start_s))
        .min_by(f64::total_cmp)
}

fn onset_index(onset_s: f64, sample_rate: u32) -> usize {
    (onset_s * f64::from(sample_rate)).round() as usize
}

/// Finds gated overlap onsets, one per (interrupter segment, channel).
pub fn detect_candidates(
    meeting: &MeetingAudio,
    segments: &[Vec<SpeechSegment>],
    gates: &GateParams,
) -> Result<DetectionReport> {
    if segments.len() != meeting.channels().len() {
        return Err(Error::Shape(format!(
            "{} segment lists for {} channels",
            segments.len(),
            meeting.channels().len()
        )));
    }
    let rate = meeting.sample_rate();
    let half = (gates.half_window_s * f64::from(rate)).round() as usize;
    let mut report = DetectionReport::default();

    for (i, own) in segments.iter().enumerate() {
        let others: Vec<&[SpeechSegment]> = segments
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, s)| s.as_slice())
            .collect();
        for seg in own {
            let Some(t) = overlap_onset(seg, &others) else { continue };
            let reject = |reason| Rejection { interrupter_index: i, onset_s: t, reason };

            let spoke_before = own
                .iter()
                .any(|s| s.start_s < t - TIME_EPS && s.end_s > t - gates.pre_silence_s + TIME_EPS);
            if spoke_before {
                report.rejections.push(reject(RejectReason::PreSilence));
                continue;
            }
            if seg.end_s - t + TIME_EPS < gates.min_utterance_s {
                report.rejections.push(reject(RejectReason::TooShort));
                continue;
            }
            let idx = onset_index(t, rate);
            if idx < half || idx + half > meeting.len() {
                report.rejections.push(reject(RejectReason::Boundary));
                continue;
            }
            let interrupter_id = meeting.channels()[i].participant_id().to_string();
            report.candidates.push(CandidateDescriptor {
                clip_id: clip_id(meeting.meeting_id(), &interrupter_id, t),
                meeting_id: meeting.meeting_id().to_string(),
                interrupter_index: i,
                interrupter_id,
                onset_s: t,
            });
        }
    }
    report
        .candidates
        .sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.interrupter_index.cmp(&b.interrupter_index)));
    report
        .rejections
        .sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.interrupter_index.cmp(&b.interrupter_index)));
    Ok(report)
}

/// Checks a descriptor against all four gates post hoc. Returns the first failing gate.
pub fn check_gates(
    desc: &CandidateDescriptor,
    segments: &[Vec<SpeechSegment>],
    meeting_len: usize,
    sample_rate: u32,
    gates: &GateParams,
) -> Option<&'static str> {
    let t = desc.onset_s;
    let i = desc.interrupter_index;
    let others_active = segments
        .iter()
        .enumerate()
        .any(|(j, segs)| j != i && segs.iter().any(|s| s.contains(t)));
    if !others_active {
        return Some("overlap");
    }
    if segments[i].iter().any(|s| s.start_s < t - TIME_EPS && s.end_s > t - gates.pre_silence_s + TIME_EPS) {
        return Some("pre_silence");
    }
    match segments[i].iter().find(|s| s.contains(t)) {
        Some(s) if s.end_s - t + TIME_EPS >= gates.min_utterance_s => {}
        _ => return Some("min_utterance"),
    }
    let half = (gates.half_window_s * f64::from(sample_rate)).round() as usize;
    let idx = onset_index(t, sample_rate);
    if idx < half || idx + half > meeting_len {
        return Some("boundary");
    }
    None
}

/// A 10 s stereo clip centred on an overlap onset.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateClip {
    pub clip_id: String,
    pub meeting_id: String,
    pub interrupter_id: String,
    pub onset_s: f64,
    /// Mixdown of every other participant.
    pub left: AudioChannel,
    /// The interrupter alone.
    pub right: AudioChannel,
}

impl CandidateClip {
    pub const DURATION_S: f64 = 10.0;

    /// Wraps already-extracted channels, checking the clip length contract.
    pub fn from_channels(
        clip_id: impl Into<String>,
        meeting_id: impl Into<String>,
        interrupter_id: impl Into<String>,
        onset_s: f64,
        left: AudioChannel,
        right: AudioChannel,
    ) -> Result<Self> {
        for c in [&left, &right] {
            c.ensure_canonical_rate()?;
            if c.len() != CLIP_SAMPLES {
                return Err(Error::Shape(format!("clip channel has {} samples, expected {CLIP_SAMPLES}", c.len())));
            }
        }
        Ok(CandidateClip {
            clip_id: clip_id.into(),
            meeting_id: meeting_id.into(),
            interrupter_id: interrupter_id.into(),
            onset_s,
            left,
            right,
        })
    }
}

/// Cuts the clip window out of the meeting: right = interrupter, left = mix of the rest.
pub fn export_clip(desc: &CandidateDescriptor, meeting: &MeetingAudio) -> Result<CandidateClip> {
    if meeting.sample_rate() != SAMPLE_RATE {
        return Err(Error::SampleRate { found: meeting.sample_rate(), expected: SAMPLE_RATE });
    }
    let channels = meeting.channels();
    if desc.interrupter_index >= channels.len() {
        return Err(Error::InvalidInput(format!("no channel {}", desc.interrupter_index)));
    }
    let idx = onset_index(desc.onset_s, meeting.sample_rate());
    if idx < ONSET_OFFSET || idx + ONSET_OFFSET > meeting.len() {
        return Err(Error::OutOfBounds {
            start: idx.saturating_sub(ONSET_OFFSET),
            end: idx + ONSET_OFFSET,
            len: meeting.len(),
        });
    }
    let (start, end) = (idx - ONSET_OFFSET, idx + ONSET_OFFSET);
    let right = channels[desc.interrupter_index].window(start, end)?;
    let others = channels
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != desc.interrupter_index)
        .map(|(_, c)| c.window(start, end))
        .collect::<Result<Vec<_>>>()?;
    let left = mixdown(&others.iter().collect::<Vec<_>>())?;
    CandidateClip::from_channels(
        desc.clip_id.clone(),
        desc.meeting_id.clone(),
        desc.interrupter_id.clone(),
        desc.onset_s,
        left,
        right,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorOutcome {
    Overtake,
    NoOvertake,
}

/// Minimum solo-speech stretch that counts as taking the floor.
pub const FLOOR_HOLD_S: f64 = 1.5;

/// Weak label: did the interrupter hold ≥ 1.5 s of solo speech after the onset?
pub fn heuristic_floor_outcome(clip: &CandidateClip, params: &VadParams) -> Result<FloorOutcome> {
    let right = vad_frames(&clip.right, params)?;
    let left = vad_frames(&clip.left, params)?;
    let frame_len = params.frame_len(clip.right.sample_rate());
    let frame_s = frame_len as f64 / f64::from(clip.right.sample_rate());
    let first = ONSET_OFFSET / frame_len;

    let mut run = 0usize;
    let mut best = 0usize;
    for (r, l) in right.iter().zip(&left).skip(first) {
        if *r && !*l {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    Ok(if best as f64 * frame_s + TIME_EPS >= FLOOR_HOLD_S {
        FloorOutcome::Overtake
    } else {
        FloorOutcome::NoOvertake
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len_s: f64, spans: &[(f64, f64)]) -> AudioChannel {
        let n = (len_s * 16000.0).round() as usize;
        let mut v = vec![0.0f32; n];
        for &(a, b) in spans {
            let (a, b) = ((a * 16000.0).round() as usize, (b * 16000.0).round() as usize);
            for (i, s) in v.iter_mut().enumerate().take(b).skip(a) {
                *s = (0.5 * (2.0 * std::f64::consts::PI * 300.0 * i as f64 / 16000.0).sin()) as f32;
            }
        }
        AudioChannel::new("p", v, SAMPLE_RATE).unwrap()
    }

    fn seg(a: f64, b: f64) -> SpeechSegment {
        SpeechSegment { start_s: a, end_s: b }
    }

    fn named(id: &str, c: AudioChannel) -> AudioChannel {
        AudioChannel::new(id, c.samples().to_vec(), SAMPLE_RATE).unwrap()
    }

    #[test]
    fn vad_silence_and_saturation() {
        let p = VadParams::default();
        assert!(vad(&AudioChannel::silence("s", 32000), &p).unwrap().is_empty());
        let full: Vec<f32> = (0..32000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let segs = vad(&AudioChannel::new("t", full, SAMPLE_RATE).unwrap(), &p).unwrap();
        assert_eq!(segs, vec![seg(0.0, 2.0)]);
        assert!(vad(&AudioChannel::silence("e", 0), &p).is_err());
    }

    #[test]
    fn vad_tone_boundaries_within_one_frame() {
        let segs = vad(&tone(3.0, &[(1.0, 2.0)]), &VadParams::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert!((segs[0].start_s - 1.0).abs() <= 0.02);
        assert!((segs[0].end_s - 2.0).abs() <= 0.02);
    }

    #[test]
    fn vad_bridges_gaps_and_drops_blips() {
        let p = VadParams::default();
        // 60 ms gap is bridged (3 frames <= 5)
        let segs = vad(&tone(3.0, &[(0.5, 1.0), (1.06, 1.5)]), &p).unwrap();
        assert_eq!(segs.len(), 1);
        // 200 ms gap is not
        let segs = vad(&tone(3.0, &[(0.5, 1.0), (1.2, 1.5)]), &p).unwrap();
        assert_eq!(segs.len(), 2);
        // 40 ms blip is shorter than the 100 ms minimum
        assert!(vad(&tone(3.0, &[(1.0, 1.04)]), &p).unwrap().is_empty());
    }

    #[test]
    fn vad_is_idempotent() {
        let c = tone(4.0, &[(0.3, 1.1), (2.0, 3.7)]);
        let p = VadParams::default();
        assert_eq!(vad(&c, &p).unwrap(), vad(&c, &p).unwrap());
    }

    fn meeting(len_s: f64, n: usize) -> MeetingAudio {
        let chans = (0..n).map(|i| named(&format!("p{i}"), tone(len_s, &[]))).collect();
        MeetingAudio::new("m", chans).unwrap()
    }

    #[test]
    fn short_interruption_rejected() {
        let m = meeting(30.0, 2);
        let segs = vec![vec![seg(10.0, 20.0)], vec![seg(15.0, 15.2)]];
        let r = detect_candidates(&m, &segs, &GateParams::default()).unwrap();
        assert!(r.candidates.is_empty());
        assert_eq!(r.rejected(RejectReason::TooShort), 1);
    }

    #[test]
    fn insufficient_pre_silence_rejected() {
        let m = meeting(30.0, 2);
        let segs = vec![vec![seg(10.0, 20.0)], vec![seg(11.0, 12.5), seg(15.0, 16.0)]];
        let r = detect_candidates(&m, &segs, &GateParams::default()).unwrap();
        // p1 at 11.0 passes; p1 at 15.0 follows only 2.5 s of silence; p0 was
        // already talking when p1 joined at 11.0
        assert_eq!(r.candidates.len(), 1);
        assert!((r.candidates[0].onset_s - 11.0).abs() < 1e-12);
        assert_eq!(r.rejected(RejectReason::PreSilence), 2);
        assert!(r.rejections.iter().any(|x| x.interrupter_index == 1 && x.onset_s == 15.0));
    }

    #[test]
    fn passing_candidate_and_window() {
        let m = meeting(40.0, 2);
        let segs = vec![vec![seg(18.0, 30.0)], vec![seg(10.0, 16.0), seg(20.0, 21.0)]];
        let r = detect_candidates(&m, &segs, &GateParams::default()).unwrap();
        assert_eq!(r.candidates.len(), 1);
        let c = &r.candidates[0];
        assert_eq!(c.interrupter_index, 1);
        assert_eq!(c.onset_s, 20.0);
        assert_eq!(c.clip_id, "m-p1-000020000");
        assert_eq!(check_gates(c, &segs, m.len(), 16000, &GateParams::default()), None);
    }

    #[test]
    fn boundary_candidates_dropped() {
        let m = meeting(12.0, 2);
        let segs = vec![vec![seg(0.0, 12.0)], vec![seg(3.5, 5.0), seg(9.0, 10.0)]];
        let r = detect_candidates(&m, &segs, &GateParams::default()).unwrap();
        assert!(r.candidates.is_empty());
        assert_eq!(r.rejected(RejectReason::Boundary), 2);
    }

    #[test]
    fn simultaneous_interrupters_give_one_candidate_each() {
        let m = meeting(30.0, 3);
        let segs = vec![vec![seg(5.0, 25.0)], vec![seg(12.0, 13.0)], vec![seg(12.0, 14.0)]];
        let r = detect_candidates(&m, &segs, &GateParams::default()).unwrap();
        let ids: Vec<usize> = r.candidates.iter().map(|c| c.interrupter_index).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn export_indices_and_mixdown() {
        let n = 30 * 16000;
        let ramp = |k: f32| AudioChannel::new("x", (0..n).map(|i| ((i % 1000) as f32 / 1000.0) * k).collect(), SAMPLE_RATE).unwrap();
        let chans = vec![
            named("a", ramp(0.5)),
            named("b", ramp(-0.25)),
            named("c", AudioChannel::silence("c", n)),
            named("d", AudioChannel::silence("d", n)),
        ];
        let m = MeetingAudio::new("m", chans).unwrap();
        let desc = CandidateDescriptor {
            clip_id: "x".into(),
            meeting_id: "m".into(),
            interrupter_index: 1,
            interrupter_id: "b".into(),
            onset_s: 20.0,
        };
        let clip = export_clip(&desc, &m).unwrap();
        assert_eq!(clip.left.len(), CLIP_SAMPLES);
        assert_eq!(clip.right.len(), CLIP_SAMPLES);
        let start = 15 * 16000;
        assert_eq!(clip.right.samples(), &m.channels()[1].samples()[start..start + CLIP_SAMPLES]);
        // others: a plus two silent tracks == a
        assert_eq!(clip.left.samples(), &m.channels()[0].samples()[start..start + CLIP_SAMPLES]);
        // onset sits at sample 80000 of the clip
        assert_eq!(clip.right.samples()[ONSET_OFFSET], m.channels()[1].samples()[20 * 16000]);

        let two = MeetingAudio::new("m", m.channels()[..2].to_vec()).unwrap();
        let clip = export_clip(&desc, &two).unwrap();
        assert_eq!(clip.left.samples(), &two.channels()[0].samples()[start..start + CLIP_SAMPLES]);

        let late = CandidateDescriptor { onset_s: 27.0, ..desc };
        assert!(matches!(export_clip(&late, &m), Err(Error::OutOfBounds { .. })));
    }

    fn clip(left: AudioChannel, right: AudioChannel) -> CandidateClip {
        CandidateClip::from_channels("c", "m", "r", 5.0, left, right).unwrap()
    }

    #[test]
    fn floor_heuristic() {
        let p = VadParams::default();
        let silent = tone(10.0, &[]);
        let talking = tone(10.0, &[(0.0, 10.0)]);
        assert_eq!(heuristic_floor_outcome(&clip(talking.clone(), silent.clone()), &p).unwrap(), FloorOutcome::NoOvertake);

        let right = tone(10.0, &[(6.0, 9.0)]);
        let left = tone(10.0, &[(0.0, 5.5)]);
        assert_eq!(heuristic_floor_outcome(&clip(left, right), &p).unwrap(), FloorOutcome::Overtake);

        let right = tone(10.0, &[(5.0, 5.4)]);
        assert_eq!(heuristic_floor_outcome(&clip(talking, right), &p).unwrap(), FloorOutcome::NoOvertake);
    }
}
