use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use interrupt_core::audio::{load_stereo_wav, load_wav, write_stereo_wav, MeetingAudio};
use interrupt_core::features::{self, sie, FeatureProfile, LayeredEmbedding};
use interrupt_core::manifest::{read_jsonl, resolve, write_jsonl, ClipRecord, MeetingEntry};
use interrupt_core::overlap::{detect_candidates, export_clip, vad, CandidateClip, GateParams, RejectReason, VadParams};
use interrupt_core::{Error, Result};
use serde::Serialize;

use crate::output::{prepare_out, require_file, write_json, Csv};
use crate::FeatureArgs;

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    /// JSON-lines meeting manifest: {"meeting_id", "channels": [{"participant_id", "wav_path"}]}.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub frame_ms: u32,
    #[arg(long, default_value_t = -45.0, allow_negative_numbers = true)]
    pub energy_db: f64,
    #[arg(long, default_value_t = 5)]
    pub hangover_frames: usize,
    #[arg(long, default_value_t = 100)]
    pub min_segment_ms: u32,
    #[arg(long, default_value_t = 3.0)]
    pub pre_silence: f64,
    #[arg(long, default_value_t = 0.3)]
    pub min_utterance: f64,
}

#[derive(Debug, Default, Serialize)]
struct MeetingSummary {
    candidates: usize,
    rejected_pre_silence: usize,
    rejected_too_short: usize,
    rejected_boundary: usize,
}

#[derive(Debug, Serialize)]
struct ExtractSummary {
    meetings: usize,
    total: MeetingSummary,
    per_meeting: BTreeMap<String, MeetingSummary>,
}

pub fn extract(args: &ExtractArgs) -> Result<()> {
    require_file(&args.manifest)?;
    let mut meetings: Vec<MeetingEntry> = read_jsonl(&args.manifest)?;
    meetings.sort_by(|a, b| a.meeting_id.cmp(&b.meeting_id));
    for m in &meetings {
        if m.channels.len() < 2 {
            return Err(Error::InvalidInput(format!("meeting {} lists {} channels", m.meeting_id, m.channels.len())));
        }
        for c in &m.channels {
            require_file(&resolve(&args.manifest, &c.wav_path))?;
        }
    }
    let vad_params = VadParams {
        frame_ms: args.frame_ms,
        energy_threshold_db: args.energy_db,
        hangover_frames: args.hangover_frames,
        min_segment_ms: args.min_segment_ms,
    };
    let gates = GateParams { pre_silence_s: args.pre_silence, min_utterance_s: args.min_utterance, ..GateParams::default() };
    prepare_out(&args.out, "extract", args)?;
    let clip_dir = args.out.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;

    let mut records = Vec::new();
    let mut summary = ExtractSummary { meetings: meetings.len(), total: MeetingSummary::default(), per_meeting: BTreeMap::new() };
    for m in &meetings {
        let channels = m
            .channels
            .iter()
            .map(|c| {
                let mut ch = load_wav(resolve(&args.manifest, &c.wav_path))?;
                ch = interrupt_core::audio::AudioChannel::new(c.participant_id.clone(), ch.samples().to_vec(), ch.sample_rate())?;
                Ok(ch)
            })
            .collect::<Result<Vec<_>>>()?;
        let meeting = MeetingAudio::new(m.meeting_id.clone(), channels)?;
        let segments = meeting.channels().iter().map(|c| vad(c, &vad_params)).collect::<Result<Vec<_>>>()?;
        let report = detect_candidates(&meeting, &segments, &gates)?;
        for desc in &report.candidates {
            let clip = export_clip(desc, &meeting)?;
            let rel = PathBuf::from("clips").join(format!("{}.wav", clip.clip_id));
            write_stereo_wav(args.out.join(&rel), &clip.left, &clip.right)?;
            records.push(ClipRecord {
                clip_id: clip.clip_id,
                meeting_id: clip.meeting_id,
                interrupter_id: clip.interrupter_id,
                onset_s: clip.onset_s,
                wav_path: rel,
                label: None,
                emb_path: None,
            });
        }
        let s = MeetingSummary {
            candidates: report.candidates.len(),
            rejected_pre_silence: report.rejected(RejectReason::PreSilence),
            rejected_too_short: report.rejected(RejectReason::TooShort),
            rejected_boundary: report.rejected(RejectReason::Boundary),
        };
        summary.total.candidates += s.candidates;
        summary.total.rejected_pre_silence += s.rejected_pre_silence;
        summary.total.rejected_too_short += s.rejected_too_short;
        summary.total.rejected_boundary += s.rejected_boundary;
        summary.per_meeting.insert(m.meeting_id.clone(), s);
    }
    records.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    write_jsonl(args.out.join("clips.jsonl"), &records)?;
    write_json(&args.out.join("summary.json"), &summary)?;
    let t = &summary.total;
    println!(
        "meetings={} candidates={} boundary_rejected={} gate_rejected: pre_silence={} too_short={}",
        summary.meetings, t.candidates, t.rejected_boundary, t.rejected_pre_silence, t.rejected_too_short
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturizeArgs {
    /// Clip manifest from `extract` (or any JSON-lines clip list).
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn featurize_one(manifest: &Path, rec: &ClipRecord, profile: FeatureProfile) -> Result<LayeredEmbedding> {
    let matrix = match profile {
        FeatureProfile::Embedding(p) => return features::load_embeddings(resolve(manifest, &rec.embedding_path()), p),
        FeatureProfile::Mfcc | FeatureProfile::Spectrogram => {
            let (left, right) = load_stereo_wav(resolve(manifest, &rec.wav_path))?;
            let clip = CandidateClip::from_channels(&rec.clip_id, &rec.meeting_id, &rec.interrupter_id, rec.onset_s, left, right)?;
            if profile == FeatureProfile::Mfcc {
                features::mfcc(&clip)?
            } else {
                features::spectrogram(&clip)?
            }
        }
    };
    LayeredEmbedding::from_matrix(&matrix, 2)
}

pub fn featurize(args: &FeaturizeArgs) -> Result<()> {
    require_file(&args.manifest)?;
    let profile = args.features.feature_profile();
    let mut records: Vec<ClipRecord> = read_jsonl(&args.manifest)?;
    records.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    for rec in &records {
        let input = if profile.is_layered() { rec.embedding_path() } else { rec.wav_path.clone() };
        require_file(&resolve(&args.manifest, &input))?;
    }
    prepare_out(&args.out, "featurize", args)?;
    let feat_dir = args.out.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

    let mut shapes = Csv::create(&args.out.join("shapes.csv"), &["clip_id", "channels", "layers", "dim", "frames"])?;
    let mut out_records = Vec::with_capacity(records.len());
    for rec in &records {
        let feats = featurize_one(&args.manifest, rec, profile)?;
        feats.check_profile(profile)?;
        let rel = PathBuf::from("features").join(format!("{}.sie", rec.clip_id));
        sie::write(args.out.join(&rel), &feats)?;
        shapes.row([
            rec.clip_id.clone(),
            feats.channels().to_string(),
            feats.layers().to_string(),
            feats.dim().to_string(),
            feats.frames().to_string(),
        ])?;
        out_records.push(ClipRecord {
            wav_path: resolve(&args.manifest, &rec.wav_path),
            emb_path: Some(rel),
            ..rec.clone()
        });
    }
    shapes.finish()?;
    write_jsonl(args.out.join("features.jsonl"), &out_records)?;
    println!(
        "featurized {} clips as {profile}",
        out_records.len()
    );
    Ok(())
}
