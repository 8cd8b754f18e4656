use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use interrupt_core::audio::{write_wav, WavEncoding};
use interrupt_core::causal::{balance, estimate_impact, fit_propensity, stratify, MeetingRecord};
use interrupt_core::features::sie;
use interrupt_core::labels::{aggregate_all, fleiss_kappa, rating_table, Label, VoteRecord};
use interrupt_core::manifest::{read_jsonl, write_jsonl, ChannelEntry, ClipRecord, ConsensusRecord, ConsensusStatus, MeetingEntry};
use interrupt_core::{fixtures, Error, Result};
use serde::Serialize;

use crate::output::{csv_error, prepare_out, require_file, write_json, Csv};
use crate::ProfileArg;

fn read_votes(path: &Path) -> Result<Vec<VoteRecord>> {
    require_file(path)?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader.deserialize().map(|r| r.map_err(|e| csv_error(path, e))).collect()
}

#[derive(Debug, Args, Serialize)]
pub struct LabelsArgs {
    /// CSV with columns clip_id, annotator_id, label.
    #[arg(long)]
    pub votes: PathBuf,
    /// Optional clip manifest to annotate with the accepted labels.
    #[arg(long)]
    pub clips: Option<PathBuf>,
    /// Minimum modal-label agreement fraction.
    #[arg(long, default_value_t = 0.7)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct LabelSummary {
    clips: usize,
    accepted: usize,
    rejected: usize,
    accepted_by_label: BTreeMap<Label, usize>,
}

pub fn labels(args: &LabelsArgs) -> Result<()> {
    if !(args.threshold > 0.0 && args.threshold <= 1.0) {
        return Err(Error::InvalidInput(format!("--threshold {} outside (0, 1]", args.threshold)));
    }
    if let Some(c) = &args.clips {
        require_file(c)?;
    }
    let votes = read_votes(&args.votes)?;
    let results = aggregate_all(&votes, args.threshold)?;
    prepare_out(&args.out, "labels", args)?;

    let mut table = Csv::create(&args.out.join("consensus.csv"), &["clip_id", "status", "label", "agreement", "vote_count"])?;
    let mut summary = LabelSummary { clips: results.len(), accepted: 0, rejected: 0, accepted_by_label: BTreeMap::new() };
    for r in &results {
        let status = if r.accepted() { "accepted" } else { "rejected" };
        match r.label {
            Some(l) => {
                summary.accepted += 1;
                *summary.accepted_by_label.entry(l).or_default() += 1;
            }
            None => summary.rejected += 1,
        }
        table.row([
            r.clip_id.clone(),
            status.to_string(),
            r.label.map_or(String::new(), |l| l.as_str().to_string()),
            r.agreement_fraction.to_string(),
            r.vote_count.to_string(),
        ])?;
    }
    table.finish()?;

    if let Some(clips_path) = &args.clips {
        let by_id: BTreeMap<&str, _> = results.iter().map(|r| (r.clip_id.as_str(), r)).collect();
        let mut clips: Vec<ClipRecord> = read_jsonl(clips_path)?;
        clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let labeled: Vec<ConsensusRecord> = clips
            .into_iter()
            .filter_map(|clip| {
                let r = by_id.get(clip.clip_id.as_str())?;
                Some(ConsensusRecord {
                    clip: ClipRecord { label: r.label, ..clip },
                    status: if r.accepted() { ConsensusStatus::Accepted } else { ConsensusStatus::Rejected },
                    agreement: r.agreement_fraction,
                    vote_count: r.vote_count,
                })
            })
            .collect();
        write_jsonl(args.out.join("consensus.jsonl"), &labeled)?;
        let trainable: Vec<ClipRecord> = labeled
            .into_iter()
            .filter(|r| r.clip.label.and_then(Label::class).is_some())
            .map(|r| r.clip)
            .collect();
        write_jsonl(args.out.join("labeled.jsonl"), &trainable)?;
    }
    write_json(&args.out.join("summary.json"), &summary)?;
    println!("clips={} accepted={} rejected={}", summary.clips, summary.accepted, summary.rejected);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct KappaArgs {
    /// CSV with columns clip_id, annotator_id, label.
    #[arg(long)]
    pub votes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct KappaReport {
    kappa: f64,
    clips: usize,
    raters_per_clip: usize,
    categories: Vec<Label>,
}

pub fn kappa(args: &KappaArgs) -> Result<()> {
    let votes = read_votes(&args.votes)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &votes {
        *counts.entry(v.clip_id.as_str()).or_default() += 1;
    }
    let raters = counts.values().next().copied().ok_or_else(|| Error::InvalidInput("no votes".into()))?;
    if let Some((clip, n)) = counts.iter().find(|(_, &n)| n != raters) {
        return Err(Error::InvalidInput(format!("clip {clip} has {n} votes, expected {raters} like the others")));
    }
    let (ids, table) = rating_table(&votes, raters);
    let kappa = fleiss_kappa(&table, raters)?;
    prepare_out(&args.out, "kappa", args)?;
    write_json(
        &args.out.join("kappa.json"),
        &KappaReport { kappa, clips: ids.len(), raters_per_clip: raters, categories: Label::ALL.to_vec() },
    )?;
    println!("kappa={kappa} clips={} raters={raters}", ids.len());
    Ok(())
}

const TELEMETRY_COLUMNS: [&str; 7] = [
    "meeting_id",
    "participant_count",
    "duration_min",
    "video_used",
    "screenshare_used",
    "vrh_used",
    "predicted_inclusive",
];

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "True" | "TRUE" => Some(true),
        "0" | "false" | "False" | "FALSE" => Some(false),
        _ => None,
    }
}

/// Reads telemetry; columns beyond the fixed set become extra confounders, in file order.
pub fn read_telemetry(path: &Path) -> Result<Vec<MeetingRecord>> {
    require_file(path)?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let pos = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("{}: missing column {name}", path.display())))
    };
    let idx = TELEMETRY_COLUMNS.map(pos);
    let idx: Vec<usize> = idx.into_iter().collect::<Result<_>>()?;
    let extra_idx: Vec<usize> = (0..header.len()).filter(|i| !idx.contains(i)).collect();
    let bad = |line: usize, col: &str, v: &str| Error::InvalidInput(format!("{}:{line}: bad {col} value {v:?}", path.display()));

    let mut out = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = n + 2;
        let field = |k: usize| row.get(idx[k]).unwrap_or("");
        let flag = |k: usize| parse_bool(field(k)).ok_or_else(|| bad(line, TELEMETRY_COLUMNS[k], field(k)));
        let extra = extra_idx
            .iter()
            .map(|&i| {
                let v = row.get(i).unwrap_or("");
                v.trim().parse::<f64>().map_err(|_| bad(line, &header[i], v))
            })
            .collect::<Result<Vec<_>>>()?;
        let record = MeetingRecord {
            meeting_id: field(0).to_string(),
            participant_count: field(1).trim().parse().map_err(|_| bad(line, TELEMETRY_COLUMNS[1], field(1)))?,
            duration_min: field(2).trim().parse().map_err(|_| bad(line, TELEMETRY_COLUMNS[2], field(2)))?,
            video_used: flag(3)?,
            screenshare_used: flag(4)?,
            extra,
            vrh_used: flag(5)?,
            predicted_inclusive: flag(6)?,
        };
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

fn write_telemetry(path: &Path, records: &[MeetingRecord]) -> Result<()> {
    let mut csv = Csv::create(path, &TELEMETRY_COLUMNS)?;
    let b = |v: bool| if v { "1" } else { "0" }.to_string();
    for r in records {
        csv.row([
            r.meeting_id.clone(),
            r.participant_count.to_string(),
            r.duration_min.to_string(),
            b(r.video_used),
            b(r.screenshare_used),
            b(r.vrh_used),
            b(r.predicted_inclusive),
        ])?;
    }
    csv.finish()
}

#[derive(Debug, Args, Serialize)]
pub struct ImpactArgs {
    /// CSV with meeting_id, participant_count, duration_min, video_used,
    /// screenshare_used, vrh_used, predicted_inclusive and optional extra numeric columns.
    #[arg(long)]
    pub telemetry: PathBuf,
    /// Number of equal-size propensity bins.
    #[arg(long, default_value_t = 5)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ImpactReport {
    meetings: usize,
    treated: usize,
    bins: usize,
    delta: f64,
    se: f64,
    ci95: (f64, f64),
    naive_delta: f64,
    propensity: interrupt_core::causal::PsModel,
}

pub fn impact(args: &ImpactArgs) -> Result<()> {
    let records = read_telemetry(&args.telemetry)?;
    let model = fit_propensity(&records)?;
    let strata = stratify(&records, &model, args.bins)?;
    let est = estimate_impact(&records, &strata)?;
    prepare_out(&args.out, "impact", args)?;

    let mut table = Csv::create(
        &args.out.join("strata.csv"),
        &["bin", "n_treated", "n_control", "treated_rate", "control_rate", "delta", "used"],
    )?;
    for s in &est.per_stratum {
        table.row([
            s.bin.to_string(),
            s.n_treated.to_string(),
            s.n_control.to_string(),
            s.treated_rate.to_string(),
            s.control_rate.to_string(),
            s.delta.to_string(),
            s.used.to_string(),
        ])?;
    }
    table.finish()?;
    let mut bal = Csv::create(&args.out.join("balance.csv"), &["bin", "confounder", "smd"])?;
    for row in balance(&records, &strata) {
        bal.row([row.bin.map_or_else(|| "all".to_string(), |b| b.to_string()), row.confounder, row.smd.to_string()])?;
    }
    bal.finish()?;
    let report = ImpactReport {
        meetings: records.len(),
        treated: records.iter().filter(|r| r.vrh_used).count(),
        bins: args.bins,
        delta: est.delta,
        se: est.se,
        ci95: est.ci95,
        naive_delta: est.naive_delta,
        propensity: model,
    };
    write_json(&args.out.join("impact.json"), &report)?;
    println!(
        "delta={:.5} ci95=[{:.5}, {:.5}] naive={:.5} meetings={} bins={}",
        est.delta, est.ci95.0, est.ci95.1, est.naive_delta, report.meetings, args.bins
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct GenFixturesArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Embedding profile of the synthetic encoder corpus.
    #[arg(long, value_enum, default_value = "tiny")]
    pub profile: ProfileArg,
    /// Training clips per class.
    #[arg(long, default_value_t = 100)]
    pub train_per_class: usize,
    /// Test clips per class.
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    /// Amplitude of the class pattern in the synthetic embeddings.
    #[arg(long, default_value_t = fixtures::EMBEDDING_SIGNAL)]
    pub signal: f32,
    #[arg(long, default_value_t = 200)]
    pub vote_clips: usize,
    /// Probability that an annotator votes the true label.
    #[arg(long, default_value_t = 0.85)]
    pub annotator_accuracy: f64,
    #[arg(long, default_value_t = 50_000)]
    pub meetings: usize,
    /// Additive treatment effect on the outcome rate.
    #[arg(long, default_value_t = 0.034)]
    pub effect: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_embedding_split(root: &Path, args: &GenFixturesArgs, split: &str, per_class: usize) -> Result<usize> {
    let corpus = fixtures::embedding_corpus(args.seed, args.profile.into(), per_class, args.signal, split)?;
    mkdir(&root.join(split))?;
    let mut records = Vec::with_capacity(corpus.len());
    for (id, class, emb) in &corpus {
        let wav = PathBuf::from(split).join(format!("{id}.wav"));
        sie::write(root.join(wav.with_extension("sie")), emb)?;
        records.push(ClipRecord {
            clip_id: id.clone(),
            meeting_id: "synthetic".into(),
            interrupter_id: "right".into(),
            onset_s: 5.0,
            wav_path: wav,
            label: Some((*class).into()),
            emb_path: None,
        });
    }
    write_jsonl(root.join(format!("{split}.jsonl")), &records)?;
    Ok(records.len())
}

pub fn gen_fixtures(args: &GenFixturesArgs) -> Result<()> {
    prepare_out(&args.out, "gen-fixtures", args)?;

    let audio = args.out.join("audio");
    mkdir(&audio)?;
    let mut channels = Vec::new();
    for ch in fixtures::overlap_meeting() {
        let file = PathBuf::from(format!("{}.wav", ch.participant_id()));
        write_wav(audio.join(&file), &ch, WavEncoding::Pcm16)?;
        channels.push(ChannelEntry { participant_id: ch.participant_id().to_string(), wav_path: file });
    }
    write_jsonl(audio.join("meetings.jsonl"), &[MeetingEntry { meeting_id: "fixture".into(), channels }])?;

    let emb = args.out.join("emb");
    let n_train = write_embedding_split(&emb, args, "train", args.train_per_class)?;
    let n_test = write_embedding_split(&emb, args, "test", args.test_per_class)?;

    let votes_dir = args.out.join("votes");
    mkdir(&votes_dir)?;
    let (truth, votes) = fixtures::votes(args.seed, args.vote_clips, args.annotator_accuracy);
    let mut vcsv = Csv::create(&votes_dir.join("votes.csv"), &["clip_id", "annotator_id", "label"])?;
    for v in &votes {
        vcsv.row([v.clip_id.as_str(), v.annotator_id.as_str(), v.label.as_str()])?;
    }
    vcsv.finish()?;
    let mut tcsv = Csv::create(&votes_dir.join("truth.csv"), &["clip_id", "label"])?;
    for (id, l) in &truth {
        tcsv.row([id.as_str(), l.as_str()])?;
    }
    tcsv.finish()?;

    let tel = args.out.join("telemetry");
    mkdir(&tel)?;
    write_telemetry(&tel.join("telemetry.csv"), &fixtures::telemetry(args.seed, args.meetings, args.effect))?;

    println!(
        "fixtures: 1 meeting, {n_train} train + {n_test} test embeddings, {} voted clips, {} meetings of telemetry",
        truth.len(),
        args.meetings
    );
    Ok(())
}
