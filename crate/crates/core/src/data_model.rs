//! Domain types and file ingestion.
//!
//! Input files are an AU trace CSV (one row per frame), an annotations JSON
//! (one entry per session), and a scores CSV (one row per image). Loading
//! validates all cross-references up front; the resulting [`Cohort`] is
//! immutable and safe to share across workers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_filter::FilterThresholds;

/// The 12 trained action units. No other AU index is representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AuId {
    Au1,
    Au2,
    Au4,
    Au5,
    Au6,
    Au9,
    Au12,
    Au15,
    Au17,
    Au20,
    Au25,
    Au26,
}

impl AuId {
    pub const ALL: [AuId; 12] = [
        AuId::Au1,
        AuId::Au2,
        AuId::Au4,
        AuId::Au5,
        AuId::Au6,
        AuId::Au9,
        AuId::Au12,
        AuId::Au15,
        AuId::Au17,
        AuId::Au20,
        AuId::Au25,
        AuId::Au26,
    ];

    /// FACS index (1, 2, 4, ...).
    pub fn number(self) -> u8 {
        match self {
            AuId::Au1 => 1,
            AuId::Au2 => 2,
            AuId::Au4 => 4,
            AuId::Au5 => 5,
            AuId::Au6 => 6,
            AuId::Au9 => 9,
            AuId::Au12 => 12,
            AuId::Au15 => 15,
            AuId::Au17 => 17,
            AuId::Au20 => 20,
            AuId::Au25 => 25,
            AuId::Au26 => 26,
        }
    }

    /// Position in [`AuId::ALL`]; used to index per-AU arrays.
    pub fn slot(self) -> usize {
        AuId::ALL.iter().position(|&a| a == self).unwrap()
    }

    /// CSV column name, e.g. `au4`.
    pub fn column(self) -> String {
        format!("au{}", self.number())
    }
}

impl fmt::Display for AuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AU{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    Baseline,
    Reaction,
}

impl ClipKind {
    pub fn label(self) -> &'static str {
        match self {
            ClipKind::Baseline => "baseline",
            ClipKind::Reaction => "reaction",
        }
    }
}

/// One frame of an AU trace. Every field may be missing (no detected face);
/// the frame filter treats any missing signal as invalid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    /// Indexed by [`AuId::slot`].
    pub au_intensities: [Option<f64>; 12],
    pub fdcs: Option<f64>,
    pub d_eye_edge_left: Option<f64>,
    pub d_eye_edge_right: Option<f64>,
    pub d_nostrils_eyes: Option<f64>,
    pub d_eyes: Option<f64>,
}

impl FrameRecord {
    pub fn intensity(&self, au: AuId) -> Option<f64> {
        self.au_intensities[au.slot()]
    }

    fn validate(&self, loc: &str) -> Result<()> {
        if let Some(f) = self.fdcs {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::data_at(format!("fdcs {f} out of [0,1]"), loc));
            }
        }
        for (name, v) in [
            ("d_eye_edge_left", self.d_eye_edge_left),
            ("d_eye_edge_right", self.d_eye_edge_right),
            ("d_nostrils_eyes", self.d_nostrils_eyes),
        ] {
            if let Some(d) = v {
                if d < 0.0 || !d.is_finite() {
                    return Err(Error::data_at(format!("{name} {d} must be >= 0"), loc));
                }
            }
        }
        if let Some(d) = self.d_eyes {
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::data_at(format!("d_eyes {d} must be > 0"), loc));
            }
        }
        Ok(())
    }
}

/// Per-frame AU intensity estimates for one 5-second clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuTrace {
    pub participant_id: String,
    pub session_id: String,
    pub image_id: String,
    pub clip_kind: ClipKind,
    pub fps: u32,
    pub frames: Vec<FrameRecord>,
}

impl AuTrace {
    pub fn key(&self) -> (String, String, String, ClipKind) {
        (
            self.participant_id.clone(),
            self.session_id.clone(),
            self.image_id.clone(),
            self.clip_kind,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps == 0 {
            return Err(Error::data(format!(
                "trace {}/{}/{}: fps must be positive",
                self.participant_id, self.session_id, self.image_id
            )));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.frame_index != i {
                return Err(Error::data(format!(
                    "trace {}/{}/{}: frame indices not contiguous from 0 (got {} at position {})",
                    self.participant_id, self.session_id, self.image_id, frame.frame_index, i
                )));
            }
            frame.validate(&format!(
                "{}/{}/{} frame {}",
                self.participant_id, self.session_id, self.image_id, i
            ))?;
        }
        Ok(())
    }
}

pub const EMOTIONS: [&str; 6] = [
    "disappointed",
    "satisfied",
    "surprised",
    "disgusted",
    "amused",
    "scared",
];

/// One image's manual feedback and its within-session ranking position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub overall: u8,
    pub alignment: u8,
    pub fidelity: u8,
    pub emotions: BTreeSet<String>,
    pub rank: u8,
}

impl AnnotationRecord {
    fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("overall", self.overall),
            ("alignment", self.alignment),
            ("fidelity", self.fidelity),
        ] {
            if !(1..=7).contains(&r) {
                return Err(Error::data(format!(
                    "image {}: {name} rating {r} out of 1..7",
                    self.image_id
                )));
            }
        }
        if !(1..=5).contains(&self.rank) {
            return Err(Error::data(format!(
                "image {}: rank {} out of 1..5",
                self.image_id, self.rank
            )));
        }
        for e in &self.emotions {
            if !EMOTIONS.contains(&e.as_str()) {
                return Err(Error::data(format!(
                    "image {}: unknown emotion {e:?}",
                    self.image_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAnnotations {
    pub participant_id: String,
    pub session_id: String,
    #[serde(default)]
    pub prompt: String,
    pub images: Vec<AnnotationRecord>,
}

impl SessionAnnotations {
    fn validate(&self) -> Result<()> {
        let mut ranks = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for img in &self.images {
            img.validate()?;
            if !ranks.insert(img.rank) {
                return Err(Error::data(format!(
                    "session {}/{}: duplicate rank {}",
                    self.participant_id, self.session_id, img.rank
                )));
            }
            if !ids.insert(img.image_id.clone()) {
                return Err(Error::data(format!(
                    "session {}/{}: duplicate image_id {}",
                    self.participant_id, self.session_id, img.image_id
                )));
            }
        }
        Ok(())
    }
}

pub const SCORE_MODELS: [&str; 6] = [
    "clip_score",
    "aesthetic_score",
    "blip_score",
    "imagereward_score",
    "pickscore",
    "hpsv2_score",
];

/// External model scores for one image; any may be missing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub clip_score: Option<f64>,
    pub aesthetic_score: Option<f64>,
    pub blip_score: Option<f64>,
    pub imagereward_score: Option<f64>,
    pub pickscore: Option<f64>,
    pub hpsv2_score: Option<f64>,
}

impl ModelScores {
    pub fn get(&self, model: &str) -> Option<f64> {
        match model {
            "clip_score" => self.clip_score,
            "aesthetic_score" => self.aesthetic_score,
            "blip_score" => self.blip_score,
            "imagereward_score" => self.imagereward_score,
            "pickscore" => self.pickscore,
            "hpsv2_score" => self.hpsv2_score,
            _ => None,
        }
    }

    pub fn set(&mut self, model: &str, value: Option<f64>) {
        match model {
            "clip_score" => self.clip_score = value,
            "aesthetic_score" => self.aesthetic_score = value,
            "blip_score" => self.blip_score = value,
            "imagereward_score" => self.imagereward_score = value,
            "pickscore" => self.pickscore = value,
            "hpsv2_score" => self.hpsv2_score = value,
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub by_image: BTreeMap<String, ModelScores>,
}

impl ScoreTable {
    pub fn get(&self, image_id: &str, model: &str) -> Option<f64> {
        self.by_image.get(image_id).and_then(|s| s.get(model))
    }
}

/// A validated, immutable dataset: traces, annotations, and scores with all
/// cross-references resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub traces: Vec<AuTrace>,
    pub sessions: Vec<SessionAnnotations>,
    pub scores: ScoreTable,
    pub thresholds: FilterThresholds,
}

impl Cohort {
    pub fn participants(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .iter()
            .map(|s| s.participant_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn annotation(&self, participant_id: &str, session_id: &str, image_id: &str) -> Option<&AnnotationRecord> {
        self.sessions
            .iter()
            .find(|s| s.participant_id == participant_id && s.session_id == session_id)
            .and_then(|s| s.images.iter().find(|i| i.image_id == image_id))
    }

    pub fn validate(&self) -> Result<()> {
        let mut session_keys = BTreeSet::new();
        for session in &self.sessions {
            session.validate()?;
            if !session_keys.insert((session.participant_id.clone(), session.session_id.clone())) {
                return Err(Error::data(format!(
                    "duplicate session {}/{}",
                    session.participant_id, session.session_id
                )));
            }
        }

        let annotated: BTreeSet<(String, String, String)> = self
            .sessions
            .iter()
            .flat_map(|s| {
                s.images.iter().map(|i| {
                    (
                        s.participant_id.clone(),
                        s.session_id.clone(),
                        i.image_id.clone(),
                    )
                })
            })
            .collect();

        let mut trace_keys = BTreeSet::new();
        for trace in &self.traces {
            trace.validate()?;
            if !trace_keys.insert(trace.key()) {
                return Err(Error::data(format!(
                    "duplicate key {}/{}/{}/{}",
                    trace.participant_id,
                    trace.session_id,
                    trace.image_id,
                    trace.clip_kind.label()
                )));
            }
            let r = (
                trace.participant_id.clone(),
                trace.session_id.clone(),
                trace.image_id.clone(),
            );
            if !annotated.contains(&r) {
                return Err(Error::data(format!(
                    "unresolved reference: trace {}/{}/{} has no annotation",
                    r.0, r.1, r.2
                )));
            }
        }

        // Every reaction clip needs its paired baseline clip and vice versa.
        for trace in &self.traces {
            let pair = match trace.clip_kind {
                ClipKind::Baseline => ClipKind::Reaction,
                ClipKind::Reaction => ClipKind::Baseline,
            };
            let paired = (
                trace.participant_id.clone(),
                trace.session_id.clone(),
                trace.image_id.clone(),
                pair,
            );
            if !trace_keys.contains(&paired) {
                return Err(Error::data(format!(
                    "unresolved reference: {} clip {}/{}/{} has no {} clip",
                    trace.clip_kind.label(),
                    trace.participant_id,
                    trace.session_id,
                    trace.image_id,
                    pair.label()
                )));
            }
        }

        let annotated_images: BTreeSet<&str> = self
            .sessions
            .iter()
            .flat_map(|s| s.images.iter().map(|i| i.image_id.as_str()))
            .collect();
        for image_id in self.scores.by_image.keys() {
            if !annotated_images.contains(image_id.as_str()) {
                return Err(Error::data(format!(
                    "unresolved reference: score row for unknown image_id {image_id}"
                )));
            }
        }

        Ok(())
    }
}

/// Input file locations for [`load_cohort`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortPaths {
    pub traces: String,
    pub annotations: String,
    pub scores: String,
}

const TRACE_HEADER: [&str; 23] = [
    "participant_id",
    "session_id",
    "image_id",
    "clip_kind",
    "fps",
    "frame_index",
    "au1",
    "au2",
    "au4",
    "au5",
    "au6",
    "au9",
    "au12",
    "au15",
    "au17",
    "au20",
    "au25",
    "au26",
    "fdcs",
    "d_eye_edge_left",
    "d_eye_edge_right",
    "d_nostrils_eyes",
    "d_eyes",
];

fn parse_opt_f64(field: &str, name: &str, loc: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::data_at(format!("malformed {name} value {field:?}"), loc))
}

/// Loads and validates a cohort from the trace CSV, annotations JSON, and
/// scores CSV.
pub fn load_cohort(paths: &CohortPaths, thresholds: FilterThresholds) -> Result<Cohort> {
    thresholds.validate()?;
    let traces = load_traces(Path::new(&paths.traces))?;
    let sessions = load_annotations(Path::new(&paths.annotations))?;
    let scores = load_scores(Path::new(&paths.scores))?;
    let cohort = Cohort {
        traces,
        sessions,
        scores,
        thresholds,
    };
    cohort.validate()?;
    Ok(cohort)
}

fn load_traces(path: &Path) -> Result<Vec<AuTrace>> {
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    {
        let header = reader.headers()?;
        let got: Vec<&str> = header.iter().collect();
        if got != TRACE_HEADER {
            return Err(Error::data_at(
                format!("unexpected trace header {got:?}"),
                format!("{file}:1"),
            ));
        }
    }

    // Key -> (fps, frames by index). BTreeMap keeps load order deterministic.
    type Key = (String, String, String, ClipKind);
    let mut groups: BTreeMap<Key, (u32, BTreeMap<usize, FrameRecord>)> = BTreeMap::new();

    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let loc = format!("{file}:{}", row_no + 2);
        let field = |i: usize| record.get(i).unwrap_or("");
        let clip_kind = match field(3) {
            "baseline" => ClipKind::Baseline,
            "reaction" => ClipKind::Reaction,
            other => {
                return Err(Error::data_at(
                    format!("malformed clip_kind {other:?}"),
                    loc,
                ))
            }
        };
        let fps: i64 = field(4)
            .parse()
            .map_err(|_| Error::data_at(format!("malformed fps {:?}", field(4)), loc.clone()))?;
        if fps <= 0 {
            return Err(Error::data_at(format!("fps {fps} must be positive"), loc));
        }
        let frame_index: usize = field(5).parse().map_err(|_| {
            Error::data_at(format!("malformed frame_index {:?}", field(5)), loc.clone())
        })?;
        let mut au_intensities = [None; 12];
        for (slot, au) in AuId::ALL.iter().enumerate() {
            au_intensities[slot] = parse_opt_f64(field(6 + slot), &au.column(), &loc)?;
        }
        let frame = FrameRecord {
            frame_index,
            au_intensities,
            fdcs: parse_opt_f64(field(18), "fdcs", &loc)?,
            d_eye_edge_left: parse_opt_f64(field(19), "d_eye_edge_left", &loc)?,
            d_eye_edge_right: parse_opt_f64(field(20), "d_eye_edge_right", &loc)?,
            d_nostrils_eyes: parse_opt_f64(field(21), "d_nostrils_eyes", &loc)?,
            d_eyes: parse_opt_f64(field(22), "d_eyes", &loc)?,
        };
        frame.validate(&loc)?;

        let key: Key = (
            field(0).to_string(),
            field(1).to_string(),
            field(2).to_string(),
            clip_kind,
        );
        let entry = groups.entry(key.clone()).or_insert((fps as u32, BTreeMap::new()));
        if entry.0 != fps as u32 {
            return Err(Error::data_at(
                format!("inconsistent fps within clip {}/{}/{}", key.0, key.1, key.2),
                loc,
            ));
        }
        if entry.1.insert(frame_index, frame).is_some() {
            return Err(Error::data_at(
                format!(
                    "duplicate key: frame {frame_index} repeated in clip {}/{}/{}",
                    key.0, key.1, key.2
                ),
                loc,
            ));
        }
    }

    let mut traces = Vec::new();
    for ((participant_id, session_id, image_id, clip_kind), (fps, frames)) in groups {
        let trace = AuTrace {
            participant_id,
            session_id,
            image_id,
            clip_kind,
            fps,
            frames: frames.into_values().collect(),
        };
        trace.validate()?;
        traces.push(trace);
    }
    Ok(traces)
}

fn load_annotations(path: &Path) -> Result<Vec<SessionAnnotations>> {
    let text = std::fs::read_to_string(path)?;
    let sessions: Vec<SessionAnnotations> = serde_json::from_str(&text)?;
    Ok(sessions)
}

fn load_scores(path: &Path) -> Result<ScoreTable> {
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    if header.first().map(String::as_str) != Some("image_id") {
        return Err(Error::data_at(
            "scores CSV must start with an image_id column",
            format!("{file}:1"),
        ));
    }
    for col in &header[1..] {
        if !SCORE_MODELS.contains(&col.as_str()) {
            return Err(Error::data_at(
                format!("unknown score column {col:?}"),
                format!("{file}:1"),
            ));
        }
    }
    let mut table = ScoreTable::default();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let loc = format!("{file}:{}", row_no + 2);
        let image_id = record.get(0).unwrap_or("").to_string();
        if image_id.is_empty() {
            return Err(Error::data_at("empty image_id", loc));
        }
        let mut scores = ModelScores::default();
        for (i, col) in header[1..].iter().enumerate() {
            scores.set(col, parse_opt_f64(record.get(i + 1).unwrap_or(""), col, &loc)?);
        }
        if table.by_image.insert(image_id.clone(), scores).is_some() {
            return Err(Error::data_at(
                format!("duplicate key: score row for image {image_id}"),
                loc,
            ));
        }
    }
    Ok(table)
}

fn fmt_opt(v: Option<f64>) -> String {
    // Shortest round-trippable form keeps files byte-stable across runs.
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes a cohort back to the three input files, byte-deterministically.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<CohortPaths> {
    std::fs::create_dir_all(dir)?;
    let paths = CohortPaths {
        traces: dir.join("traces.csv").display().to_string(),
        annotations: dir.join("annotations.json").display().to_string(),
        scores: dir.join("scores.csv").display().to_string(),
    };

    let mut writer = csv::Writer::from_path(&paths.traces)?;
    writer.write_record(TRACE_HEADER)?;
    let mut traces: Vec<&AuTrace> = cohort.traces.iter().collect();
    traces.sort_by_key(|t| t.key());
    for trace in traces {
        for frame in &trace.frames {
            let mut row = vec![
                trace.participant_id.clone(),
                trace.session_id.clone(),
                trace.image_id.clone(),
                trace.clip_kind.label().to_string(),
                trace.fps.to_string(),
                frame.frame_index.to_string(),
            ];
            for slot in 0..12 {
                row.push(fmt_opt(frame.au_intensities[slot]));
            }
            row.push(fmt_opt(frame.fdcs));
            row.push(fmt_opt(frame.d_eye_edge_left));
            row.push(fmt_opt(frame.d_eye_edge_right));
            row.push(fmt_opt(frame.d_nostrils_eyes));
            row.push(fmt_opt(frame.d_eyes));
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;

    let mut sessions = cohort.sessions.clone();
    sessions.sort_by_key(|s| (s.participant_id.clone(), s.session_id.clone()));
    std::fs::write(
        &paths.annotations,
        serde_json::to_string_pretty(&sessions)?,
    )?;

    let mut writer = csv::Writer::from_path(&paths.scores)?;
    let mut header = vec!["image_id"];
    header.extend(SCORE_MODELS);
    writer.write_record(&header)?;
    for (image_id, scores) in &cohort.scores.by_image {
        let mut row = vec![image_id.clone()];
        for model in SCORE_MODELS {
            row.push(fmt_opt(scores.get(model)));
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;

    Ok(paths)
}
