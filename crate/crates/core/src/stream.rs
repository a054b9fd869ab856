//! Stream and clip domain types, timeline segmentation, and the JSONL
//! manifest format.
//!
//! A stream is cut into fixed-length query clips (20 s by default). Clip
//! timing is expressed in seconds relative to stream start; `start_s` is
//! always `clip_index * clip_len`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clip length in seconds.
pub const DEFAULT_CLIP_LEN_S: f64 = 20.0;
/// A trailing partial clip shorter than this is dropped during segmentation.
pub const DEFAULT_MIN_PARTIAL_S: f64 = 5.0;

/// Opaque stream identifier. Non-empty, unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StreamId(String);

impl StreamId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::invalid("stream id must be non-empty"));
        }
        Ok(StreamId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Stable reference to one clip of one stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClipRef {
    pub stream_id: StreamId,
    pub clip_index: u32,
}

impl fmt::Display for ClipRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.stream_id, self.clip_index)
    }
}

/// A fixed-length multimodal segment of a stream.
///
/// Tokens are already-extracted numeric features; there is no media decoding
/// in this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub stream_id: StreamId,
    pub clip_index: u32,
    pub start_s: f64,
    pub duration_s: f64,
    pub visual_tokens: Vec<Vec<f64>>,
    pub audio_tokens: Vec<Vec<f64>>,
    pub asr_text: String,
}

impl Clip {
    pub fn clip_ref(&self) -> ClipRef {
        ClipRef {
            stream_id: self.stream_id.clone(),
            clip_index: self.clip_index,
        }
    }
}

/// One stream's ordered clips plus optional evaluation-only ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamManifest {
    pub stream_id: StreamId,
    pub total_duration_s: f64,
    pub clips: Vec<Clip>,
    /// Ground-truth preset violation class, evaluation only.
    pub label: Option<u32>,
    /// Ground-truth rebroadcast source stream, evaluation only.
    pub source_stream_id: Option<StreamId>,
}

/// One segment of a stream timeline: `(clip_index, start_s, duration_s)`.
pub type Segment = (u32, f64, f64);

/// Tile `[0, total_duration_s]` with clips of length `clip_len`, keeping a
/// trailing partial clip only when it is at least `DEFAULT_MIN_PARTIAL_S`.
pub fn segment_stream(total_duration_s: f64, clip_len: f64) -> Result<Vec<Segment>> {
    segment_stream_with(total_duration_s, clip_len, DEFAULT_MIN_PARTIAL_S)
}

/// As [`segment_stream`], with an explicit minimum partial-clip length.
pub fn segment_stream_with(
    total_duration_s: f64,
    clip_len: f64,
    min_partial_s: f64,
) -> Result<Vec<Segment>> {
    if !(total_duration_s > 0.0) || !total_duration_s.is_finite() {
        return Err(Error::invalid("total_duration_s must be positive"));
    }
    if !(clip_len > 0.0) || !clip_len.is_finite() {
        return Err(Error::invalid("clip_len must be positive"));
    }
    let n_full = (total_duration_s / clip_len).floor() as u32;
    let mut out = Vec::with_capacity(n_full as usize + 1);
    for i in 0..n_full {
        out.push((i, f64::from(i) * clip_len, clip_len));
    }
    let tail = total_duration_s - f64::from(n_full) * clip_len;
    if tail >= min_partial_s && tail > 0.0 {
        out.push((n_full, f64::from(n_full) * clip_len, tail));
    }
    Ok(out)
}

/// On-disk JSONL record: one clip per line. `label` and `source_stream_id`
/// are stream-level ground truth and must agree across all lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClipRecord {
    stream_id: String,
    clip_index: u32,
    start_s: f64,
    duration_s: f64,
    visual_tokens: Vec<Vec<f64>>,
    audio_tokens: Vec<Vec<f64>>,
    asr_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_stream_id: Option<String>,
}

/// Parse a JSONL clip manifest (UTF-8, LF line endings, one clip per line).
pub fn parse_manifest(bytes: &[u8]) -> Result<StreamManifest> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("manifest is not valid UTF-8: {e}"),
    })?;
    let mut clips: Vec<Clip> = Vec::new();
    let mut stream_id: Option<StreamId> = None;
    let mut label: Option<u32> = None;
    let mut source: Option<StreamId> = None;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClipRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let rec_stream = StreamId::new(rec.stream_id.clone())?;
        match &stream_id {
            None => stream_id = Some(rec_stream.clone()),
            Some(expected) if *expected != rec_stream => {
                return Err(Error::Validation {
                    field: "stream_id".into(),
                    msg: format!(
                        "manifest mixes streams `{expected}` and `{rec_stream}` (line {lineno})"
                    ),
                });
            }
            _ => {}
        }
        if let Some(l) = rec.label {
            if label.is_some() && label != Some(l) {
                return Err(Error::Validation {
                    field: "label".into(),
                    msg: format!("inconsistent label at line {lineno}"),
                });
            }
            label = Some(l);
        }
        if let Some(src) = &rec.source_stream_id {
            let src = StreamId::new(src.clone())?;
            if source.is_some() && source.as_ref() != Some(&src) {
                return Err(Error::Validation {
                    field: "source_stream_id".into(),
                    msg: format!("inconsistent source_stream_id at line {lineno}"),
                });
            }
            source = Some(src);
        }
        clips.push(Clip {
            stream_id: rec_stream,
            clip_index: rec.clip_index,
            start_s: rec.start_s,
            duration_s: rec.duration_s,
            visual_tokens: rec.visual_tokens,
            audio_tokens: rec.audio_tokens,
            asr_text: rec.asr_text,
        });
    }

    let stream_id = stream_id.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "no records".into(),
    })?;
    validate_clip_sequence(&clips)?;
    let total_duration_s: f64 = clips.iter().map(|c| c.duration_s).sum();
    Ok(StreamManifest {
        stream_id,
        total_duration_s,
        clips,
        label,
        source_stream_id: source,
    })
}

fn validate_clip_sequence(clips: &[Clip]) -> Result<()> {
    for (i, clip) in clips.iter().enumerate() {
        if clip.clip_index != i as u32 {
            return Err(Error::Validation {
                field: "clip_index".into(),
                msg: format!(
                    "expected contiguous clip_index {} but found {}",
                    i, clip.clip_index
                ),
            });
        }
        if !(clip.duration_s > 0.0) {
            return Err(Error::Validation {
                field: "duration_s".into(),
                msg: format!("clip {} has non-positive duration", clip.clip_index),
            });
        }
        let expected_start = if i == 0 {
            0.0
        } else {
            clips[i - 1].start_s + clips[i - 1].duration_s
        };
        if (clip.start_s - expected_start).abs() > 1e-6 {
            return Err(Error::Validation {
                field: "start_s".into(),
                msg: format!(
                    "clip {} starts at {} but the previous clip ends at {}",
                    clip.clip_index, clip.start_s, expected_start
                ),
            });
        }
        // Only the final clip may be shorter than the leading clips.
        if i + 1 < clips.len() && clips[0].duration_s - clip.duration_s > 1e-6 {
            return Err(Error::Validation {
                field: "duration_s".into(),
                msg: format!("non-final clip {} is a partial clip", clip.clip_index),
            });
        }
    }
    Ok(())
}

/// Serialize a manifest back to JSONL. `parse_manifest` of the output is
/// identity for any valid manifest.
pub fn serialize_manifest(m: &StreamManifest) -> String {
    let mut out = String::new();
    for clip in &m.clips {
        let rec = ClipRecord {
            stream_id: clip.stream_id.as_str().to_string(),
            clip_index: clip.clip_index,
            start_s: clip.start_s,
            duration_s: clip.duration_s,
            visual_tokens: clip.visual_tokens.clone(),
            audio_tokens: clip.audio_tokens.clone(),
            asr_text: clip.asr_text.clone(),
            label: m.label,
            source_stream_id: m.source_stream_id.as_ref().map(|s| s.as_str().to_string()),
        };
        out.push_str(&serde_json::to_string(&rec).expect("clip record serializes"));
        out.push('\n');
    }
    out
}
