//! JSON Lines detection streams.
//!
//! Line 1 is a header:
//!
//! ```text
//! {"session":"s1","extrinsics":{"R":[r00,r01,...,r22],"T":[tx,ty,tz]},"classes":["door",...]}
//! ```
//!
//! Every following non-blank line is one frame:
//!
//! ```text
//! {"t":0.1,"yaw_deg":12.5,"obs":[{"cls":0,"conf":0.9,"center_cam":[x,y,z],"color":"red"}]}
//! ```
//!
//! `color` is optional. Any malformed line is reported with its 1-based
//! line number.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Extrinsics, Vec3, YawDeg};
use crate::mapping::{DetectionFrame, ObjectObservation};

#[derive(Clone, Debug, PartialEq)]
pub struct StreamHeader {
    pub session: String,
    pub extrinsics: Extrinsics,
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionStream {
    pub header: StreamHeader,
    pub frames: Vec<DetectionFrame>,
}

#[derive(Serialize, Deserialize)]
struct ExtrinsicsRecord {
    #[serde(rename = "R")]
    r: [f64; 9],
    #[serde(rename = "T")]
    t: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    session: String,
    extrinsics: ExtrinsicsRecord,
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ObsRecord {
    cls: u32,
    conf: f64,
    center_cam: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    color: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: f64,
    yaw_deg: f64,
    obs: Vec<ObsRecord>,
}

fn parse_err(line: usize, msg: impl ToString) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

fn parse_header(line: usize, text: &str) -> Result<StreamHeader> {
    let rec: HeaderRecord = serde_json::from_str(text).map_err(|e| parse_err(line, e))?;
    let extrinsics = Extrinsics::from_row_major(rec.extrinsics.r, rec.extrinsics.t).map_err(|e| parse_err(line, e))?;
    if rec.classes.is_empty() {
        return Err(parse_err(line, "class table is empty"));
    }
    Ok(StreamHeader {
        session: rec.session,
        extrinsics,
        classes: rec.classes,
    })
}

fn parse_frame(line: usize, text: &str, k: usize) -> Result<DetectionFrame> {
    let rec: FrameRecord = serde_json::from_str(text).map_err(|e| parse_err(line, e))?;
    if !rec.t.is_finite() {
        return Err(parse_err(line, "timestamp is not finite"));
    }
    let yaw = YawDeg::new(rec.yaw_deg).map_err(|e| parse_err(line, e))?;
    let observations = rec
        .obs
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            let [x, y, z] = o.center_cam;
            ObjectObservation::new(o.cls, o.conf, Vec3::new(x, y, z), o.color, k)
                .map_err(|e| parse_err(line, format!("observation {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionFrame {
        timestamp: rec.t,
        yaw,
        observations,
    })
}

/// Parses a whole stream, checking that timestamps strictly increase.
pub fn read_stream<R: BufRead>(reader: R) -> Result<DetectionStream> {
    let mut header = None;
    let mut frames: Vec<DetectionFrame> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match &header {
            None => header = Some(parse_header(line_no, text)?),
            Some(h) => {
                let frame = parse_frame(line_no, text, h.classes.len())?;
                if let Some(prev) = frames.last() {
                    if frame.timestamp <= prev.timestamp {
                        let e = Error::OutOfOrder {
                            previous: prev.timestamp,
                            got: frame.timestamp,
                        };
                        return Err(parse_err(line_no, e));
                    }
                }
                frames.push(frame);
            }
        }
    }
    let header = header.ok_or_else(|| parse_err(1, "missing header line"))?;
    Ok(DetectionStream { header, frames })
}

pub fn parse_stream(bytes: &[u8]) -> Result<DetectionStream> {
    read_stream(bytes)
}

/// Serializes a stream. Floats are written at full round-trip precision.
pub fn write_stream(stream: &DetectionStream) -> Vec<u8> {
    let mut out = Vec::new();
    let h = &stream.header;
    let header = HeaderRecord {
        session: h.session.clone(),
        extrinsics: ExtrinsicsRecord {
            r: h.extrinsics.rotation_row_major(),
            t: h.extrinsics.translation().to_array(),
        },
        classes: h.classes.clone(),
    };
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for f in &stream.frames {
        write_frame(&mut out, f);
    }
    out
}

pub(crate) fn write_frame(out: &mut Vec<u8>, f: &DetectionFrame) {
    let rec = FrameRecord {
        t: f.timestamp,
        yaw_deg: f.yaw.degrees(),
        obs: f
            .observations
            .iter()
            .map(|o| ObsRecord {
                cls: o.class_id,
                conf: o.confidence,
                center_cam: o.center_cam.to_array(),
                color: o.color.clone(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut *out, &rec).expect("frame serializes");
    out.push(b'\n');
}
