use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SignError};
use crate::tensor::Tensor;

pub const JOINTS: usize = 50;
pub const DIMS: usize = 3;
/// Values per frame: 50 joints × (x, y, z).
pub const FRAME_WIDTH: usize = JOINTS * DIMS;

const HAND_PARTS: [&str; 21] = [
    "wrist", "thumb_1", "thumb_2", "thumb_3", "thumb_4", "index_1", "index_2", "index_3", "index_4", "middle_1",
    "middle_2", "middle_3", "middle_4", "ring_1", "ring_2", "ring_3", "ring_4", "pinky_1", "pinky_2", "pinky_3",
    "pinky_4",
];

const BODY: [&str; 8] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
];

pub const LEFT_HAND_START: usize = 8;
pub const RIGHT_HAND_START: usize = 29;

/// Joint names in storage order: 8 upper-body joints, then 21 left-hand and
/// 21 right-hand keypoints.
pub fn joint_names() -> Vec<String> {
    let mut names: Vec<String> = BODY.iter().map(|s| (*s).to_owned()).collect();
    for side in ["left_hand", "right_hand"] {
        names.extend(HAND_PARTS.iter().map(|p| format!("{side}_{p}")));
    }
    names
}

/// Bone list used for stick-figure rendering.
pub fn skeleton_edges() -> Vec<(usize, usize)> {
    let mut edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7)];
    // body wrists to hand roots
    edges.push((7, LEFT_HAND_START));
    edges.push((4, RIGHT_HAND_START));
    for root in [LEFT_HAND_START, RIGHT_HAND_START] {
        for finger in 0..5 {
            let first = root + 1 + finger * 4;
            edges.push((root, first));
            for k in 0..3 {
                edges.push((first + k, first + k + 1));
            }
        }
    }
    edges
}

/// A neutral upright pose, used as the resting skeleton for synthetic motifs.
pub fn rest_pose() -> Vec<f64> {
    let body: [[f64; 3]; 8] = [
        [0.0, 0.65, 0.0],
        [0.0, 0.35, 0.0],
        [-0.35, 0.3, 0.0],
        [-0.45, -0.1, 0.05],
        [-0.3, -0.4, 0.15],
        [0.35, 0.3, 0.0],
        [0.45, -0.1, 0.05],
        [0.3, -0.4, 0.15],
    ];
    let mut out = Vec::with_capacity(FRAME_WIDTH);
    for j in &body {
        out.extend_from_slice(j);
    }
    for (wrist, side) in [(body[7], 1.0), (body[4], -1.0)] {
        out.extend_from_slice(&wrist);
        for finger in 0..5 {
            let spread = (finger as f64 - 2.0) * 0.035 * side;
            for k in 1..=4 {
                let k = k as f64;
                out.extend_from_slice(&[wrist[0] + spread * (1.0 + 0.3 * k), wrist[1] - 0.03 * k, wrist[2] + 0.01 * k]);
            }
        }
    }
    out
}

/// Sequence of 150-value pose frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    data: Vec<f64>,
}

impl PoseSequence {
    pub fn new(frames: &[Vec<f64>]) -> Result<Self> {
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != FRAME_WIDTH) {
            return Err(SignError::invalid("frame", format!("frame {t} width {} ≠ {FRAME_WIDTH}", f.len())));
        }
        Self::from_flat(frames.concat())
    }

    /// Wraps `T × 150` row-major values.
    pub fn from_flat(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(SignError::Empty("pose sequence has no frames".into()));
        }
        if !data.len().is_multiple_of(FRAME_WIDTH) {
            return Err(SignError::invalid(
                "frames",
                format!("{} values is not a multiple of {FRAME_WIDTH}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SignError::invalid("frames", format!("non-finite value in frame {}", i / FRAME_WIDTH)));
        }
        Ok(PoseSequence { data })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.cols() != FRAME_WIDTH || t.shape().len() != 2 {
            return Err(SignError::shape("PoseSequence::from_tensor", t.shape(), &[0, FRAME_WIDTH]));
        }
        Self::from_flat(t.data().to_vec())
    }

    pub fn len(&self) -> usize {
        self.data.len() / FRAME_WIDTH
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * FRAME_WIDTH..(t + 1) * FRAME_WIDTH]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(FRAME_WIDTH)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), FRAME_WIDTH], self.data.clone()).expect("pose data is a whole number of frames")
    }

    /// `(x, y, z)` of joint `j` in frame `t`.
    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        let f = self.frame(t);
        [f[j * 3], f[j * 3 + 1], f[j * 3 + 2]]
    }
}

/// On-disk encoding of a pose file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseFormat {
    /// JSON header line then one line of 150 decimals per frame.
    #[default]
    Text,
    /// `PSB1` magic, u32 joints, u32 dims, u64 frames, then little-endian f64s.
    Binary,
}

const BINARY_MAGIC: &[u8; 4] = b"PSB1";

#[derive(Serialize, Deserialize)]
struct TextHeader {
    format: String,
    version: u32,
    joints: usize,
    dims: usize,
    frames: usize,
}

pub fn encode_pose(seq: &PoseSequence, format: PoseFormat) -> Vec<u8> {
    match format {
        PoseFormat::Text => {
            let header = TextHeader {
                format: "POSE".into(),
                version: 1,
                joints: JOINTS,
                dims: DIMS,
                frames: seq.len(),
            };
            let mut out = serde_json::to_string(&header).expect("header serialises");
            out.push('\n');
            for f in seq.frames() {
                let line: Vec<String> = f.iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
            out.into_bytes()
        }
        PoseFormat::Binary => {
            let mut out = Vec::with_capacity(20 + seq.as_flat().len() * 8);
            out.extend_from_slice(BINARY_MAGIC);
            out.extend_from_slice(&(JOINTS as u32).to_le_bytes());
            out.extend_from_slice(&(DIMS as u32).to_le_bytes());
            out.extend_from_slice(&(seq.len() as u64).to_le_bytes());
            for v in seq.as_flat() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out
        }
    }
}

fn perr(offset: usize, message: impl Into<String>) -> SignError {
    SignError::Parse {
        offset,
        message: message.into(),
    }
}

/// Parses either pose encoding, detected by the leading magic bytes.
pub fn decode_pose(bytes: &[u8]) -> Result<PoseSequence> {
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(bytes)
    } else {
        decode_text(bytes)
    }
}

fn decode_binary(bytes: &[u8]) -> Result<PoseSequence> {
    if bytes.len() < 20 {
        return Err(perr(bytes.len(), "truncated binary header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (joints, dims) = (u32_at(4), u32_at(8));
    if joints != JOINTS {
        return Err(perr(4, format!("joint count {joints} ≠ {JOINTS}")));
    }
    if dims != DIMS {
        return Err(perr(8, format!("dims {dims} ≠ {DIMS}")));
    }
    let frames = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if frames == 0 {
        return Err(perr(12, "pose file declares zero frames"));
    }
    let body = &bytes[20..];
    let expected = frames * FRAME_WIDTH * 8;
    if body.len() != expected {
        return Err(perr(20, format!("payload has {} bytes, expected {expected}", body.len())));
    }
    let mut data = Vec::with_capacity(frames * FRAME_WIDTH);
    for (i, chunk) in body.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(perr(20 + i * 8, format!("non-finite value in frame {}", i / FRAME_WIDTH)));
        }
        data.push(v);
    }
    PoseSequence::from_flat(data)
}

fn decode_text(bytes: &[u8]) -> Result<PoseSequence> {
    let text = std::str::from_utf8(bytes).map_err(|e| perr(e.valid_up_to(), "pose file is not UTF-8"))?;
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n').map(|l| {
        let start = offset;
        offset += l.len();
        (start, l.trim_end_matches(['\n', '\r']))
    });
    let Some((_, head)) = lines.next() else {
        return Err(perr(0, "empty pose file"));
    };
    let header: TextHeader =
        serde_json::from_str(head).map_err(|e| perr(e.column().saturating_sub(1), format!("malformed header: {e}")))?;
    if header.format != "POSE" {
        return Err(perr(0, format!("format `{}` ≠ POSE", header.format)));
    }
    if header.version != 1 {
        return Err(perr(0, format!("unsupported version {}", header.version)));
    }
    if header.joints != JOINTS {
        return Err(perr(0, format!("joint count {} ≠ {JOINTS}", header.joints)));
    }
    if header.dims != DIMS {
        return Err(perr(0, format!("dims {} ≠ {DIMS}", header.dims)));
    }
    if header.frames == 0 {
        return Err(perr(0, "pose file declares zero frames"));
    }

    let mut data = Vec::with_capacity(header.frames * FRAME_WIDTH);
    let mut frame = 0;
    for (start, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if frame == header.frames {
            return Err(perr(start, format!("more than the declared {} frames", header.frames)));
        }
        let mut width = 0;
        for tok in line.split(' ').filter(|t| !t.is_empty()) {
            let at = start + tok.as_ptr() as usize - line.as_ptr() as usize;
            let v: f64 = tok
                .parse()
                .map_err(|_| perr(at, format!("frame {frame}: `{tok}` is not a number")))?;
            if !v.is_finite() {
                return Err(perr(at, format!("non-finite value in frame {frame}")));
            }
            data.push(v);
            width += 1;
        }
        if width != FRAME_WIDTH {
            return Err(perr(start, format!("frame width {width} ≠ {FRAME_WIDTH}")));
        }
        frame += 1;
    }
    if frame != header.frames {
        return Err(perr(offset, format!("found {frame} frames, header declares {}", header.frames)));
    }
    PoseSequence::from_flat(data)
}

pub fn save_pose(path: impl AsRef<Path>, seq: &PoseSequence, format: PoseFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pose(seq, format)).map_err(|e| SignError::io(path, e))
}

pub fn load_pose(path: impl AsRef<Path>) -> Result<PoseSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| SignError::io(path, e))?;
    decode_pose(&bytes)
}
