//! Frame files.
//!
//! Binary keyframe (`.gsvv`), little-endian:
//!
//! ```text
//! "GSVV"  u32 version (=1)  u64 count  u8 sh_degree
//! count x record
//! record = f32 position[3] scale[3] rotation[4] (w,x,y,z) opacity sh[3*(L+1)^2]
//! ```
//!
//! Binary differential frame (`.gsvd`):
//!
//! ```text
//! "GSVD"  u32 version (=1)  u64 frame_index  u64 count  u8 sh_degree
//! count x (u32 gaussian_id, record)
//! ```
//!
//! Text keyframe: a first line `gsvv-text 1 <sh_degree> <count>`, then one
//! Gaussian per line with the record values separated by spaces. Floats are
//! written in shortest round-trip form so the text variant is also lossless.
//!
//! The keyframe header carries no frame index; loaders return index 0 and
//! directory readers assign indices from file order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{sh_len, DifferentialFrame, Gaussian, GaussianFrame, ModelError, Result};

const FRAME_MAGIC: &[u8; 4] = b"GSVV";
const DIFF_MAGIC: &[u8; 4] = b"GSVD";
const TEXT_MAGIC: &str = "gsvv-text";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Binary,
    Text,
}

fn record_floats(degree: u8) -> usize {
    3 + 3 + 4 + 1 + sh_len(degree)
}

fn parse_err(offset: usize, reason: impl Into<String>) -> ModelError {
    ModelError::Parse { offset: offset as u64, reason: reason.into() }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(parse_err(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn gaussian(&mut self, degree: u8) -> Result<Gaussian> {
        let n = record_floats(degree);
        let raw = self.take(4 * n, "gaussian record")?;
        let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(from_values(&v))
    }
}

fn from_values(v: &[f32]) -> Gaussian {
    Gaussian {
        position: [v[0], v[1], v[2]],
        scale: [v[3], v[4], v[5]],
        rotation: [v[6], v[7], v[8], v[9]],
        opacity: v[10],
        sh: v[11..].to_vec(),
    }
}

fn write_record(out: &mut Vec<u8>, g: &Gaussian) {
    for v in g.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn check_degree(degree: u8, offset: usize) -> Result<u8> {
    if degree > 3 {
        return Err(parse_err(offset, format!("unsupported SH degree {degree}")));
    }
    Ok(degree)
}

pub fn encode_frame(frame: &GaussianFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + frame.len() * 4 * record_floats(frame.sh_degree));
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(frame.len() as u64).to_le_bytes());
    out.push(frame.sh_degree);
    for g in &frame.gaussians {
        write_record(&mut out, g);
    }
    out
}

pub fn encode_frame_text(frame: &GaussianFrame) -> String {
    use std::fmt::Write as _;
    let mut s = format!("{TEXT_MAGIC} {VERSION} {} {}\n", frame.sh_degree, frame.len());
    for g in &frame.gaussians {
        let mut first = true;
        for v in g.values() {
            if !first {
                s.push(' ');
            }
            first = false;
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn decode_frame(buf: &[u8]) -> Result<GaussianFrame> {
    if buf.starts_with(TEXT_MAGIC.as_bytes()) {
        return decode_frame_text(buf);
    }
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != FRAME_MAGIC {
        return Err(parse_err(0, "bad magic, expected GSVV"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(parse_err(4, format!("unsupported version {version}")));
    }
    let count = r.u64("count")?;
    let degree = check_degree(r.u8("sh degree")?, 16)?;
    let expected = count as u128 * 4 * record_floats(degree) as u128;
    if expected != (buf.len() - r.pos) as u128 {
        return Err(parse_err(
            r.pos,
            format!("expected {expected} payload bytes for {count} gaussians, found {}", buf.len() - r.pos),
        ));
    }
    let gaussians = (0..count).map(|_| r.gaussian(degree)).collect::<Result<Vec<_>>>()?;
    GaussianFrame::new(0, degree, gaussians)
}

fn decode_frame_text(buf: &[u8]) -> Result<GaussianFrame> {
    let text = std::str::from_utf8(buf).map_err(|e| parse_err(e.valid_up_to(), "invalid utf-8"))?;
    let mut offset = 0usize;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().ok_or_else(|| parse_err(0, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != TEXT_MAGIC || fields[1] != "1" {
        return Err(parse_err(0, "bad text header"));
    }
    let degree: u8 = fields[2].parse().map_err(|_| parse_err(0, "bad SH degree"))?;
    let degree = check_degree(degree, 0)?;
    let count: usize = fields[3].parse().map_err(|_| parse_err(0, "bad count"))?;
    offset += header.len();
    let mut gaussians = Vec::with_capacity(count);
    for line in lines {
        if line.trim().is_empty() {
            offset += line.len();
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| parse_err(offset, format!("bad number: {e}")))?;
        if vals.len() != record_floats(degree) {
            if vals.len() > 11 {
                // record without the declared SH tail: surface as a count mismatch
                let g = from_values(&vals);
                return Err(ModelError::ShCount {
                    id: gaussians.len(),
                    degree,
                    expected: sh_len(degree),
                    found: g.sh.len(),
                });
            }
            return Err(parse_err(offset, format!("expected {} values, found {}", record_floats(degree), vals.len())));
        }
        gaussians.push(from_values(&vals));
        offset += line.len();
    }
    if gaussians.len() != count {
        return Err(parse_err(offset, format!("header declares {count} gaussians, found {}", gaussians.len())));
    }
    GaussianFrame::new(0, degree, gaussians)
}

pub fn encode_diff(diff: &DifferentialFrame, degree: u8) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DIFF_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&diff.frame_index.to_le_bytes());
    out.extend_from_slice(&(diff.len() as u64).to_le_bytes());
    out.push(degree);
    for (id, g) in &diff.updates {
        out.extend_from_slice(&id.to_le_bytes());
        write_record(&mut out, g);
    }
    out
}

/// Returns the diff and its SH degree.
pub fn decode_diff(buf: &[u8]) -> Result<(DifferentialFrame, u8)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != DIFF_MAGIC {
        return Err(parse_err(0, "bad magic, expected GSVD"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(parse_err(4, format!("unsupported version {version}")));
    }
    let frame_index = r.u64("frame index")?;
    let count = r.u64("count")?;
    let degree = check_degree(r.u8("sh degree")?, 24)?;
    let mut updates = Vec::new();
    for _ in 0..count {
        let id = r.u32("gaussian id")?;
        updates.push((id, r.gaussian(degree)?));
    }
    if r.pos != buf.len() {
        return Err(parse_err(r.pos, "trailing bytes"));
    }
    let diff = DifferentialFrame { frame_index, updates };
    Ok((diff, degree))
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<GaussianFrame> {
    decode_frame(&fs::read(path)?)
}

pub fn save_frame(path: impl AsRef<Path>, frame: &GaussianFrame, format: FrameFormat) -> Result<()> {
    let mut f = fs::File::create(path)?;
    match format {
        FrameFormat::Binary => f.write_all(&encode_frame(frame))?,
        FrameFormat::Text => f.write_all(encode_frame_text(frame).as_bytes())?,
    }
    Ok(())
}

pub fn load_diff(path: impl AsRef<Path>) -> Result<(DifferentialFrame, u8)> {
    decode_diff(&fs::read(path)?)
}

pub fn save_diff(path: impl AsRef<Path>, diff: &DifferentialFrame, degree: u8) -> Result<()> {
    fs::write(path, encode_diff(diff, degree))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_model::testutil::random_frame;

    fn bits(f: &GaussianFrame) -> Vec<u32> {
        f.gaussians.iter().flat_map(|g| g.values().map(f32::to_bits).collect::<Vec<_>>()).collect()
    }

    #[test]
    fn single_identity_gaussian() {
        let f = GaussianFrame::new(0, 3, vec![Gaussian::isotropic([0.0; 3], 0.0, 0.0, 3)]).unwrap();
        let back = decode_frame(&encode_frame(&f)).unwrap();
        assert_eq!(back.len(), 1);
        let q = back.gaussians[0].unit_rotation();
        assert!((q.iter().map(|c| c * c).sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn binary_and_text_round_trip_bit_exact() {
        let f = random_frame(42, 1000, 3);
        assert_eq!(bits(&decode_frame(&encode_frame(&f)).unwrap()), bits(&f));
        assert_eq!(bits(&decode_frame(encode_frame_text(&f).as_bytes()).unwrap()), bits(&f));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = random_frame(7, 50, 1);
        let p = dir.path().join("a.gsvv");
        save_frame(&p, &f, FrameFormat::Binary).unwrap();
        assert_eq!(load_frame(&p).unwrap(), f);
        let p = dir.path().join("a.txt");
        save_frame(&p, &f, FrameFormat::Text).unwrap();
        assert_eq!(load_frame(&p).unwrap(), f);
    }

    #[test]
    fn text_sh_47_for_degree_3_fails_validation() {
        let vals: Vec<String> = (0..11 + 47).map(|i| if i == 6 { "1".into() } else { "0".into() }).collect();
        let text = format!("gsvv-text 1 3 1\n{}\n", vals.join(" "));
        match decode_frame(text.as_bytes()) {
            Err(ModelError::ShCount { id: 0, expected: 48, found: 47, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let f = random_frame(1, 3, 0);
        let mut buf = encode_frame(&f);
        buf.truncate(buf.len() - 5);
        match decode_frame(&buf) {
            Err(ModelError::Parse { offset: 17, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match decode_frame(b"GSVX\x01\0\0\0") {
            Err(ModelError::Parse { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn diff_round_trip() {
        let f = random_frame(3, 10, 2);
        let d = DifferentialFrame::new(5, vec![(3, f.gaussians[1].clone()), (9, f.gaussians[0].clone())]);
        let (back, deg) = decode_diff(&encode_diff(&d, 2)).unwrap();
        assert_eq!(deg, 2);
        assert_eq!(back, d);
    }
}
