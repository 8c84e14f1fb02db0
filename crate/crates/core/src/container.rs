//! Named-record binary container shared by checkpoints, codebooks and LMs.
//!
//! Layout (all integers little-endian):
//! `MAGIC | version u32 | count u32 | record* | crc32 u32`, where each record
//! is `kind u8 | name_len u32 | name | payload`. Tensors store `rows u64,
//! cols u64` then row-major binary64; text and bytes store `len u64` then the
//! raw payload. The CRC covers every preceding byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const MAGIC: &[u8; 8] = b"ACSSLREC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Tensor(Mat),
    Text(String),
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub payload: Payload,
}

impl Record {
    pub fn tensor(name: impl Into<String>, m: Mat) -> Self {
        Record { name: name.into(), payload: Payload::Tensor(m) }
    }

    pub fn text(name: impl Into<String>, s: impl Into<String>) -> Self {
        Record { name: name.into(), payload: Payload::Text(s.into()) }
    }

    pub fn bytes(name: impl Into<String>, b: Vec<u8>) -> Self {
        Record { name: name.into(), payload: Payload::Bytes(b) }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub records: Vec<Record>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Corrupt(format!("length {v} too large")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Corrupt(e.to_string()))
    }
}

impl Container {
    pub fn push(&mut self, r: Record) {
        self.records.push(r);
    }

    pub fn get(&self, name: &str) -> Option<&Payload> {
        self.records.iter().find(|r| r.name == name).map(|r| &r.payload)
    }

    pub fn tensor(&self, name: &str) -> Result<&Mat> {
        match self.get(name) {
            Some(Payload::Tensor(m)) => Ok(m),
            _ => Err(Error::Corrupt(format!("missing tensor record `{name}`"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Payload::Text(s)) => Ok(s),
            _ => Err(Error::Corrupt(format!("missing text record `{name}`"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name) {
            Some(Payload::Bytes(b)) => Ok(b),
            _ => Err(Error::Corrupt(format!("missing bytes record `{name}`"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            let kind: u8 = match r.payload {
                Payload::Tensor(_) => 0,
                Payload::Text(_) => 1,
                Payload::Bytes(_) => 2,
            };
            out.push(kind);
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            match &r.payload {
                Payload::Tensor(m) => {
                    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
                    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
                    for v in m.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Payload::Text(s) => {
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
                Payload::Bytes(b) => {
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(b);
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 12 || &buf[..MAGIC.len()] != MAGIC {
            return Err(Error::Corrupt("not a record container (bad magic)".into()));
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut rd = Reader { buf: body, pos: MAGIC.len() };
        let version = rd.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, expected: FORMAT_VERSION });
        }
        let count = rd.u32()?;
        let mut records = Vec::new();
        for _ in 0..count {
            let kind = rd.u8()?;
            let name_len = rd.u32()? as usize;
            let name = rd.string(name_len)?;
            let payload = match kind {
                0 => {
                    let rows = rd.u64()?;
                    let cols = rd.u64()?;
                    let n = rows.checked_mul(cols).ok_or_else(|| Error::Corrupt("tensor too large".into()))?;
                    let raw = rd.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("tensor too large".into()))?)?;
                    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    Payload::Tensor(Mat::from_vec(rows, cols, data))
                }
                1 => {
                    let n = rd.u64()?;
                    Payload::Text(rd.string(n)?)
                }
                2 => {
                    let n = rd.u64()?;
                    Payload::Bytes(rd.take(n)?.to_vec())
                }
                k => return Err(Error::Corrupt(format!("unknown record kind {k}"))),
            };
            records.push(Record { name, payload });
        }
        if rd.pos != body.len() {
            return Err(Error::Corrupt("trailing bytes after last record".into()));
        }
        Ok(Container { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            records: vec![
                Record::tensor("w", Mat::from_fn(2, 3, |r, c| r as f64 - 0.1 * c as f64)),
                Record::text("note", "héllo"),
                Record::bytes("raw", vec![0, 255, 7]),
                Record::tensor("empty", Mat::zeros(0, 4)),
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn negative_zero_and_nan_bits_survive() {
        let m = Mat::from_vec(1, 2, vec![-0.0, f64::from_bits(0x7ff8_0000_0000_0001)]);
        let c = Container { records: vec![Record::tensor("m", m)] };
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        let d = back.tensor("m").unwrap().data();
        assert_eq!(d[0].to_bits(), (-0.0f64).to_bits());
        assert_eq!(d[1].to_bits(), 0x7ff8_0000_0000_0001);
    }

    #[test]
    fn any_flipped_byte_is_detected() {
        let bytes = sample().to_bytes();
        for i in MAGIC.len()..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(Container::from_bytes(&b).is_err(), "byte {i}");
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 9;
        let body = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body]);
        bytes[body..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Version { found: 9, .. })));
    }
}
