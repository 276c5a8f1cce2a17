//! REPR1: a single-file container for `(S, L, T, D)` representation stores.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | field                                         |
//! |------------------|-----------------------------------------------|
//! | 6                | magic `b"REPR1\0"`                            |
//! | 2                | version (`u16`, currently 1)                  |
//! | 4 × 8            | `S`, `L`, `T`, `D` as `u64`                   |
//! | 1                | mode (0 macro, 1 micro)                       |
//! | 1                | dtype (0 = `f32` LE)                          |
//! | 4 + n            | source id: `u32` byte length, then UTF-8      |
//! | 8 × L·T          | absolute byte offset of slice `(l, t)`, `u64`, in `l·T + t` order |
//! | 4 × S·L·T·D      | slice data, each slice row-major `S × D` `f32` |
//!
//! Offsets are strictly increasing and the file ends exactly after the last
//! slice. A slice read touches only that slice's byte range.

use std::fmt;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_slice, RepresentationStore, StoreDims, StoreMode, ValidationReport, Violation};

pub const MAGIC: &[u8; 6] = b"REPR1\0";
pub const VERSION: u16 = 1;
pub const DTYPE_F32_LE: u8 = 0;

/// Bytes encoded or decoded per I/O call.
const IO_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repr1Header {
    pub version: u16,
    pub dims: StoreDims,
    pub mode: StoreMode,
    pub dtype: u8,
    pub source_id: String,
    /// Absolute byte offset of each slice, in `l·T + t` order.
    pub offsets: Vec<u64>,
}

impl Repr1Header {
    pub fn new(dims: StoreDims, mode: StoreMode, source_id: impl Into<String>) -> Self {
        let source_id = source_id.into();
        let mut header = Self {
            version: VERSION,
            dims,
            mode,
            dtype: DTYPE_F32_LE,
            source_id,
            offsets: Vec::new(),
        };
        let start = header.encoded_len();
        let slice_bytes = header.slice_bytes();
        header.offsets = (0..dims.slice_count() as u64)
            .map(|i| start + i * slice_bytes)
            .collect();
        header
    }

    pub fn slice_bytes(&self) -> u64 {
        (self.dims.samples * self.dims.width * 4) as u64
    }

    pub fn encoded_len(&self) -> u64 {
        (6 + 2 + 32 + 1 + 1 + 4 + self.source_id.len() + 8 * self.dims.slice_count()) as u64
    }

    /// Total file length implied by the header.
    pub fn file_len(&self) -> u64 {
        self.encoded_len() + self.slice_bytes() * self.dims.slice_count() as u64
    }

    pub fn offset(&self, layer: usize, token: usize) -> Result<u64> {
        let d = self.dims;
        if layer >= d.layers || token >= d.tokens {
            return Err(Error::SliceOutOfRange {
                layer,
                token,
                layers: d.layers,
                tokens: d.tokens,
            });
        }
        Ok(self.offsets[layer * d.tokens + token])
    }

    fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len() as usize);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&self.version.to_le_bytes());
        for v in [self.dims.samples, self.dims.layers, self.dims.tokens, self.dims.width] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        buf.push(self.mode.as_byte());
        buf.push(self.dtype);
        buf.extend_from_slice(&(self.source_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.source_id.as_bytes());
        for off in &self.offsets {
            buf.extend_from_slice(&off.to_le_bytes());
        }
        buf
    }

    /// Parses and checks a header; `file_len` is the actual length on disk.
    fn decode<R: Read>(r: &mut R, file_len: u64) -> Result<Self> {
        let truncated = |expected: u64| Error::Truncated {
            expected,
            found: file_len,
        };
        let mut fixed = [0u8; 46];
        if file_len < 6 {
            return Err(Error::BadMagic);
        }
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| Error::BadMagic)?;
        if &magic != MAGIC {
            return Err(Error::BadMagic);
        }
        fixed[..6].copy_from_slice(&magic);
        r.read_exact(&mut fixed[6..]).map_err(|_| truncated(46))?;
        let version = u16::from_le_bytes([fixed[6], fixed[7]]);
        if version > VERSION || version == 0 {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: VERSION,
            });
        }
        let word = |i: usize| u64::from_le_bytes(fixed[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
        let as_usize =
            |v: u64| usize::try_from(v).map_err(|_| Error::CorruptHeader(format!("dimension {v} too large")));
        let dims = StoreDims::new(
            as_usize(word(0))?,
            as_usize(word(1))?,
            as_usize(word(2))?,
            as_usize(word(3))?,
        );
        let mode =
            StoreMode::from_byte(fixed[40]).ok_or_else(|| Error::CorruptHeader(format!("mode byte {}", fixed[40])))?;
        let dtype = fixed[41];
        if dtype != DTYPE_F32_LE {
            return Err(Error::CorruptHeader(format!("unsupported dtype {dtype}")));
        }
        let source_len = u32::from_le_bytes(fixed[42..46].try_into().expect("4 bytes")) as u64;
        let slices = (dims.layers as u64)
            .checked_mul(dims.tokens as u64)
            .ok_or_else(|| Error::CorruptHeader("L·T overflows".into()))?;
        let header_len = 46 + source_len + 8 * slices;
        if file_len < header_len {
            return Err(truncated(header_len));
        }
        let mut source = vec![0u8; source_len as usize];
        r.read_exact(&mut source).map_err(|_| truncated(header_len))?;
        let source_id = String::from_utf8(source).map_err(|_| Error::CorruptHeader("source id is not UTF-8".into()))?;
        let mut offsets = Vec::with_capacity(slices as usize);
        let mut word_buf = [0u8; 8];
        for _ in 0..slices {
            r.read_exact(&mut word_buf).map_err(|_| truncated(header_len))?;
            offsets.push(u64::from_le_bytes(word_buf));
        }
        let header = Self {
            version,
            dims,
            mode,
            dtype,
            source_id,
            offsets,
        };
        let expected = header.file_len();
        if file_len < expected {
            return Err(truncated(expected));
        }
        if file_len > expected {
            return Err(Error::CorruptHeader(format!(
                "file has {} trailing bytes",
                file_len - expected
            )));
        }
        let slice_bytes = header.slice_bytes();
        for (i, off) in header.offsets.iter().enumerate() {
            if *off != header_len + i as u64 * slice_bytes {
                return Err(Error::CorruptHeader(format!("slice index entry {i} has offset {off}")));
            }
        }
        Ok(header)
    }
}

impl fmt::Display for Repr1Header {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.dims;
        writeln!(f, "format:    REPR1 v{}", self.version)?;
        writeln!(
            f,
            "dims:      S={} L={} T={} D={}",
            d.samples, d.layers, d.tokens, d.width
        )?;
        writeln!(
            f,
            "mode:      {}",
            if self.mode == StoreMode::Macro {
                "macro"
            } else {
                "micro"
            }
        )?;
        writeln!(f, "dtype:     f32le")?;
        writeln!(f, "source_id: {}", self.source_id)?;
        writeln!(f, "slices:    {} × {} bytes", d.slice_count(), self.slice_bytes())?;
        write!(f, "file_len:  {}", self.file_len())
    }
}

/// Random-access reader over a REPR1 file.
#[derive(Debug)]
pub struct Repr1Reader {
    path: PathBuf,
    file: File,
    header: Repr1Header,
}

impl Repr1Reader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut reader = std::io::BufReader::new(&mut file);
        let header = Repr1Header::decode(&mut reader, len)?;
        Ok(Self { path, file, header })
    }

    pub fn header(&self) -> &Repr1Header {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Reads slice `(l, t)` as an `S × D` matrix.
    pub fn read_slice(&mut self, layer: usize, token: usize) -> Result<Array2<f32>> {
        let data = self.read_slice_vec(layer, token)?;
        let d = self.header.dims;
        Ok(Array2::from_shape_vec((d.samples, d.width), data).expect("slice length matches dims"))
    }

    fn read_slice_vec(&mut self, layer: usize, token: usize) -> Result<Vec<f32>> {
        let offset = self.header.offset(layer, token)?;
        let io_err = |source| Error::SliceIo { layer, token, source };
        self.file.seek(SeekFrom::Start(offset)).map_err(io_err)?;
        let n = self.header.dims.slice_len();
        let mut out = Vec::with_capacity(n);
        // At most an eighth of the slice, so a read allocates little beyond its output.
        let mut buf = vec![0u8; IO_CHUNK.min(n.div_ceil(8) * 4)];
        while out.len() < n {
            let take = ((n - out.len()) * 4).min(buf.len());
            self.file.read_exact(&mut buf[..take]).map_err(io_err)?;
            out.extend(
                buf[..take]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))),
            );
        }
        Ok(out)
    }

    /// Loads every slice into memory.
    pub fn read_store(&mut self) -> Result<RepresentationStore> {
        let h = self.header.clone();
        let mut store = RepresentationStore::empty(h.dims, h.mode, h.source_id);
        for l in 0..h.dims.layers {
            for t in 0..h.dims.tokens {
                let data = self.read_slice_vec(l, t)?;
                store.set_slice(l, t, data)?;
            }
        }
        Ok(store)
    }

    /// Streams every slice through the store invariants.
    pub fn validate(&mut self) -> Result<ValidationReport> {
        let dims = self.header.dims;
        let mut violations = Vec::new();
        if dims.samples == 0 || dims.layers == 0 || dims.tokens == 0 || dims.width == 0 {
            violations.push(Violation::Dims(format!(
                "all of S, L, T, D must be positive, got ({}, {}, {}, {})",
                dims.samples, dims.layers, dims.tokens, dims.width
            )));
        }
        for l in 0..dims.layers {
            for t in 0..dims.tokens {
                let data = self.read_slice_vec(l, t)?;
                check_slice(l, t, &data, dims.slice_len(), &mut violations);
            }
        }
        Ok(ValidationReport { violations })
    }
}

/// Writes slices of a store in any order; call [`Repr1Writer::finish`] to sync.
#[derive(Debug)]
pub struct Repr1Writer {
    path: PathBuf,
    file: File,
    header: Repr1Header,
    written: Vec<bool>,
}

impl Repr1Writer {
    pub fn create(path: impl AsRef<Path>, dims: StoreDims, mode: StoreMode, source_id: &str) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let header = Repr1Header::new(dims, mode, source_id);
        let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(&header.encode()).map_err(|e| Error::io(&path, e))?;
        file.set_len(header.file_len()).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            file,
            written: vec![false; dims.slice_count()],
            header,
        })
    }

    pub fn write_slice(&mut self, layer: usize, token: usize, data: &[f32]) -> Result<()> {
        let offset = self.header.offset(layer, token)?;
        let n = self.header.dims.slice_len();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "slice ({layer},{token}) has {} values, expected {n}",
                data.len()
            )));
        }
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = Vec::with_capacity(IO_CHUNK);
        for chunk in data.chunks(IO_CHUNK / 4) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            self.file.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        }
        self.written[layer * self.header.dims.tokens + token] = true;
        Ok(())
    }

    /// Fails if any slice was never written; otherwise fsyncs the file.
    pub fn finish(self) -> Result<Repr1Header> {
        if let Some(i) = self.written.iter().position(|w| !w) {
            let t = self.header.dims.tokens;
            return Err(Error::Shape(format!("missing slice ({},{})", i / t, i % t)));
        }
        self.file.sync_all().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.header)
    }
}

/// Writes a complete in-memory store.
pub fn write_store(store: &RepresentationStore, path: impl AsRef<Path>) -> Result<Repr1Header> {
    let dims = store.dims();
    let mut writer = Repr1Writer::create(path, dims, store.mode(), store.source_id())?;
    for l in 0..dims.layers {
        for t in 0..dims.tokens {
            let data = store
                .slice_data(l, t)
                .ok_or_else(|| Error::Shape(format!("missing slice ({l},{t})")))?;
            writer.write_slice(l, t, data)?;
        }
    }
    writer.finish()
}

pub fn read_slice(path: impl AsRef<Path>, layer: usize, token: usize) -> Result<Array2<f32>> {
    Repr1Reader::open(path)?.read_slice(layer, token)
}

pub fn read_store(path: impl AsRef<Path>) -> Result<RepresentationStore> {
    Repr1Reader::open(path)?.read_store()
}

pub fn describe(path: impl AsRef<Path>) -> Result<Repr1Header> {
    Ok(Repr1Reader::open(path)?.header().clone())
}

pub fn validate_file(path: impl AsRef<Path>) -> Result<ValidationReport> {
    Repr1Reader::open(path)?.validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_store() -> RepresentationStore {
        let dims = StoreDims::new(3, 2, 2, 4);
        let mut store = RepresentationStore::zeros(dims, StoreMode::Micro, "unit");
        for l in 0..2 {
            for t in 0..2 {
                store
                    .slice_mut(l, t)
                    .unwrap()
                    .indexed_iter_mut()
                    .for_each(|((i, j), v)| *v = (i as f32 - 1.5) * 0.25 + j as f32 + 10.0 * l as f32 - t as f32);
            }
        }
        store
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.repr1");
        let store = sample_store();
        let header = write_store(&store, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), header.file_len());
        let back = read_store(&path).unwrap();
        assert_eq!(back, store);
        let slice = read_slice(&path, 1, 0).unwrap();
        assert_eq!(slice, store.slice(1, 0).unwrap());
    }

    #[test]
    fn header_bytes_are_fixed() {
        let header = Repr1Header::new(StoreDims::new(1, 1, 1, 1), StoreMode::Macro, "ab");
        let bytes = header.encode();
        let mut expected = b"REPR1\0".to_vec();
        expected.extend_from_slice(&[1, 0]);
        for _ in 0..4 {
            expected.extend_from_slice(&1u64.to_le_bytes());
        }
        expected.extend_from_slice(&[0, 0, 2, 0, 0, 0, b'a', b'b']);
        expected.extend_from_slice(&56u64.to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(header.file_len(), 60);
    }

    #[test]
    fn bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.repr1");
        write_store(&sample_store(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Repr1Reader::open(&path), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.repr1");
        write_store(&sample_store(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(Repr1Reader::open(&path), Err(Error::Truncated { .. })));
        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(Repr1Reader::open(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn newer_version_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.repr1");
        write_store(&sample_store(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[6] = 2;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Repr1Reader::open(&path),
            Err(Error::UnsupportedVersion { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn out_of_range_slice() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.repr1");
        write_store(&sample_store(), &path).unwrap();
        assert!(matches!(read_slice(&path, 2, 0), Err(Error::SliceOutOfRange { .. })));
        assert!(matches!(read_slice(&path, 0, 2), Err(Error::SliceOutOfRange { .. })));
    }

    #[test]
    fn validation_reports_nan_cell() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.repr1");
        let mut store = sample_store();
        store.slice_mut(0, 1).unwrap()[[0, 0]] = f32::INFINITY;
        write_store(&store, &path).unwrap();
        let report = validate_file(&path).unwrap();
        assert_eq!(report.to_string().trim(), "slice (0,1) has 1 non-finite values");
    }

    #[test]
    fn writer_requires_every_slice() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.repr1");
        let mut w = Repr1Writer::create(&path, StoreDims::new(2, 1, 2, 1), StoreMode::Macro, "x").unwrap();
        w.write_slice(0, 1, &[1.0, 2.0]).unwrap();
        assert!(w.finish().is_err());
    }

    #[test]
    fn describe_summarizes_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.repr1");
        write_store(&sample_store(), &path).unwrap();
        let text = describe(&path).unwrap().to_string();
        assert!(text.contains("S=3 L=2 T=2 D=4"));
        assert!(text.contains("micro"));
    }
}
