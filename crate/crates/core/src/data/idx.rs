//! IDX container format (as used by MNIST and Fashion-MNIST).
//!
//! Layout: a 4-byte big-endian magic, one 4-byte big-endian size per
//! dimension, then an unsigned-byte payload whose length is the product of
//! the sizes.

use std::io::{Cursor, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::error::Error;

pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;
pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdxError {
    #[error("bad IDX magic 0x{found:08x} at byte offset {offset}")]
    BadMagic { offset: usize, found: u32 },

    #[error("IDX header truncated at byte offset {offset}")]
    TruncatedHeader { offset: usize },

    #[error("IDX payload truncated at byte offset {offset}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("IDX payload has {extra} unexpected trailing bytes starting at byte offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },

    #[error("IDX dimensions overflow the addressable payload size")]
    DimOverflow,

    #[error("expected an IDX {expected} file, found magic 0x{found:08x}")]
    WrongKind { expected: &'static str, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    pub fn byte_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn item_count(&self) -> usize {
        self.dims.first().copied().unwrap_or(0) as usize
    }

    /// Bytes per item: `H·W` for images, 1 for labels.
    pub fn item_len(&self) -> usize {
        self.dims.iter().skip(1).map(|&d| d as usize).product()
    }

    fn payload_len(&self) -> Result<usize, IdxError> {
        self.dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or(IdxError::DimOverflow)
    }
}

/// A parsed IDX file: header plus raw unsigned-byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub header: IdxHeader,
    pub payload: Vec<u8>,
}

impl IdxFile {
    pub fn images(count: u32, rows: u32, cols: u32, payload: Vec<u8>) -> Result<Self, IdxError> {
        let header = IdxHeader {
            magic: IDX_MAGIC_IMAGES,
            dims: vec![count, rows, cols],
        };
        IdxFile::checked(header, payload)
    }

    pub fn labels(payload: Vec<u8>) -> Result<Self, IdxError> {
        let header = IdxHeader {
            magic: IDX_MAGIC_LABELS,
            dims: vec![payload.len() as u32],
        };
        IdxFile::checked(header, payload)
    }

    fn checked(header: IdxHeader, payload: Vec<u8>) -> Result<Self, IdxError> {
        let expected = header.payload_len()?;
        if payload.len() < expected {
            return Err(IdxError::TruncatedPayload {
                offset: header.byte_len() + payload.len(),
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(IdxError::TrailingBytes {
                offset: header.byte_len() + expected,
                extra: payload.len() - expected,
            });
        }
        Ok(IdxFile { header, payload })
    }

    pub fn is_images(&self) -> bool {
        self.header.magic == IDX_MAGIC_IMAGES
    }

    pub fn is_labels(&self) -> bool {
        self.header.magic == IDX_MAGIC_LABELS
    }

    /// Pixels scaled by 1/255 into `[0, 1]`, row-major per image.
    pub fn to_images(&self) -> Result<Vec<f64>, IdxError> {
        if !self.is_images() {
            return Err(IdxError::WrongKind {
                expected: "images",
                found: self.header.magic,
            });
        }
        Ok(self.payload.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    pub fn to_labels(&self) -> Result<Vec<usize>, IdxError> {
        if !self.is_labels() {
            return Err(IdxError::WrongKind {
                expected: "labels",
                found: self.header.magic,
            });
        }
        Ok(self.payload.iter().map(|&b| b as usize).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header.byte_len() + self.payload.len());
        out.write_u32::<BigEndian>(self.header.magic).unwrap();
        for &d in &self.header.dims {
            out.write_u32::<BigEndian>(d).unwrap();
        }
        out.write_all(&self.payload).unwrap();
        out
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Parses an IDX byte string.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile, IdxError> {
    let mut cur = Cursor::new(bytes);
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| IdxError::TruncatedHeader { offset: bytes.len() })?;
    let ndims = match magic {
        IDX_MAGIC_LABELS => 1,
        IDX_MAGIC_IMAGES => 3,
        found => return Err(IdxError::BadMagic { offset: 0, found }),
    };
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        let d = cur
            .read_u32::<BigEndian>()
            .map_err(|_| IdxError::TruncatedHeader { offset: bytes.len() })?;
        dims.push(d);
    }
    let header = IdxHeader { magic, dims };
    let payload = bytes[header.byte_len()..].to_vec();
    IdxFile::checked(header, payload)
}

pub fn read_idx_file(path: impl AsRef<Path>) -> Result<IdxFile, Error> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(parse_idx(&bytes)?)
}
