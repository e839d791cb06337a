//! FMTS: a dense little-endian frame-token stream container.
//!
//! Layout (little-endian throughout):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `b"FMTS"`            |
//! | 4      | 1    | version, currently 1       |
//! | 5      | 4    | height `u32`               |
//! | 9      | 4    | width `u32`                |
//! | 13     | 4    | dim `u32`                  |
//! | 17     | 1    | dtype, 1 = f32 LE          |
//! | 18     | 8    | num_frames `u64`           |
//!
//! The 26-byte header is followed by `num_frames * height * width * dim`
//! f32 values: frames in order, tokens row-major, feature axis innermost.
//! The format is specific to this project.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::token::{GridError, GridShape, TokenGrid};

pub const MAGIC: [u8; 4] = *b"FMTS";
pub const VERSION: u8 = 1;
pub const DTYPE_F32_LE: u8 = 1;
pub const HEADER_LEN: usize = 26;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bad magic {0:?}, expected \"FMTS\"")]
    BadMagic([u8; 4]),
    #[error("unsupported FMTS version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated header: expected {HEADER_LEN} bytes, got {0}")]
    TruncatedHeader(usize),
    #[error("truncated payload in frame {frame}: expected {expected} bytes, got {actual}")]
    Truncated {
        frame: u64,
        expected: u64,
        actual: u64,
    },
    #[error("frame {frame} has shape {found}, stream shape is {expected}")]
    ShapeMismatch {
        frame: u64,
        expected: GridShape,
        found: GridShape,
    },
    #[error("frame at position {position} has index {found}")]
    FrameOrder { position: u64, found: u64 },
    #[error("header declares frames but a zero dimension ({0})")]
    ZeroDimension(GridShape),
    #[error("dimension {0} does not fit in u32")]
    DimensionOverflow(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub shape: GridShape,
    pub num_frames: u64,
}

impl StreamHeader {
    pub fn to_bytes(&self) -> Result<[u8; HEADER_LEN], StreamError> {
        let dim32 = |v: usize| u32::try_from(v).map_err(|_| StreamError::DimensionOverflow(v));
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4] = VERSION;
        out[5..9].copy_from_slice(&dim32(self.shape.height)?.to_le_bytes());
        out[9..13].copy_from_slice(&dim32(self.shape.width)?.to_le_bytes());
        out[13..17].copy_from_slice(&dim32(self.shape.dim)?.to_le_bytes());
        out[17] = DTYPE_F32_LE;
        out[18..26].copy_from_slice(&self.num_frames.to_le_bytes());
        Ok(out)
    }

    pub fn parse(bytes: &[u8; HEADER_LEN]) -> Result<Self, StreamError> {
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(StreamError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(StreamError::UnsupportedVersion(bytes[4]));
        }
        if bytes[17] != DTYPE_F32_LE {
            return Err(StreamError::UnsupportedDtype(bytes[17]));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let shape = GridShape {
            height: u32_at(5),
            width: u32_at(9),
            dim: u32_at(13),
        };
        let num_frames = u64::from_le_bytes(bytes[18..26].try_into().unwrap());
        if num_frames > 0 && (shape.height == 0 || shape.width == 0 || shape.dim == 0) {
            return Err(StreamError::ZeroDimension(shape));
        }
        Ok(Self { shape, num_frames })
    }

    pub fn frame_bytes(&self) -> u64 {
        (self.shape.height * self.shape.width * self.shape.dim * 4) as u64
    }
}

/// Writes `grids` as one FMTS stream and returns the number of bytes written.
///
/// All grids must share a shape and be indexed `0, 1, 2, ...`. Validation
/// happens before the first byte is written.
pub fn write_stream<W: Write>(grids: &[TokenGrid], mut sink: W) -> Result<u64, StreamError> {
    let shape = grids.first().map(TokenGrid::shape).unwrap_or(GridShape {
        height: 0,
        width: 0,
        dim: 0,
    });
    for (position, grid) in grids.iter().enumerate() {
        if grid.shape() != shape {
            return Err(StreamError::ShapeMismatch {
                frame: grid.frame_index(),
                expected: shape,
                found: grid.shape(),
            });
        }
        if grid.frame_index() != position as u64 {
            return Err(StreamError::FrameOrder {
                position: position as u64,
                found: grid.frame_index(),
            });
        }
    }
    let header = StreamHeader {
        shape,
        num_frames: grids.len() as u64,
    };
    sink.write_all(&header.to_bytes()?)?;
    let mut written = HEADER_LEN as u64;
    let mut buf = Vec::with_capacity(header.frame_bytes() as usize);
    for grid in grids {
        buf.clear();
        for v in grid.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&buf)?;
        written += buf.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}

/// Frame-at-a-time FMTS reader. Holds at most one frame's payload in memory.
pub struct StreamReader<R> {
    source: R,
    header: StreamHeader,
    next_frame: u64,
    buf: Vec<u8>,
    failed: bool,
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut source: R) -> Result<Self, StreamError> {
        let mut bytes = [0u8; HEADER_LEN];
        let got = read_fully(&mut source, &mut bytes)?;
        if got < HEADER_LEN {
            // Surface a wrong magic before complaining about length.
            if got >= 4 && bytes[0..4] != MAGIC {
                return Err(StreamError::BadMagic(bytes[0..4].try_into().unwrap()));
            }
            return Err(StreamError::TruncatedHeader(got));
        }
        let header = StreamHeader::parse(&bytes)?;
        Ok(Self {
            source,
            header,
            next_frame: 0,
            buf: Vec::new(),
            failed: false,
        })
    }

    pub fn header(&self) -> StreamHeader {
        self.header
    }

    fn read_frame(&mut self) -> Result<TokenGrid, StreamError> {
        let expected = self.header.frame_bytes();
        self.buf.resize(expected as usize, 0);
        let got = read_fully(&mut self.source, &mut self.buf)? as u64;
        if got < expected {
            return Err(StreamError::Truncated {
                frame: self.next_frame,
                expected,
                actual: got,
            });
        }
        let data = self
            .buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let GridShape { height, width, dim } = self.header.shape;
        Ok(TokenGrid::new(self.next_frame, height, width, dim, data)?)
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<TokenGrid, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next_frame >= self.header.num_frames {
            return None;
        }
        let result = self.read_frame();
        match result {
            Ok(_) => self.next_frame += 1,
            Err(_) => self.failed = true,
        }
        Some(result)
    }
}

/// Opens an FMTS stream for lazy reading.
pub fn read_stream<R: Read>(source: R) -> Result<StreamReader<R>, StreamError> {
    StreamReader::new(source)
}

fn read_fully<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
