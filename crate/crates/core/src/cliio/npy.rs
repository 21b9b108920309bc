//! NPY v1.0 container for 2-D little-endian `f64` arrays.

use std::fs;
use std::path::Path;

use crate::error::{PruneError, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE: usize = 10;
const ALIGN: usize = 64;

pub fn save_array(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(m)).map_err(|e| PruneError::io(path, e))
}

pub fn load_array(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| PruneError::io(path, e))?;
    decode(&bytes).map_err(|(offset, message)| match message {
        DecodeError::Format(message) => PruneError::Format {
            path: path.to_path_buf(),
            offset,
            message,
        },
        DecodeError::Matrix(e) => e,
    })
}

pub fn encode(m: &Matrix) -> Vec<u8> {
    let mut header = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}",
        m.rows(),
        m.cols()
    );
    // pad with spaces so the data starts on an aligned offset; header ends in '\n'
    let unpadded = PREAMBLE + header.len() + 1;
    header.push_str(&" ".repeat((ALIGN - unpadded % ALIGN) % ALIGN));
    header.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE + header.len() + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) enum DecodeError {
    Format(String),
    Matrix(PruneError),
}

fn fail<T>(offset: usize, msg: impl Into<String>) -> std::result::Result<T, (usize, DecodeError)> {
    Err((offset, DecodeError::Format(msg.into())))
}

pub(crate) fn decode(bytes: &[u8]) -> std::result::Result<Matrix, (usize, DecodeError)> {
    if bytes.len() < PREAMBLE {
        return fail(bytes.len(), "file shorter than the NPY preamble");
    }
    if &bytes[..6] != MAGIC {
        return fail(0, "missing \\x93NUMPY magic");
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return fail(6, format!("unsupported NPY version {}.{}", bytes[6], bytes[7]));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE + header_len;
    if bytes.len() < data_start {
        return fail(bytes.len(), format!("header truncated, expected {header_len} bytes"));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE..data_start])
        .or_else(|_| fail(PREAMBLE, "header is not ASCII"))?;
    let header = parse_header(header).or_else(|(rel, msg)| fail(PREAMBLE + rel, msg))?;

    if header.descr != "<f8" {
        return fail(PREAMBLE, format!("dtype `{}` is not little-endian float64", header.descr));
    }
    let (rows, cols) = match header.shape.as_slice() {
        [r, c] => (*r, *c),
        other => return fail(PREAMBLE, format!("expected a 2-D array, got shape {other:?}")),
    };
    if rows == 0 || cols == 0 {
        return Err((
            PREAMBLE,
            DecodeError::Matrix(PruneError::Shape(format!("empty array of shape {rows}x{cols}"))),
        ));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or((PREAMBLE, DecodeError::Format("shape overflows".into())))?;
    let payload = &bytes[data_start..];
    if payload.len() < expected {
        return fail(
            bytes.len(),
            format!("data truncated: need {expected} bytes after offset {data_start}"),
        );
    }
    if payload.len() > expected {
        return fail(data_start + expected, "trailing bytes after array data");
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = if header.fortran_order {
        let mut out = vec![0.0; values.len()];
        for j in 0..cols {
            for i in 0..rows {
                out[i * cols + j] = values[j * rows + i];
            }
        }
        out
    } else {
        values
    };
    Matrix::new(rows, cols, data).map_err(|e| (data_start, DecodeError::Matrix(e)))
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the Python dict literal of an NPY header. Errors carry an offset
/// relative to the start of the header text.
fn parse_header(text: &str) -> std::result::Result<Header, (usize, String)> {
    let mut p = DictParser { s: text.as_bytes(), pos: 0 };
    p.skip_ws();
    p.expect(b'{')?;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    loop {
        p.skip_ws();
        if p.eat(b'}') {
            break;
        }
        let key = p.string()?;
        p.skip_ws();
        p.expect(b':')?;
        p.skip_ws();
        match key.as_str() {
            "descr" => descr = Some(p.string()?),
            "fortran_order" => fortran = Some(p.boolean()?),
            "shape" => shape = Some(p.tuple()?),
            other => return Err((p.pos, format!("unexpected header key `{other}`"))),
        }
        p.skip_ws();
        if !p.eat(b',') {
            p.skip_ws();
            p.expect(b'}')?;
            break;
        }
    }
    let missing = |k: &str| (0, format!("header is missing `{k}`"));
    Ok(Header {
        descr: descr.ok_or_else(|| missing("descr"))?,
        fortran_order: fortran.ok_or_else(|| missing("fortran_order"))?,
        shape: shape.ok_or_else(|| missing("shape"))?,
    })
}

struct DictParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl DictParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> std::result::Result<(), (usize, String)> {
        if self.eat(c) {
            Ok(())
        } else {
            Err((self.pos, format!("expected `{}`", c as char)))
        }
    }

    fn string(&mut self) -> std::result::Result<String, (usize, String)> {
        let quote = match self.s.get(self.pos) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err((self.pos, "expected a quoted string".into())),
        };
        let start = self.pos + 1;
        let len = self.s[start..]
            .iter()
            .position(|&c| c == quote)
            .ok_or((self.pos, "unterminated string".to_string()))?;
        self.pos = start + len + 1;
        Ok(String::from_utf8_lossy(&self.s[start..start + len]).into_owned())
    }

    fn boolean(&mut self) -> std::result::Result<bool, (usize, String)> {
        let rest = &self.s[self.pos..];
        if rest.starts_with(b"True") {
            self.pos += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.pos += 5;
            Ok(false)
        } else {
            Err((self.pos, "expected True or False".into()))
        }
    }

    fn tuple(&mut self) -> std::result::Result<Vec<usize>, (usize, String)> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(b')') {
                return Ok(dims);
            }
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let digits = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
            dims.push(
                digits
                    .parse()
                    .map_err(|_| (start, "expected a dimension".to_string()))?,
            );
            self.skip_ws();
            if !self.eat(b',') {
                self.skip_ws();
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }
}
