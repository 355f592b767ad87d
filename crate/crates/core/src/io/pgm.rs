//! Binary (P5) PGM with 8- or 16-bit samples. 16-bit samples are big-endian.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples.
    pub data: Vec<u16>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Pgm(msg.into())
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| bad(format!("header field {} is not a number", k + 1)))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("no whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("maxval {maxval} outside 1..=65535")));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| bad("dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() != n * bps {
        return Err(bad(format!(
            "expected {} bytes of samples, found {}",
            n * bps,
            payload.len()
        )));
    }
    let data: Vec<u16> = if bps == 1 {
        payload.iter().map(|&b| b as u16).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(v) = data.iter().find(|&&v| v as usize > maxval) {
        return Err(bad(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        data,
    })
}

/// Always writes 16-bit samples with maxval 65535.
pub fn encode_pgm(width: usize, height: usize, data: &[u16]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || data.len() != width * height {
        return Err(bad(format!(
            "{} samples for a {width}x{height} image",
            data.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(data.len() * 2);
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_pgm(&bytes).map_err(|e| bad(format!("{}: {e}", path.display())))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    super::container::write_atomic(path, &encode_pgm(width, height, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_16_bit() {
        let data: Vec<u16> = (0..12).map(|v| v * 5000).collect();
        let b = encode_pgm(4, 3, &data).unwrap();
        let p = parse_pgm(&b).unwrap();
        assert_eq!((p.width, p.height, p.maxval), (4, 3, 65535));
        assert_eq!(p.data, data);
    }

    #[test]
    fn reads_8_bit_with_comments() {
        let mut b = b"P5\n# made by hand\n2 2\n# max\n255\n".to_vec();
        b.extend_from_slice(&[0, 10, 200, 255]);
        let p = parse_pgm(&b).unwrap();
        assert_eq!(p.data, vec![0, 10, 200, 255]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(parse_pgm(b"P5\n1 1\n4095\n\xff\xff").is_err());
        assert!(parse_pgm(b"P5\n0 1\n255\n").is_err());
        assert!(parse_pgm(b"P5\n1 1").is_err());
    }
}
