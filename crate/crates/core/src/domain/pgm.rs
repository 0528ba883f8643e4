//! Binary PGM ("P5") codec for 32x32, maxval-255 micrographs.

use super::records::{Micrograph, IMAGE_SIDE};
use crate::error::{Error, Result};

pub fn encode(m: &Micrograph) -> Vec<u8> {
    let mut out = format!("P5\n{IMAGE_SIDE} {IMAGE_SIDE}\n255\n").into_bytes();
    out.extend(m.to_bytes());
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::field("image", msg)
}

/// Parses a P5 image. Header tokens may be separated by any whitespace and
/// interleaved with `#` comments; exactly one whitespace byte precedes the
/// pixel data.
pub fn decode(bytes: &[u8]) -> Result<Micrograph> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            match bytes.get(*pos) {
                Some(b) if b.is_ascii_whitespace() => *pos += 1,
                Some(b'#') => {
                    while bytes.get(*pos).is_some_and(|b| *b != b'\n') {
                        *pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated PGM header")),
            }
        }
        let start = *pos;
        while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            *pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P5" {
        return Err(bad("not a binary PGM (missing P5 magic)"));
    }
    let num = |pos: &mut usize, what: &str| -> Result<usize> {
        let t = token(pos)?;
        t.parse()
            .map_err(|_| bad(format!("PGM {what} `{t}` is not a number")))
    };
    let width = num(&mut pos, "width")?;
    let height = num(&mut pos, "height")?;
    let maxval = num(&mut pos, "maxval")?;
    if width != IMAGE_SIDE || height != IMAGE_SIDE {
        return Err(bad(format!(
            "image is {width}x{height}, expected {IMAGE_SIDE}x{IMAGE_SIDE}"
        )));
    }
    if maxval != 255 {
        return Err(bad(format!(
            "PGM maxval {maxval} unsupported, expected 255"
        )));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("truncated PGM header"));
    }
    pos += 1;
    let data = &bytes[pos..];
    if data.len() != width * height {
        return Err(bad(format!(
            "PGM payload has {} bytes, expected {}",
            data.len(),
            width * height
        )));
    }
    Micrograph::from_bytes(data)
}
