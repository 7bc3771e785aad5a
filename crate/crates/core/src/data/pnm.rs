//! Binary PNM (P5 grayscale, P6 color). Samples are normalised to `[0, 1]`
//! on read; writes always use 16-bit big-endian samples with maxval 65535.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

const FORMAT: &str = "PNM";

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        format: FORMAT,
        detail: detail.into(),
    }
}

/// Splits `count` whitespace-separated header tokens (skipping `#`
/// comments) and returns them with the offset of the first data byte.
pub(crate) fn header_tokens(bytes: &[u8], count: usize, format: &'static str) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format {
                format,
                detail: "truncated header".into(),
            });
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the samples
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(Error::Format {
            format,
            detail: "missing header terminator".into(),
        });
    }
    Ok((tokens, i + 1))
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let (tokens, start) = header_tokens(bytes, 4, FORMAT)?;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(format!("unsupported magic {other:?}"))),
    };
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| bad(format!("invalid {what} {s:?}")))
    };
    let width = parse(&tokens[1], "width")?;
    let height = parse(&tokens[2], "height")?;
    let maxval = parse(&tokens[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(format!("maxval {maxval} outside 1..=65535")));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let count = width * height * channels;
    let body = &bytes[start..];
    if body.len() < count * bytes_per {
        return Err(bad(format!(
            "expected {} sample bytes, found {}",
            count * bytes_per,
            body.len()
        )));
    }
    let scale = 1.0 / maxval as f64;
    let data = (0..count)
        .map(|i| {
            let v = if bytes_per == 1 {
                body[i] as u32
            } else {
                u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as u32
            };
            if v as usize > maxval {
                return Err(bad(format!("sample {v} exceeds maxval {maxval}")));
            }
            Ok((v as f64 * scale) as f32)
        })
        .collect::<Result<Vec<f32>>>()?;
    Image::from_vec(width, height, channels, data)
}

/// Nearest 16-bit code of a `[0, 1]` sample.
#[inline]
pub fn quantize16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

pub fn encode(img: &Image) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(bad(format!("cannot encode {c} channels"))),
    };
    let mut out = format!("{magic}\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 2);
    for &v in &img.data {
        out.extend_from_slice(&quantize16(v).to_be_bytes());
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Image> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode(img)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_sixteen_bit_is_one() {
        let mut bytes = b"P6\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xFF, 0xFF, 0x00, 0x00, 0x80, 0x00]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.data[0], 1.0);
        assert_eq!(img.data[1], 0.0);
        assert_eq!(encode(&img).unwrap(), bytes);
    }

    #[test]
    fn eight_bit_and_comments() {
        let bytes = b"P5\n# a comment\n2 1\n255\n\x00\xff".to_vec();
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 1, 1));
        assert_eq!(img.data, vec![0.0, 1.0]);
    }

    #[test]
    fn corrupted_headers_rejected() {
        for bytes in [
            b"P3\n1 1\n255\n\x00".to_vec(),
            b"P6\n1 x\n255\n\x00\x00\x00".to_vec(),
            b"P6\n1 1\n70000\n\x00\x00\x00".to_vec(),
            b"P6\n1 1".to_vec(),
            b"P6\n2 2\n255\n\x00".to_vec(),
        ] {
            assert!(matches!(decode(&bytes), Err(Error::Format { format: "PNM", .. })));
        }
    }
}
