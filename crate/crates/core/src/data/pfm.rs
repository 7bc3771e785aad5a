//! Portable float map. Rows are stored bottom to top; a negative scale
//! marks little-endian samples. Writes are always little-endian.

use std::fs;
use std::path::Path;

use super::pnm::header_tokens;
use super::Image;
use crate::error::{Error, Result};

const FORMAT: &str = "PFM";

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        format: FORMAT,
        detail: detail.into(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let (tokens, start) = header_tokens(bytes, 4, FORMAT)?;
    let channels = match tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(bad(format!("unsupported magic {other:?}"))),
    };
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| bad(format!("invalid width {:?}", tokens[1])))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| bad(format!("invalid height {:?}", tokens[2])))?;
    let scale: f32 = tokens[3]
        .parse()
        .map_err(|_| bad(format!("invalid scale {:?}", tokens[3])))?;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad(format!("invalid scale {scale}")));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let body = &bytes[start..];
    if body.len() < row * height * 4 {
        return Err(bad(format!(
            "expected {} sample bytes, found {}",
            row * height * 4,
            body.len()
        )));
    }
    let mut data = vec![0.0f32; row * height];
    for (file_row, chunk) in body.chunks_exact(row * 4).take(height).enumerate() {
        let y = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            data[y * row + i] = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Image::from_vec(width, height, channels, data)
}

pub fn encode(img: &Image) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(bad(format!("cannot encode {c} channels"))),
    };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    out.reserve(img.data.len() * 4);
    for y in (0..img.height).rev() {
        for &v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
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
    fn rows_are_bottom_to_top() {
        let img = Image::from_vec(1, 2, 1, vec![0.25, 0.75]).unwrap();
        let bytes = encode(&img).unwrap();
        let header = b"Pf\n1 2\n-1.0\n".len();
        assert_eq!(&bytes[header..header + 4], &0.75f32.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), img);
    }

    #[test]
    fn big_endian_input_accepted() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [0.5f32, 1.5, -2.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        assert_eq!(decode(&bytes).unwrap().data, vec![0.5, 1.5, -2.0]);
    }

    #[test]
    fn corrupted_headers_rejected() {
        for bytes in [
            b"PX\n1 1\n-1.0\n\0\0\0\0".to_vec(),
            b"Pf\n1 1\nabc\n\0\0\0\0".to_vec(),
            b"Pf\n1 1\n0\n\0\0\0\0".to_vec(),
            b"Pf\n1 2\n-1.0\n\0\0\0\0".to_vec(),
        ] {
            assert!(matches!(decode(&bytes), Err(Error::Format { format: "PFM", .. })));
        }
    }
}
