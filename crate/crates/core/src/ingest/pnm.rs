//! Netpbm readers and writers: PPM (P3/P6) color images and PGM (P2/P5) label maps.

use std::fs;
use std::path::Path;

use super::{LabelGrid, PixelGrid};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Magic {
    PgmAscii,
    PpmAscii,
    PgmBinary,
    PpmBinary,
}

impl Magic {
    fn channels(self) -> usize {
        match self {
            Magic::PgmAscii | Magic::PgmBinary => 1,
            Magic::PpmAscii | Magic::PpmBinary => 3,
        }
    }

    fn is_binary(self) -> bool {
        matches!(self, Magic::PgmBinary | Magic::PpmBinary)
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.data.len() {
                self.err(format!("unexpected end of data while reading {what}"))
            } else {
                self.err(format!(
                    "expected {what}, found byte 0x{:02x}",
                    self.data[self.pos]
                ))
            });
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                message: format!("{what} does not fit in 32 bits"),
            })
    }
}

struct Raster {
    width: usize,
    height: usize,
    maxval: u32,
    channels: usize,
    samples: Vec<u32>,
}

fn parse_raster(data: &[u8], want_channels: usize) -> Result<Raster> {
    let mut cur = Cursor { data, pos: 0 };
    if data.len() < 2 || data[0] != b'P' {
        return Err(cur.err("missing netpbm magic number"));
    }
    let magic = match data[1] {
        b'2' => Magic::PgmAscii,
        b'3' => Magic::PpmAscii,
        b'5' => Magic::PgmBinary,
        b'6' => Magic::PpmBinary,
        _ => return Err(cur.err(format!("unsupported magic P{}", data[1] as char))),
    };
    if magic.channels() != want_channels {
        let kind = if want_channels == 3 {
            "PPM (P3/P6)"
        } else {
            "PGM (P2/P5)"
        };
        return Err(cur.err(format!(
            "expected a {kind} file, found P{}",
            data[1] as char
        )));
    }
    cur.pos = 2;
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.err(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 255 {
        return Err(cur.err(format!("maxval must be in 1..=255, got {maxval}")));
    }
    let count = width * height * magic.channels();
    let samples = if magic.is_binary() {
        // exactly one whitespace byte separates the header from the payload
        if cur.pos >= data.len() || !data[cur.pos].is_ascii_whitespace() {
            return Err(cur.err("missing whitespace after maxval"));
        }
        cur.pos += 1;
        let available = data.len() - cur.pos;
        if available < count {
            return Err(cur.err(format!(
                "truncated payload: expected {count} bytes, found {available}"
            )));
        }
        data[cur.pos..cur.pos + count]
            .iter()
            .map(|&b| b as u32)
            .collect()
    } else {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(cur.number("sample")?);
        }
        out
    };
    if let Some(i) = samples.iter().position(|&s| s > maxval) {
        return Err(Error::Parse {
            offset: cur.pos,
            message: format!(
                "sample {i} has value {} exceeding maxval {maxval}",
                samples[i]
            ),
        });
    }
    Ok(Raster {
        width,
        height,
        maxval,
        channels: magic.channels(),
        samples,
    })
}

/// Decodes a PPM byte buffer, scaling samples into `[0, 1]`.
pub fn decode_ppm(data: &[u8]) -> Result<PixelGrid> {
    let r = parse_raster(data, 3)?;
    debug_assert_eq!(r.channels, 3);
    let scale = 1.0 / r.maxval as f64;
    let values = r.samples.iter().map(|&s| s as f64 * scale).collect();
    PixelGrid::new(r.width, r.height, values)
}

/// Decodes a PGM label map; samples equal to `void_value` become VOID.
pub fn decode_pgm_labels(data: &[u8], void_value: u32) -> Result<LabelGrid> {
    let r = parse_raster(data, 1)?;
    let labels = r
        .samples
        .iter()
        .map(|&s| {
            if s == void_value {
                None
            } else {
                Some(s as usize)
            }
        })
        .collect();
    LabelGrid::new(r.width, r.height, labels)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<PixelGrid> {
    decode_ppm(&fs::read(path)?)
}

pub fn load_labels(path: impl AsRef<Path>, void_value: u32) -> Result<LabelGrid> {
    decode_pgm_labels(&fs::read(path)?, void_value)
}

/// Binary P6 encoding at maxval 255.
pub fn encode_ppm(img: &PixelGrid) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.values()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

/// ASCII P3 encoding at maxval 255.
pub fn encode_ppm_ascii(img: &PixelGrid) -> Vec<u8> {
    let mut out = format!("P3\n{} {}\n255\n", img.width(), img.height());
    for px in img.values().chunks(3) {
        let b: Vec<String> = px
            .iter()
            .map(|&v| ((v * 255.0).round().clamp(0.0, 255.0) as u8).to_string())
            .collect();
        out.push_str(&b.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

/// Binary P5 encoding; VOID pixels are written as `void_value`.
pub fn encode_pgm_labels(labels: &LabelGrid, void_value: u8) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    for l in labels.iter() {
        match l {
            Some(c) if c > 255 || c == void_value as usize => {
                return Err(Error::Invalid(format!(
                    "class {c} cannot be stored in a PGM label map with void value {void_value}"
                )))
            }
            Some(c) => out.push(c as u8),
            None => out.push(void_value),
        }
    }
    Ok(out)
}

pub fn save_image(path: impl AsRef<Path>, img: &PixelGrid) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn save_labels(path: impl AsRef<Path>, labels: &LabelGrid, void_value: u8) -> Result<()> {
    fs::write(path, encode_pgm_labels(labels, void_value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_red_pixel() {
        let img = decode_ppm(b"P3\n1 1\n255\n255 0 0\n").unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn p3_and_p6_agree() {
        let ascii = b"P3\n# comment\n2 1\n255\n10 20 30 40 50 60\n";
        let mut binary = b"P6\n2 1\n255\n".to_vec();
        binary.extend([10u8, 20, 30, 40, 50, 60]);
        assert_eq!(decode_ppm(ascii).unwrap(), decode_ppm(&binary).unwrap());
    }

    #[test]
    fn truncated_p6_names_byte_counts() {
        let mut data = b"P6\n2 2\n255\n".to_vec();
        data.extend([1u8; 5]);
        let err = decode_ppm(&data).unwrap_err();
        match err {
            Error::Parse { offset, message } => {
                assert_eq!(offset, 11);
                assert!(message.contains("expected 12 bytes, found 5"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labels_with_void() {
        let l = decode_pgm_labels(b"P2\n2 1\n255\n0 255\n", 255).unwrap();
        assert_eq!(l.get(0, 0), Some(0));
        assert_eq!(l.get(1, 0), None);
        let all = decode_pgm_labels(b"P2\n2 2\n255\n7 7 7 7\n", 7).unwrap();
        assert!(all.iter().all(|v| v.is_none()));
    }

    #[test]
    fn label_exceeding_maxval_is_rejected() {
        let err = decode_pgm_labels(b"P2\n2 1\n5\n0 6\n", 255).unwrap_err();
        assert!(err.to_string().contains("exceeding maxval 5"), "{err}");
    }

    #[test]
    fn label_round_trip() {
        let l = LabelGrid::new(3, 2, vec![Some(0), Some(4), None, Some(2), Some(2), None]).unwrap();
        let back = decode_pgm_labels(&encode_pgm_labels(&l, 255).unwrap(), 255).unwrap();
        assert_eq!(l, back);
    }

    #[test]
    fn wrong_kind_rejected() {
        assert!(decode_ppm(b"P2\n1 1\n255\n0\n").is_err());
        assert!(decode_pgm_labels(b"P3\n1 1\n255\n0 0 0\n", 255).is_err());
    }

    #[test]
    fn ascii_encoding_round_trips() {
        let img = PixelGrid::new(2, 1, vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8]).unwrap();
        let a = decode_ppm(&encode_ppm_ascii(&img)).unwrap();
        let b = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(a, b);
    }
}
