use std::path::Path;

use crate::error::{Error, Result};

use super::RasterImage;

/// Binary 8-bit PGM (P5), each value stored as `round(v * 255)`.
pub fn encode_pgm(img: &RasterImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.values.iter().map(|v| (v * 255.0).round() as u8));
    out
}

pub fn write_pgm(img: &RasterImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<RasterImage> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Whitespace and comments between header tokens.
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("only binary P5 images are supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated raster"))?;
    RasterImage::new(w, h, data.iter().map(|&b| b as f64 / maxval as f64).collect())
}

pub fn read_pgm(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_are_255() {
        let img = RasterImage::filled(3, 2, 1.0);
        let b = encode_pgm(&img);
        assert!(b.starts_with(b"P5\n3 2\n255\n"));
        assert!(b[b.len() - 6..].iter().all(|&x| x == 255));
    }

    #[test]
    fn known_payload_bytes() {
        let img = RasterImage::new(2, 2, vec![0.0, 0.5, 0.25, 1.0]).unwrap();
        let b = encode_pgm(&img);
        assert_eq!(&b[b.len() - 4..], &[0, 128, 64, 255]);
    }

    #[test]
    fn round_trip_quantizes() {
        let img = RasterImage::new(3, 1, vec![0.1, 0.7, 0.333]).unwrap();
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        for (a, b) in img.values.iter().zip(&back.values) {
            assert_eq!(*b, (a * 255.0).round() / 255.0);
        }
    }

    #[test]
    fn header_comments_and_errors() {
        let mut b = b"P5 # comment\n2 1\n255\n".to_vec();
        b.extend([0, 255]);
        assert_eq!(decode_pgm(&b).unwrap().values, vec![0.0, 1.0]);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn io_error_names_path() {
        let e = write_pgm(&RasterImage::filled(1, 1, 0.0), Path::new("/nonexistent/dir/x.pgm")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/dir/x.pgm"), "{e}");
    }
}
