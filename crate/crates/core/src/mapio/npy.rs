//! Minimal NPY reader/writer for little-endian float32, C-order arrays.
//!
//! Layout: the 6-byte magic `\x93NUMPY`, a two-byte version, a little-endian
//! header length (u16 for 1.0, u32 for 2.0), then an ASCII Python dict literal
//! padded with spaces and terminated by `\n` so the data starts on a 64-byte
//! boundary. Only `'<f4'` with `fortran_order: False` is accepted.

use std::io::{Read, Write};

use super::MapIoError;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

fn header_dict(shape: &[usize]) -> String {
    let dims = match shape {
        [n] => format!("({n},)"),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}")
}

/// Writes a v1.0 NPY stream. `data.len()` must equal the product of `shape`.
pub fn write_f32<W: Write>(writer: &mut W, shape: &[usize], data: &[f32]) -> Result<(), MapIoError> {
    let count: usize = shape.iter().product();
    if count != data.len() {
        return Err(MapIoError::Shape(format!(
            "shape {shape:?} holds {count} values, got {}",
            data.len()
        )));
    }
    let mut header = header_dict(shape);
    // magic(6) + version(2) + len(2) + header + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.extend(std::iter::repeat_n(' ', unpadded.next_multiple_of(ALIGN) - unpadded));
    header.push('\n');
    let len = u16::try_from(header.len())
        .map_err(|_| MapIoError::Shape(format!("shape {shape:?} too long for an NPY 1.0 header")))?;

    let mut buf = Vec::with_capacity(MAGIC.len() + 4 + header.len() + 4 * data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&[1, 0]);
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    writer.write_all(&buf)?;
    Ok(())
}

/// Reads an NPY stream into its shape and values.
pub fn read_f32<R: Read>(reader: &mut R) -> Result<(Vec<usize>, Vec<f32>), MapIoError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    parse(&bytes)
}

fn malformed(msg: impl Into<String>) -> MapIoError {
    MapIoError::MalformedHeader(msg.into())
}

pub fn parse(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>), MapIoError> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(malformed("missing \\x93NUMPY magic"));
    }
    let (header_len, header_start) = match (bytes[6], bytes[7]) {
        (1, 0) => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        (2, 0) => {
            if bytes.len() < 12 {
                return Err(malformed("truncated version 2.0 preamble"));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        (major, minor) => return Err(malformed(format!("unsupported NPY version {major}.{minor}"))),
    };
    let data_start = header_start + header_len;
    if bytes.len() < data_start {
        return Err(malformed("header length runs past end of file"));
    }
    let header = std::str::from_utf8(&bytes[header_start..data_start])
        .map_err(|_| malformed("header is not ASCII"))?;
    let dict = HeaderDict::parse(header)?;
    if dict.descr != "<f4" {
        return Err(MapIoError::Dtype(dict.descr));
    }
    if dict.fortran_order {
        return Err(MapIoError::Dtype("Fortran-order arrays are not supported".into()));
    }

    let payload = &bytes[data_start..];
    let count: usize = dict.shape.iter().product();
    if payload.len() != 4 * count {
        return Err(MapIoError::Shape(format!(
            "shape {:?} needs {} bytes of data, file has {}",
            dict.shape,
            4 * count,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dict.shape, data))
}

#[derive(Debug, PartialEq)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    fn parse(text: &str) -> Result<Self, MapIoError> {
        let body = text.trim();
        let body = body
            .strip_prefix('{')
            .and_then(|b| b.strip_suffix('}'))
            .ok_or_else(|| malformed("header is not a dict literal"))?;

        let mut descr = None;
        let mut fortran_order = None;
        let mut shape = None;
        let mut rest = body.trim_start();
        while !rest.is_empty() {
            let (key, after) = quoted(rest)?;
            let after = after
                .trim_start()
                .strip_prefix(':')
                .ok_or_else(|| malformed(format!("expected ':' after key {key:?}")))?
                .trim_start();
            let remaining = match key {
                "descr" => {
                    let (value, r) = quoted(after)?;
                    descr = Some(value.to_string());
                    r
                }
                "fortran_order" => {
                    if let Some(r) = after.strip_prefix("False") {
                        fortran_order = Some(false);
                        r
                    } else if let Some(r) = after.strip_prefix("True") {
                        fortran_order = Some(true);
                        r
                    } else {
                        return Err(malformed("fortran_order must be True or False"));
                    }
                }
                "shape" => {
                    let inner = after.strip_prefix('(').ok_or_else(|| malformed("shape must be a tuple"))?;
                    let close = inner.find(')').ok_or_else(|| malformed("unterminated shape tuple"))?;
                    let dims = inner[..close]
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<usize>().map_err(|_| malformed(format!("bad dimension {s:?}"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    shape = Some(dims);
                    &inner[close + 1..]
                }
                other => return Err(malformed(format!("unexpected header key {other:?}"))),
            };
            let remaining = remaining.trim_start();
            rest = remaining.strip_prefix(',').unwrap_or(remaining).trim_start();
        }
        Ok(HeaderDict {
            descr: descr.ok_or_else(|| malformed("missing 'descr'"))?,
            fortran_order: fortran_order.ok_or_else(|| malformed("missing 'fortran_order'"))?,
            shape: shape.ok_or_else(|| malformed("missing 'shape'"))?,
        })
    }
}

fn quoted(s: &str) -> Result<(&str, &str), MapIoError> {
    let quote = s
        .chars()
        .next()
        .filter(|c| *c == '\'' || *c == '"')
        .ok_or_else(|| malformed(format!("expected a quoted string at {:?}", &s[..s.len().min(16)])))?;
    let inner = &s[1..];
    let end = inner.find(quote).ok_or_else(|| malformed("unterminated string"))?;
    Ok((&inner[..end], &inner[end + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_aligned_and_terminated() {
        let mut buf = Vec::new();
        write_f32(&mut buf, &[2, 3, 4], &[0.0; 24]).unwrap();
        let header_len = u16::from_le_bytes([buf[8], buf[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        assert_eq!(buf[10 + header_len - 1], b'\n');
        assert_eq!(buf.len(), 10 + header_len + 24 * 4);
        let text = std::str::from_utf8(&buf[10..10 + header_len]).unwrap();
        assert!(text.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3, 4), }"));
    }

    #[test]
    fn one_dimensional_shape_has_trailing_comma() {
        assert_eq!(
            header_dict(&[5]),
            "{'descr': '<f4', 'fortran_order': False, 'shape': (5,), }"
        );
    }

    #[test]
    fn parses_numpy_written_header() {
        // Header as written by numpy.save for np.zeros((2, 2, 1), '<f4').
        let dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2, 1), }";
        let mut header = dict.to_string();
        let unpadded = 10 + header.len() + 1;
        header.extend(std::iter::repeat_n(' ', unpadded.next_multiple_of(64) - unpadded));
        header.push('\n');
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let (shape, data) = parse(&bytes).unwrap();
        assert_eq!(shape, vec![2, 2, 1]);
        assert_eq!(data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn key_order_and_quotes_are_flexible() {
        let d = HeaderDict::parse("{\"shape\": (3,), 'fortran_order': False, 'descr': '<f4'}").unwrap();
        assert_eq!(d.shape, vec![3]);
        assert_eq!(d.descr, "<f4");
    }

    #[test]
    fn scalar_shape_is_empty() {
        let d = HeaderDict::parse("{'descr': '<f4', 'fortran_order': False, 'shape': (), }").unwrap();
        assert!(d.shape.is_empty());
    }

    #[test]
    fn missing_magic() {
        let err = parse(b"NUMPY\x01\x00\x00\x00").unwrap_err();
        assert!(matches!(err, MapIoError::MalformedHeader(_)));
    }

    fn with_descr(descr: &str) -> Vec<u8> {
        let mut buf = Vec::new();
        write_f32(&mut buf, &[1], &[1.0]).unwrap();
        let at = buf.windows(3).position(|w| w == b"<f4").unwrap();
        buf[at..at + 3].copy_from_slice(descr.as_bytes());
        buf
    }

    #[test]
    fn rejects_other_dtypes() {
        for descr in [">f4", "<f8", "<i4"] {
            let bytes = with_descr(descr);
            assert!(matches!(parse(&bytes), Err(MapIoError::Dtype(_))), "{descr}");
        }
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut buf = Vec::new();
        write_f32(&mut buf, &[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        buf.pop();
        assert!(matches!(parse(&buf), Err(MapIoError::Shape(_))));
    }
}
