//! Minimal NPY reader/writer for rank-3 little-endian `float32` arrays.
//!
//! Writes format version 1.0. Reads versions 1.0, 2.0 and 3.0 as long as the
//! payload is `<f4` in C order.

use std::io::{Read, Write};

use crate::error::{PromiError, Result};

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Header {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

pub(crate) fn write_f32<W: Write>(w: &mut W, shape: &[usize], data: &[f32]) -> std::io::Result<()> {
    let dims = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}");
    // magic(6) + version(2) + header_len(2) + dict + '\n' must be a multiple of ALIGN
    let unpadded = 10 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let header_len = u16::try_from(dict.len())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "npy header too long"))?;
    w.write_all(MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(dict.as_bytes())?;

    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| PromiError::Format("file too short for npy magic".into()))?;
    if &magic[..6] != MAGIC {
        return Err(PromiError::Format("missing npy magic string".into()));
    }
    let header_len = match magic[6] {
        1 => {
            let mut b = [0u8; 2];
            r.read_exact(&mut b)
                .map_err(|_| PromiError::Format("truncated npy header length".into()))?;
            u16::from_le_bytes(b) as usize
        }
        2 | 3 => {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| PromiError::Format("truncated npy header length".into()))?;
            u32::from_le_bytes(b) as usize
        }
        v => return Err(PromiError::Format(format!("unsupported npy version {v}"))),
    };
    let mut raw = vec![0u8; header_len];
    r.read_exact(&mut raw)
        .map_err(|_| PromiError::Format("truncated npy header".into()))?;
    let text = std::str::from_utf8(&raw).map_err(|_| PromiError::Format("npy header is not valid text".into()))?;
    parse_dict(text)
}

fn parse_dict(text: &str) -> Result<Header> {
    let text = text.trim();
    if !text.starts_with('{') || !text.ends_with('}') {
        return Err(PromiError::Format(format!("malformed npy header: {text}")));
    }

    let descr = value_after(text, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| PromiError::Format("malformed descr".into()))?
        .to_string();

    let fortran = value_after(text, "fortran_order")?;
    let fortran_order = if fortran.starts_with("True") {
        true
    } else if fortran.starts_with("False") {
        false
    } else {
        return Err(PromiError::Format("malformed fortran_order".into()));
    };

    let shape_src = value_after(text, "shape")?;
    let inner = shape_src
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| PromiError::Format("malformed shape".into()))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| PromiError::Format(format!("bad shape entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Header {
        descr,
        fortran_order,
        shape,
    })
}

fn value_after<'a>(text: &'a str, key: &str) -> Result<&'a str> {
    let quoted = format!("'{key}'");
    let pos = text
        .find(&quoted)
        .ok_or_else(|| PromiError::Format(format!("npy header lacks {key}")))?;
    let rest = text[pos + quoted.len()..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| PromiError::Format(format!("npy header: no ':' after {key}")))?;
    Ok(rest.trim_start())
}

pub(crate) fn read_f32_payload<R: Read>(r: &mut R, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| PromiError::Format(format!("npy payload shorter than {count} float32 values")))?;
    let mut extra = [0u8; 1];
    if matches!(r.read(&mut extra), Ok(n) if n > 0) {
        return Err(PromiError::Format("trailing bytes after npy payload".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_64_byte_aligned() {
        let mut buf = Vec::new();
        write_f32(&mut buf, &[1, 1, 1], &[0.5]).unwrap();
        assert_eq!((buf.len() - 4) % 64, 0);
        assert_eq!(&buf[..8], b"\x93NUMPY\x01\x00");
        let header_len = u16::from_le_bytes([buf[8], buf[9]]) as usize;
        let dict = std::str::from_utf8(&buf[10..10 + header_len]).unwrap();
        assert!(dict.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 1), }"));
        assert!(dict.ends_with('\n'));
        assert_eq!(&buf[buf.len() - 4..], &0.5f32.to_le_bytes());
    }

    #[test]
    fn parses_numpy_style_header() {
        let h = parse_dict("{'descr': '<f4', 'fortran_order': False, 'shape': (48, 48, 768), }").unwrap();
        assert_eq!(h.descr, "<f4");
        assert!(!h.fortran_order);
        assert_eq!(h.shape, vec![48, 48, 768]);

        let h = parse_dict("{'shape': (3,), 'fortran_order': True, 'descr': '<f8'}").unwrap();
        assert_eq!(h.shape, vec![3]);
        assert!(h.fortran_order);
    }

    #[test]
    fn rejects_garbage_header() {
        assert!(matches!(parse_dict("not a dict"), Err(PromiError::Format(_))));
        assert!(matches!(
            parse_dict("{'descr': '<f4', 'shape': (2, x)}"),
            Err(PromiError::Format(_))
        ));
    }
}
