//! Binary PPM/PGM images: 8-bit RGB frames, 16-bit depth maps carrying a
//! `# scale <meters-per-unit>` comment, and 8-bit masks.

use std::path::Path;

use diffcore::Tensor;

use crate::error::{contract, io_err, Error, Result};

/// Quantizes `[3,H,W]` intensities in `[0,1]` to 8 bits.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let [3, h, w] = *image.shape() else {
        return Err(contract("write ppm", format!("expected [3,H,W], got {:?}", image.shape())));
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for i in 0..h * w {
        for c in 0..3 {
            out.push(quantize(d[c * h * w + i]));
        }
    }
    Ok(out)
}

pub fn encode_pgm16(depth: &Tensor, scale: f64) -> Result<Vec<u8>> {
    let [h, w] = *depth.shape() else {
        return Err(contract("write pgm", format!("expected [H,W], got {:?}", depth.shape())));
    };
    if !(scale > 0.0) {
        return Err(contract("write pgm", format!("scale must be positive, got {scale}")));
    }
    let mut out = format!("P5\n# scale {scale:?}\n{w} {h}\n65535\n").into_bytes();
    for &d in depth.data() {
        let q = (d / scale).round();
        if !(0.0..=65535.0).contains(&q) {
            return Err(contract("write pgm", format!("depth {d} not representable at scale {scale}")));
        }
        out.extend_from_slice(&(q as u16).to_be_bytes());
    }
    Ok(out)
}

pub fn encode_pgm8(values: &[u8], w: usize, h: usize) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

struct Header {
    magic: [u8; 2],
    w: usize,
    h: usize,
    maxval: usize,
    scale: Option<f64>,
    data_at: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let err = |offset: usize, msg: String| Error::Parse { path: path.to_path_buf(), offset, msg };
    if bytes.len() < 2 {
        return Err(err(0, "truncated header: missing magic".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut at = 2;
    let mut fields = Vec::new();
    let mut scale = None;
    while fields.len() < 3 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if at >= bytes.len() {
            return Err(err(at, "truncated header: missing dimensions".into()));
        }
        if bytes[at] == b'#' {
            let end = bytes[at..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |p| at + p);
            let comment = String::from_utf8_lossy(&bytes[at + 1..end]);
            if let Some(v) = comment.trim().strip_prefix("scale") {
                scale = Some(v.trim().parse::<f64>().map_err(|_| err(at, format!("bad scale comment {v:?}")))?);
            }
            at = end;
            continue;
        }
        let start = at;
        while at < bytes.len() && bytes[at].is_ascii_digit() {
            at += 1;
        }
        let tok = std::str::from_utf8(&bytes[start..at]).unwrap_or("");
        fields.push(tok.parse::<usize>().map_err(|_| err(start, "bad header number".into()))?);
    }
    if at >= bytes.len() || !bytes[at].is_ascii_whitespace() {
        return Err(err(at, "truncated header".into()));
    }
    Ok(Header { magic, w: fields[0], h: fields[1], maxval: fields[2], scale, data_at: at + 1 })
}

fn payload<'a>(bytes: &'a [u8], hd: &Header, bpp: usize, path: &Path) -> Result<&'a [u8]> {
    let need = hd.w * hd.h * bpp;
    let have = bytes.len() - hd.data_at.min(bytes.len());
    if have < need {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: bytes.len(),
            msg: format!("truncated pixel data: need {need} bytes, have {have}"),
        });
    }
    Ok(&bytes[hd.data_at..hd.data_at + need])
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

/// Decodes an 8-bit P6 image into `[3,H,W]` intensities in `[0,1]`.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let hd = parse_header(bytes, path)?;
    if &hd.magic != b"P6" || hd.maxval != 255 {
        return Err(Error::Parse { path: path.to_path_buf(), offset: 0, msg: "expected 8-bit P6".into() });
    }
    let px = payload(bytes, &hd, 3, path)?;
    let (h, w) = (hd.h, hd.w);
    let mut data = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = px[3 * i + c] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(vec![3, h, w], data)?)
}

/// Decodes a 16-bit depth PGM into meters using its scale comment.
pub fn decode_pgm16(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let hd = parse_header(bytes, path)?;
    if &hd.magic != b"P5" || hd.maxval != 65535 {
        return Err(Error::Parse { path: path.to_path_buf(), offset: 0, msg: "expected 16-bit P5".into() });
    }
    let scale = hd.scale.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        msg: "missing scale comment".into(),
    })?;
    let px = payload(bytes, &hd, 2, path)?;
    let data = px.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale).collect();
    Ok(Tensor::new(vec![hd.h, hd.w], data)?)
}

pub fn decode_pgm8(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let hd = parse_header(bytes, path)?;
    if &hd.magic != b"P5" || hd.maxval != 255 {
        return Err(Error::Parse { path: path.to_path_buf(), offset: 0, msg: "expected 8-bit P5".into() });
    }
    Ok((payload(bytes, &hd, 1, path)?.to_vec(), hd.w, hd.h))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm(&read(path)?, path)
}

pub fn read_pgm16(path: &Path) -> Result<Tensor> {
    decode_pgm16(&read(path)?, path)
}

pub fn read_pgm8(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    decode_pgm8(&read(path)?, path)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}
