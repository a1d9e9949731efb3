use std::fs;
use std::path::{Path, PathBuf};

use super::bytes::Reader;
use crate::error::Result;
use crate::flow::FlowField;
use crate::tensor::Tensor;

/// The float 202021.25 in little-endian byte order.
pub const FLOW_TAG: &[u8; 4] = b"PIEH";
pub const FLOW_HEADER_LEN: usize = 12;

pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let (h, w) = (flow.height(), flow.width());
    let plane = h * w;
    let d = flow.values.data();
    let mut out = Vec::with_capacity(FLOW_HEADER_LEN + 8 * plane);
    out.extend_from_slice(FLOW_TAG);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for i in 0..plane {
        out.extend_from_slice(&d[i].to_le_bytes());
        out.extend_from_slice(&d[plane + i].to_le_bytes());
    }
    out
}

/// Decodes values; every pixel is marked valid.
pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    let mut r = Reader::new(bytes);
    r.expect_magic(FLOW_TAG)?;
    let w = r.u32("width")? as usize;
    let at = r.offset();
    let h = r.u32("height")? as usize;
    if w == 0 || h == 0 {
        return Err(Reader::error_at(at - 4, format!("empty flow {w}×{h}")));
    }
    let plane = w.checked_mul(h).filter(|p| p.checked_mul(8).is_some_and(|n| n <= r.remaining()));
    let Some(plane) = plane else {
        return Err(r.error(format!("{w}×{h} flow needs more than {} payload bytes", r.remaining())));
    };
    let mut data = vec![0f32; 2 * plane];
    for i in 0..plane {
        data[i] = r.f32("u")?;
        data[plane + i] = r.f32("v")?;
    }
    r.finish()?;
    FlowField::new(Tensor::new(&[2, h, w], data)?, vec![true; plane])
}

/// Where the validity mask of `path` lives: the same name with `.mask` appended.
pub fn mask_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".mask");
    PathBuf::from(s)
}

/// Writes values and the sibling mask file of 0/1 bytes.
pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flow(flow))?;
    let mask: Vec<u8> = flow.valid.iter().map(|&v| u8::from(v)).collect();
    fs::write(mask_path(path), mask)?;
    Ok(())
}

/// Reads values plus the sibling mask when present.
pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let flow = decode_flow(&fs::read(path)?)?;
    let mpath = mask_path(path);
    if !mpath.exists() {
        return Ok(flow);
    }
    let bytes = fs::read(&mpath)?;
    if bytes.len() != flow.valid.len() {
        return Err(Reader::error_at(
            0,
            format!("mask {} has {} bytes for {} pixels", mpath.display(), bytes.len(), flow.valid.len()),
        ));
    }
    let mut valid = Vec::with_capacity(bytes.len());
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            0 => valid.push(false),
            1 => valid.push(true),
            _ => return Err(Reader::error_at(i as u64, format!("mask byte {b} is not 0 or 1"))),
        }
    }
    flow.with_valid(valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn two_by_two_zero_flow_is_44_bytes() {
        let b = encode_flow(&FlowField::zeros(2, 2));
        assert_eq!(b.len(), 44);
        assert_eq!(&b[..4], &202021.25f32.to_le_bytes());
    }

    #[test]
    fn round_trip_keeps_bits() {
        let data = vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25e7, f32::NAN, 7.0];
        let flow = FlowField::new(Tensor::new(&[2, 1, 3], data).unwrap(), vec![true; 3]).unwrap();
        let back = decode_flow(&encode_flow(&flow)).unwrap();
        let bits = |f: &FlowField| f.values.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&flow), bits(&back));
        assert_eq!(back.values.shape(), &[2, 1, 3]);
    }

    #[test]
    fn bad_tag_rejected() {
        let mut b = encode_flow(&FlowField::zeros(1, 1));
        b[3] = b'X';
        assert!(matches!(decode_flow(&b), Err(Error::Format { offset: 0, .. })));
        let b = encode_flow(&FlowField::zeros(2, 2));
        assert!(decode_flow(&b[..40]).is_err());
    }

    #[test]
    fn mask_sibling_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.flo");
        let flow = FlowField::constant(2, 3, 1.0, -2.0)
            .with_valid(vec![true, false, false, true, true, false])
            .unwrap();
        write_flow(&p, &flow).unwrap();
        assert!(mask_path(&p).ends_with("a.flo.mask"));
        assert_eq!(read_flow(&p).unwrap(), flow);
    }
}
