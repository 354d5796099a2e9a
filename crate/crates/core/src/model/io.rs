//! AEVM model files and JSON-lines training history.
//!
//! AEVM v1, little-endian: magic "AEVM", version u32 = 1, dim u32, then the
//! ten heads in canonical order, each as 10 x dim weight floats (bin-major)
//! followed by 10 bias floats, all IEEE-754 f32.

use std::io::{self, BufRead, Read, Write};

use super::train::EpochRecord;
use super::{Head, ModelError, ProbeModel};
use crate::heads::{PerHead, NUM_BINS};

pub const MODEL_MAGIC: [u8; 4] = *b"AEVM";
pub const MODEL_VERSION: u32 = 1;

/// Upper bound on the feature dimension accepted from a file header.
const MAX_DIM: u32 = 1 << 24;

pub fn write_model<W: Write>(model: &ProbeModel, mut sink: W) -> Result<u64, ModelError> {
    let dim = u32::try_from(model.dim)
        .map_err(|_| ModelError::Format(format!("dimension {} does not fit in u32", model.dim)))?;
    if !model.is_finite() {
        return Err(ModelError::Format("model has non-finite parameters".into()));
    }
    let mut buf = Vec::with_capacity(12 + model.num_parameters() * 4);
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    for (_, head) in model.heads.iter() {
        for &w in head.weights.iter().chain(head.bias.iter()) {
            buf.extend_from_slice(&(w as f32).to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(buf.len() as u64)
}

fn read_f32s<R: Read>(source: &mut R, out: &mut [f64], what: &str) -> Result<(), ModelError> {
    let mut raw = vec![0u8; out.len() * 4];
    source.read_exact(&mut raw).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ModelError::Format(format!("truncated {what}")),
        _ => ModelError::Io(e),
    })?;
    for (slot, chunk) in out.iter_mut().zip(raw.chunks_exact(4)) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(ModelError::Format(format!("non-finite value in {what}")));
        }
        *slot = v as f64;
    }
    Ok(())
}

pub fn read_model<R: Read>(mut source: R) -> Result<ProbeModel, ModelError> {
    let mut header = [0u8; 12];
    source.read_exact(&mut header).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ModelError::Format("truncated header".into()),
        _ => ModelError::Io(e),
    })?;
    if header[0..4] != MODEL_MAGIC {
        return Err(ModelError::Format(format!(
            "bad magic {:?}, expected \"AEVM\"",
            &header[0..4]
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != MODEL_VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    if dim == 0 || dim > MAX_DIM {
        return Err(ModelError::Format(format!("invalid dimension {dim}")));
    }
    let dim = dim as usize;

    let mut heads = Vec::with_capacity(crate::NUM_HEADS);
    for key in crate::HeadKey::ALL {
        let mut head = Head::zeros(dim);
        read_f32s(&mut source, &mut head.weights, &format!("{key} weights"))?;
        read_f32s(&mut source, &mut head.bias, &format!("{key} bias"))?;
        heads.push(head);
    }
    let mut rest = [0u8; 1];
    if source.read(&mut rest)? != 0 {
        return Err(ModelError::Format("trailing bytes after the last head".into()));
    }
    let heads: [Head; crate::NUM_HEADS] = heads
        .try_into()
        .unwrap_or_else(|_| unreachable!("one head per key"));
    debug_assert!(heads.iter().all(|h| h.bias.len() == NUM_BINS));
    Ok(ProbeModel {
        dim,
        heads: PerHead(heads),
    })
}

pub fn write_history<W: Write>(history: &[EpochRecord], mut sink: W) -> io::Result<()> {
    for record in history {
        serde_json::to_writer(&mut sink, record)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_history<R: BufRead>(reader: R) -> Result<Vec<EpochRecord>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| ModelError::Format(format!("history line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let model = ProbeModel::init(3, 11);
        let mut buf = Vec::new();
        let n = write_model(&model, &mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        assert_eq!(buf.len(), 12 + 10 * (10 * 3 + 10) * 4);
        assert_eq!(&buf[0..4], b"AEVM");
        let back = read_model(&buf[..]).unwrap();
        assert_eq!(back.dim, 3);
        for ((_, a), (_, b)) in model.heads.iter().zip(back.heads.iter()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // Values already representable in f32 survive exactly.
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn first_head_is_pq_expert() {
        let mut model = ProbeModel::zeros(1);
        model.heads.0[0].bias[0] = 1.5;
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        // Header, then 10 weights of head 0, then its first bias.
        let at = 12 + 10 * 4;
        assert_eq!(f32::from_le_bytes(buf[at..at + 4].try_into().unwrap()), 1.5);
    }

    #[test]
    fn corrupt_files_rejected() {
        let mut buf = Vec::new();
        write_model(&ProbeModel::zeros(2), &mut buf).unwrap();
        assert!(read_model(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_model(&extra[..]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_model(&bad[..]).is_err());
        let mut version = buf;
        version[4] = 9;
        assert!(read_model(&version[..]).is_err());
    }

    #[test]
    fn history_round_trip() {
        let history = vec![
            EpochRecord {
                epoch: 1,
                train_loss: 3.5,
                val_loss: 4.0,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 2.25,
                val_loss: 3.0,
            },
        ];
        let mut buf = Vec::new();
        write_history(&history, &mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 2);
        assert_eq!(read_history(&buf[..]).unwrap(), history);
    }
}
