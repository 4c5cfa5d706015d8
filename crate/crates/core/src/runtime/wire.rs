//! Little-endian frame encoding used by the socket transport.
//!
//! ```text
//! u8 kind | u32 source | u32 destination | u64 owner uid | f64 owner value
//!   | u64 entry count | entry count x (f64 value, u64 uid)
//! ```
//!
//! Kinds: 0 column payload, 1 clear request, 2 splitter sample, 3 round end.
//! Clear and sample frames carry their key in the owner fields; a round end
//! carries its reduction value in the owner-uid field.

use std::io::{self, Read, Write};

use super::{Frame, Message, Payload};
use crate::error::{Error, Result};
use crate::filtration::CellKey;
use crate::reduction::Column;

pub const KIND_COLUMN: u8 = 0;
pub const KIND_CLEAR: u8 = 1;
pub const KIND_SAMPLE: u8 = 2;
pub const KIND_ROUND_END: u8 = 3;

const HEADER_LEN: usize = 1 + 4 + 4 + 8 + 8 + 8;

fn header(out: &mut Vec<u8>, kind: u8, src: usize, dst: usize, owner: CellKey, count: usize) {
    out.push(kind);
    out.extend_from_slice(&(src as u32).to_le_bytes());
    out.extend_from_slice(&(dst as u32).to_le_bytes());
    out.extend_from_slice(&owner.uid.to_le_bytes());
    out.extend_from_slice(&owner.value.to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
}

/// Appends the encoding of `frame` to `out`.
pub fn encode(frame: &Frame, out: &mut Vec<u8>) {
    match frame {
        Frame::RoundEnd {
            source,
            destination,
            value,
        } => header(
            out,
            KIND_ROUND_END,
            *source,
            *destination,
            CellKey::new(0.0, *value),
            0,
        ),
        Frame::Message(m) => match &m.payload {
            Payload::Column(c) => {
                header(
                    out,
                    KIND_COLUMN,
                    m.source,
                    m.destination,
                    c.owner,
                    c.entries.len(),
                );
                for e in &c.entries {
                    out.extend_from_slice(&e.value.to_le_bytes());
                    out.extend_from_slice(&e.uid.to_le_bytes());
                }
            }
            Payload::Clear(k) => header(out, KIND_CLEAR, m.source, m.destination, *k, 0),
            Payload::Sample(k) => header(out, KIND_SAMPLE, m.source, m.destination, *k, 0),
        },
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame, buf: &mut Vec<u8>) -> io::Result<()> {
    buf.clear();
    encode(frame, buf);
    w.write_all(buf)
}

/// Reads one frame. `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut head = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut head[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(Error::Transport(
                    "stream ended inside a frame header".into(),
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Transport(format!("read failed: {e}"))),
        }
    }
    let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap()) as usize;
    let u64_at = |o: usize| u64::from_le_bytes(head[o..o + 8].try_into().unwrap());
    let kind = head[0];
    let (source, destination) = (u32_at(1), u32_at(5));
    let owner = CellKey::new(f64::from_bits(u64_at(17)), u64_at(9));
    let count = u64_at(25) as usize;

    let payload = match kind {
        KIND_ROUND_END => {
            return Ok(Some(Frame::RoundEnd {
                source,
                destination,
                value: owner.uid,
            }))
        }
        KIND_COLUMN => {
            if count == 0 {
                return Err(Error::Protocol(format!("empty column payload for {owner}")));
            }
            let mut body = vec![0u8; count * 16];
            r.read_exact(&mut body)
                .map_err(|e| Error::Transport(format!("truncated column body: {e}")))?;
            let entries: Vec<CellKey> = body
                .chunks_exact(16)
                .map(|c| {
                    CellKey::new(
                        f64::from_le_bytes(c[..8].try_into().unwrap()),
                        u64::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect();
            if !entries.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Protocol(format!(
                    "unsorted column payload for {owner}"
                )));
            }
            Payload::Column(Column::from_sorted(owner, entries))
        }
        KIND_CLEAR | KIND_SAMPLE if count != 0 => {
            return Err(Error::Protocol(format!(
                "kind {kind} frame with {count} entries"
            )))
        }
        KIND_CLEAR => Payload::Clear(owner),
        KIND_SAMPLE => Payload::Sample(owner),
        other => return Err(Error::Protocol(format!("unknown frame kind {other}"))),
    };
    Ok(Some(Frame::Message(Message {
        source,
        destination,
        payload,
    })))
}
