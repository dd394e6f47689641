//! Differential model distribution.
//!
//! Clients are ordered by ascending mask density. The smallest submodel is
//! sent whole; every larger submodel is sent as the delta against its
//! predecessor, so shared coordinates cross the wire once. A client at
//! position `i` downloads packets `1..=i` and sums them.
//!
//! # Packet layout
//!
//! All integers little-endian:
//!
//! ```text
//! header (16 bytes): round u32 | position_in_order u32 | nonzero_count u32 | reserved u32
//! body (12 bytes per entry): position u32 | value f64
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{apply_mask, Mask, ParamVector, Shape};

pub const HEADER_BYTES: usize = 16;
pub const ENTRY_BYTES: usize = 12;

/// Encoded size of a packet carrying `entries` coordinates.
pub fn packet_bytes(entries: usize) -> usize {
    HEADER_BYTES + ENTRY_BYTES * entries
}

/// Submodels in ascending density order with their masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmodelSet {
    pub submodels: Vec<ParamVector>,
    pub masks: Vec<Mask>,
}

impl SubmodelSet {
    pub fn len(&self) -> usize {
        self.submodels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.submodels.is_empty()
    }

    pub fn is_nested(&self) -> bool {
        self.masks.windows(2).all(|p| p[0].is_subset_of(&p[1]))
    }

    /// Bytes the server sends when every client gets its own full submodel.
    pub fn naive_bytes(&self) -> usize {
        self.masks.iter().map(|m| packet_bytes(m.count_ones())).sum()
    }

    /// Coordinates the server sends when every client gets its own submodel.
    pub fn naive_entries(&self) -> usize {
        self.masks.iter().map(Mask::count_ones).sum()
    }
}

/// Sparse encoding of one delta (or of one masked model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPacket {
    pub round: u32,
    /// 1-based position in the density order.
    pub position_in_order: u32,
    pub entries: Vec<(u32, f64)>,
}

impl DeltaPacket {
    /// The coordinates of `model` selected by `mask`, zeros included.
    pub fn from_masked(model: &ParamVector, mask: &Mask, round: u32, position_in_order: u32) -> Result<Self> {
        check_len(model.len(), mask.len())?;
        let entries = mask.ones().map(|k| (k as u32, model.values()[k])).collect();
        Ok(Self {
            round,
            position_in_order,
            entries,
        })
    }

    pub fn nonzero_count(&self) -> usize {
        self.entries.len()
    }

    pub fn byte_size(&self) -> usize {
        packet_bytes(self.entries.len())
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|(k, _)| *k as usize)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_size());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.position_in_order.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for (k, v) in &self.entries {
            out.extend_from_slice(&k.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes one packet from the front of `bytes`; returns it with the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let word = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| Error::Packet(format!("truncated at byte {at}")))
        };
        let round = word(0)?;
        let position_in_order = word(4)?;
        let count = word(8)? as usize;
        if word(12)? != 0 {
            return Err(Error::Packet("reserved header word is not zero".into()));
        }
        let total = packet_bytes(count);
        if bytes.len() < total {
            return Err(Error::Packet(format!("body needs {total} bytes, have {}", bytes.len())));
        }
        let entries = bytes[HEADER_BYTES..total]
            .chunks_exact(ENTRY_BYTES)
            .map(|c| {
                (
                    u32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                    f64::from_le_bytes(c[4..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        Ok((
            Self {
                round,
                position_in_order,
                entries,
            },
            total,
        ))
    }
}

/// Writes packets back to back in wire format.
pub fn write_packets(path: &Path, packets: &[DeltaPacket]) -> Result<()> {
    let bytes: Vec<u8> = packets.iter().flat_map(DeltaPacket::to_bytes).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_packets(path: &Path) -> Result<Vec<DeltaPacket>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let (p, used) = DeltaPacket::from_bytes(&bytes[at..])?;
        out.push(p);
        at += used;
    }
    Ok(out)
}

/// `[lo, hi]` with `lo = 1`: the packets a client must download.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRange {
    pub lo: usize,
    pub hi: usize,
}

impl IndexRange {
    pub fn upto(hi: usize) -> Self {
        Self { lo: 1, hi }
    }
}

/// Orders clients by ascending density (ties by client id) and masks the
/// global model once per client.
pub fn build_submodels(
    global: &ParamVector,
    masks_by_client: &BTreeMap<usize, Mask>,
) -> Result<(SubmodelSet, Vec<usize>)> {
    let mut order: Vec<usize> = masks_by_client.keys().copied().collect();
    // stable sort keeps ascending id among equal counts
    order.sort_by_key(|i| masks_by_client[i].count_ones());
    let mut submodels = Vec::with_capacity(order.len());
    let mut masks = Vec::with_capacity(order.len());
    for i in &order {
        let m = &masks_by_client[i];
        submodels.push(apply_mask(global, m)?);
        masks.push(m.clone());
    }
    Ok((SubmodelSet { submodels, masks }, order))
}

/// Packet `i` carries the coordinates in mask `i` but not in mask `i - 1`,
/// valued `w_i - w_{i-1}` (with `w_0 = 0`).
pub fn encode_deltas(s: &SubmodelSet, round: u32) -> Result<Vec<DeltaPacket>> {
    let mut packets = Vec::with_capacity(s.len());
    for (idx, (sub, mask)) in s.submodels.iter().zip(&s.masks).enumerate() {
        check_len(sub.len(), mask.len())?;
        let prev = idx.checked_sub(1).map(|p| (&s.submodels[p], &s.masks[p]));
        let mut entries = Vec::new();
        for k in mask.ones() {
            match prev {
                Some((prev_sub, prev_mask)) if prev_mask.get(k) => {
                    if sub.values()[k] != prev_sub.values()[k] {
                        return Err(Error::Contract(format!(
                            "submodels {idx} and {} disagree on shared coordinate {k}",
                            idx + 1
                        )));
                    }
                }
                Some((prev_sub, _)) => entries.push((k as u32, sub.values()[k] - prev_sub.values()[k])),
                None => entries.push((k as u32, sub.values()[k])),
            }
        }
        if let Some((_, prev_mask)) = prev {
            check_len(prev_mask.len(), mask.len())?;
            if !prev_mask.is_subset_of(mask) {
                return Err(Error::NotNested { position: idx + 1 });
            }
        }
        packets.push(DeltaPacket {
            round,
            position_in_order: idx as u32 + 1,
            entries,
        });
    }
    Ok(packets)
}

/// Packet range for `client` in the density order.
pub fn index_for(order: &[usize], client: usize) -> Result<IndexRange> {
    order
        .iter()
        .position(|c| *c == client)
        .map(|p| IndexRange::upto(p + 1))
        .ok_or(Error::UnknownClient(client))
}

/// Sums packets `range.lo..=range.hi` into a zero vector with `shapes`.
pub fn reconstruct(deltas: &[DeltaPacket], range: IndexRange, shapes: &[Shape]) -> Result<ParamVector> {
    if range.lo != 1 || range.hi < range.lo {
        return Err(Error::Contract(format!(
            "invalid index range [{}, {}]",
            range.lo, range.hi
        )));
    }
    let mut out = ParamVector::zeros(shapes.to_vec());
    let len = out.len();
    let values = out.values_mut();
    for pos in range.lo..=range.hi {
        let packet = deltas
            .iter()
            .find(|p| p.position_in_order as usize == pos)
            .ok_or(Error::MissingPackets {
                needed: range.hi,
                available: deltas.len(),
            })?;
        for (k, v) in &packet.entries {
            let k = *k as usize;
            if k >= len {
                return Err(Error::Packet(format!("coordinate {k} outside model of length {len}")));
            }
            values[k] += v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masks(list: &[(usize, &[bool])]) -> BTreeMap<usize, Mask> {
        list.iter().map(|(i, b)| (*i, Mask::from_bits(b.to_vec()))).collect()
    }

    #[test]
    fn single_full_client() {
        let g = ParamVector::from_flat(vec![1.0, 2.0]);
        let (set, order) = build_submodels(&g, &masks(&[(3, &[true, true])])).unwrap();
        assert_eq!(order, [3]);
        assert_eq!(set.submodels[0], g);
        let packets = encode_deltas(&set, 0).unwrap();
        assert_eq!(packets.len(), 1);
        assert_eq!(packets[0].nonzero_count(), 2);
    }

    #[test]
    fn orders_by_density_then_id() {
        let g = ParamVector::from_flat(vec![1.0, 2.0, 3.0]);
        let m = masks(&[
            (0, &[true, true, true]),
            (1, &[true, true, false]),
            (2, &[true, false, false]),
        ]);
        assert_eq!(build_submodels(&g, &m).unwrap().1, [2, 1, 0]);
        let m = masks(&[(5, &[true, false, false]), (2, &[true, false, false])]);
        assert_eq!(build_submodels(&g, &m).unwrap().1, [2, 5]);
    }

    #[test]
    fn hand_traced_deltas() {
        let g = ParamVector::from_flat(vec![1.0, 2.0, 3.0]);
        let m = masks(&[
            (0, &[true, false, false]),
            (1, &[true, true, false]),
            (2, &[true, true, true]),
        ]);
        let (set, order) = build_submodels(&g, &m).unwrap();
        let p = encode_deltas(&set, 7).unwrap();
        assert_eq!(p[0].entries, [(0, 1.0)]);
        assert_eq!(p[1].entries, [(1, 2.0)]);
        assert_eq!(p[2].entries, [(2, 3.0)]);
        assert_eq!(p.iter().map(DeltaPacket::nonzero_count).sum::<usize>(), 3);

        assert_eq!(index_for(&order, 0).unwrap(), IndexRange::upto(1));
        assert_eq!(index_for(&order, 1).unwrap(), IndexRange::upto(2));
        assert_eq!(index_for(&order, 2).unwrap(), IndexRange::upto(3));
        assert!(matches!(index_for(&order, 9), Err(Error::UnknownClient(9))));

        let mid = reconstruct(&p, IndexRange::upto(2), g.shapes()).unwrap();
        assert_eq!(mid.values(), &[1.0, 2.0, 0.0]);
        let missing = reconstruct(&p[..1], IndexRange::upto(2), g.shapes());
        assert!(matches!(missing, Err(Error::MissingPackets { .. })));
    }

    #[test]
    fn zero_valued_kept_coordinates_are_transmitted() {
        let g = ParamVector::from_flat(vec![0.0, 2.0]);
        let (set, _) = build_submodels(&g, &masks(&[(0, &[true, true])])).unwrap();
        let p = encode_deltas(&set, 0).unwrap();
        assert_eq!(p[0].nonzero_count(), 2);
    }

    #[test]
    fn non_nested_masks_are_rejected() {
        let g = ParamVector::from_flat(vec![1.0, 2.0, 3.0]);
        let m = masks(&[(0, &[true, false, false]), (1, &[false, true, true])]);
        let (set, _) = build_submodels(&g, &m).unwrap();
        assert!(!set.is_nested());
        assert!(matches!(encode_deltas(&set, 0), Err(Error::NotNested { position: 2 })));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let g = ParamVector::from_flat(vec![1.0, 2.0]);
        assert!(build_submodels(&g, &masks(&[(0, &[true])])).is_err());
    }

    #[test]
    fn wire_format_round_trip() {
        let p = DeltaPacket {
            round: 3,
            position_in_order: 2,
            entries: vec![(5, -1.5), (9, f64::MIN_POSITIVE)],
        };
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), p.byte_size());
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..16], &[3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[5, 0, 0, 0]);
        assert_eq!(&bytes[20..28], &(-1.5f64).to_le_bytes());
        let (back, used) = DeltaPacket::from_bytes(&bytes).unwrap();
        assert_eq!((back, used), (p, 40));
        assert!(DeltaPacket::from_bytes(&bytes[..30]).is_err());
    }

    #[test]
    fn dump_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("packets.bin");
        let packets = vec![
            DeltaPacket {
                round: 1,
                position_in_order: 1,
                entries: vec![(0, 1.0)],
            },
            DeltaPacket {
                round: 1,
                position_in_order: 2,
                entries: vec![],
            },
        ];
        write_packets(&path, &packets).unwrap();
        assert_eq!(read_packets(&path).unwrap(), packets);
    }
}
