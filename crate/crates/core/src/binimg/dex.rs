use serde::{Deserialize, Serialize};

use super::{BinImgError, Result};

/// Fixed size of the DEX header; every table offset points past it.
pub const DEX_HEADER_LEN: usize = 0x70;

const DEX_MAGIC: &[u8; 4] = b"dex\n";

// Header field offsets (all u32 little-endian).
const STRING_IDS_SIZE: usize = 0x38;
const STRING_IDS_OFF: usize = 0x3c;
const TYPE_IDS_SIZE: usize = 0x40;
const TYPE_IDS_OFF: usize = 0x44;
const PROTO_IDS_SIZE: usize = 0x48;
const PROTO_IDS_OFF: usize = 0x4c;
const FIELD_IDS_SIZE: usize = 0x50;
const FIELD_IDS_OFF: usize = 0x54;
const METHOD_IDS_SIZE: usize = 0x58;
const METHOD_IDS_OFF: usize = 0x5c;
const CLASS_DEFS_SIZE: usize = 0x60;
const CLASS_DEFS_OFF: usize = 0x64;
const DATA_SIZE: usize = 0x68;
const DATA_OFF: usize = 0x6c;

/// Half-open byte range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ByteRange {
    pub start: usize,
    pub end: usize,
}

impl ByteRange {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, offset: usize) -> bool {
        self.start <= offset && offset < self.end
    }

    fn overlaps(&self, other: &ByteRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Trims `self` so it no longer overlaps `other`, keeping the side that
    /// does not contain `other.start`.
    fn clip_against(&mut self, other: &ByteRange) {
        if other.is_empty() || !self.overlaps(other) {
            return;
        }
        if other.start <= self.start {
            self.start = other.end.min(self.end);
        } else {
            self.end = other.start;
        }
        if self.start > self.end {
            self.start = self.end;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Header,
    Identifiers,
    ClassDefs,
    Data,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Header, Region::Identifiers, Region::ClassDefs, Region::Data];
}

/// Byte ranges of the four DEX regions of a file.
///
/// Ranges are canonical: they never overlap, and `region_at` assigns any byte
/// outside header, identifiers and class definitions to [`Region::Data`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DexSectionMap {
    pub header: ByteRange,
    pub identifiers: ByteRange,
    pub class_defs: ByteRange,
    pub data: ByteRange,
    pub file_len: usize,
}

impl DexSectionMap {
    /// Builds a map from raw ranges, clipping each one against the
    /// higher-priority ranges (header > identifiers > class_defs > data) and
    /// against `file_len`.
    pub fn canonical(
        header: ByteRange,
        identifiers: ByteRange,
        class_defs: ByteRange,
        data: ByteRange,
        file_len: usize,
    ) -> Self {
        let clamp = |r: ByteRange| {
            let end = r.end.min(file_len);
            ByteRange::new(r.start.min(end), end)
        };
        let header = clamp(header);
        let mut identifiers = clamp(identifiers);
        identifiers.clip_against(&header);
        let mut class_defs = clamp(class_defs);
        class_defs.clip_against(&header);
        class_defs.clip_against(&identifiers);
        let mut data = clamp(data);
        for higher in [&header, &identifiers, &class_defs] {
            data.clip_against(higher);
        }
        Self {
            header,
            identifiers,
            class_defs,
            data,
            file_len,
        }
    }

    /// Map with every byte in the data region.
    pub fn all_data(file_len: usize) -> Self {
        Self {
            header: ByteRange::default(),
            identifiers: ByteRange::default(),
            class_defs: ByteRange::default(),
            data: ByteRange::new(0, file_len),
            file_len,
        }
    }

    pub fn range(&self, region: Region) -> ByteRange {
        match region {
            Region::Header => self.header,
            Region::Identifiers => self.identifiers,
            Region::ClassDefs => self.class_defs,
            Region::Data => self.data,
        }
    }

    /// Region owning byte `offset`. Bytes not claimed by a parsed region are data.
    pub fn region_at(&self, offset: usize) -> Region {
        if self.header.contains(offset) {
            Region::Header
        } else if self.identifiers.contains(offset) {
            Region::Identifiers
        } else if self.class_defs.contains(offset) {
            Region::ClassDefs
        } else {
            Region::Data
        }
    }

    /// Number of bytes owned by `region` under [`Self::region_at`].
    pub fn occupancy(&self, region: Region) -> usize {
        match region {
            Region::Data => self.file_len - self.header.len() - self.identifiers.len() - self.class_defs.len(),
            r => self.range(r).len(),
        }
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parses the fixed DEX header into a section map.
///
/// The identifier region spans the string, type, proto, field and method id
/// tables; class definitions are `class_defs_size * 32` bytes.
pub fn parse_dex(bytes: &[u8]) -> Result<DexSectionMap> {
    let len = bytes.len();
    if len < DEX_HEADER_LEN {
        return Err(BinImgError::TruncatedHeader(len));
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if &magic != DEX_MAGIC {
        return Err(BinImgError::MalformedMagic(magic));
    }

    let table = |name: &'static str, size_at: usize, off_at: usize, elem: u64| -> Result<Option<ByteRange>> {
        let size = read_u32(bytes, size_at) as u64;
        let off = read_u32(bytes, off_at) as u64;
        if size == 0 {
            return Ok(None);
        }
        let end = off + size * elem;
        if end > len as u64 {
            return Err(BinImgError::InconsistentOffsets {
                table: name,
                start: off,
                end,
                len,
            });
        }
        Ok(Some(ByteRange::new(off as usize, end as usize)))
    };

    let id_tables = [
        table("string_ids", STRING_IDS_SIZE, STRING_IDS_OFF, 4)?,
        table("type_ids", TYPE_IDS_SIZE, TYPE_IDS_OFF, 4)?,
        table("proto_ids", PROTO_IDS_SIZE, PROTO_IDS_OFF, 12)?,
        table("field_ids", FIELD_IDS_SIZE, FIELD_IDS_OFF, 8)?,
        table("method_ids", METHOD_IDS_SIZE, METHOD_IDS_OFF, 8)?,
    ];
    let class_defs = table("class_defs", CLASS_DEFS_SIZE, CLASS_DEFS_OFF, 32)?;
    let data = table("data", DATA_SIZE, DATA_OFF, 1)?;

    let present: Vec<ByteRange> = id_tables.iter().flatten().copied().collect();
    let identifiers = match (
        present.iter().map(|r| r.start).min(),
        present.iter().map(|r| r.end).max(),
    ) {
        (Some(start), Some(end)) => ByteRange::new(start, end),
        _ => ByteRange::new(DEX_HEADER_LEN, DEX_HEADER_LEN),
    };

    Ok(DexSectionMap::canonical(
        ByteRange::new(0, DEX_HEADER_LEN),
        identifiers,
        class_defs.unwrap_or_default(),
        data.unwrap_or_default(),
        len,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_input_is_truncated() {
        assert!(matches!(
            parse_dex(&[0u8; 0x10]),
            Err(BinImgError::TruncatedHeader(0x10))
        ));
    }

    #[test]
    fn zip_magic_is_rejected() {
        let mut bytes = vec![0u8; 0x100];
        bytes[..4].copy_from_slice(b"PK\x03\x04");
        assert!(matches!(
            parse_dex(&bytes),
            Err(BinImgError::MalformedMagic(m)) if &m == b"PK\x03\x04"
        ));
    }

    #[test]
    fn table_past_end_is_inconsistent() {
        let mut bytes = vec![0u8; 0x100];
        bytes[..4].copy_from_slice(DEX_MAGIC);
        bytes[CLASS_DEFS_SIZE..CLASS_DEFS_SIZE + 4].copy_from_slice(&5u32.to_le_bytes());
        bytes[CLASS_DEFS_OFF..CLASS_DEFS_OFF + 4].copy_from_slice(&0x80u32.to_le_bytes());
        let err = parse_dex(&bytes).unwrap_err();
        assert!(matches!(
            err,
            BinImgError::InconsistentOffsets {
                table: "class_defs",
                ..
            }
        ));
    }

    #[test]
    fn header_only_file_maps_rest_to_data() {
        let mut bytes = vec![7u8; 0x90];
        bytes[..4].copy_from_slice(DEX_MAGIC);
        for at in (0x38..0x70).step_by(4) {
            bytes[at..at + 4].copy_from_slice(&0u32.to_le_bytes());
        }
        let map = parse_dex(&bytes).unwrap();
        assert_eq!(map.header, ByteRange::new(0, 0x70));
        assert!(map.identifiers.is_empty());
        assert_eq!(map.region_at(0x80), Region::Data);
        assert_eq!(map.occupancy(Region::Data), 0x20);
    }

    #[test]
    fn canonical_ranges_do_not_overlap() {
        let map = DexSectionMap::canonical(
            ByteRange::new(0, 0x70),
            ByteRange::new(0x60, 0x100),
            ByteRange::new(0xf0, 0x140),
            ByteRange::new(0x0, 0x200),
            0x180,
        );
        assert_eq!(map.identifiers, ByteRange::new(0x70, 0x100));
        assert_eq!(map.class_defs, ByteRange::new(0x100, 0x140));
        assert_eq!(map.data.end, 0x180);
        let total: usize = Region::ALL.iter().map(|r| map.occupancy(*r)).sum();
        assert_eq!(total, 0x180);
    }
}
