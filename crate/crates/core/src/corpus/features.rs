//! Spatial feature maps with wound masks, and their binary container format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"TRIDERM1"                     magic
//! u32 kind                        0 = plain containers, 1 = view pairs
//! u32 count                       containers, or pairs when kind = 1
//! container*                      count (or 2 * count, view_a then view_b)
//!
//! container:
//!   u32 len, [u8; len]            item id, UTF-8
//!   u32 C, u32 H, u32 W, u32 K    channels, height, width, wound count
//!   u64 payload_bytes             must equal C * H * W * 4
//!   f32 * C*H*W                   row-major, index (c * H + y) * W + x
//!   wound * K:
//!     u32 len, [u8; len]          wound id, UTF-8
//!     H rows of ceil(W / 8) bytes cell x is bit (x % 8) of byte x / 8; padding bits zero
//! ```

use std::collections::HashSet;
use std::path::Path;

use super::ItemId;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TRIDERM1";
const KIND_PLAIN: u32 = 0;
const KIND_PAIRED: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WoundMask {
    pub id: String,
    /// `H * W` cells, row-major.
    pub cells: Vec<bool>,
}

impl WoundMask {
    pub fn area(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// A `C x H x W` feature map for one item plus its per-wound binary masks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureContainer {
    item: ItemId,
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    wounds: Vec<WoundMask>,
}

impl FeatureContainer {
    pub fn new(
        item: ItemId,
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
        wounds: Vec<WoundMask>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Invalid(format!(
                "feature map for {item} has zero extent ({channels}x{height}x{width})"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "feature map for {item} needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("feature map for {item} has non-finite values")));
        }
        let mut seen = HashSet::new();
        for w in &wounds {
            if w.id.is_empty() {
                return Err(Error::Invalid(format!("empty wound id in {item}")));
            }
            if !seen.insert(w.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate wound id {:?} in {item}", w.id)));
            }
            if w.cells.len() != height * width {
                return Err(Error::Dimension(format!(
                    "mask {:?} in {item} has {} cells, map is {height}x{width}",
                    w.id,
                    w.cells.len()
                )));
            }
            if w.area() == 0 {
                return Err(Error::Invalid(format!("mask {:?} in {item} is empty", w.id)));
            }
        }
        Ok(FeatureContainer {
            item,
            channels,
            height,
            width,
            values,
            wounds,
        })
    }

    pub fn item(&self) -> &ItemId {
        &self.item
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn wounds(&self) -> &[WoundMask] {
        &self.wounds
    }

    pub fn wound(&self, id: &str) -> Result<&WoundMask> {
        self.wounds
            .iter()
            .find(|w| w.id == id)
            .ok_or_else(|| Error::UnknownWound {
                item: self.item.to_string(),
                wound: id.to_owned(),
            })
    }

    /// Feature value at channel `c`, row `y`, column `x`.
    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[(c * self.height + y) * self.width + x]
    }
}

/// Two augmented views of the same item with matching wound ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_a: FeatureContainer,
    pub view_b: FeatureContainer,
}

impl ViewPair {
    pub fn new(view_a: FeatureContainer, view_b: FeatureContainer) -> Result<Self> {
        if view_a.item != view_b.item {
            return Err(Error::Invalid(format!(
                "view pair mixes items {} and {}",
                view_a.item, view_b.item
            )));
        }
        if view_a.channels != view_b.channels {
            return Err(Error::Dimension(format!(
                "views of {} have {} and {} channels",
                view_a.item, view_a.channels, view_b.channels
            )));
        }
        let a: HashSet<&str> = view_a.wounds.iter().map(|w| w.id.as_str()).collect();
        let b: HashSet<&str> = view_b.wounds.iter().map(|w| w.id.as_str()).collect();
        if a != b {
            let mut only: Vec<&str> = a.symmetric_difference(&b).copied().collect();
            only.sort_unstable();
            return Err(Error::Invalid(format!(
                "wound ids of {} do not match across views; unmatched: {}",
                view_a.item,
                only.join(", ")
            )));
        }
        Ok(ViewPair { view_a, view_b })
    }

    pub fn item(&self) -> &ItemId {
        &self.view_a.item
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureFile {
    Containers(Vec<FeatureContainer>),
    Pairs(Vec<ViewPair>),
}

pub fn encode_containers(containers: &[FeatureContainer]) -> Vec<u8> {
    let mut out = header(KIND_PLAIN, containers.len());
    for c in containers {
        encode_container(&mut out, c);
    }
    out
}

pub fn encode_pairs(pairs: &[ViewPair]) -> Vec<u8> {
    let mut out = header(KIND_PAIRED, pairs.len());
    for p in pairs {
        encode_container(&mut out, &p.view_a);
        encode_container(&mut out, &p.view_b);
    }
    out
}

pub fn save_containers(path: &Path, containers: &[FeatureContainer]) -> Result<()> {
    std::fs::write(path, encode_containers(containers)).map_err(|e| Error::io(path, e))
}

pub fn save_pairs(path: &Path, pairs: &[ViewPair]) -> Result<()> {
    std::fs::write(path, encode_pairs(pairs)).map_err(|e| Error::io(path, e))
}

pub fn load_feature_file(path: &Path) -> Result<FeatureFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::format(path, None, msg))
}

/// Loads plain containers; a paired file yields its first views.
pub fn load_containers(path: &Path) -> Result<Vec<FeatureContainer>> {
    Ok(match load_feature_file(path)? {
        FeatureFile::Containers(c) => c,
        FeatureFile::Pairs(p) => p.into_iter().map(|p| p.view_a).collect(),
    })
}

pub fn load_view_pairs(path: &Path) -> Result<Vec<ViewPair>> {
    match load_feature_file(path)? {
        FeatureFile::Pairs(p) => Ok(p),
        FeatureFile::Containers(_) => Err(Error::format(path, None, "expected a paired-view file, found plain containers")),
    }
}

fn header(kind: u32, count: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn encode_container(out: &mut Vec<u8>, c: &FeatureContainer) {
    put_str(out, c.item.as_str());
    for v in [c.channels, c.height, c.width, c.wounds.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&((c.values.len() * 4) as u64).to_le_bytes());
    for v in &c.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let row_bytes = c.width.div_ceil(8);
    for w in &c.wounds {
        put_str(out, &w.id);
        for y in 0..c.height {
            let mut row = vec![0u8; row_bytes];
            for x in 0..c.width {
                if w.cells[y * c.width + x] {
                    row[x / 8] |= 1 << (x % 8);
                }
            }
            out.extend_from_slice(&row);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!(
                "truncated file at byte {}: need {n} bytes for {what}, {} remain",
                self.pos,
                self.buf.len() - self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| format!("{what} is not valid UTF-8"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<FeatureFile, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(format!("magic mismatch: expected {:?}, found {:?}", "TRIDERM1", String::from_utf8_lossy(magic)));
    }
    let kind = r.u32("kind")?;
    let count = r.u32("record count")? as usize;
    let file = match kind {
        KIND_PLAIN => {
            let mut cs = Vec::with_capacity(count.min(1 << 16));
            for i in 0..count {
                cs.push(decode_container(&mut r).map_err(|m| format!("container {i}: {m}"))?);
            }
            FeatureFile::Containers(cs)
        }
        KIND_PAIRED => {
            let mut ps = Vec::with_capacity(count.min(1 << 16));
            for i in 0..count {
                let a = decode_container(&mut r).map_err(|m| format!("pair {i} view a: {m}"))?;
                let b = decode_container(&mut r).map_err(|m| format!("pair {i} view b: {m}"))?;
                ps.push(ViewPair::new(a, b).map_err(|e| format!("pair {i}: {e}"))?);
            }
            FeatureFile::Pairs(ps)
        }
        other => return Err(format!("unknown container kind {other}")),
    };
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes after last record", bytes.len() - r.pos));
    }
    Ok(file)
}

fn decode_container(r: &mut Reader<'_>) -> Result<FeatureContainer, String> {
    let item = ItemId::new(r.string("item id")?).map_err(|e| e.to_string())?;
    let channels = r.u32("channels")? as usize;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let n_wounds = r.u32("wound count")? as usize;
    let declared = r.u64("payload size")?;
    let expected = (channels as u64) * (height as u64) * (width as u64) * 4;
    if declared != expected {
        return Err(format!(
            "{item}: declared payload {declared} bytes, but {channels}x{height}x{width} f32 needs {expected}"
        ));
    }
    let payload = r.take(declared as usize, "payload")?;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let row_bytes = width.div_ceil(8);
    let mut wounds = Vec::with_capacity(n_wounds.min(1 << 12));
    for _ in 0..n_wounds {
        let id = r.string("wound id")?;
        let mut cells = vec![false; height * width];
        for y in 0..height {
            let row = r.take(row_bytes, "mask row")?;
            for x in 0..width {
                cells[y * width + x] = row[x / 8] >> (x % 8) & 1 == 1;
            }
            if !width.is_multiple_of(8) && row[row_bytes - 1] >> (width % 8) != 0 {
                return Err(format!("{item}: mask {id:?} row {y} has nonzero padding bits"));
            }
        }
        wounds.push(WoundMask { id, cells });
    }
    FeatureContainer::new(item, channels, height, width, values, wounds).map_err(|e| e.to_string())
}
