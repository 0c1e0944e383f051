//! Address assignment and the simulated memory image.
//!
//! Arrays are placed on page boundaries with at least one guard page between
//! them, so cache-set aliasing between arrays is controllable. Arrays carrying
//! a `linked` clause are pinned at their declared byte offset from the anchor
//! instead, which makes cross-object index arithmetic a program-level constant.

use std::collections::BTreeMap;

use crate::error::{Result, SimError};
use crate::isa::{AccessKind, GadgetProgram};

#[derive(Debug, Clone)]
pub struct LayoutConfig {
    /// Power of two, at least 4096.
    pub page_size: u64,
    /// Shifts the placement origin; layout is a pure function of
    /// (program, config).
    pub seed: u64,
    /// Simulated memory capacity in bytes.
    pub mem_limit: u64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig { page_size: 4096, seed: 0, mem_limit: 1 << 30 }
    }
}

/// Byte base address per declared array, parallel to `program.arrays`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressMap {
    pub bases: Vec<u64>,
    pub page_size: u64,
}

fn align_up(v: u64, a: u64) -> u64 {
    v.div_ceil(a) * a
}

/// Assigns a base address to every array.
pub fn layout_memory(program: &GadgetProgram, cfg: &LayoutConfig) -> Result<AddressMap> {
    if !cfg.page_size.is_power_of_two() || cfg.page_size < 4096 {
        return Err(SimError::Config(format!(
            "page size {} must be a power of two >= 4096",
            cfg.page_size
        )));
    }
    let page = cfg.page_size;
    let mut bases = vec![0u64; program.arrays.len()];
    let mut placed = vec![false; program.arrays.len()];

    // Reserved span per anchor covers the anchor itself plus every array
    // linked to it.
    let mut span = vec![0u64; program.arrays.len()];
    for (i, a) in program.arrays.iter().enumerate() {
        span[i] = span[i].max(a.byte_len());
        if let Some(link) = &a.link {
            let anchor = program.array_id(&link.anchor).expect("validated");
            span[anchor] = span[anchor].max(link.byte_offset + a.byte_len());
        }
    }

    let mut cursor = page * (2 + cfg.seed % 16);
    for (i, a) in program.arrays.iter().enumerate() {
        if a.link.is_some() {
            continue;
        }
        bases[i] = cursor;
        placed[i] = true;
        cursor = align_up(cursor + span[i], page) + page;
    }
    for (i, a) in program.arrays.iter().enumerate() {
        if let Some(link) = &a.link {
            let anchor = program.array_id(&link.anchor).expect("validated");
            if !placed[anchor] {
                return Err(SimError::Validation(format!(
                    "array '{}' links to another linked array '{}'",
                    a.name, link.anchor
                )));
            }
            if link.byte_offset % a.elem_size as u64 != 0 {
                return Err(SimError::Validation(format!(
                    "array '{}' link offset not aligned to element size",
                    a.name
                )));
            }
            bases[i] = bases[anchor] + link.byte_offset;
        }
    }

    let mut ranges: Vec<(u64, u64, usize)> = program
        .arrays
        .iter()
        .enumerate()
        .map(|(i, a)| (bases[i], bases[i] + a.byte_len(), i))
        .collect();
    ranges.sort_unstable();
    for w in ranges.windows(2) {
        if w[0].1 > w[1].0 {
            return Err(SimError::Validation(format!(
                "arrays '{}' and '{}' overlap after layout",
                program.arrays[w[0].2].name, program.arrays[w[1].2].name
            )));
        }
    }
    let end = ranges.last().map(|r| r.1).unwrap_or(0);
    if end > cfg.mem_limit {
        return Err(SimError::Capacity { needed: end, limit: cfg.mem_limit });
    }
    Ok(AddressMap { bases, page_size: page })
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ArrayImage {
    base: u64,
    elem_size: u8,
    writable: bool,
    data: Vec<u8>,
}

/// The simulated memory image: one byte buffer per array, addressable both by
/// (array, element) and by raw byte address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memory {
    images: Vec<ArrayImage>,
    names: BTreeMap<String, usize>,
    /// (base, end, id) sorted by base, for address-level lookups.
    ranges: Vec<(u64, u64, usize)>,
    /// Linked children per anchor id.
    links: Vec<Vec<usize>>,
    array_names: Vec<String>,
    lengths: Vec<u64>,
}

impl Memory {
    /// Builds a zero-initialized image and applies the program prologue.
    pub fn build(program: &GadgetProgram, map: &AddressMap) -> Memory {
        let images: Vec<ArrayImage> = program
            .arrays
            .iter()
            .enumerate()
            .map(|(i, a)| ArrayImage {
                base: map.bases[i],
                elem_size: a.elem_size,
                writable: a.writable(),
                data: vec![0u8; a.byte_len() as usize],
            })
            .collect();
        let names = program
            .arrays
            .iter()
            .enumerate()
            .map(|(i, a)| (a.name.clone(), i))
            .collect();
        let mut ranges: Vec<(u64, u64, usize)> = images
            .iter()
            .enumerate()
            .map(|(i, im)| (im.base, im.base + im.data.len() as u64, i))
            .collect();
        ranges.sort_unstable();
        let mut links = vec![Vec::new(); program.arrays.len()];
        for (i, a) in program.arrays.iter().enumerate() {
            if let Some(link) = &a.link {
                let anchor = program.array_id(&link.anchor).expect("validated");
                links[anchor].push(i);
            }
        }
        let mut mem = Memory {
            images,
            names,
            ranges,
            links,
            array_names: program.arrays.iter().map(|a| a.name.clone()).collect(),
            lengths: program.arrays.iter().map(|a| a.length).collect(),
        };
        for w in &program.prologue {
            let id = mem.id(&w.array).expect("validated");
            mem.poke(id, w.index as i64, w.value).expect("validated");
        }
        mem
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.array_names[id]
    }

    pub fn base(&self, id: usize) -> u64 {
        self.images[id].base
    }

    pub fn elem_size(&self, id: usize) -> u8 {
        self.images[id].elem_size
    }

    pub fn length(&self, id: usize) -> u64 {
        self.lengths[id]
    }

    /// Resolves an element access to a byte address, applying the linked-region
    /// rule for out-of-range loads.
    pub fn resolve(&self, id: usize, index: i64, kind: AccessKind) -> Result<(u64, u8)> {
        let im = &self.images[id];
        let size = im.elem_size;
        let len = self.lengths[id];
        if index >= 0 && (index as u64) < len {
            return Ok((im.base + index as u64 * size as u64, size));
        }
        let addr = im.base as i128 + index as i128 * size as i128;
        if addr >= 0 {
            let addr = addr as u64;
            for &child in &self.links[id] {
                let c = &self.images[child];
                let end = c.base + c.data.len() as u64;
                if addr >= c.base && addr + size as u64 <= end {
                    if matches!(kind, AccessKind::Store) {
                        return Err(SimError::ReadOnlyStore {
                            array: self.array_names[id].clone(),
                            index,
                        });
                    }
                    return Ok((addr, size));
                }
            }
        }
        Err(SimError::OutOfBounds { array: self.array_names[id].clone(), index, length: len })
    }

    fn locate(&self, addr: u64) -> Option<usize> {
        let idx = self.ranges.partition_point(|&(base, _, _)| base <= addr);
        if idx == 0 {
            return None;
        }
        let (base, end, id) = self.ranges[idx - 1];
        (addr >= base && addr < end).then_some(id)
    }

    /// Reads `size` little-endian bytes at a raw address. Loads zero-extend.
    pub fn load_le(&self, addr: u64, size: u8) -> Option<i64> {
        let id = self.locate(addr)?;
        let im = &self.images[id];
        let off = (addr - im.base) as usize;
        if off + size as usize > im.data.len() {
            return None;
        }
        let mut v: u64 = 0;
        for (k, b) in im.data[off..off + size as usize].iter().enumerate() {
            v |= (*b as u64) << (8 * k);
        }
        Some(v as i64)
    }

    pub fn store_le(&mut self, addr: u64, size: u8, value: i64) -> bool {
        let Some(id) = self.locate(addr) else { return false };
        let im = &mut self.images[id];
        let off = (addr - im.base) as usize;
        if off + size as usize > im.data.len() {
            return false;
        }
        let bytes = (value as u64).to_le_bytes();
        im.data[off..off + size as usize].copy_from_slice(&bytes[..size as usize]);
        true
    }

    /// Reads one byte at a raw address (used by the store-forwarding overlay).
    pub fn byte_at(&self, addr: u64) -> Option<u8> {
        let id = self.locate(addr)?;
        let im = &self.images[id];
        im.data.get((addr - im.base) as usize).copied()
    }

    /// Element read through the link rules.
    pub fn peek(&self, id: usize, index: i64) -> Result<i64> {
        let (addr, size) = self.resolve(id, index, AccessKind::Load)?;
        Ok(self.load_le(addr, size).expect("resolved address in range"))
    }

    /// Element write; fails on out-of-range or read-only destinations.
    pub fn poke(&mut self, id: usize, index: i64, value: i64) -> Result<()> {
        let (addr, size) = self.resolve(id, index, AccessKind::Store)?;
        if !self.images[self.locate(addr).unwrap()].writable {
            return Err(SimError::ReadOnlyStore { array: self.array_names[id].clone(), index });
        }
        self.store_le(addr, size, value);
        Ok(())
    }

    /// Writes a byte string into an array (scenario setup for secrets).
    pub fn write_bytes(&mut self, id: usize, bytes: &[u8]) {
        let im = &mut self.images[id];
        let n = bytes.len().min(im.data.len());
        im.data[..n].copy_from_slice(&bytes[..n]);
    }

    pub fn array_bytes(&self, id: usize) -> &[u8] {
        &self.images[id].data
    }
}
