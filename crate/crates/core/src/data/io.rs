//! Binary dataset container and a tab-separated debug export.
//!
//! ```text
//! magic   "HMMD"
//! u32     format version
//! schema  u32 d, u32 r, u32 c, then d × (str name, u8 is_bag)
//! u64     sample count
//! record  str sample_id, u32 label, u8 v[d],
//!         then for each observed modality in ascending order:
//!           single: f64 values[r]
//!           bag:    u32 count, f64 values[count · r]
//! ```
//!
//! Integers and floats are little-endian; strings are `u32` length + UTF-8.

use std::fmt::Write as _;
use std::path::Path;

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::data::{DatasetSchema, MaskedSample, MissingnessMask, Payload};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"HMMD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub samples: Vec<MaskedSample>,
}

impl Dataset {
    pub fn new(schema: DatasetSchema, samples: Vec<MaskedSample>) -> Result<Self> {
        let ds = Dataset { schema, samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let d = self.schema.num_modalities();
        let r = self.schema.input_width;
        for s in &self.samples {
            let bad = |msg: String| Error::arg(format!("sample {}: {msg}", s.sample_id));
            if s.slots.len() != d || s.mask.0.len() != d {
                return Err(bad(format!("expected {d} slots")));
            }
            if s.label >= self.schema.num_classes {
                return Err(bad(format!("label {} out of range", s.label)));
            }
            if s.mask.observed() == 0 {
                return Err(bad("no observed modality".into()));
            }
            for (i, slot) in s.slots.iter().enumerate() {
                match slot {
                    None if !s.mask.is_missing(i) => return Err(bad(format!("slot {i} empty but marked observed"))),
                    Some(_) if s.mask.is_missing(i) => return Err(bad(format!("slot {i} filled but marked missing"))),
                    Some(p) => {
                        if p.is_bag() != self.schema.bags[i] {
                            return Err(bad(format!("slot {i} bag flag disagrees with schema")));
                        }
                        if p.instances().is_empty() || p.instances().iter().any(|x| x.len() != r) {
                            return Err(bad(format!("slot {i} payload width is not {r}")));
                        }
                    }
                    None => {}
                }
            }
        }
        Ok(())
    }

    /// Fraction of samples missing each modality.
    pub fn missing_rates(&self) -> Vec<f64> {
        let n = self.samples.len().max(1) as f64;
        (0..self.schema.num_modalities())
            .map(|i| self.samples.iter().filter(|s| s.mask.is_missing(i)).count() as f64 / n)
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        let schema = &self.schema;
        w.u32(schema.num_modalities() as u32);
        w.u32(schema.input_width as u32);
        w.u32(schema.num_classes as u32);
        for (name, &bag) in schema.modalities.iter().zip(&schema.bags) {
            w.str(name);
            w.u8(bag as u8);
        }
        w.u64(self.samples.len() as u64);
        for s in &self.samples {
            w.str(&s.sample_id);
            w.u32(s.label as u32);
            for &m in &s.mask.0 {
                w.u8(m as u8);
            }
            for slot in s.slots.iter().flatten() {
                match slot {
                    Payload::Single(x) => w.f64s(x),
                    Payload::Bag(xs) => {
                        w.u32(xs.len() as u32);
                        for x in xs {
                            w.f64s(x);
                        }
                    }
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, origin);
        if r.take(4)? != DATASET_MAGIC {
            return Err(r.fail("not a dataset file (bad magic)"));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(r.fail(format!("unsupported dataset version {version}")));
        }
        let d = r.u32()? as usize;
        let width = r.u32()? as usize;
        let num_classes = r.u32()? as usize;
        let mut modalities = Vec::with_capacity(d);
        let mut bags = Vec::with_capacity(d);
        for _ in 0..d {
            modalities.push(r.str()?);
            bags.push(r.u8()? != 0);
        }
        let schema = DatasetSchema {
            modalities,
            input_width: width,
            num_classes,
            bags,
        };
        let n = r.u64()?;
        let mut samples = Vec::new();
        for _ in 0..n {
            let sample_id = r.str()?;
            let label = r.u32()? as usize;
            let mut mask = Vec::with_capacity(d);
            for _ in 0..d {
                mask.push(match r.u8()? {
                    0 => false,
                    1 => true,
                    b => return Err(r.fail(format!("mask byte {b}"))),
                });
            }
            let mut slots = Vec::with_capacity(d);
            for (&missing, &bag) in mask.iter().zip(&schema.bags) {
                if missing {
                    slots.push(None);
                } else if bag {
                    let k = r.u32()? as usize;
                    let xs = (0..k).map(|_| r.f64s(width)).collect::<Result<Vec<_>>>()?;
                    slots.push(Some(Payload::Bag(xs)));
                } else {
                    slots.push(Some(Payload::Single(r.f64s(width)?)));
                }
            }
            samples.push(MaskedSample {
                sample_id,
                label,
                slots,
                mask: MissingnessMask(mask),
            });
        }
        r.finish()?;
        let ds = Dataset { schema, samples };
        ds.validate().map_err(|e| Error::format(origin, e.to_string()))?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Dataset::from_bytes(&read_file(path)?, path)
    }

    /// One row per observed instance:
    /// `sample_id  label  mask  modality  instance  values`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("sample_id\tlabel\tmask\tmodality\tinstance\tvalues\n");
        for s in &self.samples {
            for (m, p) in s.observed() {
                for (j, x) in p.instances().iter().enumerate() {
                    let values: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        s.sample_id,
                        s.label,
                        s.mask.bits(),
                        self.schema.modalities[m.0],
                        j,
                        values.join(" ")
                    );
                }
            }
        }
        out
    }
}
