//! Labeled grid ensembles and their binary container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "IWGN1"                         magic, 5 bytes
//! height u32, width u32, count u32
//! entries u16, has_labels u8
//! entries × { code u8, r u8, g u8, b u8, name_len u8, name bytes }
//! count × height × width          facies codes, u8, row-major per image
//! count × u8                      labels, only when has_labels = 1
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{FaciesError, Result};
use crate::grid::{FaciesCodebook, FaciesEntry, FaciesGrid};

pub const MAGIC: &[u8; 5] = b"IWGN1";

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEnsemble {
    grids: Vec<FaciesGrid>,
    labels: Option<Vec<u8>>,
    codebook: FaciesCodebook,
}

impl LabeledEnsemble {
    pub fn new(
        grids: Vec<FaciesGrid>,
        labels: Option<Vec<u8>>,
        codebook: FaciesCodebook,
    ) -> Result<Self> {
        if let Some(first) = grids.first() {
            for g in &grids {
                if g.dims() != first.dims() {
                    return Err(FaciesError::Shape(format!(
                        "ensemble mixes {:?} and {:?} grids",
                        first.dims(),
                        g.dims()
                    )));
                }
                g.validate(&codebook)?;
            }
        }
        if let Some(l) = &labels {
            if l.len() != grids.len() {
                return Err(FaciesError::Shape(format!(
                    "{} labels for {} grids",
                    l.len(),
                    grids.len()
                )));
            }
        }
        Ok(Self {
            grids,
            labels,
            codebook,
        })
    }

    pub fn grids(&self) -> &[FaciesGrid] {
        &self.grids
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn codebook(&self) -> &FaciesCodebook {
        &self.codebook
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    /// `(height, width)` of the member grids, `None` when empty.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.grids.first().map(FaciesGrid::dims)
    }

    /// Number of label categories: one more than the largest label.
    pub fn categories(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(1, |&m| m as usize + 1)
    }

    /// Count of each label value `0..k`.
    pub fn label_histogram(&self, k: usize) -> Vec<usize> {
        let mut h = vec![0; k];
        for &l in self.labels().unwrap_or(&[]) {
            if (l as usize) < k {
                h[l as usize] += 1;
            }
        }
        h
    }

    /// Members at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            grids: indices.iter().map(|&i| self.grids[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            codebook: self.codebook.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let (h, wd) = self.dims().unwrap_or((0, 0));
        let count = u32::try_from(self.grids.len())
            .map_err(|_| FaciesError::Argument("too many grids".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(h as u32).to_le_bytes())?;
        w.write_all(&(wd as u32).to_le_bytes())?;
        w.write_all(&count.to_le_bytes())?;
        w.write_all(&(self.codebook.len() as u16).to_le_bytes())?;
        w.write_all(&[u8::from(self.labels.is_some())])?;
        for e in self.codebook.entries() {
            let name = e.name.as_bytes();
            if name.len() > u8::MAX as usize {
                return Err(FaciesError::Codebook(format!("name too long: {}", e.name)));
            }
            w.write_all(&[e.code, e.color[0], e.color[1], e.color[2], name.len() as u8])?;
            w.write_all(name)?;
        }
        for g in &self.grids {
            w.write_all(g.cells())?;
        }
        if let Some(l) = &self.labels {
            w.write_all(l)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(FaciesError::Format("bad magic, not an IWGN1 container".into()));
        }
        let h = read_u32(r)? as usize;
        let w = read_u32(r)? as usize;
        let count = read_u32(r)? as usize;
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let entries = u16::from_le_bytes(b2) as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let has_labels = match flag[0] {
            0 => false,
            1 => true,
            other => return Err(FaciesError::Format(format!("label flag {other}"))),
        };
        let mut table = Vec::with_capacity(entries);
        for _ in 0..entries {
            let mut head = [0u8; 5];
            r.read_exact(&mut head)?;
            let mut name = vec![0u8; head[4] as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| FaciesError::Format("codebook name is not UTF-8".into()))?;
            table.push(FaciesEntry {
                code: head[0],
                name,
                color: [head[1], head[2], head[3]],
            });
        }
        let codebook = FaciesCodebook::new(table)?;
        let mut grids = Vec::with_capacity(count);
        for _ in 0..count {
            let mut cells = vec![0u8; h * w];
            r.read_exact(&mut cells)?;
            grids.push(FaciesGrid::new(h, w, cells)?);
        }
        let labels = if has_labels {
            let mut l = vec![0u8; count];
            r.read_exact(&mut l)?;
            Some(l)
        } else {
            None
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(FaciesError::Format("trailing bytes after container".into()));
        }
        Self::new(grids, labels, codebook)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LabeledEnsemble {
        let g1 = FaciesGrid::from_rows(&[[0, 1], [2, 4]]).unwrap();
        let g2 = FaciesGrid::from_rows(&[[1, 1], [0, 0]]).unwrap();
        LabeledEnsemble::new(vec![g1, g2], Some(vec![2, 0]), FaciesCodebook::four_facies())
            .unwrap()
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let e = sample();
        let bytes = e.to_bytes().unwrap();
        assert_eq!(&bytes[..5], b"IWGN1");
        let back = LabeledEnsemble::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(LabeledEnsemble::read_from(&mut bytes.as_slice()).is_err());

        let mut bytes = sample().to_bytes().unwrap();
        bytes.push(0);
        assert!(LabeledEnsemble::read_from(&mut bytes.as_slice()).is_err());

        let bytes = sample().to_bytes().unwrap();
        assert!(LabeledEnsemble::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn invariants() {
        let cb = FaciesCodebook::binary();
        let a = FaciesGrid::filled(2, 2, 0).unwrap();
        let b = FaciesGrid::filled(3, 2, 0).unwrap();
        assert!(LabeledEnsemble::new(vec![a.clone(), b], None, cb.clone()).is_err());
        assert!(LabeledEnsemble::new(vec![a.clone()], Some(vec![0, 1]), cb.clone()).is_err());
        let bad = FaciesGrid::filled(2, 2, 4).unwrap();
        assert!(LabeledEnsemble::new(vec![a, bad], None, cb).is_err());
    }
}
