//! Facies rasters, the facies codebook and the transforms between grids and
//! network planes.

use serde::{Deserialize, Serialize};

use crate::error::{FaciesError, Result};

/// One facies class: integer code, display name and display colour.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaciesEntry {
    pub code: u8,
    pub name: String,
    pub color: [u8; 3],
}

impl FaciesEntry {
    pub fn new(code: u8, name: &str, color: [u8; 3]) -> Self {
        Self {
            code,
            name: name.to_string(),
            color,
        }
    }
}

/// Ordered set of facies classes. Entries are kept sorted by code, so the
/// entry index is the plane index in one-hot encodings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FaciesEntry>", into = "Vec<FaciesEntry>")]
pub struct FaciesCodebook {
    entries: Vec<FaciesEntry>,
    #[serde(skip)]
    lookup: Box<[u8; 256]>,
}

const ABSENT: u8 = u8::MAX;

pub const SHALE: u8 = 0;
pub const CHANNEL: u8 = 1;
pub const LEVEE: u8 = 2;
pub const SPLAY: u8 = 4;

impl FaciesCodebook {
    pub fn new(mut entries: Vec<FaciesEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.code);
        if entries.windows(2).any(|w| w[0].code == w[1].code) {
            return Err(FaciesError::Codebook("duplicate facies code".into()));
        }
        if entries.first().map(|e| e.code) != Some(SHALE) {
            return Err(FaciesError::Codebook(
                "code 0 (background shale) must be present".into(),
            ));
        }
        if entries.len() > ABSENT as usize {
            return Err(FaciesError::Codebook("too many entries".into()));
        }
        let mut lookup = Box::new([ABSENT; 256]);
        for (i, e) in entries.iter().enumerate() {
            lookup[e.code as usize] = i as u8;
        }
        Ok(Self { entries, lookup })
    }

    /// Shale and channel sand.
    pub fn binary() -> Self {
        Self::new(vec![
            FaciesEntry::new(SHALE, "shale", [40, 40, 110]),
            FaciesEntry::new(CHANNEL, "channel", [250, 220, 40]),
        ])
        .expect("static codebook")
    }

    /// Shale, channel, levee and splay (codes 0, 1, 2, 4).
    pub fn four_facies() -> Self {
        Self::new(vec![
            FaciesEntry::new(SHALE, "shale", [40, 40, 110]),
            FaciesEntry::new(CHANNEL, "channel", [250, 220, 40]),
            FaciesEntry::new(LEVEE, "levee", [220, 50, 40]),
            FaciesEntry::new(SPLAY, "splay", [60, 140, 230]),
        ])
        .expect("static codebook")
    }

    pub fn entries(&self) -> &[FaciesEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn codes(&self) -> impl Iterator<Item = u8> + '_ {
        self.entries.iter().map(|e| e.code)
    }

    pub fn contains(&self, code: u8) -> bool {
        self.lookup[code as usize] != ABSENT
    }

    /// Plane index of `code`.
    pub fn index_of(&self, code: u8) -> Option<usize> {
        match self.lookup[code as usize] {
            ABSENT => None,
            i => Some(i as usize),
        }
    }

    pub fn code_at(&self, index: usize) -> Option<u8> {
        self.entries.get(index).map(|e| e.code)
    }

    pub fn color_of(&self, code: u8) -> Option<[u8; 3]> {
        self.index_of(code).map(|i| self.entries[i].color)
    }

    /// Number of planes the generator emits: a single sand plane for binary
    /// codebooks, one plane per entry otherwise.
    pub fn network_planes(&self) -> usize {
        if self.len() == 2 {
            1
        } else {
            self.len()
        }
    }

    pub fn check(&self, code: u8) -> Result<usize> {
        self.index_of(code).ok_or(FaciesError::UnknownCode(code))
    }
}

impl TryFrom<Vec<FaciesEntry>> for FaciesCodebook {
    type Error = FaciesError;
    fn try_from(entries: Vec<FaciesEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<FaciesCodebook> for Vec<FaciesEntry> {
    fn from(cb: FaciesCodebook) -> Self {
        cb.entries
    }
}

/// Row-major raster of facies codes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FaciesGrid {
    height: usize,
    width: usize,
    cells: Vec<u8>,
}

impl FaciesGrid {
    pub fn new(height: usize, width: usize, cells: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(FaciesError::Shape(format!(
                "grid must be at least 1x1, got {height}x{width}"
            )));
        }
        if cells.len() != height * width {
            return Err(FaciesError::Shape(format!(
                "{} cells for a {height}x{width} grid",
                cells.len()
            )));
        }
        Ok(Self {
            height,
            width,
            cells,
        })
    }

    pub fn filled(height: usize, width: usize, code: u8) -> Result<Self> {
        Self::new(height, width, vec![code; height * width])
    }

    /// Build from nested rows; all rows must have the same length.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut cells = Vec::with_capacity(height * width);
        for r in rows {
            if r.as_ref().len() != width {
                return Err(FaciesError::Shape("ragged rows".into()));
            }
            cells.extend_from_slice(r.as_ref());
        }
        Self::new(height, width, cells)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [u8] {
        &mut self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, code: u8) {
        self.cells[row * self.width + col] = code;
    }

    /// Every cell code is in `codebook`.
    pub fn validate(&self, codebook: &FaciesCodebook) -> Result<()> {
        match self.cells.iter().find(|&&c| !codebook.contains(c)) {
            Some(&c) => Err(FaciesError::UnknownCode(c)),
            None => Ok(()),
        }
    }

    /// Fraction of cells equal to `code`.
    pub fn proportion(&self, code: u8) -> f64 {
        self.cells.iter().filter(|&&c| c == code).count() as f64 / self.cells.len() as f64
    }
}

/// 1 where the grid holds `facies`, 0 elsewhere.
pub fn indicator_transform(
    grid: &FaciesGrid,
    facies: u8,
    codebook: &FaciesCodebook,
) -> Result<FaciesGrid> {
    codebook.check(facies)?;
    let cells = grid.cells.iter().map(|&c| u8::from(c == facies)).collect();
    FaciesGrid::new(grid.height, grid.width, cells)
}

/// Stack of real-valued planes `[planes][height][width]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftPlanes {
    pub planes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl SoftPlanes {
    pub fn new(planes: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != planes * height * width {
            return Err(FaciesError::Shape(format!(
                "{} values for {planes} planes of {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            planes,
            height,
            width,
            data,
        })
    }

    pub fn plane(&self, p: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[p * n..(p + 1) * n]
    }

    pub fn at(&self, plane: usize, row: usize, col: usize) -> f32 {
        self.data[(plane * self.height + row) * self.width + col]
    }
}

/// One binary plane per codebook entry, in codebook order.
pub fn one_hot_encode(grid: &FaciesGrid, codebook: &FaciesCodebook) -> Result<SoftPlanes> {
    let n = grid.cells.len();
    let mut data = vec![0.0f32; n * codebook.len()];
    for (i, &c) in grid.cells.iter().enumerate() {
        let p = codebook.check(c)?;
        data[p * n + i] = 1.0;
    }
    SoftPlanes::new(codebook.len(), grid.height, grid.width, data)
}

/// Network representation of a grid: the sand indicator for binary
/// codebooks, [`one_hot_encode`] otherwise.
pub fn encode_planes(grid: &FaciesGrid, codebook: &FaciesCodebook) -> Result<SoftPlanes> {
    if codebook.network_planes() == 1 {
        let sand = codebook.code_at(1).expect("binary codebook has two entries");
        let mut data = Vec::with_capacity(grid.cells.len());
        for &c in &grid.cells {
            codebook.check(c)?;
            data.push(if c == sand { 1.0 } else { 0.0 });
        }
        SoftPlanes::new(1, grid.height, grid.width, data)
    } else {
        one_hot_encode(grid, codebook)
    }
}

/// Harden generator output into facies codes.
///
/// A single plane (binary codebook) is thresholded at 0.5; several planes are
/// reduced by argmax. Ties go to the lower code.
pub fn decode_generator_output(soft: &SoftPlanes, codebook: &FaciesCodebook) -> Result<FaciesGrid> {
    let n = soft.height * soft.width;
    let cells = if soft.planes == 1 {
        if codebook.len() != 2 {
            return Err(FaciesError::Shape(format!(
                "single plane needs a binary codebook, got {} entries",
                codebook.len()
            )));
        }
        let (lo, hi) = (codebook.entries()[0].code, codebook.entries()[1].code);
        soft.data
            .iter()
            .map(|&v| if v > 0.5 { hi } else { lo })
            .collect()
    } else {
        if soft.planes != codebook.len() {
            return Err(FaciesError::Shape(format!(
                "{} planes for a codebook of {} entries",
                soft.planes,
                codebook.len()
            )));
        }
        (0..n)
            .map(|i| {
                let mut best = 0;
                for p in 1..soft.planes {
                    // strict comparison keeps the lower code on ties
                    if soft.data[p * n + i] > soft.data[best * n + i] {
                        best = p;
                    }
                }
                codebook.entries()[best].code
            })
            .collect()
    };
    FaciesGrid::new(soft.height, soft.width, cells)
}
