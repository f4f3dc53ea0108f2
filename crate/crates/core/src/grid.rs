//! Discretized world map: cell geometry, Euclidean distances between cell
//! centers, and Hilbert-curve orderings in four clockwise rotations.

use crate::error::{Error, Result};

/// Identifier of a grid cell: an index in `[0, n)`, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId(usize);

impl CellId {
    pub fn new(index: usize) -> Self {
        CellId(index)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Clockwise rotation applied to the curve's coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rotation {
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [
        Rotation::Deg0,
        Rotation::Deg90,
        Rotation::Deg180,
        Rotation::Deg270,
    ];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::Deg0 => 0,
            Rotation::Deg90 => 90,
            Rotation::Deg180 => 180,
            Rotation::Deg270 => 270,
        }
    }
}

/// A rectangular grid of square cells with a fixed edge length in km.
#[derive(Debug, Clone)]
pub struct GridMap {
    width: usize,
    height: usize,
    cell_size_km: f64,
}

impl GridMap {
    pub fn new(width: usize, height: usize, cell_size_km: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(cell_size_km > 0.0) || !cell_size_km.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "cell size must be a positive finite number of km, got {cell_size_km}"
            )));
        }
        Ok(GridMap {
            width,
            height,
            cell_size_km,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Total number of cells.
    pub fn n(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_size_km(&self) -> f64 {
        self.cell_size_km
    }

    pub fn cell_at(&self, col: usize, row: usize) -> Result<CellId> {
        if col >= self.width || row >= self.height {
            return Err(Error::InvalidGrid(format!(
                "coordinate ({col}, {row}) outside {}x{} grid",
                self.width, self.height
            )));
        }
        Ok(CellId(row * self.width + col))
    }

    pub fn check_cell(&self, c: CellId) -> Result<()> {
        if c.index() >= self.n() {
            return Err(Error::CellOutOfRange {
                index: c.index(),
                n: self.n(),
            });
        }
        Ok(())
    }

    pub fn col_row(&self, c: CellId) -> (usize, usize) {
        (c.index() % self.width, c.index() / self.width)
    }

    /// Center of a cell in km, measured from the map origin.
    pub fn cell_center(&self, c: CellId) -> Result<(f64, f64)> {
        self.check_cell(c)?;
        let (col, row) = self.col_row(c);
        Ok((
            (col as f64 + 0.5) * self.cell_size_km,
            (row as f64 + 0.5) * self.cell_size_km,
        ))
    }

    /// Euclidean distance between cell centers in km.
    pub fn distance(&self, a: CellId, b: CellId) -> Result<f64> {
        self.check_cell(a)?;
        self.check_cell(b)?;
        Ok(self.d(a.index(), b.index()))
    }

    /// Unchecked center distance by raw index, for hot loops over validated ids.
    pub(crate) fn d(&self, a: usize, b: usize) -> f64 {
        let (ca, ra) = (a % self.width, a / self.width);
        let (cb, rb) = (b % self.width, b / self.width);
        let dx = ca as f64 - cb as f64;
        let dy = ra as f64 - rb as f64;
        (dx * dx + dy * dy).sqrt() * self.cell_size_km
    }

    /// Largest possible center distance on this map.
    pub fn max_distance(&self) -> f64 {
        self.d(0, self.n() - 1)
    }

    /// Builds the Hilbert ordering of the map cells under the given rotation.
    ///
    /// The map is embedded in the smallest `2^k x 2^k` curve; positions that
    /// fall outside the map are skipped, so ranks are dense in `[0, n)`.
    pub fn hilbert_ordering(&self, rotation: Rotation) -> HilbertOrdering {
        let side = hilbert_side(self.width, self.height);
        let mut keyed: Vec<(u64, usize)> = Vec::with_capacity(self.n());
        for row in 0..self.height {
            for col in 0..self.width {
                let (x, y) = rotate_in_square(col, row, side, rotation);
                keyed.push((hilbert_xy_to_d(side as u64, x as u64, y as u64), row * self.width + col));
            }
        }
        keyed.sort_unstable();
        let mut rank = vec![0usize; self.n()];
        let mut inverse = Vec::with_capacity(self.n());
        for (pos, &(_, idx)) in keyed.iter().enumerate() {
            rank[idx] = pos;
            inverse.push(CellId(idx));
        }
        HilbertOrdering {
            rotation,
            rank,
            inverse,
        }
    }

    /// All four rotated orderings, indexed in `Rotation::ALL` order.
    pub fn hilbert_orderings(&self) -> [HilbertOrdering; 4] {
        Rotation::ALL.map(|r| self.hilbert_ordering(r))
    }
}

/// A bijection between cells and dense curve positions for one rotation.
#[derive(Debug, Clone)]
pub struct HilbertOrdering {
    rotation: Rotation,
    rank: Vec<usize>,
    inverse: Vec<CellId>,
}

impl HilbertOrdering {
    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    pub fn len(&self) -> usize {
        self.inverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inverse.is_empty()
    }

    /// Position of a cell along the curve.
    pub fn rank_of(&self, c: CellId) -> Result<usize> {
        self.rank
            .get(c.index())
            .copied()
            .ok_or(Error::CellOutOfRange {
                index: c.index(),
                n: self.rank.len(),
            })
    }

    /// Cell occupying a curve position.
    pub fn cell_at(&self, pos: usize) -> Result<CellId> {
        self.inverse
            .get(pos)
            .copied()
            .ok_or(Error::InvalidInput(format!(
                "curve position {pos} out of range [0, {})",
                self.inverse.len()
            )))
    }
}

/// Side of the smallest power-of-two square covering the map.
fn hilbert_side(width: usize, height: usize) -> usize {
    let mut side = 1;
    while side < width.max(height) {
        side <<= 1;
    }
    side
}

/// Clockwise rotation of `(col, row)` about the center of a `side x side` square.
fn rotate_in_square(col: usize, row: usize, side: usize, rotation: Rotation) -> (usize, usize) {
    match rotation {
        Rotation::Deg0 => (col, row),
        Rotation::Deg90 => (side - 1 - row, col),
        Rotation::Deg180 => (side - 1 - col, side - 1 - row),
        Rotation::Deg270 => (row, side - 1 - col),
    }
}

/// Classic xy -> d conversion on an `n x n` Hilbert curve, `n` a power of two.
fn hilbert_xy_to_d(n: u64, mut x: u64, mut y: u64) -> u64 {
    let mut d = 0u64;
    let mut s = n / 2;
    while s > 0 {
        let rx = u64::from(x & s > 0);
        let ry = u64::from(y & s > 0);
        d += s * s * ((3 * rx) ^ ry);
        // rotate the quadrant
        if ry == 0 {
            if rx == 1 {
                x = n - 1 - x;
                y = n - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        s /= 2;
    }
    d
}
