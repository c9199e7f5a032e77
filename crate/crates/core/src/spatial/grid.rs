use serde::{Deserialize, Serialize};

use super::SpatialError;

/// Axis-aligned spatial partition into cubic cells.
///
/// The extent is inclusive on both ends; a coordinate exactly on the upper
/// face falls into the last cell of that axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: f64,
    pub extent_min: [f64; 3],
    pub extent_max: [f64; 3],
}

impl Default for GridSpec {
    /// 1 m cells over x, y in [-50, 50] m and z in [-5, 5] m.
    fn default() -> Self {
        Self {
            resolution: 1.0,
            extent_min: [-50.0, -50.0, -5.0],
            extent_max: [50.0, 50.0, 5.0],
        }
    }
}

/// Integer cell coordinates under a [`GridSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridIndex {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl GridIndex {
    pub fn new(ix: i64, iy: i64, iz: i64) -> Self {
        Self { ix, iy, iz }
    }

    pub fn as_array(&self) -> [i64; 3] {
        [self.ix, self.iy, self.iz]
    }
}

impl GridSpec {
    pub fn new(
        resolution: f64,
        extent_min: [f64; 3],
        extent_max: [f64; 3],
    ) -> Result<Self, SpatialError> {
        let spec = Self {
            resolution,
            extent_min,
            extent_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(SpatialError::InvalidGrid(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        for a in 0..3 {
            let (lo, hi) = (self.extent_min[a], self.extent_max[a]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(SpatialError::InvalidGrid(format!(
                    "axis {a}: extent [{lo}, {hi}] is empty"
                )));
            }
        }
        Ok(())
    }

    /// Number of cells along each axis.
    pub fn cells(&self) -> [i64; 3] {
        let mut out = [0; 3];
        for (a, n) in out.iter_mut().enumerate() {
            let span = (self.extent_max[a] - self.extent_min[a]) / self.resolution;
            *n = (span.ceil() as i64).max(1);
        }
        out
    }

    pub fn total_axis_cells(&self) -> usize {
        self.cells().iter().map(|&n| n as usize).sum()
    }

    pub fn contains(&self, point: [f64; 3]) -> bool {
        (0..3).all(|a| point[a] >= self.extent_min[a] && point[a] <= self.extent_max[a])
    }

    /// Cell containing `point`: `floor((coord - extent_min) / resolution)` per axis.
    pub fn quantize(&self, point: [f64; 3]) -> Result<GridIndex, SpatialError> {
        if !self.contains(point) {
            return Err(SpatialError::OutOfExtent(point));
        }
        let cells = self.cells();
        let mut idx = [0i64; 3];
        for a in 0..3 {
            let raw = ((point[a] - self.extent_min[a]) / self.resolution).floor() as i64;
            idx[a] = raw.min(cells[a] - 1);
        }
        Ok(GridIndex::new(idx[0], idx[1], idx[2]))
    }

    /// Center of cell `idx`: `extent_min + (idx + 0.5) * resolution`.
    pub fn dequantize(&self, idx: GridIndex) -> Result<[f64; 3], SpatialError> {
        self.check_index(idx)?;
        let i = idx.as_array();
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = self.extent_min[a] + (i[a] as f64 + 0.5) * self.resolution;
        }
        Ok(out)
    }

    pub fn check_index(&self, idx: GridIndex) -> Result<(), SpatialError> {
        let cells = self.cells();
        let i = idx.as_array();
        if (0..3).any(|a| i[a] < 0 || i[a] >= cells[a]) {
            return Err(SpatialError::IndexOutOfRange(idx));
        }
        Ok(())
    }
}
