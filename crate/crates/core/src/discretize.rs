//! Equal-width binning of continuous observations into flat state indices.

use std::fmt;
use std::str::FromStr;

use crate::envs::{ContinuousState, EnvKind};
use crate::error::{usage, LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisBins {
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

impl AxisBins {
    pub fn new(lower: f64, upper: f64, bins: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return usage(format!(
                "axis bounds must satisfy lower < upper, got [{lower}, {upper}]"
            ));
        }
        if bins == 0 {
            return usage("an axis needs at least one bin");
        }
        Ok(AxisBins { lower, upper, bins })
    }

    /// Bin of `v` after clipping to `[lower, upper]`.
    pub fn bin(&self, v: f64) -> usize {
        let width = (self.upper - self.lower) / self.bins as f64;
        let clipped = v.clamp(self.lower, self.upper);
        let b = ((clipped - self.lower) / width).floor();
        // NaN and negatives saturate to 0 in the cast
        (b as usize).min(self.bins - 1)
    }

    /// Center of bin `b`.
    pub fn center(&self, b: usize) -> f64 {
        let width = (self.upper - self.lower) / self.bins as f64;
        self.lower + (b as f64 + 0.5) * width
    }
}

/// Per-dimension equal-width grid, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    axes: Vec<AxisBins>,
}

impl GridSpec {
    pub fn new(axes: Vec<AxisBins>) -> Result<Self> {
        if axes.is_empty() {
            return usage("a grid needs at least one axis");
        }
        for a in &axes {
            AxisBins::new(a.lower, a.upper, a.bins)?;
        }
        let grid = GridSpec { axes };
        if grid
            .axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.bins))
            .is_none()
        {
            return usage("grid has too many cells");
        }
        Ok(grid)
    }

    pub fn axes(&self) -> &[AxisBins] {
        &self.axes
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn n_states(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    /// Flat index of an observation vector.
    pub fn index_of(&self, values: &[f64]) -> Result<usize> {
        if values.len() != self.axes.len() {
            return usage(format!(
                "observation has {} components, grid has {} axes",
                values.len(),
                self.axes.len()
            ));
        }
        Ok(self.index_unchecked(values))
    }

    pub(crate) fn index_unchecked(&self, values: &[f64]) -> usize {
        self.axes
            .iter()
            .zip(values)
            .fold(0, |idx, (axis, v)| idx * axis.bins + axis.bin(*v))
    }

    /// Per-axis bins of a flat index.
    pub fn decode(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.n_states() {
            return usage(format!("index {index} out of range ({} cells)", self.n_states()));
        }
        let mut rest = index;
        let mut bins = vec![0; self.axes.len()];
        for (slot, axis) in bins.iter_mut().zip(&self.axes).rev() {
            *slot = rest % axis.bins;
            rest /= axis.bins;
        }
        Ok(bins)
    }

    pub fn encode(&self, bins: &[usize]) -> Result<usize> {
        if bins.len() != self.axes.len() {
            return usage("bin tuple length does not match grid");
        }
        let mut idx = 0;
        for (b, axis) in bins.iter().zip(&self.axes) {
            if *b >= axis.bins {
                return usage(format!("bin {b} out of range ({} bins)", axis.bins));
            }
            idx = idx * axis.bins + b;
        }
        Ok(idx)
    }

    /// Cell centers of a flat index.
    pub fn centers(&self, index: usize) -> Result<Vec<f64>> {
        Ok(self
            .decode(index)?
            .into_iter()
            .zip(&self.axes)
            .map(|(b, a)| a.center(b))
            .collect())
    }
}

/// Flat index of an environment state.
pub fn state_index(grid: &GridSpec, s: &ContinuousState) -> Result<usize> {
    grid.index_of(s.values())
}

/// Bin layout used for each environment. Unbounded velocity axes are clipped
/// to the ranges visited in practice.
pub fn default_grid(env: &EnvKind) -> GridSpec {
    let axis = |lo, hi, n| AxisBins::new(lo, hi, n).expect("static bounds are valid");
    let axes = match env {
        EnvKind::MountainCar(m) => vec![
            axis(m.min_position, m.max_position, 40),
            axis(-m.max_speed, m.max_speed, 40),
        ],
        EnvKind::CartPole(c) => vec![
            axis(-c.x_threshold, c.x_threshold, 8),
            axis(-3.0, 3.0, 8),
            axis(-c.theta_threshold, c.theta_threshold, 10),
            axis(-3.5, 3.5, 10),
        ],
        EnvKind::Acrobot(a) => vec![
            axis(-1.0, 1.0, 8),
            axis(-1.0, 1.0, 8),
            axis(-1.0, 1.0, 10),
            axis(-1.0, 1.0, 10),
            axis(-a.max_vel_1, a.max_vel_1, 10),
            axis(-a.max_vel_2, a.max_vel_2, 10),
        ],
    };
    GridSpec::new(axes).expect("default grids are valid")
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.axes.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}:{}", a.lower, a.upper, a.bins)?;
        }
        Ok(())
    }
}

/// Comma- or whitespace-separated `lo:hi:bins` triplets.
impl FromStr for GridSpec {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let axes = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                let parts: Vec<&str> = t.split(':').collect();
                let [lo, hi, bins] = parts.as_slice() else {
                    return Err(LabError::Parse(format!("grid axis '{t}' is not lo:hi:bins")));
                };
                let num = |v: &str| {
                    v.parse::<f64>()
                        .map_err(|_| LabError::Parse(format!("bad bound '{v}'")))
                };
                let bins = bins
                    .parse::<usize>()
                    .map_err(|_| LabError::Parse(format!("bad bin count '{bins}'")))?;
                AxisBins::new(num(lo)?, num(hi)?, bins).map_err(|e| LabError::Parse(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        GridSpec::new(axes).map_err(|e| LabError::Parse(e.to_string()))
    }
}
