//! Maps from grid cells to network input vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_OBS_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObservationKind {
    OneHotXY,
    RandomProjection,
    SmoothedRandomProjection,
}

impl ObservationKind {
    pub fn name(self) -> &'static str {
        match self {
            ObservationKind::OneHotXY => "one-hot",
            ObservationKind::RandomProjection => "random-projection",
            ObservationKind::SmoothedRandomProjection => "smoothed-random-projection",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "one-hot" => Ok(ObservationKind::OneHotXY),
            "random-projection" => Ok(ObservationKind::RandomProjection),
            "smoothed-random-projection" => Ok(ObservationKind::SmoothedRandomProjection),
            other => Err(Error::config(format!("unknown observation kind '{other}'"))),
        }
    }
}

/// An observation map. The projection matrix is drawn once at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMap {
    kind: ObservationKind,
    dim: usize,
    seed: u64,
    radius: usize,
    /// `dim x 2` standard Gaussian entries.
    projection: Matrix,
}

impl ObservationMap {
    pub fn new(kind: ObservationKind, dim: usize, seed: u64, radius: usize) -> Result<Self> {
        if dim == 0 && kind != ObservationKind::OneHotXY {
            return Err(Error::config("projection dimension must be positive"));
        }
        let projection = if kind == ObservationKind::OneHotXY {
            Matrix::zeros(0, 2)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..dim * 2).map(|_| StandardNormal.sample(&mut rng)).collect();
            Matrix::new(dim, 2, data)?
        };
        Ok(ObservationMap {
            kind,
            dim,
            seed,
            radius,
            projection,
        })
    }

    pub fn one_hot() -> Self {
        ObservationMap::new(ObservationKind::OneHotXY, 0, 0, 0).expect("one-hot map is always valid")
    }

    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Configured projection dimension (0 for one-hot maps).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Length of the vectors produced for `spec`.
    pub fn output_dim(&self, spec: &GridSpec) -> usize {
        match self.kind {
            ObservationKind::OneHotXY => spec.num_states(),
            _ => self.dim,
        }
    }

    fn raw_projection(&self, spec: &GridSpec, x: usize, y: usize) -> Vec<f64> {
        let nx = normalize_coord(x, spec.width());
        let ny = normalize_coord(y, spec.height());
        self.projection.matvec(&[nx, ny]).expect("projection has two columns")
    }

    pub fn observe(&self, spec: &GridSpec, state: usize) -> Result<Vec<f64>> {
        if state >= spec.num_states() {
            return Err(Error::domain(format!("state {state} outside the grid")));
        }
        let (x, y) = spec.coords(state);
        match self.kind {
            ObservationKind::OneHotXY => {
                let mut v = vec![0.0; spec.num_states()];
                v[state] = 1.0;
                Ok(v)
            }
            ObservationKind::RandomProjection => Ok(self.raw_projection(spec, x, y)),
            ObservationKind::SmoothedRandomProjection => {
                let r = self.radius as isize;
                let mut acc = vec![0.0; self.dim];
                let mut count = 0usize;
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs() + dy.abs() > r {
                            continue;
                        }
                        let cx = x as isize + dx;
                        let cy = y as isize + dy;
                        if cx < 0 || cy < 0 || cx >= spec.width() as isize || cy >= spec.height() as isize {
                            continue;
                        }
                        let p = self.raw_projection(spec, cx as usize, cy as usize);
                        for (a, v) in acc.iter_mut().zip(p) {
                            *a += v;
                        }
                        count += 1;
                    }
                }
                let inv = 1.0 / count as f64;
                acc.iter_mut().for_each(|a| *a *= inv);
                Ok(acc)
            }
        }
    }

    /// Observation of every cell, indexed by state id.
    pub fn observe_all(&self, spec: &GridSpec) -> Vec<Vec<f64>> {
        (0..spec.num_states())
            .map(|s| self.observe(spec, s).expect("state in range"))
            .collect()
    }
}

fn normalize_coord(c: usize, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * c as f64 / (extent - 1) as f64 - 1.0
    }
}
