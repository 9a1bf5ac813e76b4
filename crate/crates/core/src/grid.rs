//! Plain row-major 2D and 3D containers.

use crate::error::{Error, Result};

/// Row-major 2D grid, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid2<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid2 {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Grid2 { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid2 { width, height, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid2<U> {
        Grid2 {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_dims(&self, width: usize, height: usize, what: &str) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::Shape(format!(
                "{what} is {}x{}, expected {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Row-major 3D volume, index `(z * ny + y) * nx + x`. The main field points
/// along z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Volume<T> {
    pub fn filled(nx: usize, ny: usize, nz: usize, value: T) -> Self {
        Volume {
            nx,
            ny,
            nz,
            data: vec![value; nx * ny * nz],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, nz: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nx * ny * nz {
            return Err(Error::Shape(format!(
                "{} values for a {nx}x{ny}x{nz} volume",
                data.len()
            )));
        }
        Ok(Volume { nx, ny, nz, data })
    }

    /// Embeds a 2D grid as a single-slice volume.
    pub fn from_grid2(grid: &Grid2<T>) -> Self {
        Volume {
            nx: grid.width,
            ny: grid.height,
            nz: 1,
            data: grid.data.clone(),
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }
}
