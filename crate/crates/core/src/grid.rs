//! Square pixel grids addressed with 1-indexed `(x, y)` coordinates.
//!
//! `x` is the column and `y` the row; storage is row-major, so pixel
//! `(x, y)` lives at index `(y - 1) * n + (x - 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer pixel coordinate, 1-indexed on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Continuous position of the pixel center in pixel units.
    pub fn to_point(self) -> Point {
        Point::new(self.x as f64, self.y as f64)
    }

    /// Position in meters for a grid with `cell_m` meters per pixel.
    pub fn to_meters(self, cell_m: f64) -> Point {
        Point::new(self.x as f64 * cell_m, self.y as f64 * cell_m)
    }
}

/// A real-valued 2D position (pixels or meters depending on context).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

/// Dense `n x n` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(n: usize, value: T) -> Self {
        Self {
            n,
            data: vec![value; n * n],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "grid of side {n} needs {} values, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(Pixel) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for y in 1..=n {
            for x in 1..=n {
                data.push(f(Pixel::new(x, y)));
            }
        }
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn contains(&self, p: Pixel) -> bool {
        (1..=self.n).contains(&p.x) && (1..=self.n).contains(&p.y)
    }

    pub fn check(&self, p: Pixel) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutOfGrid {
                x: p.x,
                y: p.y,
                size: self.n,
            })
        }
    }

    /// Row-major linear index of `p`. Panics in debug builds when `p` is off-grid.
    #[inline]
    pub fn index(&self, p: Pixel) -> usize {
        debug_assert!(self.contains(p), "{p:?} outside {0}x{0}", self.n);
        (p.y - 1) * self.n + (p.x - 1)
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> Pixel {
        Pixel::new(index % self.n + 1, index / self.n + 1)
    }

    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        (0..self.data.len()).map(|i| self.pixel(i))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            n: self.n,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, p: Pixel) -> T {
        self.data[self.index(p)]
    }
}

impl<T> std::ops::Index<Pixel> for Grid<T> {
    type Output = T;
    fn index(&self, p: Pixel) -> &T {
        &self.data[Grid::index(self, p)]
    }
}

impl<T> std::ops::IndexMut<Pixel> for Grid<T> {
    fn index_mut(&mut self, p: Pixel) -> &mut T {
        let i = Grid::index(self, p);
        &mut self.data[i]
    }
}
