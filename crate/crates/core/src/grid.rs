//! Dense row-major 2-D arrays indexed by pixel `(u, v)` = (column, row).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(width, height, data.len(), 1));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        &mut self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        self.data[v * self.width + u] = value;
    }

    /// Bounds-checked access with signed coordinates.
    #[inline]
    pub fn get_signed(&self, u: i64, v: i64) -> Option<&T> {
        if u < 0 || v < 0 || u as usize >= self.width || v as usize >= self.height {
            None
        } else {
            Some(&self.data[v as usize * self.width + u as usize])
        }
    }

    #[inline]
    pub fn contains(&self, u: i64, v: i64) -> bool {
        u >= 0 && v >= 0 && (u as usize) < self.width && (v as usize) < self.height
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

    pub fn same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Iterates `(u, v, &value)` in row-major order.
    pub fn iter_pixels(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, x)| (i % w, i / w, x))
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

pub type BinaryMask = Grid<bool>;

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.as_slice().iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.as_slice().iter().any(|&b| b)
    }

    pub fn positives(&self) -> Vec<(usize, usize)> {
        self.iter_pixels()
            .filter(|(_, _, &b)| b)
            .map(|(u, v, _)| (u, v))
            .collect()
    }
}

pub const NEIGHBORS_4: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
pub const NEIGHBORS_8: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Connected components of a binary mask; returns a label grid (0 = off) and the
/// component count.
pub fn connected_components(mask: &BinaryMask, eight: bool) -> (Grid<u32>, usize) {
    let (w, h) = mask.dims();
    let mut labels = Grid::new(w, h, 0u32);
    let offsets: &[(i64, i64)] = if eight { &NEIGHBORS_8 } else { &NEIGHBORS_4 };
    let mut next = 0u32;
    let mut stack = Vec::new();
    for v in 0..h {
        for u in 0..w {
            if !*mask.get(u, v) || *labels.get(u, v) != 0 {
                continue;
            }
            next += 1;
            labels.set(u, v, next);
            stack.push((u, v));
            while let Some((pu, pv)) = stack.pop() {
                for &(du, dv) in offsets {
                    let (qu, qv) = (pu as i64 + du, pv as i64 + dv);
                    if mask.get_signed(qu, qv) == Some(&true)
                        && *labels.get(qu as usize, qv as usize) == 0
                    {
                        labels.set(qu as usize, qv as usize, next);
                        stack.push((qu as usize, qv as usize));
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Binary erosion with a 3x3 square; out-of-image counts as off.
pub fn erode3(mask: &BinaryMask) -> BinaryMask {
    Grid::from_fn(mask.width(), mask.height(), |u, v| {
        (-1..=1).all(|dv| {
            (-1..=1).all(|du| mask.get_signed(u as i64 + du, v as i64 + dv) == Some(&true))
        })
    })
}

/// Binary dilation with a 3x3 square.
pub fn dilate3(mask: &BinaryMask) -> BinaryMask {
    Grid::from_fn(mask.width(), mask.height(), |u, v| {
        (-1..=1).any(|dv| {
            (-1..=1).any(|du| mask.get_signed(u as i64 + du, v as i64 + dv) == Some(&true))
        })
    })
}
