//! Dense row-major 2D grids and the pixel-level domain types built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense 2D grid stored in row-major `(row, col)` order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }
}

impl<T: Clone + Default> Grid<T> {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::default())
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
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
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    /// Bounds-checked access with signed coordinates.
    #[inline]
    pub fn get_signed(&self, row: isize, col: isize) -> Option<&T> {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            None
        } else {
            Some(&self.data[row as usize * self.width + col as usize])
        }
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

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { height: self.height, width: self.width, data: self.data.iter().map(f).collect() }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    /// Iterates `(row, col, value)` in raster order.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, v)| (i / w, i % w, v))
    }
}

/// Instance label map: 0 is background, each positive value one instance.
pub type LabelMap = Grid<u32>;

/// Binary mask used by the morphology routines.
pub type Mask = Grid<bool>;

/// Pixel class of the three-class training target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[repr(u8)]
pub enum Class {
    #[default]
    Background = 0,
    Boundary = 1,
    Cell = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Background, Class::Boundary, Class::Cell];

    #[inline]
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Class> {
        match code {
            0 => Some(Class::Background),
            1 => Some(Class::Boundary),
            2 => Some(Class::Cell),
            _ => None,
        }
    }
}

/// Three-class map over {background, boundary, cell}.
pub type TertiaryMap = Grid<Class>;

/// Where an image came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageMeta {
    pub dataset: String,
    pub sequence: String,
    pub frame: usize,
    /// z-plane index for images sliced out of a 3D stack.
    pub slice: Option<usize>,
}

/// Normalized intensity image with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub pixels: Grid<f64>,
    pub meta: ImageMeta,
}

impl Image {
    pub fn new(pixels: Grid<f64>) -> Self {
        Self { pixels, meta: ImageMeta::default() }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pixels.shape()
    }
}

/// Raw (unnormalized) unsigned intensities of up to 16 bits.
pub type RawImage = Grid<u16>;

/// Sorted distinct positive ids present in a label map.
pub fn instance_ids(labels: &LabelMap) -> Vec<u32> {
    let mut ids: Vec<u32> = labels.iter().copied().filter(|&v| v != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Positive ids ordered by the raster position of each instance's first pixel.
pub fn instances_in_raster_order(labels: &LabelMap) -> Vec<u32> {
    let mut seen = std::collections::HashSet::new();
    labels.iter().copied().filter(|&v| v != 0 && seen.insert(v)).collect()
}
