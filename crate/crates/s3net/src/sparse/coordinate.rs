use crate::error::{Error, Result};
use std::collections::HashMap;

/// A voxel address: batch index plus three signed grid indices.
///
/// Grid indices are in units of the quantization voxel size. Equality and
/// hashing are field-wise, so a `Coordinate` can key a hash map directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coordinate {
    pub batch: u32,
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl Coordinate {
    pub fn new(batch: u32, i: i32, j: i32, k: i32) -> Self {
        Self { batch, i, j, k }
    }

    /// Spatial translation by an integer step per axis; batch is untouched.
    pub fn offset(&self, d: [i32; 3]) -> Self {
        Self {
            batch: self.batch,
            i: self.i + d[0],
            j: self.j + d[1],
            k: self.k + d[2],
        }
    }

    /// True when all three spatial indices are multiples of `stride`.
    pub fn divisible_by(&self, stride: i32) -> bool {
        self.i.rem_euclid(stride) == 0
            && self.j.rem_euclid(stride) == 0
            && self.k.rem_euclid(stride) == 0
    }
}

/// A bijection between coordinates and dense row indices `0..len`.
///
/// Row order is the insertion order of the builder, which makes every
/// downstream gather/scatter deterministic for a given input order.
#[derive(Debug, Clone, Default)]
pub struct CoordinateMap {
    rows: Vec<Coordinate>,
    index: HashMap<Coordinate, usize>,
}

impl CoordinateMap {
    /// Builds a map from unique coordinates, assigning rows in input order.
    pub fn from_coordinates(coords: Vec<Coordinate>) -> Result<Self> {
        let mut index = HashMap::with_capacity(coords.len());
        for (row, &c) in coords.iter().enumerate() {
            if index.insert(c, row).is_some() {
                return Err(Error::DuplicateCoordinate(c));
            }
        }
        Ok(Self {
            rows: coords,
            index,
        })
    }

    /// Builds a map keeping the first occurrence of each coordinate.
    /// Returns the map plus, per input, the row its coordinate landed in.
    pub fn dedup_from(coords: &[Coordinate]) -> (Self, Vec<usize>) {
        let mut rows = Vec::new();
        let mut index: HashMap<Coordinate, usize> = HashMap::new();
        let mut assignment = Vec::with_capacity(coords.len());
        for &c in coords {
            let row = *index.entry(c).or_insert_with(|| {
                rows.push(c);
                rows.len() - 1
            });
            assignment.push(row);
        }
        (Self { rows, index }, assignment)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_of(&self, c: &Coordinate) -> Option<usize> {
        self.index.get(c).copied()
    }

    pub fn coordinate_of(&self, row: usize) -> Coordinate {
        self.rows[row]
    }

    pub fn coordinates(&self) -> &[Coordinate] {
        &self.rows
    }

    pub fn contains(&self, c: &Coordinate) -> bool {
        self.index.contains_key(c)
    }

    /// Batch index of each row, in row order.
    pub fn batch_of_rows(&self) -> Vec<u32> {
        self.rows.iter().map(|c| c.batch).collect()
    }

    /// Sorted list of batch indices that have at least one row.
    pub fn present_batches(&self) -> Vec<u32> {
        let mut batches: Vec<u32> = self.rows.iter().map(|c| c.batch).collect();
        batches.sort_unstable();
        batches.dedup();
        batches
    }
}

impl PartialEq for CoordinateMap {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
    }
}

impl Eq for CoordinateMap {}
