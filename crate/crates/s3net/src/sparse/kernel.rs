use crate::error::{Error, Result};
use crate::sparse::{Coordinate, CoordinateMap};

/// The shape of a hypercubic convolution kernel as an ordered offset list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelOffsets {
    offsets: Vec<[i32; 3]>,
    size: u32,
}

impl KernelOffsets {
    /// Lexicographically ordered offsets of a cubic kernel with odd edge
    /// length `size`; each component ranges over `[-size/2, size/2]`.
    pub fn cubic(size: u32) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::EvenKernel(size));
        }
        let r = (size / 2) as i32;
        let mut offsets = Vec::with_capacity((size * size * size) as usize);
        for i in -r..=r {
            for j in -r..=r {
                for k in -r..=r {
                    offsets.push([i, j, k]);
                }
            }
        }
        Ok(Self { offsets, size })
    }

    pub fn offsets(&self) -> &[[i32; 3]] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// Index of the zero offset (present for every odd kernel).
    pub fn center(&self) -> usize {
        self.offsets.iter().position(|o| *o == [0, 0, 0]).unwrap()
    }

    /// The same kernel with every offset negated, reordered lexicographically.
    pub fn negated(&self) -> Self {
        let mut offsets: Vec<[i32; 3]> = self
            .offsets
            .iter()
            .map(|o| [-o[0], -o[1], -o[2]])
            .collect();
        offsets.sort_unstable();
        Self {
            offsets,
            size: self.size,
        }
    }
}

/// Execution plan for one sparse convolution: per kernel offset, the list of
/// `(input_row, output_row)` pairs that exchange a feature vector.
///
/// Pairs are sorted by output row (construction order), which fixes the
/// accumulation order and keeps results reproducible.
#[derive(Debug, Clone)]
pub struct KernelMap {
    lists: Vec<Vec<(u32, u32)>>,
    n_in: usize,
    n_out: usize,
}

impl KernelMap {
    pub fn lists(&self) -> &[Vec<(u32, u32)>] {
        &self.lists
    }

    pub fn input_count(&self) -> usize {
        self.n_in
    }

    pub fn output_count(&self) -> usize {
        self.n_out
    }

    /// Total number of pairs across all offsets.
    pub fn pair_count(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }
}

/// Derives the coordinate set one pyramid level down: every input coordinate
/// is floored to the enclosing cell of edge `in_stride * factor`. Duplicates
/// collapse, so the output has at most as many rows as the input.
pub fn stride_coordinates(coords: &CoordinateMap, in_stride: i32, factor: i32) -> CoordinateMap {
    assert!(factor >= 2, "stride factor must be >= 2");
    let step = in_stride * factor;
    let strided: Vec<Coordinate> = coords
        .coordinates()
        .iter()
        .map(|c| {
            Coordinate::new(
                c.batch,
                c.i.div_euclid(step) * step,
                c.j.div_euclid(step) * step,
                c.k.div_euclid(step) * step,
            )
        })
        .collect();
    let (map, _) = CoordinateMap::dedup_from(&strided);
    map
}

/// Builds the kernel map for a convolution from `input` to `output`
/// coordinates. For output coordinate `u` and offset `d`, the input lookup is
/// `u + d * in_stride`: offsets are scaled by the input tensor stride so the
/// receptive field grows with the pyramid level.
pub fn build_kernel_map(
    input: &CoordinateMap,
    output: &CoordinateMap,
    offsets: &KernelOffsets,
    in_stride: i32,
) -> KernelMap {
    let mut lists: Vec<Vec<(u32, u32)>> = vec![Vec::new(); offsets.len()];
    for (out_row, u) in output.coordinates().iter().enumerate() {
        for (oi, d) in offsets.offsets().iter().enumerate() {
            let probe = u.offset([d[0] * in_stride, d[1] * in_stride, d[2] * in_stride]);
            if let Some(in_row) = input.row_of(&probe) {
                lists[oi].push((in_row as u32, out_row as u32));
            }
        }
    }
    KernelMap {
        lists,
        n_in: input.len(),
        n_out: output.len(),
    }
}
