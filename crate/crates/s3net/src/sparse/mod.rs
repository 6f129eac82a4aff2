//! Coordinate management for sparse tensors: voxel quantization, hashed
//! coordinate/row maps, kernel offsets, kernel maps and strided coordinate
//! derivation.

mod coordinate;
mod kernel;
mod tensor;

pub use coordinate::{Coordinate, CoordinateMap};
pub use kernel::{build_kernel_map, stride_coordinates, KernelMap, KernelOffsets};
pub use tensor::{quantize_points, SparseTensor};
