//! On-disk formats.

mod container;
mod pgm;
mod slice;

pub use container::{write_atomic, Container, NamedTensor, MAGIC, VERSION};
pub use pgm::{encode_pgm, parse_pgm, read_pgm, write_pgm, Pgm};
pub use slice::{
    list_slices, load_slice, quantize, read_meta, save_slice, sidecar_path, SliceMeta,
};
