//! On-disk tensor containers and checkpoints.

mod checkpoint;
mod container;

pub use checkpoint::{
    checkpoint_container, load_ema_state, load_model_state, load_momentum, CHECKPOINT_KIND, SECTION_BUFFERS,
    SECTION_EMA, SECTION_MOMENTUM, SECTION_PARAMS,
};
pub use container::{read_header, write_atomic, Container, ContainerHeader, Entry, TensorInfo, FORMAT_VERSION, MAGIC};
