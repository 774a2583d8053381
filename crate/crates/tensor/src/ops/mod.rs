pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod reduce;
pub mod resample;
pub mod shape;

pub use conv::ConvSpec;
pub use elementwise::broadcast_to;
pub use resample::{AxisMap, Border};
