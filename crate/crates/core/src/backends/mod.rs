//! Concrete mountable backends: host directory, embedded persistent
//! store, in-process functions and external tool processes.

pub mod dir;
pub mod function;
pub mod store;
pub mod tool;
pub mod wire;

pub use dir::{DirBackend, DirBackendConfig};
pub use function::{FunctionBackend, FunctionImpl};
pub use store::{StoreBackendConfig, StoreInner, StoreView};
pub use tool::{ToolBackend, ToolProcessConfig};
