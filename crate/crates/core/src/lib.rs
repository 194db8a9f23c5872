pub mod cases;
pub mod diagnostics;
pub mod forms;
pub mod mesh;
pub mod polybasis;
pub mod solver;
pub mod spaces;

pub use cases::CaseError as Error;
