mod taylor_green;

pub(crate) use taylor_green::taylor_green_at;
pub use taylor_green::{taylor_green_exact, taylor_green_residual};
mod representation;

pub use representation::{representation_u, to_physical_time, Provenance, SolutionBundle};
mod diagnostics;

pub use diagnostics::{
    divergence_evolution_residual, divergence_residual, error_profile, kolmogorov_forward_residual,
    regularity_check, Criterion, DivergenceReport, ForwardRow, RegularityTable, ValidationReport,
};
