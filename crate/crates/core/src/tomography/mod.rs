//! Single-qubit state and process tomography.
//!
//! Basis convention: `|↑⟩ = (1, 0)` is the `+z` pole of the Bloch sphere.
//! `|↑⟩` is the shelved state, so a dark (low-count) outcome on the `z`
//! axis is the `+1` eigenvalue and a projection is `p = 1 - 2 * bright / shots`.

mod process;
mod records;
mod state;

pub use process::{
    bloch_error_surface, default_surface_axes, process_fidelity, read_surface_csv,
    reconstruct_chi, reconstruct_chi_from, reconstruct_chi_from_projections, write_surface_csv,
    ChiJson, ChiMatrix, ErrorSample, CHI_BASIS_LABELS, SURFACE_CSV_HEADER,
};
pub use records::{
    projections_from_records, read_records_csv, write_records_csv, MissingAxisPolicy,
    TomographyRecord, RECORDS_CSV_HEADER,
};
pub use state::{
    average_fidelity, fidelity_table, null_orthogonal_projections, reconstruct_state,
    state_fidelity, Axis, BlochVector, CardinalState, DensityMatrix, FidelityRow, FidelityTable,
    Projections,
};
