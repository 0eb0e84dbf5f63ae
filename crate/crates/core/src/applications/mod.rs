//! Delegated computation, unitary designs, metrology and secret sharing on top of the protocol.

pub mod mbqc;
pub mod metrology;
pub mod secret_sharing;
pub mod tdesign;

pub use mbqc::{
    delegated_soundness, enumerate_ensemble, induced_unitary, run_pattern, DelegatedEstimate, MeasurementPattern,
    UnitaryEnsembleSample,
};
pub use metrology::{certified_qfi_bound, cramer_rao, jz, qfi};
pub use secret_sharing::{
    run_ss_variant, shamir_reconstruct, shamir_share, AccessStructure, ClassicalShareSet,
};
pub use tdesign::{certified_ensemble_fidelity, frame_potential, haar_unitary};
