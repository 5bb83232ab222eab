//! Two-tier user association with offload splitting, frequency and power allocation.
//!
//! Each user associates with the small base station (SBS) or the macro base
//! station (MBS). On the SBS route the task splits into a local part, a part
//! computed on the SBS server and a part forwarded over the wired link to the
//! MBS. On the MBS route it splits into a local part and a part computed on the
//! MBS. Binary association is relaxed to `[0, 1]` with a concave binarity
//! penalty that is linearised at every outer (SCA) iteration. Each linearised
//! subproblem is made convex with a nested updated transform and solved by
//! alternating projected-gradient solves with closed-form auxiliary updates.

pub mod model;
pub mod solve;
pub mod surrogate;

pub use model::{penalty_linearized, q_components, total_cost, uplink_rate, AssocVars, HetNetInstance, UserComponents};
pub use solve::{inter_solve, intra_solve, InterConfig, InterOutcome, IntraOutcome};
pub use surrogate::{nested_aux_update, nested_transform_eval, nested_transform_grad, AuxPair, NestedAux};
