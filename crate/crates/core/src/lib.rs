//! Executable edit trajectories for discrete sequence refinement.
//!
//! Sequences (protein residues or SMILES tokens) are edited by scripts of
//! position-grounded INSERT / DELETE / REPLACE operations whose positions are
//! read against the sequence as it evolves. The crate covers the pieces needed
//! to train and evaluate models that emit such scripts:
//!
//! * [`seq`], [`edit`], [`align`]: tokens, scripts, shortest edit scripts
//! * [`trace`]: the completion format and the parse-and-execute consistency check
//! * [`dataset`]: supervised and augmented dataset construction
//! * [`oracle`]: the JSON-lines oracle client and toy oracles
//! * [`reward`], [`policy`]: rewards and group-relative policy objectives
//! * [`flow`]: Edit Flows training targets and the budgeted sampler
//! * [`metrics`]: evaluation metrics

pub mod align;
pub mod dataset;
pub mod edit;
pub mod flow;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod reward;
pub mod seq;
pub mod trace;

pub use align::{align, levenshtein_distance, shortest_edit_script, AlignError, AlignmentStep};
pub use edit::{
    execute, execute_with, parse_script, render_script, EditError, EditOp, EditScript, ExecError, ExecMode, ScriptError,
};
pub use oracle::{OracleError, OracleHandle};
pub use seq::{detokenize, tokenize, Alphabet, AlphabetKind, SeqError, TokenSequence};
pub use trace::{
    check_completion, parse_completion, render_completion, verify_consistency, ConsistencyReport, Trajectory,
};
