//! Binary consensus automata: the crash-count algorithm (`alg1`), the
//! eventual crash-count lock/decide algorithm (`alg2`) and the self-trust
//! leader/report/vote algorithm (`alg3`), plus deliberately broken variants
//! used to show that the invariant checkers are not vacuous.

mod alg1;
mod alg2;
mod alg3;

pub use alg1::{Alg1, Alg1Mutant, Alg1Node};
pub use alg2::{Alg2, Alg2Mutant, Alg2Node};
pub use alg3::{Alg3, Alg3Mutant, Alg3Node};

use thiserror::Error;

use crate::model::SystemConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("{algorithm} needs n > {factor}f, got n = {n}, f = {f}")]
    TooFewProcesses {
        algorithm: &'static str,
        factor: usize,
        n: usize,
        f: usize,
    },
}

pub(crate) fn require_majority(
    algorithm: &'static str,
    cfg: SystemConfig,
) -> Result<(), ConsensusError> {
    if cfg.n > 2 * cfg.f {
        Ok(())
    } else {
        Err(ConsensusError::TooFewProcesses {
            algorithm,
            factor: 2,
            n: cfg.n,
            f: cfg.f,
        })
    }
}
