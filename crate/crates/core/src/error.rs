use alloc::string::String;

/// Errors raised by estimation, testing and simulation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parameter `{name}` = {value} is outside its domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("degenerate design: {block} block is rank deficient (rank {rank} < {columns} columns)")]
    DegenerateDesign {
        block: DesignBlock,
        rank: usize,
        columns: usize,
    },

    #[error("smoothing variable has fewer than 2 distinct values")]
    DegenerateSupport,

    #[error("instrument block has rank 0; no usable instruments")]
    UnusableInstruments,

    #[error(
        "interior-point solver did not converge in {iterations} iterations \
         (duality gap {gap:.3e}, primal step {primal_step:.3e}, dual step {dual_step:.3e})"
    )]
    SolverFailure {
        iterations: usize,
        gap: f64,
        primal_step: f64,
        dual_step: f64,
    },

    #[error("{what} is numerically singular (condition number {condition:.3e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("no candidate knot count is feasible for n = {n}")]
    NoFeasibleKnots { n: usize },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("I - rho*W is singular for rho = {rho}")]
    SingularSpatialFilter { rho: f64 },

    #[error("Monte Carlo harness: {failed} of {requested} replicates failed (limit 5%)")]
    TooManyFailures { failed: usize, requested: usize },
}

/// Column block of the assembled design `[X, Pi, E]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignBlock {
    Whole,
    Linear,
    Spline,
    Instrument,
    Retained,
    Tested,
}

impl core::fmt::Display for DesignBlock {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let name = match self {
            DesignBlock::Whole => "full",
            DesignBlock::Linear => "linear (X)",
            DesignBlock::Spline => "spline (Pi)",
            DesignBlock::Instrument => "instrument (E)",
            DesignBlock::Retained => "retained",
            DesignBlock::Tested => "tested",
        };
        f.write_str(name)
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "tau",
            value: tau,
            expected: "0 < tau < 1",
        })
    }
}
