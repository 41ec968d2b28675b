//! Data model: datasets, spatial weights, spatial lag, instruments and the
//! assembled design `[X, Pi, E]`.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;
use nalgebra::{DMatrix, DVector};

use crate::error::{DesignBlock, Error, Result};
use crate::linalg;
use crate::spline::{build_pi, SplineBasis};

/// Relative tolerance for collinearity detection in assembled designs.
pub const RANK_TOL: f64 = 1e-10;

/// Observations of a partially linear varying-coefficient SAR model.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    u: DVector<f64>,
    w: DMatrix<f64>,
}

impl Dataset {
    /// Validates dimensions, finiteness and the weight matrix (zero diagonal
    /// with unit row sums, or identically zero).
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        u: DVector<f64>,
        w: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        let check = |context, found| {
            if found == n {
                Ok(())
            } else {
                Err(Error::Dimension {
                    context,
                    expected: n,
                    found,
                })
            }
        };
        check("rows of X", x.nrows())?;
        check("rows of Z", z.nrows())?;
        check("length of U", u.len())?;
        check("rows of W", w.nrows())?;
        check("columns of W", w.ncols())?;
        let finite = |name: &str, values: &[f64]| {
            if values.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::InvalidData(format!("non-finite entry in {name}")))
            }
        };
        finite("y", y.as_slice())?;
        finite("X", x.as_slice())?;
        finite("Z", z.as_slice())?;
        finite("U", u.as_slice())?;
        finite("W", w.as_slice())?;
        validate_weights(&w)?;
        Ok(Self { y, x, z, u, w })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Same observations with different linear and varying covariates.
    pub fn with_covariates(&self, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        Self::new(self.y.clone(), x, z, self.u.clone(), self.w.clone())
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        (self.y, self.x, self.z, self.u, self.w)
    }
}

fn validate_weights(w: &DMatrix<f64>) -> Result<()> {
    if w.iter().all(|&v| v == 0.0) {
        return Ok(());
    }
    for i in 0..w.nrows() {
        if w[(i, i)] != 0.0 {
            return Err(Error::InvalidData(format!("weight matrix has nonzero diagonal at row {i}")));
        }
        let sum: f64 = w.row(i).iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidData(format!(
                "weight matrix row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// `w_ij = r^{|i-j|}` off the diagonal, zero on it, rows scaled to sum to one.
pub fn build_weight_matrix(n: usize, r: f64) -> Result<DMatrix<f64>> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Domain {
            name: "r",
            value: r,
            expected: "0 < r < 1",
        });
    }
    if n < 2 {
        return Err(Error::InvalidData("weight matrix needs n >= 2".into()));
    }
    let powers: Vec<f64> = (0..n).map(|k| libm::pow(r, k as f64)).collect();
    let mut w = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { powers[i.abs_diff(j)] });
    for mut row in w.row_iter_mut() {
        let s: f64 = row.iter().sum();
        row /= s;
    }
    Ok(w)
}

pub fn spatial_lag(w: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if w.ncols() != y.len() {
        return Err(Error::Dimension {
            context: "spatial lag",
            expected: w.ncols(),
            found: y.len(),
        });
    }
    Ok(w * y)
}

/// Instrument sets for the spatial lag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InstrumentSet {
    #[default]
    WxWz,
    Wx,
    /// `[X, Z]` without spatial lagging.
    XZ,
}

impl InstrumentSet {
    pub fn raw(self, w: &DMatrix<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        match self {
            InstrumentSet::WxWz => {
                let wx = w * x;
                let wz = w * z;
                linalg::hcat(n, &[&wx, &wz])
            }
            InstrumentSet::Wx => w * x,
            InstrumentSet::XZ => linalg::hcat(n, &[x, z]),
        }
    }
}

/// Instrument matrix with collinear columns removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruments {
    pub matrix: DMatrix<f64>,
    /// Columns of the raw instrument set that were kept.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// `[W X, W Z]`, dropping columns that are (numerically) linear combinations
/// of earlier ones.
pub fn build_instruments(w: &DMatrix<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Instruments> {
    build_instruments_with(InstrumentSet::WxWz, w, x, z)
}

pub fn build_instruments_with(
    set: InstrumentSet,
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<Instruments> {
    if w.ncols() != x.nrows() || x.nrows() != z.nrows() {
        return Err(Error::Dimension {
            context: "instrument inputs",
            expected: w.ncols(),
            found: x.nrows(),
        });
    }
    let raw = set.raw(w, x, z);
    let profile = linalg::column_rank_profile(&raw, RANK_TOL);
    split_kept(&raw, &profile, 0)
}

fn split_kept(raw: &DMatrix<f64>, profile: &[bool], offset: usize) -> Result<Instruments> {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (j, &ok) in profile[offset..].iter().enumerate() {
        if ok {
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    if kept.is_empty() {
        return Err(Error::UnusableInstruments);
    }
    if !dropped.is_empty() {
        log::warn!("dropped collinear instrument columns {dropped:?}");
    }
    let cols: Vec<usize> = kept.iter().map(|j| j + offset).collect();
    Ok(Instruments {
        matrix: linalg::select_columns(raw, &cols),
        kept,
        dropped,
    })
}

/// Column ranges of the blocks in `[X, Pi, E]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockIndex {
    pub x: Range<usize>,
    pub pi: Range<usize>,
    pub e: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledDesign {
    pub y: DVector<f64>,
    /// Spatial lag `W y`.
    pub d: DVector<f64>,
    pub x_tilde: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub block_index: BlockIndex,
    pub basis: SplineBasis,
    /// Number of varying coefficients.
    pub q: usize,
    /// Raw instrument columns removed as collinear with the rest of the design.
    pub dropped_instruments: Vec<usize>,
}

impl AssembledDesign {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.block_index.x.len()
    }

    pub fn q_kn(&self) -> usize {
        self.block_index.pi.len()
    }

    pub fn m_e(&self) -> usize {
        self.block_index.e.len()
    }

    /// `[D, X, Pi]`, the design of a quantile regression that treats the
    /// spatial lag as an ordinary regressor.
    pub fn with_lag_no_instruments(&self) -> DMatrix<f64> {
        let n = self.n();
        let d = DMatrix::from_column_slice(n, 1, self.d.as_slice());
        let xp = self.x_tilde.columns(0, self.block_index.e.start).clone_owned();
        linalg::hcat(n, &[&d, &xp])
    }
}

pub fn assemble_design(dataset: &Dataset, basis: &SplineBasis) -> Result<AssembledDesign> {
    assemble_design_with(dataset, basis, InstrumentSet::WxWz)
}

pub fn assemble_design_with(
    dataset: &Dataset,
    basis: &SplineBasis,
    set: InstrumentSet,
) -> Result<AssembledDesign> {
    let raw = set.raw(dataset.w(), dataset.x(), dataset.z());
    assemble_with_instruments(dataset, basis, &raw)
}

/// Assembles `[X, Pi, E]` from an explicit raw instrument matrix. Instrument
/// columns collinear with `[X, Pi]` or with earlier instruments are dropped.
pub fn assemble_with_instruments(
    dataset: &Dataset,
    basis: &SplineBasis,
    raw_instruments: &DMatrix<f64>,
) -> Result<AssembledDesign> {
    let n = dataset.n();
    if raw_instruments.nrows() != n {
        return Err(Error::Dimension {
            context: "instrument rows",
            expected: n,
            found: raw_instruments.nrows(),
        });
    }
    let d = dataset.w() * dataset.y();
    let pi = build_pi(dataset.z(), dataset.u(), basis)?;
    let p = dataset.p();
    let q_kn = pi.q_kn();

    let x = dataset.x();
    let rank_x = linalg::rank(x, RANK_TOL);
    if rank_x < p {
        return Err(Error::DegenerateDesign {
            block: DesignBlock::Linear,
            rank: rank_x,
            columns: p,
        });
    }
    let xp = linalg::hcat(n, &[x, &pi.pi_matrix]);
    let rank_xp = linalg::rank(&xp, RANK_TOL);
    if rank_xp < p + q_kn {
        return Err(Error::DegenerateDesign {
            block: DesignBlock::Spline,
            rank: rank_xp,
            columns: p + q_kn,
        });
    }
    let full = linalg::hcat(n, &[&xp, raw_instruments]);
    let profile = linalg::column_rank_profile(&full, RANK_TOL);
    let inst = split_kept(&full, &profile, p + q_kn)?;
    let m_e = inst.matrix.ncols();
    let x_tilde = linalg::hcat(n, &[&xp, &inst.matrix]);
    Ok(AssembledDesign {
        y: dataset.y().clone(),
        d,
        x_tilde,
        e: inst.matrix,
        block_index: BlockIndex {
            x: 0..p,
            pi: p..p + q_kn,
            e: p + q_kn..p + q_kn + m_e,
        },
        basis: basis.clone(),
        q: pi.q,
        dropped_instruments: inst.dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_weights() {
        let w = build_weight_matrix(2, 0.7).unwrap();
        assert_eq!(w, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn three_by_three_weights() {
        let w = build_weight_matrix(3, 0.3).unwrap();
        assert_eq!(w[(0, 0)], 0.0);
        assert!((w[(0, 1)] - 0.3 / 0.39).abs() < 1e-15);
        assert!((w[(0, 2)] - 0.09 / 0.39).abs() < 1e-15);
        assert!((w[(0, 1)] - 0.769_23).abs() < 1e-5);
    }

    #[test]
    fn weight_domain() {
        assert!(matches!(build_weight_matrix(5, 1.0), Err(Error::Domain { .. })));
        assert!(build_weight_matrix(5, 0.0).is_err());
    }

    #[test]
    fn lag_of_constant_is_constant() {
        let w = build_weight_matrix(6, 0.4).unwrap();
        let y = DVector::from_element(6, 2.5);
        let lag = spatial_lag(&w, &y).unwrap();
        assert!(lag.iter().all(|v| (v - 2.5).abs() < 1e-14));
        let zero = spatial_lag(&DMatrix::zeros(6, 6), &y).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_give_unusable_instruments() {
        let w = DMatrix::zeros(4, 4);
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
        let z = DMatrix::from_fn(4, 1, |i, _| (i * i) as f64);
        assert_eq!(build_instruments(&w, &x, &z), Err(Error::UnusableInstruments));
    }

    #[test]
    fn constant_column_instrument_is_dropped() {
        let w = build_weight_matrix(6, 0.5).unwrap();
        let x = DMatrix::from_element(6, 1, 1.0);
        let z = DMatrix::from_fn(6, 1, |i, _| libm::sin(i as f64));
        let inst = build_instruments(&w, &x, &z).unwrap();
        assert_eq!(inst.kept, [0, 1]);
        // W applied to the constant column is constant
        assert!(inst.matrix.column(0).iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn dataset_rejects_bad_weights() {
        let n = 3;
        let y = DVector::zeros(n);
        let x = DMatrix::zeros(n, 1);
        let z = DMatrix::zeros(n, 0);
        let u = DVector::zeros(n);
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.4, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0]);
        assert!(matches!(Dataset::new(y, x, z, u, w), Err(Error::InvalidData(_))));
    }
}
