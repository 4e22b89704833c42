//! Observation panels, state-space parameters, priors and jump states.
//!
//! Times and assets are 0-based in memory. The panel CSV uses 1-based
//! `t` and `asset` columns.

use std::fmt;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, symmetrized};

/// Asynchronous noisy log-price observations on a unit time grid.
///
/// `obs[t]` lists `(asset, log_price)` pairs seen at time `t`, sorted by
/// asset. Structural checks (index ranges, finite prices) happen at
/// construction; modelling invariants are reported by [`validate_panel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel {
    n_assets: usize,
    obs: Vec<Vec<(usize, f64)>>,
}

impl ObservationPanel {
    pub fn new(n_assets: usize, mut obs: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if n_assets == 0 {
            return Err(Error::invalid("panel needs at least one asset"));
        }
        if obs.is_empty() {
            return Err(Error::invalid("panel needs at least one time"));
        }
        for (t, row) in obs.iter_mut().enumerate() {
            for &(i, y) in row.iter() {
                if i >= n_assets {
                    return Err(Error::invalid(format!("asset index {} out of range at t={}", i + 1, t + 1)));
                }
                if !y.is_finite() {
                    return Err(Error::invalid(format!("non-finite log price for asset {} at t={}", i + 1, t + 1)));
                }
            }
            row.sort_by_key(|&(i, _)| i);
        }
        Ok(Self { n_assets, obs })
    }

    /// Builds a panel from a dense `N × T` price matrix and a mask.
    pub fn from_dense(prices: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<Self> {
        if prices.shape() != mask.shape() {
            return Err(Error::Dimension("prices and mask must have the same shape".into()));
        }
        let obs = (0..prices.ncols())
            .map(|t| (0..prices.nrows()).filter(|&i| mask[(i, t)]).map(|i| (i, prices[(i, t)])).collect())
            .collect();
        Self::new(prices.nrows(), obs)
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn n_times(&self) -> usize {
        self.obs.len()
    }

    pub fn at(&self, t: usize) -> &[(usize, f64)] {
        &self.obs[t]
    }

    pub fn observed_indices(&self, t: usize) -> Vec<usize> {
        self.obs[t].iter().map(|&(i, _)| i).collect()
    }

    pub fn value(&self, t: usize, asset: usize) -> Option<f64> {
        self.obs[t].iter().find(|&&(i, _)| i == asset).map(|&(_, y)| y)
    }

    /// `N × T` observation mask.
    pub fn mask(&self) -> DMatrix<bool> {
        let mut m = DMatrix::from_element(self.n_assets, self.n_times(), false);
        for (t, row) in self.obs.iter().enumerate() {
            for &(i, _) in row {
                m[(i, t)] = true;
            }
        }
        m
    }

    /// `N × (T−1)` mask of the entries where a jump is allowed: column `c`
    /// is time `c + 1`, and a jump in asset `i` needs an observation of `i`.
    pub fn jump_mask(&self) -> DMatrix<bool> {
        let full = self.mask();
        DMatrix::from_fn(self.n_assets, self.n_times().saturating_sub(1), |i, c| full[(i, c + 1)])
    }

    /// Number of observations per asset (`M_i`).
    pub fn obs_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_assets];
        for row in &self.obs {
            for &(i, _) in row {
                counts[i] += 1;
            }
        }
        counts
    }

    pub fn total_observations(&self) -> usize {
        self.obs.iter().map(Vec::len).sum()
    }

    /// First observed price of each asset, if any.
    pub fn first_prices(&self) -> Vec<Option<f64>> {
        let mut first = vec![None; self.n_assets];
        for row in &self.obs {
            for &(i, y) in row {
                if first[i].is_none() {
                    first[i] = Some(y);
                }
            }
        }
        first
    }

    /// Reads the `t,asset,log_price` CSV format. Rows may come in any order;
    /// `N` and `T` are the largest asset and time indices present.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["t", "asset", "log_price"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Format { line: 1, msg: "header must be `t,asset,log_price`".into() });
        }
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            let parse_idx = |s: &str, name: &str| -> Result<usize> {
                let v: usize = s.parse().map_err(|_| Error::Format { line, msg: format!("bad {name} `{s}`") })?;
                if v == 0 {
                    return Err(Error::Format { line, msg: format!("{name} is 1-based") });
                }
                Ok(v - 1)
            };
            let t = parse_idx(&rec[0], "t")?;
            let i = parse_idx(&rec[1], "asset")?;
            let y: f64 =
                rec[2].parse().map_err(|_| Error::Format { line, msg: format!("bad log_price `{}`", &rec[2]) })?;
            rows.push((t, i, y));
        }
        if rows.is_empty() {
            return Err(Error::Format { line: 2, msg: "panel has no observations".into() });
        }
        let n_times = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
        let n_assets = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
        let mut obs = vec![Vec::new(); n_times];
        for (t, i, y) in rows {
            obs[t].push((i, y));
        }
        Self::new(n_assets, obs)
    }

    /// Writes the CSV format, sorted by time then asset.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t", "asset", "log_price"])?;
        for (t, row) in self.obs.iter().enumerate() {
            for &(i, y) in row {
                wtr.write_record([(t + 1).to_string(), (i + 1).to_string(), format!("{y:?}")])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A violated panel invariant; locations are reported 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewTimes { n_times: usize },
    DuplicateObservation { t: usize, asset: usize },
    EmptyTime { t: usize },
    AssetCoverage { asset: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewTimes { n_times } => write!(f, "too few times: T={n_times} < 2"),
            Violation::DuplicateObservation { t, asset } => {
                write!(f, "duplicate observation: asset {asset} at t={t}")
            }
            Violation::EmptyTime { t } => write!(f, "empty time: no observation at t={t}"),
            Violation::AssetCoverage { asset } => {
                write!(f, "asset coverage: asset {asset} never observed for t>1")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
            Err(Error::invalid(format!("panel invariants violated: {}", msgs.join("; "))))
        }
    }
}

/// Checks every panel invariant and lists all violations found.
pub fn validate_panel(panel: &ObservationPanel) -> ValidationReport {
    let mut violations = Vec::new();
    if panel.n_times() < 2 {
        violations.push(Violation::TooFewTimes { n_times: panel.n_times() });
    }
    let mut seen_later = vec![false; panel.n_assets()];
    for t in 0..panel.n_times() {
        let row = panel.at(t);
        if row.is_empty() {
            violations.push(Violation::EmptyTime { t: t + 1 });
        }
        for w in row.windows(2) {
            if w[0].0 == w[1].0 {
                violations.push(Violation::DuplicateObservation { t: t + 1, asset: w[0].0 + 1 });
            }
        }
        if t > 0 {
            for &(i, _) in row {
                seen_later[i] = true;
            }
        }
    }
    for (i, seen) in seen_later.iter().enumerate() {
        if !seen {
            violations.push(Violation::AssetCoverage { asset: i + 1 });
        }
    }
    ValidationReport { violations }
}

/// The state-space block shared by every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    pub drift: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub obs_var: DVector<f64>,
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
}

impl StateParams {
    pub fn n_assets(&self) -> usize {
        self.drift.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.drift.len();
        let square = |m: &DMatrix<f64>| m.nrows() == n && m.ncols() == n;
        if !square(&self.gamma) || !square(&self.init_cov) {
            return Err(Error::Dimension(format!("covariances must be {n}x{n}")));
        }
        if self.obs_var.len() != n || self.init_mean.len() != n {
            return Err(Error::Dimension(format!("vectors must have length {n}")));
        }
        check_spd(&self.gamma, "gamma")?;
        check_spd(&self.init_cov, "init_cov")?;
        if self.obs_var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("observation variances must be positive"));
        }
        Ok(())
    }
}

/// Symmetric to 1e-12 relative and strictly positive smallest eigenvalue.
pub fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    if (m - m.transpose()).iter().any(|v| v.abs() > 1e-12 * scale) {
        return Err(Error::not_pd(format!("{what} is not symmetric")));
    }
    if !(min_eigenvalue(m) > 0.0) {
        return Err(Error::not_pd(format!("{what} has a non-positive eigenvalue")));
    }
    Ok(())
}

/// Conjugate prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Prior mean of the drift (`D̄`).
    pub drift_mean: DVector<f64>,
    /// Prior variance of each drift component (`σ_D²`).
    pub drift_var: f64,
    /// Inverse-Wishart degrees of freedom (`η`).
    pub wishart_dof: f64,
    /// Inverse-Wishart scale matrix (`W_o`).
    pub wishart_scale: DMatrix<f64>,
    pub obs_shape: f64,
    pub obs_scale: f64,
    /// Beta prior on the no-jump probability `ζ`.
    pub spike_alpha: f64,
    pub spike_beta: f64,
    /// Inverse-gamma prior on slab variances.
    pub slab_shape: f64,
    pub slab_scale: f64,
    /// Gamma prior on Laplace rates (inverse-gamma on `λ⁻¹`).
    pub lambda_shape: f64,
    pub lambda_rate: f64,
}

pub const DEFAULT_DRIFT_VAR: f64 = 1e-6;

/// Per-step variance for a 2% daily volatility over 23 400 one-second steps.
pub const DAILY_VAR_PER_STEP: f64 = 0.02 * 0.02 / 23400.0;

pub fn default_hyperparameters(n_assets: usize) -> Hyperparameters {
    let n = n_assets as f64;
    let dof = n + 5.0;
    let slab_shape = 10.0;
    let obs_shape = 5.0;
    Hyperparameters {
        drift_mean: DVector::zeros(n_assets),
        drift_var: DEFAULT_DRIFT_VAR,
        wishart_dof: dof,
        wishart_scale: DMatrix::identity(n_assets, n_assets) * (DAILY_VAR_PER_STEP * (dof + n + 1.0)),
        obs_shape,
        obs_scale: (obs_shape + 1.0) * 0.0001 * 0.0001,
        spike_alpha: 10.0 * 0.995,
        spike_beta: 10.0 - 10.0 * 0.995,
        slab_shape,
        slab_scale: 0.01 * 0.01 * (slab_shape + 1.0),
        lambda_shape: 5.6,
        lambda_rate: 5e-4,
    }
}

impl Hyperparameters {
    pub fn n_assets(&self) -> usize {
        self.drift_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.drift_mean.len();
        if self.wishart_scale.shape() != (n, n) {
            return Err(Error::Dimension(format!("wishart_scale must be {n}x{n}")));
        }
        if !(self.wishart_dof > n as f64 - 1.0) {
            return Err(Error::invalid(format!("wishart_dof must exceed N-1 = {}", n as f64 - 1.0)));
        }
        check_spd(&self.wishart_scale, "wishart_scale")?;
        let positives = [
            ("drift_var", self.drift_var),
            ("obs_shape", self.obs_shape),
            ("obs_scale", self.obs_scale),
            ("spike_alpha", self.spike_alpha),
            ("spike_beta", self.spike_beta),
            ("slab_shape", self.slab_shape),
            ("slab_scale", self.slab_scale),
            ("lambda_shape", self.lambda_shape),
            ("lambda_rate", self.lambda_rate),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// Mean diagonal entry of `W_o`.
    pub fn wishart_scale_level(&self) -> f64 {
        self.wishart_scale.diagonal().mean()
    }

    /// Prior mode of the observation noise variance.
    pub fn obs_var_mode(&self) -> f64 {
        self.obs_scale / (self.obs_shape + 1.0)
    }

    pub fn slab_var_mode(&self) -> f64 {
        self.slab_scale / (self.slab_shape + 1.0)
    }

    pub fn spike_mean(&self) -> f64 {
        self.spike_alpha / (self.spike_alpha + self.spike_beta)
    }
}

/// `W_o` given either as a multiple of the identity or as a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

/// JSON form of [`Hyperparameters`]; omitted keys take the defaults for `N`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparameterConfig {
    pub drift_mean: Option<Vec<f64>>,
    pub drift_var: Option<f64>,
    pub wishart_dof: Option<f64>,
    pub wishart_scale: Option<ScaleSpec>,
    pub obs_shape: Option<f64>,
    pub obs_scale: Option<f64>,
    pub spike_alpha: Option<f64>,
    pub spike_beta: Option<f64>,
    pub slab_shape: Option<f64>,
    pub slab_scale: Option<f64>,
    pub lambda_shape: Option<f64>,
    pub lambda_rate: Option<f64>,
}

impl HyperparameterConfig {
    pub fn resolve(&self, n_assets: usize) -> Result<Hyperparameters> {
        let mut h = default_hyperparameters(n_assets);
        if let Some(d) = &self.drift_mean {
            if d.len() != n_assets {
                return Err(Error::Dimension(format!("drift_mean must have length {n_assets}")));
            }
            h.drift_mean = DVector::from_column_slice(d);
        }
        if let Some(dof) = self.wishart_dof {
            h.wishart_dof = dof;
            // the default scale tracks η
            h.wishart_scale =
                DMatrix::identity(n_assets, n_assets) * (DAILY_VAR_PER_STEP * (dof + n_assets as f64 + 1.0));
        }
        match &self.wishart_scale {
            Some(ScaleSpec::Scalar(s)) => h.wishart_scale = DMatrix::identity(n_assets, n_assets) * *s,
            Some(ScaleSpec::Matrix(rows)) => {
                if rows.len() != n_assets || rows.iter().any(|r| r.len() != n_assets) {
                    return Err(Error::Dimension(format!("wishart_scale must be {n_assets}x{n_assets}")));
                }
                h.wishart_scale = symmetrized(DMatrix::from_fn(n_assets, n_assets, |i, j| rows[i][j]));
            }
            None => {}
        }
        let set = |dst: &mut f64, src: Option<f64>| {
            if let Some(v) = src {
                *dst = v;
            }
        };
        set(&mut h.drift_var, self.drift_var);
        set(&mut h.obs_shape, self.obs_shape);
        set(&mut h.obs_scale, self.obs_scale);
        set(&mut h.spike_alpha, self.spike_alpha);
        set(&mut h.spike_beta, self.spike_beta);
        set(&mut h.slab_shape, self.slab_shape);
        set(&mut h.slab_scale, self.slab_scale);
        set(&mut h.lambda_shape, self.lambda_shape);
        set(&mut h.lambda_rate, self.lambda_rate);
        h.validate()?;
        Ok(h)
    }
}

/// Laplace-prior jump block. Column `c` of each matrix is time `c + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceJumpState {
    pub jumps: DMatrix<f64>,
    /// `λ`, with `+∞` where no observation pins the jump to zero.
    pub rates: DMatrix<f64>,
}

impl LaplaceJumpState {
    /// All-zero jumps with rates at their `J = 0` conditional mode.
    pub fn initial(jump_mask: &DMatrix<bool>, hyper: &Hyperparameters) -> Self {
        let (n, m) = jump_mask.shape();
        let jumps = DMatrix::zeros(n, m);
        let rates = crate::kecm::laplace::update_lambda(&jumps, jump_mask, hyper);
        Self { jumps, rates }
    }
}

/// Spike-and-slab jump block; `jumps = indicator ∘ slab` at all times.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSlabJumpState {
    pub indicator: DMatrix<bool>,
    pub slab: DMatrix<f64>,
    pub jumps: DMatrix<f64>,
    pub spike_prob: f64,
    pub slab_var: DMatrix<f64>,
}

impl SpikeSlabJumpState {
    pub fn initial(jump_mask: &DMatrix<bool>, hyper: &Hyperparameters) -> Self {
        let (n, m) = jump_mask.shape();
        Self {
            indicator: DMatrix::from_element(n, m, false),
            slab: DMatrix::zeros(n, m),
            jumps: DMatrix::zeros(n, m),
            spike_prob: hyper.spike_mean(),
            slab_var: DMatrix::from_element(n, m, hyper.slab_var_mode()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel(n: usize, rows: Vec<Vec<(usize, f64)>>) -> ObservationPanel {
        ObservationPanel::new(n, rows).unwrap()
    }

    #[test]
    fn fully_observed_panel_is_valid() {
        let p = panel(2, vec![vec![(0, 0.0), (1, 0.1)], vec![(0, 0.1), (1, 0.2)], vec![(0, 0.0), (1, 0.3)]]);
        assert!(validate_panel(&p).is_ok());
    }

    #[test]
    fn missing_asset_coverage_is_reported() {
        let p = panel(2, vec![vec![(0, 0.0), (1, 0.1)], vec![(0, 0.1)], vec![(0, 0.0)]]);
        let report = validate_panel(&p);
        assert_eq!(report.violations, vec![Violation::AssetCoverage { asset: 2 }]);
        assert!(report.violations[0].to_string().starts_with("asset coverage"));
    }

    #[test]
    fn duplicate_observation_is_reported() {
        let p = panel(2, vec![vec![(0, 0.0), (1, 0.1)], vec![(1, 0.1), (1, 0.2), (0, 0.3)]]);
        let report = validate_panel(&p);
        assert_eq!(report.violations, vec![Violation::DuplicateObservation { t: 2, asset: 2 }]);
        assert!(report.violations[0].to_string().starts_with("duplicate observation"));
    }

    #[test]
    fn empty_time_and_short_panels_are_reported() {
        let p = panel(1, vec![vec![(0, 0.0)], vec![], vec![(0, 1.0)]]);
        assert_eq!(validate_panel(&p).violations, vec![Violation::EmptyTime { t: 2 }]);
        let p = panel(1, vec![vec![(0, 0.0)]]);
        let v = validate_panel(&p).violations;
        assert!(v.contains(&Violation::TooFewTimes { n_times: 1 }));
    }

    #[test]
    fn out_of_range_asset_is_rejected() {
        assert!(ObservationPanel::new(2, vec![vec![(2, 0.0)]]).is_err());
    }

    #[test]
    fn default_hyperparameters_match_table() {
        let h = default_hyperparameters(20);
        assert_eq!(h.wishart_dof, 25.0);
        let scale = 0.02f64.powi(2) * 46.0 / 23400.0;
        assert!((h.wishart_scale[(0, 0)] - scale).abs() < 1e-20);
        assert_eq!(h.wishart_scale[(0, 1)], 0.0);
        assert!((h.obs_scale / (h.obs_shape + 1.0) - 1e-8).abs() < 1e-22);
        assert!((h.slab_scale / (h.slab_shape + 1.0) - 1e-4).abs() < 1e-18);
        assert!((h.spike_alpha - 9.95).abs() < 1e-12);
        assert!((h.spike_beta - 0.05).abs() < 1e-12);
        assert_eq!(h.lambda_shape, 5.6);
        assert_eq!(h.lambda_rate, 5e-4);
        assert!((h.spike_mean() - 0.995).abs() < 1e-12);
    }

    #[test]
    fn default_hyperparameters_are_valid_for_many_sizes() {
        for n in [1usize, 2, 3, 10, 57, 200] {
            default_hyperparameters(n).validate().unwrap();
        }
    }

    #[test]
    fn default_hyperparameters_are_valid_at_the_largest_size() {
        default_hyperparameters(1000).validate().unwrap();
    }

    #[test]
    fn config_overrides_and_defaults() {
        let cfg: HyperparameterConfig = serde_json::from_str(r#"{"drift_var": 1e-4, "wishart_scale": 2e-7}"#).unwrap();
        let h = cfg.resolve(3).unwrap();
        assert_eq!(h.drift_var, 1e-4);
        assert_eq!(h.wishart_scale[(2, 2)], 2e-7);
        assert_eq!(h.wishart_dof, 8.0);
        let bad: std::result::Result<HyperparameterConfig, _> = serde_json::from_str(r#"{"eta": 1}"#);
        assert!(bad.is_err());
        let cfg = HyperparameterConfig { wishart_dof: Some(1.0), ..Default::default() };
        assert!(cfg.resolve(3).is_err());
    }

    #[test]
    fn csv_rejects_bad_header_and_zero_index() {
        assert!(ObservationPanel::read_csv("a,b,c\n1,1,0.0\n".as_bytes()).is_err());
        assert!(ObservationPanel::read_csv("t,asset,log_price\n0,1,0.0\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_rows_in_any_order() {
        let text = "t,asset,log_price\n2,1,0.5\n1,2,0.25\n1,1,0.0\n2,2,-1e-3\n";
        let p = ObservationPanel::read_csv(text.as_bytes()).unwrap();
        assert_eq!(p.n_assets(), 2);
        assert_eq!(p.n_times(), 2);
        assert_eq!(p.value(0, 1), Some(0.25));
        assert_eq!(p.value(1, 1), Some(-1e-3));
    }

    fn arb_panel() -> impl Strategy<Value = ObservationPanel> {
        (1usize..5, 1usize..8).prop_flat_map(|(n, t)| {
            proptest::collection::vec(proptest::collection::vec((any::<bool>(), -1e3f64..1e3), n), t)
                .prop_map(move |rows| {
                    let obs = rows
                        .into_iter()
                        .map(|r| {
                            r.into_iter()
                                .enumerate()
                                .filter(|(_, (keep, _))| *keep)
                                .map(|(i, (_, y))| (i, y))
                                .collect::<Vec<_>>()
                        })
                        .collect::<Vec<_>>();
                    (n, obs)
                })
                .prop_filter_map("last time and last asset present", |(n, mut obs)| {
                    // N and T are inferred from the CSV, so the extremes must occur
                    let last = obs.len() - 1;
                    if obs[last].is_empty() {
                        obs[last].push((0, 0.0));
                    }
                    if !obs.iter().flatten().any(|&(i, _)| i == n - 1) {
                        return None;
                    }
                    ObservationPanel::new(n, obs).ok()
                })
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_identity(p in arb_panel()) {
            let mut buf = Vec::new();
            p.write_csv(&mut buf).unwrap();
            let q = ObservationPanel::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(p, q);
        }

        #[test]
        fn default_hyperparameters_always_valid(n in 1usize..=300) {
            prop_assert!(default_hyperparameters(n).validate().is_ok());
        }
    }
}
