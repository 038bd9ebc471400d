//! Scenario sets: loading, synthetic generation, per-asset summary statistics.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk;
use crate::simplex;

/// Scenario matrix of gross returns (row = scenario) with scenario probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    returns: Vec<f64>,
    n_assets: usize,
    probabilities: Vec<f64>,
    asset_labels: Vec<String>,
    source_id: String,
}

impl ScenarioSet {
    /// Build from a row-major `S x n` matrix.
    ///
    /// Entries must be finite. Probabilities must be nonnegative and sum to one
    /// within 1e-9. Strict positivity of gross returns is enforced by the
    /// `CsvReturns` loader, not here, so synthetic draws with heavy dispersion
    /// remain representable.
    pub fn new(
        returns: Vec<f64>,
        n_assets: usize,
        probabilities: Vec<f64>,
        asset_labels: Vec<String>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let source_id = source_id.into();
        if n_assets == 0 {
            return Err(Error::shape("scenario set needs at least one asset"));
        }
        if returns.is_empty() {
            return Err(Error::EmptyDataset(source_id));
        }
        if returns.len() % n_assets != 0 {
            return Err(Error::shape(format!(
                "{} entries do not form rows of width {n_assets}",
                returns.len()
            )));
        }
        let s = returns.len() / n_assets;
        if probabilities.len() != s {
            return Err(Error::shape(format!(
                "{} probabilities for {s} scenarios",
                probabilities.len()
            )));
        }
        if asset_labels.len() != n_assets {
            return Err(Error::shape(format!(
                "{} labels for {n_assets} assets",
                asset_labels.len()
            )));
        }
        if let Some(pos) = returns.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data {
                row: pos / n_assets,
                column: pos % n_assets,
                message: "non-finite return".into(),
            });
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("probabilities must be finite and nonnegative"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            returns,
            n_assets,
            probabilities,
            asset_labels,
            source_id,
        })
    }

    /// Build from rows; `None` probabilities means uniform. Labels default to
    /// `asset_1..asset_n`.
    pub fn from_rows(
        rows: &[Vec<f64>],
        probabilities: Option<Vec<f64>>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let n = rows.first().map(Vec::len).unwrap_or(0);
        if let Some((j, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::shape(format!("row {j} has a different width")));
        }
        let s = rows.len();
        let probabilities = probabilities.unwrap_or_else(|| vec![1.0 / s as f64; s]);
        Self::new(
            rows.concat(),
            n,
            probabilities,
            default_labels(n),
            source_id,
        )
    }

    pub fn n_scenarios(&self) -> usize {
        self.probabilities.len()
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.returns[j * self.n_assets..(j + 1) * self.n_assets]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.returns.chunks_exact(self.n_assets)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows().map(|r| r[i]).collect()
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn asset_labels(&self) -> &[String] {
        &self.asset_labels
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Probability-weighted mean return of each asset.
    pub fn mean_returns(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.n_assets];
        for (row, p) in self.rows().zip(&self.probabilities) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += p * x;
            }
        }
        mean
    }

    /// `X w` without validating `w`.
    pub(crate) fn returns_unchecked(&self, weights: &[f64]) -> Vec<f64> {
        self.rows().map(|r| simplex::dot(r, weights)).collect()
    }
}

fn default_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("asset_{i}")).collect()
}

/// Scenario return `w' x_j` for every scenario.
pub fn portfolio_returns(scenarios: &ScenarioSet, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != scenarios.n_assets() {
        return Err(Error::shape(format!(
            "weights have length {}, scenario set has {} assets",
            weights.len(),
            scenarios.n_assets()
        )));
    }
    if !simplex::is_on_simplex(weights, 1e-9) {
        return Err(Error::invalid("weights are not on the simplex"));
    }
    Ok(scenarios.returns_unchecked(weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Header of asset labels, then one row of strictly positive gross returns
    /// per scenario.
    CsvReturns,
    /// Same layout; any finite value accepted.
    CsvSigned,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv_returns" => Ok(Self::CsvReturns),
            "csv_signed" => Ok(Self::CsvSigned),
            other => Err(Error::invalid(format!("unknown data format {other}"))),
        }
    }
}

/// Read a scenario file. Probabilities are uniform and the source id is the
/// file stem. Row numbers in errors are 1-based file lines.
pub fn load_scenarios(path: &Path, format: DataFormat) -> Result<ScenarioSet> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let labels: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let n = labels.len();
    if n == 0 || labels.iter().all(String::is_empty) {
        return Err(Error::EmptyDataset(stem));
    }

    let mut values = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Parse {
            row: line,
            message: e.to_string(),
        })?;
        if record.len() != n {
            return Err(Error::Parse {
                row: line,
                message: format!("expected {n} fields, found {}", record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: line,
                message: format!("field {} is not a number: {field:?}", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row: line,
                    column: col + 1,
                    message: "non-finite return".into(),
                });
            }
            if format == DataFormat::CsvReturns && v <= 0.0 {
                return Err(Error::Data {
                    row: line,
                    column: col + 1,
                    message: format!("gross return {v} is not strictly positive"),
                });
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyDataset(stem));
    }
    let s = values.len() / n;
    ScenarioSet::new(values, n, vec![1.0 / s as f64; s], labels, stem)
}

/// Write a scenario set in the loader's layout. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_scenarios<W: Write>(scenarios: &ScenarioSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io {
        path: "<scenario output>".into(),
        source: std::io::Error::other(e.to_string()),
    };
    w.write_record(scenarios.asset_labels()).map_err(csv_err)?;
    for row in scenarios.rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<scenario output>".into(),
        source: e,
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub mean: Vec<f64>,
    /// Row-major `n x n` covariance.
    pub covariance: Vec<Vec<f64>>,
    pub scenario_count: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Three correlated assets used for the small illustrative instance.
    pub fn toy(seed: u64) -> Self {
        Self {
            mean: vec![1.05, 1.03, 1.055],
            covariance: vec![
                vec![1.0, 0.7, 0.3],
                vec![0.7, 1.0, 0.4],
                vec![0.3, 0.4, 1.0],
            ],
            scenario_count: 2000,
            seed,
        }
    }

    fn factor(&self) -> Result<DMatrix<f64>> {
        let n = self.mean.len();
        if n == 0 {
            return Err(Error::shape("synthetic mean is empty"));
        }
        if self.scenario_count == 0 {
            return Err(Error::invalid("scenario_count must be positive"));
        }
        if self.covariance.len() != n || self.covariance.iter().any(|r| r.len() != n) {
            return Err(Error::shape(format!("covariance must be {n}x{n}")));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| self.covariance[i][j]);
        if cov.iter().any(|x| !x.is_finite()) || self.mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("synthetic parameters must be finite"));
        }
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
            if min < -1e-10 {
                return Err(Error::invalid(format!(
                    "covariance is not positive semidefinite (eigenvalue {min:.3e})"
                )));
            }
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
    }
}

/// Multivariate normal scenarios with uniform probabilities, fully determined
/// by `spec` including its seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<ScenarioSet> {
    let factor = spec.factor()?;
    let n = spec.mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(n * spec.scenario_count);
    let mut z = vec![0.0; n];
    for _ in 0..spec.scenario_count {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            let shock: f64 = (0..n).map(|k| factor[(i, k)] * z[k]).sum();
            values.push(spec.mean[i] + shock);
        }
    }
    let s = spec.scenario_count;
    ScenarioSet::new(
        values,
        n,
        vec![1.0 / s as f64; s],
        default_labels(n),
        format!("synthetic_{}", spec.seed),
    )
}

/// A moment that is undefined for a constant series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Moment {
    Value(f64),
    Undefined,
}

impl Moment {
    pub fn value(self) -> Option<f64> {
        match self {
            Moment::Value(v) => Some(v),
            Moment::Undefined => None,
        }
    }
}

impl fmt::Display for Moment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Moment::Value(v) => write!(f, "{v}"),
            Moment::Undefined => f.write_str(UNDEFINED),
        }
    }
}

pub const UNDEFINED: &str = "undefined";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetStats {
    pub asset: String,
    pub mu: f64,
    pub sigma: f64,
    pub var: f64,
    pub cvar: f64,
    pub skew: Moment,
    /// Pearson (non-excess) kurtosis; 3 for a normal distribution.
    pub kurt: Moment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantileRow {
    Min,
    Q25,
    Q50,
    Q75,
    Max,
}

impl QuantileRow {
    pub const ALL: [QuantileRow; 5] = [Self::Min, Self::Q25, Self::Q50, Self::Q75, Self::Max];

    pub fn prob(self) -> f64 {
        match self {
            Self::Min => 0.0,
            Self::Q25 => 0.25,
            Self::Q50 => 0.5,
            Self::Q75 => 0.75,
            Self::Max => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Min => "Min",
            Self::Q25 => "Q25",
            Self::Q50 => "Q50",
            Self::Q75 => "Q75",
            Self::Max => "Max",
        }
    }
}

/// Cross-asset quantile row: one entry per statistic, in the order
/// mu, sigma, var, cvar, skew, kurt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileStats {
    pub row: QuantileRow,
    pub values: [Moment; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub alpha: f64,
    pub assets: Vec<AssetStats>,
    pub quantiles: Vec<QuantileStats>,
}

impl SummaryStats {
    pub fn quantile(&self, row: QuantileRow) -> &QuantileStats {
        self.quantiles
            .iter()
            .find(|q| q.row == row)
            .expect("all quantile rows are present")
    }
}

/// Linear interpolation between order statistics at `h = (N - 1) q`.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summary_stats(scenarios: &ScenarioSet, alpha: f64) -> Result<SummaryStats> {
    risk::check_level(alpha)?;
    if scenarios.n_scenarios() < 2 {
        return Err(Error::invalid("summary statistics need at least two scenarios"));
    }
    let n = scenarios.n_assets();
    let p = scenarios.probabilities();
    let mut assets = Vec::with_capacity(n);
    for i in 0..n {
        let col = scenarios.column(i);
        let mu: f64 = col.iter().zip(p).map(|(x, pj)| pj * x).sum();
        let central = |k: i32| -> f64 { col.iter().zip(p).map(|(x, pj)| pj * (x - mu).powi(k)).sum() };
        let sigma = central(2).sqrt();
        let (skew, kurt) = if sigma > 1e-14 * mu.abs().max(1.0) {
            (
                Moment::Value(central(3) / sigma.powi(3)),
                Moment::Value(central(4) / sigma.powi(4)),
            )
        } else {
            (Moment::Undefined, Moment::Undefined)
        };
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        assets.push(AssetStats {
            asset: scenarios.asset_labels()[i].clone(),
            mu,
            sigma,
            var: risk::discrete_var(scenarios, &e, alpha)?,
            cvar: risk::discrete_cvar(scenarios, &e, alpha)?,
            skew,
            kurt,
        });
    }

    let columns: [Vec<Option<f64>>; 6] = [
        assets.iter().map(|a| Some(a.mu)).collect(),
        assets.iter().map(|a| Some(a.sigma)).collect(),
        assets.iter().map(|a| Some(a.var)).collect(),
        assets.iter().map(|a| Some(a.cvar)).collect(),
        assets.iter().map(|a| a.skew.value()).collect(),
        assets.iter().map(|a| a.kurt.value()).collect(),
    ];
    let sorted: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let mut v: Vec<f64> = c.iter().flatten().copied().collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let quantiles = QuantileRow::ALL
        .iter()
        .map(|&row| QuantileStats {
            row,
            values: std::array::from_fn(|c| {
                if sorted[c].is_empty() {
                    Moment::Undefined
                } else {
                    Moment::Value(quantile_linear(&sorted[c], row.prob()))
                }
            }),
        })
        .collect();
    Ok(SummaryStats {
        alpha,
        assets,
        quantiles,
    })
}

const STATS_HEADER: [&str; 8] = ["kind", "name", "mu", "sigma", "var", "cvar", "skew", "kurt"];

/// Per-asset rows (`kind = asset`) followed by the cross-asset quantile block
/// (`kind = quantile`, `name` in Min/Q25/Q50/Q75/Max).
pub fn write_summary_csv<W: Write>(stats: &SummaryStats, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Io {
        path: "<summary output>".into(),
        source: std::io::Error::other(e.to_string()),
    };
    w.write_record(STATS_HEADER).map_err(wrap)?;
    for a in &stats.assets {
        w.write_record([
            "asset".to_string(),
            a.asset.clone(),
            format!("{:?}", a.mu),
            format!("{:?}", a.sigma),
            format!("{:?}", a.var),
            format!("{:?}", a.cvar),
            moment_field(a.skew),
            moment_field(a.kurt),
        ])
        .map_err(wrap)?;
    }
    for q in &stats.quantiles {
        let mut rec = vec!["quantile".to_string(), q.row.label().to_string()];
        rec.extend(q.values.iter().map(|m| moment_field(*m)));
        w.write_record(rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<summary output>".into(),
        source: e,
    })?;
    Ok(())
}

fn moment_field(m: Moment) -> String {
    match m {
        Moment::Value(v) => format!("{v:?}"),
        Moment::Undefined => UNDEFINED.to_string(),
    }
}

fn parse_moment(field: &str, row: usize) -> Result<Moment> {
    if field == UNDEFINED {
        return Ok(Moment::Undefined);
    }
    field.parse().map(Moment::Value).map_err(|_| Error::Parse {
        row,
        message: format!("bad number {field:?}"),
    })
}

/// Parse the output of [`write_summary_csv`].
pub fn read_summary_csv<R: std::io::Read>(input: R, alpha: f64) -> Result<SummaryStats> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let mut assets = Vec::new();
    let mut quantiles = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row: line,
            message: e.to_string(),
        })?;
        if rec.len() != STATS_HEADER.len() {
            return Err(Error::Parse {
                row: line,
                message: "wrong field count".into(),
            });
        }
        let m: Vec<Moment> = (2..8)
            .map(|c| parse_moment(&rec[c], line))
            .collect::<Result<_>>()?;
        let num = |i: usize| {
            m[i].value().ok_or(Error::Parse {
                row: line,
                message: "expected a number".into(),
            })
        };
        match &rec[0] {
            "asset" => assets.push(AssetStats {
                asset: rec[1].to_string(),
                mu: num(0)?,
                sigma: num(1)?,
                var: num(2)?,
                cvar: num(3)?,
                skew: m[4],
                kurt: m[5],
            }),
            "quantile" => {
                let row = QuantileRow::ALL
                    .into_iter()
                    .find(|r| r.label() == &rec[1])
                    .ok_or(Error::Parse {
                        row: line,
                        message: format!("unknown quantile row {}", &rec[1]),
                    })?;
                quantiles.push(QuantileStats {
                    row,
                    values: [m[0], m[1], m[2], m[3], m[4], m[5]],
                });
            }
            other => {
                return Err(Error::Parse {
                    row: line,
                    message: format!("unknown row kind {other}"),
                })
            }
        }
    }
    Ok(SummaryStats {
        alpha,
        assets,
        quantiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_small_file_uniform() {
        let f = write_tmp("A,B\n1.01,0.99\n1.00,1.02\n");
        let set = load_scenarios(f.path(), DataFormat::CsvReturns).unwrap();
        assert_eq!(set.n_scenarios(), 2);
        assert_eq!(set.n_assets(), 2);
        assert_eq!(set.probabilities(), &[0.5, 0.5]);
        assert_eq!(set.row(1), &[1.00, 1.02]);
        assert_eq!(set.asset_labels(), &["A".to_string(), "B".to_string()]);
        let stem = f.path().file_stem().unwrap().to_string_lossy();
        assert_eq!(set.source_id(), stem);
    }

    #[test]
    fn header_only_is_empty() {
        let f = write_tmp("A,B,C\n");
        assert!(matches!(
            load_scenarios(f.path(), DataFormat::CsvReturns),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn ragged_row_reports_line() {
        let f = write_tmp("A,B\n1.0,1.0\n1.0\n");
        match load_scenarios(f.path(), DataFormat::CsvReturns) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nonpositive_and_nonfinite_rejected() {
        let f = write_tmp("A,B\n1.0,0.0\n");
        assert!(matches!(
            load_scenarios(f.path(), DataFormat::CsvReturns),
            Err(Error::Data { row: 2, column: 2, .. })
        ));
        let f = write_tmp("A,B\n1.0,NaN\n");
        assert!(matches!(
            load_scenarios(f.path(), DataFormat::CsvReturns),
            Err(Error::Data { .. })
        ));
        let f = write_tmp("A,B\n1.0,-0.5\n");
        assert!(load_scenarios(f.path(), DataFormat::CsvSigned).is_ok());
        let f = write_tmp("A,B\n1.0,inf\n");
        assert!(load_scenarios(f.path(), DataFormat::CsvSigned).is_err());
    }

    #[test]
    fn missing_file_is_io() {
        assert!(matches!(
            load_scenarios(Path::new("/nonexistent/x.csv"), DataFormat::CsvReturns),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn stats_constant_asset_undefined_moments() {
        let set = ScenarioSet::from_rows(&[vec![1.0], vec![1.0], vec![1.0]], None, "c").unwrap();
        let s = summary_stats(&set, 0.05).unwrap();
        assert_eq!(s.assets[0].mu, 1.0);
        assert_eq!(s.assets[0].sigma, 0.0);
        assert_eq!(s.assets[0].skew, Moment::Undefined);
        assert_eq!(s.assets[0].kurt, Moment::Undefined);
        assert_eq!(s.quantile(QuantileRow::Q50).values[4], Moment::Undefined);
    }

    #[test]
    fn stats_two_scenarios() {
        let set = ScenarioSet::from_rows(&[vec![0.9], vec![1.1]], None, "two").unwrap();
        let s = summary_stats(&set, 0.05).unwrap();
        let a = &s.assets[0];
        assert!((a.var - 0.9).abs() < 1e-15);
        assert!((a.cvar - 0.9).abs() < 1e-15);
        assert!((a.mu - 1.0).abs() < 1e-15);
        assert!((a.sigma - 0.1).abs() < 1e-12);
        assert_eq!(a.skew.value().map(|v| v.abs() < 1e-9), Some(true));
        assert!((a.kurt.value().unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stats_normal_kurtosis_near_three() {
        let spec = SyntheticSpec {
            mean: vec![1.0],
            covariance: vec![vec![0.0004]],
            scenario_count: 200_000,
            seed: 9,
        };
        let set = generate_synthetic(&spec).unwrap();
        let s = summary_stats(&set, 0.05).unwrap();
        assert!((s.assets[0].kurt.value().unwrap() - 3.0).abs() < 0.05);
        assert!(s.assets[0].skew.value().unwrap().abs() < 0.03);
    }

    #[test]
    fn quantile_rows_monotone_and_cvar_below_var() {
        let spec = SyntheticSpec {
            mean: vec![1.002, 1.001, 1.003, 1.0, 1.004],
            covariance: (0..5)
                .map(|i| (0..5).map(|j| if i == j { 0.001 } else { 0.0002 }).collect())
                .collect(),
            scenario_count: 500,
            seed: 1,
        };
        let set = generate_synthetic(&spec).unwrap();
        for alpha in [0.01, 0.05, 0.1] {
            let s = summary_stats(&set, alpha).unwrap();
            for a in &s.assets {
                assert!(a.cvar <= a.var);
                assert!(a.sigma >= 0.0);
            }
            for c in 0..6 {
                let col: Vec<f64> = s
                    .quantiles
                    .iter()
                    .map(|q| q.values[c].value().unwrap())
                    .collect();
                assert!(col.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn quantile_linear_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_linear(&v, 0.0), 1.0);
        assert_eq!(quantile_linear(&v, 1.0), 4.0);
        assert!((quantile_linear(&v, 0.25) - 1.75).abs() < 1e-15);
        assert!((quantile_linear(&v, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn summary_csv_round_trip() {
        let spec = SyntheticSpec {
            mean: vec![1.01, 1.0],
            covariance: vec![vec![0.001, 0.0], vec![0.0, 0.002]],
            scenario_count: 50,
            seed: 2,
        };
        let mut set = generate_synthetic(&spec).unwrap();
        // Make the second asset constant to exercise the undefined marker.
        let rows: Vec<Vec<f64>> = set.rows().map(|r| vec![r[0], 1.0]).collect();
        set = ScenarioSet::from_rows(&rows, None, "mix").unwrap();
        let s = summary_stats(&set, 0.05).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&s, &mut buf).unwrap();
        let back = read_summary_csv(&buf[..], 0.05).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn synthetic_zero_covariance_rows_equal_mean() {
        let spec = SyntheticSpec {
            mean: vec![1.05, 1.03, 1.055],
            covariance: vec![vec![0.0; 3]; 3],
            scenario_count: 10,
            seed: 4,
        };
        let set = generate_synthetic(&spec).unwrap();
        for r in set.rows() {
            assert_eq!(r, &[1.05, 1.03, 1.055]);
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_toy_shape() {
        let a = generate_synthetic(&SyntheticSpec::toy(42)).unwrap();
        let b = generate_synthetic(&SyntheticSpec::toy(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_scenarios(), 2000);
        assert_eq!(a.n_assets(), 3);
        let c = generate_synthetic(&SyntheticSpec::toy(43)).unwrap();
        assert_ne!(a, c);
        let total: f64 = a.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_rejects_bad_covariance() {
        let mut spec = SyntheticSpec::toy(1);
        spec.covariance[0][1] = 0.95;
        spec.covariance[1][0] = 0.95;
        spec.covariance[0][2] = -0.9;
        spec.covariance[2][0] = -0.9;
        assert!(matches!(generate_synthetic(&spec), Err(Error::Invalid(_))));
        let mut spec = SyntheticSpec::toy(1);
        spec.covariance[0][1] = 0.5;
        assert!(matches!(generate_synthetic(&spec), Err(Error::Invalid(_))));
    }

    #[test]
    fn scenario_file_round_trip() {
        let set = generate_synthetic(&SyntheticSpec::toy(7)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synthetic_7.csv");
        write_scenarios(&set, std::fs::File::create(&path).unwrap()).unwrap();
        let back = load_scenarios(&path, DataFormat::CsvSigned).unwrap();
        assert_eq!(back.returns(), set.returns());
        assert_eq!(back.source_id(), "synthetic_7");
    }

    #[test]
    fn portfolio_returns_cases() {
        let set = ScenarioSet::from_rows(&[vec![1.1, 0.9], vec![0.9, 1.1]], None, "m").unwrap();
        let r = portfolio_returns(&set, &[0.5, 0.5]).unwrap();
        assert!(r.iter().all(|x| (x - 1.0).abs() < 1e-15));
        let single = ScenarioSet::from_rows(&[vec![1.2], vec![0.8]], None, "s").unwrap();
        assert_eq!(portfolio_returns(&single, &[1.0]).unwrap(), vec![1.2, 0.8]);
        assert!(matches!(
            portfolio_returns(&set, &[1.0]),
            Err(Error::Shape(_))
        ));
        assert!(portfolio_returns(&set, &[0.7, 0.7]).is_err());
    }
}
