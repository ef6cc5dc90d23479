//! Panel CSV files, run configuration and result serialization.
//!
//! Panels are written with 17 significant digits so that a write/read
//! round trip reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::{EmConfig, EmResult};
use crate::error::{Error, Result};
use crate::simulate::{SimConfig, SimTruth};
use crate::types::{FactorSpace, ModelParams, Panel};

/// Header labels that mark a leading date column.
const DATE_LABELS: [&str; 5] = ["", "date", "time", "period", "t"];

/// A panel together with its column names and optional row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelFile {
    pub panel: Panel<f64>,
    pub headers: Vec<String>,
    pub dates: Option<Vec<String>>,
}

fn parse_cell(cell: &str, line: usize, col: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        col,
        msg: format!("not a number: {cell:?}"),
    })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        kind => Error::Parse {
            line,
            col: 0,
            msg: format!("{kind:?}"),
        },
    }
}

/// Reads a panel: one header row of series names, then one row per period.
/// A leading date column is recognized by a date-like first header or a
/// non-numeric first cell in the first data row. Lines and columns in
/// errors are 1-based positions in the file.
pub fn read_panel_csv(path: impl AsRef<Path>) -> Result<PanelFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_error)?;
    let header: Vec<String> = reader.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec.map_err(csv_error)?);
    }
    let first_label = header.first().map(|h| h.to_ascii_lowercase()).unwrap_or_default();
    let has_dates = DATE_LABELS.contains(&first_label.as_str())
        || records
            .first()
            .and_then(|r| r.get(0))
            .is_some_and(|c| c.parse::<f64>().is_err());
    let skip = usize::from(has_dates);
    let n = header.len().saturating_sub(skip);
    let t = records.len();
    let mut data = DMatrix::zeros(t, n);
    let mut dates = Vec::new();
    for (row, rec) in records.iter().enumerate() {
        let line = rec.position().map_or(row + 2, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                col: rec.len().min(header.len()) + 1,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        if has_dates {
            dates.push(rec[0].to_owned());
        }
        for col in 0..n {
            data[(row, col)] = parse_cell(&rec[col + skip], line, col + skip + 1)?;
        }
    }
    let panel = Panel::new(data)?;
    Ok(PanelFile {
        panel,
        headers: header[skip..].to_vec(),
        dates: has_dates.then_some(dates),
    })
}

pub fn load_panel_csv(path: impl AsRef<Path>) -> Result<Panel<f64>> {
    Ok(read_panel_csv(path)?.panel)
}

pub fn default_headers(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_matrix_csv(path: &Path, headers: &[String], labels: Option<(&str, &[String])>, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut head: Vec<&str> = Vec::with_capacity(headers.len() + 1);
    if let Some((name, _)) = labels {
        head.push(name);
    }
    head.extend(headers.iter().map(String::as_str));
    w.write_record(&head).map_err(csv_error)?;
    for t in 0..m.nrows() {
        let mut row = Vec::with_capacity(m.ncols() + 1);
        if let Some((_, l)) = labels {
            row.push(l[t].clone());
        }
        row.extend(m.row(t).iter().map(|&v| format_value(v)));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_csv(path: impl AsRef<Path>, panel: &Panel<f64>, headers: Option<&[String]>, dates: Option<&[String]>) -> Result<()> {
    let default = default_headers(panel.n_len());
    let headers = headers.unwrap_or(&default);
    if headers.len() != panel.n_len() {
        return Err(Error::DimensionMismatch {
            what: "header count",
            expected: panel.n_len(),
            actual: headers.len(),
        });
    }
    if let Some(d) = dates {
        if d.len() != panel.t_len() {
            return Err(Error::DimensionMismatch {
                what: "date count",
                expected: panel.t_len(),
                actual: d.len(),
            });
        }
    }
    write_matrix_csv(path.as_ref(), headers, dates.map(|d| ("date", d)), panel.data())
}

/// Factor count: fixed, or chosen by the eigenvalue-ratio rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KSpec {
    Auto,
    Fixed(usize),
}

impl Serialize for KSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KSpec::Auto => s.serialize_str("auto"),
            KSpec::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for KSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(k) => Ok(KSpec::Fixed(k)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for KSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(KSpec::Auto);
        }
        s.parse::<usize>()
            .map(KSpec::Fixed)
            .map_err(|_| format!("expected a factor count or \"auto\", got {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Estimate,
    Montecarlo,
    Verify,
}

/// Everything a CLI run needs. Read from TOML; command-line flags override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    /// Master seed; falls back to `sim.seed`, then 0.
    pub seed: Option<u64>,
    pub sim: Option<SimConfig>,
    pub em: EmConfig,
    pub input_path: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
    /// Factor count for `estimate`; `montecarlo` always uses `2r`.
    pub k: KSpec,
    pub k_max: usize,
    pub demean: bool,
    pub replications: usize,
    /// Run replications on the thread pool.
    pub parallel: bool,
    /// Random instances checked by `verify`.
    pub verify_instances: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: None,
            sim: None,
            em: EmConfig::default(),
            input_path: None,
            output_path: None,
            k: KSpec::Auto,
            k_max: 8,
            demean: false,
            replications: 20,
            parallel: true,
            verify_instances: 200,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.or(self.sim.as_ref().map(|s| s.seed)).unwrap_or(0)
    }

    /// Checks the fields the given mode depends on.
    pub fn validate_for(&self, mode: Mode) -> Result<()> {
        self.em.validate()?;
        match mode {
            Mode::Simulate | Mode::Montecarlo => {
                let sim = self
                    .sim
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("a [sim] section is required".into()))?;
                sim.validate()?;
                if mode == Mode::Montecarlo && self.replications == 0 {
                    return Err(Error::InvalidConfig("replications must be positive".into()));
                }
            }
            Mode::Estimate => {
                if self.input_path.is_none() {
                    return Err(Error::InvalidConfig("input_path is required for estimate".into()));
                }
                if self.k == KSpec::Fixed(0) || (self.k == KSpec::Auto && self.k_max == 0) {
                    return Err(Error::InvalidConfig("factor count must be positive".into()));
                }
            }
            Mode::Verify => {
                if self.verify_instances == 0 {
                    return Err(Error::InvalidConfig("verify_instances must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(Error::DimensionMismatch {
            what,
            expected: c,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Serializable form of [`ModelParams`]; matrices are stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub b1: Vec<Vec<f64>>,
    pub b2: Vec<Vec<f64>>,
    pub sigma_e1: Vec<f64>,
    pub sigma_e2: Vec<f64>,
    pub trans: [[f64; 2]; 2],
}

impl ParamsRecord {
    pub fn from_params(p: &ModelParams<f64>) -> Self {
        Self {
            b1: rows_of(&p.b1),
            b2: rows_of(&p.b2),
            sigma_e1: p.sigma_e1.iter().copied().collect(),
            sigma_e2: p.sigma_e2.iter().copied().collect(),
            trans: p.trans.as_array(),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams<f64>> {
        Ok(ModelParams {
            b1: matrix_from_rows(&self.b1, "b1 row length")?,
            b2: matrix_from_rows(&self.b2, "b2 row length")?,
            sigma_e1: self.sigma_e1.clone().into(),
            sigma_e2: self.sigma_e2.clone().into(),
            trans: crate::types::TransitionMatrix::new(self.trans)?,
        })
    }
}

/// Output of `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub k_selected_automatically: bool,
    pub demeaned: bool,
    pub eigenvalues: Vec<f64>,
    pub params: ParamsRecord,
    /// Time averages of the smoothed probabilities.
    pub unconditional: [f64; 2],
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub expected_loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub xi0: [f64; 2],
    pub smoothed: Vec<[f64; 2]>,
}

impl EstimateReport {
    pub fn new(fs: &FactorSpace<f64>, result: &EmResult<f64>, demeaned: bool, auto_k: bool) -> Self {
        Self {
            n: result.params.n_len(),
            t: result.path.t_len(),
            k: fs.k(),
            k_selected_automatically: auto_k,
            demeaned,
            eigenvalues: fs.eigvals.iter().copied().collect(),
            params: ParamsRecord::from_params(&result.params),
            unconditional: result.path.mean_smoothed(),
            loglik: result.path.loglik,
            loglik_trace: result.loglik_trace.clone(),
            expected_loglik_trace: result.q_trace.clone(),
            iterations: result.iterations,
            converged: result.converged,
            xi0: result.path.initial.values(),
            smoothed: result.path.smoothed.clone(),
        }
    }
}

pub fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<S: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<S> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        col: e.column(),
        msg: e.to_string(),
    })
}

/// Plot-ready series: smoothed probabilities, factors and factors times
/// each regime's probability.
pub fn write_series_csv(path: impl AsRef<Path>, g_hat: &DMatrix<f64>, smoothed: &[[f64; 2]], dates: Option<&[String]>) -> Result<()> {
    let (t_len, k) = g_hat.shape();
    if smoothed.len() != t_len {
        return Err(Error::DimensionMismatch {
            what: "probability rows vs factor rows",
            expected: t_len,
            actual: smoothed.len(),
        });
    }
    let mut headers = vec!["xi1".to_owned(), "xi2".to_owned()];
    headers.extend((1..=k).map(|j| format!("g{j}")));
    for regime in 1..=2 {
        headers.extend((1..=k).map(|j| format!("xi{regime}_g{j}")));
    }
    let m = DMatrix::from_fn(t_len, 2 + 3 * k, |t, c| match c {
        0 | 1 => smoothed[t][c],
        c if c < 2 + k => g_hat[(t, c - 2)],
        c => {
            let regime = (c - 2 - k) / k;
            smoothed[t][regime] * g_hat[(t, (c - 2 - k) % k)]
        }
    });
    let periods: Vec<String>;
    let labels = match dates {
        Some(d) => ("date", d),
        None => {
            periods = (1..=t_len).map(|t| t.to_string()).collect();
            ("t", periods.as_slice())
        }
    };
    write_matrix_csv(path.as_ref(), &headers, Some(labels), &m)
}

/// Simulated truth written alongside a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub config: SimConfig,
    /// Regimes numbered 1 and 2.
    pub states: Vec<u8>,
    pub factors: Vec<Vec<f64>>,
    pub lambda1: Vec<Vec<f64>>,
    pub lambda2: Vec<Vec<f64>>,
    pub noise_to_signal: f64,
}

impl TruthRecord {
    pub fn new(config: &SimConfig, truth: &SimTruth<f64>) -> Self {
        Self {
            config: config.clone(),
            states: truth.states.iter().map(|&s| s as u8 + 1).collect(),
            factors: rows_of(&truth.f),
            lambda1: rows_of(&truth.lambda1),
            lambda2: rows_of(&truth.lambda2),
            noise_to_signal: truth.noise_to_signal(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngHandle;
    use crate::simulate::simulate_panel;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn reads_plain_and_dated_panels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "a,b\n1,2\n3,4.5\n");
        let f = read_panel_csv(&p).unwrap();
        assert_eq!((f.panel.t_len(), f.panel.n_len()), (2, 2));
        assert_eq!(f.headers, vec!["a", "b"]);
        assert!(f.dates.is_none());
        assert_eq!(f.panel.data()[(1, 1)], 4.5);

        let p = write(&dir, "b.csv", "date,a,b\n2001-01,1,2\n2001-02,3,4\n2001-03,5,6\n");
        let f = read_panel_csv(&p).unwrap();
        assert_eq!((f.panel.t_len(), f.panel.n_len()), (3, 2));
        assert_eq!(f.dates.unwrap()[2], "2001-03");

        let p = write(&dir, "c.csv", "month,a,b\n200101,1,2\nJan,3,4\n");
        assert!(matches!(read_panel_csv(&p), Err(Error::Parse { line: 3, col: 1, .. })));
    }

    #[test]
    fn reports_bad_cell_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bad.csv", "a,b\n1,2\n3,4\n5,abc\n");
        assert!(matches!(read_panel_csv(&p), Err(Error::Parse { line: 4, col: 2, .. })));
        let p = write(&dir, "nan.csv", "a,b\n1,2\n3,NaN\n");
        assert!(matches!(read_panel_csv(&p), Err(Error::NonFinite { row: 1, col: 1 })));
        let p = write(&dir, "short.csv", "a,b\n1,2\n");
        assert!(matches!(read_panel_csv(&p), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn panel_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let truth = simulate_panel::<f64>(&SimConfig::baseline(7, 40, 1), RngHandle::new(3, 0)).unwrap();
        let p = dir.path().join("panel.csv");
        write_panel_csv(&p, &truth.panel, None, None).unwrap();
        let back = load_panel_csv(&p).unwrap();
        assert_eq!(back, truth.panel);

        let dates: Vec<String> = (0..40).map(|t| format!("p{t}")).collect();
        write_panel_csv(&p, &truth.panel, None, Some(&dates)).unwrap();
        let back = read_panel_csv(&p).unwrap();
        assert_eq!(back.panel, truth.panel);
        assert_eq!(back.dates.unwrap(), dates);
    }

    #[test]
    fn config_round_trip_and_overrides() {
        let text = r#"
mode = "montecarlo"
seed = 7
k = "auto"
replications = 5

[sim]
n = 50
t = 200
r = 1
p11 = 0.9
p22 = 0.7

[em]
max_iter = 50
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.mode, Some(Mode::Montecarlo));
        assert_eq!(cfg.em.max_iter, 50);
        assert_eq!(cfg.em.epsilon, 1e-6);
        assert_eq!(cfg.sim.as_ref().unwrap().noise_to_signal, 0.5);
        cfg.validate_for(Mode::Montecarlo).unwrap();
        assert!(cfg.validate_for(Mode::Estimate).is_err());
        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);

        let fixed = RunConfig::from_toml_str("k = 3").unwrap();
        assert_eq!(fixed.k, KSpec::Fixed(3));
        assert!(RunConfig::from_toml_str("unknown = 1").is_err());
    }

    #[test]
    fn params_record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams {
            b1: DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-17, 7.0]),
            b2: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            sigma_e1: vec![0.5, std::f64::consts::PI].into(),
            sigma_e2: vec![1e-300, 2.0].into(),
            trans: crate::types::TransitionMatrix::from_diagonal(0.9, 0.7).unwrap(),
        };
        let p = dir.path().join("params.json");
        write_json(&p, &ParamsRecord::from_params(&params)).unwrap();
        let back: ParamsRecord = read_json(&p).unwrap();
        assert_eq!(back.to_params().unwrap(), params);
    }

    #[test]
    fn series_layout() {
        let dir = tempfile::tempdir().unwrap();
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = dir.path().join("s.csv");
        write_series_csv(&p, &g, &[[0.25, 0.75], [1.0, 0.0]], None).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,xi1,xi2,g1,g2,xi1_g1,xi1_g2,xi2_g1,xi2_g2");
        let row: Vec<f64> = lines.next().unwrap().split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(row, vec![0.25, 0.75, 1.0, 2.0, 0.25, 0.5, 0.75, 1.5]);
    }
}
