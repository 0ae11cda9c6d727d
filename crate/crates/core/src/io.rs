//! File formats: model specs (JSON), datasets (text), reports (JSON) and
//! tables (CSV).
//!
//! Every float written by this module carries 17 significant digits
//! (`{:.16e}`), which round-trips an `f64` exactly.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::configspace::Configuration;
use crate::error::{Error, Result};
use crate::fitting::TrialRecord;
use crate::models::{Dataset, Energy, EnergyModel, ModelKind, ParameterVector};
use crate::simulation::{Figure2Row, THETA_LEN};

/// On-disk model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dimension: usize,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
}

impl ModelSpec {
    pub fn new(model: &EnergyModel, theta: &[f64]) -> Self {
        Self {
            kind: model.kind(),
            dimension: model.dim(),
            theta: theta.to_vec(),
            filters: match *model {
                EnergyModel::BinaryRbm { filters, .. } => Some(filters),
                _ => None,
            },
        }
    }

    /// Builds the model and checks the parameter vector against it.
    pub fn build(&self) -> Result<(EnergyModel, ParameterVector)> {
        let model = match self.kind {
            ModelKind::ThirdOrderBm => {
                if self.dimension != 3 {
                    return Err(Error::Parse(format!(
                        "third_order_bm has dimension 3, spec says {}",
                        self.dimension
                    )));
                }
                EnergyModel::third_order_bm()
            }
            ModelKind::BinaryMrf => EnergyModel::binary_mrf(self.dimension)?,
            ModelKind::BinaryRbm => {
                let k = self
                    .filters
                    .ok_or_else(|| Error::Parse("binary_rbm spec needs \"filters\"".into()))?;
                EnergyModel::binary_rbm(self.dimension, k)?
            }
        };
        if self.filters.is_some() && self.kind != ModelKind::BinaryRbm {
            return Err(Error::Parse("\"filters\" only applies to binary_rbm".into()));
        }
        if self.theta.len() != model.param_count() {
            return Err(Error::ParameterLength {
                expected: model.param_count(),
                got: self.theta.len(),
            });
        }
        let theta = ParameterVector::new(self.theta.clone())?;
        Ok((model, theta))
    }
}

pub fn parse_model_spec(text: &str) -> Result<ModelSpec> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("model spec: {e}")))
}

pub fn read_model_spec(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_model_spec(&text)
}

/// Parses the text dataset format. When `dim` is given every line must
/// have that many tokens; otherwise the first line fixes it.
pub fn parse_dataset<R: BufRead>(reader: R, dim: Option<usize>) -> Result<Dataset> {
    let mut dim = dim;
    let mut cases = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bits = trimmed
            .split_whitespace()
            .map(|tok| match tok {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Parse(format!(
                    "line {}: expected 0 or 1, found '{other}'",
                    lineno + 1
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        let expected = *dim.get_or_insert(bits.len());
        if bits.len() != expected {
            return Err(Error::Parse(format!(
                "line {}: expected {expected} values, found {}",
                lineno + 1,
                bits.len()
            )));
        }
        cases.push(Configuration::from_bits(&bits)?);
    }
    match dim {
        Some(d) => Dataset::new(d, cases),
        None => Err(Error::EmptyDataset),
    }
}

pub fn read_dataset(path: &Path, dim: Option<usize>) -> Result<Dataset> {
    let file = File::open(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_dataset(BufReader::new(file), dim)
}

pub fn write_dataset<W: Write>(mut w: W, data: &Dataset) -> Result<()> {
    for x in data.cases() {
        let line: Vec<&str> = x.bits().iter().map(|b| if *b == 1 { "1" } else { "0" }).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// JSON formatter writing floats with 17 significant digits.
#[derive(Clone, Debug, Default)]
pub struct FullPrecision(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{}", fmt_f64(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// `{:.16e}`: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(mut w: W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut w, FullPrecision::default());
    value.serialize(&mut ser)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    write_json(&mut buf, value)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Column names of the Figure 2 table.
pub fn figure2_header() -> Vec<String> {
    let mut h = vec!["trial".to_string()];
    h.extend((0..THETA_LEN).map(|i| format!("theta_{i}")));
    h.extend(
        [
            "logdet_ml",
            "logdet_pl",
            "logdet_rm",
            "delta_pl_ml",
            "delta_rm_ml",
            "delta_rm_pl",
            "log_l",
            "log_h",
            "bound_width",
        ]
        .map(String::from),
    );
    h
}

pub fn write_figure2_csv<W: Write>(w: W, rows: &[Figure2Row]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(figure2_header())?;
    for r in rows {
        let mut rec = vec![r.trial.to_string()];
        rec.extend(r.theta.iter().map(|v| fmt_f64(*v)));
        rec.extend(
            [
                r.logdet_ml,
                r.logdet_pl,
                r.logdet_rm,
                r.delta_pl_ml,
                r.delta_rm_ml,
                r.delta_rm_pl,
                r.log_l,
                r.log_h,
                r.bound_width,
            ]
            .iter()
            .map(|v| fmt_f64(*v)),
        );
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-trial Monte Carlo table: `trial, converged, theta_0..`. Trials that
/// ended in an error have empty parameter cells.
pub fn write_trials_csv<W: Write>(w: W, trials: &[TrialRecord], param_count: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["trial".to_string(), "converged".to_string()];
    header.extend((0..param_count).map(|i| format!("theta_{i}")));
    out.write_record(&header)?;
    for t in trials {
        let mut rec = vec![t.trial.to_string(), t.converged.to_string()];
        match &t.theta_hat {
            Some(th) => rec.extend(th.iter().map(|v| fmt_f64(*v))),
            None => rec.extend(std::iter::repeat_n(String::new(), param_count)),
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Opens `path` for writing, or stdout when `path` is `None` or `-`.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) if p != Path::new("-") => Ok(Box::new(BufWriter::new(File::create(p)?))),
        _ => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}
