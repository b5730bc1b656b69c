//! Certificates and data export.
//!
//! Floats are written with 17 significant digits so outputs round-trip
//! exactly; identical inputs and seed give byte-identical output apart from
//! the `timing` block.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::checks::{SgcVerdict, Status};
use crate::cone::ConeVec;
use crate::dynamics::StabilityReport;
use crate::path::{DecayPath, PathReport};

pub const SCHEMA_VERSION: &str = "sglab-certificate/1";

/// `x` with 17 significant digits, `{:.16e}`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty JSON formatter that prints floats with 17 significant digits and
/// non-finite floats as `null`.
pub struct SigFormatter<'a>(PrettyFormatter<'a>);

impl Default for SigFormatter<'_> {
    fn default() -> Self {
        SigFormatter(PrettyFormatter::new())
    }
}

impl Formatter for SigFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            w.write_all(fmt_f64(value).as_bytes())
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigFormatter::default());
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn input_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEntry {
    pub label: String,
    pub method: String,
    pub knots: usize,
    pub report: Option<PathReport>,
    /// Construction failure, with the failing knot or window.
    pub error: Option<String>,
}

impl PathEntry {
    pub fn is_valid(&self) -> bool {
        self.error.is_none() && self.report.as_ref().is_some_and(|r| r.c0)
    }
}

/// One row of a truncation sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub edges: usize,
    pub verdicts: Vec<(String, Status)>,
    pub ugas_evidence: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub schema: &'static str,
    pub tool_version: &'static str,
    pub input_digest: String,
    pub seed: u64,
    pub command: String,
    pub verdicts: Vec<SgcVerdict>,
    pub stability: Option<StabilityReport>,
    pub paths: Vec<PathEntry>,
    pub summary_rows: Vec<SummaryRow>,
    pub notes: Vec<String>,
    pub timing: Timing,
}

impl Certificate {
    pub fn new(input: &[u8], seed: u64, command: impl Into<String>) -> Self {
        Certificate {
            schema: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            input_digest: input_digest(input),
            seed,
            command: command.into(),
            verdicts: Vec::new(),
            stability: None,
            paths: Vec::new(),
            summary_rows: Vec::new(),
            notes: Vec::new(),
            timing: Timing { elapsed_ms: 0.0 },
        }
    }

    /// Any `Fail` verdict or invalid path. The stability battery is reported but not judged.
    pub fn has_fail(&self) -> bool {
        self.verdicts.iter().any(SgcVerdict::is_fail)
            || self.paths.iter().any(|p| !p.is_valid())
            || self.summary_rows.iter().any(|r| r.verdicts.iter().any(|(_, s)| *s == Status::Fail))
    }

    pub fn to_json(&self) -> String {
        to_json_string(self).expect("certificate serializes")
    }
}

fn csv_row(out: &mut String, lead: &str, xs: &[f64]) {
    out.push_str(lead);
    for x in xs {
        out.push(',');
        out.push_str(&fmt_f64(*x));
    }
    out.push('\n');
}

/// `r,sigma_0,…` with one row per knot.
pub fn path_csv(path: &DecayPath) -> String {
    let mut out = String::from("r");
    for i in 0..path.dim() {
        out.push_str(&format!(",sigma_{i}"));
    }
    out.push('\n');
    for (r, s) in path.r_grid.iter().zip(&path.points) {
        csv_row(&mut out, &fmt_f64(*r), s.as_slice());
    }
    out
}

pub fn path_json(path: &DecayPath) -> String {
    to_json_string(path).expect("path serializes")
}

/// `step,x_0,…,norm` with one row per state.
pub fn trajectory_csv(states: &[ConeVec]) -> String {
    let dim = states.first().map_or(0, ConeVec::len);
    let mut out = String::from("step");
    for i in 0..dim {
        out.push_str(&format!(",x_{i}"));
    }
    out.push_str(",norm\n");
    for (k, s) in states.iter().enumerate() {
        let mut row = s.as_slice().to_vec();
        row.push(s.norm());
        csv_row(&mut out, &k.to_string(), &row);
    }
    out
}
