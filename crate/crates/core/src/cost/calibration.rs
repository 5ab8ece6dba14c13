//! Embedded TTFT measurements and the speedup reports derived from them.
//!
//! The calibration file stores the measured table verbatim (`kind = meta`,
//! `f64[model][row][q, ttft_vlm, ttft_llm, latency]`). One row of the source
//! repeats its predecessor's rate label; the file keeps the published value and
//! carries a `presumed_q` annotation, which is what fitting and lookups use.

use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{fit_line, LinearFit};
use crate::error::{EvsError, Result};
use crate::io::container::{self, check_payload_len, Header, Kind, Magic};

static EMBEDDED: &[u8] = include_bytes!("../../data/ttft_calibration.tbin");

const COLUMNS: usize = 4;
const Q_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TtftColumn {
    /// Language-model prefill only.
    Llm,
    /// Whole pipeline including the vision encoder.
    Vlm,
}

impl std::str::FromStr for TtftColumn {
    type Err = EvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llm" => Ok(TtftColumn::Llm),
            "vlm" => Ok(TtftColumn::Vlm),
            other => Err(EvsError::invalid(format!("unknown TTFT column '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub label: String,
    /// Rate as printed in the source table.
    pub q_published: f64,
    /// Rate used for fitting and lookup (differs only for annotated rows).
    pub q: f64,
    pub ttft_vlm: f64,
    pub ttft_llm: f64,
    pub latency: f64,
}

impl LatencyRow {
    pub fn ttft(&self, column: TtftColumn) -> f64 {
        match column {
            TtftColumn::Llm => self.ttft_llm,
            TtftColumn::Vlm => self.ttft_vlm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyTable {
    pub model: String,
    pub rows: Vec<LatencyRow>,
}

impl LatencyTable {
    pub fn new(model: impl Into<String>, rows: Vec<LatencyRow>) -> Result<Self> {
        if rows.windows(2).any(|w| w[1].q < w[0].q) {
            return Err(EvsError::invalid(
                "latency rows must be sorted by pruning rate",
            ));
        }
        if rows
            .iter()
            .any(|r| !(r.ttft_vlm > 0.0 && r.ttft_llm > 0.0 && r.latency > 0.0))
        {
            return Err(EvsError::invalid("latency measurements must be positive"));
        }
        Ok(Self {
            model: model.into(),
            rows,
        })
    }

    pub fn row_at(&self, q: f64) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| (r.q - q).abs() <= Q_TOLERANCE)
    }

    /// Least-squares line of TTFT against kept fraction `1 - q`.
    pub fn fit(&self, column: TtftColumn) -> Result<LinearFit<f64>> {
        let xs: Vec<f64> = self.rows.iter().map(|r| 1.0 - r.q).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| r.ttft(column)).collect();
        fit_line(&xs, &ys)
    }

    /// Measured `TTFT(q = 0) / TTFT(q)`, when both rows exist.
    pub fn measured_speedup(&self, q: f64, column: TtftColumn) -> Option<f64> {
        let base = self.row_at(0.0)?;
        let row = self.row_at(q)?;
        Some(base.ttft(column) / row.ttft(column))
    }
}

/// Fit of one TTFT column against kept fraction.
pub fn fit_ttft_model(table: &LatencyTable, column: TtftColumn) -> Result<LinearFit<f64>> {
    table.fit(column)
}

fn predicted_speedup(fit: &LinearFit<f64>, q: f64) -> f64 {
    fit.predict(1.0) / fit.predict(1.0 - q)
}

/// Latency tables for every calibrated model.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub tables: Vec<LatencyTable>,
    pub meta: serde_json::Value,
}

impl Calibration {
    /// The measurements bundled with the crate.
    pub fn embedded() -> Self {
        Self::decode(EMBEDDED).expect("bundled calibration data is valid")
    }

    pub fn table(&self, model: &str) -> Result<&LatencyTable> {
        self.tables
            .iter()
            .find(|t| t.model.eq_ignore_ascii_case(model))
            .ok_or_else(|| {
                let known: Vec<&str> = self.tables.iter().map(|t| t.model.as_str()).collect();
                EvsError::invalid(format!(
                    "unknown model '{model}', calibrated: {}",
                    known.join(", ")
                ))
            })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::decode(Magic::Tensor, bytes)?;
        header.expect_kind(Kind::Meta)?;
        if header.dtype != "f64" {
            return Err(EvsError::UnsupportedFormat(format!(
                "calibration dtype '{}'",
                header.dtype
            )));
        }
        let dims = header.expect_rank(3)?;
        if dims[2] != COLUMNS {
            return Err(EvsError::corrupt(format!(
                "calibration rows need {COLUMNS} columns"
            )));
        }
        check_payload_len(payload, header.element_count()? * 8)?;
        let values = container::le_to_f64s(payload);
        let meta = &header.meta;
        let models: Vec<String> = meta
            .get("models")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .filter(|m: &Vec<String>| m.len() == dims[0])
            .ok_or_else(|| EvsError::corrupt("calibration meta must name every model"))?;
        let labels: Vec<String> = meta
            .get("row_labels")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .filter(|l: &Vec<String>| l.len() == dims[1])
            .ok_or_else(|| EvsError::corrupt("calibration meta must label every row"))?;
        let mut presumed = vec![None; dims[1]];
        for a in meta
            .get("annotations")
            .and_then(|v| v.as_array())
            .into_iter()
            .flatten()
        {
            let row = a.get("row").and_then(|v| v.as_u64()).map(|r| r as usize);
            let q = a.get("presumed_q").and_then(|v| v.as_f64());
            match (row, q) {
                (Some(r), Some(q)) if r < dims[1] => presumed[r] = Some(q),
                _ => return Err(EvsError::corrupt("malformed calibration annotation")),
            }
        }
        let tables = models
            .into_iter()
            .enumerate()
            .map(|(m, model)| {
                let rows = (0..dims[1])
                    .map(|r| {
                        let v = &values[(m * dims[1] + r) * COLUMNS..][..COLUMNS];
                        LatencyRow {
                            label: labels[r].clone(),
                            q_published: v[0],
                            q: presumed[r].unwrap_or(v[0]),
                            ttft_vlm: v[1],
                            ttft_llm: v[2],
                            latency: v[3],
                        }
                    })
                    .collect();
                LatencyTable::new(model, rows)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tables,
            meta: header.meta,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let rows = self.tables.first().map_or(0, |t| t.rows.len());
        if self.tables.iter().any(|t| t.rows.len() != rows) {
            return Err(EvsError::invalid(
                "all calibration tables need the same row count",
            ));
        }
        let mut meta = self.meta.clone();
        if !meta.is_object() {
            meta = json!({});
        }
        meta["models"] = json!(self.tables.iter().map(|t| &t.model).collect::<Vec<_>>());
        if let Some(t) = self.tables.first() {
            meta["row_labels"] = json!(t.rows.iter().map(|r| &r.label).collect::<Vec<_>>());
            let annotations: Vec<_> = t
                .rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.q != r.q_published)
                .map(|(i, r)| json!({"row": i, "presumed_q": r.q}))
                .collect();
            if !annotations.is_empty() && meta.get("annotations").is_none() {
                meta["annotations"] = json!(annotations);
            }
        }
        let mut payload = Vec::with_capacity(self.tables.len() * rows * COLUMNS * 8);
        for t in &self.tables {
            for r in &t.rows {
                for v in [r.q_published, r.ttft_vlm, r.ttft_llm, r.latency] {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = Header {
            kind: Kind::Meta,
            dtype: "f64".into(),
            shape: vec![self.tables.len() as u64, rows as u64, COLUMNS as u64],
            layout: "model,row,[q,ttft_vlm_s,ttft_llm_s,latency_s]".into(),
            meta,
        };
        container::encode(Magic::Tensor, &header, &payload)
    }
}

pub fn read_calibration(path: impl AsRef<Path>) -> Result<Calibration> {
    Calibration::decode(&container::read_file(path.as_ref())?)
}

pub fn write_calibration(cal: &Calibration, path: impl AsRef<Path>) -> Result<()> {
    container::write_atomic(path.as_ref(), &cal.encode()?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub q: f64,
    pub measured_llm: Option<f64>,
    pub predicted_llm: f64,
    pub measured_vlm: Option<f64>,
    pub predicted_vlm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupReport {
    pub model: String,
    pub fit_llm: LinearFit<f64>,
    pub fit_vlm: LinearFit<f64>,
    pub rows: Vec<SpeedupRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl SpeedupReport {
    /// Comma-separated series for plotting; missing measurements are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("model,q,measured_llm,predicted_llm,measured_vlm,predicted_vlm\n");
        for r in &self.rows {
            let cell = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{:.6}",
                self.model,
                r.q,
                cell(r.measured_llm),
                r.predicted_llm,
                cell(r.measured_vlm),
                r.predicted_vlm
            );
        }
        out
    }
}

impl fmt::Display for SpeedupReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, fit) in [("llm", &self.fit_llm), ("vlm", &self.fit_vlm)] {
            writeln!(
                f,
                "{} {name} fit: ttft = {:.5} + {:.5} * kept_fraction (r2 = {:.5})",
                self.model, fit.intercept, fit.slope, fit.r_squared
            )?;
        }
        writeln!(
            f,
            "q\tllm_measured\tllm_predicted\tvlm_measured\tvlm_predicted"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:.2}\t{}\t{:.4}\t{}\t{:.4}",
                r.q,
                opt(r.measured_llm),
                r.predicted_llm,
                opt(r.measured_vlm),
                r.predicted_vlm
            )?;
        }
        Ok(())
    }
}

/// Measured and fitted TTFT speedups for each rate in `q_list`.
pub fn speedup_report(cal: &Calibration, q_list: &[f64], model: &str) -> Result<SpeedupReport> {
    let table = cal.table(model)?;
    let fit_llm = table.fit(TtftColumn::Llm)?;
    let fit_vlm = table.fit(TtftColumn::Vlm)?;
    let rows = q_list
        .iter()
        .map(|&q| {
            crate::budget::validate_rate(q)?;
            Ok(SpeedupRow {
                q,
                measured_llm: table.measured_speedup(q, TtftColumn::Llm),
                predicted_llm: predicted_speedup(&fit_llm, q),
                measured_vlm: table.measured_speedup(q, TtftColumn::Vlm),
                predicted_vlm: predicted_speedup(&fit_vlm, q),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpeedupReport {
        model: table.model.clone(),
        fit_llm,
        fit_vlm,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_table_is_verbatim() {
        let cal = Calibration::embedded();
        assert_eq!(cal.tables.len(), 2);
        let t7 = cal.table("7B").unwrap();
        let t14 = cal.table("14b").unwrap();
        assert_eq!(t7.rows.len(), 20);
        assert_eq!(t7.rows[0].label, "No pruning");
        assert_eq!(t7.rows[0].ttft_llm, 0.1892);
        assert_eq!(t7.rows[15].ttft_llm, 0.0482);
        assert_eq!(t14.rows[16].ttft_vlm, 0.20612);
        assert_eq!(t14.rows[19].latency, 124.92);
        // duplicated label kept as published, annotated for use
        assert_eq!(t7.rows[7].label, "q=0.30");
        assert_eq!(t7.rows[7].q_published, 0.30);
        assert_eq!(t7.rows[7].q, 0.35);
        assert_eq!(t7.rows[6].q, 0.30);
    }

    #[test]
    fn measured_ratios() {
        let cal = Calibration::embedded();
        let t7 = cal.table("7B").unwrap();
        let s = t7.measured_speedup(0.75, TtftColumn::Llm).unwrap();
        assert!((s - 0.1892 / 0.0482).abs() < 1e-12);
        assert_eq!(t7.measured_speedup(0.0, TtftColumn::Vlm), Some(1.0));
        assert_eq!(t7.measured_speedup(0.33, TtftColumn::Vlm), None);
    }

    #[test]
    fn report_and_unknown_model() {
        let cal = Calibration::embedded();
        let r = speedup_report(&cal, &[0.0, 0.8], "14B").unwrap();
        assert_eq!(r.rows[0].measured_vlm, Some(1.0));
        assert!((r.rows[1].measured_vlm.unwrap() - 2.4514).abs() < 1e-3);
        assert!((r.rows[0].predicted_llm - 1.0).abs() < 1e-12);
        assert!(r.to_csv().lines().count() == 3);
        assert!(speedup_report(&cal, &[0.5], "70B").is_err());
    }

    #[test]
    fn encode_decode_roundtrip() {
        let cal = Calibration::embedded();
        let back = Calibration::decode(&cal.encode().unwrap()).unwrap();
        assert_eq!(back.tables, cal.tables);
        assert_eq!(cal.encode().unwrap(), EMBEDDED);
    }

    #[test]
    fn fit_needs_three_rows() {
        let row = |q: f64| LatencyRow {
            label: format!("q={q}"),
            q_published: q,
            q,
            ttft_vlm: 1.0,
            ttft_llm: 1.0 - q / 2.0,
            latency: 1.0,
        };
        let t = LatencyTable::new("x", vec![row(0.0), row(0.5)]).unwrap();
        assert!(matches!(
            t.fit(TtftColumn::Llm),
            Err(EvsError::InsufficientData(_))
        ));
        let t = LatencyTable::new("x", vec![row(0.0), row(0.25), row(0.5)]).unwrap();
        let fit = t.fit(TtftColumn::Llm).unwrap();
        assert_eq!(fit.r_squared, 1.0);
        assert_eq!(fit.slope, 0.5);
    }
}
