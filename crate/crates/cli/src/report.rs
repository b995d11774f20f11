use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::args::Format;

/// A report row: a CSV record plus its JSON object.
pub trait Row {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
    fn to_json(&self) -> Value;
}

fn float(v: f64) -> String {
    format!("{v}")
}

fn opt_float(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), float)
}

fn opt_json(v: Option<f64>) -> Value {
    v.map_or_else(|| json!("n/a"), |x| json!(x))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Prediction {
    Class(usize),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictRow {
    pub input_index: usize,
    pub prediction: Prediction,
    pub score: f64,
    pub score_kind: &'static str,
    pub quantifier: &'static str,
}

impl Row for PredictRow {
    const HEADER: &'static [&'static str] = &["input_index", "prediction", "score", "score_kind", "quantifier"];

    fn fields(&self) -> Vec<String> {
        let prediction = match &self.prediction {
            Prediction::Class(c) => c.to_string(),
            Prediction::Values(v) => v.iter().map(|x| float(*x)).collect::<Vec<_>>().join(";"),
        };
        vec![
            self.input_index.to_string(),
            prediction,
            float(self.score),
            self.score_kind.to_string(),
            self.quantifier.to_string(),
        ]
    }

    fn to_json(&self) -> Value {
        json!({
            "input_index": self.input_index,
            "prediction": self.prediction,
            "score": self.score,
            "score_kind": self.score_kind,
            "quantifier": self.quantifier,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub model_id: usize,
    pub final_loss: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Row for TrainRow {
    const HEADER: &'static [&'static str] = &["model_id", "final_loss", "accuracy"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.model_id.to_string(),
            opt_float(self.final_loss),
            opt_float(self.accuracy),
        ]
    }

    fn to_json(&self) -> Value {
        json!({
            "model_id": self.model_id,
            "final_loss": opt_json(self.final_loss),
            "accuracy": opt_json(self.accuracy),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateRow {
    pub quantifier: &'static str,
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub num_inputs: usize,
    pub num_wrong: usize,
}

impl Row for EvaluateRow {
    const HEADER: &'static [&'static str] = &["quantifier", "accuracy", "auroc", "num_inputs", "num_wrong"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.quantifier.to_string(),
            float(self.accuracy),
            opt_float(self.auroc),
            self.num_inputs.to_string(),
            self.num_wrong.to_string(),
        ]
    }

    fn to_json(&self) -> Value {
        json!({
            "quantifier": self.quantifier,
            "accuracy": self.accuracy,
            "auroc": opt_json(self.auroc),
            "num_inputs": self.num_inputs,
            "num_wrong": self.num_wrong,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub num_processes: usize,
    pub context: String,
    pub wall_clock_seconds: f64,
    /// Relative to the sequential baseline, in percent.
    pub reduction_percent: f64,
    pub peak_concurrent_models: usize,
    /// `<device>=<peak workers>` pairs joined by `;`.
    pub per_slot_occupancy: String,
}

impl Row for BenchRow {
    const HEADER: &'static [&'static str] = &[
        "num_processes",
        "context",
        "wall_clock_seconds",
        "reduction_percent",
        "peak_concurrent_models",
        "per_slot_occupancy",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.num_processes.to_string(),
            self.context.clone(),
            format!("{:.3}", self.wall_clock_seconds),
            format!("{:.1}", self.reduction_percent),
            self.peak_concurrent_models.to_string(),
            self.per_slot_occupancy.clone(),
        ]
    }

    fn to_json(&self) -> Value {
        json!({
            "num_processes": self.num_processes,
            "context": self.context,
            "wall_clock_seconds": self.wall_clock_seconds,
            "reduction_percent": self.reduction_percent,
            "peak_concurrent_models": self.peak_concurrent_models,
            "per_slot_occupancy": self.per_slot_occupancy,
        })
    }
}

pub fn render<R: Row>(rows: &[R], format: Format, out: &mut dyn Write) -> io::Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(R::HEADER)?;
            for row in rows {
                w.write_record(row.fields())?;
            }
            w.flush()
        }
        Format::Json => {
            let array = Value::Array(rows.iter().map(Row::to_json).collect());
            serde_json::to_writer_pretty(&mut *out, &array)?;
            writeln!(out)
        }
    }
}

pub fn write<R: Row>(rows: &[R], format: Format, output: Option<&Path>) -> io::Result<()> {
    match output {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            render(rows, format, &mut f)?;
            f.flush()
        }
        None => render(rows, format, &mut io::stdout().lock()),
    }
}
