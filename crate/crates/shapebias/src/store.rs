//! Checkpoint files and CSV reports.

use std::fs;
use std::path::Path;

use shapebias_core::checkpoint::{self, Checkpoint, TrainingMetadata};
use shapebias_core::eval::{EvalReport, EvalRow};
use shapebias_core::model::Network;
use shapebias_core::train::TrainLog;

use crate::error::{format_err, io_err, Result};

pub fn save_checkpoint(path: &Path, net: &Network, meta: &TrainingMetadata) -> Result<()> {
    fs::write(path, checkpoint::encode(net, meta)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    checkpoint::decode(&bytes).map_err(|e| format_err(path, e.to_string()))
}

pub const TRAIN_LOG_HEADER: [&str; 5] = ["epoch", "loss", "train_acc", "val_acc", "seconds"];

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    let csv_err = |e: csv::Error| format_err(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(TRAIN_LOG_HEADER).map_err(csv_err)?;
    for r in &log.epochs {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_accuracy.to_string(),
            r.validation_accuracy.to_string(),
            format!("{:.3}", r.seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub const EVAL_HEADER: [&str; 6] = ["model", "transform", "param", "n", "acc", "acc_on_correct"];
/// Written where accuracy on correct images is undefined.
pub const UNDEFINED: &str = "NA";

pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let csv_err = |e: csv::Error| format_err(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(EVAL_HEADER).map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            r.model.clone(),
            r.transform.clone(),
            r.param.clone(),
            r.n.to_string(),
            r.accuracy.to_string(),
            r.accuracy_on_correct.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string()),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_eval_csv(path: &Path) -> Result<EvalReport> {
    let csv_err = |e: csv::Error| format_err(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(EVAL_HEADER) {
        return Err(format_err(path, format!("expected header {}, found {}", EVAL_HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |col: usize| -> Result<f64> {
            rec[col].parse().map_err(|_| format_err(path, format!("row {}: `{}` in column {} is not a number", i + 1, &rec[col], EVAL_HEADER[col])))
        };
        rows.push(EvalRow {
            model: rec[0].to_string(),
            transform: rec[1].to_string(),
            param: rec[2].to_string(),
            n: rec[3].parse().map_err(|_| format_err(path, format!("row {}: bad count `{}`", i + 1, &rec[3])))?,
            accuracy: num(4)?,
            accuracy_on_correct: if &rec[5] == UNDEFINED { None } else { Some(num(5)?) },
        });
    }
    Ok(EvalReport { rows })
}
