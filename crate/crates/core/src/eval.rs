//! Robust accuracy under the fixed PGD protocol, "accuracy on correctly
//! classified images" over transformed test sets, and report merging.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackConfig};
use crate::augment::{self, AugmentationSpec};
use crate::error::{config_err, Error, Result};
use crate::exec::Executor;
use crate::image::LabeledDataset;
use crate::model::Network;
use crate::tensor::Tensor;
use crate::train::{correct_mask, EVAL_BATCH};

/// Fraction of images that are classified correctly both clean and after the
/// attack. Counting the clean point keeps the result at or below clean
/// accuracy whatever the attack does.
pub fn robustness<E: Executor>(
    net: &Network,
    test: &LabeledDataset,
    adversary: &AttackConfig,
    aug: &AugmentationSpec,
    exec: &E,
) -> Result<f64> {
    let mask = robust_mask(net, test, adversary, aug, exec)?;
    Ok(mask.iter().filter(|&&c| c).count() as f64 / mask.len() as f64)
}

/// Per-image robust correctness (see [`robustness`]).
pub fn robust_mask<E: Executor>(
    net: &Network,
    test: &LabeledDataset,
    adversary: &AttackConfig,
    aug: &AugmentationSpec,
    exec: &E,
) -> Result<Vec<bool>> {
    if test.is_empty() {
        return Err(config_err("robustness needs a nonempty test set"));
    }
    if aug.per_image_standardize {
        return Err(config_err("attacks operate in [0, 1] pixel space; standardized-input models are not supported"));
    }
    adversary.validate()?;
    let n = test.len();
    let units = n.div_ceil(EVAL_BATCH);
    let chunks: Vec<Result<Vec<bool>>> = exec.map(units, |u| {
        let range = u * EVAL_BATCH..((u + 1) * EVAL_BATCH).min(n);
        let inputs: Vec<Tensor> =
            test.images()[range.clone()].iter().map(|img| augment::augment_eval(img, aug)).collect::<Result<_>>()?;
        let x = Tensor::stack(&inputs)?;
        let labels = &test.labels()[range.clone()];
        let clean = net.predict(&x)?;
        let adv = attack::pgd_traced(net, &x, labels, adversary, range.start as u64, |_| {})?;
        let attacked = net.predict(&adv)?;
        Ok(labels.iter().zip(clean.iter().zip(&attacked)).map(|(y, (c, a))| c == y && a == y).collect())
    });
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Accuracy on the transformed images whose clean counterpart was classified
/// correctly. `None` when no clean image was classified correctly.
pub fn accuracy_on_correct_from_outcomes(clean_correct: &[bool], transformed_correct: &[bool]) -> Result<Option<f64>> {
    if clean_correct.len() != transformed_correct.len() {
        return Err(Error::Alignment { clean: clean_correct.len(), transformed: transformed_correct.len() });
    }
    let mut selected = 0usize;
    let mut kept = 0usize;
    for (&c, &t) in clean_correct.iter().zip(transformed_correct) {
        if c {
            selected += 1;
            kept += usize::from(t);
        }
    }
    Ok((selected > 0).then(|| kept as f64 / selected as f64))
}

pub fn accuracy_on_correct<E: Executor>(
    net: &Network,
    clean: &LabeledDataset,
    transformed: &LabeledDataset,
    aug: &AugmentationSpec,
    exec: &E,
) -> Result<Option<f64>> {
    if clean.len() != transformed.len() {
        return Err(Error::Alignment { clean: clean.len(), transformed: transformed.len() });
    }
    if clean.labels() != transformed.labels() {
        return Err(config_err("clean and transformed sets carry different labels; they are not index aligned"));
    }
    let c = correct_mask(net, clean, aug, exec)?;
    let t = correct_mask(net, transformed, aug, exec)?;
    accuracy_on_correct_from_outcomes(&c, &t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub transform: String,
    pub param: String,
    pub n: usize,
    pub accuracy: f64,
    /// `None` encodes "undefined": no clean image was classified correctly.
    pub accuracy_on_correct: Option<f64>,
}

impl EvalRow {
    fn key(&self) -> (&str, &str, &str) {
        (&self.model, &self.transform, &self.param)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn compare_param(a: &str, b: &str) -> Ordering {
    match (parse_param(a), parse_param(b)) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    }
}

fn parse_param(s: &str) -> Option<f64> {
    if s == "inf" {
        return Some(f64::INFINITY);
    }
    s.parse::<f64>().ok()
}

/// Merges reports into one table sorted by (model, transform, param), with
/// numeric params ordered numerically. Any repeated key is an error.
pub fn bias_summary(reports: &[EvalReport]) -> Result<EvalReport> {
    let mut rows: Vec<EvalRow> = reports.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    rows.sort_by(|a, b| {
        a.model.cmp(&b.model).then_with(|| a.transform.cmp(&b.transform)).then_with(|| compare_param(&a.param, &b.param))
    });
    for pair in rows.windows(2) {
        if pair[0].key() == pair[1].key() {
            let (m, t, p) = pair[0].key();
            let what = if pair[0] == pair[1] { "duplicate" } else { "conflicting" };
            return Err(Error::Merge(format!("{what} rows for model {m}, transform {t}, param {p}")));
        }
    }
    Ok(EvalReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(model: &str, t: &str, p: &str, acc: f64) -> EvalRow {
        EvalRow { model: model.into(), transform: t.into(), param: p.into(), n: 10, accuracy: acc, accuracy_on_correct: Some(acc) }
    }

    #[test]
    fn mock_table() {
        let clean = [true, true, true, true, true, true, true, true, false, false];
        let trans = [true, true, true, true, true, true, false, false, true, false];
        assert_eq!(accuracy_on_correct_from_outcomes(&clean, &trans).unwrap(), Some(0.75));
    }

    #[test]
    fn empty_selection_is_undefined() {
        assert_eq!(accuracy_on_correct_from_outcomes(&[false, false], &[true, true]).unwrap(), None);
    }

    #[test]
    fn misaligned_is_error() {
        assert!(matches!(accuracy_on_correct_from_outcomes(&[true], &[true, false]), Err(Error::Alignment { .. })));
    }

    #[test]
    fn summary_single_and_union() {
        let a = EvalReport { rows: vec![row("std", "sat", "8", 0.5), row("std", "sat", "2", 0.9)] };
        let merged = bias_summary(&[a.clone()]).unwrap();
        assert_eq!(merged.rows, vec![a.rows[1].clone(), a.rows[0].clone()]);
        let b = EvalReport { rows: vec![row("at", "sat", "2", 0.8)] };
        let merged = bias_summary(&[a, b]).unwrap();
        assert_eq!(merged.rows.len(), 3);
        assert_eq!(merged.rows[0].model, "at");
    }

    #[test]
    fn numeric_param_order() {
        let r = EvalReport { rows: vec![row("m", "sat", "inf", 0.1), row("m", "sat", "1024", 0.2), row("m", "sat", "64", 0.3)] };
        let merged = bias_summary(&[r]).unwrap();
        let params: Vec<&str> = merged.rows.iter().map(|r| r.param.as_str()).collect();
        assert_eq!(params, vec!["64", "1024", "inf"]);
    }

    #[test]
    fn conflicting_duplicate_rejected() {
        let a = EvalReport { rows: vec![row("m", "sat", "8", 0.5)] };
        let b = EvalReport { rows: vec![row("m", "sat", "8", 0.6)] };
        assert!(matches!(bias_summary(&[a, b]), Err(Error::Merge(m)) if m.contains("conflicting")));
    }
}
