//! Saturated models on discrete covariates: empirical proportions per cell.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub arm: Option<u8>,
    pub values: Vec<f64>,
    pub positives: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTable {
    pub columns: Vec<usize>,
    pub entries: Vec<CellEntry>,
}

impl CellTable {
    pub fn fit(
        data: &Dataset,
        rows: &[usize],
        columns: &[usize],
        by_arm: bool,
        response: impl Fn(usize) -> bool,
    ) -> Self {
        let mut counts: BTreeMap<(Option<u8>, Vec<u64>), (usize, usize)> = BTreeMap::new();
        for &i in rows {
            let r = data.get(i);
            let arm = by_arm.then_some(r.treatment);
            let key = columns.iter().map(|&j| r.covariates[j].to_bits()).collect();
            let c = counts.entry((arm, key)).or_default();
            c.0 += response(i) as usize;
            c.1 += 1;
        }
        let entries = counts
            .into_iter()
            .map(|((arm, key), (positives, total))| CellEntry {
                arm,
                values: key.into_iter().map(f64::from_bits).collect(),
                positives,
                total,
            })
            .collect();
        Self {
            columns: columns.to_vec(),
            entries,
        }
    }

    /// Empirical proportion in the cell of `l` (and arm, if fitted by arm).
    pub fn lookup(&self, arm: Option<u8>, l: &[f64]) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.arm == arm && self.columns.iter().zip(&e.values).all(|(&j, &v)| l[j] == v))
            .map(|e| e.positives as f64 / e.total as f64)
    }
}
