//! Evaluation, expert-usage analytics and zero-shot checks.

use std::collections::{BTreeMap, BTreeSet};

use ordered_float::OrderedFloat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::domain::{nmse, postprocess, preprocess, to_db};
use crate::channel::{ChannelSample, ConfigTuple, Dataset, GroupKey};
use crate::error::{Error, Result};
use crate::moe::{Estimator, RoutingDecision, UsageStats};

/// Mean NMSE of one (SNR, profile, RB count) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub snr_db: f64,
    pub profile: String,
    pub n_rb: usize,
    pub nmse_linear: f64,
    pub nmse_db: f64,
    pub samples: usize,
}

/// Share of selection slots per expert among inputs at one SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct UsageRow {
    pub snr_db: f64,
    pub frequencies: Vec<f64>,
}

/// One routed input.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingTrace {
    pub sample_id: usize,
    pub snr_db: f64,
    pub profile: String,
    pub selected: Vec<usize>,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Empty for models without a router.
    pub usage: Vec<UsageRow>,
    pub traces: Vec<RoutingTrace>,
}

impl EvalReport {
    /// Mean of the per-group dB values.
    pub fn mean_nmse_db(&self) -> f64 {
        self.rows.iter().map(|r| r.nmse_db).sum::<f64>() / self.rows.len() as f64
    }

    /// NMSE in linear units at `snr_db`, averaged over groups at that SNR.
    pub fn nmse_at(&self, snr_db: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.snr_db == snr_db)
            .map(|r| r.nmse_linear)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn sample_nmse(model: &Estimator, s: &ChannelSample) -> Result<(f64, Option<RoutingDecision>)> {
    let (x, ctx) = preprocess(s)?;
    let (y, decision) = model.predict(&x)?;
    Ok((nmse(&s.h_clean, &postprocess(&y, &ctx)?)?, decision))
}

/// Mean per-sample NMSE over a dataset.
pub fn mean_nmse(model: &Estimator, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::usage("evaluation on an empty dataset"));
    }
    let v = ds
        .samples()
        .par_iter()
        .map(|s| sample_nmse(model, s).map(|(n, _)| n))
        .collect::<Result<Vec<_>>>()?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn group_rows(ds: &Dataset, values: &[f64]) -> Vec<EvalRow> {
    let mut groups: BTreeMap<GroupKey, (f64, usize)> = BTreeMap::new();
    for (s, v) in ds.samples().iter().zip(values) {
        let e = groups.entry(s.group_key()).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    groups
        .into_iter()
        .map(|(g, (sum, n))| {
            let lin = sum / n as f64;
            EvalRow {
                snr_db: g.snr_db.0,
                profile: g.profile,
                n_rb: g.n_rb,
                nmse_linear: lin,
                nmse_db: to_db(lin),
                samples: n,
            }
        })
        .collect()
}

/// Per-group NMSE and per-SNR expert usage. Reads the model only.
pub fn evaluate(model: &Estimator, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::usage("evaluation on an empty dataset"));
    }
    let results = ds
        .samples()
        .par_iter()
        .map(|s| sample_nmse(model, s))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = results.iter().map(|(n, _)| *n).collect();
    let rows = group_rows(ds, &values);

    let mut usage = Vec::new();
    let mut traces = Vec::new();
    if let Some(m) = model.as_moe() {
        let mut per_snr: BTreeMap<OrderedFloat<f64>, UsageStats> = BTreeMap::new();
        for (i, (s, (_, d))) in ds.samples().iter().zip(&results).enumerate() {
            let d = d.as_ref().expect("MoE forward yields a decision");
            per_snr
                .entry(OrderedFloat(s.snr_db))
                .or_insert_with(|| UsageStats::new(m.n_experts(), m.k))
                .record(d);
            traces.push(RoutingTrace {
                sample_id: i,
                snr_db: s.snr_db,
                profile: s.profile_name.clone(),
                selected: d.selected.clone(),
                w: d.w.clone(),
            });
        }
        usage = per_snr
            .into_iter()
            .map(|(snr, st)| UsageRow {
                snr_db: snr.0,
                frequencies: st.frequencies(),
            })
            .collect();
    }
    Ok(EvalReport { rows, usage, traces })
}

/// NMSE of the LS estimate itself, per group: the floor a useful model must
/// beat.
pub fn ls_baseline(ds: &Dataset) -> Result<Vec<EvalRow>> {
    if ds.is_empty() {
        return Err(Error::usage("evaluation on an empty dataset"));
    }
    let values = ds
        .samples()
        .iter()
        .map(|s| nmse(&s.h_clean, &s.h_ls))
        .collect::<Result<Vec<_>>>()?;
    Ok(group_rows(ds, &values))
}

/// Like [`evaluate`], but first checks that no configuration in `ds` was
/// seen during training.
pub fn zero_shot_eval(model: &Estimator, trained_on: &BTreeSet<ConfigTuple>, ds: &Dataset) -> Result<EvalReport> {
    let overlap: Vec<ConfigTuple> = ds.config_tuples().intersection(trained_on).cloned().collect();
    if let Some(t) = overlap.first() {
        return Err(Error::config(
            "zero_shot",
            format!(
                "{} test configuration(s) were seen in training, e.g. profile `{}` with {} RB at {} s delay spread",
                overlap.len(),
                t.profile,
                t.n_rb,
                t.delay_spread
            ),
        ));
    }
    evaluate(model, ds)
}
