//! CSV writers and readers for evaluation, usage, history and routing traces.

use std::io::{Read, Write};

use super::eval::{EvalRow, RoutingTrace, UsageRow};
use super::train::EpochRecord;
use crate::error::{Error, Result};

pub fn write_eval_csv(rows: &[EvalRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["snr_db", "profile", "n_rb", "nmse_linear", "nmse_db", "samples"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv(input: impl Read) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<EvalRow>, _>>()?)
}

pub fn write_history_csv(records: &[EpochRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(["epoch", "train_nmse", "val_nmse", "max_usage", "min_usage"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv(input: impl Read) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<EpochRecord>, _>>()?)
}

/// Header `snr_db,expert_0,...,expert_{r-1}`.
pub fn write_usage_csv(rows: &[UsageRow], n_experts: usize, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["snr_db".to_string()];
    header.extend((0..n_experts).map(|e| format!("expert_{e}")));
    w.write_record(&header)?;
    for r in rows {
        if r.frequencies.len() != n_experts {
            return Err(Error::shape("usage row length differs from expert count"));
        }
        let mut rec = vec![r.snr_db.to_string()];
        rec.extend(r.frequencies.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_usage_csv(input: impl Read) -> Result<Vec<UsageRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("snr_db") {
        return Err(Error::parse("usage csv: first column must be `snr_db`"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let nums = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::parse(format!("usage csv: `{f}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(UsageRow {
            snr_db: nums[0],
            frequencies: nums[1..].to_vec(),
        });
    }
    Ok(rows)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn split<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|p| {
            p.parse()
                .map_err(|_| Error::parse(format!("trace csv: bad list entry `{p}`")))
        })
        .collect()
}

/// One row per routed input; `selected` and `w` are `;`-separated lists.
pub fn write_trace_csv(traces: &[RoutingTrace], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "snr_db", "profile", "selected", "w"])?;
    for t in traces {
        w.write_record([
            t.sample_id.to_string(),
            t.snr_db.to_string(),
            t.profile.clone(),
            join(&t.selected),
            join(&t.w),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(input: impl Read) -> Result<Vec<RoutingTrace>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::parse("trace csv: expected 5 columns"));
        }
        out.push(RoutingTrace {
            sample_id: rec[0].parse().map_err(|_| Error::parse("trace csv: bad sample_id"))?,
            snr_db: rec[1].parse().map_err(|_| Error::parse("trace csv: bad snr_db"))?,
            profile: rec[2].to_string(),
            selected: split(&rec[3])?,
            w: split(&rec[4])?,
        });
    }
    Ok(out)
}
