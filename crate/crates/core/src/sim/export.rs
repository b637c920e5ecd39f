//! Trace and metrics export. CSV files start with a `# schema=1` line; the
//! binary log is `EBSELOG1`, then length-prefixed records of little-endian doubles.

use std::io::{Read, Write};

use super::{Metrics, SimTrace};
use crate::error::{Error, Result};

pub const SCHEMA_LINE: &str = "# schema=1\n";
const MAGIC: &[u8; 8] = b"EBSELOG1";

/// Column names of a trace row: `k`, states, inputs, outputs, then per agent the
/// transmit flag, `|q_i|` and `|e_i|²`, then the number of lost links and the reset flag.
pub fn trace_columns(trace: &SimTrace) -> Vec<String> {
    let first = trace.steps.first();
    let (n, m, p) = first.map_or((trace.x0.len(), trace.u0.len(), 0), |s| (s.x.len(), s.u.len(), s.y.len()));
    let mut cols = vec!["k".to_string()];
    cols.extend((0..n).map(|j| format!("x{j}")));
    cols.extend((0..m).map(|j| format!("u{j}")));
    cols.extend((0..p).map(|j| format!("y{j}")));
    for tag in ["tx", "q", "e2_"] {
        cols.extend((1..=trace.agents).map(|i| format!("{tag}{i}")));
    }
    cols.push("lost".into());
    cols.push("reset".into());
    cols
}

fn rows(trace: &SimTrace) -> impl Iterator<Item = Vec<f64>> + '_ {
    trace.steps.iter().map(move |s| {
        let mut r = vec![s.k as f64];
        r.extend(s.x.iter().chain(&s.u).chain(&s.y).copied());
        r.extend((0..trace.agents).map(|i| s.transmit.binary_search(&i).is_ok() as u8 as f64));
        r.extend(&s.q_norm);
        r.extend(&s.err_sq);
        r.push(s.drops.len() as f64);
        r.push(s.reset as u8 as f64);
        r
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// One row per step; floats use the shortest round-trip representation.
pub fn write_csv<W: Write>(trace: &SimTrace, mut out: W) -> Result<()> {
    out.write_all(SCHEMA_LINE.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_columns(trace)).map_err(csv_err)?;
    for r in rows(trace) {
        w.write_record(r.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_binary_log<W: Write>(trace: &SimTrace, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    let header = trace_columns(trace).join(",");
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    for r in rows(trace) {
        out.write_all(&(r.len() as u32).to_le_bytes())?;
        for v in r {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Column names and rows of a binary log.
pub fn read_binary_log<R: Read>(mut input: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let bad = |what: &str| Error::InvalidArgument(format!("binary log: {what}"));
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut header)?;
    let header = String::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;
    let cols: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    loop {
        match input.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let count = u32::from_le_bytes(len) as usize;
        let mut buf = vec![0u8; 8 * count];
        input.read_exact(&mut buf)?;
        rows.push(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
    }
    Ok((cols, rows))
}

/// One row per agent with its tail rate and power; the total rate and the
/// distance band repeat on every row.
pub fn write_metrics_csv<W: Write>(m: &Metrics, mut out: W) -> Result<()> {
    out.write_all(SCHEMA_LINE.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["agent", "rate", "power", "total_rate", "band"]).map_err(csv_err)?;
    let band = m.band.map_or(String::new(), |b| b.to_string());
    for (i, (r, p)) in m.rates.iter().zip(&m.power).enumerate() {
        w.write_record([(i + 1).to_string(), r.to_string(), p.to_string(), m.total_rate.to_string(), band.clone()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Moving-average rate series, one row per step.
pub fn write_rate_series_csv<W: Write>(m: &Metrics, mut out: W) -> Result<()> {
    out.write_all(SCHEMA_LINE.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["k".to_string()];
    head.extend((1..=m.rate_series.len()).map(|i| format!("rate{i}")));
    w.write_record(head).map_err(csv_err)?;
    let len = m.rate_series.first().map_or(0, Vec::len);
    for k in 0..len {
        let mut r = vec![(k + 1).to_string()];
        r.extend(m.rate_series.iter().map(|s| s[k].to_string()));
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
