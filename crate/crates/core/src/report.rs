//! CSV output helpers.

use std::io::Write;

use crate::error::Result;
use crate::schedules::{PreviewRow, ScheduleList};

/// Shortest round-trip-safe form is not stable across languages, so numbers
/// are always written with 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Gradient-norm probe table: one plain column and one sn column per scale
/// policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTable {
    pub t: Vec<f64>,
    pub plain_norm: Vec<f64>,
    /// `(column label, norms)`
    pub sn: Vec<(String, Vec<f64>)>,
}

impl ProbeTable {
    /// Column names: `t,plain_norm,sn_norm` for a single policy, otherwise
    /// `sn_norm_<label>` per policy.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string(), "plain_norm".to_string()];
        if self.sn.len() == 1 {
            h.push("sn_norm".into());
        } else {
            h.extend(self.sn.iter().map(|(l, _)| format!("sn_norm_{l}")));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = writer(out);
        w.write_record(self.header())?;
        for i in 0..self.t.len() {
            let mut row = vec![fmt_f64(self.t[i]), fmt_f64(self.plain_norm[i])];
            row.extend(self.sn.iter().map(|(_, v)| fmt_f64(v[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n,t_exp,t` for every point of a schedule list.
pub fn write_schedule_list<W: Write>(list: &ScheduleList, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["n", "t_exp", "t"])?;
    for (n, (p, t)) in list.points_exp.iter().zip(&list.temps).enumerate() {
        w.write_record([n.to_string(), fmt_f64(*p), fmt_f64(*t)])?;
    }
    w.flush()?;
    Ok(())
}

/// `epoch,t,t_exp,d_exp,entropy` per previewed epoch.
pub fn write_preview<W: Write>(rows: &[PreviewRow], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["epoch", "t", "t_exp", "d_exp", "entropy"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.t_exp),
            fmt_f64(r.d_exp),
            r.entropy.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
