use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Formats a double with 17 significant digits; parsing the text gives the
/// same bits back.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f64>,
}

/// Uniformly sampled multi-channel record.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    t0: f64,
    h: f64,
    channels: Vec<Channel>,
    pub seed: Option<u64>,
}

impl TimeSeries {
    pub fn new(t0: f64, h: f64, channels: Vec<Channel>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time grid needs finite t0 and positive step, got t0={t0}, h={h}"
            )));
        }
        if let Some(first) = channels.first() {
            if let Some(bad) = channels.iter().find(|c| c.values.len() != first.values.len()) {
                return Err(Error::Dimension(format!(
                    "channel '{}' has {} samples, '{}' has {}",
                    bad.name,
                    bad.values.len(),
                    first.name,
                    first.values.len()
                )));
            }
        }
        Ok(TimeSeries {
            t0,
            h,
            channels,
            seed: None,
        })
    }

    /// Single-channel series starting at `t = 0`.
    pub fn single(name: &str, h: f64, values: Vec<f64>) -> Result<Self> {
        TimeSeries::new(
            0.0,
            h,
            vec![Channel {
                name: name.to_string(),
                values,
            }],
        )
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::InvalidArgument(format!("no channel named '{name}'")))
    }

    /// Stacks the named channels into an `r x N` matrix (one column per
    /// sample).
    pub fn to_matrix(&self, names: &[&str]) -> Result<DMatrix<f64>> {
        let cols: Vec<&[f64]> = names.iter().map(|n| self.channel(n)).collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(names.len(), self.len(), |i, k| cols[i][k]))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.channels.iter().map(|c| c.name.clone()));
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![fmt_f64(self.time(k))];
            row.extend(self.channels.iter().map(|c| fmt_f64(c.values[k])));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Parses `t,<ch1>,<ch2>,...`. At least two rows are needed to recover
    /// the sample period; the grid must be uniform.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rd.headers()?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::Parse("time series CSV must start with a 't' column".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut t = Vec::new();
        let mut cols = vec![Vec::new(); names.len()];
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number '{s}': {e}")))
            };
            t.push(parse(&rec[0])?);
            for (i, col) in cols.iter_mut().enumerate() {
                col.push(parse(&rec[i + 1])?);
            }
        }
        if t.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "time series has {} rows; at least 2 are required",
                t.len()
            )));
        }
        let h = t[1] - t[0];
        if !(h > 0.0) {
            return Err(Error::Parse("time column is not increasing".into()));
        }
        for (k, &tk) in t.iter().enumerate() {
            if (tk - (t[0] + k as f64 * h)).abs() > 1e-6 * h.max(1e-12) * (1.0 + k as f64).sqrt() {
                return Err(Error::Parse(format!("non-uniform time grid at row {k}")));
            }
        }
        let channels = names
            .into_iter()
            .zip(cols)
            .map(|(name, values)| Channel { name, values })
            .collect();
        TimeSeries::new(t[0], h, channels)
    }
}
