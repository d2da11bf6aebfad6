//! Observed data `(Y, A, W)` and, for synthetic runs, the true nuisances.
//!
//! CSV layout: header `y,a,w1..wp`, optionally followed by
//! `g_true,q1_true,q0_true`. Comma separated, `.` decimal, LF line endings.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True propensity and outcome regressions of a synthetic draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub g: Vec<f64>,
    pub q1: Vec<f64>,
    pub q0: Vec<f64>,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × p` covariates.
    pub w: Array2<f64>,
    /// Binary treatment, one entry per row.
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn new(w: Array2<f64>, a: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let n = w.nrows();
        if a.len() != n || y.len() != n {
            return Err(Error::Data(format!(
                "length mismatch: w has {n} rows, a has {}, y has {}",
                a.len(),
                y.len()
            )));
        }
        if let Some(i) = a.iter().position(|&v| v > 1) {
            return Err(Error::Data(format!("treatment at row {i} is {} (expected 0 or 1)", a[i])));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("outcome at row {i} is not finite")));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("covariates contain non-finite values".into()));
        }
        Ok(Self { w, a, y, truth: None })
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        let n = self.n();
        if truth.g.len() != n || truth.q1.len() != n || truth.q0.len() != n {
            return Err(Error::Data("truth vectors must have one entry per row".into()));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    /// Treatment as `f64` for arithmetic.
    #[inline]
    pub fn treat(&self, i: usize) -> f64 {
        f64::from(self.a[i])
    }

    /// `(n1, n0)`.
    pub fn arm_counts(&self) -> (usize, usize) {
        let n1 = self.a.iter().filter(|&&v| v == 1).count();
        (n1, self.n() - n1)
    }

    pub fn require_both_arms(&self) -> Result<()> {
        arms_present(self.a.iter().copied())
    }

    /// Rows `idx` in the given order, truth included.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let w = self.w.select(ndarray::Axis(0), idx);
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            w,
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: pick(&self.y),
            truth: self.truth.as_ref().map(|t| Truth {
                g: pick(&t.g),
                q1: pick(&t.q1),
                q0: pick(&t.q0),
                beta: t.beta,
            }),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let p = self.p();
        let mut header = vec!["y".to_string(), "a".to_string()];
        header.extend((1..=p).map(|j| format!("w{j}")));
        if self.truth.is_some() {
            header.extend(["g_true", "q1_true", "q0_true"].map(String::from));
        }
        wtr.write_record(&header)?;
        let mut rec = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            rec.clear();
            rec.push(self.y[i].to_string());
            rec.push(self.a[i].to_string());
            rec.extend(self.w.row(i).iter().map(|v| v.to_string()));
            if let Some(t) = &self.truth {
                rec.extend([t.g[i], t.q1[i], t.q0[i]].map(|v| v.to_string()));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads the CSV layout described in the module docs. Covariate columns
    /// are every `w*` column in header order. The truth columns are optional
    /// but must appear together; `beta` of a loaded truth is `mean(q1 - q0)`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let y_col = find("y").ok_or_else(|| Error::Data("missing column `y`".into()))?;
        let a_col = find("a").ok_or_else(|| Error::Data("missing column `a`".into()))?;
        let w_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.len() > 1 && h.starts_with('w') && h[1..].chars().all(|c| c.is_ascii_digit()))
            .map(|(j, _)| j)
            .collect();
        if w_cols.is_empty() {
            return Err(Error::Data("missing covariate columns `w1..wp`".into()));
        }
        let truth_cols = [find("g_true"), find("q1_true"), find("q0_true")];
        let truth_cols = match truth_cols {
            [Some(g), Some(q1), Some(q0)] => Some([g, q1, q0]),
            [None, None, None] => None,
            _ => return Err(Error::Data("truth columns g_true,q1_true,q0_true must appear together".into())),
        };

        let parse = |rec: &csv::StringRecord, j: usize, line: usize| -> Result<f64> {
            rec[j].parse::<f64>().map_err(|_| {
                Error::Data(format!("line {line}: column `{}` is not a number: {:?}", &headers[j], &rec[j]))
            })
        };

        let (mut y, mut a, mut w) = (Vec::new(), Vec::new(), Vec::new());
        let mut truth = truth_cols.map(|_| [Vec::new(), Vec::new(), Vec::new()]);
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = r + 2;
            y.push(parse(&rec, y_col, line)?);
            let av = parse(&rec, a_col, line)?;
            if av != 0.0 && av != 1.0 {
                return Err(Error::Data(format!("line {line}: treatment must be 0 or 1, found {av}")));
            }
            a.push(av as u8);
            for &j in &w_cols {
                w.push(parse(&rec, j, line)?);
            }
            if let (Some(cols), Some(t)) = (truth_cols, truth.as_mut()) {
                for (k, &j) in cols.iter().enumerate() {
                    t[k].push(parse(&rec, j, line)?);
                }
            }
        }
        let n = y.len();
        if n == 0 {
            return Err(Error::Data("no data rows".into()));
        }
        let w = Array2::from_shape_vec((n, w_cols.len()), w).expect("row-major covariates");
        let data = Dataset::new(w, a, y)?;
        match truth {
            Some([g, q1, q0]) => {
                let beta = q1.iter().zip(&q0).map(|(a, b)| a - b).sum::<f64>() / n as f64;
                data.with_truth(Truth { g, q1, q0, beta })
            }
            None => Ok(data),
        }
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

pub(crate) fn arms_present(a: impl Iterator<Item = u8>) -> Result<()> {
    let (mut n1, mut n0) = (0usize, 0usize);
    for v in a {
        if v == 1 {
            n1 += 1
        } else {
            n0 += 1
        }
    }
    if n1 == 0 {
        return Err(Error::EmptyArm("treated"));
    }
    if n0 == 0 {
        return Err(Error::EmptyArm("control"));
    }
    Ok(())
}
