//! CSV input and output with 12-significant-digit numbers.

use std::io::{Read, Write};

use thiserror::Error;

use crate::model::TypeDistribution;
use crate::schedule::Mechanism;
use crate::worstcase::ConditionalMean;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("schedule file: {0}")]
    Format(String),
}

/// Rounds to 12 significant digits.
pub fn round_sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        // also normalizes -0.0
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Shortest decimal that reads back as the 12-digit rounding of `x`.
pub fn fmt_sig12(x: f64) -> String {
    format!("{}", round_sig12(x))
}

/// Columns `theta, weight, q, t, U`.
pub fn write_mechanism_csv<W: Write>(
    out: W,
    mechanism: &Mechanism,
    types: &TypeDistribution,
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta", "weight", "q", "t", "U"])?;
    for i in 0..types.len() {
        w.write_record([
            fmt_sig12(types.grid()[i]),
            fmt_sig12(types.weights()[i]),
            fmt_sig12(mechanism.schedule.values()[i]),
            fmt_sig12(mechanism.transfers[i]),
            fmt_sig12(mechanism.utilities[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `theta, weight, m`.
pub fn write_nature_csv<W: Write>(
    out: W,
    m: &ConditionalMean,
    types: &TypeDistribution,
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta", "weight", "m"])?;
    for i in 0..types.len() {
        w.write_record([
            fmt_sig12(types.grid()[i]),
            fmt_sig12(types.weights()[i]),
            fmt_sig12(m.values()[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A schedule read back from CSV: the `q` column, plus `theta` if present.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleFile {
    pub theta: Option<Vec<f64>>,
    pub q: Vec<f64>,
}

impl ScheduleFile {
    /// Checks that any `theta` column matches the grid to 12 digits.
    pub fn check_grid(&self, types: &TypeDistribution) -> Result<(), IoError> {
        if let Some(theta) = &self.theta {
            let same = theta.len() == types.len()
                && theta
                    .iter()
                    .zip(types.grid())
                    .all(|(&a, &b)| round_sig12(a) == round_sig12(b));
            if !same {
                return Err(IoError::Format(
                    "theta column does not match the scenario's type grid".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Reads a CSV with a header containing `q`; other columns are ignored
/// except `theta`.
pub fn read_schedule_csv<R: Read>(input: R) -> Result<ScheduleFile, IoError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let q_col = col("q").ok_or_else(|| IoError::Format("missing `q` column".into()))?;
    let theta_col = col("theta");
    let mut q = Vec::new();
    let mut theta = theta_col.map(|_| Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64, IoError> {
            rec.get(c)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| IoError::Format(format!("row {}: bad number", row + 1)))
        };
        q.push(num(q_col)?);
        if let (Some(c), Some(t)) = (theta_col, theta.as_mut()) {
            t.push(num(c)?);
        }
    }
    Ok(ScheduleFile { theta, q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Benchmark, Scenario, Sign, UtilityModel};
    use crate::schedule::{make_schedule, transfers_from_allocation};

    #[test]
    fn sig12_rounding() {
        assert_eq!(fmt_sig12(0.1 + 0.2), "0.3");
        assert_eq!(fmt_sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig12(-0.0), "0");
        assert_eq!(fmt_sig12(123_456_789.123_456_8), "123456789.123");
        assert_eq!(round_sig12(2.5e-20), 2.5e-20);
    }

    #[test]
    fn schedule_round_trip() {
        let s = Scenario {
            utility: UtilityModel::Quadratic { beta: 1.0 },
            types: TypeDistribution::uniform(0.0, 1.0, 7).unwrap(),
            cost: 0.5,
            mu: 0.1,
            cap: 1.0,
            sign: Sign::Positive,
            benchmark: Benchmark::Unknown,
            xi_bar: None,
        };
        let sched = make_schedule(vec![0.1, 0.1, 0.1, 0.1, 1.0 / 6.0, 1.0 / 3.0, 0.5], &s).unwrap();
        let mech = transfers_from_allocation(&sched, &s, 0.0);
        let mut buf = Vec::new();
        write_mechanism_csv(&mut buf, &mech, &s.types).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("theta,weight,q,t,U\n"));
        let file = read_schedule_csv(&buf[..]).unwrap();
        file.check_grid(&s.types).unwrap();
        let back = make_schedule(file.q, &s).unwrap();
        for (a, b) in back.values().iter().zip(sched.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_files() {
        assert!(read_schedule_csv("theta,x\n0,1\n".as_bytes()).is_err());
        assert!(read_schedule_csv("q\nabc\n".as_bytes()).is_err());
        let f = read_schedule_csv("theta,q\n0,0\n0.5,1\n".as_bytes()).unwrap();
        let types = TypeDistribution::uniform(0.0, 1.0, 3).unwrap();
        assert!(f.check_grid(&types).is_err());
    }
}
