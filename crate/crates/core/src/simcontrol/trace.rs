use std::path::Path;

use crate::{Error, Result};

/// Uniformly sampled closed-loop record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    pub t: Vec<f64>,
    pub q_r: Vec<f64>,
    pub qd_r: Vec<f64>,
    pub q_d: Vec<f64>,
    pub tau: Vec<f64>,
    pub e: Vec<f64>,
    pub v: Vec<f64>,
    /// Whether the torque limit was active over the step starting here.
    pub saturated: Vec<bool>,
}

impl SimTrace {
    pub(crate) fn with_capacity(dt: f64, n: usize) -> Self {
        let v = || Vec::with_capacity(n);
        Self {
            dt,
            t: v(),
            q_r: v(),
            qd_r: v(),
            q_d: v(),
            tau: v(),
            e: v(),
            v: v(),
            saturated: Vec::with_capacity(n),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn push(&mut self, t: f64, q_r: f64, qd_r: f64, q_d: f64, tau: f64, e: f64, v: f64, saturated: bool) {
        self.t.push(t);
        self.q_r.push(q_r);
        self.qd_r.push(qd_r);
        self.q_d.push(q_d);
        self.tau.push(tau);
        self.e.push(e);
        self.v.push(v);
        self.saturated.push(saturated);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Root-mean-square of `e = q_d - q_r` over all samples.
    pub fn rms_error(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (self.e.iter().map(|e| e * e).sum::<f64>() / self.len() as f64).sqrt()
    }

    pub fn max_abs_error(&self) -> f64 {
        self.e.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    /// `t,q_r,qd_r,q_d,tau,e,V`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let err = |e: csv::Error| Error::format(path, e.to_string());
        w.write_record(["t", "q_r", "qd_r", "q_d", "tau", "e", "V"])
            .map_err(err)?;
        for k in 0..self.len() {
            let row = [
                self.t[k],
                self.q_r[k],
                self.qd_r[k],
                self.q_d[k],
                self.tau[k],
                self.e[k],
                self.v[k],
            ];
            w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Two-column `t value` files, one per series, into `dir`.
    pub fn write_plot_data(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let series: [(&str, &[f64]); 5] = [
            ("reference", &self.q_d),
            ("joint", &self.q_r),
            ("error", &self.e),
            ("torque", &self.tau),
            ("lyapunov", &self.v),
        ];
        for (name, values) in series {
            let path = dir.join(format!("{name}.dat"));
            let mut text = format!("# t {name}\n");
            for (t, v) in self.t.iter().zip(values) {
                text.push_str(&format!("{t} {v}\n"));
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Linear resampling of a series sampled every `dt_in` onto a grid with
/// step `dt_out` covering the same span.
pub fn resample(values: &[f64], dt_in: f64, dt_out: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    if !(dt_in > 0.0 && dt_out > 0.0) {
        return Err(Error::BadParams(format!(
            "sampling steps must be positive, got {dt_in} and {dt_out}"
        )));
    }
    let span = (values.len() - 1) as f64 * dt_in;
    let n = (span / dt_out + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|k| {
            let pos = k as f64 * dt_out / dt_in;
            let j = (pos.floor() as usize).min(values.len() - 1);
            if j + 1 >= values.len() {
                values[values.len() - 1]
            } else {
                let w = pos - j as f64;
                values[j] + w * (values[j + 1] - values[j])
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_examples() {
        assert_eq!(resample(&[0.0, 1.0], 0.01, 0.005).unwrap(), vec![0.0, 0.5, 1.0]);
        let r = resample(&[0.0, 1.0, 4.0], 0.01, 0.001).unwrap();
        assert_eq!(r.len(), 21);
        assert!((r[15] - 2.5).abs() < 1e-12);
        assert_eq!(resample(&[3.0], 0.01, 0.001).unwrap(), vec![3.0]);
    }

    #[test]
    fn csv_layout() {
        let mut t = SimTrace::with_capacity(0.1, 2);
        t.push(0.0, 0.1, 0.0, 0.2, 1.0, 0.1, 0.5, false);
        t.push(0.1, 0.15, 0.5, 0.2, 0.5, 0.05, 0.2, false);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,q_r,qd_r,q_d,tau,e,V");
        assert_eq!(text.lines().nth(2).unwrap(), "0.1,0.15,0.5,0.2,0.5,0.05,0.2");
        assert!((t.rms_error() - (0.0125f64 / 2.0).sqrt() * 1.0).abs() < 1e-12);
    }
}
