//! Uniform time grids, measurement records and the seeded Wiener stream.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVectorView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative tolerance for `dt` dividing an interval.
pub const GRID_DIVISIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(Error::input(format!("time grid needs finite t0 and dt > 0 (dt = {dt})")));
        }
        Ok(Self { t0, dt, steps })
    }

    /// Grid covering `[t0, t_final]`; `dt` must divide the interval.
    pub fn from_interval(t0: f64, t_final: f64, dt: f64) -> Result<Self> {
        if !(t_final > t0) {
            return Err(Error::input(format!("t_final ({t_final}) must exceed t0 ({t0})")));
        }
        let exact = (t_final - t0) / dt;
        let steps = exact.round();
        if !(dt > 0.0) || (exact - steps).abs() > GRID_DIVISIBILITY_TOL * exact.max(1.0) {
            return Err(Error::input(format!(
                "dt = {dt} does not divide the interval [{t0}, {t_final}]"
            )));
        }
        Self::new(t0, dt, steps as usize)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn t_final(&self) -> f64 {
        self.time(self.steps)
    }

    /// Number of grid points (`steps + 1`).
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

/// Per-channel increments `dY_h` over each step of a uniform grid.
///
/// Column `k` holds the increments over `[t_k, t_k + dt]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    grid: TimeGrid,
    increments: DMatrix<f64>,
}

impl MeasurementRecord {
    pub fn new(grid: TimeGrid, increments: DMatrix<f64>) -> Result<Self> {
        if increments.ncols() != grid.steps() && increments.nrows() > 0 {
            return Err(Error::shape(format!(
                "record has {} columns for {} steps",
                increments.ncols(),
                grid.steps()
            )));
        }
        if increments.iter().any(|v| !v.is_finite()) {
            return Err(Error::Record("increments must be finite".into()));
        }
        let increments = if increments.nrows() == 0 { DMatrix::zeros(0, grid.steps()) } else { increments };
        Ok(Self { grid, increments })
    }

    /// A record with all increments zero.
    pub fn silent(grid: TimeGrid, channels: usize) -> Self {
        Self { grid, increments: DMatrix::zeros(channels, grid.steps()) }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn channels(&self) -> usize {
        self.increments.nrows()
    }

    pub fn increments(&self) -> &DMatrix<f64> {
        &self.increments
    }

    pub fn increment(&self, k: usize) -> DVectorView<'_, f64> {
        self.increments.column(k)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t");
        for h in 1..=self.channels() {
            let _ = write!(out, ",dY_{h}");
        }
        out.push('\n');
        for k in 0..self.steps() {
            out.push_str(&fmt_f64(self.grid.time(k)));
            for h in 0..self.channels() {
                out.push(',');
                out.push_str(&fmt_f64(self.increments[(h, k)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Parses the CSV written by [`MeasurementRecord::to_csv_string`]. The
    /// grid is recovered from the `t` column, which must be uniform.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Record("empty record".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Record(format!("header must start with `t`, got `{header}`")));
        }
        for (h, name) in cols.iter().enumerate().skip(1) {
            if *name != format!("dY_{h}") {
                return Err(Error::Record(format!("unexpected column `{name}`, expected `dY_{h}`")));
            }
        }
        let m = cols.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != m + 1 {
                return Err(Error::Record(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    fields.len(),
                    m + 1
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Record(format!("row {}: cannot parse `{s}`: {e}", i + 1)))
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                values.push(parse(f)?);
            }
        }
        if times.len() < 2 {
            return Err(Error::Record("need at least two rows to recover the time step".into()));
        }
        let steps = times.len();
        let dt = (times[steps - 1] - times[0]) / (steps - 1) as f64;
        let grid = TimeGrid::new(times[0], dt, steps)?;
        for (k, t) in times.iter().enumerate() {
            if (t - grid.time(k)).abs() > 1e-9 * dt.max(t.abs()) {
                return Err(Error::Record(format!("non-uniform time column at row {}", k + 1)));
            }
        }
        // rows are steps, columns channels
        let increments = DMatrix::from_fn(m, steps, |h, k| values[k * m + h]);
        Self::new(grid, increments)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// Lossless text form: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Wiener increments `dW ~ N(0, dt)`, `channels x steps`, drawn from a
/// ChaCha8 stream seeded with `seed` (step-major, channel-minor order).
pub fn wiener_increments(seed: u64, channels: usize, steps: usize, dt: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = dt.sqrt();
    let mut out = DMatrix::zeros(channels, steps);
    for k in 0..steps {
        for h in 0..channels {
            let z: f64 = StandardNormal.sample(&mut rng);
            out[(h, k)] = z * scale;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_divisibility() {
        let g = TimeGrid::from_interval(0.0, 2.0, 1e-3).unwrap();
        assert_eq!(g.steps(), 2000);
        assert!(TimeGrid::from_interval(0.0, 1.0, 0.3).is_err());
        assert!(TimeGrid::from_interval(1.0, 1.0, 0.1).is_err());
        assert!(TimeGrid::from_interval(0.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let grid = TimeGrid::new(0.25, 1e-3, 7).unwrap();
        let rec = MeasurementRecord::new(grid, wiener_increments(3, 2, 7, 1e-3)).unwrap();
        let text = rec.to_csv_string();
        assert!(text.starts_with("t,dY_1,dY_2\n"));
        assert_eq!(text.lines().count(), 8);
        let back = MeasurementRecord::from_csv_str(&text).unwrap();
        assert_eq!(back.increments(), rec.increments());
        assert!((back.grid().dt() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(MeasurementRecord::from_csv_str("time,dY_1\n0,1\n1,2\n").is_err());
        assert!(MeasurementRecord::from_csv_str("t,dY_2\n0,1\n1,2\n").is_err());
        assert!(MeasurementRecord::from_csv_str("t,dY_1\n0,1\n1\n").is_err());
    }

    #[test]
    fn wiener_stream_is_reproducible() {
        let a = wiener_increments(42, 3, 100, 0.01);
        let b = wiener_increments(42, 3, 100, 0.01);
        let c = wiener_increments(43, 3, 100, 0.01);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn record_shape_checked() {
        let grid = TimeGrid::new(0.0, 0.1, 5).unwrap();
        assert!(MeasurementRecord::new(grid, DMatrix::zeros(1, 4)).is_err());
        assert_eq!(MeasurementRecord::new(grid, DMatrix::zeros(0, 0)).unwrap().steps(), 5);
    }
}
