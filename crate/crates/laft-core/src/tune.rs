//! Two-stage hyperparameter selection on the pseudo validation set: first
//! the corruption depth tau with feature editing disabled, then the neighbor
//! count K with editing enabled at the chosen tau.

use crate::error::{Error, Result};

/// Candidate values for the two-stage sweep.
#[derive(Debug, Clone)]
pub struct TuneGrid {
    pub tau_values: Vec<usize>,
    pub k_values: Vec<usize>,
}

impl TuneGrid {
    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.tau_values.is_empty() || self.k_values.is_empty() {
            return Err(Error::config("tune grids must not be empty".to_string()));
        }
        if let Some(&tau) = self.tau_values.iter().find(|&&t| t == 0 || t > t_max) {
            return Err(Error::config(format!(
                "tune.tau_grid value {tau} outside [1, {t_max}]"
            )));
        }
        if self.k_values.contains(&0) {
            return Err(Error::config("tune.k_grid values must be positive".to_string()));
        }
        Ok(())
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub value: usize,
    pub auroc: f64,
}

/// Runs `eval` over the grid and returns the argmax with the full table.
/// Ties break toward the smaller value.
pub fn sweep(
    grid: &[usize],
    mut eval: impl FnMut(usize) -> Result<f64>,
) -> Result<(usize, Vec<SweepPoint>)> {
    if grid.is_empty() {
        return Err(Error::config("sweep grid is empty".to_string()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &value in grid {
        let auroc = eval(value)?;
        if !auroc.is_finite() {
            return Err(Error::NumericDomain(format!(
                "sweep objective at {value} is not finite"
            )));
        }
        points.push(SweepPoint { value, auroc });
    }
    let mut best = points[0];
    for p in &points[1..] {
        if p.auroc > best.auroc || (p.auroc == best.auroc && p.value < best.value) {
            best = *p;
        }
    }
    Ok((best.value, points))
}
