//! Error metrics for downscaled SM: daily RMSE, land-cover strata and the
//! coarse-consistency diagnostic.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{aggregate_block_mean, aggregate_majority, lc, Raster};

/// Error threshold used for the "large error" pixel fraction (m³/m³).
pub const LARGE_ERROR: f64 = 0.04;
/// Last day of year on which bare pixels count as pre-harvest.
pub const BARE_SEASON_END_DOY: u32 = 332;

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (sse / pred.len() as f64).sqrt()
}

pub fn mean_abs_error(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Stratum {
    Corn,
    Cotton,
    /// Bare at 1 km with at least one vegetated 200 m subpixel, before the season end.
    BareMixed,
    /// Bare after the season end.
    BarePostSeason,
    /// Bare with no vegetated subpixel, before the season end.
    BarePure,
}

impl Stratum {
    pub const ALL: [Stratum; 5] = [
        Stratum::Corn,
        Stratum::Cotton,
        Stratum::BareMixed,
        Stratum::BarePostSeason,
        Stratum::BarePure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Corn => "corn",
            Stratum::Cotton => "cotton",
            Stratum::BareMixed => "bare_a",
            Stratum::BarePostSeason => "bare_b",
            Stratum::BarePure => "bare_c",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stratum of every 1 km pixel, given the 200 m land cover.
pub fn classify_pixels(lc_fine: &Raster, factor: usize, doy: u32) -> Result<Vec<Stratum>> {
    let lc_mid = aggregate_majority(lc_fine, factor)?;
    let w = lc_mid.width;
    let out = lc_mid
        .values()
        .iter()
        .enumerate()
        .map(|(i, &code)| match code as u8 {
            lc::SWEET_CORN => Stratum::Corn,
            lc::COTTON => Stratum::Cotton,
            _ if doy > BARE_SEASON_END_DOY => Stratum::BarePostSeason,
            _ => {
                let (r, c) = (i / w, i % w);
                let vegetated = (r * factor..(r + 1) * factor).any(|fr| {
                    (c * factor..(c + 1) * factor).any(|fc| lc_fine.get(fr, fc) != lc::BARE as f64)
                });
                if vegetated {
                    Stratum::BareMixed
                } else {
                    Stratum::BarePure
                }
            }
        })
        .collect();
    Ok(out)
}

/// Per-stratum pixel counts and squared-error sums; tables add across days.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StrataTable {
    pub counts: [usize; 5],
    pub sse: [f64; 5],
}

impl StrataTable {
    pub fn rmse(&self, s: Stratum) -> Option<f64> {
        let i = s.index();
        (self.counts[i] > 0).then(|| (self.sse[i] / self.counts[i] as f64).sqrt())
    }

    pub fn count(&self, s: Stratum) -> usize {
        self.counts[s.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, other: &StrataTable) {
        for i in 0..5 {
            self.counts[i] += other.counts[i];
            self.sse[i] += other.sse[i];
        }
    }
}

/// Per-stratum RMSE of `predicted` against `truth` (both 1 km).
pub fn compute_strata_rmse(
    predicted: &Raster,
    truth: &Raster,
    lc_fine: &Raster,
    doy: u32,
) -> Result<StrataTable> {
    if !predicted.same_shape(truth) {
        return Err(Error::Dimension("predicted and truth rasters differ in shape".into()));
    }
    let factor = (predicted.resolution_m / lc_fine.resolution_m.max(1)) as usize;
    if factor < 2
        || lc_fine.resolution_m * factor as u32 != predicted.resolution_m
        || lc_fine.width != predicted.width * factor
        || lc_fine.height != predicted.height * factor
    {
        return Err(Error::Dimension(format!(
            "{}x{} land cover at {} m does not nest a {}x{} raster at {} m",
            lc_fine.height,
            lc_fine.width,
            lc_fine.resolution_m,
            predicted.height,
            predicted.width,
            predicted.resolution_m
        )));
    }
    let strata = classify_pixels(lc_fine, factor, doy)?;
    let mut t = StrataTable::default();
    for ((s, p), y) in strata.iter().zip(predicted.values()).zip(truth.values()) {
        t.counts[s.index()] += 1;
        t.sse[s.index()] += (p - y) * (p - y);
    }
    Ok(t)
}

/// Count of coarse blocks whose downscaled mean lies within `tol` of the
/// observed coarse SM, and the number of blocks.
pub fn coarse_consistency(
    downscaled: &Raster,
    coarse_obs: &Raster,
    tol: f64,
) -> Result<(usize, usize)> {
    if coarse_obs.width == 0 || !downscaled.width.is_multiple_of(coarse_obs.width) {
        return Err(Error::Dimension("coarse raster does not nest the downscaled raster".into()));
    }
    let block = aggregate_block_mean(downscaled, downscaled.width / coarse_obs.width)?;
    if !block.same_shape(coarse_obs) {
        return Err(Error::Dimension("coarse raster does not nest the downscaled raster".into()));
    }
    let ok = block
        .values()
        .iter()
        .zip(coarse_obs.values())
        .filter(|(a, b)| (*a - *b).abs() < tol)
        .count();
    Ok((ok, block.values().len()))
}
