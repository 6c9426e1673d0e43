//! Multi-resolution rasters: block-mean aggregation, noise injection,
//! pixel-coordinate services and the TDR-CSV file format.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Physical upper bound on volumetric soil moisture (m³/m³).
pub const SM_MAX: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    SM,
    LST,
    LAI,
    PPT,
    LC,
}

impl Variable {
    pub const ALL: [Variable; 5] = [
        Variable::SM,
        Variable::LST,
        Variable::LAI,
        Variable::PPT,
        Variable::LC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::SM => "SM",
            Variable::LST => "LST",
            Variable::LAI => "LAI",
            Variable::PPT => "PPT",
            Variable::LC => "LC",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown variable {s:?}")))
    }
}

/// Land-cover codes.
pub mod lc {
    pub const BARE: u8 = 0;
    pub const SWEET_CORN: u8 = 1;
    pub const COTTON: u8 = 2;
}

/// Square region geometry at one resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub extent_km: f64,
    pub origin: (f64, f64),
    pub resolution_m: u32,
}

impl GridGeometry {
    pub fn new(extent_km: f64, origin: (f64, f64), resolution_m: u32) -> Result<Self> {
        if resolution_m == 0 || !(extent_km > 0.0) {
            return Err(Error::Argument(format!(
                "extent {extent_km} km / resolution {resolution_m} m must be positive"
            )));
        }
        let extent_m = extent_km * 1000.0;
        let cells = extent_m / resolution_m as f64;
        if (cells - cells.round()).abs() > 1e-9 || extent_m.fract() != 0.0 {
            return Err(Error::Dimension(format!(
                "extent {extent_km} km is not a multiple of {resolution_m} m"
            )));
        }
        Ok(GridGeometry {
            extent_km,
            origin,
            resolution_m,
        })
    }

    /// Cells per side.
    pub fn size(&self) -> usize {
        (self.extent_km * 1000.0 / self.resolution_m as f64).round() as usize
    }

    pub fn cell_km(&self) -> f64 {
        self.resolution_m as f64 / 1000.0
    }

    /// Centroid of cell `(row, col)` in km. Rows increase along Y, columns along X.
    pub fn pixel_centroid(&self, row: usize, col: usize) -> Result<(f64, f64)> {
        let n = self.size();
        if row >= n || col >= n {
            return Err(Error::Index {
                row,
                col,
                height: n,
                width: n,
            });
        }
        let c = self.cell_km();
        Ok((
            self.origin.0 + (col as f64 + 0.5) * c,
            self.origin.1 + (row as f64 + 0.5) * c,
        ))
    }
}

/// One variable at one resolution on one day, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub variable: Variable,
    pub resolution_m: u32,
    pub day: u32,
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(
        variable: Variable,
        resolution_m: u32,
        day: u32,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || resolution_m == 0 {
            return Err(Error::Dimension(
                "raster dimensions and resolution must be positive".into(),
            ));
        }
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width} raster",
                values.len()
            )));
        }
        Ok(Raster {
            variable,
            resolution_m,
            day,
            width,
            height,
            values,
        })
    }

    pub fn filled(
        variable: Variable,
        resolution_m: u32,
        day: u32,
        height: usize,
        width: usize,
        value: f64,
    ) -> Result<Self> {
        Raster::new(
            variable,
            resolution_m,
            day,
            height,
            width,
            vec![value; width * height],
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.resolution_m == other.resolution_m
    }

    /// Copy with values mapped element-wise; metadata preserved.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Checks the per-variable physical bounds.
    pub fn check_physical(&self) -> Result<()> {
        let bad = |v: f64| match self.variable {
            Variable::SM => !(0.0..=SM_MAX).contains(&v),
            Variable::LAI | Variable::PPT => !(v >= 0.0),
            Variable::LC => !(v == 0.0 || v == 1.0 || v == 2.0),
            Variable::LST => !v.is_finite(),
        };
        match self.values.iter().position(|&v| bad(v)) {
            Some(i) => Err(Error::Data(format!(
                "{} raster day {} has out-of-range value {} at cell {i}",
                self.variable, self.day, self.values[i]
            ))),
            None => Ok(()),
        }
    }
}

fn check_factor(r: &Raster, factor: usize) -> Result<()> {
    if factor <= 1 {
        return Err(Error::Argument(format!(
            "aggregation factor must exceed 1, got {factor}"
        )));
    }
    if !r.width.is_multiple_of(factor) || !r.height.is_multiple_of(factor) {
        return Err(Error::Dimension(format!(
            "{}x{} raster is not divisible by factor {factor}",
            r.height, r.width
        )));
    }
    Ok(())
}

/// Arithmetic mean of each `factor`×`factor` block.
pub fn aggregate_block_mean(fine: &Raster, factor: usize) -> Result<Raster> {
    check_factor(fine, factor)?;
    let (h, w) = (fine.height / factor, fine.width / factor);
    let mut out = vec![0.0; h * w];
    for r in 0..fine.height {
        let row = &fine.values[r * fine.width..(r + 1) * fine.width];
        let acc = &mut out[(r / factor) * w..(r / factor + 1) * w];
        for (c, v) in row.iter().enumerate() {
            acc[c / factor] += v;
        }
    }
    let n = (factor * factor) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Raster::new(
        fine.variable,
        fine.resolution_m * factor as u32,
        fine.day,
        h,
        w,
        out,
    )
}

/// Majority vote over each block of a land-cover raster; ties go to the
/// lowest code.
pub fn aggregate_majority(fine: &Raster, factor: usize) -> Result<Raster> {
    check_factor(fine, factor)?;
    let (h, w) = (fine.height / factor, fine.width / factor);
    let mut out = Vec::with_capacity(h * w);
    for br in 0..h {
        for bc in 0..w {
            let mut counts = [0usize; 3];
            for r in br * factor..(br + 1) * factor {
                for c in bc * factor..(bc + 1) * factor {
                    let code = fine.get(r, c) as usize;
                    if code > 2 {
                        return Err(Error::Data(format!("invalid LC code {code}")));
                    }
                    counts[code] += 1;
                }
            }
            let mut best = 0;
            for k in 1..3 {
                if counts[k] > counts[best] {
                    best = k;
                }
            }
            out.push(best as f64);
        }
    }
    Raster::new(
        fine.variable,
        fine.resolution_m * factor as u32,
        fine.day,
        h,
        w,
        out,
    )
}

/// Adds iid zero-mean Gaussian noise of standard deviation `sd`, then clamps
/// SM to `[0, 0.6]` and PPT/LAI to `>= 0`. Draws are taken in row-major
/// order from `ChaCha8Rng::seed_from_u64(seed)`.
pub fn add_gaussian_noise(r: &Raster, sd: f64, seed: u64) -> Result<Raster> {
    if r.variable == Variable::LC {
        return Err(Error::Argument("land cover is never noised".into()));
    }
    if !(sd >= 0.0) {
        return Err(Error::Argument(format!(
            "noise standard deviation must be >= 0, got {sd}"
        )));
    }
    if sd == 0.0 {
        return Ok(r.clone());
    }
    let mut rng = seed::rng(seed);
    let clamp: fn(f64) -> f64 = match r.variable {
        Variable::SM => |v| v.clamp(0.0, SM_MAX),
        Variable::PPT | Variable::LAI => |v| v.max(0.0),
        _ => |v| v,
    };
    let values = r
        .values
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            clamp(v + sd * z)
        })
        .collect();
    Ok(Raster {
        values,
        ..r.clone()
    })
}

// ---------------------------------------------------------------------------
// TDR-CSV

pub fn to_tdr_csv(r: &Raster) -> String {
    let mut s = format!(
        "#tdr,v1,{},{},{},{},{}\n",
        r.variable, r.resolution_m, r.day, r.height, r.width
    );
    for row in r.values.chunks(r.width) {
        let mut first = true;
        for v in row {
            if !first {
                s.push(',');
            }
            first = false;
            // Display for f64 is the shortest round-trip representation.
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn from_tdr_csv(text: &str) -> std::result::Result<Raster, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 7 || fields[0] != "#tdr" || fields[1] != "v1" {
        return Err(format!("bad header {header:?}"));
    }
    let variable: Variable = fields[2].parse().map_err(|e: Error| e.to_string())?;
    let num = |i: usize| -> std::result::Result<u64, String> {
        fields[i]
            .parse::<u64>()
            .map_err(|e| format!("header field {i}: {e}"))
    };
    let (resolution_m, day, height, width) = (num(3)?, num(4)?, num(5)?, num(6)?);
    let mut values = Vec::with_capacity((height * width) as usize);
    let mut rows = 0;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        rows += 1;
        let before = values.len();
        for tok in line.split(',') {
            values.push(
                tok.parse::<f64>()
                    .map_err(|e| format!("row {rows}: {tok:?}: {e}"))?,
            );
        }
        if values.len() - before != width as usize {
            return Err(format!("row {rows} has {} values", values.len() - before));
        }
    }
    if rows != height {
        return Err(format!("expected {height} rows, found {rows}"));
    }
    Raster::new(
        variable,
        resolution_m as u32,
        day as u32,
        height as usize,
        width as usize,
        values,
    )
    .map_err(|e| e.to_string())
}

pub fn write_tdr(r: &Raster, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(to_tdr_csv(r).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_tdr(path: &Path) -> Result<Raster> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_tdr_csv(&text).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_raster(h: usize, w: usize, seed: u64) -> Raster {
        let mut rng = seed::rng(seed);
        let v = (0..h * w).map(|_| rng.random::<f64>()).collect();
        Raster::new(Variable::LST, 1000, 1, h, w, v).unwrap()
    }

    #[test]
    fn constant_aggregates_to_constant() {
        let r = Raster::filled(Variable::SM, 200, 3, 10, 10, 0.2).unwrap();
        let a = aggregate_block_mean(&r, 5).unwrap();
        assert_eq!((a.height, a.width, a.resolution_m, a.day), (2, 2, 1000, 3));
        assert!(a.values().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn two_by_two_mean() {
        let r = Raster::new(Variable::SM, 200, 1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = aggregate_block_mean(&r, 2).unwrap();
        assert_eq!(a.values().len(), 1);
        assert!((a.values()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn block_mean_matches_naive_loop() {
        let r = random_raster(50, 50, 11);
        let a = aggregate_block_mean(&r, 10).unwrap();
        for br in 0..5 {
            for bc in 0..5 {
                let mut s = 0.0;
                for i in 0..10 {
                    for j in 0..10 {
                        s += r.get(br * 10 + i, bc * 10 + j);
                    }
                }
                assert!((a.get(br, bc) - s / 100.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregation_errors() {
        let r = random_raster(10, 10, 1);
        assert!(matches!(aggregate_block_mean(&r, 1), Err(Error::Argument(_))));
        assert!(matches!(aggregate_block_mean(&r, 3), Err(Error::Dimension(_))));
    }

    #[test]
    fn majority_ties_to_lowest_code() {
        let v = vec![1.0, 2.0, 2.0, 1.0];
        let r = Raster::new(Variable::LC, 200, 1, 2, 2, v).unwrap();
        assert_eq!(aggregate_majority(&r, 2).unwrap().values(), &[1.0]);
        let r = Raster::new(Variable::LC, 200, 1, 2, 2, vec![0.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(aggregate_majority(&r, 2).unwrap().values(), &[2.0]);
    }

    #[test]
    fn zero_sd_is_identity() {
        let r = random_raster(7, 9, 3);
        assert_eq!(add_gaussian_noise(&r, 0.0, 5).unwrap(), r);
    }

    #[test]
    fn noise_statistics() {
        let r = Raster::filled(Variable::LST, 1000, 1, 1000, 1000, 0.0).unwrap();
        let n = add_gaussian_noise(&r, 0.02, 99).unwrap();
        let m = n.mean();
        let sd = (n.values().iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1e6).sqrt();
        assert!(m.abs() < 3.0 * 0.02 / 1000.0, "mean {m}");
        assert!((sd - 0.02).abs() < 0.01 * 0.02, "sd {sd}");
    }

    #[test]
    fn noise_is_deterministic_and_changes_values() {
        let r = random_raster(10, 10, 4);
        let a = add_gaussian_noise(&r, 0.5, 17).unwrap();
        let b = add_gaussian_noise(&r, 0.5, 17).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().zip(r.values()).any(|(x, y)| x != y));
    }

    #[test]
    fn noise_clamps_and_rejects() {
        let sm = Raster::filled(Variable::SM, 10000, 1, 20, 20, 0.0).unwrap();
        let n = add_gaussian_noise(&sm, 1.0, 1).unwrap();
        n.check_physical().unwrap();
        let lc = Raster::filled(Variable::LC, 1000, 1, 2, 2, 0.0).unwrap();
        assert!(matches!(add_gaussian_noise(&lc, 0.1, 1), Err(Error::Argument(_))));
        assert!(matches!(add_gaussian_noise(&sm, -1.0, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn centroids() {
        let g1 = GridGeometry::new(50.0, (0.0, 0.0), 1000).unwrap();
        assert_eq!(g1.pixel_centroid(0, 0).unwrap(), (0.5, 0.5));
        let g10 = GridGeometry::new(50.0, (0.0, 0.0), 10000).unwrap();
        assert_eq!(g10.pixel_centroid(4, 4).unwrap(), (45.0, 45.0));
        let g200 = GridGeometry::new(50.0, (0.0, 0.0), 200).unwrap();
        let (x, y) = g200.pixel_centroid(124, 124).unwrap();
        assert!((x - 24.9).abs() < 1e-12 && (y - 24.9).abs() < 1e-12);
        assert!(matches!(g1.pixel_centroid(50, 0), Err(Error::Index { .. })));
        assert_eq!((g200.size(), g1.size(), g10.size()), (250, 50, 5));
        assert!(GridGeometry::new(50.0, (0.0, 0.0), 300).is_err());
    }

    #[test]
    fn tdr_round_trip() {
        let r = random_raster(3, 4, 8);
        let text = to_tdr_csv(&r);
        assert!(text.starts_with("#tdr,v1,LST,1000,1,3,4\n"));
        assert_eq!(from_tdr_csv(&text).unwrap(), r);
        assert!(from_tdr_csv("#tdr,v1,LST,1000,1,2,2\n1,2\n").is_err());
    }

    proptest! {
        #[test]
        fn aggregation_commutes_with_affine(a in -5.0f64..5.0, b in -5.0f64..5.0, seed in 0u64..1000) {
            let r = random_raster(20, 20, seed);
            let lhs = aggregate_block_mean(&r.map(|v| a * v + b), 4).unwrap();
            let rhs = aggregate_block_mean(&r, 4).unwrap().map(|v| a * v + b);
            for (x, y) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn aggregation_composes_and_preserves_mean(seed in 0u64..1000) {
            let r = random_raster(20, 20, seed);
            let two_step = aggregate_block_mean(&aggregate_block_mean(&r, 2).unwrap(), 5).unwrap();
            let one_step = aggregate_block_mean(&r, 10).unwrap();
            for (x, y) in two_step.values().iter().zip(one_step.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((one_step.mean() - r.mean()).abs() < 1e-12);
        }
    }
}
