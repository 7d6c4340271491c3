//! Gridded replicate data: the CSV-grid file format, log-standardisation and
//! the alternating train/test split.
//!
//! # CSV-grid format
//!
//! ```text
//! # {"format":"csv-grid","nx":2,"ny":2,"lon":[0.0,1.0],"lat":[50.0,51.0]}
//! t,v0,v1,v2,v3
//! 0,1.5,2.25,,3.0
//! 1,1.75,2.5,,2.0
//! ```
//!
//! The first line is `#` followed by a JSON header with the grid shape and the
//! axis coordinates. Grid cell `j = iy * nx + ix` sits at `(lon[ix], lat[iy])`.
//! The header may list land cells explicitly under `"land"`; a column that is
//! blank (or `NaN`) in every row is also treated as land. The `t` column holds
//! an optional ordinal day index and may be left blank.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
    pub lon: Vec<f64>,
    pub lat: Vec<f64>,
}

impl GridShape {
    pub fn regular(nx: usize, ny: usize, x0: f64, y0: f64, dx: f64, dy: f64) -> Self {
        GridShape {
            nx,
            ny,
            lon: (0..nx).map(|i| x0 + i as f64 * dx).collect(),
            lat: (0..ny).map(|i| y0 + i as f64 * dy).collect(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_point(&self, cell: usize) -> Point {
        Point::new(self.lon[cell % self.nx], self.lat[cell / self.nx])
    }

    /// `(min_x, min_y, max_x, max_y)` of the grid coordinates.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let fold = |v: &[f64]| {
            v.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
        };
        let (x0, x1) = fold(&self.lon);
        let (y0, y1) = fold(&self.lat);
        (x0, y0, x1, y1)
    }

    /// Smallest spacing between adjacent grid coordinates on either axis.
    pub fn min_spacing(&self) -> f64 {
        let gaps = |v: &[f64]| {
            v.windows(2)
                .map(|w| (w[1] - w[0]).abs())
                .fold(f64::INFINITY, f64::min)
        };
        gaps(&self.lon).min(gaps(&self.lat))
    }
}

/// Replicated observations on the ocean cells of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDataset {
    pub grid: GridShape,
    /// `land_mask[cell]` is true for cells without observations.
    pub land_mask: Vec<bool>,
    /// Grid cell of each observed location.
    pub cells: Vec<usize>,
    pub locations: Vec<Point>,
    /// `replicates[k][j]`: replicate `k` at observed location `j`.
    pub replicates: Vec<Vec<f64>>,
    pub timestamps: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    nx: usize,
    ny: usize,
    lon: Vec<f64>,
    lat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    land: Vec<usize>,
}

impl GridDataset {
    /// Builds a dataset; `replicates` rows are over the ocean cells in cell order.
    pub fn new(
        grid: GridShape,
        land_mask: Vec<bool>,
        replicates: Vec<Vec<f64>>,
        timestamps: Option<Vec<f64>>,
    ) -> Result<Self> {
        if grid.lon.len() != grid.nx || grid.lat.len() != grid.ny {
            return Err(Error::invalid("grid axis lengths do not match nx/ny"));
        }
        if land_mask.len() != grid.n_cells() {
            return Err(Error::invalid("land mask length differs from the cell count"));
        }
        let cells: Vec<usize> = (0..grid.n_cells()).filter(|&c| !land_mask[c]).collect();
        if let Some(row) = replicates.iter().position(|r| r.len() != cells.len()) {
            return Err(Error::invalid(format!(
                "replicate {row} has {} entries, expected {}",
                replicates[row].len(),
                cells.len()
            )));
        }
        if let Some(t) = &timestamps {
            if t.len() != replicates.len() {
                return Err(Error::invalid("timestamp count differs from replicate count"));
            }
        }
        let locations = cells.iter().map(|&c| grid.cell_point(c)).collect();
        Ok(GridDataset {
            grid,
            land_mask,
            cells,
            locations,
            replicates,
            timestamps,
        })
    }

    pub fn n_replicates(&self) -> usize {
        self.replicates.len()
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    /// Observed-location index of each grid cell (`None` on land).
    pub fn location_of_cell(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.grid.n_cells()];
        for (j, &c) in self.cells.iter().enumerate() {
            map[c] = Some(j);
        }
        map
    }

    fn with_replicates(&self, replicates: Vec<Vec<f64>>, timestamps: Option<Vec<f64>>) -> Self {
        GridDataset {
            replicates,
            timestamps,
            ..self.clone()
        }
    }

    /// Errors on the first non-finite or non-positive value.
    pub fn check_positive(&self) -> Result<()> {
        for (k, row) in self.replicates.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::NonPositiveValue {
                        row: k,
                        column: self.cells[j],
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }
}

fn parse_value(field: &str) -> Option<f64> {
    let f = field.trim();
    if f.is_empty() {
        return None;
    }
    match f.parse::<f64>() {
        Ok(v) if v.is_nan() => None,
        Ok(v) => Some(v),
        Err(_) => Some(f64::NAN),
    }
}

/// Loads a CSV-grid file of raw `H_s` values (metres, strictly positive).
pub fn load_grid_dataset(path: &Path) -> Result<GridDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let data = parse_grid(&text, path)?;
    data.check_positive()?;
    Ok(data)
}

/// Parses CSV-grid text without the positivity check (standardised files hold
/// values of either sign).
pub fn parse_grid(text: &str, path: &Path) -> Result<GridDataset> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let json = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| perr(1, "missing '#' JSON header line".into()))?;
    let header: Header =
        serde_json::from_str(json.trim()).map_err(|e| perr(1, format!("bad header: {e}")))?;
    if header.format != "csv-grid" {
        return Err(perr(1, format!("unsupported format {:?}", header.format)));
    }
    if header.lon.len() != header.nx || header.lat.len() != header.ny || header.nx * header.ny == 0 {
        return Err(perr(1, "header grid shape does not match coordinate lists".into()));
    }
    let grid = GridShape {
        nx: header.nx,
        ny: header.ny,
        lon: header.lon,
        lat: header.lat,
    };
    let n = grid.n_cells();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(rest.as_bytes());
    let columns = reader
        .headers()
        .map_err(|e| perr(2, e.to_string()))?
        .clone();
    if columns.len() != n + 1 {
        return Err(perr(
            2,
            format!("expected {} columns (t + {n} cells), found {}", n + 1, columns.len()),
        ));
    }

    let mut times: Vec<Option<f64>> = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k + 3;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        if rec.len() != n + 1 {
            return Err(perr(line, format!("row has {} fields, expected {}", rec.len(), n + 1)));
        }
        let t = parse_value(&rec[0]);
        if matches!(t, Some(v) if v.is_nan()) {
            return Err(perr(line, format!("bad timestamp {:?}", &rec[0])));
        }
        times.push(t);
        let row: Vec<Option<f64>> = (1..=n).map(|c| parse_value(&rec[c])).collect();
        if let Some(c) = row.iter().position(|v| matches!(v, Some(x) if x.is_nan())) {
            return Err(perr(line, format!("unparsable value in column v{c}")));
        }
        rows.push(row);
    }

    let mut land = vec![false; n];
    for &c in &header.land {
        if c >= n {
            return Err(perr(1, format!("land cell {c} outside the grid")));
        }
        land[c] = true;
    }
    if !rows.is_empty() {
        for (c, is_land) in land.iter_mut().enumerate() {
            let blanks = rows.iter().filter(|r| r[c].is_none()).count();
            if blanks == rows.len() {
                *is_land = true;
            } else if blanks > 0 || *is_land {
                let k = rows
                    .iter()
                    .position(|r| r[c].is_none() != *is_land)
                    .unwrap_or(0);
                return Err(perr(
                    k + 3,
                    format!("cell v{c} is blank in some rows but not all"),
                ));
            }
        }
    }
    let replicates: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|r| {
            r.into_iter()
                .zip(&land)
                .filter(|(_, &l)| !l)
                .map(|(v, _)| v.unwrap())
                .collect()
        })
        .collect();
    let timestamps = if !times.is_empty() && times.iter().all(Option::is_some) {
        Some(times.into_iter().map(Option::unwrap).collect())
    } else if times.iter().all(Option::is_none) {
        None
    } else {
        return Err(perr(3, "timestamps must be given for all rows or none".into()));
    };
    GridDataset::new(grid, land, replicates, timestamps)
}

/// Serialises to CSV-grid text. Values use the shortest round-trip form.
pub fn format_grid(data: &GridDataset) -> String {
    let land: Vec<usize> = (0..data.grid.n_cells()).filter(|&c| data.land_mask[c]).collect();
    let header = Header {
        format: "csv-grid".into(),
        nx: data.grid.nx,
        ny: data.grid.ny,
        lon: data.grid.lon.clone(),
        lat: data.grid.lat.clone(),
        land,
    };
    let mut out = String::new();
    out.push_str("# ");
    out.push_str(&serde_json::to_string(&header).expect("header serialises"));
    out.push('\n');
    out.push('t');
    for c in 0..data.grid.n_cells() {
        write!(out, ",v{c}").unwrap();
    }
    out.push('\n');
    let loc = data.location_of_cell();
    for (k, row) in data.replicates.iter().enumerate() {
        if let Some(t) = &data.timestamps {
            write!(out, "{}", t[k]).unwrap();
        }
        for l in &loc {
            out.push(',');
            if let Some(j) = l {
                write!(out, "{}", row[*j]).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_grid_dataset(data: &GridDataset, path: &Path) -> Result<()> {
    std::fs::write(path, format_grid(data)).map_err(|e| Error::io(path, e))
}

/// Per-location sample mean and standard deviation (n−1 convention).
pub fn marginal_stats(rows: &[Vec<f64>], n_locations: usize) -> Result<MarginalStats> {
    let k = rows.len();
    if k < 2 {
        return Err(Error::invalid("at least two replicates are needed for a sample variance"));
    }
    let mut mean = vec![0.0; n_locations];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let mut var = vec![0.0; n_locations];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut sd = Vec::with_capacity(n_locations);
    for (j, s) in var.into_iter().enumerate() {
        let v = s / (k - 1) as f64;
        // relative to the mean magnitude so that constant columns are caught despite rounding
        if !(v > 1e-28 * (1.0 + mean[j] * mean[j])) {
            return Err(Error::ZeroVariance { location: j });
        }
        sd.push(v.sqrt());
    }
    Ok(MarginalStats { mean, sd })
}

/// Centers and scales every location to sample mean 0 and sample variance 1.
pub fn standardize(data: &GridDataset) -> Result<(GridDataset, MarginalStats)> {
    let stats = marginal_stats(&data.replicates, data.n_locations())?;
    let rows = data
        .replicates
        .iter()
        .map(|r| {
            r.iter()
                .zip(stats.mean.iter().zip(&stats.sd))
                .map(|(v, (m, s))| (v - m) / s)
                .collect()
        })
        .collect();
    Ok((data.with_replicates(rows, data.timestamps.clone()), stats))
}

/// `(log H_s − mean) / sd` per location; the returned stats are on the log scale.
pub fn log_standardize(data: &GridDataset) -> Result<(GridDataset, MarginalStats)> {
    data.check_positive()?;
    let logs = data
        .replicates
        .iter()
        .map(|r| r.iter().map(|v| v.ln()).collect())
        .collect();
    standardize(&data.with_replicates(logs, data.timestamps.clone()))
}

/// Even-index replicates go to the training set, odd-index ones to the test set.
pub fn split_alternating(data: &GridDataset) -> (GridDataset, GridDataset) {
    let pick = |parity: usize| {
        let rows = data
            .replicates
            .iter()
            .enumerate()
            .filter(|(k, _)| k % 2 == parity)
            .map(|(_, r)| r.clone())
            .collect();
        let times = data.timestamps.as_ref().map(|t| {
            t.iter()
                .enumerate()
                .filter(|(k, _)| k % 2 == parity)
                .map(|(_, &v)| v)
                .collect()
        });
        data.with_replicates(rows, times)
    };
    (pick(0), pick(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("test.csv")
    }

    const SMALL: &str = "# {\"format\":\"csv-grid\",\"nx\":2,\"ny\":2,\"lon\":[0,1],\"lat\":[10,11]}\n\
t,v0,v1,v2,v3\n0,1.5,2,2.5,3\n1,1.25,2.5,2,3.5\n2,1,1,1,1\n";

    #[test]
    fn reads_small_grid() {
        let d = parse_grid(SMALL, p()).unwrap();
        assert_eq!(d.n_locations(), 4);
        assert_eq!(d.n_replicates(), 3);
        assert_eq!(d.locations[3], Point::new(1.0, 11.0));
        assert_eq!(d.timestamps, Some(vec![0.0, 1.0, 2.0]));
    }

    #[test]
    fn blank_column_is_land() {
        let text = "# {\"format\":\"csv-grid\",\"nx\":2,\"ny\":2,\"lon\":[0,1],\"lat\":[0,1]}\n\
t,v0,v1,v2,v3\n,1,,2,3\n,2,NaN,3,4\n";
        let d = parse_grid(text, p()).unwrap();
        assert_eq!(d.n_locations(), 3);
        assert_eq!(d.land_mask, vec![false, true, false, false]);
        assert_eq!(d.cells, vec![0, 2, 3]);
        assert!(d.timestamps.is_none());
    }

    #[test]
    fn partial_blank_is_rejected() {
        let text = "# {\"format\":\"csv-grid\",\"nx\":2,\"ny\":1,\"lon\":[0,1],\"lat\":[0]}\n\
t,v0,v1\n0,1,\n1,2,3\n";
        assert!(matches!(parse_grid(text, p()), Err(Error::Parse { .. })));
    }

    #[test]
    fn negative_value_names_the_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("neg.csv");
        std::fs::write(
            &path,
            "# {\"format\":\"csv-grid\",\"nx\":2,\"ny\":1,\"lon\":[0,1],\"lat\":[0]}\nt,v0,v1\n0,1,2\n1,3,-1\n",
        )
        .unwrap();
        match load_grid_dataset(&path) {
            Err(Error::NonPositiveValue { row, column, value }) => {
                assert_eq!((row, column, value), (1, 1, -1.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn row_length_mismatch_is_rejected() {
        let text = "# {\"format\":\"csv-grid\",\"nx\":2,\"ny\":1,\"lon\":[0,1],\"lat\":[0]}\nt,v0,v1\n0,1\n";
        assert!(parse_grid(text, p()).is_err());
        assert!(parse_grid("t,v0\n0,1\n", p()).is_err());
    }

    #[test]
    fn constant_column_has_zero_variance() {
        let d = parse_grid(SMALL, p()).unwrap();
        let d = d.with_replicates(vec![vec![2.0, 1.0, 1.0, 1.0], vec![2.0, 2.0, 3.0, 1.5]], None);
        assert!(matches!(log_standardize(&d), Err(Error::ZeroVariance { location: 0 })));
    }

    #[test]
    fn log_standardize_hand_value() {
        let grid = GridShape::regular(1, 1, 0.0, 0.0, 1.0, 1.0);
        let e = std::f64::consts::E;
        let d = GridDataset::new(grid, vec![false], vec![vec![e], vec![e.powi(3)]], None).unwrap();
        let (s, stats) = log_standardize(&d).unwrap();
        assert!((stats.mean[0] - 2.0).abs() < 1e-15);
        assert!((stats.sd[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.replicates[0][0] + 0.5f64.sqrt()).abs() < 1e-15);
        assert!((s.replicates[1][0] - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn split_counts() {
        let d = parse_grid(SMALL, p()).unwrap();
        for k in [0usize, 1, 5, 1170] {
            let rows = (0..k).map(|i| vec![1.0 + i as f64; 4]).collect();
            let dk = d.with_replicates(rows, None);
            let (a, b) = split_alternating(&dk);
            assert_eq!(a.n_replicates(), k.div_ceil(2));
            assert_eq!(b.n_replicates(), k / 2);
        }
    }

    fn dataset_strategy() -> impl Strategy<Value = GridDataset> {
        (1usize..4, 1usize..4, 2usize..8).prop_flat_map(|(nx, ny, k)| {
            let n = nx * ny;
            (
                prop::collection::vec(prop::collection::vec(1e-3f64..20.0, n), k),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(rows, land)| {
                    let mut land = land;
                    land[0] = false;
                    let grid = GridShape::regular(nx, ny, -3.5, 40.25, 0.75, 0.75);
                    let rows = rows
                        .into_iter()
                        .map(|r| r.into_iter().zip(&land).filter(|(_, &l)| !l).map(|(v, _)| v).collect())
                        .collect();
                    GridDataset::new(grid, land, rows, None).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn write_then_load_is_exact(d in dataset_strategy()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.csv");
            write_grid_dataset(&d, &path).unwrap();
            let back = load_grid_dataset(&path).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn standardized_moments(d in dataset_strategy()) {
            let (s, _) = log_standardize(&d).unwrap();
            let stats = marginal_stats(&s.replicates, s.n_locations()).unwrap();
            for j in 0..s.n_locations() {
                prop_assert!(stats.mean[j].abs() < 1e-12);
                prop_assert!((stats.sd[j] - 1.0).abs() < 1e-12);
            }
            let (t, _) = standardize(&s).unwrap();
            for (a, b) in s.replicates.iter().flatten().zip(t.replicates.iter().flatten()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn split_is_partition(d in dataset_strategy()) {
            let (a, b) = split_alternating(&d);
            let mut merged = Vec::new();
            for k in 0..d.n_replicates() {
                merged.push(if k % 2 == 0 { a.replicates[k / 2].clone() } else { b.replicates[k / 2].clone() });
            }
            prop_assert_eq!(merged, d.replicates.clone());
        }
    }
}
