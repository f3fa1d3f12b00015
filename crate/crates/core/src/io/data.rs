use std::path::Path;

use nalgebra::DMatrix;

use super::{comment_lines, parse_key_values};
use crate::error::{Error, Result};
use crate::geometry::{project_sinusoidal, LocationSet};

/// How the two coordinate columns are read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoordinateMode {
    /// `x,y` planar columns.
    Planar,
    /// `lon,lat` degrees projected sinusoidally with this radius (km).
    Sinusoidal { radius_km: f64 },
}

/// Columns with a fixed meaning; every other column is a covariate.
const COORD_PLANAR: [&str; 2] = ["x", "y"];
const COORD_LONLAT: [&str; 2] = ["lon", "lat"];
const RESPONSE: &str = "response";
const W_TRUE: &str = "w_true";
const HOLDOUT: &str = "holdout";

/// Parsed data file in row order.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSet {
    pub locs: LocationSet,
    pub covariate_names: Vec<String>,
    /// `n × q` covariates, without the intercept.
    pub covariates: DMatrix<f64>,
    pub response: Option<Vec<f64>>,
    pub w_true: Option<Vec<f64>>,
    pub holdout: Option<Vec<bool>>,
    /// `key=value` pairs from the leading comment lines.
    pub meta: Vec<(String, String)>,
}

impl DataSet {
    pub fn len(&self) -> usize {
        self.locs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locs.is_empty()
    }

    /// Design matrix `[1, covariates]`.
    pub fn design(&self) -> DMatrix<f64> {
        let (n, q) = self.covariates.shape();
        DMatrix::from_fn(n, q + 1, |i, j| if j == 0 { 1.0 } else { self.covariates[(i, j - 1)] })
    }

    /// Rows in the given order; coordinates keep their raw positions in
    /// `id_map` relative to the subset.
    pub fn subset(&self, rows: &[usize]) -> Result<DataSet> {
        let coords = rows.iter().map(|&r| self.locs.coord(r)).collect();
        let pick = |v: &Vec<f64>| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        Ok(DataSet {
            locs: LocationSet::with_provenance(coords, self.locs.provenance())?,
            covariate_names: self.covariate_names.clone(),
            covariates: DMatrix::from_fn(rows.len(), self.covariates.ncols(), |i, j| self.covariates[(rows[i], j)]),
            response: self.response.as_ref().map(pick),
            w_true: self.w_true.as_ref().map(pick),
            holdout: self.holdout.as_ref().map(|h| rows.iter().map(|&r| h[r]).collect()),
            meta: self.meta.clone(),
        })
    }

    /// Rows flagged (or not) as held out; all rows count as training when
    /// there is no holdout column.
    pub fn rows_where_holdout(&self, flag: bool) -> Vec<usize> {
        match &self.holdout {
            Some(h) => (0..self.len()).filter(|&i| h[i] == flag).collect(),
            None if !flag => (0..self.len()).collect(),
            None => Vec::new(),
        }
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn parse_field(value: &str, row: usize, column: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Format(format!("row {row}, column '{column}': expected a finite number, got '{value}'")))
}

/// Reads a data CSV. A header is required; lines starting with `#` are
/// comments. Coordinates come from `x,y`, or from `lon,lat` when `mode` is
/// sinusoidal. `response`, `w_true` and `holdout` are optional; remaining
/// columns are covariates in file order.
pub fn read_data(path: &Path, mode: CoordinateMode) -> Result<DataSet> {
    let meta = comment_lines(path)?.iter().flat_map(|l| parse_key_values(l)).collect();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let coord_names = match mode {
        CoordinateMode::Planar => COORD_PLANAR,
        CoordinateMode::Sinusoidal { .. } => COORD_LONLAT,
    };
    let (Some(cx), Some(cy)) = (find(coord_names[0]), find(coord_names[1])) else {
        let hint = if mode == CoordinateMode::Planar && find("lon").is_some() {
            " (lon/lat columns need --project sinusoidal)"
        } else {
            ""
        };
        return Err(Error::Format(format!(
            "{}: missing coordinate columns '{}' and '{}'{hint}",
            path.display(),
            coord_names[0],
            coord_names[1]
        )));
    };
    let reserved: Vec<&str> = coord_names.iter().copied().chain([RESPONSE, W_TRUE, HOLDOUT]).collect();
    let cov_cols: Vec<usize> = (0..header.len()).filter(|&c| !reserved.contains(&header[c].as_str())).collect();
    let (cr, cw, ch) = (find(RESPONSE), find(W_TRUE), find(HOLDOUT));

    let mut coords = Vec::new();
    let mut covs = Vec::new();
    let (mut resp, mut wtrue, mut hold) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let get = |c: usize| parse_field(rec.get(c).unwrap_or(""), row, &header[c]);
        coords.push([get(cx)?, get(cy)?]);
        for &c in &cov_cols {
            covs.push(get(c)?);
        }
        if let Some(c) = cr {
            resp.push(get(c)?);
        }
        if let Some(c) = cw {
            wtrue.push(get(c)?);
        }
        if let Some(c) = ch {
            hold.push(match rec.get(c).unwrap_or("") {
                "0" | "false" => false,
                "1" | "true" => true,
                other => return Err(Error::Format(format!("row {row}, column 'holdout': expected 0 or 1, got '{other}'"))),
            });
        }
    }
    if coords.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }
    let n = coords.len();
    let locs = match mode {
        CoordinateMode::Planar => LocationSet::new(coords)?,
        CoordinateMode::Sinusoidal { radius_km } => project_sinusoidal(&coords, radius_km)?,
    };
    Ok(DataSet {
        locs,
        covariate_names: cov_cols.iter().map(|&c| header[c].clone()).collect(),
        covariates: DMatrix::from_row_slice(n, cov_cols.len(), &covs),
        response: cr.map(|_| resp),
        w_true: cw.map(|_| wtrue),
        holdout: ch.map(|_| hold),
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_columns_by_role() {
        let f = file("# note seed=4\nx,y,elev,response,holdout\n0.1,0.2,3,1.5,0\n0.3,0.4,5,2.5,1\n");
        let d = read_data(f.path(), CoordinateMode::Planar).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.covariate_names, vec!["elev"]);
        assert_eq!(d.design(), DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 1.0, 5.0]));
        assert_eq!(d.response, Some(vec![1.5, 2.5]));
        assert_eq!(d.rows_where_holdout(true), vec![1]);
        assert_eq!(d.meta_value("seed"), Some("4"));
        let s = d.subset(&[1]).unwrap();
        assert_eq!(s.locs.coord(0), [0.3, 0.4]);
    }

    #[test]
    fn lonlat_needs_projection() {
        let f = file("lon,lat\n10,20\n");
        let err = read_data(f.path(), CoordinateMode::Planar).unwrap_err().to_string();
        assert!(err.contains("--project sinusoidal"), "{err}");
        let d = read_data(f.path(), CoordinateMode::Sinusoidal { radius_km: 6371.0 }).unwrap();
        assert!(d.locs.coord(0)[0] > 0.0);
    }

    #[test]
    fn bad_values_name_row_and_column() {
        let f = file("x,y,response\n0,0,1\n0,1,abc\n");
        let err = read_data(f.path(), CoordinateMode::Planar).unwrap_err().to_string();
        assert!(err.contains("row 1") && err.contains("response"), "{err}");
    }
}
