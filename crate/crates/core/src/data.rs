//! Dataset storage, CSV ingestion and column standardization.
//!
//! Predictors are held column-major so solvers can walk a column as a
//! contiguous slice. The intercept is never stored; solvers add it
//! implicitly. Predictor sets use 1-based indices, index 0 being reserved
//! for the intercept.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sorted, duplicate-free set of 1-based predictor indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredictorSet(Vec<usize>);

impl PredictorSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Builds a set from indices in any order. Rejects 0 and duplicates.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.first() == Some(&0) {
            return Err(Error::InvalidArgument(
                "predictor index 0 is reserved for the intercept".into(),
            ));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate predictor index".into()));
        }
        Ok(Self(indices))
    }

    /// Builds a set and checks every member is at most `p`.
    pub fn with_bound(indices: Vec<usize>, p: usize) -> Result<Self> {
        let set = Self::new(indices)?;
        if let Some(&max) = set.0.last() {
            if max > p {
                return Err(Error::InvalidArgument(format!(
                    "predictor index {max} exceeds p = {p}"
                )));
            }
        }
        Ok(set)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// Zero-based column positions.
    pub fn columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&j| j - 1)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn is_subset(&self, other: &PredictorSet) -> bool {
        self.0.iter().all(|&j| other.contains(j))
    }

    pub fn is_superset(&self, other: &PredictorSet) -> bool {
        other.is_subset(self)
    }

    /// Parses "1,2,5" (blank means empty).
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches('{').trim_end_matches('}');
        if s.trim().is_empty() {
            return Ok(Self::empty());
        }
        let indices = s
            .split([',', ';', ' '])
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad predictor index `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(indices)
    }

    /// Comma-joined indices, e.g. `1,2,5`.
    pub fn joined(&self) -> String {
        self.0
            .iter()
            .map(|j| j.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for PredictorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.joined())
    }
}

impl FromIterator<usize> for PredictorSet {
    /// Collects indices, silently dropping duplicates. Panics on index 0.
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let set: BTreeSet<usize> = iter.into_iter().collect();
        assert!(!set.contains(&0), "predictor index 0 is reserved");
        Self(set.into_iter().collect())
    }
}

/// An n×p predictor matrix with a binary response.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
    standardized: bool,
    column_means: Vec<f64>,
    column_scales: Vec<f64>,
    names: Vec<String>,
}

impl Dataset {
    /// Builds an unstandardized dataset, validating shape, response and columns.
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset must have n >= 1 and p >= 1, got {n}x{p}"
            )));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if let Some(row) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryResponse { row: row + 1 });
        }
        if let Some(row) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonNumeric {
                row: row % n + 1,
                column: format!("x{}", row / n + 1),
            });
        }
        if n >= 2 {
            for j in 0..p {
                let col = x.column(j);
                let first = col[0];
                if col.iter().all(|&v| v == first) {
                    return Err(Error::ConstantPredictor { column: j + 1 });
                }
            }
        }
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Ok(Self {
            x,
            y,
            standardized: false,
            column_means: vec![0.0; p],
            column_scales: vec![1.0; p],
            names,
        })
    }

    /// Row-major convenience constructor.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Self::new(x, y)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: names.len(),
            });
        }
        self.names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    pub fn column_scales(&self) -> &[f64] {
        &self.column_scales
    }

    /// Zero-based column as a contiguous slice.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }

    pub fn mean_response(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.n() as f64
    }

    /// `intercept + x_i · coefs` for every row.
    pub fn linear_predictor(&self, intercept: f64, coefs: &[f64]) -> Result<Vec<f64>> {
        if coefs.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: coefs.len(),
            });
        }
        let mut eta = vec![intercept; self.n()];
        for (j, &b) in coefs.iter().enumerate() {
            if b != 0.0 {
                for (e, &v) in eta.iter_mut().zip(self.column(j)) {
                    *e += b * v;
                }
            }
        }
        Ok(eta)
    }

    /// Centers every column and scales it to unit sample standard deviation
    /// (divisor n − 1), recording the original statistics.
    pub fn standardize(&self) -> Result<Dataset> {
        if self.standardized {
            return Err(Error::AlreadyStandardized);
        }
        let n = self.n();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "standard deviation undefined for n = 1".into(),
            ));
        }
        let p = self.p();
        let mut x = self.x.clone();
        let mut means = Vec::with_capacity(p);
        let mut scales = Vec::with_capacity(p);
        for j in 0..p {
            let mut col = x.column_mut(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            col.iter_mut().for_each(|v| *v -= mean);
            // second centering pass removes the rounding left by the first
            let drift = col.iter().sum::<f64>() / n as f64;
            col.iter_mut().for_each(|v| *v -= drift);
            let ss: f64 = col.iter().map(|v| v * v).sum();
            let sd = (ss / (n - 1) as f64).sqrt();
            if !(sd > 0.0) {
                return Err(Error::ConstantPredictor { column: j + 1 });
            }
            col.iter_mut().for_each(|v| *v /= sd);
            means.push(mean + drift);
            scales.push(sd);
        }
        Ok(Dataset {
            x,
            y: self.y.clone(),
            standardized: true,
            column_means: means,
            column_scales: scales,
            names: self.names.clone(),
        })
    }

    /// Maps coefficients fitted on the standardized columns back to the
    /// original predictor scale.
    pub fn destandardize_coefficients(
        &self,
        intercept: f64,
        coefs: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if !self.standardized {
            return Err(Error::NotStandardized);
        }
        if coefs.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: coefs.len(),
            });
        }
        let raw: Vec<f64> = coefs
            .iter()
            .zip(&self.column_scales)
            .map(|(b, s)| b / s)
            .collect();
        let shift: f64 = raw
            .iter()
            .zip(&self.column_means)
            .map(|(b, m)| b * m)
            .sum();
        Ok((intercept - shift, raw))
    }

    /// Reconstructs the original predictor matrix of a standardized dataset.
    pub fn original_x(&self) -> DMatrix<f64> {
        let mut x = self.x.clone();
        if self.standardized {
            for j in 0..self.p() {
                let (m, s) = (self.column_means[j], self.column_scales[j]);
                x.column_mut(j).iter_mut().for_each(|v| *v = *v * s + m);
            }
        }
        x
    }

    /// Copies the given rows into a fresh unstandardized dataset whose
    /// predictor values are taken as-is.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let x = DMatrix::from_fn(rows.len(), self.p(), |i, j| self.x[(rows[i], j)]);
        let y = rows.iter().map(|&i| self.y[i]).collect();
        Dataset::new(x, y)?.with_names(self.names.clone())
    }

    /// Keeps only the given zero-based columns, as an unstandardized dataset.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Dataset> {
        let x = DMatrix::from_fn(self.n(), cols.len(), |i, j| self.x[(i, cols[j])]);
        let names = cols.iter().map(|&j| self.names[j].clone()).collect();
        Dataset::new(x, self.y.clone())?.with_names(names)
    }

    /// Reads a CSV with a header row; `response` names the 0/1 column and all
    /// other columns become predictors in file order.
    pub fn load_csv(path: impl AsRef<Path>, response: &str) -> Result<Dataset> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let ycol = header
            .iter()
            .position(|h| h == response)
            .ok_or_else(|| Error::MissingResponse(response.to_string()))?;
        let names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != ycol)
            .map(|(_, h)| h.clone())
            .collect();
        let p = names.len();
        let mut y = Vec::new();
        let mut values = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let row = row + 1;
            for (k, cell) in record.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumeric {
                    row,
                    column: header[k].clone(),
                })?;
                if k == ycol {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::NonBinaryResponse { row });
                    }
                    y.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        let n = y.len();
        let x = DMatrix::from_row_slice(n, p, &values);
        Dataset::new(x, y)?.with_names(names)
    }

    /// Writes the original-scale data as CSV with the response first.
    pub fn write_csv(&self, path: impl AsRef<Path>, response: &str) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv_to(file, response)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, sink: W, response: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec![response.to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let x = self.original_x();
        let mut buf = Vec::with_capacity(self.p() + 1);
        for i in 0..self.n() {
            buf.clear();
            buf.push(format!("{}", self.y[i]));
            buf.extend((0..self.p()).map(|j| format!("{:?}", x[(i, j)])));
            w.write_record(&buf)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv sink>".into(),
            source,
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn small() -> Dataset {
        Dataset::from_rows(
            &[vec![1.0, 4.0], vec![2.0, 1.0], vec![3.0, 7.0]],
            vec![0.0, 1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn predictor_set_sorts_and_rejects_duplicates() {
        let s = PredictorSet::new(vec![5, 2, 3]).unwrap();
        assert_eq!(s.indices(), &[2, 3, 5]);
        assert!(PredictorSet::new(vec![1, 1]).is_err());
        assert!(PredictorSet::new(vec![0, 1]).is_err());
        assert!(PredictorSet::with_bound(vec![4], 3).is_err());
        assert_eq!(PredictorSet::parse("{2,3,5}").unwrap(), s);
        assert_eq!(PredictorSet::parse("").unwrap(), PredictorSet::empty());
        assert_eq!(s.to_string(), "{2,3,5}");
    }

    #[test]
    fn subset_relations() {
        let a = PredictorSet::new(vec![1, 2]).unwrap();
        let b = PredictorSet::new(vec![1, 2, 7]).unwrap();
        assert!(a.is_subset(&b));
        assert!(b.is_superset(&a));
        assert!(!b.is_subset(&a));
        assert!(PredictorSet::empty().is_subset(&a));
    }

    #[test]
    fn load_small_csv() {
        let dir = tempdir();
        let path = dir.join("small.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "y,x1,x2\n0,1.0,2.0\n1,2.0,0.5\n1,3.0,1.5").unwrap();
        let d = Dataset::load_csv(&path, "y").unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.y(), &[0.0, 1.0, 1.0]);
        assert_eq!(d.column(0), &[1.0, 2.0, 3.0]);
        assert_eq!(d.names(), &["x1".to_string(), "x2".to_string()]);
    }

    #[test]
    fn load_rejects_non_binary_response() {
        let dir = tempdir();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "y,x1\n0,1\n2,3\n1,4\n").unwrap();
        let err = Dataset::load_csv(&path, "y").unwrap_err();
        assert_eq!(err.to_string(), "non-binary response at row 2");
    }

    #[test]
    fn load_rejects_constant_column_and_text() {
        let dir = tempdir();
        let path = dir.join("const.csv");
        std::fs::write(&path, "y,x1,x2,x3\n0,1,2,5\n1,2,3,5\n1,4,1,5\n").unwrap();
        let err = Dataset::load_csv(&path, "y").unwrap_err();
        assert!(err.to_string().contains("constant predictor"));

        let path = dir.join("text.csv");
        std::fs::write(&path, "y,x1\n0,1\n1,abc\n").unwrap();
        assert!(matches!(
            Dataset::load_csv(&path, "y").unwrap_err(),
            Error::NonNumeric { row: 2, .. }
        ));
        assert!(Dataset::load_csv(dir.join("missing.csv"), "y").is_err());
    }

    #[test]
    fn standardize_simple_column() {
        let d = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], vec![0.0, 1.0, 0.0])
            .unwrap();
        let s = d.standardize().unwrap();
        assert_eq!(s.column(0), &[-1.0, 0.0, 1.0]);
        assert_eq!(s.column_means(), &[2.0]);
        assert_eq!(s.column_scales(), &[1.0]);
        assert_eq!(s.y(), d.y());
        assert!(matches!(s.standardize(), Err(Error::AlreadyStandardized)));
    }

    #[test]
    fn standardize_rejects_single_row() {
        let d = Dataset::from_rows(&[vec![1.0, 2.0]], vec![1.0]).unwrap();
        assert!(d.standardize().is_err());
    }

    #[test]
    fn destandardize_identities() {
        let s = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], vec![0.0, 1.0, 0.0])
            .unwrap()
            .standardize()
            .unwrap();
        assert_eq!(s.destandardize_coefficients(0.0, &[0.0]).unwrap(), (0.0, vec![0.0]));
        let (b0, b) = s.destandardize_coefficients(0.0, &[1.0]).unwrap();
        assert_eq!(b, vec![1.0]);
        assert_eq!(b0, -2.0);
        assert!(s.destandardize_coefficients(0.0, &[1.0, 2.0]).is_err());
        assert!(small().destandardize_coefficients(0.0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn original_x_round_trips() {
        let d = small();
        let s = d.standardize().unwrap();
        let back = s.original_x();
        for (a, b) in back.iter().zip(d.x().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn tempdir() -> std::path::PathBuf {
        use std::sync::atomic::{AtomicUsize, Ordering};
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let dir = std::env::temp_dir().join(format!(
            "ssgic-data-{}-{}",
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::SeqCst)
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
