//! Tabular data: CSV ingestion, normalization, train/test splits and the
//! exact k-nearest-neighbour graph that drives augmentation.

use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Feature matrix plus optional labels and neighbourhood structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// M x n, row-major.
    pub features: Array2<f64>,
    pub feature_names: Vec<String>,
    /// Class id per row, `0..label_names.len()`.
    pub labels: Option<Vec<usize>>,
    pub label_names: Vec<String>,
    /// Unsupervised kNN lists, filled by [`Dataset::build_knn`].
    pub neighbors: Option<Vec<Vec<usize>>>,
    /// kNN computed within each label group; may be shorter than K.
    pub supervised_neighbors: Option<Vec<Vec<usize>>>,
    /// Column indices known to carry no signal (synthetic fixtures only).
    pub noise_features: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, feature_names: Vec<String>) -> Result<Self> {
        if feature_names.len() != features.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {v}")));
        }
        Ok(Dataset {
            features,
            feature_names,
            labels: None,
            label_names: Vec::new(),
            neighbors: None,
            supervised_neighbors: None,
            noise_features: Vec::new(),
        })
    }

    /// Attach integer labels; label names default to the decimal id.
    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        self.label_names = (0..classes).map(|c| c.to_string()).collect();
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Rows `idx` in the given order. Neighbour lists are dropped since
    /// their indices refer to the parent dataset.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            feature_names: self.feature_names.clone(),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            label_names: self.label_names.clone(),
            neighbors: None,
            supervised_neighbors: None,
            noise_features: self.noise_features.clone(),
        }
    }

    pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, label_column)
    }

    /// Parse a headered, comma-separated table. Row numbers in errors are
    /// 1-based data rows (the header is row 0).
    pub fn from_csv_reader<R: Read>(reader: R, label_column: Option<&str>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Csv(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let label_idx = match label_column {
            Some(name) => Some(
                header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::MissingLabelColumn(name.to_owned()))?,
            ),
            None => None,
        };
        let feature_names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_idx)
            .map(|(_, h)| h.clone())
            .collect();

        let mut values = Vec::new();
        let mut raw_labels = Vec::new();
        let mut rows = 0;
        for (r, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Csv(e.to_string()))?;
            let row = r + 1;
            if record.len() != header.len() {
                return Err(Error::RowWidth {
                    row,
                    expected: header.len(),
                    found: record.len(),
                });
            }
            for (c, cell) in record.iter().enumerate() {
                if Some(c) == label_idx {
                    raw_labels.push(cell.to_owned());
                    continue;
                }
                let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                    row,
                    column: header[c].clone(),
                    value: cell.to_owned(),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "row {row}, column {:?}",
                        header[c]
                    )));
                }
                values.push(v);
            }
            rows += 1;
        }
        let features = Array2::from_shape_vec((rows, feature_names.len()), values)
            .map_err(|e| Error::Csv(e.to_string()))?;
        let mut ds = Dataset::new(features, feature_names)?;
        if label_idx.is_some() {
            let (ids, names) = encode_labels(&raw_labels);
            ds.labels = Some(ids);
            ds.label_names = names;
        }
        Ok(ds)
    }

    /// Write features (and a `label` column when labels exist).
    pub fn to_csv_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.feature_names.clone();
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(l) = &self.labels {
                rec.push(self.label_names[l[i]].clone());
            }
            w.write_record(&rec).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    /// Fit normalization statistics on this dataset and apply them.
    pub fn normalize(&self, mode: NormalizeMode) -> (Dataset, Normalizer) {
        let stats = Normalizer::fit(&self.features, mode);
        let mut out = self.clone();
        out.features = stats.apply(&self.features);
        (out, stats)
    }

    /// Exact brute-force kNN under Euclidean distance, ties broken by lower
    /// index. With `supervised`, a second list is computed inside each label
    /// group.
    pub fn build_knn(&mut self, k: usize, supervised: bool) -> Result<()> {
        let m = self.len();
        if k == 0 || k >= m {
            return Err(Error::invalid(format!(
                "neighbour count K={k} must satisfy 1 <= K < M={m}"
            )));
        }
        if supervised && self.labels.is_none() {
            return Err(Error::invalid("supervised kNN requested but dataset has no labels"));
        }
        let x = &self.features;
        let all: Vec<usize> = (0..m).collect();
        self.neighbors = Some(
            (0..m)
                .into_par_iter()
                .map(|i| knn_among(x, i, &all, k))
                .collect(),
        );
        if supervised {
            let labels = self.labels.as_ref().expect("checked above");
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.n_classes().max(1)];
            for (i, &l) in labels.iter().enumerate() {
                groups[l].push(i);
            }
            self.supervised_neighbors = Some(
                (0..m)
                    .into_par_iter()
                    .map(|i| knn_among(x, i, &groups[labels[i]], k))
                    .collect(),
            );
        } else {
            self.supervised_neighbors = None;
        }
        Ok(())
    }

    /// Seeded partition into (train, test) with the index lists used.
    pub fn split(&self, spec: SplitSpec) -> Result<Split> {
        if !(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "train_fraction {} outside (0, 1]",
                spec.train_fraction
            )));
        }
        let m = self.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng::stream(spec.seed, Domain::Split, 0, 0));
        let n_train = ((spec.train_fraction * m as f64).round() as usize).clamp(1.min(m), m);
        let mut train_idx = order[..n_train].to_vec();
        let mut test_idx = order[n_train..].to_vec();
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        Ok(Split {
            train: self.subset(&train_idx),
            test: self.subset(&test_idx),
            train_idx,
            test_idx,
        })
    }
}

fn encode_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = raw.to_vec();
    names.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    });
    names.dedup();
    let ids = raw
        .iter()
        .map(|r| names.iter().position(|n| n == r).expect("name present"))
        .collect();
    (ids, names)
}

pub(crate) fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn knn_among(x: &Array2<f64>, i: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let xi = x.row(i);
    let mut d: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (sq_dist(xi, x.row(j)), j))
        .collect();
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if d.len() > k {
        d.select_nth_unstable_by(k - 1, by_dist);
        d.truncate(k);
    }
    d.sort_by(by_dist);
    d.into_iter().map(|(_, j)| j).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    Minmax,
    #[default]
    Zscore,
    /// Pass-through (statistics are the identity map).
    None,
}

impl std::str::FromStr for NormalizeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(NormalizeMode::Minmax),
            "zscore" => Ok(NormalizeMode::Zscore),
            "none" => Ok(NormalizeMode::None),
            other => Err(Error::invalid(format!(
                "unknown normalization {other:?} (expected minmax, zscore or none)"
            ))),
        }
    }
}

/// Frozen per-feature affine statistics: `x' = (x - offset) / scale`,
/// with zero-scale features mapped to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mode: NormalizeMode,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n: usize) -> Self {
        Normalizer {
            mode: NormalizeMode::None,
            offset: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn fit(x: &Array2<f64>, mode: NormalizeMode) -> Self {
        let n = x.ncols();
        if x.nrows() == 0 || mode == NormalizeMode::None {
            return Normalizer {
                mode,
                ..Self::identity(n)
            };
        }
        let (offset, scale) = x
            .axis_iter(Axis(1))
            .map(|col| match mode {
                NormalizeMode::Minmax => {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                }
                NormalizeMode::Zscore => {
                    let m = col.len() as f64;
                    let mean = col.sum() / m;
                    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                    (mean, var.sqrt())
                }
                NormalizeMode::None => unreachable!(),
            })
            .unzip();
        Normalizer {
            mode,
            offset,
            scale,
        }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (o, s) = (self.offset[j], self.scale[j]);
            if s > 0.0 {
                col.mapv_inplace(|v| (v - o) / s);
            } else {
                col.fill(0.0);
            }
        }
        out
    }

    pub fn n_features(&self) -> usize {
        self.offset.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn csv(text: &str, label: Option<&str>) -> Result<Dataset> {
        Dataset::from_csv_reader(text.as_bytes(), label)
    }

    #[test]
    fn parses_header_and_rows() {
        let d = csv("a,b\n1,2\n3,4\n5,6e0\n", None).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.n_features(), 2);
        assert_eq!(d.feature_names, vec!["a", "b"]);
        assert_eq!(d.features[[2, 1]], 6.0);
        assert!(d.labels.is_none());
    }

    #[test]
    fn extracts_label_column() {
        let d = csv("a,b\n1,2\n3,4\n5,2\n", Some("b")).unwrap();
        assert_eq!(d.n_features(), 1);
        assert_eq!(d.feature_names, vec!["a"]);
        assert_eq!(d.labels.as_deref(), Some(&[0, 1, 0][..]));
        assert_eq!(d.label_names, vec!["2", "4"]);
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = csv("a,b\n1,2\n3,4,5\n", None).unwrap_err();
        assert!(err.to_string().contains("inconsistent row width at row 2"), "{err}");
    }

    #[test]
    fn rejects_non_numeric_and_missing_label() {
        let err = csv("a,b\n1,x\n", None).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { row: 1, .. }), "{err}");
        assert!(err.to_string().contains("\"b\""));
        let err = csv("a,b\n1,2\n", Some("c")).unwrap_err();
        assert!(matches!(err, Error::MissingLabelColumn(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Dataset::load_csv("/nonexistent/evnet.csv", None).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn minmax_and_zscore_examples() {
        let d = Dataset::new(
            array![[0.0, 7.0, 1.0], [5.0, 7.0, 3.0], [10.0, 7.0, 1.0]],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let (mm, _) = d.normalize(NormalizeMode::Minmax);
        assert_eq!(mm.features.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(mm.features.column(1).to_vec(), vec![0.0, 0.0, 0.0]);

        let two = Dataset::new(array![[1.0, 4.0], [3.0, 4.0]], vec!["a".into(), "b".into()]).unwrap();
        let (z, _) = two.normalize(NormalizeMode::Zscore);
        assert_eq!(z.features.column(0).to_vec(), vec![-1.0, 1.0]);
        assert_eq!(z.features.column(1).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn frozen_stats_apply_to_new_rows() {
        let d = Dataset::new(array![[0.0], [10.0]], vec!["a".into()]).unwrap();
        let (_, stats) = d.normalize(NormalizeMode::Minmax);
        let test = stats.apply(&array![[5.0], [20.0]]);
        assert_eq!(test, array![[0.5], [2.0]]);
    }

    #[test]
    fn knn_examples() {
        let mut d = Dataset::new(array![[0.0], [1.0], [10.0]], vec!["x".into()]).unwrap();
        d.build_knn(1, false).unwrap();
        assert_eq!(d.neighbors.as_ref().unwrap(), &vec![vec![1], vec![0], vec![1]]);

        d.build_knn(2, false).unwrap();
        assert_eq!(
            d.neighbors.as_ref().unwrap(),
            &vec![vec![1, 2], vec![0, 2], vec![1, 0]]
        );

        let mut s = d.clone().with_labels(vec![0, 0, 1]).unwrap();
        s.build_knn(1, true).unwrap();
        assert_eq!(
            s.supervised_neighbors.as_ref().unwrap(),
            &vec![vec![1], vec![0], vec![]]
        );
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let mut d = Dataset::new(array![[0.0], [-1.0], [1.0]], vec!["x".into()]).unwrap();
        d.build_knn(1, false).unwrap();
        assert_eq!(d.neighbors.unwrap()[0], vec![1]);
    }

    #[test]
    fn knn_guards() {
        let mut d = Dataset::new(array![[0.0], [1.0]], vec!["x".into()]).unwrap();
        assert!(d.build_knn(2, false).is_err());
        assert!(d.build_knn(1, true).is_err());
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let d = Dataset::new(x, vec!["x".into()]).unwrap();
        let s = d.split(SplitSpec { train_fraction: 0.8, seed: 3 }).unwrap();
        assert_eq!(s.train_idx.len(), 8);
        let mut all: Vec<usize> = s.train_idx.iter().chain(&s.test_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let again = d.split(SplitSpec { train_fraction: 0.8, seed: 3 }).unwrap();
        assert_eq!(s.train_idx, again.train_idx);
        assert!(d.split(SplitSpec { train_fraction: 0.0, seed: 3 }).is_err());
    }
}
