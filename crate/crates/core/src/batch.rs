use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// `n × d` samples drawn from one deployment, with optional side information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    features: Vec<f64>,
    dim: usize,
    labels: Option<Vec<u8>>,
    clusters: Option<Vec<usize>>,
    responses: Option<Vec<f64>>,
}

/// Borrowed view of one row of a [`Batch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<'a> {
    pub features: &'a [f64],
    pub label: Option<u8>,
    pub cluster: Option<usize>,
    pub response: Option<f64>,
}

impl Batch {
    /// Builds a batch from row-major features. Rejects empty or non-finite input.
    pub fn new(features: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || features.is_empty() {
            return Err(Error::Spec(
                "batch must have at least one row and one column".into(),
            ));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                context: "Batch::new",
                expected: dim * (features.len() / dim + 1),
                got: features.len(),
            });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Spec(format!(
                "non-finite feature in row {}",
                i / dim
            )));
        }
        Ok(Self {
            features,
            dim,
            labels: None,
            clusters: None,
            responses: None,
        })
    }

    /// One-dimensional batch from scalar samples.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        check_dim("Batch::with_labels", self.len(), labels.len())?;
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Spec("labels must be 0 or 1".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_clusters(mut self, clusters: Vec<usize>) -> Result<Self> {
        check_dim("Batch::with_clusters", self.len(), clusters.len())?;
        self.clusters = Some(clusters);
        Ok(self)
    }

    pub fn with_responses(mut self, responses: Vec<f64>) -> Result<Self> {
        check_dim("Batch::with_responses", self.len(), responses.len())?;
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::Spec("non-finite response".into()));
        }
        self.responses = Some(responses);
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn clusters(&self) -> Option<&[usize]> {
        self.clusters.as_deref()
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point(&self, i: usize) -> Point<'_> {
        Point {
            features: self.row(i),
            label: self.labels.as_ref().map(|l| l[i]),
            cluster: self.clusters.as_ref().map(|c| c[i]),
            response: self.responses.as_ref().map(|r| r[i]),
        }
    }

    pub fn points(&self) -> impl Iterator<Item = Point<'_>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Group index used by per-group estimators: the cluster when present,
    /// otherwise the label, otherwise 0.
    pub fn group(&self, i: usize) -> usize {
        match (&self.clusters, &self.labels) {
            (Some(c), _) => c[i],
            (None, Some(l)) => usize::from(l[i]),
            (None, None) => 0,
        }
    }

    /// Rows `range` as a new batch, side information included.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Spec(format!(
                "invalid row range {start}..{end} for batch of {}",
                self.len()
            )));
        }
        Ok(Self {
            features: self.features[start * self.dim..end * self.dim].to_vec(),
            dim: self.dim,
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
            clusters: self.clusters.as_ref().map(|c| c[start..end].to_vec()),
            responses: self.responses.as_ref().map(|r| r[start..end].to_vec()),
        })
    }

    /// Splits the rows into `parts` contiguous chunks of near-equal size.
    pub fn split(&self, parts: usize) -> Result<Vec<Self>> {
        let n = self.len();
        if parts == 0 || parts > n {
            return Err(Error::Spec(format!(
                "cannot split {n} rows into {parts} parts"
            )));
        }
        let (base, extra) = (n / parts, n % parts);
        let mut out = Vec::with_capacity(parts);
        let mut start = 0;
        for i in 0..parts {
            let len = base + usize::from(i < extra);
            out.push(self.slice(start, start + len)?);
            start += len;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_non_finite_rows() {
        assert!(Batch::new(vec![1.0, f64::NAN], 1).is_err());
        assert!(Batch::new(vec![], 1).is_err());
    }

    #[test]
    fn side_information_length_checked() {
        let b = Batch::from_scalars(&[1.0, 2.0]).unwrap();
        assert!(b.clone().with_labels(vec![0]).is_err());
        assert!(b.clone().with_labels(vec![0, 2]).is_err());
        assert!(b.with_clusters(vec![0, 1]).is_ok());
    }

    #[test]
    fn split_covers_all_rows() {
        let b = Batch::from_scalars(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let parts = b.split(2).unwrap();
        assert_eq!(parts[0].features(), &[1.0, 2.0, 3.0]);
        assert_eq!(parts[1].features(), &[4.0, 5.0]);
        assert!(b.split(6).is_err());
    }
}
