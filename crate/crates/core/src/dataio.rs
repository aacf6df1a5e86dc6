//! LIBSVM parsing, synthetic logistic data and client partitioning.

use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// One labelled training example with sparse, 0-based feature indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<(usize, f64)>,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Feature dimension: the largest index seen.
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Dense `(features, labels)` restricted to `indices`.
    pub fn dense(&self, indices: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let mut x = DMatrix::zeros(indices.len(), self.dim);
        let mut y = DVector::zeros(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            let s = &self.samples[i];
            for &(j, v) in &s.features {
                x[(row, j)] = v;
            }
            y[row] = s.label;
        }
        (x, y)
    }

    /// Scales every feature column by its maximum absolute value.
    pub fn max_abs_scale(&mut self) {
        let mut scale = vec![0.0f64; self.dim];
        for s in &self.samples {
            for &(j, v) in &s.features {
                scale[j] = scale[j].max(v.abs());
            }
        }
        for s in &mut self.samples {
            for (j, v) in &mut s.features {
                if scale[*j] > 0.0 {
                    *v /= scale[*j];
                }
            }
        }
    }
}

fn parse_label(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad label {tok:?}"),
    })?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1.0)
    } else {
        Err(Error::Parse {
            line,
            msg: format!("label {tok:?} is not binary"),
        })
    }
}

/// Parses LIBSVM text. Labels in {0, 1} are mapped to {-1, +1}.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut dim = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        let mut toks = line.split_whitespace();
        let Some(label_tok) = toks.next() else {
            continue;
        };
        let label = parse_label(label_tok, lineno)?;
        let mut features = Vec::new();
        let mut last = 0usize;
        for tok in toks {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected <index>:<value>, got {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad index {idx:?}"),
            })?;
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad value {val:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "indices are 1-based".into(),
                });
            }
            if idx <= last {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("index {idx} does not increase (previous {last})"),
                });
            }
            last = idx;
            dim = dim.max(idx);
            features.push((idx - 1, val));
        }
        samples.push(Sample { features, label });
    }
    Ok(Dataset { samples, dim })
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset> {
    parse_libsvm(text.as_bytes())
}

pub fn to_libsvm(samples: &[Sample]) -> String {
    let mut out = String::new();
    for s in samples {
        let _ = write!(out, "{}", if s.label > 0.0 { "+1" } else { "-1" });
        for &(j, v) in &s.features {
            let _ = write!(out, " {}:{}", j + 1, v);
        }
        out.push('\n');
    }
    out
}

/// Synthetic binary data whose label posterior is exactly logistic.
///
/// Draws a unit direction `w` and labels uniformly; features are
/// `u ~ N(v·(sep/2)·w, I)`, so `P(v = +1 | u) = σ(sep · wᵀu)`. The planted
/// classifier is `sep · w`.
pub fn synth_logistic(m: usize, n: usize, sep: f64, seed: u64) -> Result<(Dataset, DVector<f64>)> {
    if m < 1 || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs m >= 1 and n >= 2 (got m={m}, n={n})"
        )));
    }
    let mut r = rng::stream(seed, &[tag::DATA]);
    let mut w = DVector::from_fn(m, |_, _| rng::normal(&mut r));
    w /= w.norm();
    let shift = 0.5 * sep;
    let samples = (0..n)
        .map(|_| {
            let label = if rand::Rng::random::<bool>(&mut r) { 1.0 } else { -1.0 };
            let features = (0..m)
                .map(|j| (j, label * shift * w[j] + rng::normal(&mut r)))
                .collect();
            Sample { features, label }
        })
        .collect();
    Ok((Dataset { samples, dim: m }, w * sep))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    Iid,
    Dirichlet { beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }
}

/// Splits sample indices across `clients`. Every client ends up non-empty.
pub fn partition(samples: &[Sample], clients: usize, scheme: PartitionScheme, seed: u64) -> Result<Partition> {
    let n = samples.len();
    if clients == 0 || clients > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples across {clients} clients"
        )));
    }
    let mut r = rng::stream(seed, &[tag::PARTITION]);
    let mut assignments = vec![Vec::new(); clients];
    match scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut r);
            for (pos, i) in order.into_iter().enumerate() {
                assignments[pos % clients].push(i);
            }
        }
        PartitionScheme::Dirichlet { beta } => {
            if !(beta > 0.0) {
                return Err(Error::InvalidArgument(format!("Dirichlet beta must be > 0, got {beta}")));
            }
            let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for class in [-1.0, 1.0] {
                let mut members: Vec<usize> = (0..n).filter(|&i| samples[i].label == class).collect();
                if members.is_empty() {
                    continue;
                }
                members.shuffle(&mut r);
                let mut props: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut r)).collect();
                let total: f64 = props.iter().sum();
                if total > 0.0 {
                    props.iter_mut().for_each(|p| *p /= total);
                } else {
                    props.iter_mut().for_each(|p| *p = 1.0 / clients as f64);
                }
                let mut start = 0;
                let mut cum = 0.0;
                for (k, p) in props.iter().enumerate() {
                    cum += p;
                    let end = if k + 1 == clients {
                        members.len()
                    } else {
                        ((cum * members.len() as f64).round() as usize).clamp(start, members.len())
                    };
                    assignments[k].extend_from_slice(&members[start..end]);
                    start = end;
                }
            }
            // local gradients are undefined on empty clients
            while let Some(empty) = assignments.iter().position(Vec::is_empty) {
                let largest = (0..clients).max_by_key(|&k| (assignments[k].len(), usize::MAX - k)).unwrap();
                let moved = assignments[largest].pop().unwrap();
                assignments[empty].push(moved);
            }
            for a in &mut assignments {
                a.sort_unstable();
            }
        }
    }
    Ok(Partition { assignments, scheme })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_line() {
        let d = parse_libsvm_str("+1 1:0.5 3:-2\n").unwrap();
        assert_eq!(d.dim, 3);
        assert_eq!(d.samples.len(), 1);
        assert_eq!(d.samples[0].label, 1.0);
        assert_eq!(d.samples[0].features, vec![(0, 0.5), (2, -2.0)]);
    }

    #[test]
    fn empty_stream_is_empty_dataset() {
        let d = parse_libsvm_str("").unwrap();
        assert!(d.is_empty());
        assert_eq!(d.dim, 0);
    }

    #[test]
    fn rejects_non_increasing_indices() {
        match parse_libsvm_str("-1 2:1 1:1") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_token_with_line_number() {
        match parse_libsvm_str("+1 1:1\n-1 2-3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn remaps_zero_one_labels_and_crlf() {
        let d = parse_libsvm_str("0 1:1\r\n1 2:1\r\n").unwrap();
        assert_eq!(d.samples[0].label, -1.0);
        assert_eq!(d.samples[1].label, 1.0);
        assert_eq!(d.dim, 2);
    }

    #[test]
    fn rejects_multiclass_label() {
        assert!(parse_libsvm_str("2 1:1\n").is_err());
    }

    #[test]
    fn iid_partition_sizes() {
        let (d, _) = synth_logistic(2, 10, 1.0, 0).unwrap();
        let p = partition(&d.samples, 5, PartitionScheme::Iid, 3).unwrap();
        assert!(p.sizes().iter().all(|&s| s == 2));
        let p = partition(&d.samples, 3, PartitionScheme::Iid, 3).unwrap();
        let mut sizes = p.sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn too_many_clients_is_an_error() {
        let (d, _) = synth_logistic(2, 4, 1.0, 0).unwrap();
        assert!(partition(&d.samples, 5, PartitionScheme::Iid, 0).is_err());
    }

    #[test]
    fn synthetic_data_is_deterministic() {
        let a = synth_logistic(3, 50, 2.0, 11).unwrap();
        let b = synth_logistic(3, 50, 2.0, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn planted_classifier_separates_most_samples() {
        let (d, w) = synth_logistic(2, 100, 5.0, 7).unwrap();
        assert_eq!(d.len(), 100);
        let correct = d
            .samples
            .iter()
            .filter(|s| {
                let z: f64 = s.features.iter().map(|&(j, v)| w[j] * v).sum();
                z * s.label > 0.0
            })
            .count();
        assert!(correct >= 90, "planted classifier got {correct}/100");
    }

    #[test]
    fn zero_margin_gives_two_labelled_samples() {
        let (d, _) = synth_logistic(1, 2, 0.0, 0).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.samples.iter().all(|s| s.label == 1.0 || s.label == -1.0));
    }

    #[test]
    fn zero_margin_labels_are_fair_coins() {
        let (d, _) = synth_logistic(1, 4000, 0.0, 5).unwrap();
        let pos = d.samples.iter().filter(|s| s.label > 0.0).count() as f64 / 4000.0;
        // 4 standard errors of a fair coin over 4000 draws
        assert!((pos - 0.5).abs() < 4.0 * (0.25f64 / 4000.0).sqrt());
    }
}
