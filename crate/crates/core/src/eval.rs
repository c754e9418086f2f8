//! Scoring: clustering error under the best one-to-one relabeling,
//! plain classification error, and embedding export.

use std::io::Write;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::autodiff::Tensor;
use crate::emcore::argmax;
use crate::error::{Error, Result};
use crate::models::ENet;

/// `K × K` counts, rows indexed by predicted cluster and columns by true label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionTable {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionTable {
    pub fn new(predicted: &[usize], truth: &[usize], k: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        if k == 0 {
            return Err(Error::invalid("K must be positive"));
        }
        let mut counts = vec![0u64; k * k];
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= k || t >= k {
                return Err(Error::invalid(format!("label pair ({p}, {t}) out of range for K = {k}")));
            }
            counts[p * k + t] += 1;
        }
        Ok(Self { k, counts })
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if k == 0 || counts.len() != k * k {
            return Err(Error::invalid(format!("{} counts for K = {k}", counts.len())));
        }
        Ok(Self { k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, predicted: usize, truth: usize) -> u64 {
        self.counts[predicted * self.k + truth]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringScore {
    /// `(N - matched) / N`.
    pub error: f64,
    pub matched: u64,
    /// `mapping[p]` is the true label assigned to predicted cluster `p`.
    pub mapping: Vec<usize>,
}

fn score(table: &ConfusionTable, matched: u64, mapping: Vec<usize>) -> ClusteringScore {
    let total = table.total();
    let error = if total == 0 {
        0.0
    } else {
        (total - matched) as f64 / total as f64
    };
    ClusteringScore {
        error,
        matched,
        mapping,
    }
}

/// Best one-to-one matching by the Hungarian method.
pub fn best_matching(table: &ConfusionTable) -> ClusteringScore {
    let k = table.k;
    let weights = Matrix::from_vec(k, k, table.counts.iter().map(|&c| c as i64).collect())
        .expect("square table");
    let (matched, mapping) = kuhn_munkres(&weights);
    score(table, matched as u64, mapping)
}

/// Best matching by trying all `K!` permutations. Only sensible for small K.
pub fn exhaustive_matching(table: &ConfusionTable) -> ClusteringScore {
    fn recurse(table: &ConfusionTable, row: usize, used: &mut [bool], current: &mut Vec<usize>, best: &mut (u64, Vec<usize>), acc: u64) {
        let k = table.k;
        if row == k {
            if acc > best.0 || best.1.is_empty() {
                *best = (acc, current.clone());
            }
            return;
        }
        for col in 0..k {
            if !used[col] {
                used[col] = true;
                current.push(col);
                recurse(table, row + 1, used, current, best, acc + table.get(row, col));
                current.pop();
                used[col] = false;
            }
        }
    }
    let mut best = (0, Vec::new());
    recurse(table, 0, &mut vec![false; table.k], &mut Vec::new(), &mut best, 0);
    score(table, best.0, best.1)
}

/// Fraction of samples left unmatched by the best cluster-to-label mapping.
/// The denominator is the sample count.
pub fn clustering_error(predicted: &[usize], truth: &[usize], k: usize) -> Result<ClusteringScore> {
    Ok(best_matching(&ConfusionTable::new(predicted, truth, k)?))
}

/// Fraction of mismatched labels, with no relabeling.
pub fn classification_error(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub features: Vec<f64>,
    pub truth: Option<usize>,
    pub predicted: usize,
}

/// Bottleneck features and the E-net's hard prediction for every sample.
pub fn export_embeddings(enet: &ENet, data: &Tensor, truth: Option<&[usize]>) -> Result<Vec<EmbeddingRow>> {
    if let Some(t) = truth {
        if t.len() != data.rows() {
            return Err(Error::invalid("truth length differs from sample count"));
        }
    }
    let features = enet.embed(data)?;
    let probs = enet.predict(data)?;
    Ok((0..data.rows())
        .map(|i| EmbeddingRow {
            features: features.row(i).to_vec(),
            truth: truth.map(|t| t[i]),
            predicted: argmax(probs.row(i)),
        })
        .collect())
}

/// Columns: `f0..f{k-1},truth,predicted`; `truth` is empty when unknown.
pub fn write_embeddings_csv<W: Write>(rows: &[EmbeddingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let k = rows.first().map(|r| r.features.len()).unwrap_or(0);
    let mut header: Vec<String> = (0..k).map(|i| format!("f{i}")).collect();
    header.push("truth".into());
    header.push("predicted".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.features.iter().map(|v| v.to_string()).collect();
        rec.push(r.truth.map(|t| t.to_string()).unwrap_or_default());
        rec.push(r.predicted.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Feature matrix of exported rows.
pub fn embedding_matrix(rows: &[EmbeddingRow]) -> Result<Tensor> {
    let feats: Vec<&[f64]> = rows.iter().map(|r| r.features.as_slice()).collect();
    Tensor::from_rows(&feats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_permuted_predictions() {
        let truth = [0, 1, 2, 2, 1, 0, 0];
        assert_eq!(clustering_error(&truth, &truth, 3).unwrap().error, 0.0);
        let perm = [2, 0, 1];
        let pred: Vec<usize> = truth.iter().map(|&t| perm[t]).collect();
        let s = clustering_error(&pred, &truth, 3).unwrap();
        assert_eq!(s.error, 0.0);
        assert_eq!(s.mapping, vec![1, 2, 0]);
    }

    #[test]
    fn worked_confusion_table() {
        let t = ConfusionTable::from_counts(3, vec![5, 0, 0, 0, 4, 1, 0, 2, 3]).unwrap();
        let h = best_matching(&t);
        let e = exhaustive_matching(&t);
        assert_eq!(h.matched, 12);
        assert_eq!(e.matched, 12);
        assert!((h.error - 0.2).abs() < 1e-15);
    }

    #[test]
    fn classification_counts() {
        assert_eq!(classification_error(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(classification_error(&[1, 1], &[0, 0]).unwrap(), 1.0);
        let truth = vec![0usize; 20];
        let mut pred = truth.clone();
        pred[3] = 1;
        pred[7] = 1;
        pred[19] = 2;
        assert!((classification_error(&pred, &truth).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(clustering_error(&[0, 1], &[0], 2).is_err());
        assert!(clustering_error(&[0, 3], &[0, 1], 2).is_err());
        assert!(classification_error(&[0], &[0, 1]).is_err());
    }
}
