//! Cosine similarities between video and motion embeddings and the symmetric
//! correspondence loss built on them.
//!
//! For a batch of `N` index-aligned pairs with similarity matrix `S`
//! (`S[i][j] = sim(v_i, m_j)`) and temperature `tau`, the loss is
//!
//! ```text
//! L = 1/(2N) * sum_i [ -log softmax_row_i(S / tau)[i] - log softmax_col_i(S / tau)[i] ]
//! ```
//!
//! i.e. video-to-motion and motion-to-video cross-entropy with the matched
//! pair as the target, averaged.

use crate::encoders::Embedding;
use crate::error::{Error, Result};
use crate::numerics::graph::logsumexp;
use crate::numerics::{Graph, Var};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// `a . b / (|a| |b|)`.
pub fn cosine_sim(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let na = a.norm();
    let nb = b.norm();
    if !(na > 0.0) || !(nb > 0.0) {
        return Err(Error::DegenerateEmbedding);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `N x N` matrix of video-to-motion cosine similarities, row = video.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidSimilarities("matrix must be square and non-empty".into()));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidSimilarities(format!("non-finite entry {v}")));
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let data = (0..n * n).map(|k| self.data[(k % n) * n + k / n]).collect();
        Self { n, data }
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }
}

pub fn similarity_matrix(videos: &[Embedding], motions: &[Embedding]) -> Result<SimilarityMatrix> {
    if videos.len() != motions.len() || videos.is_empty() {
        return Err(Error::Shape(format!(
            "need equal non-zero counts, got {} videos and {} motions",
            videos.len(),
            motions.len()
        )));
    }
    let unit = |e: &Embedding| -> Result<Vec<f64>> {
        let n = e.norm();
        if !(n > 0.0) {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(e.values().iter().map(|v| v / n).collect())
    };
    let vs = videos.iter().map(unit).collect::<Result<Vec<_>>>()?;
    let ms = motions.iter().map(unit).collect::<Result<Vec<_>>>()?;
    if vs.iter().chain(&ms).any(|u| u.len() != vs[0].len()) {
        return Err(Error::Shape("embedding dimensions differ".into()));
    }
    let rows = vs
        .iter()
        .map(|v| {
            ms.iter()
                .map(|m| {
                    let dot: f64 = v.iter().zip(m).map(|(a, b)| a * b).sum();
                    dot.clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    SimilarityMatrix::from_rows(rows)
}

/// Symmetric cross-entropy over rows and columns of `S / tau` with the diagonal as target.
pub fn contrastive_loss(s: &SimilarityMatrix, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    if let Some(v) = s.entries().iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidSimilarities(format!("non-finite entry {v}")));
    }
    let n = s.n();
    let scaled: Vec<f64> = s.entries().iter().map(|v| v / temperature).collect();
    let cols = SimilarityMatrix {
        n,
        data: scaled.clone(),
    }
    .transpose();
    let mut total = 0.0;
    for (i, (row, col)) in scaled.chunks(n).zip(cols.data.chunks(n)).enumerate() {
        total += logsumexp(row) - row[i];
        total += logsumexp(col) - col[i];
    }
    let loss = total / (2 * n) as f64;
    if !loss.is_finite() {
        return Err(Error::NumericalOverflow(format!("contrastive loss {loss}")));
    }
    // softmax cross-entropy is non-negative; clamp rounding below zero
    Ok(loss.max(0.0))
}

/// Graph form of the loss over stacked embeddings `videos [N, d]` and `motions [N, d]`.
///
/// Rows are L2-normalized inside, so the raw encoder outputs are passed in.
pub fn contrastive_loss_graph(
    g: &mut Graph,
    videos: Var,
    motions: Var,
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let n = g.shape(videos)[0];
    let v = g.normalize_rows(videos)?;
    let m = g.normalize_rows(motions)?;
    let mt = g.transpose(m)?;
    let s = g.matmul(v, mt)?;
    let logits = g.scale(s, 1.0 / temperature);
    let st = g.transpose(logits)?;
    let diag: Vec<usize> = (0..n).collect();
    let row_lse = g.logsumexp_rows(logits)?;
    let col_lse = g.logsumexp_rows(st)?;
    let picked = g.pick_per_row(logits, diag)?;
    let both = g.add(row_lse, col_lse)?;
    let twice = g.scale(picked, -2.0);
    let per_pair = g.add(both, twice)?;
    let mean = g.mean(per_pair);
    Ok(g.scale(mean, 0.5))
}

/// Diagonal entries as positives, off-diagonal entries as negatives.
pub fn correspondence_scores(s: &SimilarityMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = s.n();
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n * n - n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                pos.push(s.get(i, j));
            } else {
                neg.push(s.get(i, j));
            }
        }
    }
    (pos, neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    #[test]
    fn cosine_cases() {
        let v = e(&[0.3, -1.2, 2.0]);
        assert!((cosine_sim(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        let neg = e(&[-0.3, 1.2, -2.0]);
        assert!((cosine_sim(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine_sim(&e(&[0.0, 0.0]), &v),
            Err(Error::DegenerateEmbedding) | Err(Error::Shape(_))
        ));
        assert!(matches!(
            cosine_sim(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn orthonormal_gives_identity() {
        let basis: Vec<Embedding> = (0..3)
            .map(|i| e(&(0..3).map(|j| (i == j) as u8 as f64).collect::<Vec<_>>()))
            .collect();
        let s = similarity_matrix(&basis, &basis).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.get(i, j), (i == j) as u8 as f64);
            }
        }
        let one = similarity_matrix(&basis[..1], &basis[1..2]).unwrap();
        assert_eq!(one.n(), 1);
    }

    #[test]
    fn loss_worked_examples() {
        let s = SimilarityMatrix::from_rows(vec![vec![0.37]]).unwrap();
        assert_eq!(contrastive_loss(&s, 1.0).unwrap(), 0.0);
        let s = SimilarityMatrix::from_rows(vec![vec![0.2, 0.2], vec![0.2, 0.2]]).unwrap();
        assert!((contrastive_loss(&s, 1.0).unwrap() - 2f64.ln()).abs() < 1e-12);
        let s = SimilarityMatrix::from_rows(vec![vec![10.0, 0.0], vec![0.0, 10.0]]).unwrap();
        let want = (-10f64).exp().ln_1p();
        assert!((contrastive_loss(&s, 1.0).unwrap() - want).abs() < 1e-15);
        assert!((want - 4.5399e-5).abs() < 1e-8);
    }

    #[test]
    fn invalid_similarities() {
        let err = SimilarityMatrix::from_rows(vec![vec![f64::NAN]]).unwrap_err();
        assert!(err.to_string().starts_with("invalid similarities"));
    }

    #[test]
    fn scores_split_diagonal() {
        let s = SimilarityMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (p, n) = correspondence_scores(&s);
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(n, vec![0.0, 0.0]);
        let s = SimilarityMatrix::from_rows(vec![vec![0.4]]).unwrap();
        let (p, n) = correspondence_scores(&s);
        assert_eq!(p, vec![0.4]);
        assert!(n.is_empty());
    }
}
