//! Frame-to-word alignment and temporal alignment pooling.

use serde::{Deserialize, Serialize};

use crate::config::PoolingMode;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// A word and its time span in milliseconds, `[start_ms, end_ms)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub token: String,
    pub start_ms: u32,
    pub end_ms: u32,
}

impl WordSpan {
    pub fn new(token: impl Into<String>, start_ms: u32, end_ms: u32) -> Self {
        WordSpan {
            token: token.into(),
            start_ms,
            end_ms,
        }
    }
}

/// Spans must be non-empty, sorted and non-overlapping.
pub fn validate_spans(spans: &[WordSpan]) -> Result<()> {
    for (j, s) in spans.iter().enumerate() {
        if s.end_ms <= s.start_ms {
            return Err(Error::Input(format!(
                "word {j} ({:?}) has end {} <= start {}",
                s.token, s.end_ms, s.start_ms
            )));
        }
        if j > 0 && spans[j - 1].end_ms > s.start_ms {
            return Err(Error::Input(format!(
                "word {j} ({:?}) starts at {} before word {} ends at {}",
                s.token,
                s.start_ms,
                j - 1,
                spans[j - 1].end_ms
            )));
        }
    }
    Ok(())
}

/// Binary `[n, m]` matrix assigning frames to words; block-diagonal by
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentMatrix {
    matrix: Tensor,
}

impl AlignmentMatrix {
    /// Wraps an existing 0/1 matrix after checking its structure.
    pub fn from_tensor(matrix: Tensor) -> Result<Self> {
        let a = AlignmentMatrix { matrix };
        a.check_structure()?;
        Ok(a)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.matrix
    }

    pub fn num_frames(&self) -> usize {
        self.matrix.rows()
    }

    pub fn num_words(&self) -> usize {
        self.matrix.cols()
    }

    /// Frames assigned to each word.
    pub fn frames_per_word(&self) -> Vec<usize> {
        (0..self.num_words())
            .map(|j| {
                (0..self.num_frames())
                    .filter(|&i| self.matrix.get(i, j) != 0.0)
                    .count()
            })
            .collect()
    }

    /// The matrix actually multiplied in: `A` itself for sum pooling, `A`
    /// with each nonzero column divided by its frame count for mean pooling.
    pub fn pooling_matrix(&self, mode: PoolingMode) -> Tensor {
        match mode {
            PoolingMode::Sum => self.matrix.clone(),
            PoolingMode::Mean => {
                let counts = self.frames_per_word();
                let mut t = self.matrix.clone();
                for i in 0..self.num_frames() {
                    for (j, &c) in counts.iter().enumerate() {
                        if c > 0 {
                            let v = t.get(i, j);
                            t.set(i, j, v / c as f64);
                        }
                    }
                }
                t
            }
        }
    }

    fn check_structure(&self) -> Result<()> {
        let a = &self.matrix;
        if a.rank() != 2 {
            return Err(Error::dim("alignment", a.shape(), &[0, 0]));
        }
        let (n, m) = (a.rows(), a.cols());
        let mut last_word: Option<usize> = None;
        let mut closed = vec![false; m];
        let mut current: Option<usize> = None;
        for i in 0..n {
            let row = a.row(i);
            if row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Input(format!("alignment row {i} is not binary")));
            }
            let ones: Vec<usize> = (0..m).filter(|&j| row[j] == 1.0).collect();
            if ones.len() > 1 {
                return Err(Error::Input(format!(
                    "frame {i} is assigned to {} words",
                    ones.len()
                )));
            }
            match ones.first() {
                Some(&j) => {
                    if closed[j] || last_word.is_some_and(|w| j < w) {
                        return Err(Error::Input(format!(
                            "frame {i}: word {j} is out of order or not contiguous"
                        )));
                    }
                    if let Some(c) = current.filter(|&c| c != j) {
                        closed[c] = true;
                    }
                    current = Some(j);
                    last_word = Some(j);
                }
                None => {
                    if let Some(c) = current.take() {
                        closed[c] = true;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Center time of frame `i` in milliseconds.
pub fn frame_center_ms(i: usize, step_ms: u32, width_ms: u32) -> f64 {
    i as f64 * f64::from(step_ms) + f64::from(width_ms) / 2.0
}

/// Frame `i` belongs to word `j` iff `start_j <= center_i < end_j`.
pub fn build_alignment(
    spans: &[WordSpan],
    n: usize,
    step_ms: u32,
    width_ms: u32,
) -> Result<AlignmentMatrix> {
    if n == 0 {
        return Err(Error::Argument("alignment needs at least one frame".into()));
    }
    if spans.is_empty() {
        return Err(Error::Input("alignment needs at least one word".into()));
    }
    validate_spans(spans)?;
    let m = spans.len();
    let mut a = Tensor::zeros(&[n, m]);
    let mut j = 0;
    for i in 0..n {
        let c = frame_center_ms(i, step_ms, width_ms);
        while j < m && f64::from(spans[j].end_ms) <= c {
            j += 1;
        }
        if j == m {
            break;
        }
        if f64::from(spans[j].start_ms) <= c {
            a.set(i, j, 1.0);
        }
    }
    Ok(AlignmentMatrix { matrix: a })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentDiagnostics {
    /// Frames in silence or gaps (all-zero rows).
    pub unassigned_frames: usize,
    /// Words that captured no frame (all-zero columns).
    pub empty_words: usize,
}

/// Counts unassigned frames and empty words; fails only if the matrix is not
/// binary block-diagonal.
pub fn validate_alignment(a: &AlignmentMatrix) -> Result<AlignmentDiagnostics> {
    a.check_structure()?;
    let t = a.tensor();
    let unassigned_frames = (0..t.rows())
        .filter(|&i| t.row(i).iter().all(|&v| v == 0.0))
        .count();
    let empty_words = a.frames_per_word().iter().filter(|&&c| c == 0).count();
    Ok(AlignmentDiagnostics {
        unassigned_frames,
        empty_words,
    })
}

/// `Z · A` on the graph: `[q, n]` frames to `[q, m]` words. Mean pooling
/// divides each word's frame sum by its frame count.
pub fn temporal_align_pool(
    g: &mut Graph,
    z: Var,
    a: &AlignmentMatrix,
    mode: PoolingMode,
) -> Result<Var> {
    match mode {
        PoolingMode::Sum => g.align_pool(z, a.tensor()),
        PoolingMode::Mean => g.align_pool_mean(z, a.tensor()),
    }
}
