use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A tokenized, embedded sequence cut into fixed-width chunks. Only the
/// final chunk may carry padding; padded rows are zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStream {
    pub chunks: Vec<Matrix>,
    /// Per chunk, true marks a real (non-padded) row.
    pub masks: Vec<Vec<bool>>,
    pub original_len: usize,
}

impl ChunkStream {
    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }
}

/// (start, real row count) per chunk for a sequence of length `len`.
pub fn chunk_layout(len: usize, w: usize) -> Vec<(usize, usize)> {
    let count = len.div_ceil(w);
    (0..count)
        .map(|c| {
            let start = c * w;
            (start, w.min(len - start))
        })
        .collect()
}

/// Split an embedded sequence into ceil(L / w) chunks of exactly w rows,
/// zero-padding the final one.
pub fn chunk_sequence(embedded: &Matrix, w: usize) -> Result<ChunkStream> {
    if w == 0 {
        return Err(Error::invalid("chunk_sequence", "chunk width must be at least 1"));
    }
    if embedded.rows() == 0 {
        return Err(Error::invalid("chunk_sequence", "empty sequence"));
    }
    let mut chunks = Vec::new();
    let mut masks = Vec::new();
    for (start, len) in chunk_layout(embedded.rows(), w) {
        let real = embedded.slice_rows(start, len)?;
        let chunk = if len < w {
            Matrix::concat_rows(&[&real, &Matrix::zeros(w - len, embedded.cols())])?
        } else {
            real
        };
        let mut mask = vec![true; len];
        mask.resize(w, false);
        chunks.push(chunk);
        masks.push(mask);
    }
    Ok(ChunkStream {
        chunks,
        masks,
        original_len: embedded.rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn four_chunks_at_128_over_32() {
        let e = Matrix::zeros(128, 4);
        let s = chunk_sequence(&e, 32).unwrap();
        assert_eq!(s.chunk_count(), 4);
        assert!(s.masks.iter().all(|m| m.iter().all(|&r| r)));
    }

    #[test]
    fn sixteen_chunks_at_512_over_32() {
        let e = Matrix::zeros(512, 4);
        assert_eq!(chunk_sequence(&e, 32).unwrap().chunk_count(), 16);
    }

    #[test]
    fn final_chunk_padding() {
        let mut rng = Rng::new(1);
        let e = rng.uniform_matrix(5, 3, 1.0);
        let s = chunk_sequence(&e, 4).unwrap();
        assert_eq!(s.chunk_count(), 2);
        assert_eq!(s.masks[1], vec![true, false, false, false]);
        // padded rows are zero vectors
        for i in 1..4 {
            assert!(s.chunks[1].row(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unpadded_rows_reconstruct_input() {
        let mut rng = Rng::new(2);
        let e = rng.uniform_matrix(11, 3, 1.0);
        let s = chunk_sequence(&e, 4).unwrap();
        let mut parts = Vec::new();
        for (chunk, mask) in s.chunks.iter().zip(&s.masks) {
            let real = mask.iter().filter(|&&r| r).count();
            parts.push(chunk.slice_rows(0, real).unwrap());
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        assert_eq!(Matrix::concat_rows(&refs).unwrap(), e);
    }

    #[test]
    fn rejects_zero_width_and_empty_input() {
        assert!(chunk_sequence(&Matrix::zeros(4, 2), 0).is_err());
        assert!(chunk_sequence(&Matrix::zeros(0, 2), 4).is_err());
    }

    #[test]
    fn layout_covers_sequence_exactly() {
        for len in 1..40 {
            for w in 1..10 {
                let layout = chunk_layout(len, w);
                assert_eq!(layout.len(), len.div_ceil(w));
                let total: usize = layout.iter().map(|&(_, l)| l).sum();
                assert_eq!(total, len);
                // only the final chunk may be short
                for &(_, l) in &layout[..layout.len() - 1] {
                    assert_eq!(l, w);
                }
            }
        }
    }
}
