use ndarray::{s, Array2};

use crate::error::{Error, Result};

/// One truncated-BPTT block: batch-major `[B, T]` inputs and next-token
/// targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmBatch {
    pub inputs: Array2<usize>,
    pub targets: Array2<usize>,
}

/// Splits `stream` into `batch_size` contiguous parallel streams (the
/// remainder is dropped) and cuts them into consecutive blocks of at most
/// `bptt_len` steps. Block `k + 1` continues where block `k` stopped, so
/// hidden state can be carried between them.
pub fn make_lm_batches(stream: &[usize], batch_size: usize, bptt_len: usize) -> Result<Vec<LmBatch>> {
    if batch_size == 0 || bptt_len == 0 {
        return Err(Error::Config("batch size and bptt length must be positive".into()));
    }
    let per_stream = stream.len() / batch_size;
    if per_stream < 2 {
        return Err(Error::Data(format!(
            "token stream of {} is too short for {batch_size} parallel streams",
            stream.len()
        )));
    }
    let grid = Array2::from_shape_vec((batch_size, per_stream), stream[..batch_size * per_stream].to_vec())
        .expect("exact reshape");
    let mut batches = Vec::new();
    let mut start = 0;
    while start + 1 < per_stream {
        let len = bptt_len.min(per_stream - 1 - start);
        batches.push(LmBatch {
            inputs: grid.slice(s![.., start..start + len]).to_owned(),
            targets: grid.slice(s![.., start + 1..start + 1 + len]).to_owned(),
        });
        start += len;
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_reshaped_example() {
        let stream: Vec<usize> = (1..=13).collect();
        let b = make_lm_batches(&stream, 2, 3).unwrap();
        assert_eq!(b[0].inputs, array![[1, 2, 3], [7, 8, 9]]);
        assert_eq!(b[0].targets, array![[2, 3, 4], [8, 9, 10]]);
        assert_eq!(b[1].inputs, array![[4, 5], [10, 11]]);
        assert_eq!(b[1].targets, array![[5, 6], [11, 12]]);
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn too_short_stream_is_error() {
        assert!(make_lm_batches(&[1, 2, 3], 2, 3).is_err());
        assert!(make_lm_batches(&[1, 2, 3, 4], 2, 3).is_ok());
    }

    #[test]
    fn targets_are_shifted_inputs() {
        let stream: Vec<usize> = (0..200).map(|i| (i * 7) % 13).collect();
        for batch in make_lm_batches(&stream, 3, 7).unwrap() {
            let (bsz, t) = batch.inputs.dim();
            for r in 0..bsz {
                for k in 1..t {
                    assert_eq!(batch.inputs[(r, k)], batch.targets[(r, k - 1)]);
                }
            }
        }
    }

    #[test]
    fn blocks_cover_each_stream_once() {
        let stream: Vec<usize> = (0..100).collect();
        let batches = make_lm_batches(&stream, 4, 6).unwrap();
        let total: usize = batches.iter().map(|b| b.inputs.ncols()).sum();
        assert_eq!(total, 25 - 1);
        assert_eq!(
            batches.last().unwrap().targets[(3, batches.last().unwrap().targets.ncols() - 1)],
            99
        );
    }
}
