use crate::error::{Error, Result};
use crate::math::Tensor;

/// Replace every whitespace run with a single space.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_space = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !in_space {
                out.push(' ');
            }
            in_space = true;
        } else {
            out.push(ch);
            in_space = false;
        }
    }
    out
}

/// Character stream encoded over its vocabulary (first-appearance order).
#[derive(Clone, Debug, PartialEq)]
pub struct CharDataset {
    pub vocab: Vec<char>,
    pub encoded: Vec<usize>,
    pub seq_len: usize,
}

pub fn char_windows(text: &str, seq_len: usize) -> Result<CharDataset> {
    if seq_len < 1 {
        return Err(Error::config("seq_len must be at least 1"));
    }
    let text = collapse_whitespace(text);
    let mut vocab: Vec<char> = vec![];
    let mut encoded = Vec::with_capacity(text.len());
    let mut lookup = std::collections::HashMap::new();
    for ch in text.chars() {
        let id = *lookup.entry(ch).or_insert_with(|| {
            vocab.push(ch);
            vocab.len() - 1
        });
        encoded.push(id);
    }
    if encoded.len() < seq_len + 1 {
        return Err(Error::data(format!(
            "text of {} characters is too short for windows of {seq_len}",
            encoded.len()
        )));
    }
    Ok(CharDataset { vocab, encoded, seq_len })
}

impl CharDataset {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_windows(&self) -> usize {
        self.encoded.len() - self.seq_len
    }

    /// Input `[start, start+seq_len)` and next-character targets.
    pub fn window(&self, start: usize) -> (&[usize], &[usize]) {
        (
            &self.encoded[start..start + self.seq_len],
            &self.encoded[start + 1..start + 1 + self.seq_len],
        )
    }

    /// Chronological split at `fraction` of the stream; both halves keep the
    /// full vocabulary.
    pub fn split(&self, fraction: f64) -> Result<(CharDataset, CharDataset)> {
        let cut = (self.encoded.len() as f64 * fraction) as usize;
        let part = |enc: &[usize]| -> Result<CharDataset> {
            if enc.len() < self.seq_len + 1 {
                return Err(Error::data("split leaves too little text for one window"));
            }
            Ok(CharDataset {
                vocab: self.vocab.clone(),
                encoded: enc.to_vec(),
                seq_len: self.seq_len,
            })
        };
        Ok((part(&self.encoded[..cut])?, part(&self.encoded[cut..])?))
    }

    /// Window starts spaced `stride` apart.
    pub fn starts(&self, stride: usize) -> Vec<usize> {
        (0..self.num_windows()).step_by(stride.max(1)).collect()
    }

    /// One-hot inputs and targets `[N, B, V]` plus target ids `[N * B]`
    /// (time-major).
    pub fn one_hot_batch(&self, starts: &[usize]) -> (Tensor, Tensor, Vec<usize>) {
        let (n, b, v) = (self.seq_len, starts.len(), self.vocab_size());
        let mut x = Tensor::zeros(&[n, b, v]);
        let mut y = Tensor::zeros(&[n, b, v]);
        let mut ids = vec![0; n * b];
        for (j, &s) in starts.iter().enumerate() {
            let (inp, tgt) = self.window(s);
            for t in 0..n {
                x.data_mut()[(t * b + j) * v + inp[t]] = 1.0;
                y.data_mut()[(t * b + j) * v + tgt[t]] = 1.0;
                ids[t * b + j] = tgt[t];
            }
        }
        (x, y, ids)
    }
}

/// Accuracy on `test` of always predicting the most frequent character of `train`.
pub fn unigram_accuracy(train: &CharDataset, test: &CharDataset) -> f64 {
    let mut counts = vec![0usize; train.vocab_size()];
    train.encoded.iter().for_each(|&c| counts[c] += 1);
    let best = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    let hits = test.encoded.iter().filter(|&&c| c == best).count();
    hits as f64 / test.encoded.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_shift_by_one() {
        let d = char_windows("abcd", 2).unwrap();
        assert_eq!(d.num_windows(), 2);
        assert_eq!(d.window(0), (&[0usize, 1][..], &[1usize, 2][..]));
        assert_eq!(d.window(1), (&[1usize, 2][..], &[2usize, 3][..]));
    }

    #[test]
    fn vocabulary_after_collapse() {
        let d = char_windows("aab \t\n c", 1).unwrap();
        assert_eq!(d.vocab, vec!['a', 'b', ' ', 'c']);
        assert_eq!(collapse_whitespace("a \n\t b"), "a b");
    }

    #[test]
    fn one_hot_rows_sum_to_one() {
        let d = char_windows("hello world, hello", 4).unwrap();
        let (x, y, ids) = d.one_hot_batch(&[0, 3, 7]);
        for r in 0..4 * 3 {
            let row = &x.data()[r * d.vocab_size()..(r + 1) * d.vocab_size()];
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert_eq!(y.data()[r * d.vocab_size() + ids[r]], 1.0);
        }
    }

    #[test]
    fn short_text_rejected() {
        assert!(matches!(char_windows("ab", 2), Err(Error::Data(_))));
        assert!(char_windows("abc", 0).is_err());
    }

    #[test]
    fn unigram_baseline() {
        let d = char_windows("aaab", 1).unwrap();
        assert_eq!(unigram_accuracy(&d, &d), 0.75);
    }
}
