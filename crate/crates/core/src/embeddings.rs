//! Pretrained word vectors in the common text format: one `word v1 v2 ...`
//! per line, optionally preceded by a `count dim` header line.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vocab::Vocab;

/// Overwrites rows of `table` (`[|V|, e]`) for every vocabulary word found in
/// `text`. Returns how many rows were replaced.
pub fn load_from_str(text: &str, vocab: &Vocab, table: &mut Tensor) -> Result<usize> {
    let dim = table.cols();
    let mut replaced = 0;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if i == 0
            && values.len() == 1
            && word.parse::<usize>().is_ok()
            && values[0].parse::<usize>().is_ok()
        {
            continue;
        }
        if values.len() != dim {
            return Err(Error::Embeddings(format!(
                "line {}: {} values, the embedding size is {dim}",
                i + 1,
                values.len()
            )));
        }
        let id = vocab.id(word);
        if vocab.token(id) != Some(word) {
            continue;
        }
        for (j, v) in values.iter().enumerate() {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Embeddings(format!("line {}: `{v}` is not a number", i + 1)))?;
            table.set(id, j, x);
        }
        replaced += 1;
    }
    Ok(replaced)
}

pub fn load_into(path: impl AsRef<Path>, vocab: &Vocab, table: &mut Tensor) -> Result<usize> {
    load_from_str(&std::fs::read_to_string(path)?, vocab, table)
}
