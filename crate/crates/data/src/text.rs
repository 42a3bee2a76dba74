use std::path::Path;

use programs::StudentTokenizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::DataError;

pub fn read_corpus(path: &Path) -> Result<String, DataError> {
    Ok(std::fs::read_to_string(path)?)
}

/// Fails when the two corpus files are the same file or have identical
/// contents.
pub fn check_disjoint(train: &Path, eval: &Path) -> Result<(), DataError> {
    let (a, b) = (train.canonicalize()?, eval.canonicalize()?);
    if a == b {
        return Err(DataError::Overlap(format!("{} is used for both", a.display())));
    }
    if std::fs::read(&a)? == std::fs::read(&b)? {
        return Err(DataError::Overlap(format!(
            "{} and {} have the same contents",
            a.display(),
            b.display()
        )));
    }
    Ok(())
}

/// Endless seeded batches of contiguous token windows from one corpus.
pub struct TextBatches {
    ids: Vec<usize>,
    window: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl TextBatches {
    pub fn new(
        tokenizer: &StudentTokenizer,
        text: &str,
        window: usize,
        batch: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        let ids = tokenizer.encode(text)?;
        if ids.len() < window || window == 0 {
            return Err(DataError::CorpusTooShort {
                tokens: ids.len(),
                window,
            });
        }
        Ok(Self {
            ids,
            window,
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn from_path(
        tokenizer: &StudentTokenizer,
        path: &Path,
        window: usize,
        batch: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        Self::new(tokenizer, &read_corpus(path)?, window, batch, seed)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.ids
    }

    pub fn next_batch(&mut self) -> Vec<Vec<usize>> {
        (0..self.batch)
            .map(|_| {
                let start = self.rng.random_range(0..=self.ids.len() - self.window);
                self.ids[start..start + self.window].to_vec()
            })
            .collect()
    }
}
