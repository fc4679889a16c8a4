mod analyze;
mod eval;
mod generate;
mod sensitivity;
mod train;

use std::path::Path;

pub use analyze::{analyze, COST_CSV, COST_TABLE};
pub use eval::{evaluate, EvalReport, NOCO_CSV, PR_CSV, REPORT};
pub use generate::{generate, GenerateSummary, MANIFEST};
pub use sensitivity::{sensitivity, SENSITIVITY_CSV};
pub use train::{train, TrainSummary, CHECKPOINT, LOSS_LOG, TRAIN_STATE};

use crate::error::{CliError, Result};

/// Order-preserving map over `items` on up to `jobs` threads.
pub(crate) fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_preserves_order() {
        let items: Vec<u64> = (0..37).collect();
        for jobs in [1, 2, 3, 8, 64] {
            assert_eq!(par_map(&items, jobs, |v| v * v), items.iter().map(|v| v * v).collect::<Vec<_>>());
        }
    }
}
