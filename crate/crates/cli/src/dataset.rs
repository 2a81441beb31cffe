//! Dataset directory layout: train/validation/test window files plus the
//! vocabulary table.

use anyhow::{bail, Context};
use m3_core::data::{
    read_vocabulary, read_windows, write_vocabulary, write_windows, DatasetSplits, UserSequence,
};
use std::path::Path;

pub fn write_dataset(dir: &Path, splits: &DatasetSplits) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_windows(&dir.join("train.txt"), &splits.train)?;
    write_windows(&dir.join("validation.txt"), &splits.validation)?;
    write_windows(&dir.join("test.txt"), &splits.test)?;
    write_vocabulary(&dir.join("vocab.tsv"), &splits.vocabulary)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> anyhow::Result<DatasetSplits> {
    let splits = DatasetSplits {
        train: read_windows(&dir.join("train.txt"))
            .with_context(|| format!("loading {}", dir.join("train.txt").display()))?,
        validation: read_windows(&dir.join("validation.txt"))
            .with_context(|| format!("loading {}", dir.join("validation.txt").display()))?,
        test: read_windows(&dir.join("test.txt"))
            .with_context(|| format!("loading {}", dir.join("test.txt").display()))?,
        vocabulary: read_vocabulary(&dir.join("vocab.tsv"))
            .with_context(|| format!("loading {}", dir.join("vocab.tsv").display()))?,
    };
    for (name, windows) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        for w in windows {
            for e in &w.events {
                if e.item >= splits.vocabulary.len() {
                    bail!(
                        "{name} split: item {} out of vocabulary ({} items)",
                        e.item,
                        splits.vocabulary.len()
                    );
                }
            }
        }
    }
    Ok(splits)
}

pub fn split_by_name<'a>(splits: &'a DatasetSplits, name: &str) -> anyhow::Result<&'a [UserSequence]> {
    match name {
        "train" => Ok(&splits.train),
        "validation" => Ok(&splits.validation),
        "test" => Ok(&splits.test),
        other => bail!("unknown split `{other}` (expected train, validation or test)"),
    }
}

/// Context feature layout implied by the windows: per-feature vocabulary
/// sizes on the input and output side. Feature counts must be uniform.
pub fn infer_context(splitses: &[&[UserSequence]]) -> anyhow::Result<(Vec<usize>, Vec<usize>)> {
    let mut n_in: Option<usize> = None;
    let mut n_out: Option<usize> = None;
    let mut in_max: Vec<usize> = Vec::new();
    let mut out_max: Vec<usize> = Vec::new();
    for windows in splitses {
        for w in *windows {
            for e in &w.events {
                match n_in {
                    None => {
                        n_in = Some(e.ctx_in.len());
                        in_max = vec![0; e.ctx_in.len()];
                    }
                    Some(n) if n != e.ctx_in.len() => {
                        bail!("inconsistent input context feature counts ({n} vs {})", e.ctx_in.len())
                    }
                    _ => {}
                }
                match n_out {
                    None => {
                        n_out = Some(e.ctx_out.len());
                        out_max = vec![0; e.ctx_out.len()];
                    }
                    Some(n) if n != e.ctx_out.len() => {
                        bail!("inconsistent output context feature counts ({n} vs {})", e.ctx_out.len())
                    }
                    _ => {}
                }
                for (m, &v) in in_max.iter_mut().zip(&e.ctx_in) {
                    *m = (*m).max(v + 1);
                }
                for (m, &v) in out_max.iter_mut().zip(&e.ctx_out) {
                    *m = (*m).max(v + 1);
                }
            }
        }
    }
    Ok((in_max, out_max))
}
