//! Line-delimited serialization for scenes and VQA samples.
//!
//! Both files are UTF-8 with one JSON object per line. Masks are run-length
//! encoded over row-major pixel order as alternating zero/one run lengths,
//! starting with the zero run (a mask starting with a set pixel begins with
//! a zero-length run).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vqa::VQASample;
use super::SceneSpec;
use crate::{P4dError, Result};

pub fn rle_encode(mask: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut count: u32 = 0;
    for &bit in mask {
        if bit == current {
            count += 1;
        } else {
            runs.push(count);
            current = bit;
            count = 1;
        }
    }
    runs.push(count);
    runs
}

pub fn rle_decode(runs: &[u32]) -> Vec<bool> {
    let mut mask = Vec::new();
    let mut value = false;
    for &run in runs {
        mask.extend(std::iter::repeat(value).take(run as usize));
        value = !value;
    }
    mask
}

/// A scene dataset record: the id plus the full spec, from which video and
/// signals regenerate deterministically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneRecord {
    pub video_id: String,
    pub spec: SceneSpec,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| P4dError::InvalidRecord {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_scenes(path: &Path, records: &[SceneRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_scenes(path: &Path) -> Result<Vec<SceneRecord>> {
    read_jsonl(path)
}

pub fn write_vqa(path: &Path, samples: &[VQASample]) -> Result<()> {
    write_jsonl(path, samples)
}

pub fn read_vqa(path: &Path) -> Result<Vec<VQASample>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rle_starts_with_zero_run() {
        let mask = vec![true, true, false];
        assert_eq!(rle_encode(&mask), vec![0, 2, 1]);
    }

    #[test]
    fn rle_empty_mask() {
        assert_eq!(rle_decode(&rle_encode(&[])), Vec::<bool>::new());
    }

    proptest! {
        #[test]
        fn rle_roundtrip(mask in proptest::collection::vec(any::<bool>(), 0..256)) {
            prop_assert_eq!(rle_decode(&rle_encode(&mask)), mask);
        }
    }
}
