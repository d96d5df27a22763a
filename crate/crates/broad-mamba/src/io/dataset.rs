//! Dataset directories: one labels CSV plus three tensors per dialogue.
//!
//! ```text
//! labels.csv            header dialogue,utterance,label
//! dlg00000_text.bmt     (T x d_text) f32 tensor
//! dlg00000_audio.bmt
//! dlg00000_video.bmt
//! ...
//! ```
//!
//! Feature extraction is out of scope: holders of real corpora export
//! per-utterance features in this layout and the trainer ingests them
//! exactly like synthetic data.

use std::path::Path;

use ndarray::Array2;

use crate::data::EmotionBatch;
use crate::embedding::Modality;
use crate::error::{Error, Result};
use crate::io::tensor;

const LABELS: &str = "labels.csv";

fn dialogue_file(dialogue: usize, m: Modality) -> String {
    format!("dlg{dialogue:05}_{}.bmt", m.name())
}

/// Writes every dialogue and the label file.
pub fn save_dataset(dir: &Path, batches: &[EmotionBatch]) -> Result<()> {
    if batches.is_empty() {
        return Err(Error::EmptyDataset);
    }
    std::fs::create_dir_all(dir)?;
    let mut labels = String::from("dialogue,utterance,label\n");
    for (k, batch) in batches.iter().enumerate() {
        for (t, &label) in batch.labels().iter().enumerate() {
            labels.push_str(&format!("{k},{t},{label}\n"));
        }
        for m in Modality::ALL {
            tensor::write_array2(&dir.join(dialogue_file(k, m)), batch.modality(m))?;
        }
    }
    tensor::write_atomic(&dir.join(LABELS), labels.as_bytes())?;
    Ok(())
}

/// Reads a dataset directory back into dialogues.
pub fn load_dataset(dir: &Path, classes: usize) -> Result<Vec<EmotionBatch>> {
    let text = std::fs::read_to_string(dir.join(LABELS))
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.join(LABELS).display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("dialogue,utterance,label") => {}
        other => {
            return Err(Error::Corrupt(format!(
                "labels.csv: bad header {other:?}"
            )))
        }
    }
    // rows must arrive grouped by dialogue with contiguous utterance indices
    let mut per_dialogue: Vec<Vec<usize>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.trim().parse().ok()).ok_or_else(|| {
                Error::Corrupt(format!("labels.csv row {}: '{line}'", lineno + 2))
            })
        };
        let dialogue = parse(parts.next())?;
        let utterance = parse(parts.next())?;
        let label = parse(parts.next())?;
        if dialogue == per_dialogue.len() && utterance == 0 {
            per_dialogue.push(Vec::new());
        }
        if dialogue + 1 != per_dialogue.len()
            || utterance != per_dialogue[dialogue].len()
        {
            return Err(Error::Corrupt(format!(
                "labels.csv row {}: dialogues/utterances must be contiguous",
                lineno + 2
            )));
        }
        if label >= classes {
            return Err(Error::Corrupt(format!(
                "labels.csv row {}: label {label} out of range for {classes} classes",
                lineno + 2
            )));
        }
        per_dialogue[dialogue].push(label);
    }
    if per_dialogue.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut batches: Vec<EmotionBatch> = Vec::with_capacity(per_dialogue.len());
    for (k, labels) in per_dialogue.iter().enumerate() {
        let mut arrays: Vec<Array2<f64>> = Vec::with_capacity(3);
        for m in Modality::ALL {
            let arr = tensor::read_array2(&dir.join(dialogue_file(k, m)))?;
            if arr.nrows() != labels.len() {
                return Err(Error::Corrupt(format!(
                    "dialogue {k} {m}: {} rows but {} labels",
                    arr.nrows(),
                    labels.len()
                )));
            }
            if k > 0 && arr.ncols() != batches[0].width(m) {
                return Err(Error::Corrupt(format!(
                    "dialogue {k} {m}: width {} differs from dialogue 0",
                    arr.ncols()
                )));
            }
            arrays.push(arr);
        }
        let video = arrays.pop().unwrap();
        let audio = arrays.pop().unwrap();
        let text = arrays.pop().unwrap();
        batches.push(EmotionBatch::new(text, audio, video, labels.clone(), classes)?);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};
    use tempfile::tempdir;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 3,
            utterances: 4,
            dialogues: 3,
            d_text: 5,
            d_audio: 4,
            d_video: 3,
            noise: 0.2,
            separation: 1.0,
            seed: 12,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let data = generate(&spec()).unwrap();
        let dir = tempdir().unwrap();
        save_dataset(dir.path(), &data).unwrap();
        let loaded = load_dataset(dir.path(), 3).unwrap();
        assert_eq!(loaded.len(), data.len());
        for (a, b) in data.iter().zip(loaded.iter()) {
            assert_eq!(a.labels(), b.labels());
            for m in Modality::ALL {
                // storage is f32, so compare after the same rounding
                let expect = a.modality(m).mapv(|v| v as f32 as f64);
                assert_eq!(&expect, b.modality(m));
            }
        }
    }

    #[test]
    fn same_data_writes_identical_bytes() {
        let data = generate(&spec()).unwrap();
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        save_dataset(dir_a.path(), &data).unwrap();
        save_dataset(dir_b.path(), &data).unwrap();
        for entry in std::fs::read_dir(dir_a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(dir_a.path().join(&name)).unwrap();
            let b = std::fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs between identical writes");
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let data = generate(&spec()).unwrap();
        let dir = tempdir().unwrap();
        save_dataset(dir.path(), &data).unwrap();
        assert!(load_dataset(dir.path(), 2).is_err());
    }

    #[test]
    fn missing_tensor_file_is_rejected() {
        let data = generate(&spec()).unwrap();
        let dir = tempdir().unwrap();
        save_dataset(dir.path(), &data).unwrap();
        std::fs::remove_file(dir.path().join("dlg00001_audio.bmt")).unwrap();
        assert!(load_dataset(dir.path(), 3).is_err());
    }
}
