//! Dataset directories: `<name>/images/NNNNN.pgm` plus `<name>/labels.tsv`.
//!
//! Each `labels.tsv` line is `filename TAB label TAB boxes`, where `boxes`
//! lists one `x,y,w,h` rectangle per character, separated by `;`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{validate_label, Dataset, Rect, Sample};
use crate::{pnm, Error, Result};

/// Write `dataset` under `root/<name>` and return that directory.
pub fn save_dataset(root: &Path, dataset: &Dataset) -> Result<PathBuf> {
    let dir = root.join(&dataset.name);
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut tsv = String::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        let file = format!("{i:05}.pgm");
        pnm::write_pgm(&images.join(&file), &s.image)?;
        let boxes: Vec<String> = s
            .slot_boxes
            .iter()
            .map(|b| format!("{},{},{},{}", b.x, b.y, b.w, b.h))
            .collect();
        writeln!(tsv, "{file}\t{}\t{}", s.label, boxes.join(";")).expect("string write");
    }
    let labels = dir.join("labels.tsv");
    fs::write(&labels, tsv).map_err(|e| Error::io(&labels, e))?;
    Ok(dir)
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let labels = dir.join("labels.tsv");
    let text = fs::read_to_string(&labels).map_err(|e| Error::io(&labels, e))?;
    let where_ = labels.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: where_.clone(),
        line,
        message,
    };

    let mut samples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                lineno,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let (file, label, boxes) = (fields[0], fields[1], fields[2]);
        validate_label(label).map_err(|e| parse_err(lineno, e.to_string()))?;
        let slot_boxes = boxes
            .split(';')
            .map(|b| parse_rect(b).ok_or_else(|| parse_err(lineno, format!("bad box {b:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if slot_boxes.len() != label.chars().count() {
            return Err(parse_err(
                lineno,
                "box count does not match label length".into(),
            ));
        }
        let path = dir.join("images").join(file);
        if !path.is_file() {
            return Err(Error::Missing(format!(
                "{} (referenced on line {lineno} of {where_})",
                path.display()
            )));
        }
        let image = pnm::read_pgm(&path)?;
        samples.push(Sample {
            image,
            label: label.to_string(),
            slot_boxes,
        });
    }
    if samples.is_empty() {
        return Err(parse_err(0, "no samples".into()));
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset { name, samples })
}

fn parse_rect(s: &str) -> Option<Rect> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().ok())
        .collect::<Option<_>>()?;
    match v[..] {
        [x, y, w, h] => Some(Rect { x, y, w, h }),
        _ => None,
    }
}
