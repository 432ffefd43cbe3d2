use std::path::Path;

use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::model::AcousticModel;
use crate::text::Tokenizer;

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidData {
            path: path.display().to_string(),
            reason: format!("{other:?}"),
        },
    }
}

/// Writes one row per phoneme id: symbol, language tag, then the embedding
/// values at `f32` precision.
pub fn export_embeddings(model: &AcousticModel, tokenizer: &Tokenizer, path: &Path) -> Result<usize> {
    let inventory = tokenizer.inventory(model.config.scheme);
    let table = model.phoneme_embeddings();
    if table.nrows() != inventory.len() {
        return Err(Error::ShapeMismatch(format!(
            "embedding table has {} rows, {} inventory has {}",
            table.nrows(),
            model.config.scheme,
            inventory.len()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["symbol".to_string(), "language_tag".to_string()];
    header.extend((0..table.ncols()).map(|j| format!("e{j}")));
    w.write_record(&header)?;
    for (entry, row) in inventory.entries().iter().zip(table.rows()) {
        let mut rec = vec![entry.symbol.clone(), entry.tag.as_str().to_string()];
        rec.extend(row.iter().map(|&v| (v as f32).to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(inventory.len())
}

/// Parses an exported embedding CSV back into symbols, tags and the table.
pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, Vec<String>, Mat)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let (mut symbols, mut tags, mut values) = (Vec::new(), Vec::new(), Vec::new());
    let mut width = None;
    for rec in r.records() {
        let rec = rec?;
        let bad = |reason: String| Error::InvalidData {
            path: path.display().to_string(),
            reason,
        };
        if rec.len() < 3 || width.is_some_and(|w| w != rec.len()) {
            return Err(bad(format!("row with {} fields", rec.len())));
        }
        width = Some(rec.len());
        symbols.push(rec[0].to_string());
        tags.push(rec[1].to_string());
        for field in rec.iter().skip(2) {
            let v: f32 = field.parse().map_err(|_| bad(format!("bad value {field:?}")))?;
            values.push(v as f64);
        }
    }
    let cols = width.map_or(0, |w| w - 2);
    let table = Mat::from_shape_vec((symbols.len(), cols), values).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((symbols, tags, table))
}
