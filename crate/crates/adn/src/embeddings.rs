//! Embedding tables as CSV, for external projection and plotting.
//!
//! * `locations.csv`: `id, e0, ..., e{D-1}`, one row per embedding row.
//! * `instants.csv`: `day, slot, e0, ...`, one row per (day, slot) cell. The
//!   vector is the sum of the day and slot embeddings (in `f32`), which is the
//!   instant descriptor the model adds to every event at that cell.
//!
//! Values are written in shortest round-trip form, so re-import is bit-exact.

use std::path::Path;

use adn_core::model::ModelParams;
use adn_core::Tensor;

use crate::error::{Error, IoContext, Result};

fn header(first: &[&str], d: usize) -> Vec<String> {
    first.iter().map(|s| (*s).to_owned()).chain((0..d).map(|j| format!("e{j}"))).collect()
}

pub fn write_locations(path: &Path, params: &ModelParams<f32>, names: &[String]) -> Result<usize> {
    let table = params.tensor(params.layout().location_embed);
    let d = table.shape()[1];
    if names.len() != table.shape()[0] {
        return Err(Error::Config(format!("{} names for {} location rows", names.len(), table.shape()[0])));
    }
    let io = |e: csv::Error| Error::parse(path, e);
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header(&["id"], d)).map_err(io)?;
    for (row, name) in table.data().chunks(d).zip(names) {
        let rec = std::iter::once(name.clone()).chain(row.iter().map(f32::to_string));
        w.write_record(rec).map_err(io)?;
    }
    w.flush().at(path)?;
    Ok(names.len())
}

/// Sum of the day and slot embeddings at every (day, slot) cell, day-major.
pub fn instant_table(params: &ModelParams<f32>) -> Tensor<f32> {
    let layout = params.layout();
    let day = params.tensor(layout.day_embed);
    let slot = params.tensor(layout.slot_embed);
    let (days, slots, d) = (day.shape()[0], slot.shape()[0], day.shape()[1]);
    Tensor::from_fn(&[days * slots, d], |i| {
        let (cell, j) = (i / d, i % d);
        day.data()[(cell / slots) * d + j] + slot.data()[(cell % slots) * d + j]
    })
}

pub fn write_instants(path: &Path, params: &ModelParams<f32>) -> Result<usize> {
    let table = instant_table(params);
    let d = table.shape()[1];
    let slots = params.calendar.slots_per_day;
    let io = |e: csv::Error| Error::parse(path, e);
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header(&["day", "slot"], d)).map_err(io)?;
    for (cell, row) in table.data().chunks(d).enumerate() {
        let rec = [(cell / slots).to_string(), (cell % slots).to_string()]
            .into_iter()
            .chain(row.iter().map(f32::to_string));
        w.write_record(rec).map_err(io)?;
    }
    w.flush().at(path)?;
    Ok(table.shape()[0])
}

/// Read a `locations.csv` back into ids and an `⟨N,D⟩` table.
pub fn read_locations(path: &Path) -> Result<(Vec<String>, Tensor<f32>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let d = r.headers().map_err(|e| Error::parse(path, e))?.len().saturating_sub(1);
    if d == 0 {
        return Err(Error::parse(path, "no embedding columns"));
    }
    let mut names = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        names.push(rec[0].to_owned());
        for cell in rec.iter().skip(1) {
            data.push(cell.parse::<f32>().map_err(|e| Error::parse(path, format!("row {}: {e}", i + 2)))?);
        }
    }
    let t = Tensor::new(&[names.len(), d], data)?;
    Ok((names, t))
}

/// Replace the location table of `params` with an imported one.
pub fn import_locations(params: &mut ModelParams<f32>, table: Tensor<f32>) -> Result<()> {
    let idx = params.layout().location_embed;
    let slot = &mut params.tensors_mut()[idx].tensor;
    if slot.shape() != table.shape() {
        return Err(Error::Config(format!(
            "imported table has shape {:?}, model expects {:?}",
            table.shape(),
            slot.shape()
        )));
    }
    *slot = table;
    Ok(())
}
