//! Points CSV with columns `x, y, label`.

use std::io::{Read, Write};
use std::path::Path;

use respar_core::dataset::CirclesDataset;
use respar_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};

#[derive(Debug, Serialize, Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
    label: usize,
}

pub fn write_points<W: Write>(out: W, data: &CirclesDataset) -> HarnessResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for (r, &label) in data.labels.iter().enumerate() {
        w.serialize(PointRow {
            x: data.points.get(r, 0),
            y: data.points.get(r, 1),
            label,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_points<R: Read>(input: R) -> HarnessResult<CirclesDataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let p: PointRow = row?;
        if p.label > 2 {
            return Err(HarnessError::Data(format!(
                "label {} out of range",
                p.label
            )));
        }
        data.extend([p.x, p.y]);
        labels.push(p.label);
    }
    let points = Tensor::from_vec(labels.len(), 2, data)?;
    Ok(CirclesDataset { points, labels })
}

pub fn save_points(path: &Path, data: &CirclesDataset) -> HarnessResult<()> {
    let f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_points(std::io::BufWriter::new(f), data)
}

pub fn load_points(path: &Path) -> HarnessResult<CirclesDataset> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_points(std::io::BufReader::new(f))
}
