//! Flat CSV dump of network parameters (`tensor, row, col, value`), in the
//! order of `ResidualNet::tensors`.

use std::io::{Read, Write};
use std::path::Path;

use respar_core::ResidualNet;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub tensor: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

pub fn flatten(net: &ResidualNet) -> Vec<ParamEntry> {
    let mut out = Vec::new();
    for (tensor, t) in net.tensors().into_iter().enumerate() {
        for row in 0..t.rows() {
            for col in 0..t.cols() {
                out.push(ParamEntry {
                    tensor,
                    row,
                    col,
                    value: t.get(row, col),
                });
            }
        }
    }
    out
}

pub fn write_params<W: Write>(out: W, net: &ResidualNet) -> HarnessResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in flatten(net) {
        w.serialize(e)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_params<R: Read>(input: R) -> HarnessResult<Vec<ParamEntry>> {
    Ok(csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<ParamEntry>, _>>()?)
}

pub fn save_params(path: &Path, net: &ResidualNet) -> HarnessResult<()> {
    let f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_params(std::io::BufWriter::new(f), net)
}

pub fn load_params(path: &Path) -> HarnessResult<Vec<ParamEntry>> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_params(std::io::BufReader::new(f))
}

/// Largest absolute difference between two dumps of equally shaped networks.
pub fn max_abs_diff(a: &[ParamEntry], b: &[ParamEntry]) -> HarnessResult<f64> {
    if a.len() != b.len() {
        return Err(HarnessError::Data(format!(
            "{} vs {} parameters",
            a.len(),
            b.len()
        )));
    }
    let mut worst = 0.0_f64;
    for (x, y) in a.iter().zip(b) {
        if (x.tensor, x.row, x.col) != (y.tensor, y.row, y.col) {
            return Err(HarnessError::Data("parameter layouts differ".into()));
        }
        worst = worst.max((x.value - y.value).abs());
    }
    Ok(worst)
}
