//! Checkpoint file: a `key=value` header (model configuration, seed,
//! epoch), one blank line, then one SGF1 block per parameter in
//! declaration order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::autodiff::Tensor;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::graph::sgf;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub seed: u64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = self.model.config().to_kv();
        header.set("seed", self.seed.to_string());
        header.set("epoch", self.epoch.to_string());
        header.set("num_params", self.model.num_params().to_string());
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
            w.write_all(header.to_text().as_bytes())?;
            w.write_all(b"\n")?;
            for (_, t) in self.model.params() {
                sgf::write_block(w, t.rows(), t.cols(), t.data())?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| Error::format(path, "checkpoint header is not terminated by a blank line"))?;
        let text = std::str::from_utf8(&bytes[..split + 1])
            .map_err(|_| Error::format(path, "checkpoint header is not UTF-8"))?;
        let header = KeyValues::parse(text, path)?;
        let config = ModelConfig::from_kv(&header)?;
        let seed = header.parse_value("seed", path)?;
        let epoch = header.parse_value("epoch", path)?;

        let mut model = Model::zeros(config)?;
        let mut r = &bytes[split + 2..];
        for (k, t) in model.params_mut().into_iter().enumerate() {
            let block = sgf::read_block(&mut r, path)?;
            if (block.rows, block.cols) != t.shape() {
                return Err(Error::format(
                    path,
                    format!(
                        "parameter {k} is {}x{}, the header implies {}x{}",
                        block.rows,
                        block.cols,
                        t.rows(),
                        t.cols()
                    ),
                ));
            }
            *t = Tensor::from_vec(block.rows, block.cols, block.values)?;
        }
        if !r.is_empty() {
            return Err(Error::format(path, "trailing bytes after the last parameter"));
        }
        Ok(Self { model, seed, epoch })
    }
}
