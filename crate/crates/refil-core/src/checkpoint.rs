//! RFLM model checkpoints.
//!
//! Layout: magic `RFLM`, version byte, input shape (rank byte + u32 LE
//! dims), layer count (u32 LE), then per layer a kind tag byte followed by
//! kind-specific fields. Tensors are stored as rank byte + u32 LE dims +
//! raw f32 LE data, so round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{
    read_tensor, read_u32, read_u8, write_tensor, write_u32, write_u8,
};
use crate::error::{Error, Result};
use crate::layer::Layer;
use crate::model::Model;

pub const MAGIC: [u8; 4] = *b"RFLM";
pub const VERSION: u8 = 1;

const TAG_DENSE: u8 = 1;
const TAG_CONV2D: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_AVG_POOL: u8 = 4;
const TAG_FLATTEN: u8 = 5;
const TAG_EMBEDDING: u8 = 6;
const TAG_CONCAT: u8 = 7;
const TAG_STANDARDIZE: u8 = 8;

pub fn write_model<W: Write>(w: &mut W, model: &Model) -> Result<()> {
    w.write_all(&MAGIC)?;
    write_u8(w, VERSION)?;
    write_u8(w, model.input_shape().len() as u8)?;
    for &d in model.input_shape() {
        write_u32(w, d as u32)?;
    }
    write_u32(w, model.layers().len() as u32)?;
    for layer in model.layers() {
        match layer {
            Layer::Dense { weights, bias } => {
                write_u8(w, TAG_DENSE)?;
                write_tensor(w, weights)?;
                write_tensor(w, bias)?;
            }
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => {
                write_u8(w, TAG_CONV2D)?;
                write_u32(w, *stride as u32)?;
                write_u32(w, *padding as u32)?;
                write_tensor(w, kernels)?;
                write_tensor(w, bias)?;
            }
            Layer::Relu => write_u8(w, TAG_RELU)?,
            Layer::AvgPool { window } => {
                write_u8(w, TAG_AVG_POOL)?;
                write_u32(w, *window as u32)?;
            }
            Layer::Flatten => write_u8(w, TAG_FLATTEN)?,
            Layer::EmbeddingLookup { table } => {
                write_u8(w, TAG_EMBEDDING)?;
                write_tensor(w, table)?;
            }
            Layer::Concat { axis } => {
                write_u8(w, TAG_CONCAT)?;
                write_u32(w, *axis as u32)?;
            }
            Layer::Standardize { mean, std } => {
                write_u8(w, TAG_STANDARDIZE)?;
                write_tensor(w, mean)?;
                write_tensor(w, std)?;
            }
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u8(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let rank = read_u8(r)? as usize;
    let mut input_shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        input_shape.push(read_u32(r)? as usize);
    }
    let count = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let tag = read_u8(r)?;
        let layer = match tag {
            TAG_DENSE => Layer::dense(read_tensor(r)?, read_tensor(r)?)?,
            TAG_CONV2D => {
                let stride = read_u32(r)? as usize;
                let padding = read_u32(r)? as usize;
                Layer::conv2d(read_tensor(r)?, read_tensor(r)?, stride, padding)?
            }
            TAG_RELU => Layer::Relu,
            TAG_AVG_POOL => Layer::avg_pool(read_u32(r)? as usize)?,
            TAG_FLATTEN => Layer::Flatten,
            TAG_EMBEDDING => Layer::embedding(read_tensor(r)?)?,
            TAG_CONCAT => Layer::Concat {
                axis: read_u32(r)? as usize,
            },
            TAG_STANDARDIZE => Layer::standardize(read_tensor(r)?, read_tensor(r)?)?,
            other => {
                return Err(Error::Checkpoint(format!(
                    "unknown layer tag {other} at layer {i}"
                )))
            }
        };
        layers.push(layer);
    }
    Model::new(layers, input_shape)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let model = read_model(&mut r)?;
    // Trailing garbage means the file is not what it claims to be.
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint(format!(
            "trailing bytes after model in {}",
            path.display()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{init_conv, init_dense, init_embedding};
    use crate::rng::SeededRng;
    use crate::tensor::Tensor;

    fn mixed_model() -> Model {
        let mut rng = SeededRng::new(99);
        Model::new(
            vec![
                Layer::standardize(
                    Tensor::from_vec(vec![0.5, 0.5, 0.5]),
                    Tensor::from_vec(vec![0.25, 0.25, 0.25]),
                )
                .unwrap(),
                init_conv(4, 3, 3, 1, 1, &mut rng),
                Layer::Relu,
                Layer::avg_pool(2).unwrap(),
                Layer::Flatten,
                init_dense(5, 4 * 2 * 2, &mut rng),
            ],
            vec![3, 4, 4],
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let model = mixed_model();
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let back = read_model(&mut buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let mut buf2 = Vec::new();
        write_model(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn embedding_model_roundtrip() {
        let mut rng = SeededRng::new(3);
        let model = Model::new(
            vec![
                init_embedding(7, 3, &mut rng),
                Layer::Concat { axis: 0 },
                init_dense(2, 6, &mut rng),
            ],
            vec![2],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        assert_eq!(read_model(&mut buf.as_slice()).unwrap(), model);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let model = mixed_model();
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_model(&mut bad.as_slice()).is_err());
        let mut badver = buf;
        badver[4] = 9;
        assert!(read_model(&mut badver.as_slice()).is_err());
    }
}
