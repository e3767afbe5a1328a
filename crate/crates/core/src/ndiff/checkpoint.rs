//! Binary parameter checkpoints.
//!
//! Layout (all integers `u32` little-endian):
//!
//! ```text
//! "MLOC1"
//! layer_count
//! per layer:
//!   tag: u8          1 conv2d, 2 relu, 3 global_max_pool, 4 dense, 5 l2_normalize
//!   stride           conv2d stride, 0 for other kinds
//!   rank             0 for parameter-free layers
//!   dims[rank]
//!   f32 LE values    product(dims) of them
//! ```

use std::io::{Read, Write};

use super::{Layer, NdiffError, Network, Tensor};

pub const MAGIC: &[u8; 5] = b"MLOC1";

fn tag(layer: &Layer) -> u8 {
    match layer {
        Layer::Conv2d { .. } => 1,
        Layer::Relu => 2,
        Layer::GlobalMaxPool => 3,
        Layer::Dense { .. } => 4,
        Layer::L2Normalize => 5,
    }
}

pub fn write_checkpoint<W: Write>(net: &Network, mut out: W) -> Result<(), NdiffError> {
    out.write_all(MAGIC)?;
    out.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        out.write_all(&[tag(layer)])?;
        let stride = match layer {
            Layer::Conv2d { stride, .. } => *stride as u32,
            _ => 0,
        };
        out.write_all(&stride.to_le_bytes())?;
        match layer.weight() {
            Some(w) => {
                out.write_all(&(w.shape().len() as u32).to_le_bytes())?;
                for &d in w.shape() {
                    out.write_all(&(d as u32).to_le_bytes())?;
                }
                for &v in w.data() {
                    out.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            None => out.write_all(&0u32.to_le_bytes())?,
        }
    }
    Ok(())
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, NdiffError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Network, NdiffError> {
    let bad = |msg: String| NdiffError::Checkpoint(msg);
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut input)?;
    let mut layers = Vec::with_capacity(count as usize);
    for index in 0..count {
        let mut t = [0u8; 1];
        input.read_exact(&mut t)?;
        let stride = read_u32(&mut input)? as usize;
        let rank = read_u32(&mut input)? as usize;
        if rank > 8 {
            return Err(bad(format!("layer {index}: implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| read_u32(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let weight = if rank == 0 {
            None
        } else {
            let n: usize = dims.iter().product();
            let mut raw = vec![0u8; n * 4];
            input.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            Some(Tensor::new(dims.clone(), data)?)
        };
        let layer = match (t[0], weight) {
            (1, Some(weight)) if dims.len() == 4 && dims[2] == 3 && dims[3] == 3 && stride >= 1 => {
                Layer::Conv2d { weight, stride }
            }
            (2, None) => Layer::Relu,
            (3, None) => Layer::GlobalMaxPool,
            (4, Some(weight)) if dims.len() == 2 => Layer::Dense { weight },
            (5, None) => Layer::L2Normalize,
            (tag, _) => {
                return Err(bad(format!(
                    "layer {index}: invalid record (tag {tag}, dims {dims:?}, stride {stride})"
                )))
            }
        };
        layers.push(layer);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after last layer".into()));
    }
    Ok(Network::new(layers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Network::new(vec![
            Layer::conv2d(&mut rng, 3, 8, 2),
            Layer::Relu,
            Layer::conv2d(&mut rng, 8, 16, 2),
            Layer::Relu,
            Layer::GlobalMaxPool,
            Layer::dense(&mut rng, 16, 64),
            Layer::L2Normalize,
        ]);
        net.round_to_f32();
        net
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = net();
        let bytes = to_bytes(&net);
        assert_eq!(&bytes[..5], b"MLOC1");
        let back = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(back, net);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = to_bytes(&net());
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes[..]), Err(NdiffError::Checkpoint(_))));
    }

    #[test]
    fn rejects_trailing_garbage() {
        let mut bytes = to_bytes(&net());
        bytes.push(0);
        assert!(read_checkpoint(&bytes[..]).is_err());
    }
}
