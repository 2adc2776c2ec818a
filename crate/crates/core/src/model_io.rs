//! Versioned little-endian model files.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "PYRN"
//! 4       2           format version (u16, currently 1)
//! 6       21 * 4      config block, u32 each:
//!                       input_maps input_rows input_cols
//!                       c1.maps c1.kernel_rows c1.kernel_cols c1.activation
//!                       s2.window s2.activation
//!                       c3.maps c3.kernel_rows c3.kernel_cols c3.activation
//!                       s4.window s4.activation
//!                       c5.maps c5.kernel_rows c5.kernel_cols c5.activation
//!                       f6.neurons f6.activation
//!                     (activation codes: 0 = purelin, 1 = tansig)
//! 90      8 * P       parameters as f64: C1 weights, C1 biases, C3 weights,
//!                     C3 biases, C5 weights, C5 biases, F6 weights (row-major
//!                     12 x 16), F6 biases
//! 90+8P   4           CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Convolution weights use the correlation convention (no kernel flip),
//! ordered output map, input map, kernel row, kernel column.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{
    ConvLayerConfig, DenseLayerConfig, Network, ParamBanks, PoolLayerConfig, PyraNetConfig,
};
use crate::tensor::ActivationKind;

pub const MAGIC: &[u8; 4] = b"PYRN";
pub const FORMAT_VERSION: u16 = 1;
const CONFIG_WORDS: usize = 21;
const HEADER_LEN: usize = 4 + 2 + CONFIG_WORDS * 4;
const TRAILER_LEN: usize = 4;

/// Total file size for a network with `num_params` scalars.
pub const fn file_len(num_params: usize) -> usize {
    HEADER_LEN + 8 * num_params + TRAILER_LEN
}

fn config_words(c: &PyraNetConfig) -> [u32; CONFIG_WORDS] {
    let w = |v: usize| v as u32;
    [
        w(c.input_maps),
        w(c.input_rows),
        w(c.input_cols),
        w(c.c1.maps),
        w(c.c1.kernel_rows),
        w(c.c1.kernel_cols),
        c.c1.activation.code(),
        w(c.s2.window),
        c.s2.activation.code(),
        w(c.c3.maps),
        w(c.c3.kernel_rows),
        w(c.c3.kernel_cols),
        c.c3.activation.code(),
        w(c.s4.window),
        c.s4.activation.code(),
        w(c.c5.maps),
        w(c.c5.kernel_rows),
        w(c.c5.kernel_cols),
        c.c5.activation.code(),
        w(c.f6.neurons),
        c.f6.activation.code(),
    ]
}

fn config_from_words(w: &[u32; CONFIG_WORDS]) -> Result<PyraNetConfig> {
    let act = |code: u32, layer: &'static str| {
        ActivationKind::from_code(code).ok_or_else(|| Error::Config {
            layer,
            reason: format!("unknown activation code {code}"),
        })
    };
    let n = |v: u32| v as usize;
    let conv = |i: usize, layer| -> Result<ConvLayerConfig> {
        Ok(ConvLayerConfig {
            maps: n(w[i]),
            kernel_rows: n(w[i + 1]),
            kernel_cols: n(w[i + 2]),
            activation: act(w[i + 3], layer)?,
        })
    };
    let pool = |i: usize, layer| -> Result<PoolLayerConfig> {
        Ok(PoolLayerConfig {
            window: n(w[i]),
            activation: act(w[i + 1], layer)?,
        })
    };
    Ok(PyraNetConfig {
        input_maps: n(w[0]),
        input_rows: n(w[1]),
        input_cols: n(w[2]),
        c1: conv(3, "C1")?,
        s2: pool(7, "S2")?,
        c3: conv(9, "C3")?,
        s4: pool(13, "S4")?,
        c5: conv(15, "C5")?,
        f6: DenseLayerConfig {
            neurons: n(w[19]),
            activation: act(w[20], "F6")?,
        },
    })
}

pub fn to_bytes(network: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(file_len(network.num_params()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for word in config_words(network.config()) {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for v in network.params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 4 {
        return Err(Error::LengthMismatch {
            expected: HEADER_LEN + TRAILER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..4].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::LengthMismatch {
            expected: HEADER_LEN + TRAILER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut words = [0u32; CONFIG_WORDS];
    for (i, chunk) in bytes[6..HEADER_LEN].chunks_exact(4).enumerate() {
        words[i] = u32::from_le_bytes(chunk.try_into().unwrap());
    }
    let config = config_from_words(&words)?;
    let mut params = ParamBanks::zeros(&config)?;
    let n = params.num_params();
    let expected = file_len(n);
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let body = &bytes[..expected - TRAILER_LEN];
    let stored = u32::from_le_bytes(bytes[expected - TRAILER_LEN..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    for (i, chunk) in body[HEADER_LEN..].chunks_exact(8).enumerate() {
        *params.get_mut(i).unwrap() = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Network::from_params(config, params)
}

/// Writes the model; returns the number of bytes written.
pub fn save_model(network: &Network, destination: &Path) -> Result<usize> {
    let bytes = to_bytes(network);
    fs::write(destination, &bytes).map_err(|e| Error::io(destination, e))?;
    Ok(bytes.len())
}

pub fn load_model(source: &Path) -> Result<Network> {
    let bytes = fs::read(source).map_err(|e| Error::io(source, e))?;
    from_bytes(&bytes)
}
