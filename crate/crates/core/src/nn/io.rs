//! `.mlp` files: four little-endian `u32` header fields `(L, m, d_in, d_out)`
//! followed by the flat parameter vector as little-endian `f64`.

use std::io::{Read, Write};

use super::{MlpParams, MlpSpec};
use crate::error::{Error, Result};

pub const MLP_HEADER_LEN: usize = 16;

pub fn write_mlp<W: Write>(params: &MlpParams, mut out: W) -> Result<()> {
    let spec = params.spec();
    for field in [spec.depth, spec.width, spec.input_dim, spec.output_dim] {
        let v = u32::try_from(field).map_err(|_| Error::Format(format!("{field} overflows u32")))?;
        out.write_all(&v.to_le_bytes())?;
    }
    for x in params.flatten() {
        out.write_all(&x.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_mlp<R: Read>(mut input: R) -> Result<MlpParams> {
    let mut header = [0u8; MLP_HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    let field = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let spec = MlpSpec::new(field(0), field(1), field(2), field(3))?;

    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    let expected = spec.num_params() * 8;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} payload bytes for {spec:?}, found {}",
            body.len()
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MlpParams::from_flat(spec, &flat)
}
