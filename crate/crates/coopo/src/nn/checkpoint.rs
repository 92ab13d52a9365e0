//! Binary parameter checkpoints.
//!
//! Layout: the 6-byte magic `COOPO1`, five little-endian u32 fields
//! (input_dim, hidden_layers, hidden_units, output_dim, activation
//! tag), a little-endian u64 parameter count, then that many
//! little-endian f64 values. The count may exceed the spec's own
//! parameter count when a model appends extra trailing parameters
//! (a Gaussian policy stores its log-std vector this way).

use super::{Activation, MlpSpec, ParameterVector};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"COOPO1";

pub fn save_params(path: &Path, spec: &MlpSpec, params: &ParameterVector) -> Result<()> {
    if params.len() < spec.param_count() {
        return Err(Error::input(format!(
            "parameter vector has {} entries, spec needs at least {}",
            params.len(),
            spec.param_count()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for field in [
        spec.input_dim as u32,
        spec.hidden_layers as u32,
        spec.hidden_units as u32,
        spec.output_dim as u32,
        spec.activation.tag(),
    ] {
        w.write_all(&field.to_le_bytes())?;
    }
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for &p in params.iter() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<(MlpSpec, ParameterVector)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::schema(format!("{}: bad magic, not a checkpoint", path.display())));
    }
    let mut u32buf = [0u8; 4];
    let mut fields = [0u32; 5];
    for f in fields.iter_mut() {
        read_exact(&mut r, &mut u32buf, path)?;
        *f = u32::from_le_bytes(u32buf);
    }
    let spec = MlpSpec::new(
        fields[0] as usize,
        fields[1] as usize,
        fields[2] as usize,
        fields[3] as usize,
        Activation::from_tag(fields[4])?,
    )
    .map_err(|e| Error::schema(format!("{}: {e}", path.display())))?;
    let mut u64buf = [0u8; 8];
    read_exact(&mut r, &mut u64buf, path)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    if count < spec.param_count() {
        return Err(Error::schema(format!(
            "{}: header claims {count} parameters, spec needs {}",
            path.display(),
            spec.param_count()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        read_exact(&mut r, &mut u64buf, path)?;
        values.push(f64::from_le_bytes(u64buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::schema(format!("{}: trailing bytes after parameters", path.display())));
    }
    Ok((spec, ParameterVector::from_vec(values)))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::schema(format!("{}: truncated checkpoint", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use crate::rng::seeded_rng;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let spec = MlpSpec::new(4, 2, 16, 3, Activation::Tanh).unwrap();
        let params = init_params(&spec, &mut seeded_rng(21));
        save_params(&path, &spec, &params).unwrap();
        let (spec2, params2) = load_params(&path).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(params.len(), params2.len());
        for (a, b) in params.iter().zip(params2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn trailing_parameters_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pi.ckpt");
        let spec = MlpSpec::new(4, 1, 8, 2, Activation::Relu).unwrap();
        let mut raw = init_params(&spec, &mut seeded_rng(22)).into_vec();
        raw.extend([0.5f64.ln(), 0.5f64.ln()]);
        let params = ParameterVector::from_vec(raw);
        save_params(&path, &spec, &params).unwrap();
        let (_, loaded) = load_params(&path).unwrap();
        assert_eq!(loaded.len(), spec.param_count() + 2);
        assert_eq!(loaded[loaded.len() - 1], 0.5f64.ln());
    }

    #[test]
    fn bad_magic_and_truncation_are_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTAMAGICFILE").unwrap();
        assert!(matches!(load_params(&path), Err(Error::Schema(_))));

        let spec = MlpSpec::linear(2, 2).unwrap();
        let params = init_params(&spec, &mut seeded_rng(23));
        let good = dir.path().join("good.ckpt");
        save_params(&good, &spec, &params).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_params(&cut), Err(Error::Schema(_))));
    }
}
