//! `EPD1` dataset container plus its plain-text `.meta` sidecar.
//!
//! Layout: magic `EPD1`, family code `u8`, `m: u32`, `s: u32`, field count `u8` (always 3),
//! then for each sample the coefficient, `f` and `u` as row-major little-endian `f64`.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Dataset, DatasetMeta, Sample, NUM_RINGS, RING_SIGMA};
use crate::grid::GridField;
use crate::kv::KeyValues;
use crate::problem::{Family, ProblemSpec, SourceSpec};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"EPD1";
const FIELD_COUNT: u8 = 3;
const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 1;

/// `<path>.meta`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    let m2 = ds.m * ds.m;
    let mut buf = Vec::with_capacity(HEADER_LEN + ds.len() * 3 * m2 * 8);
    buf.write_all(DATASET_MAGIC)?;
    buf.write_u8(ds.spec.family.code())?;
    buf.write_u32::<LittleEndian>(ds.m as u32)?;
    buf.write_u32::<LittleEndian>(ds.len() as u32)?;
    buf.write_u8(FIELD_COUNT)?;
    for s in &ds.samples {
        for field in [&s.coef, &s.f, &s.u] {
            if field.m() != ds.m {
                return Err(Error::Shape(format!("sample field side {} != dataset side {}", field.m(), ds.m)));
            }
            for &v in field.values() {
                buf.write_f64::<LittleEndian>(v)?;
            }
        }
    }
    Ok(buf)
}

fn metadata(ds: &Dataset) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("format", "EPD1");
    kv.set("family", ds.spec.family);
    kv.set("m", ds.m);
    kv.set("s", ds.len());
    kv.set("seed", ds.meta.seed);
    kv.set("index_offset", ds.meta.index_offset);
    kv.set("solver_tol", ds.meta.tol);
    kv.set("task", ds.meta.task);
    kv.set("scaled", ds.meta.scaled);
    kv.set("split", &ds.meta.split);
    kv.set("kappa_sq", ds.spec.kappa_sq);
    kv.set("beta", ds.spec.beta);
    kv.set("contrast", ds.spec.contrast);
    kv.set("boundary", ds.spec.boundary.name());
    kv.set("source", ds.spec.source.code());
    if let SourceSpec::GaussianSumHelmholtz { centers, sigmas } = &ds.spec.source {
        let c: Vec<String> = centers.iter().map(|(x, y)| format!("{x} {y}")).collect();
        kv.set("source_centers", c.join(" "));
        let s: Vec<String> = sigmas.iter().map(f64::to_string).collect();
        kv.set("source_sigmas", s.join(" "));
    }
    kv.set("num_rings", NUM_RINGS);
    kv.set("ring_sigma", RING_SIGMA);
    kv
}

/// Writes the container and its sidecar.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, encode(ds)?)?;
    fs::write(sidecar_path(path), metadata(ds).to_text())?;
    Ok(())
}

fn parse_floats<const N: usize>(text: &str, key: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad number '{t}' in {key}"))))
        .collect::<Result<_>>()?;
    vals.try_into().map_err(|_| Error::Format(format!("{key} needs {N} numbers")))
}

fn spec_from_meta(kv: &KeyValues, family: Family) -> Result<ProblemSpec> {
    let source = match kv.require::<String>("source")?.as_str() {
        "manufactured-poisson" => SourceSpec::ManufacturedPoisson,
        "constant-one" => SourceSpec::ConstantOne,
        "gaussian-sum" => {
            let c: [f64; 6] = parse_floats(&kv.require::<String>("source_centers")?, "source_centers")?;
            let sigmas: [f64; 3] = parse_floats(&kv.require::<String>("source_sigmas")?, "source_sigmas")?;
            SourceSpec::GaussianSumHelmholtz { centers: [(c[0], c[1]), (c[2], c[3]), (c[4], c[5])], sigmas }
        }
        other => return Err(Error::Format(format!("unknown source '{other}'"))),
    };
    let spec = ProblemSpec {
        family,
        kappa_sq: kv.require("kappa_sq")?,
        beta: kv.require("beta")?,
        contrast: kv.require("contrast")?,
        boundary: crate::problem::BoundaryKind::from_name(&kv.require::<String>("boundary")?)?,
        source,
    };
    spec.validate().map_err(|e| Error::Format(format!("sidecar constants: {e}")))?;
    Ok(spec)
}

/// Reads a container and its sidecar; truncation, trailing bytes and header/sidecar
/// disagreement are all format errors.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let side = fs::read_to_string(sidecar_path(path))
        .map_err(|e| Error::Format(format!("missing or unreadable sidecar {}: {e}", sidecar_path(path).display())))?;
    let kv = KeyValues::parse(&side)?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::Format(format!("{} is not an EPD1 dataset", path.display())));
    }
    let mut cur = Cursor::new(&bytes[4..]);
    let family = Family::from_code(cur.read_u8()?)?;
    let m = cur.read_u32::<LittleEndian>()? as usize;
    let s = cur.read_u32::<LittleEndian>()? as usize;
    let fields = cur.read_u8()?;
    if fields != FIELD_COUNT {
        return Err(Error::Format(format!("expected {FIELD_COUNT} fields per sample, header says {fields}")));
    }
    let expected = (m * m)
        .checked_mul(s)
        .and_then(|v| v.checked_mul(8 * FIELD_COUNT as usize))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!("dataset body has {} bytes, header implies {expected}", bytes.len())));
    }
    if kv.require::<String>("family")?.parse::<Family>()? != family
        || kv.require::<usize>("m")? != m
        || kv.require::<usize>("s")? != s
    {
        return Err(Error::Format("sidecar disagrees with container header".into()));
    }
    let spec = spec_from_meta(&kv, family)?;
    let meta = DatasetMeta {
        seed: kv.require("seed")?,
        index_offset: kv.require("index_offset")?,
        tol: kv.require("solver_tol")?,
        task: kv.require::<String>("task")?.parse()?,
        scaled: kv.require("scaled")?,
        split: kv.require("split")?,
    };
    let read_field = |cur: &mut Cursor<&[u8]>| -> Result<GridField> {
        let mut values = vec![0.0; m * m];
        cur.read_f64_into::<LittleEndian>(&mut values)?;
        GridField::new(m, values)
    };
    let mut samples = Vec::with_capacity(s);
    for _ in 0..s {
        let coef = read_field(&mut cur)?;
        let f = read_field(&mut cur)?;
        let u = read_field(&mut cur)?;
        for field in [&coef, &f, &u] {
            if !field.is_finite() {
                return Err(Error::Format("dataset contains non-finite values".into()));
            }
        }
        samples.push(Sample { coef, f, u });
    }
    let mut rest = Vec::new();
    cur.read_to_end(&mut rest)?;
    assert!(rest.is_empty());
    Ok(Dataset { spec, m, samples, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::build_dataset;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.epd");
        for spec in [ProblemSpec::poisson(6e5), ProblemSpec::helmholtz(100.0, 0.5), ProblemSpec::darcy()] {
            let ds = build_dataset(&spec, 2, 9, 3, 1e-10).unwrap();
            write_dataset(&path, &ds).unwrap();
            assert_eq!(read_dataset(&path).unwrap(), ds);
        }
        let bytes = fs::read(&path).unwrap();
        for cut in [0, 3, HEADER_LEN - 1, HEADER_LEN + 7, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(read_dataset(&path), Err(Error::Format(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        fs::write(&path, &extra).unwrap();
        assert!(read_dataset(&path).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
