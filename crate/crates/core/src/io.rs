//! On-disk formats.
//!
//! Field file (`.phf`): the 8 bytes `PHNLSFLD`, the header length as a
//! little-endian `u64`, a UTF-8 JSON header, then `Nx·K` complex coefficients
//! as little-endian `(re, im)` `f64` pairs, row-major `[row][k]` with
//! `row = j + Nx/2`.
//!
//! Trajectory: a directory of field files plus `manifest.json`.
//!
//! CSV files start with one `#` line holding the code version and the compact
//! config echo, then a header row. Floats use the shortest round-trip form.

use crate::error::{Error, Result};
use crate::evolve::Observables;
use crate::spectral::{BasisParams, BasisSpec, SpectralField, Trajectory, C64};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const MAGIC: &[u8; 8] = b"PHNLSFLD";
pub const OBSERVABLES_HEADER: &str = "t,mass,energy,h1,h2,h4";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub format: String,
    pub version: String,
    pub spec: BasisParams,
    pub endianness: String,
    pub layout: String,
    /// Time of the frame, when the field belongs to a trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

impl FieldHeader {
    fn new(spec: &BasisSpec, t: Option<f64>) -> Self {
        FieldHeader {
            format: "phnls-field".into(),
            version: VERSION.into(),
            spec: spec.params(),
            endianness: "little".into(),
            layout: "row-major [row][k], row = j + Nx/2, (re, im) f64 pairs".into(),
            t,
        }
    }
}

pub fn encode_field(u: &SpectralField, t: Option<f64>) -> Vec<u8> {
    let header = serde_json::to_vec(&FieldHeader::new(u.spec(), t)).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 16 * u.coeffs().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for c in u.coeffs() {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<(FieldHeader, SpectralField)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Io("not a field file (bad magic)".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| Error::Io("field file truncated inside the header".into()))?;
    let header: FieldHeader = serde_json::from_slice(body)?;
    if header.endianness != "little" {
        return Err(Error::Io(format!("unsupported endianness {:?}", header.endianness)));
    }
    let spec = BasisSpec::from_params(&header.spec)?;
    let data = &bytes[16 + hlen..];
    if data.len() != 16 * spec.len() {
        return Err(Error::Shape(format!("expected {} coefficient bytes, found {}", 16 * spec.len(), data.len())));
    }
    let coeffs = data
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("eight bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("eight bytes"));
            C64::new(re, im)
        })
        .collect();
    Ok((header, SpectralField::from_coeffs(&spec, coeffs)?))
}

pub fn write_field(path: &Path, u: &SpectralField) -> Result<()> {
    fs::write(path, encode_field(u, None))?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<SpectralField> {
    Ok(decode_field(&fs::read(path)?)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub t0: f64,
    pub dt: f64,
    pub frames: usize,
    pub files: Vec<String>,
    pub spec: BasisParams,
    pub config: serde_json::Value,
}

/// Writes `traj` into `dir` (created if missing) as numbered field files and a manifest.
pub fn write_trajectory(dir: &Path, traj: &Trajectory, config: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(traj.len());
    for (n, u) in traj.frames.iter().enumerate() {
        let name = format!("frame_{n:06}.phf");
        fs::write(dir.join(&name), encode_field(u, Some(traj.time(n))))?;
        files.push(name);
    }
    let manifest = Manifest {
        format: "phnls-trajectory".into(),
        version: VERSION.into(),
        t0: traj.t0,
        dt: traj.dt,
        frames: traj.len(),
        files,
        spec: traj.spec.params(),
        config: config.clone(),
    };
    fs::write(dir.join("manifest.json"), to_json(&manifest)?)?;
    Ok(())
}

pub fn read_trajectory(dir: &Path) -> Result<(Manifest, Trajectory)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.files.len() != manifest.frames {
        return Err(Error::Io(format!("manifest lists {} files for {} frames", manifest.files.len(), manifest.frames)));
    }
    let spec = BasisSpec::from_params(&manifest.spec)?;
    let mut frames = Vec::with_capacity(manifest.frames);
    for f in &manifest.files {
        let u = read_field(&dir.join(f))?;
        if !u.spec().compatible(&spec) {
            return Err(Error::Shape(format!("{f} does not match the manifest spec")));
        }
        frames.push(u);
    }
    let traj = Trajectory::new(manifest.t0, manifest.dt, frames)?;
    Ok((manifest, traj))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// The `#` line that opens every CSV file.
pub fn csv_preamble(config: &serde_json::Value) -> String {
    format!("# phnls {VERSION} config={config}\n")
}

pub fn observables_csv(obs: &[Observables], config: &serde_json::Value) -> String {
    let mut s = csv_preamble(config);
    s.push_str(OBSERVABLES_HEADER);
    s.push('\n');
    for o in obs {
        s.push_str(&format!("{:?},{:?},{:?},{:?},{:?},{:?}\n", o.t, o.mass, o.energy, o.h1, o.h2, o.h4));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{simulate, InitialData, Normalization, Sign, SimConfig};
    use proptest::prelude::*;

    fn field(seed: u64) -> SpectralField {
        let spec = BasisSpec::new(4.0, 8, 6).unwrap();
        InitialData::RandomSobolev { s: 0.0, decay: 30.0, normalization: Normalization::L2(1.0) }
            .build(&spec, seed)
            .unwrap()
    }

    #[test]
    fn field_layout() {
        let spec = BasisSpec::new(2.0, 4, 3).unwrap();
        let u = SpectralField::unit(&spec, -1, 2).unwrap();
        let bytes = encode_field(&u, None);
        assert_eq!(&bytes[..8], MAGIC);
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let data = &bytes[16 + hlen..];
        assert_eq!(data.len(), 4 * 3 * 16);
        // j = -1 sits in row 1, mode 2: pair index 5
        let re = f64::from_le_bytes(data[5 * 16..5 * 16 + 8].try_into().unwrap());
        assert_eq!(re, 1.0);
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(header["spec"]["nx"], 4);
        assert_eq!(header["endianness"], "little");
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode_field(&field(1), None);
        assert!(decode_field(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_field(b"NOTAFILE........").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_field(&bad).is_err());
    }

    #[test]
    fn trajectory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SimConfig::new(
            BasisParams { lx: 4.0, nx: 16, k: 8, nodes: None },
            Sign::Plus,
            1e-2,
            0.05,
            InitialData::CoherentGaussian { center: [0.0, 0.0], momentum: [1.0, 0.0], width: 1.0, normalization: Normalization::H1(1.0) },
        );
        cfg.output_every = 1;
        let out = simulate(&cfg).unwrap();
        let echo = serde_json::to_value(&cfg).unwrap();
        write_trajectory(dir.path(), &out.trajectory, &echo).unwrap();
        let (m, back) = read_trajectory(dir.path()).unwrap();
        assert_eq!(m.config, echo);
        assert_eq!(m.frames, 6);
        assert_eq!(back.dt, out.trajectory.dt);
        for (a, b) in back.frames.iter().zip(&out.trajectory.frames) {
            assert_eq!(a.coeffs(), b.coeffs());
        }
        let csv = observables_csv(&out.observables, &echo);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# phnls "));
        assert_eq!(lines.next(), Some(OBSERVABLES_HEADER));
        let ts: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn field_roundtrip_is_bit_exact(seed in 0u64..10_000) {
            let u = field(seed);
            let (h, back) = decode_field(&encode_field(&u, Some(0.5))).unwrap();
            prop_assert_eq!(h.t, Some(0.5));
            prop_assert_eq!(back.coeffs(), u.coeffs());
        }
    }
}
