//! `DSF1` scene files and manifest-indexed dataset directories.
//!
//! Layout (little endian): magic `DSF1`, `u32` version, `u32` n1, `u32` n2,
//! `f32` source `[n1 x 3]`, `f32` target `[n2 x 3]`, `f32` gt flow
//! `[n1 x 3]`, `u8` valid mask `[n1]`.

use std::fs;
use std::path::Path;

use super::{FlowField, PointCloud, ScenePair};
use crate::error::{Error, Result};
use crate::numerics::RealArray;

const MAGIC: &[u8; 4] = b"DSF1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn encode_scene(pair: &ScenePair) -> Result<Vec<u8>> {
    pair.validate()?;
    let (n1, n2) = (pair.n1(), pair.n2());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * 3 * (2 * n1 + n2) + n1);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n1 as u32).to_le_bytes());
    out.extend_from_slice(&(n2 as u32).to_le_bytes());
    for arr in [pair.source.points(), pair.target.points(), pair.gt_flow.vectors()] {
        for v in arr.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend(pair.valid_mask.iter().map(|&m| m as u8));
    Ok(out)
}

fn parse_err(reason: impl Into<String>) -> Error {
    Error::Parse {
        what: "DSF1 scene".into(),
        reason: reason.into(),
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

pub fn decode_scene(bytes: &[u8]) -> Result<ScenePair> {
    if bytes.len() < HEADER_LEN {
        return Err(parse_err("truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(parse_err("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    if word(4) != VERSION as usize {
        return Err(parse_err(format!("unsupported version {}", word(4))));
    }
    let (n1, n2) = (word(8), word(12));
    let expected = HEADER_LEN + 12 * (2 * n1 + n2) + n1;
    if bytes.len() < expected {
        return Err(parse_err(format!("truncated: {} bytes, expected {expected}", bytes.len())));
    }
    if bytes.len() > expected {
        let extra = bytes.len() - expected;
        // Whole extra rows of three floats can only come from a flow block
        // written with a different row count than the source.
        return Err(if extra % 12 == 0 {
            invalid("gt_flow", format!("row count does not match source rows ({n1}): {} surplus rows", extra / 12))
        } else {
            parse_err(format!("{extra} trailing bytes"))
        });
    }
    let floats = |offset: usize, rows: usize, field: &str| -> Result<RealArray> {
        let data: Vec<f32> = bytes[offset..offset + rows * 12]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid(field, "non-finite value"));
        }
        Ok(RealArray::from_parts(vec![rows, 3], data))
    };
    let mut off = HEADER_LEN;
    let source = floats(off, n1, "source")?;
    off += n1 * 12;
    let target = floats(off, n2, "target")?;
    off += n2 * 12;
    let flow = floats(off, n1, "gt_flow")?;
    off += n1 * 12;
    let mask = bytes[off..off + n1]
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(invalid("valid_mask", format!("byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    let cloud = |a: RealArray, field: &str| PointCloud::new(a).map_err(|e| invalid(field, e.to_string()));
    ScenePair::new(cloud(source, "source")?, cloud(target, "target")?, FlowField::new(flow)?, mask)
}

pub fn save_scene(path: impl AsRef<Path>, pair: &ScenePair) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_scene(pair)?).map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<ScenePair> {
    let path = path.as_ref();
    decode_scene(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Writes `scene_NNNNN.dsf` files plus a manifest listing them.
pub fn save_dataset(dir: impl AsRef<Path>, scenes: &[ScenePair]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, s) in scenes.iter().enumerate() {
        let name = format!("scene_{i:05}.dsf");
        save_scene(dir.join(&name), s)?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    let mpath = dir.join(MANIFEST_NAME);
    fs::write(&mpath, manifest).map_err(|e| Error::io(mpath, e))
}

/// Loads every scene listed in the directory's manifest, in order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<ScenePair>> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let scenes = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|name| load_scene(dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    if scenes.is_empty() {
        return Err(Error::Parse {
            what: mpath.display().to_string(),
            reason: "manifest lists no scenes".into(),
        });
    }
    Ok(scenes)
}

/// One `x,y,z` row per vector under a header row.
pub fn flow_csv(flow: &FlowField) -> String {
    let mut s = String::from("x,y,z\n");
    for i in 0..flow.len() {
        let [x, y, z] = flow.vector(i);
        s.push_str(&format!("{x},{y},{z}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::pointcloud::{generate_scene, SceneGenConfig};

    fn scene(seed: u64) -> ScenePair {
        let cfg = SceneGenConfig {
            n1: 50,
            n2: 40,
            occlusion_fraction: 0.2,
            ..SceneGenConfig::default()
        };
        generate_scene(&cfg, &mut RngStream::new(seed)).unwrap()
    }

    #[test]
    fn flow_csv_rows() {
        let f = FlowField::from_vectors(&[[0.5, -1.0, 2.0], [0.0, 0.0, 0.25]]).unwrap();
        assert_eq!(flow_csv(&f), "x,y,z\n0.5,-1,2\n0,0,0.25\n");
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = scene(1);
        let back = decode_scene(&encode_scene(&s).unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn truncated_is_parse_error() {
        let bytes = encode_scene(&scene(2)).unwrap();
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(decode_scene(&bytes[..cut]), Err(Error::Parse { .. })));
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_scene(&scene(3)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_scene(&bytes), Err(Error::Parse { .. })));
    }

    #[test]
    fn flow_row_mismatch_names_field() {
        let s = scene(4);
        // Hand-assemble a file whose flow block has two extra rows.
        let mut bytes = encode_scene(&s).unwrap();
        let mask_start = bytes.len() - s.n1();
        let mask: Vec<u8> = bytes.split_off(mask_start);
        bytes.extend(std::iter::repeat(0u8).take(24));
        bytes.extend(mask);
        match decode_scene(&bytes) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "gt_flow"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_rejects_inconsistent_pair() {
        let mut s = scene(5);
        s.valid_mask.pop();
        assert!(matches!(encode_scene(&s), Err(Error::Validation { field, .. }) if field == "valid_mask"));
    }

    #[test]
    fn non_finite_rejected() {
        let s = scene(6);
        let mut bytes = encode_scene(&s).unwrap();
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_scene(&bytes), Err(Error::Validation { field, .. }) if field == "source"));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = vec![scene(7), scene(8)];
        save_dataset(dir.path(), &scenes).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), scenes);
    }
}
