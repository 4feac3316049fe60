//! On-disk cache of assembled operators, keyed by the geometry that built them.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ctjoint::geometry::GeometryConfig;
use ctjoint::operators::{assemble_radon, assemble_toric, Branch, SparseLinearOperator};
use ctjoint::solvers::Operators;

use crate::manifest::sha256_bytes;
use crate::CliError;

const CACHE_VERSION: &str = "ctjoint-operators-1";

/// Operators of one geometry together with the digests of their binary form.
pub struct LoadedOperators {
    pub ops: Operators,
    pub digests: BTreeMap<String, String>,
    pub cache_hits: usize,
}

fn key(geom: &GeometryConfig, kind: &str) -> String {
    let canon = toml::to_string(geom).expect("geometry serializes");
    sha256_bytes(format!("{CACHE_VERSION}\n{kind}\n{canon}").as_bytes())
}

fn encode(op: &SparseLinearOperator) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    op.write_binary(&mut buf)?;
    Ok(buf)
}

fn cached(
    dir: Option<&Path>,
    geom: &GeometryConfig,
    kind: &str,
    build: impl FnOnce() -> ctjoint::Result<SparseLinearOperator>,
    hits: &mut usize,
) -> Result<(SparseLinearOperator, String), CliError> {
    let file: Option<PathBuf> = dir.map(|d| d.join(format!("{}.bin", key(geom, kind))));
    if let Some(f) = file.as_ref().filter(|f| f.exists()) {
        let bytes = fs::read(f)?;
        // a corrupt entry is rebuilt rather than trusted
        if let Ok(op) = SparseLinearOperator::read_binary(&mut BufReader::new(bytes.as_slice())) {
            *hits += 1;
            return Ok((op, sha256_bytes(&bytes)));
        }
    }
    let op = build()?;
    let bytes = encode(&op)?;
    if let Some(f) = file {
        fs::create_dir_all(f.parent().expect("cache file has a parent"))?;
        let tmp = f.with_extension("tmp");
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(&bytes)?;
        w.flush()?;
        drop(w);
        fs::rename(&tmp, &f)?;
    }
    Ok((op, sha256_bytes(&bytes)))
}

pub fn load_operators(geom: &GeometryConfig, m: usize, dir: Option<&Path>) -> Result<LoadedOperators, CliError> {
    let cfg = geom.scanner()?;
    let image = geom.image_grid()?;
    let lines = geom.line_grid()?;
    let torics = geom.toric_grid()?;
    let mut hits = 0;
    let mut digests = BTreeMap::new();
    let (radon_limited, d) =
        cached(dir, geom, "radon_limited", || assemble_radon(&image, &lines, true, &cfg), &mut hits)?;
    digests.insert("radon_limited".to_string(), d);
    let (radon, d) = cached(dir, geom, "radon", || assemble_radon(&image, &lines, false, &cfg), &mut hits)?;
    digests.insert("radon".to_string(), d);
    let (toric, d) = cached(dir, geom, "toric", || assemble_toric(&image, &torics, &cfg, Branch::Both), &mut hits)?;
    digests.insert("toric".to_string(), d);
    let ops = Operators::from_parts(geom, m, radon_limited, radon, toric)?;
    Ok(LoadedOperators { ops, digests, cache_hits: hits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctjoint::geometry::ImageGrid;

    fn small() -> GeometryConfig {
        let mut g = GeometryConfig { n_r: 40, r_step: 0.2, n_x0: 30, x0_step: 0.25, n_theta: 30, ..Default::default() };
        g.set_image_grid(&ImageGrid::reconstruction(16));
        g
    }

    #[test]
    fn cache_roundtrip_matches_fresh_assembly() {
        let tmp = tempfile::tempdir().unwrap();
        let g = small();
        let fresh = load_operators(&g, 2, None).unwrap();
        assert_eq!(fresh.cache_hits, 0);
        let first = load_operators(&g, 2, Some(tmp.path())).unwrap();
        let second = load_operators(&g, 2, Some(tmp.path())).unwrap();
        assert_eq!(second.cache_hits, 3);
        assert_eq!(first.digests, fresh.digests);
        assert_eq!(second.digests, fresh.digests);
        assert_eq!(second.ops.toric, fresh.ops.toric);
    }

    #[test]
    fn geometry_changes_the_key() {
        let g = small();
        let mut h = g.clone();
        h.r_step = 0.21;
        assert_ne!(key(&g, "toric"), key(&h, "toric"));
        assert_ne!(key(&g, "toric"), key(&g, "radon"));
    }

    #[test]
    fn corrupt_entry_is_rebuilt() {
        let tmp = tempfile::tempdir().unwrap();
        let g = small();
        load_operators(&g, 2, Some(tmp.path())).unwrap();
        let f = tmp.path().join(format!("{}.bin", key(&g, "toric")));
        fs::write(&f, b"garbage").unwrap();
        let again = load_operators(&g, 2, Some(tmp.path())).unwrap();
        assert_eq!(again.cache_hits, 2);
        assert_eq!(again.digests, load_operators(&g, 2, None).unwrap().digests);
    }
}
