//! `CORF` region-feature files with a sidecar id manifest.
//!
//! Layout: `CORF`, u32 image count, u32 feature dim, then per image a u32
//! region count followed by f32 little-endian rows. Image ids live one per
//! line in `<path>.ids`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;

const MAGIC: &[u8; 4] = b"CORF";

/// Region features of many images, in manifest order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegionSet {
    pub ids: Vec<String>,
    pub images: Vec<DenseMatrix>,
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn write_regions(path: &Path, set: &RegionSet) -> Result<()> {
    if set.ids.len() != set.images.len() {
        return Err(Error::invalid("region set ids and images differ in length"));
    }
    let dim = set.images.first().map_or(0, DenseMatrix::cols);
    if set.images.iter().any(|m| m.cols() != dim) {
        return Err(Error::shape("region feature dims differ between images"));
    }
    if set.ids.iter().any(|id| id.contains('\n') || id.is_empty()) {
        return Err(Error::invalid("image ids must be non-empty single lines"));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(set.len() as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for m in &set.images {
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        for &x in m.as_slice() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    let mut manifest = set.ids.join("\n");
    if !manifest.is_empty() {
        manifest.push('\n');
    }
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

pub fn read_regions(path: &Path) -> Result<RegionSet> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes);
    r.magic(MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut images = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let n = r.u32()? as usize;
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Error::format("region block too large"))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::format("region block too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        images.push(DenseMatrix::new(n, dim, data).map_err(|e| Error::format(e.to_string()))?);
    }
    if !r.done() {
        return Err(Error::format("trailing bytes after region data"));
    }
    let ids: Vec<String> = fs::read_to_string(manifest_path(path))?
        .lines()
        .map(String::from)
        .collect();
    if ids.len() != count {
        return Err(Error::format(format!(
            "manifest lists {} ids for {count} images",
            ids.len()
        )));
    }
    Ok(RegionSet { ids, images })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn roundtrip_through_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let images: Vec<DenseMatrix> = [3, 1, 5]
            .iter()
            .map(|&n| {
                let m = DenseMatrix::random_normal(n, 7, 1.0, &mut rng);
                // f32-representable so the roundtrip is exact
                DenseMatrix::new(n, 7, m.as_slice().iter().map(|&x| x as f32 as f64).collect()).unwrap()
            })
            .collect();
        let set = RegionSet {
            ids: vec!["a".into(), "b".into(), "c".into()],
            images,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.corf");
        write_regions(&path, &set).unwrap();
        assert_eq!(read_regions(&path).unwrap(), set);
    }

    #[test]
    fn rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.corf");
        let set = RegionSet {
            ids: vec!["a".into()],
            images: vec![DenseMatrix::zeros(2, 3)],
        };
        write_regions(&path, &set).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_regions(&path), Err(Error::Format(_))));
        fs::write(&path, b"NOPE").unwrap();
        assert!(read_regions(&path).is_err());
    }
}
