//! Pairs manifests and assembly of on-disk inputs into datasets.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cora::encoders::{read_regions, RegionSet};
use cora::sgparse::{graphs_from_json, SceneGraph};
use cora::training::Dataset;

/// `(image id, caption id)` lines of a pairs manifest.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(i), Some(c), None) if !i.is_empty() && !c.is_empty() => out.push((i.to_string(), c.to_string())),
            _ => bail!("pairs line {}: expected image_id<TAB>caption_id", n + 1),
        }
    }
    Ok(out)
}

pub fn format_pairs(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(i, c)| format!("{i}\t{c}\n")).collect()
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading pairs {}", path.display()))?;
    parse_pairs(&text).with_context(|| format!("pairs {}", path.display()))
}

/// Captions are identified by their position in the graphs file.
pub fn caption_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

pub fn read_graphs(path: &Path) -> Result<Vec<SceneGraph>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading graphs {}", path.display()))?;
    graphs_from_json(&text).with_context(|| format!("graphs {}", path.display()))
}

pub fn load_regions(path: &Path) -> Result<RegionSet> {
    read_regions(path).with_context(|| format!("reading regions {}", path.display()))
}

/// Resolves manifest ids to positions in `images` and `captions`.
pub fn resolve_pairs(
    pairs: &[(String, String)],
    image_ids: &[String],
    caption_ids: &[String],
) -> Result<Vec<(usize, usize)>> {
    let img: HashMap<&str, usize> = image_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let cap: HashMap<&str, usize> = caption_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    pairs
        .iter()
        .map(|(i, c)| {
            let Some(&a) = img.get(i.as_str()) else {
                bail!("pairs mention unknown image {i:?}");
            };
            let Some(&b) = cap.get(c.as_str()) else {
                bail!("pairs mention unknown caption {c:?}");
            };
            Ok((a, b))
        })
        .collect()
}

pub fn load_dataset(regions: &Path, graphs: &Path, pairs: &Path) -> Result<Dataset> {
    let set = load_regions(regions)?;
    let captions = read_graphs(graphs)?;
    let manifest = read_pairs(pairs)?;
    let pairs = resolve_pairs(&manifest, &set.ids, &caption_ids(captions.len()))?;
    let data = Dataset {
        images: set.images,
        captions,
        pairs,
    };
    data.validate()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let p = vec![("a".to_string(), "0".to_string()), ("b c".to_string(), "1".to_string())];
        assert_eq!(parse_pairs(&format_pairs(&p)).unwrap(), p);
        assert!(parse_pairs("a\n").is_err());
        assert!(parse_pairs("a\t1\t2\n").is_err());
        assert!(parse_pairs("\t1\n").is_err());
        assert!(parse_pairs("").unwrap().is_empty());
    }

    #[test]
    fn unknown_ids_are_reported() {
        let ids = ["x".to_string()];
        let caps = caption_ids(2);
        let ok = resolve_pairs(&[("x".into(), "1".into())], &ids, &caps).unwrap();
        assert_eq!(ok, vec![(0, 1)]);
        assert!(resolve_pairs(&[("y".into(), "1".into())], &ids, &caps).is_err());
        assert!(resolve_pairs(&[("x".into(), "2".into())], &ids, &caps).is_err());
    }
}
