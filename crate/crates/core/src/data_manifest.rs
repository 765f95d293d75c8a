//! Video manifests: one JSON object per line after a version header.
//!
//! ```text
//! #forgery-kit-manifest v1
//! {"video_id": "vid_0000", "path": "videos/vid_0000", "label": 0, "split": "train", "source": "synthetic"}
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

pub const MANIFEST_HEADER: &str = "#forgery-kit-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(invalid!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
    #[serde(default = "default_source")]
    pub source: String,
}

fn default_source() -> String {
    "unknown".into()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == MANIFEST_HEADER => {}
        Some((i, l)) => {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected header {MANIFEST_HEADER:?}, found {:?}", l.trim()),
            ))
        }
        None => return Err(Error::parse(path, 1, "empty manifest")),
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim_start().starts_with('#') {
            continue;
        }
        let mut entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if entry.video_id.is_empty() {
            return Err(Error::parse(path, i + 1, "empty video_id"));
        }
        if !seen.insert(entry.video_id.clone()) {
            return Err(Error::parse(path, i + 1, format!("duplicate video_id {}", entry.video_id)));
        }
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
        out.push(entry);
    }
    Ok(out)
}

/// Writes entries with paths as given.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        out.push_str(&serde_json::to_string(e).map_err(|e| invalid!("{e}"))?);
        out.push('\n');
    }
    fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn filter_split(entries: &[ManifestEntry], split: Split) -> Vec<ManifestEntry> {
    entries.iter().filter(|e| e.split == split).cloned().collect()
}

/// Randomly drops majority-class entries until both classes have the same
/// count. Kept entries stay in input order.
pub fn balance_downsample(entries: &[ManifestEntry], seed: u64) -> Result<Vec<ManifestEntry>> {
    let (fake, real): (Vec<usize>, Vec<usize>) = (0..entries.len()).partition(|&i| entries[i].label == Label::Fake);
    if fake.is_empty() || real.is_empty() {
        return Err(invalid!(
            "balancing needs both classes ({} fake, {} real)",
            fake.len(),
            real.len()
        ));
    }
    let (major, minor) = if fake.len() >= real.len() { (fake, real) } else { (real, fake) };
    let mut keep = vec![false; entries.len()];
    for &i in &minor {
        keep[i] = true;
    }
    let mut rng = seed::rng(seed);
    for j in index::sample(&mut rng, major.len(), minor.len()) {
        keep[major[j]] = true;
    }
    Ok(entries
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e.clone())
        .collect())
}

/// Balances each source separately, then keeps input order.
pub fn balance_per_source(entries: &[ManifestEntry], seed: u64) -> Result<Vec<ManifestEntry>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        groups.entry(e.source.as_str()).or_default().push(i);
    }
    let mut keep = vec![false; entries.len()];
    for (g, (source, idx)) in groups.iter().enumerate() {
        let group: Vec<ManifestEntry> = idx.iter().map(|&i| entries[i].clone()).collect();
        let balanced = balance_downsample(&group, seed::derive(seed, &[g as u64]))
            .map_err(|e| invalid!("source {source}: {e}"))?;
        let ids: HashSet<&str> = balanced.iter().map(|e| e.video_id.as_str()).collect();
        for &i in idx {
            keep[i] = ids.contains(entries[i].video_id.as_str());
        }
    }
    Ok(entries
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: usize, label: Label, source: &str) -> ManifestEntry {
        ManifestEntry {
            video_id: format!("v{id}"),
            path: PathBuf::from(format!("videos/v{id}")),
            label,
            split: Split::Train,
            source: source.into(),
        }
    }

    fn corpus(fakes: usize, reals: usize) -> Vec<ManifestEntry> {
        (0..fakes + reals)
            .map(|i| entry(i, if i < fakes { Label::Fake } else { Label::Real }, "s"))
            .collect()
    }

    fn count(es: &[ManifestEntry], l: Label) -> usize {
        es.iter().filter(|e| e.label == l).count()
    }

    #[test]
    fn downsample_counts() {
        let out = balance_downsample(&corpus(10, 4), 1).unwrap();
        assert_eq!((count(&out, Label::Fake), count(&out, Label::Real)), (4, 4));
        let balanced = corpus(5, 5);
        assert_eq!(balance_downsample(&balanced, 9).unwrap(), balanced);
        assert!(balance_downsample(&corpus(3, 0), 1).is_err());
    }

    #[test]
    fn seeds_control_selection() {
        let c = corpus(100, 4);
        let a = balance_downsample(&c, 5).unwrap();
        assert_eq!(a, balance_downsample(&c, 5).unwrap());
        assert_ne!(a, balance_downsample(&c, 6).unwrap());
    }

    #[test]
    fn per_source_balancing() {
        let mut c = corpus(6, 2);
        c.extend((10..16).map(|i| entry(i, if i < 12 { Label::Fake } else { Label::Real }, "t")));
        let out = balance_per_source(&c, 3).unwrap();
        for s in ["s", "t"] {
            let part: Vec<_> = out.iter().filter(|e| e.source == s).cloned().collect();
            assert_eq!(count(&part, Label::Fake), count(&part, Label::Real));
        }
        assert_eq!(out.len(), 4 + 4);
    }

    #[test]
    fn manifest_roundtrip_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let c = corpus(1, 1);
        write_manifest(&path, &c).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].path, dir.path().join("videos/v0"));
        assert_eq!(back[1].label, Label::Real);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let good = r#"{"video_id": "a", "path": "x", "label": 1, "split": "train", "source": "s"}"#;
        fs::write(&path, format!("{MANIFEST_HEADER}\n{good}\n{good}\n")).unwrap();
        match load_manifest(&path).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"));
            }
            e => panic!("unexpected {e}"),
        }
        fs::write(&path, format!("{MANIFEST_HEADER}\n{}\n", good.replace("\"label\": 1", "\"label\": 2"))).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Parse { line: 2, .. })));
        fs::write(&path, format!("{good}\n")).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Parse { line: 1, .. })));
    }
}
