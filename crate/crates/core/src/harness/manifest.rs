//! Tab-separated utterance manifests. Paths are stored relative to the
//! manifest's directory so a run tree can be moved or compared as a whole.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{open_read, write_atomic};
use crate::error::{Error, Result};

pub const HEADER: &str = "utterance_id\tpath\tspeaker_id\tphrase_id\tlabel\tsession";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Genuine,
    Playback,
    EnhancedPlayback,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Playback => "playback",
            Label::EnhancedPlayback => "enhanced_playback",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genuine" => Ok(Label::Genuine),
            "playback" => Ok(Label::Playback),
            "enhanced_playback" => Ok(Label::EnhancedPlayback),
            other => Err(Error::Parse(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub utterance_id: String,
    /// Absolute, or relative to the working directory.
    pub path: PathBuf,
    pub speaker_id: String,
    pub phrase_id: String,
    pub label: Label,
    pub session: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

fn check_field(what: &str, v: &str) -> Result<()> {
    if v.is_empty() || v.contains(['\t', '\n', '\r']) {
        return Err(Error::Data(format!("{what} {v:?} is empty or contains tabs/newlines")));
    }
    Ok(())
}

impl Manifest {
    pub fn push(&mut self, row: ManifestRow) -> Result<()> {
        check_field("utterance id", &row.utterance_id)?;
        check_field("speaker id", &row.speaker_id)?;
        check_field("phrase id", &row.phrase_id)?;
        if self.rows.iter().any(|r| r.utterance_id == row.utterance_id) {
            return Err(Error::Data(format!("duplicate utterance id {:?}", row.utterance_id)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.utterance_id == id)
    }

    /// Rows whose speaker is in `speakers`.
    pub fn for_speakers(&self, speakers: &[String]) -> Vec<&ManifestRow> {
        self.rows.iter().filter(|r| speakers.contains(&r.speaker_id)).collect()
    }

    /// Sorted distinct speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.iter().map(|r| r.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let (Ok(p), Ok(b)) = (std::path::absolute(path), std::path::absolute(base)) else {
        return path.to_path_buf();
    };
    let pc: Vec<_> = p.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = pc.iter().zip(&bc).take_while(|(a, b)| a == b).count();
    if common == 0 {
        return p;
    }
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &pc[common..] {
        out.push(c);
    }
    out
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    write_atomic(path, |w| {
        writeln!(w, "{HEADER}")?;
        for r in &m.rows {
            let rel = relative_to(&r.path, base);
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.utterance_id,
                rel.to_string_lossy().replace('\\', "/"),
                r.speaker_id,
                r.phrase_id,
                r.label.as_str(),
                r.session
            )?;
        }
        Ok(())
    })
}

/// Reads a manifest and checks that ids are unique and every path exists.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let r = open_read(path)?;
    let mut m = Manifest::default();
    let mut seen = HashSet::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 {
            if line.trim_end() != HEADER {
                return Err(Error::Parse(format!("{}: bad manifest header", path.display())));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::Parse(format!(
                "{}:{}: expected 6 fields, got {}",
                path.display(),
                n + 1,
                f.len()
            )));
        }
        let session = f[5]
            .parse()
            .map_err(|_| Error::Parse(format!("{}:{}: bad session {:?}", path.display(), n + 1, f[5])))?;
        let file = base.join(f[1]);
        if !file.is_file() {
            return Err(Error::Data(format!(
                "{}:{}: audio file {} not found",
                path.display(),
                n + 1,
                file.display()
            )));
        }
        if !seen.insert(f[0].to_string()) {
            return Err(Error::Data(format!("{}: duplicate utterance id {:?}", path.display(), f[0])));
        }
        m.rows.push(ManifestRow {
            utterance_id: f[0].into(),
            path: file,
            speaker_id: f[2].into(),
            phrase_id: f[3].into(),
            label: f[4].parse()?,
            session,
        });
    }
    Ok(m)
}
