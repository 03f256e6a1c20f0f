//! Completed-cell record of a sweep.
//!
//! ```text
//! fabsim-sweep-manifest 1
//! digest 9f1c0e2a44b7d310
//! cells 9
//! done 0
//! done 1
//! ```

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

const MAGIC: &str = "fabsim-sweep-manifest 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub digest: u64,
    pub cells: usize,
    pub done: BTreeSet<usize>,
}

/// FNV-1a over the normalized config, so a resumed sweep can check it
/// belongs to the same experiment.
pub fn digest(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err("missing manifest header".into());
        }
        let digest = lines
            .next()
            .and_then(|l| l.strip_prefix("digest "))
            .and_then(|d| u64::from_str_radix(d, 16).ok())
            .ok_or("malformed digest line")?;
        let cells = lines
            .next()
            .and_then(|l| l.strip_prefix("cells "))
            .and_then(|c| c.parse().ok())
            .ok_or("malformed cells line")?;
        let mut done = BTreeSet::new();
        for (i, l) in lines.enumerate() {
            let idx: usize = l
                .strip_prefix("done ")
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| format!("malformed entry on line {}", i + 4))?;
            if idx >= cells {
                return Err(format!("cell {idx} out of range"));
            }
            if !done.insert(idx) {
                return Err(format!("cell {idx} listed twice"));
            }
        }
        Ok(Manifest { digest, cells, done })
    }

    pub fn create(path: &Path, digest: u64, cells: usize) -> std::io::Result<File> {
        let mut f = File::create(path)?;
        writeln!(f, "{MAGIC}\ndigest {digest:016x}\ncells {cells}")?;
        f.sync_data()?;
        Ok(f)
    }

    pub fn append_to(path: &Path) -> std::io::Result<File> {
        OpenOptions::new().append(true).open(path)
    }

    pub fn record(f: &mut File, idx: usize) -> std::io::Result<()> {
        writeln!(f, "done {idx}")?;
        f.sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let m = Manifest::parse("fabsim-sweep-manifest 1\ndigest 00000000000000ff\ncells 3\ndone 0\ndone 2\n").unwrap();
        assert_eq!(m.digest, 255);
        assert_eq!(m.done.into_iter().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn corrupt_manifests_rejected() {
        for bad in [
            "",
            "garbage",
            "fabsim-sweep-manifest 1\ndigest zz\ncells 3\n",
            "fabsim-sweep-manifest 1\ndigest 1\ncells 3\ndone 5\n",
            "fabsim-sweep-manifest 1\ndigest 1\ncells 3\ndone 1\ndone 1\n",
            "fabsim-sweep-manifest 1\ndigest 1\ncells 3\ndo",
        ] {
            assert!(Manifest::parse(bad).is_err(), "{bad:?}");
        }
    }
}
