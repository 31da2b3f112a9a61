use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mefuse_core::digest::{json_digest, sha256_file};
use mefuse_core::DataError;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "mefuse-manifest-v1";

/// What a command read and wrote. Paths are relative (inputs as written in
/// the config, outputs to the run directory) and maps are ordered, so
/// repeating a run reproduces the file byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub version: String,
    pub core_version: String,
    pub seed: u64,
    pub config_digest: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Collects digests while a command runs.
#[derive(Debug, Default)]
pub struct Recorder {
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    /// `shown` is the path as the user wrote it; `actual` is where it lives.
    pub fn input(&mut self, shown: &Path, actual: &Path) -> Result<String, CliError> {
        let digest = sha256_file(actual).map_err(mefuse_core::Error::from)?;
        self.inputs.insert(slashed(shown), digest.clone());
        Ok(digest)
    }

    pub fn outputs<I: IntoIterator<Item = PathBuf>>(&mut self, paths: I) {
        self.outputs.extend(paths);
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn finish(self, command: &str, config: &RunConfig, seed: u64, out: &Path) -> Result<PathBuf, CliError> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            let rel = p.strip_prefix(out).unwrap_or(p);
            outputs.insert(slashed(rel), sha256_file(p).map_err(mefuse_core::Error::from)?);
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: mefuse_core::VERSION.into(),
            seed,
            config_digest: json_digest(config),
            config: config.clone(),
            inputs: self.inputs,
            outputs,
        };
        let path = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        std::fs::write(&path, text + "\n").map_err(|source| DataError::Io { path: path.clone(), source })?;
        Ok(path)
    }
}

fn slashed(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| DataError::Io { path: path.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| mefuse_core::Error::from(DataError::Json { path, source }).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_sorted_paths() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        std::fs::create_dir_all(out.join("sub")).unwrap();
        std::fs::write(out.join("b.txt"), "b").unwrap();
        std::fs::write(out.join("sub/a.txt"), "abc").unwrap();
        let mut r = Recorder::default();
        r.input(Path::new("data/in.txt"), &out.join("b.txt")).unwrap();
        r.outputs([out.join("sub/a.txt"), out.join("b.txt")]);
        r.finish("test", &RunConfig::default(), 3, out).unwrap();
        let m = read_manifest(out).unwrap();
        assert_eq!(m.outputs.keys().collect::<Vec<_>>(), ["b.txt", "sub/a.txt"]);
        assert_eq!(m.outputs["sub/a.txt"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(m.inputs.keys().collect::<Vec<_>>(), ["data/in.txt"]);
        assert_eq!(m.seed, 3);
    }
}
