//! Run configuration, manifests and artifact writes.
//!
//! A config file holds one `key = value` pair per line, `#` starts a
//! comment. Keys are long flag names. A flag given on the command line
//! wins over the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", i + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            bail!("config line {}: `{key}` given twice", i + 1);
        }
    }
    Ok(out)
}

/// Resolves settings from flags, then the config file, then defaults, and
/// remembers every resolved value for the manifest.
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Settings {
            file,
            resolved: BTreeMap::new(),
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Settings::new(file))
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.file.remove(key);
        let value = match (flag, from_file) {
            (Some(v), _) => Some(v),
            (None, Some(text)) => Some(text.parse::<T>().map_err(|e| anyhow!("config key `{key}`: {e}"))?),
            (None, None) => None,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.optional(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| anyhow!("missing required setting `{key}` (flag --{key} or config key)"))
    }

    /// Fails on config keys the subcommand never asked for.
    pub fn finish(self, command: &str) -> Result<BTreeMap<String, String>> {
        if let Some(k) = self.file.keys().next() {
            bail!("config key `{k}` is not used by `{command}`");
        }
        Ok(self.resolved)
    }
}

/// Comma-separated list usable as a flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

pub fn config_hash(command: &str, resolved: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\n");
    for (k, v) in resolved {
        h.update(format!("{k}={v}\n").as_bytes());
    }
    hex::encode(h.finalize())
}

/// Writes through a sibling temporary file and renames it into place, so a
/// failed run never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| anyhow!("output path {} has no file name", path.display()))?;
    let tmp = path.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    let result = (|| {
        let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path).with_context(|| format!("moving output into {}", path.display()))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Wall-clock phases of one run.
#[derive(Debug, Default)]
pub struct Timings {
    phases: Vec<(String, f64)>,
}

impl Timings {
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases.push((phase.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        self.phases.iter().cloned().collect()
    }
}

#[derive(Serialize)]
struct Versions {
    grounded_cli: &'static str,
    grounded_core: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a BTreeMap<String, String>,
    config_hash: String,
    versions: Versions,
    outputs: Vec<String>,
    summary: &'a serde_json::Value,
    timings: BTreeMap<String, f64>,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_manifest(
    out: &Path,
    command: &str,
    config: &BTreeMap<String, String>,
    outputs: &[&Path],
    summary: &serde_json::Value,
    timings: &Timings,
) -> Result<()> {
    let m = Manifest {
        command,
        config,
        config_hash: config_hash(command, config),
        versions: Versions {
            grounded_cli: env!("CARGO_PKG_VERSION"),
            grounded_core: grounded_core::VERSION,
        },
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        summary,
        timings: timings.as_map(),
    };
    write_json(&manifest_path(out), &m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_values() {
        let mut s = Settings::new(parse_config("k = 4\nseed=9 # root\n\nmax_len = 30").unwrap());
        assert_eq!(s.value("k", Some(7usize), 10).unwrap(), 7);
        assert_eq!(s.value::<u64>("seed", None, 0).unwrap(), 9);
        assert_eq!(s.value::<usize>("max-len", None, 0).unwrap(), 30);
        assert_eq!(s.value::<usize>("steps", None, 5).unwrap(), 5);
        let resolved = s.finish("decode").unwrap();
        assert_eq!(resolved["k"], "7");
        assert_eq!(resolved["steps"], "5");
    }

    #[test]
    fn unknown_and_malformed_keys_are_reported() {
        assert!(parse_config("no equals sign").is_err());
        assert!(parse_config("a=1\na=2").is_err());
        let mut s = Settings::new(parse_config("k = x\nbogus = 1").unwrap());
        let err = s.value::<usize>("k", None, 1).unwrap_err().to_string();
        assert!(err.contains("`k`"), "{err}");
        let err = s.finish("decode").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn hash_depends_on_every_value() {
        let mut a = BTreeMap::new();
        a.insert("k".to_string(), "3".to_string());
        let mut b = a.clone();
        b.insert("k".to_string(), "4".to_string());
        assert_eq!(config_hash("decode", &a).len(), 64);
        assert_ne!(config_hash("decode", &a), config_hash("decode", &b));
        assert_ne!(config_hash("decode", &a), config_hash("eval", &a));
    }

    #[test]
    fn lists_round_trip() {
        let l: List<usize> = "10, 20,30".parse().unwrap();
        assert_eq!(l.0, vec![10, 20, 30]);
        assert_eq!(l.to_string(), "10,20,30");
        assert!("1,x".parse::<List<usize>>().is_err());
    }

    #[test]
    fn failed_writes_leave_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a.json");
        let r = write_atomic(&out, |w| {
            w.write_all(b"half")?;
            bail!("boom")
        });
        assert!(r.is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        write_atomic(&out, |w| Ok(w.write_all(b"ok")?)).unwrap();
        assert_eq!(fs::read_to_string(&out).unwrap(), "ok");
    }
}
