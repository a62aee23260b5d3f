//! Config files, run manifests and the exit-code mapping.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pedagogue::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

const COMMANDS: [&str; 6] = ["teach", "ads", "bench", "sweep", "report", "validate"];

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }

    /// Already reported (e.g. by clap).
    pub fn silent(code: u8) -> Self {
        CliError {
            code,
            message: String::new(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParameter(_) => EXIT_CONFIG,
            Error::TuningFailed { .. } | Error::DegenerateComponent { .. } | Error::ZeroVariance => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

fn take_option(args: &mut Vec<String>, name: &str) -> Result<Option<String>, CliError> {
    let flag = format!("--{name}");
    let prefix = format!("--{name}=");
    let mut found = None;
    let mut i = 0;
    while i < args.len() {
        if args[i] == flag {
            let value = args
                .get(i + 1)
                .cloned()
                .ok_or_else(|| CliError::config(format!("{flag} needs a value")))?;
            args.drain(i..i + 2);
            found = Some(value);
        } else if let Some(v) = args[i].strip_prefix(&prefix) {
            found = Some(v.to_string());
            args.remove(i);
        } else {
            i += 1;
        }
    }
    Ok(found)
}

/// `key=value` lines; `#` starts a comment.
pub fn parse_kv(text: &str, origin: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("{}:{}: expected key=value", origin.display(), n + 1)))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn kv_to_tokens(pairs: &[(String, String)]) -> Vec<String> {
    let mut tokens = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" => tokens.push(format!("--{k}")),
            "false" => {}
            _ => {
                tokens.push(format!("--{k}"));
                tokens.push(v.clone());
            }
        }
    }
    tokens
}

/// Splice `--config FILE` and `--from-manifest FILE` into plain flags.
/// Config values go first so explicit flags override them.
pub fn expand_args(mut args: Vec<String>) -> Result<Vec<String>, CliError> {
    let config = take_option(&mut args, "config")?;
    let manifest = take_option(&mut args, "from-manifest")?;
    let mut injected = Vec::new();
    let mut command = None;
    if let Some(path) = manifest {
        let path = PathBuf::from(path);
        let m = RunManifest::load(&path)?;
        command = Some(m.command.clone());
        injected.extend(kv_to_tokens(&m.config_pairs()));
    }
    if let Some(path) = config {
        let path = PathBuf::from(path);
        let text = fs::read_to_string(&path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        injected.extend(kv_to_tokens(&parse_kv(&text, &path)?));
    }
    let pos = args.iter().position(|a| COMMANDS.contains(&a.as_str()));
    match (command, pos) {
        (Some(cmd), Some(p)) => {
            if args[p] != cmd {
                return Err(CliError::config(format!("manifest is for `{cmd}`, not `{}`", args[p])));
            }
            args.splice(p + 1..p + 1, injected);
        }
        (Some(cmd), None) => {
            let mut tail = vec![cmd];
            tail.extend(injected);
            args.splice(1.min(args.len())..1.min(args.len()), tail);
        }
        (None, Some(p)) => {
            args.splice(p + 1..p + 1, injected);
        }
        (None, None) if !injected.is_empty() => {
            return Err(CliError::config("--config needs a command"));
        }
        (None, None) => {}
    }
    Ok(args)
}

/// Flatten a serialized argument struct into sorted `key=value` pairs.
pub fn config_pairs<T: Serialize>(args: &T) -> Vec<(String, String)> {
    let value = serde_json::to_value(args).expect("arguments serialize");
    let Value::Object(map) = value else {
        return Vec::new();
    };
    let mut out: Vec<(String, String)> = map
        .into_iter()
        .filter_map(|(k, v)| {
            let v = match v {
                Value::Null => return None,
                Value::String(s) => s,
                Value::Array(items) => items
                    .into_iter()
                    .map(|i| match i {
                        Value::String(s) => s,
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            Some((k.replace('_', "-"), v))
        })
        .collect();
    out.sort();
    out
}

pub fn render_config(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<OutputEntry>,
    pub wall_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn config_pairs(&self) -> Vec<(String, String)> {
        self.config.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}

/// Output directory bookkeeping: every file written is checksummed into
/// the manifest, next to the exact configuration.
pub struct RunDir {
    pub dir: PathBuf,
    command: String,
    pairs: Vec<(String, String)>,
    seeds: BTreeMap<String, u64>,
    outputs: Vec<OutputEntry>,
    started: std::time::Instant,
}

impl RunDir {
    pub fn create<T: Serialize>(dir: &Path, command: &str, args: &T) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let pairs = config_pairs(args);
        let run = RunDir {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            pairs,
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
            started: std::time::Instant::now(),
        };
        let path = run.dir.join("config.txt");
        fs::write(&path, render_config(&run.pairs)).map_err(|e| io_error(&path, e))?;
        Ok(run)
    }

    pub fn seed(&mut self, name: impl Into<String>, value: u64) {
        self.seeds.insert(name.into(), value);
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.outputs.push(OutputEntry {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            tool: "pedagogue".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            config_hash: sha256_hex(render_config(&self.pairs).as_bytes()),
            config: self.pairs.iter().cloned().collect(),
            seeds: self.seeds,
            outputs: self.outputs,
            wall_secs: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}
