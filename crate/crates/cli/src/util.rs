use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Command failure, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

pub trait Classify<T> {
    fn data(self, what: impl Display) -> Result<T>;
    fn numerical(self, what: impl Display) -> Result<T>;
    fn usage(self, what: impl Display) -> Result<T>;
}

impl<T, E: Display> Classify<T> for std::result::Result<T, E> {
    fn data(self, what: impl Display) -> Result<T> {
        self.map_err(|e| Failure::Data(format!("{what}: {e}")))
    }

    fn numerical(self, what: impl Display) -> Result<T> {
        self.map_err(|e| Failure::Numerical(format!("{what}: {e}")))
    }

    fn usage(self, what: impl Display) -> Result<T> {
        self.map_err(|e| Failure::Usage(format!("{what}: {e}")))
    }
}

/// Resolves relative paths against the data root, when one is set.
#[derive(Debug, Clone, Default)]
pub struct Paths {
    pub root: Option<PathBuf>,
}

impl Paths {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn input(&self, p: &Path) -> Result<PathBuf> {
        let path = self.resolve(p);
        if !path.exists() {
            return Err(Failure::Data(format!("input {} does not exist", path.display())));
        }
        Ok(path)
    }

    /// Writes `bytes` to `out` (resolved) or stdout.
    pub fn emit(&self, out: Option<&Path>, bytes: &[u8]) -> Result<()> {
        match out {
            Some(p) => {
                let path = self.resolve(p);
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).data(format!("creating {}", dir.display()))?;
                }
                std::fs::write(&path, bytes).data(format!("writing {}", path.display()))
            }
            None => std::io::stdout().write_all(bytes).data("writing stdout"),
        }
    }
}

pub fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| Failure::Usage(format!("{what} is stochastic; pass --seed")))
}

/// CSV text from a header and rows.
pub fn csv_text<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).data("csv")?;
    for row in rows {
        w.write_record(row).data("csv")?;
    }
    w.into_inner().map_err(|e| e.into_error()).data("csv")
}

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt6)
}

pub fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).data("json")?;
    v.push(b'\n');
    Ok(v)
}
