//! Source tree ingestion and function indexing.
//!
//! A [`SourceTree`] is loaded once from a directory or an archive and is
//! immutable afterwards. [`extract_functions`] builds a [`FunctionIndex`]
//! over it so later stages can fetch verbatim code by function name or by
//! file path.

mod archive;
mod extract;
pub mod lexer;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

pub use archive::{load_archive_bytes, ArchiveFormat};
pub use extract::{extract_functions, lookup_function, ExtractionWarning, FunctionDef, FunctionIndex};

/// Upper bound on archive size accepted for ingestion.
pub const MAX_ARCHIVE_BYTES: u64 = 256 * 1024 * 1024;
/// Upper bound on the number of files in one tree.
pub const MAX_FILES: usize = 50_000;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("path not found: {0}")]
    PathNotFound(String),
    #[error("unsupported archive format: {0}")]
    UnsupportedArchive(String),
    #[error("archive entry escapes the extraction root: {0}")]
    ArchiveTraversal(String),
    #[error("archive exceeds {limit} bytes")]
    ArchiveTooLarge { limit: u64 },
    #[error("source tree has more than {limit} files")]
    TooManyFiles { limit: usize },
    #[error("basename {name:?} matches several files: {candidates:?}")]
    AmbiguousBasename { name: String, candidates: Vec<String> },
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub fn kind(&self) -> &'static str {
        match self {
            CorpusError::PathNotFound(_) => "PathNotFound",
            CorpusError::UnsupportedArchive(_) => "UnsupportedArchive",
            CorpusError::ArchiveTraversal(_) => "ArchiveTraversal",
            CorpusError::ArchiveTooLarge { .. } => "ArchiveTooLarge",
            CorpusError::TooManyFiles { .. } => "TooManyFiles",
            CorpusError::AmbiguousBasename { .. } => "AmbiguousBasename",
            CorpusError::Io { .. } => "Io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageTag {
    CSource,
    CHeader,
    Other,
}

impl LanguageTag {
    pub fn from_path(path: &str) -> Self {
        match extension(path).as_deref() {
            Some("c") => LanguageTag::CSource,
            Some("h") | Some("hpp") => LanguageTag::CHeader,
            _ => LanguageTag::Other,
        }
    }
}

fn extension(path: &str) -> Option<String> {
    let base = basename(path);
    base.rfind('.')
        .filter(|&i| i > 0)
        .map(|i| base[i + 1..].to_ascii_lowercase())
}

pub(crate) fn basename(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

/// Extensions of C++ translation units. Such files keep the `Other` tag but
/// are still scanned for function definitions, since C projects routinely
/// carry C++ front ends.
const CXX_SOURCE_EXTENSIONS: &[&str] = &["cpp", "cc", "cxx"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
    pub language: LanguageTag,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Self {
        let path = path.into();
        let language = LanguageTag::from_path(&path);
        SourceFile {
            path,
            content: content.into(),
            language,
        }
    }

    /// Whether the file is scanned for function definitions.
    pub fn is_code(&self) -> bool {
        match self.language {
            LanguageTag::CSource | LanguageTag::CHeader => true,
            LanguageTag::Other => extension(&self.path)
                .is_some_and(|ext| CXX_SOURCE_EXTENSIONS.contains(&ext.as_str())),
        }
    }
}

/// An immutable, path-sorted collection of source files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTree {
    pub root_label: String,
    files: Vec<SourceFile>,
}

impl SourceTree {
    /// Builds a tree from already-normalized relative paths. Later entries
    /// with a duplicate path replace earlier ones.
    pub fn from_files(
        root_label: impl Into<String>,
        files: impl IntoIterator<Item = SourceFile>,
    ) -> Self {
        let mut by_path = BTreeMap::new();
        for f in files {
            by_path.insert(f.path.clone(), f);
        }
        SourceTree {
            root_label: root_label.into(),
            files: by_path.into_values().collect(),
        }
    }

    pub fn files(&self) -> &[SourceFile] {
        &self.files
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&SourceFile> {
        self.files
            .binary_search_by(|f| f.path.as_str().cmp(path))
            .ok()
            .map(|i| &self.files[i])
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|f| f.path.as_str())
    }

    /// Paths of files that are scanned for function definitions.
    pub fn code_paths(&self) -> Vec<&str> {
        self.files
            .iter()
            .filter(|f| f.is_code())
            .map(|f| f.path.as_str())
            .collect()
    }
}

/// Loads a source tree from a directory or from a `.zip`, `.tar` or
/// `.tar.gz` archive. The archive format is detected from its leading bytes.
pub fn load_source_tree(path: &Path) -> Result<SourceTree, CorpusError> {
    let display = path.display().to_string();
    let meta = fs::metadata(path).map_err(|_| CorpusError::PathNotFound(display.clone()))?;
    let label = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| display.clone());

    if meta.is_dir() {
        return load_directory(path, label);
    }
    if meta.len() > MAX_ARCHIVE_BYTES {
        return Err(CorpusError::ArchiveTooLarge {
            limit: MAX_ARCHIVE_BYTES,
        });
    }
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: display,
        source,
    })?;
    load_archive_bytes(&bytes, label)
}

fn load_directory(root: &Path, label: String) -> Result<SourceTree, CorpusError> {
    let mut files = Vec::new();
    for entry in WalkDir::new(root).follow_links(false) {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: root.display().to_string(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        if files.len() >= MAX_FILES {
            return Err(CorpusError::TooManyFiles { limit: MAX_FILES });
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under its root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let bytes = fs::read(entry.path()).map_err(|source| CorpusError::Io {
            path: entry.path().display().to_string(),
            source,
        })?;
        files.push(SourceFile::new(rel, String::from_utf8_lossy(&bytes).into_owned()));
    }
    Ok(SourceTree::from_files(label, files))
}

/// Resolves `path` against the tree: exact relative path first, then a
/// basename match if exactly one file carries that basename.
pub fn lookup_file<'t>(tree: &'t SourceTree, path: &str) -> Result<Option<&'t SourceFile>, CorpusError> {
    let wanted = path.trim().trim_start_matches("./");
    if let Some(f) = tree.get(wanted) {
        return Ok(Some(f));
    }
    let base = basename(wanted);
    let candidates: Vec<&SourceFile> = tree.files().iter().filter(|f| basename(&f.path) == base).collect();
    match candidates.as_slice() {
        [] => Ok(None),
        [one] => Ok(Some(one)),
        many => Err(CorpusError::AmbiguousBasename {
            name: wanted.to_string(),
            candidates: many.iter().map(|f| f.path.clone()).collect(),
        }),
    }
}
