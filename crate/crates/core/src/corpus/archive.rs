use std::io::{Cursor, Read};

use flate2::read::GzDecoder;

use super::{CorpusError, SourceFile, SourceTree, MAX_ARCHIVE_BYTES, MAX_FILES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchiveFormat {
    Zip,
    Tar,
    TarGz,
}

impl ArchiveFormat {
    /// Detects the archive format from magic bytes. The file name plays no
    /// part in detection.
    pub fn detect(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"PK\x03\x04") || bytes.starts_with(b"PK\x05\x06") {
            Some(ArchiveFormat::Zip)
        } else if bytes.starts_with(&[0x1f, 0x8b]) {
            Some(ArchiveFormat::TarGz)
        } else if bytes.len() >= 262 && &bytes[257..262] == b"ustar" {
            Some(ArchiveFormat::Tar)
        } else {
            None
        }
    }
}

/// Normalizes an archive entry name into a relative `a/b/c` path.
/// Entries that are absolute or climb above the root are rejected.
pub(crate) fn normalize_entry_path(raw: &str) -> Result<String, CorpusError> {
    let unified = raw.replace('\\', "/");
    if unified.starts_with('/') || unified.get(1..2) == Some(":") {
        return Err(CorpusError::ArchiveTraversal(raw.to_string()));
    }
    let mut parts: Vec<&str> = Vec::new();
    for seg in unified.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                if parts.pop().is_none() {
                    return Err(CorpusError::ArchiveTraversal(raw.to_string()));
                }
            }
            s => parts.push(s),
        }
    }
    Ok(parts.join("/"))
}

/// Loads a source tree from in-memory archive bytes.
pub fn load_archive_bytes(bytes: &[u8], root_label: impl Into<String>) -> Result<SourceTree, CorpusError> {
    if bytes.len() as u64 > MAX_ARCHIVE_BYTES {
        return Err(CorpusError::ArchiveTooLarge {
            limit: MAX_ARCHIVE_BYTES,
        });
    }
    let format = ArchiveFormat::detect(bytes)
        .ok_or_else(|| CorpusError::UnsupportedArchive("unrecognized leading bytes".into()))?;
    let files = match format {
        ArchiveFormat::Zip => read_zip(bytes)?,
        ArchiveFormat::Tar => read_tar(Cursor::new(bytes))?,
        ArchiveFormat::TarGz => {
            // A gzip stream that does not wrap a tar archive is unsupported.
            let mut decoded = Vec::new();
            GzDecoder::new(bytes)
                .take(MAX_ARCHIVE_BYTES + 1)
                .read_to_end(&mut decoded)
                .map_err(|e| CorpusError::UnsupportedArchive(format!("gzip: {e}")))?;
            if decoded.len() as u64 > MAX_ARCHIVE_BYTES {
                return Err(CorpusError::ArchiveTooLarge {
                    limit: MAX_ARCHIVE_BYTES,
                });
            }
            if ArchiveFormat::detect(&decoded) != Some(ArchiveFormat::Tar) {
                return Err(CorpusError::UnsupportedArchive("gzip stream is not a tar archive".into()));
            }
            read_tar(Cursor::new(decoded))?
        }
    };
    Ok(SourceTree::from_files(root_label, files))
}

struct Budget {
    bytes: u64,
    files: usize,
}

impl Budget {
    fn new() -> Self {
        Budget { bytes: 0, files: 0 }
    }

    fn charge(&mut self, size: u64) -> Result<(), CorpusError> {
        self.files += 1;
        self.bytes += size;
        if self.files > MAX_FILES {
            return Err(CorpusError::TooManyFiles { limit: MAX_FILES });
        }
        if self.bytes > MAX_ARCHIVE_BYTES {
            return Err(CorpusError::ArchiveTooLarge {
                limit: MAX_ARCHIVE_BYTES,
            });
        }
        Ok(())
    }
}

fn read_zip(bytes: &[u8]) -> Result<Vec<SourceFile>, CorpusError> {
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes))
        .map_err(|e| CorpusError::UnsupportedArchive(format!("zip: {e}")))?;
    // Validate every name before reading any content so a single bad entry
    // rejects the whole archive.
    let mut names = Vec::with_capacity(archive.len());
    for i in 0..archive.len() {
        let entry = archive
            .by_index_raw(i)
            .map_err(|e| CorpusError::UnsupportedArchive(format!("zip: {e}")))?;
        let path = normalize_entry_path(entry.name())?;
        names.push((path, entry.is_file() && !entry.is_symlink()));
    }

    let mut budget = Budget::new();
    let mut files = Vec::new();
    for (i, (path, regular)) in names.into_iter().enumerate() {
        if !regular || path.is_empty() {
            continue;
        }
        let entry = archive
            .by_index(i)
            .map_err(|e| CorpusError::UnsupportedArchive(format!("zip: {e}")))?;
        let mut content = Vec::new();
        entry
            .take(MAX_ARCHIVE_BYTES + 1)
            .read_to_end(&mut content)
            .map_err(|e| CorpusError::UnsupportedArchive(format!("zip: {e}")))?;
        budget.charge(content.len() as u64)?;
        files.push(SourceFile::new(path, String::from_utf8_lossy(&content).into_owned()));
    }
    Ok(files)
}

fn read_tar<R: Read>(reader: R) -> Result<Vec<SourceFile>, CorpusError> {
    let mut archive = tar::Archive::new(reader);
    let entries = archive
        .entries()
        .map_err(|e| CorpusError::UnsupportedArchive(format!("tar: {e}")))?;
    let mut budget = Budget::new();
    let mut files = Vec::new();
    for entry in entries {
        let mut entry = entry.map_err(|e| CorpusError::UnsupportedArchive(format!("tar: {e}")))?;
        let raw = String::from_utf8_lossy(&entry.path_bytes()).into_owned();
        let path = normalize_entry_path(&raw)?;
        if !entry.header().entry_type().is_file() || path.is_empty() {
            continue;
        }
        let mut content = Vec::new();
        (&mut entry)
            .take(MAX_ARCHIVE_BYTES + 1)
            .read_to_end(&mut content)
            .map_err(|e| CorpusError::UnsupportedArchive(format!("tar: {e}")))?;
        budget.charge(content.len() as u64)?;
        files.push(SourceFile::new(path, String::from_utf8_lossy(&content).into_owned()));
    }
    Ok(files)
}
