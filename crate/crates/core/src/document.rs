use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("document directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("document {dir} has no page images")]
    EmptyDocument { dir: PathBuf },
    #[error("page numbers in {dir} are not contiguous from 1: expected page {expected}, found {found}")]
    NonContiguousPageNumbers { dir: PathBuf, expected: u32, found: u32 },
    #[error("page image {0} is empty")]
    EmptyPageFile(PathBuf),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One rasterized page. `index` is the 1-based position in the document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PageImage {
    pub index: u32,
    pub image_path: PathBuf,
    pub byte_len: u64,
}

impl PageImage {
    pub fn read_bytes(&self) -> std::io::Result<Vec<u8>> {
        fs::read(&self.image_path)
    }

    /// MIME type guessed from the file extension; unknown extensions are
    /// sent as opaque bytes.
    pub fn mime_type(&self) -> &'static str {
        let ext = self
            .image_path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => "image/png",
            Some("jpg") | Some("jpeg") => "image/jpeg",
            Some("webp") => "image/webp",
            Some("gif") => "image/gif",
            Some("tif") | Some("tiff") => "image/tiff",
            Some("bmp") => "image/bmp",
            _ => "application/octet-stream",
        }
    }
}

/// A document as an ordered list of page images, pages numbered `1..=page_count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRef {
    doc_id: String,
    pages: Vec<PageImage>,
}

impl DocumentRef {
    /// Builds a document, checking that pages are numbered 1..=N in order.
    pub fn new(doc_id: impl Into<String>, pages: Vec<PageImage>) -> Result<Self, DocumentError> {
        let doc_id = doc_id.into();
        if pages.is_empty() {
            return Err(DocumentError::EmptyDocument { dir: PathBuf::from(&doc_id) });
        }
        for (pos, page) in pages.iter().enumerate() {
            let expected = pos as u32 + 1;
            if page.index != expected {
                return Err(DocumentError::NonContiguousPageNumbers {
                    dir: PathBuf::from(&doc_id),
                    expected,
                    found: page.index,
                });
            }
        }
        Ok(Self { doc_id, pages })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn pages(&self) -> &[PageImage] {
        &self.pages
    }

    pub fn page_count(&self) -> u32 {
        self.pages.len() as u32
    }

    /// Page by 1-based index.
    pub fn page(&self, index: u32) -> Option<&PageImage> {
        index.checked_sub(1).and_then(|i| self.pages.get(i as usize))
    }
}

/// Parses `page_<digits>.<ext>` and returns the page number.
fn page_number(file_name: &str) -> Option<u32> {
    let rest = file_name.strip_prefix("page_")?;
    let (digits, ext) = rest.split_once('.')?;
    if digits.is_empty() || ext.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Loads a directory of `page_NNNN.<ext>` images. Files that do not follow the
/// naming pattern are ignored. The result does not depend on directory
/// listing order.
pub fn load_document(dir: &Path) -> Result<DocumentRef, DocumentError> {
    if !dir.is_dir() {
        return Err(DocumentError::MissingDirectory(dir.to_path_buf()));
    }
    let io_err = |source| DocumentError::Io { path: dir.to_path_buf(), source };

    let mut found: Vec<(u32, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(n) = page_number(name) {
            if entry.file_type().map_err(io_err)?.is_file() {
                found.push((n, entry.path()));
            }
        }
    }
    if found.is_empty() {
        return Err(DocumentError::EmptyDocument { dir: dir.to_path_buf() });
    }
    found.sort();

    let mut pages = Vec::with_capacity(found.len());
    for (pos, (n, path)) in found.into_iter().enumerate() {
        let expected = pos as u32 + 1;
        if n != expected {
            return Err(DocumentError::NonContiguousPageNumbers {
                dir: dir.to_path_buf(),
                expected,
                found: n,
            });
        }
        let byte_len = fs::metadata(&path)
            .map_err(|source| DocumentError::Io { path: path.clone(), source })?
            .len();
        if byte_len == 0 {
            return Err(DocumentError::EmptyPageFile(path));
        }
        pages.push(PageImage { index: n, image_path: path, byte_len });
    }

    let doc_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("document")
        .to_string();
    DocumentRef::new(doc_id, pages)
}

/// How a question's source pages were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    Single,
    Contiguous,
    Random,
}

#[derive(Debug, Error, PartialEq)]
pub enum QuestionError {
    #[error("question has no source pages")]
    NoSourcePages,
    #[error("source page {page} is outside 1..={page_count}")]
    PageOutOfRange { page: u32, page_count: u32 },
    #[error("contiguous question pages {0:?} do not form an unbroken run")]
    NotContiguous(Vec<u32>),
    #[error("single-page question has {0} source pages")]
    NotSingle(usize),
}

/// A question generated from a known set of source pages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub source_pages: BTreeSet<u32>,
    pub source_mode: SourceMode,
    pub question_type: String,
}

impl Question {
    pub fn new(
        text: impl Into<String>,
        source_pages: BTreeSet<u32>,
        source_mode: SourceMode,
        question_type: impl Into<String>,
    ) -> Result<Self, QuestionError> {
        let q = Self {
            text: text.into(),
            source_pages,
            source_mode,
            question_type: question_type.into(),
        };
        q.check_shape()?;
        Ok(q)
    }

    fn check_shape(&self) -> Result<(), QuestionError> {
        let first = *self.source_pages.first().ok_or(QuestionError::NoSourcePages)?;
        if first == 0 {
            return Err(QuestionError::PageOutOfRange { page: 0, page_count: 0 });
        }
        match self.source_mode {
            SourceMode::Single if self.source_pages.len() != 1 => {
                Err(QuestionError::NotSingle(self.source_pages.len()))
            }
            SourceMode::Contiguous => {
                let last = *self.source_pages.last().unwrap();
                if (last - first) as usize + 1 != self.source_pages.len() {
                    Err(QuestionError::NotContiguous(self.source_pages.iter().copied().collect()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Checks the source pages against a document's page count.
    pub fn check_against(&self, page_count: u32) -> Result<(), QuestionError> {
        self.check_shape()?;
        match self.source_pages.last() {
            Some(&p) if p > page_count => Err(QuestionError::PageOutOfRange { page: p, page_count }),
            _ => Ok(()),
        }
    }

    pub fn is_source(&self, page: u32) -> bool {
        self.source_pages.contains(&page)
    }
}
