//! On-disk embedding containers, manifests, text preparation, splitting and
//! the synthetic embedding generator.
//!
//! A dataset directory holds a JSON-lines `manifest.jsonl` (one header
//! object, then one [`ItemRecord`] per line) and packed `MMEB` blob files
//! referenced by path and byte offset.

pub mod blob;
mod split;
mod synth;
mod text;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use blob::{decode_blob, read_blob, write_blob, Dtype};
pub use split::{split_indices, split_train_val, Split};
pub use synth::{synth_generate, SyntheticConfig, SyntheticData};
pub use text::{build_corpus_text, clean_text, normalize_description};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad blob magic {0:02X?}, expected \"MMEB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported blob version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated blob: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("unknown blob dtype code {0}")]
    BadDtype(u32),
    #[error("blob rank must be 2 or 3, got {0}")]
    BadRank(usize),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Location of one blob inside a (possibly packed) blob file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
    pub offset: u64,
}

/// One catalogue item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub label: usize,
    pub title: String,
    #[serde(default)]
    pub description: Option<String>,
    pub has_description: bool,
    /// `L × n × d_t` token embeddings, one slab per encoder layer.
    pub text_ref: BlobRef,
    /// `N × d_img` region features.
    pub image_ref: BlobRef,
    pub text_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: u32,
    /// Number of classes.
    pub k: usize,
    /// Layers in each text stack.
    pub l: usize,
    pub d_t: usize,
    pub d_img: usize,
    /// Image regions per item.
    pub n_regions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub items: Vec<ItemRecord>,
    /// Directory that relative blob paths resolve against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, DataError> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let json_err = |line: usize| {
            move |source| DataError::Json {
                path: path.to_path_buf(),
                line: line + 1,
                source,
            }
        };
        let header: ManifestHeader = loop {
            match lines.next() {
                Some((i, line)) => {
                    let line = line.map_err(io_err(path))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(json_err(i))?;
                }
                None => return Err(DataError::Malformed(format!("{}: empty manifest", path.display()))),
            }
        };
        if header.format_version != MANIFEST_VERSION {
            return Err(DataError::Malformed(format!(
                "unsupported manifest version {}",
                header.format_version
            )));
        }
        let mut items = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            items.push(serde_json::from_str(&line).map_err(json_err(i))?);
        }
        let manifest = Manifest {
            header,
            items,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        let line = serde_json::to_string(&self.header).expect("header serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
        for item in &self.items {
            let line = serde_json::to_string(item).expect("record serializes");
            writeln!(w, "{line}").map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))
    }

    /// Labels in range, unique ids, `text_len ≥ 1`.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for item in &self.items {
            if item.label >= self.header.k {
                return Err(DataError::Malformed(format!(
                    "item {} has label {} outside [0, {})",
                    item.id, item.label, self.header.k
                )));
            }
            if item.text_len == 0 {
                return Err(DataError::Malformed(format!("item {} has text_len 0", item.id)));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(DataError::Malformed(format!("duplicate id {}", item.id)));
            }
        }
        Ok(())
    }

    /// Classes with no item in this manifest.
    pub fn missing_labels(&self) -> Vec<usize> {
        let present: HashSet<usize> = self.items.iter().map(|i| i.label).collect();
        (0..self.header.k).filter(|c| !present.contains(c)).collect()
    }

    pub fn resolve(&self, r: &BlobRef) -> PathBuf {
        let p = Path::new(&r.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads every item's embeddings. Each blob file is read once.
    pub fn load_examples(&self) -> Result<Vec<Example>, DataError> {
        let mut files: HashMap<PathBuf, Vec<u8>> = HashMap::new();
        let mut fetch = |r: &BlobRef| -> Result<Tensor, DataError> {
            let path = self.resolve(r);
            if !files.contains_key(&path) {
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                files.insert(path.clone(), bytes);
            }
            let bytes = &files[&path];
            let off = r.offset as usize;
            if off > bytes.len() {
                return Err(DataError::Truncated {
                    expected: off,
                    actual: bytes.len(),
                });
            }
            read_blob(&bytes[off..])
        };
        let h = &self.header;
        let mut out = Vec::with_capacity(self.items.len());
        for item in &self.items {
            let text = fetch(&item.text_ref)?;
            let image = fetch(&item.image_ref)?;
            let want_text = [h.l, item.text_len, h.d_t];
            if text.shape() != want_text {
                return Err(DataError::Malformed(format!(
                    "item {}: text blob {:?}, expected {:?}",
                    item.id,
                    text.shape(),
                    want_text
                )));
            }
            if image.shape() != [h.n_regions, h.d_img] {
                return Err(DataError::Malformed(format!(
                    "item {}: image blob {:?}, expected {:?}",
                    item.id,
                    image.shape(),
                    [h.n_regions, h.d_img]
                )));
            }
            out.push(Example {
                record: item.clone(),
                text,
                image,
            });
        }
        Ok(out)
    }
}

/// An item together with its loaded embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub record: ItemRecord,
    /// `L × n × d_t`.
    pub text: Tensor,
    /// `N × d_img`.
    pub image: Tensor,
}

impl Example {
    pub fn label(&self) -> usize {
        self.record.label
    }
}

/// Writes examples as a dataset directory (`manifest.jsonl` plus packed
/// `blobs/text.bin` and `blobs/image.bin`) and returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    header: ManifestHeader,
    examples: &[Example],
    dtype: Dtype,
) -> Result<PathBuf, DataError> {
    let blob_dir = dir.join("blobs");
    fs::create_dir_all(&blob_dir).map_err(io_err(&blob_dir))?;
    let mut text_pack = Vec::new();
    let mut image_pack = Vec::new();
    let mut items = Vec::with_capacity(examples.len());
    for ex in examples {
        let mut rec = ex.record.clone();
        rec.text_ref = BlobRef {
            path: "blobs/text.bin".into(),
            offset: text_pack.len() as u64,
        };
        text_pack.extend(write_blob(&ex.text, dtype)?);
        rec.image_ref = BlobRef {
            path: "blobs/image.bin".into(),
            offset: image_pack.len() as u64,
        };
        image_pack.extend(write_blob(&ex.image, dtype)?);
        items.push(rec);
    }
    let tp = blob_dir.join("text.bin");
    fs::write(&tp, text_pack).map_err(io_err(&tp))?;
    let ip = blob_dir.join("image.bin");
    fs::write(&ip, image_pack).map_err(io_err(&ip))?;
    let manifest = Manifest {
        header,
        items,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.jsonl");
    manifest.write(&path)?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Inclusive lower bound.
    pub start: usize,
    /// Inclusive upper bound.
    pub end: usize,
    pub count: usize,
}

/// Counts text lengths in buckets `[k·w, (k+1)·w − 1]`, covering every
/// bucket between the shortest and the longest length.
pub fn text_length_histogram(lengths: &[usize], bucket_width: usize) -> Result<Vec<HistogramBucket>, DataError> {
    if bucket_width == 0 {
        return Err(DataError::InvalidConfig("bucket width must be >= 1".into()));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for l in lengths {
        *counts.entry(l / bucket_width).or_default() += 1;
    }
    let (Some(lo), Some(hi)) = (counts.keys().next().copied(), counts.keys().last().copied()) else {
        return Ok(Vec::new());
    };
    Ok((lo..=hi)
        .map(|b| HistogramBucket {
            start: b * bucket_width,
            end: (b + 1) * bucket_width - 1,
            count: counts.get(&b).copied().unwrap_or(0),
        })
        .collect())
}
