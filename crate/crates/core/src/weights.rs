//! The `MFSTW1` weight container.
//!
//! On disk a container is the magic line `MFSTW1\n`, a UTF-8 JSON manifest
//! (keys sorted, entries ordered by name), a single `\0` byte, and a blob of
//! little-endian `f32` values. Writing is a pure function of the tensors, so
//! equal containers produce equal files.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneSpec, ModelId, TapLayer};
use crate::error::{Error, Result};
use crate::se::SE_REDUCTION;

pub const MAGIC: &[u8] = b"MFSTW1\n";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";

// Field order below is alphabetical so serde emits sorted keys.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub byte_length: u64,
    pub byte_offset: u64,
    pub dtype: String,
    pub name: String,
    pub shape: Vec<usize>,
}

impl ManifestEntry {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ManifestMetadata {
    pub created_by: String,
    pub model_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub entries: Vec<ManifestEntry>,
    pub format_version: u32,
    pub metadata: ManifestMetadata,
}

/// A named dense tensor as stored in a container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

/// Validated manifest plus raw blob. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightContainer {
    manifest: WeightManifest,
    blob: Vec<u8>,
}

impl WeightContainer {
    /// Packs tensors into a canonical container (entries sorted by name,
    /// contiguous offsets).
    pub fn from_tensors(mut tensors: Vec<NamedTensor>, metadata: ManifestMetadata) -> Result<Self> {
        tensors.sort_by(|a, b| a.name.cmp(&b.name));
        let mut entries = Vec::with_capacity(tensors.len());
        let mut blob = Vec::new();
        for t in &tensors {
            let count: usize = t.shape.iter().product();
            if count != t.data.len() {
                return Err(Error::validation(format!(
                    "tensor {} has shape {:?} ({count} values) but {} values were supplied",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            let offset = blob.len() as u64;
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(ManifestEntry {
                byte_length: (t.data.len() * 4) as u64,
                byte_offset: offset,
                dtype: DTYPE_F32LE.to_string(),
                name: t.name.clone(),
                shape: t.shape.clone(),
            });
        }
        let container = Self {
            manifest: WeightManifest {
                entries,
                format_version: FORMAT_VERSION,
                metadata,
            },
            blob,
        };
        container.validate()?;
        Ok(container)
    }

    pub fn manifest(&self) -> &WeightManifest {
        &self.manifest
    }

    pub fn blob(&self) -> &[u8] {
        &self.blob
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.manifest.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.manifest.entries.iter().find(|e| e.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entry(name).is_some()
    }

    /// Raw little-endian bytes of one entry.
    pub fn entry_bytes(&self, entry: &ManifestEntry) -> &[u8] {
        let start = entry.byte_offset as usize;
        &self.blob[start..start + entry.byte_length as usize]
    }

    /// Decodes the named tensor, if present.
    pub fn tensor(&self, name: &str) -> Option<NamedTensor> {
        self.entry(name).map(|e| self.decode(e))
    }

    /// Decodes every tensor in manifest order.
    pub fn tensors(&self) -> Vec<NamedTensor> {
        self.manifest
            .entries
            .iter()
            .map(|e| self.decode(e))
            .collect()
    }

    fn decode(&self, entry: &ManifestEntry) -> NamedTensor {
        let data = self
            .entry_bytes(entry)
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        NamedTensor::new(entry.name.clone(), entry.shape.clone(), data)
    }

    /// Checks every manifest and blob invariant.
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        let mut ranges = Vec::with_capacity(self.manifest.entries.len());
        for e in &self.manifest.entries {
            if !names.insert(e.name.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate entry name {}",
                    e.name
                )));
            }
            if e.dtype != DTYPE_F32LE {
                return Err(Error::validation(format!(
                    "entry {} has dtype {:?}, only {DTYPE_F32LE} is supported",
                    e.name, e.dtype
                )));
            }
            let expected = e.element_count() as u64 * 4;
            if e.byte_length != expected {
                return Err(Error::validation(format!(
                    "entry {} declares {} bytes but shape {:?} needs {expected}",
                    e.name, e.byte_length, e.shape
                )));
            }
            let end = e.byte_offset.checked_add(e.byte_length).ok_or_else(|| {
                Error::Corruption(format!("entry {} byte range overflows", e.name))
            })?;
            if end > self.blob.len() as u64 {
                return Err(Error::Corruption(format!(
                    "entry {} spans bytes {}..{end} but the blob holds {}",
                    e.name,
                    e.byte_offset,
                    self.blob.len()
                )));
            }
            ranges.push((e.byte_offset, end, e.name.as_str()));
        }
        ranges.sort();
        for pair in ranges.windows(2) {
            let ((_, a_end, a), (b_start, _, b)) = (pair[0], pair[1]);
            if b_start < a_end {
                return Err(Error::Corruption(format!("entries {a} and {b} overlap")));
            }
        }
        for e in &self.manifest.entries {
            let bytes = self.entry_bytes(e);
            if let Some(pos) = bytes
                .chunks_exact(4)
                .position(|b| !f32::from_le_bytes([b[0], b[1], b[2], b[3]]).is_finite())
            {
                return Err(Error::validation(format!(
                    "entry {} holds a non-finite value at element {pos}",
                    e.name
                )));
            }
        }
        Ok(())
    }

    /// Canonical on-disk bytes. Entries are re-packed in name order, so two
    /// containers holding the same tensors serialize identically.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let canonical = Self::from_tensors(self.tensors(), self.manifest.metadata.clone())?;
        let manifest = serde_json::to_string_pretty(&canonical.manifest)
            .map_err(|e| Error::Format(format!("cannot encode manifest: {e}")))?;
        let mut out = Vec::with_capacity(MAGIC.len() + manifest.len() + 1 + canonical.blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(manifest.as_bytes());
        out.push(0);
        out.extend_from_slice(&canonical.blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Format("missing MFSTW1 magic".into()))?;
        let nul = rest
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| Error::Corruption("manifest terminator not found".into()))?;
        let text = std::str::from_utf8(&rest[..nul])
            .map_err(|e| Error::Format(format!("manifest is not UTF-8: {e}")))?;
        let manifest: WeightManifest = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("malformed manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let container = Self {
            manifest,
            blob: rest[nul + 1..].to_vec(),
        };
        container.validate()?;
        Ok(container)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| with_path(path, e))?)
    }

    /// Writes the canonical bytes through a sibling temp file and a rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let file_name = path
            .file_name()
            .ok_or_else(|| Error::argument(format!("{} is not a file path", path.display())))?;
        let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
        let write = || -> io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| with_path(path, e))
    }
}

fn with_path(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn load_container(path: impl AsRef<Path>) -> Result<WeightContainer> {
    WeightContainer::load(path)
}

pub fn save_container(container: &WeightContainer, path: impl AsRef<Path>) -> Result<()> {
    container.save(path)
}

/// Entry name for a backbone conv parameter, e.g. `S.conv3.kernel`.
pub fn conv_entry(model: ModelId, layer: usize, part: &str) -> String {
    format!("{model}.conv{layer}.{part}")
}

/// Entry name for an SE parameter, e.g. `A.se.c4.W1`.
pub fn se_entry(model: ModelId, layer: TapLayer, part: &str) -> String {
    format!("{model}.se.{layer}.{part}")
}

fn normal_tensor(
    rng: &mut ChaCha8Rng,
    name: String,
    shape: Vec<usize>,
    std_dev: f64,
) -> NamedTensor {
    let count = shape.iter().product();
    let data = (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * std_dev) as f32
        })
        .collect();
    NamedTensor::new(name, shape, data)
}

/// Deterministic pseudo-random weights for both canonical backbones and all
/// six SE blocks. Every tensor is drawn N(0, 1/fan_in); biases are zero.
pub fn synth_container(seed: u64) -> WeightContainer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for model in ModelId::ALL {
        let spec = BackboneSpec::canonical(model);
        let mut in_channels = 3;
        for (i, layer) in spec.layers.iter().enumerate() {
            let fan_in = in_channels * layer.kernel * layer.kernel;
            tensors.push(normal_tensor(
                &mut rng,
                conv_entry(model, i + 1, "kernel"),
                vec![layer.out_channels, in_channels, layer.kernel, layer.kernel],
                1.0 / (fan_in as f64).sqrt(),
            ));
            tensors.push(NamedTensor::new(
                conv_entry(model, i + 1, "bias"),
                vec![layer.out_channels],
                vec![0.0; layer.out_channels],
            ));
            in_channels = layer.out_channels;
        }
        for tap in TapLayer::ALL {
            let c = spec.tap_channels(tap);
            let hidden = c / SE_REDUCTION;
            tensors.push(normal_tensor(
                &mut rng,
                se_entry(model, tap, "W1"),
                vec![hidden, c],
                1.0 / (c as f64).sqrt(),
            ));
            tensors.push(normal_tensor(
                &mut rng,
                se_entry(model, tap, "W2"),
                vec![c, hidden],
                1.0 / (hidden as f64).sqrt(),
            ));
        }
    }
    let metadata = ManifestMetadata {
        created_by: format!("mfst synth-weights --seed {seed}"),
        model_ids: ModelId::ALL.iter().map(|m| m.to_string()).collect(),
    };
    WeightContainer::from_tensors(tensors, metadata).expect("synthetic tensors are well formed")
}
