//! Architecture documents.
//!
//! ```json
//! {"input": {"len": 800, "channels": 2},
//!  "layers": [{"kind": "conv1d", "kernel": 8, "out_channels": 200, "bias": true}, ...]}
//! ```
//!
//! Layers may also carry `stride`, `output_len` and `output_channels` (checked
//! against the chained shape), `activation`, and the informational `name`,
//! `inferred` and `note` fields.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use splitpoint_core::netprofile::{Activation, ArchitectureSpec, FlopConvention, LayerDecl, LayerKind};

use crate::error::{FormatError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDoc {
    pub len: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "out_features")]
    pub out_channels: Option<usize>,
    #[serde(default)]
    pub bias: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_channels: Option<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inferred: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDocument {
    pub input: InputDoc,
    pub layers: Vec<LayerDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ArchDocument {
    pub fn into_spec(self) -> Result<ArchitectureSpec> {
        let decls: Vec<LayerDecl> = self
            .layers
            .iter()
            .map(|l| LayerDecl {
                kind: l.kind,
                kernel: l.kernel,
                stride: l.stride,
                out_channels: l.out_channels,
                bias: l.bias,
                output_len: l.output_len,
                activation: l.activation,
            })
            .collect();
        let spec = ArchitectureSpec::new(self.input.len, self.input.channels, &decls)?;
        for (doc, layer) in self.layers.iter().zip(&spec.layers) {
            if let Some(c) = doc.output_channels {
                if c != layer.output_channels {
                    return Err(splitpoint_core::Error::Shape {
                        layer: layer.index,
                        message: format!(
                            "declared {c} output channels but the layer produces {}",
                            layer.output_channels
                        ),
                    }
                    .into());
                }
            }
        }
        Ok(spec)
    }

    /// Document equivalent to `spec`, with output shapes spelled out.
    pub fn from_spec(spec: &ArchitectureSpec) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let windowed = matches!(l.kind, LayerKind::Conv1d | LayerKind::Pool1d);
                LayerDoc {
                    kind: l.kind,
                    kernel: windowed.then_some(l.kernel_size),
                    stride: windowed.then_some(l.stride),
                    out_channels: matches!(l.kind, LayerKind::Conv1d | LayerKind::FullyConnected)
                        .then_some(l.output_channels),
                    bias: l.has_bias,
                    output_len: Some(l.output_len),
                    output_channels: Some(l.output_channels),
                    activation: l.activation,
                    name: None,
                    inferred: None,
                    note: None,
                }
            })
            .collect();
        ArchDocument {
            input: InputDoc {
                len: spec.input_len,
                channels: spec.input_channels,
            },
            layers,
            note: None,
        }
    }
}

/// Parses and validates an architecture document.
pub fn parse_architecture(text: &str) -> Result<ArchitectureSpec> {
    let doc: ArchDocument = serde_json::from_str(text)?;
    doc.into_spec()
}

pub fn load_architecture(path: &Path) -> Result<ArchitectureSpec> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_architecture(&text)
}

/// Hex SHA-256 of the validated architecture and FLOP convention. Two
/// documents that describe the same shapes hash identically.
pub fn architecture_hash(spec: &ArchitectureSpec, convention: &FlopConvention) -> String {
    let canonical = serde_json::to_vec(&(spec, convention)).expect("plain data serializes");
    Sha256::digest(&canonical)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
