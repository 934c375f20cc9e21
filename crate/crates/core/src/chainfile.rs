//! Chain definition files: a small TOML schema describing either an
//! explicit finite chain (states with coordinates and matrix rows) or a
//! named built-in sampler with numeric parameters.
//!
//! ```toml
//! version = 1
//!
//! [[state]]
//! label = "a"
//! point = [0.0]
//! row = [0.5, 0.5]
//!
//! [[state]]
//! label = "b"
//! point = [1.0]
//! row = [0.4, 0.6]
//! ```
//!
//! or
//!
//! ```toml
//! version = 1
//! sampler = "doubling-torus"
//!
//! [params]
//! denominator = 3145728
//! ```

use crate::chain::FiniteChain;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const CHAIN_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateDef {
    label: String,
    point: Vec<f64>,
    row: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChainFile {
    version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    state: Vec<StateDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sampler: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    params: BTreeMap<String, f64>,
}

/// A parsed chain definition: either a fully specified finite chain or a
/// reference to a built-in sampler that the instance catalog resolves.
#[derive(Debug)]
pub enum ChainDef {
    Finite(FiniteChain),
    Sampler {
        name: String,
        params: BTreeMap<String, f64>,
    },
}

pub fn parse_chain(text: &str) -> Result<ChainDef> {
    let file: ChainFile = toml::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("chain file: {e}")))?;
    if file.version != CHAIN_FILE_VERSION {
        return Err(Error::InvalidInput(format!(
            "chain file version {} (expected {CHAIN_FILE_VERSION})",
            file.version
        )));
    }
    match (file.state.is_empty(), &file.sampler) {
        (false, None) => {
            let labels = file.state.iter().map(|s| s.label.clone()).collect();
            let points = file.state.iter().map(|s| s.point.clone()).collect();
            let rows = file.state.iter().map(|s| s.row.clone()).collect();
            Ok(ChainDef::Finite(FiniteChain::new(labels, points, rows)?))
        }
        (true, Some(name)) => Ok(ChainDef::Sampler {
            name: name.clone(),
            params: file.params,
        }),
        (false, Some(_)) => Err(Error::InvalidInput(
            "chain file declares both states and a sampler".into(),
        )),
        (true, None) => Err(Error::InvalidInput(
            "chain file declares neither states nor a sampler".into(),
        )),
    }
}

/// Renders a finite chain back into the file schema.
pub fn render_finite(chain: &FiniteChain) -> String {
    let file = ChainFile {
        version: CHAIN_FILE_VERSION,
        state: (0..chain.len())
            .map(|i| StateDef {
                label: chain.labels()[i].clone(),
                point: chain.point(i).to_vec(),
                row: chain.row(i).to_vec(),
            })
            .collect(),
        sampler: None,
        params: BTreeMap::new(),
    };
    toml::to_string(&file).expect("chain file serializes")
}
