//! Instrument vocabulary shared by ingestion, the separator's instrument
//! embeddings and MIDI export.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../data/instruments.toml");

/// Index into an [`InstrumentTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstrumentId(pub u16);

impl InstrumentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for InstrumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentClass {
    pub name: String,
    #[serde(default)]
    pub programs: Vec<u8>,
    pub program_out: u8,
    #[serde(default)]
    pub track_names: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct TableFile {
    class: Vec<InstrumentClass>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentTable {
    classes: Vec<InstrumentClass>,
    by_program: [u16; 128],
}

impl InstrumentTable {
    /// The shipped 34-class multi-track taxonomy plus the three piano roles.
    pub fn standard() -> Self {
        Self::from_toml_str(DEFAULT_TABLE).expect("shipped instrument table is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TableFile = toml::from_str(text)?;
        Self::from_classes(file.class)
    }

    pub fn from_classes(classes: Vec<InstrumentClass>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InstrumentTable("no classes".into()));
        }
        if classes.len() > u16::MAX as usize {
            return Err(Error::InstrumentTable("too many classes".into()));
        }
        let mut by_program = [u16::MAX; 128];
        for (id, class) in classes.iter().enumerate() {
            if class.program_out > 127 {
                return Err(Error::InstrumentTable(format!(
                    "{}: program_out {} out of range",
                    class.name, class.program_out
                )));
            }
            for &p in &class.programs {
                let slot = by_program.get_mut(p as usize).ok_or_else(|| {
                    Error::InstrumentTable(format!("{}: program {p} out of range", class.name))
                })?;
                if *slot != u16::MAX {
                    return Err(Error::InstrumentTable(format!(
                        "program {p} mapped twice ({} and {})",
                        classes[*slot as usize].name, class.name
                    )));
                }
                *slot = id as u16;
            }
        }
        if let Some(p) = by_program.iter().position(|&c| c == u16::MAX) {
            return Err(Error::InstrumentTable(format!("program {p} is unmapped")));
        }
        Ok(InstrumentTable {
            classes,
            by_program,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[InstrumentClass] {
        &self.classes
    }

    pub fn get(&self, id: InstrumentId) -> Result<&InstrumentClass> {
        self.classes
            .get(id.index())
            .ok_or_else(|| Error::UnknownInstrument(id.to_string()))
    }

    pub fn check(&self, id: InstrumentId) -> Result<()> {
        self.get(id).map(|_| ())
    }

    pub fn name(&self, id: InstrumentId) -> &str {
        self.classes
            .get(id.index())
            .map(|c| c.name.as_str())
            .unwrap_or("unknown")
    }

    pub fn by_name(&self, name: &str) -> Result<InstrumentId> {
        self.classes
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name.trim()))
            .map(|i| InstrumentId(i as u16))
            .ok_or_else(|| Error::UnknownInstrument(name.to_string()))
    }

    pub fn for_program(&self, program: u8) -> InstrumentId {
        InstrumentId(self.by_program[(program & 0x7f) as usize])
    }

    /// Resolves a MIDI track name, either an exact class name or one of the
    /// role aliases declared in the table.
    pub fn for_track_name(&self, name: &str) -> Option<InstrumentId> {
        let name = name.trim();
        if name.is_empty() {
            return None;
        }
        if let Ok(id) = self.by_name(name) {
            return Some(id);
        }
        self.classes
            .iter()
            .position(|c| c.track_names.iter().any(|t| t.eq_ignore_ascii_case(name)))
            .map(|i| InstrumentId(i as u16))
    }

    pub fn program_out(&self, id: InstrumentId) -> u8 {
        self.classes
            .get(id.index())
            .map(|c| c.program_out)
            .unwrap_or(0)
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Hex SHA-256 over the ordered class names. Checkpoints store it so a
    /// model is never paired with a vocabulary it was not trained on.
    pub fn vocabulary_hash(&self) -> String {
        vocabulary_hash(&self.names())
    }
}

pub fn vocabulary_hash(names: &[String]) -> String {
    let mut hasher = Sha256::new();
    for name in names {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
    }
    hex_digest(hasher)
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
