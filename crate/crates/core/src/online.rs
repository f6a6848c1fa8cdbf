//! Online identification: the collision-alleviated code `[h, a]` of each
//! received signal is looked up in an insertion-ordered table, and unseen
//! codes open a new identity.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{CashError, Result};
use crate::hasher::BinaryCode;
use crate::model::CashModel;
use crate::signal::IqSignal;

pub const TABLE_VERSION: u32 = 1;

/// Hash bits followed by the seen-emitter indicator.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CollisionCode {
    bits: Vec<i8>,
    indicator: i8,
}

impl CollisionCode {
    pub fn new(bits: BinaryCode, indicator: i8) -> Result<Self> {
        if bits.0.iter().chain([&indicator]).any(|&b| b != 1 && b != -1) {
            return Err(CashError::InvalidParameter("code entries must be ±1".into()));
        }
        Ok(Self { bits: bits.0, indicator })
    }

    pub fn bits(&self) -> &[i8] {
        &self.bits
    }

    pub fn indicator(&self) -> i8 {
        self.indicator
    }

    /// `F + 1`.
    pub fn len(&self) -> usize {
        self.bits.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `+-+-|+`: the hash bits, a bar, then the indicator.
impl fmt::Display for CollisionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sym = |b: i8| if b > 0 { '+' } else { '-' };
        let bits: String = self.bits.iter().map(|&b| sym(b)).collect();
        write!(f, "{bits}|{}", sym(self.indicator))
    }
}

impl FromStr for CollisionCode {
    type Err = CashError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CashError::InvalidParameter(format!("malformed code {s:?}"));
        let (bits, ind) = s.split_once('|').ok_or_else(bad)?;
        let parse = |c: char| match c {
            '+' => Ok(1),
            '-' => Ok(-1),
            _ => Err(bad()),
        };
        let bits: Vec<i8> = bits.chars().map(parse).collect::<Result<_>>()?;
        let mut ind = ind.chars();
        let indicator = parse(ind.next().ok_or_else(bad)?)?;
        if ind.next().is_some() {
            return Err(bad());
        }
        Ok(Self { bits, indicator })
    }
}

impl Serialize for CollisionCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CollisionCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Codes mapped to dense labels in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HashTable {
    entries: IndexMap<CollisionCode, usize>,
    max_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSnapshot {
    pub version: u32,
    pub max_size: Option<usize>,
    /// Codes in label order.
    pub codes: Vec<CollisionCode>,
}

impl HashTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// A table that refuses to grow beyond `max_size` identities.
    pub fn with_max_size(max_size: usize) -> Self {
        Self { entries: IndexMap::new(), max_size: Some(max_size) }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, code: &CollisionCode) -> Option<usize> {
        self.entries.get(code).copied()
    }

    /// Label of `code`, inserting it with the next free label when new.
    pub fn identify(&mut self, code: &CollisionCode) -> Result<usize> {
        if let Some(&label) = self.entries.get(code) {
            return Ok(label);
        }
        if self.max_size.is_some_and(|m| self.entries.len() >= m) {
            return Err(CashError::TableFull(self.entries.len()));
        }
        let label = self.entries.len();
        self.entries.insert(code.clone(), label);
        Ok(label)
    }

    pub fn codes(&self) -> impl Iterator<Item = &CollisionCode> {
        self.entries.keys()
    }

    pub fn snapshot(&self) -> TableSnapshot {
        TableSnapshot { version: TABLE_VERSION, max_size: self.max_size, codes: self.entries.keys().cloned().collect() }
    }

    pub fn restore(snapshot: &TableSnapshot) -> Result<Self> {
        if snapshot.version != TABLE_VERSION {
            return Err(CashError::Version { what: "hash table", found: snapshot.version });
        }
        let mut entries = IndexMap::with_capacity(snapshot.codes.len());
        for (label, code) in snapshot.codes.iter().enumerate() {
            if entries.insert(code.clone(), label).is_some() {
                return Err(CashError::InvalidParameter(format!("duplicate code {code} in table")));
            }
        }
        Ok(Self { entries, max_size: snapshot.max_size })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.snapshot())?;
        std::fs::write(path, text).map_err(|e| CashError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CashError::io(path, e))?;
        Self::restore(&serde_json::from_str(&text)?)
    }
}

/// Center window, embedding, hard hash and indicator of one signal.
pub fn encode(model: &CashModel, signal: &IqSignal) -> Result<CollisionCode> {
    let e = model.embed(signal)?;
    CollisionCode::new(model.hard_hash(&e)?, model.indicator(&e)?)
}

/// One line of streaming output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub sample_index: usize,
    pub code: CollisionCode,
    pub label: usize,
}

/// Encodes and identifies signals in arrival order.
pub fn identify_stream<'a>(
    model: &CashModel,
    table: &mut HashTable,
    signals: impl IntoIterator<Item = &'a IqSignal>,
) -> Result<Vec<StreamRecord>> {
    signals
        .into_iter()
        .enumerate()
        .map(|(sample_index, s)| {
            let code = encode(model, s)?;
            let label = table.identify(&code)?;
            Ok(StreamRecord { sample_index, code, label })
        })
        .collect()
}
