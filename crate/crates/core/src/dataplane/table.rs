//! Exact-match allow-list keyed by certificate thumbprint.

use std::collections::HashSet;
use std::sync::RwLock;

use thiserror::Error;

use crate::cert::Thumbprint;

pub const DEFAULT_TABLE_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("thumbprint table is full ({capacity} entries)")]
    TableFull { capacity: usize },
}

#[derive(Debug, Default)]
struct Inner {
    entries: HashSet<Thumbprint>,
    generation: u64,
}

/// Readers run concurrently; writers are serialized by the lock, so every
/// lookup sees exactly one generation.
#[derive(Debug)]
pub struct ThumbprintTable {
    inner: RwLock<Inner>,
    capacity: usize,
}

impl Default for ThumbprintTable {
    fn default() -> Self {
        Self::new(DEFAULT_TABLE_CAPACITY)
    }
}

impl ThumbprintTable {
    pub fn new(capacity: usize) -> Self {
        ThumbprintTable {
            inner: RwLock::new(Inner::default()),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn lookup(&self, t: &Thumbprint) -> bool {
        self.lookup_at(t).0
    }

    /// Membership together with the generation it was observed at.
    pub fn lookup_at(&self, t: &Thumbprint) -> (bool, u64) {
        let g = self.read();
        (g.entries.contains(t), g.generation)
    }

    pub fn install(&self, t: Thumbprint) -> Result<u64, TableError> {
        let mut g = self.write();
        if !g.entries.contains(&t) {
            if g.entries.len() >= self.capacity {
                return Err(TableError::TableFull {
                    capacity: self.capacity,
                });
            }
            g.entries.insert(t);
        }
        g.generation += 1;
        Ok(g.generation)
    }

    pub fn remove(&self, t: &Thumbprint) -> u64 {
        let mut g = self.write();
        g.entries.remove(t);
        g.generation += 1;
        g.generation
    }

    pub fn len(&self) -> usize {
        self.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn generation(&self) -> u64 {
        self.read().generation
    }

    /// Sorted copy of the entries and the generation they belong to.
    pub fn snapshot(&self) -> (u64, Vec<Thumbprint>) {
        let g = self.read();
        let mut v: Vec<_> = g.entries.iter().copied().collect();
        v.sort();
        (g.generation, v)
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|e| e.into_inner())
    }
}
