//! Set-associative last-level cache with LRU replacement.

use crate::error::ConfigError;

/// Shape of the shared LLC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheGeometry {
    line_size_bytes: u64,
    num_lines: u64,
    associativity: u64,
}

impl Default for CacheGeometry {
    /// 16384 lines of 32 bytes, 16-way: 512 KB.
    fn default() -> Self {
        Self {
            line_size_bytes: 32,
            num_lines: 16384,
            associativity: 16,
        }
    }
}

impl CacheGeometry {
    pub fn new(line_size_bytes: u64, num_lines: u64, associativity: u64) -> Result<Self, ConfigError> {
        if line_size_bytes == 0 || !line_size_bytes.is_power_of_two() {
            return Err(ConfigError::invalid(
                "line_size_bytes",
                format!("must be a positive power of two, got {line_size_bytes}"),
            ));
        }
        if num_lines == 0 {
            return Err(ConfigError::invalid("num_lines", "must be positive"));
        }
        if associativity == 0 || num_lines % associativity != 0 {
            return Err(ConfigError::invalid(
                "associativity",
                format!("must be positive and divide num_lines ({num_lines}), got {associativity}"),
            ));
        }
        Ok(Self {
            line_size_bytes,
            num_lines,
            associativity,
        })
    }

    pub fn line_size_bytes(&self) -> u64 {
        self.line_size_bytes
    }

    pub fn num_lines(&self) -> u64 {
        self.num_lines
    }

    pub fn associativity(&self) -> u64 {
        self.associativity
    }

    pub fn num_sets(&self) -> u64 {
        self.num_lines / self.associativity
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.line_size_bytes * self.num_lines
    }

    /// Line-aligned address containing `address`.
    pub fn line_base(&self, address: u64) -> u64 {
        address & !(self.line_size_bytes - 1)
    }

    pub fn set_index(&self, address: u64) -> u64 {
        self.set_of_line(address / self.line_size_bytes)
    }

    /// Set holding line number `line` (address divided by line size).
    pub fn set_of_line(&self, line: u64) -> u64 {
        line % self.num_sets()
    }

    /// Number of distinct lines overlapped by `[base, base + length)`.
    pub fn footprint_lines(&self, base: u64, length: u64) -> u64 {
        if length == 0 {
            return 0;
        }
        let first = base / self.line_size_bytes;
        let last = (base + length - 1) / self.line_size_bytes;
        last - first + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
    /// Copy-engine install; allocates like a write.
    Fill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HitMiss {
    Hit,
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AccessOutcome {
    pub kind: HitMiss,
    /// Line address displaced by a miss into a full set.
    pub evicted_line: Option<u64>,
}

impl AccessOutcome {
    pub fn hit() -> Self {
        Self {
            kind: HitMiss::Hit,
            evicted_line: None,
        }
    }

    pub fn miss(evicted_line: Option<u64>) -> Self {
        Self {
            kind: HitMiss::Miss,
            evicted_line,
        }
    }

    pub fn is_hit(&self) -> bool {
        self.kind == HitMiss::Hit
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CacheStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

impl CacheStats {
    pub fn record(&mut self, outcome: &AccessOutcome) {
        self.accesses += 1;
        match outcome.kind {
            HitMiss::Hit => self.hits += 1,
            HitMiss::Miss => self.misses += 1,
        }
        if outcome.evicted_line.is_some() {
            self.evictions += 1;
        }
    }

    pub fn hit_rate(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses as f64
        }
    }
}

/// Tag store plus recency order.
///
/// Each set occupies `associativity` consecutive slots of `ways`, most recently
/// used first; `occupancy[set]` counts the valid prefix.
#[derive(Debug, Clone)]
pub struct CacheState {
    geometry: CacheGeometry,
    ways: Vec<u64>,
    occupancy: Vec<u32>,
    stats: CacheStats,
}

impl CacheState {
    pub fn new(geometry: CacheGeometry) -> Self {
        Self {
            geometry,
            ways: vec![0; geometry.num_lines as usize],
            occupancy: vec![0; geometry.num_sets() as usize],
            stats: CacheStats::default(),
        }
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    /// Whether the line holding `address` is currently resident. Does not touch recency.
    pub fn contains(&self, address: u64) -> bool {
        let line = address / self.geometry.line_size_bytes;
        self.set_slice(line).contains(&line)
    }

    /// Resident line addresses of the set holding `address`, most recent first.
    pub fn resident_lines(&self, address: u64) -> Vec<u64> {
        let line = address / self.geometry.line_size_bytes;
        self.set_slice(line)
            .iter()
            .map(|l| l * self.geometry.line_size_bytes)
            .collect()
    }

    fn set_slice(&self, line: u64) -> &[u64] {
        let set = self.geometry.set_of_line(line) as usize;
        let start = set * self.geometry.associativity as usize;
        &self.ways[start..start + self.occupancy[set] as usize]
    }

    pub fn access(&mut self, address: u64, _kind: AccessKind) -> AccessOutcome {
        let line = address / self.geometry.line_size_bytes;
        let set = self.geometry.set_of_line(line) as usize;
        let assoc = self.geometry.associativity as usize;
        let start = set * assoc;
        let filled = self.occupancy[set] as usize;
        let ways = &mut self.ways[start..start + assoc];
        self.stats.accesses += 1;

        if let Some(pos) = ways[..filled].iter().position(|&l| l == line) {
            ways[..=pos].rotate_right(1);
            self.stats.hits += 1;
            return AccessOutcome::hit();
        }

        self.stats.misses += 1;
        if filled < assoc {
            ways[..=filled].rotate_right(1);
            ways[0] = line;
            self.occupancy[set] += 1;
            AccessOutcome::miss(None)
        } else {
            let victim = ways[assoc - 1];
            ways.rotate_right(1);
            ways[0] = line;
            self.stats.evictions += 1;
            AccessOutcome::miss(Some(victim * self.geometry.line_size_bytes))
        }
    }
}
