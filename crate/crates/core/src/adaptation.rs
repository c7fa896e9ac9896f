//! Bandwidth traces and the per-frame tile/LoD planner.
//!
//! Tiles are keyed by `(frame, tile_id)` of the container that carries them.
//! Within a group of frames the planner remembers the highest LoD sent per
//! tile and only ever adds layers. Each frame:
//!
//! 1. visible Gaussian ids are mapped to the tiles holding their current
//!    version, counting visible Gaussians per tile;
//! 2. visible tiles never sent are queued, most visible first;
//! 3. queued tiles are raised one level per round, round-robin, up to the
//!    mean LoD (rounded down) of the visible tiles already sent, or to the
//!    top level when none are;
//! 4. the remaining budget raises already-sent visible tiles one level per
//!    round, most visible first.
//!
//! A tile whose next layer does not fit stops rising for the frame. Ties in
//! visible count break by tile key.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdaptationError {
    #[error("bandwidth trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("bandwidth trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AdaptationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    /// `(timestamp seconds, throughput Mbps)`.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub bytes: u64,
    /// The query time fell outside the trace and was clamped.
    pub clamped: bool,
}

impl BandwidthTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(AdaptationError::Trace("empty trace".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.0.is_finite() && s.1.is_finite() && s.1 >= 0.0) {
                return Err(AdaptationError::Trace(format!("sample {i} is invalid")));
            }
            if i > 0 && !(s.0 > samples[i - 1].0) {
                return Err(AdaptationError::Trace(format!("timestamps not increasing at sample {i}")));
            }
        }
        Ok(Self { samples })
    }

    pub fn constant(mbps: f64) -> Self {
        Self { samples: vec![(0.0, mbps.max(0.0))] }
    }

    /// Piecewise-constant throughput: the last sample at or before `t`.
    pub fn throughput_at(&self, t: f64) -> (f64, bool) {
        let first = self.samples[0];
        if t < first.0 {
            return (first.1, true);
        }
        let i = self.samples.partition_point(|s| s.0 <= t) - 1;
        let last = self.samples.len() == 1 || i + 1 == self.samples.len();
        (self.samples[i].1, last && self.samples.len() > 1 && t > self.samples[i].0)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("timestamp")) {
                continue;
            }
            let err = |reason: String| AdaptationError::Parse { line: n + 1, reason };
            let mut it = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(err("expected timestamp,mbps".into()));
            };
            let t: f64 = a.parse().map_err(|e| err(format!("{e}")))?;
            let m: f64 = b.parse().map_err(|e| err(format!("{e}")))?;
            samples.push((t, m));
        }
        Self::new(samples)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("timestamp,mbps\n");
        for (t, m) in &self.samples {
            let _ = writeln!(s, "{t},{m}");
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Bytes available for one frame at `frame_time`.
pub fn frame_budget(trace: &BandwidthTrace, frame_time: f64, fps: f64) -> Budget {
    assert!(fps > 0.0, "fps must be positive");
    let (mbps, clamped) = trace.throughput_at(frame_time);
    Budget { bytes: (mbps * 1e6 / 8.0 / fps).floor() as u64, clamped }
}

pub type TileKey = (u64, u32);

/// A visible tile and the byte size of each of its LoD layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TileCandidate {
    pub key: TileKey,
    pub visible: usize,
    pub level_bytes: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanEntry {
    pub key: TileKey,
    /// Highest LoD the client holds after this entry.
    pub lod: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FramePlan {
    pub frame: u64,
    pub budget: u64,
    pub entries: Vec<PlanEntry>,
    /// A new visible tile's base layer did not fit.
    pub starved: bool,
}

impl FramePlan {
    pub fn used(&self) -> u64 {
        self.entries.iter().map(|e| e.bytes).sum()
    }
}

/// Counts visible ids per owning tile; `owner` maps a Gaussian id to the
/// tile holding its current version. Unknown ids are ignored.
pub fn visible_tiles(visible_ids: &[u32], owner: &HashMap<u32, TileKey>) -> BTreeMap<TileKey, usize> {
    let mut out = BTreeMap::new();
    for id in visible_ids {
        if let Some(k) = owner.get(id) {
            *out.entry(*k).or_insert(0) += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Planner {
    sent: BTreeMap<TileKey, usize>,
    /// Resend every lower layer along with each upgrade.
    pub resend: bool,
}

impl Planner {
    pub fn new(resend: bool) -> Self {
        Self { sent: BTreeMap::new(), resend }
    }

    /// Forget everything sent; call at each group-of-frames boundary.
    pub fn reset(&mut self) {
        self.sent.clear();
    }

    pub fn sent_lod(&self, key: &TileKey) -> Option<usize> {
        self.sent.get(key).copied()
    }

    /// Records layers delivered outside the planner, such as a bootstrap.
    pub fn mark_sent(&mut self, key: TileKey, lod: usize) {
        let e = self.sent.entry(key).or_insert(lod);
        *e = (*e).max(lod);
    }

    pub fn sent(&self) -> &BTreeMap<TileKey, usize> {
        &self.sent
    }

    fn cost(&self, c: &TileCandidate, lod: usize) -> u64 {
        if self.resend {
            c.level_bytes[..=lod].iter().sum()
        } else {
            c.level_bytes[lod]
        }
    }

    pub fn select(&mut self, frame: u64, candidates: &[TileCandidate], budget: u64) -> FramePlan {
        let mut order: Vec<&TileCandidate> = candidates.iter().filter(|c| c.visible > 0 && !c.level_bytes.is_empty()).collect();
        order.sort_by(|a, b| b.visible.cmp(&a.visible).then(a.key.cmp(&b.key)));
        let (fresh, old): (Vec<&TileCandidate>, Vec<&TileCandidate>) =
            order.into_iter().partition(|c| !self.sent.contains_key(&c.key));
        let mut left = budget;
        let mut plan = FramePlan { frame, budget, ..Default::default() };
        let mut levels: BTreeMap<TileKey, (usize, u64)> = BTreeMap::new();

        let target = if old.is_empty() {
            usize::MAX
        } else {
            old.iter().map(|c| self.sent[&c.key]).sum::<usize>() / old.len()
        };
        let mut active: Vec<&TileCandidate> = Vec::new();
        for c in &fresh {
            let b = self.cost(c, 0);
            if b <= left {
                left -= b;
                levels.insert(c.key, (0, b));
                active.push(c);
            } else {
                plan.starved = true;
            }
        }
        let mut lod = 1;
        while !active.is_empty() && lod <= target {
            active.retain(|c| {
                if lod >= c.level_bytes.len() {
                    return false;
                }
                let b = self.cost(c, lod);
                if b > left {
                    return false;
                }
                left -= b;
                let e = levels.get_mut(&c.key).unwrap();
                *e = (lod, e.1 + b);
                true
            });
            lod += 1;
        }

        let mut active: Vec<&TileCandidate> = old;
        let mut current: HashMap<TileKey, usize> = active.iter().map(|c| (c.key, self.sent[&c.key])).collect();
        while !active.is_empty() {
            active.retain(|c| {
                let next = current[&c.key] + 1;
                if next >= c.level_bytes.len() {
                    return false;
                }
                let b = self.cost(c, next);
                if b > left {
                    return false;
                }
                left -= b;
                current.insert(c.key, next);
                let e = levels.entry(c.key).or_insert((next, 0));
                *e = (next, e.1 + b);
                true
            });
        }

        for (key, (lod, bytes)) in levels {
            self.sent.insert(key, lod);
            plan.entries.push(PlanEntry { key, lod, bytes });
        }
        plan
    }
}

/// Plan dump: `frame,tile,lod,bytes`, one line per entry.
pub fn plans_to_csv(plans: &[FramePlan]) -> String {
    let mut s = String::from("frame,tile,lod,bytes\n");
    for p in plans {
        for e in &p.entries {
            let _ = writeln!(s, "{},{}:{},{},{}", p.frame, e.key.0, e.key.1, e.lod, e.bytes);
        }
    }
    s
}
