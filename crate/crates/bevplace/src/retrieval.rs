//! Place database, exact nearest-neighbor search and retrieval metrics.
//!
//! Descriptors are quantized to f32 on insert so that querying a database
//! gives bit-identical results before and after a save/load round trip.
//! Search uses a k-d tree over the quantized descriptors; it is exact, and
//! ties in distance resolve to the smaller place id, so results never
//! depend on tree layout or insertion order.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::BinaryHeap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

use crate::spectral::{PlaceFeature, PolarBev, SpectralError, PLACE_FEATURE_DIM};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("place id {0} is already in the database")]
    DuplicateId(u64),
    #[error("database is empty")]
    EmptyDatabase,
    #[error("pose or feature contains a non-finite value (id {0})")]
    NonFinite(u64),
    #[error("no queries supplied")]
    NoQueries,
    #[error("minimum spacing must be positive and finite")]
    BadSpacing,
    #[error("no yaw errors to summarize")]
    NoErrors,
    #[error("evaluation needs max_n >= 1 and a non-negative distance sweep")]
    BadEvalConfig,
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not a place database")]
    BadMagic { path: String },
    #[error("{path}: unsupported database version {found}")]
    UnsupportedVersion { path: String, found: u16 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Planar pose of a place: position in meters, heading in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw_deg: f64,
}

impl Pose {
    pub fn planar_distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One database entry. The polar grid is optional: it is only needed when
/// the caller wants yaw estimates against this place, and it is not part of
/// the database file.
#[derive(Debug, Clone)]
pub struct PlaceRecord {
    pub id: u64,
    pub pose: Pose,
    pub feature: PlaceFeature,
    pub polar: Option<PolarBev>,
}

/// A retrieval result: Euclidean descriptor distance, smaller ids first on
/// ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub id: u64,
    pub distance: f64,
    pub pose: Pose,
}

pub const DATABASE_MAGIC: &[u8; 5] = b"BEVDB";
pub const DATABASE_VERSION: u16 = 1;

/// In-memory place database with an exact k-d tree index, built lazily on
/// the first query and discarded on mutation.
#[derive(Debug, Default)]
pub struct PlaceDatabase {
    records: Vec<PlaceRecord>,
    index: OnceLock<KdTree>,
}

impl Clone for PlaceDatabase {
    fn clone(&self) -> Self {
        Self {
            records: self.records.clone(),
            index: OnceLock::new(),
        }
    }
}

impl PlaceDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PlaceRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&PlaceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Inserts a place, quantizing its descriptor to f32 so in-memory and
    /// reloaded databases answer queries identically.
    pub fn insert(&mut self, mut record: PlaceRecord) -> Result<(), RetrievalError> {
        if self.records.iter().any(|r| r.id == record.id) {
            return Err(RetrievalError::DuplicateId(record.id));
        }
        let finite = record.feature.values.iter().all(|v| v.is_finite())
            && record.pose.x.is_finite()
            && record.pose.y.is_finite()
            && record.pose.yaw_deg.is_finite();
        if !finite {
            return Err(RetrievalError::NonFinite(record.id));
        }
        for v in record.feature.values.iter_mut() {
            *v = *v as f32 as f64;
        }
        self.records.push(record);
        self.index = OnceLock::new();
        Ok(())
    }

    fn index(&self) -> &KdTree {
        self.index.get_or_init(|| KdTree::build(&self.records))
    }

    /// The `n` nearest places to `query` by descriptor distance (saturating
    /// at the database size), ordered by distance then id. The query is
    /// quantized to f32 exactly like stored descriptors.
    pub fn query_top_n(
        &self,
        query: &PlaceFeature,
        n: usize,
    ) -> Result<Vec<SearchHit>, RetrievalError> {
        if self.records.is_empty() {
            return Err(RetrievalError::EmptyDatabase);
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let target: Vec<f64> = query.values.iter().map(|v| *v as f32 as f64).collect();
        if target.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite(0));
        }
        let hits = self.index().nearest(&self.records, &target, n.min(self.records.len()));
        Ok(hits
            .into_iter()
            .map(|(d2, index)| SearchHit {
                id: self.records[index].id,
                distance: d2.sqrt(),
                pose: self.records[index].pose,
            })
            .collect())
    }

    /// Writes the database file: magic `BEVDB`, version u16, count u64,
    /// then per record id u64, pose (x, y, yaw) as f64, the descriptor's
    /// config hash u64 and its 256 f32 values. Polar grids are not
    /// persisted.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let io_err = |source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        w.write_all(DATABASE_MAGIC).map_err(io_err)?;
        w.write_u16::<LittleEndian>(DATABASE_VERSION).map_err(io_err)?;
        w.write_u64::<LittleEndian>(self.records.len() as u64).map_err(io_err)?;
        for record in &self.records {
            w.write_u64::<LittleEndian>(record.id).map_err(io_err)?;
            w.write_f64::<LittleEndian>(record.pose.x).map_err(io_err)?;
            w.write_f64::<LittleEndian>(record.pose.y).map_err(io_err)?;
            w.write_f64::<LittleEndian>(record.pose.yaw_deg).map_err(io_err)?;
            w.write_u64::<LittleEndian>(record.feature.provenance).map_err(io_err)?;
            for v in &record.feature.values {
                w.write_f32::<LittleEndian>(*v as f32).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let io_err = |source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::open(path).map_err(io_err)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != DATABASE_MAGIC {
            return Err(RetrievalError::BadMagic {
                path: path.display().to_string(),
            });
        }
        let version = r.read_u16::<LittleEndian>().map_err(io_err)?;
        if version != DATABASE_VERSION {
            return Err(RetrievalError::UnsupportedVersion {
                path: path.display().to_string(),
                found: version,
            });
        }
        let count = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let mut db = Self::new();
        for _ in 0..count {
            let id = r.read_u64::<LittleEndian>().map_err(io_err)?;
            let x = r.read_f64::<LittleEndian>().map_err(io_err)?;
            let y = r.read_f64::<LittleEndian>().map_err(io_err)?;
            let yaw_deg = r.read_f64::<LittleEndian>().map_err(io_err)?;
            let provenance = r.read_u64::<LittleEndian>().map_err(io_err)?;
            let mut values = Vec::with_capacity(PLACE_FEATURE_DIM);
            for _ in 0..PLACE_FEATURE_DIM {
                values.push(r.read_f32::<LittleEndian>().map_err(io_err)? as f64);
            }
            db.insert(PlaceRecord {
                id,
                pose: Pose { x, y, yaw_deg },
                feature: PlaceFeature::new(values, provenance),
                polar: None,
            })?;
        }
        Ok(db)
    }
}

const KD_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum KdNode {
    Leaf {
        items: Vec<usize>,
    },
    Split {
        dim: usize,
        value: f64,
        left: Box<KdNode>,
        right: Box<KdNode>,
    },
}

#[derive(Debug, Clone)]
struct KdTree {
    root: KdNode,
}

/// Max-heap entry ordered by (squared distance, id): the lexicographically
/// worst candidate sits on top and is evicted first.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    id: u64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    fn build(records: &[PlaceRecord]) -> Self {
        let items: Vec<usize> = (0..records.len()).collect();
        Self {
            root: Self::build_node(records, items),
        }
    }

    fn build_node(records: &[PlaceRecord], mut items: Vec<usize>) -> KdNode {
        if items.len() <= KD_LEAF_SIZE {
            return KdNode::Leaf { items };
        }
        let dims = records[items[0]].feature.values.len();
        let mut best_dim = 0;
        let mut best_spread = -1.0f64;
        for dim in 0..dims {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in &items {
                let v = records[i].feature.values[dim];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = dim;
            }
        }
        if best_spread <= 0.0 {
            // All points identical: splitting cannot make progress.
            return KdNode::Leaf { items };
        }
        let mid = items.len() / 2;
        items.select_nth_unstable_by(mid, |&a, &b| {
            records[a].feature.values[best_dim]
                .total_cmp(&records[b].feature.values[best_dim])
                .then(records[a].id.cmp(&records[b].id))
        });
        let value = records[items[mid]].feature.values[best_dim];
        let right = items.split_off(mid);
        KdNode::Split {
            dim: best_dim,
            value,
            left: Box::new(Self::build_node(records, items)),
            right: Box::new(Self::build_node(records, right)),
        }
    }

    /// Exact n-nearest search returning (squared distance, record index)
    /// ascending by (distance, id).
    fn nearest(&self, records: &[PlaceRecord], target: &[f64], n: usize) -> Vec<(f64, usize)> {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(n + 1);
        Self::search(&self.root, records, target, n, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.d2, c.index))
            .collect()
    }

    fn search(
        node: &KdNode,
        records: &[PlaceRecord],
        target: &[f64],
        n: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match node {
            KdNode::Leaf { items } => {
                for &index in items {
                    let record = &records[index];
                    let d2: f64 = record
                        .feature
                        .values
                        .iter()
                        .zip(target)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let candidate = Candidate {
                        d2,
                        id: record.id,
                        index,
                    };
                    if heap.len() < n {
                        heap.push(candidate);
                    } else if candidate < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(candidate);
                    }
                }
            }
            KdNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                let gap = target[*dim] - value;
                let (near, far) = if gap < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                Self::search(near, records, target, n, heap);
                // The far side can still hold an equal-distance point with a
                // smaller id, so only a strictly larger plane gap prunes it.
                let prune = heap.len() == n
                    && gap * gap > heap.peek().expect("heap is full").d2;
                if !prune {
                    Self::search(far, records, target, n, heap);
                }
            }
        }
    }
}

/// Exact n-nearest linear scan with the same ordering contract as
/// [`PlaceDatabase::query_top_n`]; the reference implementation the tree is
/// checked against, and a fallback for one-off lookups.
pub fn brute_force_top_n(
    records: &[PlaceRecord],
    query: &PlaceFeature,
    n: usize,
) -> Result<Vec<SearchHit>, RetrievalError> {
    if records.is_empty() {
        return Err(RetrievalError::EmptyDatabase);
    }
    let target: Vec<f64> = query.values.iter().map(|v| *v as f32 as f64).collect();
    let mut scored: Vec<(f64, u64, usize)> = records
        .iter()
        .enumerate()
        .map(|(index, record)| {
            let d2: f64 = record
                .feature
                .values
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2, record.id, index)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(n.min(records.len()));
    Ok(scored
        .into_iter()
        .map(|(d2, id, index)| SearchHit {
            id,
            distance: d2.sqrt(),
            pose: records[index].pose,
        })
        .collect())
}

/// Default minimum spacing between stored places, in meters.
pub const MIN_PLACE_SPACING: f64 = 0.2;

/// Keeps the first item and afterwards every item at least `min_spacing`
/// meters (inclusive) from the last kept one; returns kept indices.
pub fn dedup_by_spacing<T>(
    items: &[T],
    position: impl Fn(&T) -> (f64, f64),
    min_spacing: f64,
) -> Result<Vec<usize>, RetrievalError> {
    if !(min_spacing.is_finite() && min_spacing > 0.0) {
        return Err(RetrievalError::BadSpacing);
    }
    let mut kept = Vec::new();
    let mut last: Option<(f64, f64)> = None;
    for (index, item) in items.iter().enumerate() {
        let p = position(item);
        let keep = match last {
            None => true,
            Some(q) => (p.0 - q.0).hypot(p.1 - q.1) >= min_spacing,
        };
        if keep {
            kept.push(index);
            last = Some(p);
        }
    }
    Ok(kept)
}

/// A labeled query: the descriptor to look up and the pose it was really
/// captured at.
#[derive(Debug, Clone)]
pub struct QuerySample {
    pub feature: PlaceFeature,
    pub pose: Pose,
}

/// Retrieval evaluation knobs: recall is reported at 1..=`max_n`, a query
/// counts as localized when a hit lies within `criterion_meters` of its
/// true pose, and the distance sweep re-evaluates recall@`sweep_n` at every
/// whole-meter criterion in `sweep_meters`.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub max_n: usize,
    pub criterion_meters: f64,
    pub sweep_n: usize,
    pub sweep_meters: (u32, u32),
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_n: 25,
            criterion_meters: 5.0,
            sweep_n: 1,
            sweep_meters: (2, 20),
        }
    }
}

/// Aggregated retrieval quality over a query set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub queries: usize,
    /// `recall_at_n[k]` is recall@(k+1) at `criterion_meters`.
    pub recall_at_n: Vec<f64>,
    /// (criterion in meters, recall@`sweep_n`) for each swept distance.
    pub recall_vs_distance: Vec<(f64, f64)>,
    /// (p25, p50, p75) of absolute yaw errors in degrees, when supplied.
    pub yaw_quartiles: Option<(f64, f64, f64)>,
}

/// Runs every query against the database and aggregates recall curves; all
/// queries count, including those with no correct place in the database.
pub fn evaluate_retrieval(
    db: &PlaceDatabase,
    queries: &[QuerySample],
    config: &EvalConfig,
    yaw_errors_deg: Option<&[f64]>,
) -> Result<EvalReport, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::NoQueries);
    }
    let sweep_ok = config.sweep_meters.0 <= config.sweep_meters.1;
    if config.max_n == 0 || config.sweep_n == 0 || config.criterion_meters < 0.0 || !sweep_ok {
        return Err(RetrievalError::BadEvalConfig);
    }
    let depth = config.max_n.max(config.sweep_n);
    // Rank of the first correct hit per query (usize::MAX when none), which
    // answers every (n, d) recall question in one pass.
    let mut hits: Vec<Vec<SearchHit>> = Vec::with_capacity(queries.len());
    for q in queries {
        hits.push(db.query_top_n(&q.feature, depth)?);
    }
    let first_correct = |ranked: &[SearchHit], pose: &Pose, d: f64, depth: usize| {
        ranked
            .iter()
            .take(depth)
            .position(|hit| hit.pose.planar_distance(pose) <= d)
            .unwrap_or(usize::MAX)
    };
    let total = queries.len() as f64;
    let mut recall_at_n = vec![0.0f64; config.max_n];
    for (ranked, q) in hits.iter().zip(queries) {
        let rank = first_correct(ranked, &q.pose, config.criterion_meters, config.max_n);
        if rank < config.max_n {
            for slot in recall_at_n.iter_mut().skip(rank) {
                *slot += 1.0;
            }
        }
    }
    for slot in recall_at_n.iter_mut() {
        *slot /= total;
    }
    let mut recall_vs_distance = Vec::new();
    for d in config.sweep_meters.0..=config.sweep_meters.1 {
        let mut localized = 0usize;
        for (ranked, q) in hits.iter().zip(queries) {
            if first_correct(ranked, &q.pose, d as f64, config.sweep_n) < config.sweep_n {
                localized += 1;
            }
        }
        recall_vs_distance.push((d as f64, localized as f64 / total));
    }
    let yaw_quartiles = match yaw_errors_deg {
        Some(errors) => Some(yaw_error_quartiles(errors)?),
        None => None,
    };
    Ok(EvalReport {
        queries: queries.len(),
        recall_at_n,
        recall_vs_distance,
        yaw_quartiles,
    })
}

/// Absolute angular difference folded into [0, 180] degrees.
pub fn yaw_error_deg(a_deg: f64, b_deg: f64) -> f64 {
    let wrapped = (a_deg - b_deg).rem_euclid(360.0);
    if wrapped > 180.0 {
        360.0 - wrapped
    } else {
        wrapped
    }
}

/// (p25, p50, p75) of the given errors after folding into [0, 180], with
/// linear interpolation at fractional ranks p * (n - 1).
pub fn yaw_error_quartiles(errors_deg: &[f64]) -> Result<(f64, f64, f64), RetrievalError> {
    if errors_deg.is_empty() {
        return Err(RetrievalError::NoErrors);
    }
    let mut folded: Vec<f64> = errors_deg.iter().map(|e| yaw_error_deg(*e, 0.0)).collect();
    folded.sort_by(f64::total_cmp);
    let pick = |p: f64| {
        let rank = p * (folded.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let frac = rank - lo as f64;
        folded[lo] + (folded[hi] - folded[lo]) * frac
    };
    Ok((pick(0.25), pick(0.5), pick(0.75)))
}
