//! Exact top-k geographic retrieval under haversine distance.
//!
//! The index keeps entries sorted by latitude and walks outward from the
//! query latitude, pruning with the meridian-arc lower bound
//! `R * |Δφ| <= haversine(p, q)`. Results are always identical to a
//! brute-force filtered sort by (distance, id).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Mean Earth radius in meters. Fixed so distances are bit-reproducible.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Great-circle distance in meters between two coordinates in degrees.
///
/// The central-angle argument is clamped to [0, 1] against rounding, so the
/// function is total on valid coordinates.
pub fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();

    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    let a = a.clamp(0.0, 1.0);
    let c = 2.0 * a.sqrt().atan2((1.0 - a).sqrt());
    EARTH_RADIUS_M * c
}

/// Admissibility predicate applied to every candidate: not the target
/// itself, strictly earlier than `max_date` when set, and inside the allow
/// pool when set.
#[derive(Debug, Clone, Default)]
pub struct RetrievalFilter<'a> {
    pub exclude_id: Option<u64>,
    /// Exclusive upper bound: a record passes only if its date is present
    /// and strictly earlier.
    pub max_date: Option<i64>,
    pub pool: Option<&'a HashSet<u64>>,
}

impl<'a> RetrievalFilter<'a> {
    /// Admits every record.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn admits(&self, id: u64, date: Option<i64>) -> bool {
        if self.exclude_id == Some(id) {
            return false;
        }
        if let Some(max) = self.max_date {
            match date {
                Some(d) if d < max => {}
                _ => return false,
            }
        }
        if let Some(pool) = self.pool {
            if !pool.contains(&id) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy)]
struct IndexEntry {
    id: u64,
    lat: f64,
    lon: f64,
    date: Option<i64>,
}

/// Immutable spatial index over (id, lat, lon, date) entries.
#[derive(Debug, Clone)]
pub struct GeoIndex {
    by_lat: Vec<IndexEntry>,
}

/// Heap entry ordered by (distance, id); the heap top is the worst kept
/// neighbour.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Neighbor {
    dist: f64,
    id: u64,
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

/// Absolute slack subtracted from the pruning bound so float rounding can
/// never exclude a candidate the brute-force scan would keep.
const PRUNE_SLACK_M: f64 = 1e-6;

impl GeoIndex {
    /// Builds the index over a dataset. Ids must be unique (guaranteed by
    /// [`Dataset`]); coordinates are validated again defensively.
    pub fn build(dataset: &Dataset) -> Result<Self> {
        Self::from_parts(
            dataset
                .records()
                .iter()
                .map(|r| (r.id, r.lat, r.lon, r.date)),
        )
    }

    /// Builds from raw (id, lat, lon, date) tuples.
    pub fn from_parts(
        entries: impl IntoIterator<Item = (u64, f64, f64, Option<i64>)>,
    ) -> Result<Self> {
        let mut by_lat = Vec::new();
        let mut seen = HashSet::new();
        for (id, lat, lon, date) in entries {
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(Error::InvalidArgument(format!(
                    "entry {id}: coordinates ({lat}, {lon}) out of bounds"
                )));
            }
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate id {id} in index"
                )));
            }
            by_lat.push(IndexEntry { id, lat, lon, date });
        }
        by_lat.sort_by(|a, b| a.lat.total_cmp(&b.lat).then(a.id.cmp(&b.id)));
        Ok(Self { by_lat })
    }

    pub fn len(&self) -> usize {
        self.by_lat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_lat.is_empty()
    }

    /// The `k` admissible entries closest to (lat, lon), ascending by
    /// (distance, id). Returns fewer when the admissible set is smaller.
    pub fn knn(&self, lat: f64, lon: f64, k: usize, filter: &RetrievalFilter) -> Vec<(u64, f64)> {
        if k == 0 || self.by_lat.is_empty() {
            return Vec::new();
        }

        let start = self.by_lat.partition_point(|e| e.lat < lat);
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        let mut left = start as isize - 1;
        let mut right = start;

        let lat_bound = |entry_lat: f64| -> f64 {
            EARTH_RADIUS_M * (entry_lat - lat).to_radians().abs() - PRUNE_SLACK_M
        };

        let consider = |e: &IndexEntry, heap: &mut BinaryHeap<Neighbor>| {
            if !filter.admits(e.id, e.date) {
                return;
            }
            let cand = Neighbor {
                dist: haversine(lat, lon, e.lat, e.lon),
                id: e.id,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().unwrap() {
                heap.pop();
                heap.push(cand);
            }
        };

        loop {
            let worst = heap.peek().map(|n| n.dist);
            let full = heap.len() == k;
            let left_open = left >= 0;
            let right_open = right < self.by_lat.len();
            if !left_open && !right_open {
                break;
            }

            // Walk the side whose next candidate is nearest in latitude.
            let take_left = match (left_open, right_open) {
                (true, true) => {
                    (self.by_lat[left as usize].lat - lat).abs()
                        <= (self.by_lat[right].lat - lat).abs()
                }
                (true, false) => true,
                _ => false,
            };

            let entry = if take_left {
                &self.by_lat[left as usize]
            } else {
                &self.by_lat[right]
            };
            if full && lat_bound(entry.lat) > worst.unwrap() {
                // Nothing further out on this side can improve the result.
                if take_left {
                    left = -1;
                } else {
                    right = self.by_lat.len();
                }
                continue;
            }
            consider(entry, &mut heap);
            if take_left {
                left -= 1;
            } else {
                right += 1;
            }
        }

        let mut out: Vec<Neighbor> = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|n| (n.id, n.dist)).collect()
    }

    /// Candidate pool for vector re-ranking: the `3 * k1 + 25` closest
    /// admissible entries.
    pub fn candidate_pool(
        &self,
        lat: f64,
        lon: f64,
        k1: usize,
        filter: &RetrievalFilter,
    ) -> Vec<(u64, f64)> {
        self.knn(lat, lon, candidate_pool_size(k1), filter)
    }
}

/// Pool size rule `N = 3 * k1 + 25`.
pub fn candidate_pool_size(k1: usize) -> usize {
    3 * k1 + 25
}

/// Brute-force reference: filter, compute every distance, sort by
/// (distance, id), truncate. Public so acceptance checks can compare the
/// index against it verbatim.
pub fn knn_brute_force(
    entries: &[(u64, f64, f64, Option<i64>)],
    lat: f64,
    lon: f64,
    k: usize,
    filter: &RetrievalFilter,
) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = entries
        .iter()
        .filter(|(id, _, _, date)| filter.admits(*id, *date))
        .map(|&(id, elat, elon, _)| (id, haversine(lat, lon, elat, elon)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}
