//! Locations, map projection, ordering and nearest-neighbor graphs.

mod kdtree;
mod neighbors;

pub use kdtree::KdTree;
pub use neighbors::{build_prediction_neighbors, build_training_neighbors, GraphKind, NeighborGraph};

use crate::error::{Error, Result};

/// Default earth radius used by the sinusoidal projection, in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// How the stored coordinates were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Raw,
    /// Sinusoidal projection in 1000-km units.
    Sinusoidal,
}

/// Ordered planar coordinates.
///
/// `id_map[i]` is the record index (row of the raw input) stored at position `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationSet {
    coords: Vec<[f64; 2]>,
    id_map: Vec<usize>,
    provenance: Provenance,
}

impl LocationSet {
    /// Wraps raw coordinates in input order. Coordinates must be finite.
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        Self::with_provenance(coords, Provenance::Raw)
    }

    pub fn with_provenance(coords: Vec<[f64; 2]>, provenance: Provenance) -> Result<Self> {
        if let Some(row) = coords.iter().position(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(Error::CoordinateOutOfRange { row, detail: "non-finite coordinate".into() });
        }
        let id_map = (0..coords.len()).collect();
        Ok(Self { coords, id_map, provenance })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    /// Raw record index per stored position.
    pub fn id_map(&self) -> &[usize] {
        &self.id_map
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Subset by stored positions, keeping the relative order given.
    pub fn select(&self, positions: &[usize]) -> Self {
        Self {
            coords: positions.iter().map(|&i| self.coords[i]).collect(),
            id_map: positions.iter().map(|&i| self.id_map[i]).collect(),
            provenance: self.provenance,
        }
    }

    /// Squared Euclidean distance between stored positions.
    #[inline]
    pub fn dist2(&self, i: usize, j: usize) -> f64 {
        dist2(self.coords[i], self.coords[j])
    }

    /// Largest pairwise distance.
    ///
    /// Exact O(n²) scan up to `EXACT_MAXDIST_LIMIT` points; above that the
    /// bounding-box diagonal is returned, which is an upper bound.
    pub fn maxdist(&self) -> f64 {
        if self.len() <= EXACT_MAXDIST_LIMIT {
            let mut best = 0.0f64;
            for i in 0..self.len() {
                for j in 0..i {
                    best = best.max(self.dist2(i, j));
                }
            }
            best.sqrt()
        } else {
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for c in &self.coords {
                for k in 0..2 {
                    lo[k] = lo[k].min(c[k]);
                    hi[k] = hi[k].max(c[k]);
                }
            }
            dist2(lo, hi).sqrt()
        }
    }
}

/// Point count up to which `maxdist` is computed exactly.
pub const EXACT_MAXDIST_LIMIT: usize = 10_000;

#[inline]
pub(crate) fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[inline]
pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    dist2(a, b).sqrt()
}

/// Sinusoidal (equal-area) projection of `(lon, lat)` degrees into
/// `radius_km / 1000` units: `x = R λ cos φ`, `y = R φ`.
pub fn project_sinusoidal(lonlat: &[[f64; 2]], radius_km: f64) -> Result<LocationSet> {
    if !(radius_km > 0.0 && radius_km.is_finite()) {
        return Err(Error::InvalidInput(format!("radius must be positive, got {radius_km}")));
    }
    let r = radius_km / 1000.0;
    let mut coords = Vec::with_capacity(lonlat.len());
    for (row, &[lon, lat]) in lonlat.iter().enumerate() {
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::CoordinateOutOfRange { row, detail: format!("longitude {lon}") });
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::CoordinateOutOfRange { row, detail: format!("latitude {lat}") });
        }
        let (lam, phi) = (lon.to_radians(), lat.to_radians());
        coords.push([r * lam * phi.cos(), r * phi]);
    }
    LocationSet::with_provenance(coords, Provenance::Sinusoidal)
}

/// Ordering applied before building the directed neighbor graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OrderingStrategy {
    /// Ascending first coordinate, then second, then raw index.
    #[default]
    Coordinate,
    /// Keep the input order.
    Identity,
}

impl std::str::FromStr for OrderingStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coordinate" | "x" => Ok(Self::Coordinate),
            "identity" | "none" => Ok(Self::Identity),
            other => Err(Error::InvalidInput(format!("unknown ordering strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Coordinate => "coordinate",
            Self::Identity => "identity",
        })
    }
}

/// Permutes the stored rows per `strategy`; `id_map` follows the rows.
pub fn order_locations(locs: &LocationSet, strategy: OrderingStrategy) -> LocationSet {
    let mut perm: Vec<usize> = (0..locs.len()).collect();
    match strategy {
        OrderingStrategy::Identity => {}
        OrderingStrategy::Coordinate => perm.sort_by(|&a, &b| {
            let (ca, cb) = (locs.coords[a], locs.coords[b]);
            ca[0]
                .total_cmp(&cb[0])
                .then(ca[1].total_cmp(&cb[1]))
                .then(locs.id_map[a].cmp(&locs.id_map[b]))
        }),
    }
    locs.select(&perm)
}
