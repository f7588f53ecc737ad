//! Bounded Voronoi tessellation of a tower network.
//!
//! Each cell is the boundary polygon clipped successively by the bisector
//! half-planes of its nearest generators, visited in increasing distance.
//! Clipping stops once the next generator is farther than twice the cell's
//! current radius, after which no bisector can reach the cell. Co-located
//! towers share one generator and therefore one cell.

use rayon::prelude::*;
use rstar::primitives::GeomWithData;
use rstar::RTree;

use super::polygon::{self, LabeledRing, Point};
use super::TowerNetwork;
use crate::error::{Error, Result};

/// Edges shorter than this fraction of the generator spacing do not make
/// two cells adjacent (four co-circular generators meet in a point).
const ADJACENCY_EDGE_REL_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct VoronoiCell {
    pub tower_id: String,
    /// Index of the (possibly shared) generator.
    pub site: usize,
    /// Counter-clockwise ring in projected meters, not closed.
    pub polygon_m: Vec<Point>,
    /// The same ring in lon/lat degrees.
    pub polygon_lonlat: Vec<(f64, f64)>,
    pub area_m2: f64,
}

#[derive(Debug, Clone)]
pub struct Tessellation {
    cells: Vec<VoronoiCell>,
    n_sites: usize,
    adjacency: Vec<Vec<usize>>,
}

impl Tessellation {
    /// One cell per tower, ascending tower id.
    pub fn cells(&self) -> &[VoronoiCell] {
        &self.cells
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Sum of distinct generator cell areas.
    pub fn total_area_m2(&self) -> f64 {
        let mut seen = vec![false; self.n_sites];
        self.cells
            .iter()
            .filter(|c| !std::mem::replace(&mut seen[c.site], true))
            .map(|c| c.area_m2)
            .sum()
    }

    /// Towers whose cells share an edge with tower `idx`'s cell, ascending,
    /// excluding `idx`. Co-located towers are adjacent to each other.
    pub fn adjacent(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }
}

impl Tessellation {
    /// GeoJSON FeatureCollection with one polygon per tower. `properties`
    /// receives the tower index and returns extra properties; `tower_id` and
    /// `area_m2` are always present.
    pub fn to_geojson<F>(&self, mut properties: F) -> serde_json::Value
    where
        F: FnMut(usize) -> serde_json::Map<String, serde_json::Value>,
    {
        let features: Vec<serde_json::Value> = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut ring: Vec<[f64; 2]> = c.polygon_lonlat.iter().map(|&(lon, lat)| [lon, lat]).collect();
                if let Some(&first) = ring.first() {
                    ring.push(first);
                }
                let mut props = serde_json::Map::new();
                props.insert("tower_id".into(), c.tower_id.clone().into());
                props.insert("area_m2".into(), c.area_m2.into());
                props.extend(properties(i));
                serde_json::json!({
                    "type": "Feature",
                    "geometry": { "type": "Polygon", "coordinates": [ring] },
                    "properties": props,
                })
            })
            .collect();
        serde_json::json!({ "type": "FeatureCollection", "features": features })
    }
}

pub fn voronoi(net: &TowerNetwork) -> Result<Tessellation> {
    // Merge co-located towers into sites.
    let mut order: Vec<usize> = (0..net.len()).collect();
    let planar = net.planar();
    let key = |i: usize| (net.tower(i).lon, net.tower(i).lat);
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
    });
    let mut sites: Vec<Point> = Vec::new();
    let mut site_of = vec![0usize; net.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if k == 0 || key(order[k - 1]) != key(i) {
            sites.push(planar[i]);
            members.push(Vec::new());
        }
        site_of[i] = sites.len() - 1;
        members.last_mut().unwrap().push(i);
    }
    check_nondegenerate(&sites)?;

    let tree = RTree::bulk_load(
        sites
            .iter()
            .enumerate()
            .map(|(i, &p)| GeomWithData::new(p, i))
            .collect::<Vec<_>>(),
    );
    let boundary = &net.boundary().planar;

    let site_cells: Vec<(Vec<Point>, Vec<usize>)> = (0..sites.len())
        .into_par_iter()
        .map(|i| clip_cell(i, &sites, &tree, boundary))
        .collect();

    // Adjacency between sites, symmetrised.
    let mut site_adj: Vec<Vec<usize>> = site_cells.iter().map(|(_, a)| a.clone()).collect();
    for (i, (_, adj)) in site_cells.iter().enumerate() {
        for &j in adj {
            site_adj[j].push(i);
        }
    }
    for a in site_adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }

    let proj = net.projection();
    let site_lonlat: Vec<Vec<(f64, f64)>> = site_cells
        .par_iter()
        .map(|(ring, _)| ring.iter().map(|&p| proj.inverse(p)).collect())
        .collect();

    let mut cells = Vec::with_capacity(net.len());
    let mut adjacency = Vec::with_capacity(net.len());
    for (idx, tower) in net.towers().iter().enumerate() {
        let s = site_of[idx];
        let ring = &site_cells[s].0;
        cells.push(VoronoiCell {
            tower_id: tower.tower_id.clone(),
            site: s,
            polygon_m: ring.clone(),
            polygon_lonlat: site_lonlat[s].clone(),
            area_m2: polygon::area(ring),
        });
        let mut adj: Vec<usize> = members[s].iter().copied().filter(|&j| j != idx).collect();
        for &t in &site_adj[s] {
            adj.extend_from_slice(&members[t]);
        }
        adj.sort_unstable();
        adjacency.push(adj);
    }
    Ok(Tessellation {
        cells,
        n_sites: sites.len(),
        adjacency,
    })
}

fn check_nondegenerate(sites: &[Point]) -> Result<()> {
    if sites.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 distinct tower locations, found {}",
            sites.len()
        )));
    }
    let p0 = sites[0];
    let dist = |p: Point| (p[0] - p0[0]).hypot(p[1] - p0[1]);
    let p1 = *sites
        .iter()
        .max_by(|a, b| dist(**a).total_cmp(&dist(**b)))
        .unwrap();
    let base = [p1[0] - p0[0], p1[1] - p0[1]];
    let base_len = base[0].hypot(base[1]);
    let non_collinear = sites.iter().any(|p| {
        let v = [p[0] - p0[0], p[1] - p0[1]];
        let c = base[0] * v[1] - base[1] * v[0];
        c.abs() > 1e-9 * base_len * base_len
    });
    if non_collinear {
        Ok(())
    } else {
        Err(Error::DegenerateGeometry("all tower locations are collinear".into()))
    }
}

fn clip_cell(
    i: usize,
    sites: &[Point],
    tree: &RTree<GeomWithData<Point, usize>>,
    boundary: &[Point],
) -> (Vec<Point>, Vec<usize>) {
    let p = sites[i];
    let mut ring = LabeledRing::from_boundary(boundary);
    let mut reach = ring.max_distance_from(p);
    for nb in tree.nearest_neighbor_iter(&p) {
        let j = nb.data;
        if j == i {
            continue;
        }
        let q = *nb.geom();
        let d = (q[0] - p[0]).hypot(q[1] - p[1]);
        if d > 2.0 * reach {
            break;
        }
        let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        ring = ring.clip_half_plane(mid, [q[0] - p[0], q[1] - p[1]], j);
        if ring.is_empty() {
            break;
        }
        reach = ring.max_distance_from(p);
    }

    let n = ring.points.len();
    let mut adj = Vec::new();
    for k in 0..n {
        if let Some(j) = ring.labels[k] {
            let a = ring.points[k];
            let b = ring.points[(k + 1) % n];
            let spacing = (sites[j][0] - p[0]).hypot(sites[j][1] - p[1]);
            if (b[0] - a[0]).hypot(b[1] - a[1]) > ADJACENCY_EDGE_REL_TOL * spacing {
                adj.push(j);
            }
        }
    }
    adj.sort_unstable();
    adj.dedup();
    (ring.points, adj)
}
