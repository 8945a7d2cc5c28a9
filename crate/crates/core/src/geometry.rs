//! Domains, signed-distance queries, and the strip partition used by PDD.
//!
//! The global domain is an axis-aligned rectangle cut by vertical interfaces
//! into `m` equal strips. Interfacial nodes sit strictly inside each interface;
//! the interface endpoints lie on the physical boundary and take boundary data.
//! A disk is also provided because it is the classic exit-time benchmark.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{PddError, Result};

pub type Point = Vector2<f64>;

/// Result of a signed-distance query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryQuery {
    /// Signed distance: negative inside, zero on the boundary, positive outside.
    pub distance: f64,
    /// Closest boundary point.
    pub projection: Point,
    /// Outward unit normal at `projection`.
    pub normal: Point,
}

pub trait Region {
    fn boundary_query(&self, x: &Point) -> BoundaryQuery;

    fn contains(&self, x: &Point) -> bool {
        self.boundary_query(x).distance <= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rectangle {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        if !(xmin < xmax && ymin < ymax) || ![xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) {
            return Err(PddError::InvalidArgument(format!(
                "rectangle needs xmin < xmax and ymin < ymax, got [{xmin}, {xmax}] x [{ymin}, {ymax}]"
            )));
        }
        Ok(Self {
            xmin,
            xmax,
            ymin,
            ymax,
        })
    }

    pub fn unit_square() -> Self {
        Self {
            xmin: 0.0,
            xmax: 1.0,
            ymin: 0.0,
            ymax: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    /// Largest distance between two points of the rectangle.
    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    /// Smallest distance between two parallel lines enclosing the rectangle.
    pub fn slab_width(&self) -> f64 {
        self.width().min(self.height())
    }

    pub fn contains_closed(&self, x: &Point) -> bool {
        x.x >= self.xmin && x.x <= self.xmax && x.y >= self.ymin && x.y <= self.ymax
    }

    fn edge_midpoint(&self, edge: Edge) -> Point {
        let cx = 0.5 * (self.xmin + self.xmax);
        let cy = 0.5 * (self.ymin + self.ymax);
        match edge {
            Edge::Left => Point::new(self.xmin, cy),
            Edge::Right => Point::new(self.xmax, cy),
            Edge::Bottom => Point::new(cx, self.ymin),
            Edge::Top => Point::new(cx, self.ymax),
        }
    }

    /// Picks the edge maximizing `score`; ties go to the edge whose midpoint is nearer to `x`.
    fn pick_edge(&self, x: &Point, scores: [(Edge, f64); 4]) -> Edge {
        let mut best = scores[0];
        for &cand in &scores[1..] {
            if cand.1 > best.1 {
                best = cand;
            } else if cand.1 == best.1 {
                let dc = (self.edge_midpoint(cand.0) - x).norm_squared();
                let db = (self.edge_midpoint(best.0) - x).norm_squared();
                if dc < db {
                    best = cand;
                }
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

impl Edge {
    fn normal(self) -> Point {
        match self {
            Edge::Left => Point::new(-1.0, 0.0),
            Edge::Right => Point::new(1.0, 0.0),
            Edge::Bottom => Point::new(0.0, -1.0),
            Edge::Top => Point::new(0.0, 1.0),
        }
    }
}

impl Region for Rectangle {
    fn boundary_query(&self, x: &Point) -> BoundaryQuery {
        let dl = x.x - self.xmin;
        let dr = self.xmax - x.x;
        let db = x.y - self.ymin;
        let dt = self.ymax - x.y;
        if dl >= 0.0 && dr >= 0.0 && db >= 0.0 && dt >= 0.0 {
            // Inside or on the boundary: the nearest edge wins.
            let edge = self.pick_edge(
                x,
                [
                    (Edge::Left, -dl),
                    (Edge::Right, -dr),
                    (Edge::Bottom, -db),
                    (Edge::Top, -dt),
                ],
            );
            let (distance, projection) = match edge {
                Edge::Left => (-dl, Point::new(self.xmin, x.y)),
                Edge::Right => (-dr, Point::new(self.xmax, x.y)),
                Edge::Bottom => (-db, Point::new(x.x, self.ymin)),
                Edge::Top => (-dt, Point::new(x.x, self.ymax)),
            };
            // Keep an exact zero (not -0.0) on the boundary.
            let distance = if distance == 0.0 { 0.0 } else { distance };
            BoundaryQuery {
                distance,
                projection,
                normal: edge.normal(),
            }
        } else {
            let projection = Point::new(x.x.clamp(self.xmin, self.xmax), x.y.clamp(self.ymin, self.ymax));
            let edge = self.pick_edge(
                x,
                [
                    (Edge::Left, -dl),
                    (Edge::Right, -dr),
                    (Edge::Bottom, -db),
                    (Edge::Top, -dt),
                ],
            );
            BoundaryQuery {
                distance: (x - projection).norm(),
                projection,
                normal: edge.normal(),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Disk {
    pub fn new(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(PddError::InvalidArgument(format!("disk radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn unit() -> Self {
        Self {
            center: [0.0, 0.0],
            radius: 1.0,
        }
    }
}

impl Region for Disk {
    fn boundary_query(&self, x: &Point) -> BoundaryQuery {
        let c = Point::new(self.center[0], self.center[1]);
        let r = x - c;
        let len = r.norm();
        let normal = if len > 0.0 { r / len } else { Point::new(1.0, 0.0) };
        BoundaryQuery {
            distance: len - self.radius,
            projection: c + normal * self.radius,
            normal,
        }
    }
}

/// The physical domain of a boundary-value problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Rectangle(Rectangle),
    Disk(Disk),
}

impl Domain {
    pub fn as_rectangle(&self) -> Option<&Rectangle> {
        match self {
            Domain::Rectangle(r) => Some(r),
            Domain::Disk(_) => None,
        }
    }

    /// Axis-aligned bounding box.
    pub fn bounding_box(&self) -> Rectangle {
        match self {
            Domain::Rectangle(r) => *r,
            Domain::Disk(d) => Rectangle {
                xmin: d.center[0] - d.radius,
                xmax: d.center[0] + d.radius,
                ymin: d.center[1] - d.radius,
                ymax: d.center[1] + d.radius,
            },
        }
    }
}

impl Region for Domain {
    #[inline]
    fn boundary_query(&self, x: &Point) -> BoundaryQuery {
        match self {
            Domain::Rectangle(r) => r.boundary_query(x),
            Domain::Disk(d) => d.boundary_query(x),
        }
    }
}

pub fn boundary_query(domain: &impl Region, x: &Point) -> BoundaryQuery {
    domain.boundary_query(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interface {
    pub id: usize,
    /// Abscissa of the vertical segment.
    pub x: f64,
    pub ymin: f64,
    pub ymax: f64,
    /// Subdomain on the left (lower index) and right.
    pub left: usize,
    pub right: usize,
    /// Node ids on this interface, ordered by increasing y.
    pub nodes: Vec<usize>,
}

impl Interface {
    pub fn length(&self) -> f64 {
        self.ymax - self.ymin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub position: [f64; 2],
    pub interface: usize,
}

impl Node {
    pub fn point(&self) -> Point {
        Point::new(self.position[0], self.position[1])
    }
}

/// Nonoverlapping partition of a rectangle into vertical strips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub domain: Rectangle,
    pub subdomains: Vec<Rectangle>,
    pub interfaces: Vec<Interface>,
    pub nodes: Vec<Node>,
}

/// Splits `domain` into `m` equal vertical strips with `nodes_per_interface`
/// equispaced nodes strictly inside each of the `m - 1` interfaces.
pub fn build_partition(domain: &Rectangle, m: usize, nodes_per_interface: usize) -> Result<Partition> {
    if m < 2 {
        return Err(PddError::InvalidArgument(format!("need at least 2 subdomains, got {m}")));
    }
    if nodes_per_interface < 2 {
        return Err(PddError::InvalidArgument(format!(
            "need at least 2 nodes per interface, got {nodes_per_interface}"
        )));
    }
    let width = domain.width();
    let edges: Vec<f64> = (0..=m)
        .map(|k| match k {
            0 => domain.xmin,
            k if k == m => domain.xmax,
            k => domain.xmin + width * (k as f64) / (m as f64),
        })
        .collect();
    let subdomains = edges
        .windows(2)
        .map(|w| Rectangle {
            xmin: w[0],
            xmax: w[1],
            ymin: domain.ymin,
            ymax: domain.ymax,
        })
        .collect();

    let p = nodes_per_interface;
    let mut interfaces = Vec::with_capacity(m - 1);
    let mut nodes = Vec::with_capacity((m - 1) * p);
    for j in 0..m - 1 {
        let x = edges[j + 1];
        let mut ids = Vec::with_capacity(p);
        for i in 1..=p {
            let y = domain.ymin + domain.height() * (i as f64) / ((p + 1) as f64);
            let id = nodes.len();
            nodes.push(Node {
                id,
                position: [x, y],
                interface: j,
            });
            ids.push(id);
        }
        interfaces.push(Interface {
            id: j,
            x,
            ymin: domain.ymin,
            ymax: domain.ymax,
            left: j,
            right: j + 1,
            nodes: ids,
        });
    }
    Ok(Partition {
        domain: *domain,
        subdomains,
        interfaces,
        nodes,
    })
}

impl Partition {
    pub fn m(&self) -> usize {
        self.subdomains.len()
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Index of the strip containing `x`. Points on an interface belong to the lower index.
    #[inline]
    pub fn locate_subdomain(&self, x: &Point) -> Result<usize> {
        if !self.domain.contains_closed(x) {
            return Err(PddError::OutsideDomain { x: x.x, y: x.y });
        }
        Ok(self.locate_unchecked(x.x))
    }

    /// Same as [`Partition::locate_subdomain`] but clamps abscissae outside the domain.
    #[inline]
    pub fn locate_unchecked(&self, x: f64) -> usize {
        let m = self.subdomains.len();
        for (k, s) in self.subdomains.iter().enumerate().take(m - 1) {
            if x <= s.xmax {
                return k;
            }
        }
        m - 1
    }

    /// Interfaces bordering subdomain `k`, as (interface id, is the left edge of `k`).
    pub fn interfaces_of(&self, k: usize) -> Vec<(usize, bool)> {
        let mut out = Vec::with_capacity(2);
        if k > 0 {
            out.push((k - 1, true));
        }
        if k + 1 < self.subdomains.len() {
            out.push((k, false));
        }
        out
    }

    /// Number of interfacial nodes on the boundary of subdomain `k`.
    pub fn nodes_on_subdomain(&self, k: usize) -> usize {
        self.interfaces_of(k)
            .iter()
            .map(|(j, _)| self.interfaces[*j].nodes.len())
            .sum()
    }
}

pub fn locate_subdomain(partition: &Partition, x: &Point) -> Result<usize> {
    partition.locate_subdomain(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn center_of_unit_square() {
        let q = Rectangle::unit_square().boundary_query(&Point::new(0.5, 0.5));
        assert_eq!(q.distance, -0.5);
        assert_abs_diff_eq!(q.normal.norm(), 1.0);
        let p = q.projection;
        assert!([(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.0)].contains(&(p.x, p.y)));
    }

    #[test]
    fn point_on_boundary() {
        let x = Point::new(0.5, 0.0);
        let q = Rectangle::unit_square().boundary_query(&x);
        assert_eq!(q.distance, 0.0);
        assert_eq!(q.projection, x);
        assert_eq!(q.normal, Point::new(0.0, -1.0));
    }

    #[test]
    fn exterior_offset() {
        let q = Rectangle::unit_square().boundary_query(&Point::new(0.5, -0.2));
        assert_abs_diff_eq!(q.distance, 0.2, epsilon = 1e-15);
        assert_eq!(q.normal, Point::new(0.0, -1.0));
        assert_eq!(q.projection, Point::new(0.5, 0.0));
    }

    #[test]
    fn corner_tie_goes_to_nearer_midpoint() {
        // Equidistant from the bottom and left edges; the left midpoint (0, 0.5) is nearer.
        let r = Rectangle::new(0.0, 4.0, 0.0, 1.0).unwrap();
        let q = r.boundary_query(&Point::new(0.3, 0.3));
        assert_eq!(q.normal, Point::new(-1.0, 0.0));
        assert_eq!(q.projection, Point::new(0.0, 0.3));
    }

    #[test]
    fn random_points_match_rectangle_oracle() {
        let r = Rectangle::new(-1.0, 3.0, 0.5, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let x = Point::new(rng.random_range(-3.0..5.0), rng.random_range(-1.0..4.0));
            let q = r.boundary_query(&x);
            // Oracle: distance to the nearest point of the closed rectangle, or to the nearest edge line inside.
            let inside = r.contains_closed(&x);
            let oracle = if inside {
                (x.x - r.xmin).min(r.xmax - x.x).min(x.y - r.ymin).min(r.ymax - x.y)
            } else {
                let dx = (r.xmin - x.x).max(0.0).max(x.x - r.xmax);
                let dy = (r.ymin - x.y).max(0.0).max(x.y - r.ymax);
                dx.hypot(dy)
            };
            assert_abs_diff_eq!(q.distance.abs(), oracle, epsilon = 1e-14);
            assert_eq!(q.distance < 0.0, inside && oracle > 0.0);
            assert!(r.boundary_query(&q.projection).distance.abs() <= 1e-12);
            assert_abs_diff_eq!(q.normal.norm(), 1.0);
        }
    }

    #[test]
    fn disk_query() {
        let d = Disk::unit();
        let q = d.boundary_query(&Point::new(0.0, 0.5));
        assert_abs_diff_eq!(q.distance, -0.5);
        assert_abs_diff_eq!(q.projection.y, 1.0);
        assert_abs_diff_eq!(q.normal.y, 1.0);
    }

    #[test]
    fn partition_two_strips() {
        let p = build_partition(&Rectangle::unit_square(), 2, 3).unwrap();
        assert_eq!(p.interfaces.len(), 1);
        assert_eq!(p.interfaces[0].x, 0.5);
        let ys: Vec<f64> = p.nodes.iter().map(|n| n.position[1]).collect();
        assert_eq!(ys, vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn partition_four_strips_has_eighteen_nodes() {
        let p = build_partition(&Rectangle::new(0.0, 4.0, 0.0, 1.0).unwrap(), 4, 6).unwrap();
        assert_eq!(p.interfaces.len(), 3);
        assert_eq!(p.n(), 18);
        for iface in &p.interfaces {
            assert!(iface.nodes.len() >= 2);
            assert_eq!(iface.right, iface.left + 1);
        }
        let total: f64 = p.subdomains.iter().map(|s| s.width()).sum();
        assert_eq!(total, p.domain.width());
    }

    #[test]
    fn partition_rejects_single_strip() {
        assert!(build_partition(&Rectangle::unit_square(), 1, 3).is_err());
        assert!(build_partition(&Rectangle::unit_square(), 2, 1).is_err());
    }

    #[test]
    fn locate_with_tie_break() {
        let p = build_partition(&Rectangle::unit_square(), 2, 3).unwrap();
        assert_eq!(p.locate_subdomain(&Point::new(0.25, 0.5)).unwrap(), 0);
        assert_eq!(p.locate_subdomain(&Point::new(0.5, 0.5)).unwrap(), 0);
        assert_eq!(p.locate_subdomain(&Point::new(0.75, 0.5)).unwrap(), 1);
        assert!(p.locate_subdomain(&Point::new(1.5, 0.5)).is_err());
    }

    #[test]
    fn every_node_on_its_interface() {
        let p = build_partition(&Rectangle::new(0.0, 4.0, 0.0, 1.0).unwrap(), 4, 6).unwrap();
        for n in &p.nodes {
            let iface = &p.interfaces[n.interface];
            assert_eq!(n.position[0], iface.x);
            assert!(n.position[1] > iface.ymin && n.position[1] < iface.ymax);
            assert!(iface.nodes.contains(&n.id));
        }
    }
}
