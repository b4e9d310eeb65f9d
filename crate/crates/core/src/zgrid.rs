//! Evaluation grids: arcs of the unit circle and lattice discs near `1 - p/m`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

const DISC_SLACK: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Arc,
    Disc,
}

/// Half-width of an arc grid as a function of `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcWidth {
    TwoPiOverL,
    OneOverL,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    #[serde(with = "crate::model::complex_pair")]
    pub z: Complex64,
    pub kind: GridKind,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub kind: GridKind,
    #[serde(rename = "L")]
    pub l: usize,
    pub width: ArcWidth,
    pub spacing: f64,
    pub max_points: usize,
    pub m: usize,
}

impl GridSpec {
    pub fn arc(l: usize, width: ArcWidth, spacing: f64, max_points: usize) -> Result<Self> {
        let spec = Self {
            kind: GridKind::Arc,
            l,
            width,
            spacing,
            max_points,
            m: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `points` equally spaced points around the whole circle.
    pub fn full_circle(points: usize) -> Result<Self> {
        if points == 0 {
            return param("a grid needs at least one point");
        }
        Self::arc(1, ArcWidth::TwoPiOverL, 2.0 * PI / points as f64, points)
    }

    /// `points` points spaced evenly across an arc of half-width `2 pi / L`
    /// or `1 / L`.
    pub fn arc_with_points(l: usize, width: ArcWidth, points: usize) -> Result<Self> {
        if points == 0 {
            return param("a grid needs at least one point");
        }
        let half = arc_half_width(l, width);
        let per_side = (points - 1) / 2;
        let spacing = if per_side == 0 { half.max(f64::MIN_POSITIVE) } else { half / per_side as f64 };
        Self::arc(l, width, spacing, points)
    }

    pub fn disc(m: usize, spacing: f64, max_points: usize) -> Result<Self> {
        let spec = Self {
            kind: GridKind::Disc,
            l: 1,
            width: ArcWidth::OneOverL,
            spacing,
            max_points,
            m,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return param(format!("grid spacing {} must be positive", self.spacing));
        }
        if self.max_points == 0 {
            return param("grid cap must be at least 1");
        }
        if self.l == 0 {
            return param("arc parameter L must be at least 1");
        }
        if self.m == 0 {
            return param("disc parameter m must be at least 1");
        }
        Ok(())
    }
}

/// `max(1, floor((n / (ln n * p^2))^(1/3)))`.
pub fn default_l(n: usize, p: f64) -> usize {
    if n < 2 {
        return 1;
    }
    let n = n as f64;
    let v = (n / (n.ln() * p * p)).cbrt().floor();
    (v as usize).max(1)
}

fn arc_half_width(l: usize, width: ArcWidth) -> f64 {
    let w = match width {
        ArcWidth::TwoPiOverL => 2.0 * PI / l as f64,
        ArcWidth::OneOverL => 1.0 / l as f64,
    };
    w.min(PI)
}

pub fn build_arc_grid(spec: &GridSpec) -> Result<Vec<GridPoint>> {
    spec.validate()?;
    if spec.kind != GridKind::Arc {
        return param("expected an arc grid spec");
    }
    let half = arc_half_width(spec.l, spec.width);
    let mut reach = ((half / spec.spacing) + 1e-9).floor() as i64;
    reach = reach.min(((spec.max_points - 1) / 2) as i64);
    let wraps = reach > 0 && reach as f64 * spec.spacing >= PI - 1e-12;
    let first = if wraps { -reach + 1 } else { -reach };
    Ok((first..=reach)
        .enumerate()
        .map(|(index, j)| GridPoint {
            z: Complex64::from_polar(1.0, j as f64 * spec.spacing),
            kind: GridKind::Arc,
            index,
        })
        .collect())
}

pub fn build_disc_grid(spec: &GridSpec, p: f64) -> Result<Vec<GridPoint>> {
    spec.validate()?;
    if spec.kind != GridKind::Disc {
        return param("expected a disc grid spec");
    }
    if !(p > 0.0 && p < 1.0) {
        return param(format!("retention probability {p} outside (0,1)"));
    }
    let radius = p / spec.m as f64;
    let center = 1.0 - radius;
    let s = spec.spacing;
    let re_lo = ((center - radius) / s).floor() as i64;
    let re_hi = ((center + radius) / s).ceil() as i64;
    let im_hi = (radius / s).floor() as i64;
    let mut found: Vec<(f64, Complex64)> = Vec::new();
    for a in re_lo..=re_hi {
        for b in -im_hi..=im_hi {
            let z = Complex64::new(a as f64 * s, b as f64 * s);
            let dist = (z - center).norm();
            if dist <= radius + DISC_SLACK {
                found.push((dist, z));
            }
        }
    }
    if found.is_empty() {
        return param("disc grid contains no lattice point");
    }
    found.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.re.total_cmp(&y.1.re))
            .then(x.1.im.total_cmp(&y.1.im))
    });
    found.truncate(spec.max_points);
    Ok(found
        .into_iter()
        .enumerate()
        .map(|(index, (_, z))| GridPoint {
            z,
            kind: GridKind::Disc,
            index,
        })
        .collect())
}

pub fn build_grid(spec: &GridSpec, p: f64) -> Result<Vec<GridPoint>> {
    match spec.kind {
        GridKind::Arc => build_arc_grid(spec),
        GridKind::Disc => build_disc_grid(spec, p),
    }
}

/// Serialized form of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDump {
    pub kind: GridKind,
    #[serde(rename = "L")]
    pub l: usize,
    pub spacing: f64,
    #[serde(with = "crate::model::complex_pairs")]
    pub points: Vec<Complex64>,
}

impl GridDump {
    pub fn new(spec: &GridSpec, points: &[GridPoint]) -> Self {
        Self {
            kind: spec.kind,
            l: spec.l,
            spacing: spec.spacing,
            points: points.iter().map(|g| g.z).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_l_examples() {
        assert_eq!(default_l(2, 1.0 - 1e-12), 1);
        assert_eq!(default_l(8, 0.9), 1);
        let mut last = 0;
        for n in 2..2000 {
            let l = default_l(n, 0.5);
            assert!(l >= last);
            last = l;
        }
        assert!(default_l(1000, 0.05) > default_l(1000, 1.0 - 1e-12));
    }

    #[test]
    fn arc_counts() {
        let spec = GridSpec::arc(2, ArcWidth::OneOverL, 0.5, 257).unwrap();
        let pts = build_arc_grid(&spec).unwrap();
        assert_eq!(pts.len(), 3);
        assert!((pts[0].z.arg() + 0.5).abs() < 1e-15);
        assert_eq!(pts[1].z, Complex64::new(1.0, 0.0));

        let spec = GridSpec::arc(2, ArcWidth::OneOverL, 0.25, 257).unwrap();
        assert_eq!(build_arc_grid(&spec).unwrap().len(), 5);

        let capped = GridSpec::arc(1, ArcWidth::OneOverL, 0.01, 10).unwrap();
        let pts = build_arc_grid(&capped).unwrap();
        assert_eq!(pts.len(), 9);
        assert!(pts.iter().any(|g| g.z == Complex64::new(1.0, 0.0)));
        assert!(GridSpec::arc(1, ArcWidth::OneOverL, 0.01, 0).is_err());
    }

    #[test]
    fn full_circle_has_no_duplicate_at_pi() {
        let pts = build_arc_grid(&GridSpec::full_circle(33).unwrap()).unwrap();
        assert_eq!(pts.len(), 33);
        let spec = GridSpec::arc(1, ArcWidth::TwoPiOverL, PI / 4.0, 257).unwrap();
        let pts = build_arc_grid(&spec).unwrap();
        assert_eq!(pts.len(), 8);
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                assert!((a.z - b.z).norm() > 1e-9);
            }
        }
    }

    #[test]
    fn arc_points_on_circle_and_symmetric() {
        let spec = GridSpec::arc_with_points(3, ArcWidth::TwoPiOverL, 41).unwrap();
        let pts = build_arc_grid(&spec).unwrap();
        assert_eq!(pts.len(), 41);
        for g in &pts {
            assert!((g.z.norm() - 1.0).abs() <= 1e-14);
            assert!(pts.iter().any(|h| (h.z - g.z.conj()).norm() < 1e-15));
        }
    }

    #[test]
    fn disc_examples() {
        let spec = GridSpec::disc(1, 0.25, 257).unwrap();
        let pts = build_disc_grid(&spec, 0.5).unwrap();
        assert_eq!(pts.len(), 13);
        assert_eq!(pts[0].z, Complex64::new(0.5, 0.0));
        for g in &pts {
            assert!((g.z - 0.5).norm() <= 0.5 + 1e-14);
        }

        let spec = GridSpec::disc(4, 0.8, 257).unwrap();
        let pts = build_disc_grid(&spec, 0.8).unwrap();
        assert_eq!(pts.len(), 1);
        assert!((pts[0].z - 0.8).norm() < 1e-15);

        let spec = GridSpec::disc(1, 0.25, 4).unwrap();
        assert_eq!(build_disc_grid(&spec, 0.5).unwrap().len(), 4);
    }

    #[test]
    fn grids_are_deterministic() {
        let spec = GridSpec::disc(2, 0.05, 100).unwrap();
        assert_eq!(build_grid(&spec, 0.7).unwrap(), build_grid(&spec, 0.7).unwrap());
    }

    #[test]
    fn dump_format() {
        let spec = GridSpec::arc(2, ArcWidth::OneOverL, 0.5, 3).unwrap();
        let pts = build_arc_grid(&spec).unwrap();
        let v = serde_json::to_value(GridDump::new(&spec, &pts)).unwrap();
        assert_eq!(v["kind"], "arc");
        assert_eq!(v["L"], 2);
        assert_eq!(v["points"].as_array().unwrap().len(), 3);
        assert_eq!(v["points"][1], serde_json::json!([1.0, 0.0]));
    }
}
