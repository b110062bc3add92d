//! JSON system definition files.
//!
//! ```json
//! {
//!   "n": 2,
//!   "A": [-1.0, 3.0, 0.0, -1.0],
//!   "b": [0.0, 0.0],
//!   "region": { "box": { "lo": [-2, -1], "hi": [2, 1] } },
//!   "enclosure": "ball",
//!   "x0": [1.0, 0.5],
//!   "modes": [ { "A": [...], "b": [...], "region": {...}, "enclosure": ... } ]
//! }
//! ```
//!
//! `A` is row-major. A region is either `{"box": {"lo", "hi"}}` or
//! `{"ellipsoids": [{"q", "b", "c"}, ...]}` with `q` row-major. The enclosure is
//! `"ball"` or `"vertices"` for boxes, or `{"ellipsoids": [...], "points": [...]}`.
//! Either the top-level `A` or a nonempty `modes` array must be present.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_region, EnclosureItem, EnclosureMode, Ellipsoid, QuadraticFunction, Region};
use crate::linalg::SquareMatrix;
use crate::switched::{Mode, SwitchedSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionSpec {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ellipsoids(Vec<QuadraticFunction>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnclosureSpec {
    Mode(EnclosureMode),
    Items {
        #[serde(default)]
        ellipsoids: Vec<QuadraticFunction>,
        #[serde(default)]
        points: Vec<Vec<f64>>,
    },
}

impl Default for EnclosureSpec {
    fn default() -> Self {
        EnclosureSpec::Mode(EnclosureMode::Ball)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(default)]
    pub b: Option<Vec<f64>>,
    pub region: RegionSpec,
    #[serde(default)]
    pub enclosure: EnclosureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    pub n: usize,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSpec>,
    #[serde(default)]
    pub enclosure: EnclosureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeSpec>,
}

/// A validated affine system ẋ = Ax + b on R.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSystem {
    pub a: SquareMatrix,
    pub b: Vec<f64>,
    pub region: Region,
}

pub fn build_region(n: usize, region: &RegionSpec, enclosure: &EnclosureSpec) -> Result<Region> {
    match (region, enclosure) {
        (RegionSpec::Box { lo, hi }, EnclosureSpec::Mode(mode)) => {
            check_len(n, lo.len())?;
            box_region(lo, hi, *mode)
        }
        (RegionSpec::Box { lo, hi }, EnclosureSpec::Items { .. }) => {
            check_len(n, lo.len())?;
            let boxed = box_region(lo, hi, EnclosureMode::Ball)?;
            Region::new(boxed.inner().to_vec(), enclosure_items(n, enclosure)?)
        }
        (RegionSpec::Ellipsoids(_), EnclosureSpec::Mode(_)) => Err(Error::Config(
            "an ellipsoid region needs an explicit enclosure ({\"ellipsoids\": [...], \"points\": [...]})".into(),
        )),
        (RegionSpec::Ellipsoids(qs), EnclosureSpec::Items { .. }) => {
            let inner = qs
                .iter()
                .map(|q| {
                    check_len(n, q.dim())?;
                    Ellipsoid::new(q.clone())
                })
                .collect::<Result<Vec<_>>>()?;
            Region::new(inner, enclosure_items(n, enclosure)?)
        }
    }
}

fn enclosure_items(n: usize, spec: &EnclosureSpec) -> Result<Vec<EnclosureItem>> {
    let EnclosureSpec::Items { ellipsoids, points } = spec else {
        unreachable!("called with explicit items only");
    };
    let mut items = Vec::new();
    for q in ellipsoids {
        check_len(n, q.dim())?;
        items.push(EnclosureItem::Ellipsoid(Ellipsoid::new(q.clone())?));
    }
    for p in points {
        check_len(n, p.len())?;
        items.push(EnclosureItem::Point(p.clone()));
    }
    Ok(items)
}

fn check_len(n: usize, got: usize) -> Result<()> {
    if n != got {
        return Err(Error::Config(format!("dimension mismatch in system file: expected {n}, got {got}")));
    }
    Ok(())
}

fn matrix(n: usize, a: &[f64]) -> Result<SquareMatrix> {
    check_len(n * n, a.len())?;
    SquareMatrix::from_row_major(n, a)
}

fn offset(n: usize, b: &Option<Vec<f64>>) -> Result<Vec<f64>> {
    match b {
        Some(b) => {
            check_len(n, b.len())?;
            Ok(b.clone())
        }
        None => Ok(vec![0.0; n]),
    }
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("system file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Replaces the enclosure of box regions by `mode`.
    pub fn override_enclosure(&mut self, mode: EnclosureMode) {
        self.enclosure = EnclosureSpec::Mode(mode);
        for m in &mut self.modes {
            m.enclosure = EnclosureSpec::Mode(mode);
        }
    }

    /// The top-level system, or the single mode when only `modes` is given.
    pub fn affine(&self) -> Result<AffineSystem> {
        match (&self.a, &self.region) {
            (Some(a), Some(region)) => Ok(AffineSystem {
                a: matrix(self.n, a)?,
                b: offset(self.n, &self.b)?,
                region: build_region(self.n, region, &self.enclosure)?,
            }),
            (None, None) if self.modes.len() == 1 => {
                let m = &self.modes[0];
                Ok(AffineSystem {
                    a: matrix(self.n, &m.a)?,
                    b: offset(self.n, &m.b)?,
                    region: build_region(self.n, &m.region, &m.enclosure)?,
                })
            }
            _ => Err(Error::Config("system file needs top-level \"A\" and \"region\"".into())),
        }
    }

    /// The `modes` array, or the top-level system as a single mode.
    pub fn switched(&self) -> Result<SwitchedSystem> {
        if self.modes.is_empty() {
            let s = self.affine()?;
            return SwitchedSystem::new(vec![Mode::new(s.a, s.b, s.region)?]);
        }
        let modes = self
            .modes
            .iter()
            .map(|m| {
                Mode::new(matrix(self.n, &m.a)?, offset(self.n, &m.b)?, build_region(self.n, &m.region, &m.enclosure)?)
            })
            .collect::<Result<Vec<_>>>()?;
        SwitchedSystem::new(modes)
    }

    pub fn x0(&self) -> Result<Option<Vec<f64>>> {
        match &self.x0 {
            Some(x) => {
                check_len(self.n, x.len())?;
                Ok(Some(x.clone()))
            }
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OriginClass;

    #[test]
    fn box_system_round_trip() {
        let text = r#"{
            "n": 2,
            "A": [-1.0, 3.0, 0.0, -1.0],
            "region": {"box": {"lo": [-2, -1], "hi": [2, 1]}},
            "x0": [1.0, 0.5]
        }"#;
        let f = SystemFile::from_json(text).unwrap();
        let s = f.affine().unwrap();
        assert_eq!(s.a.to_row_major(), vec![-1.0, 3.0, 0.0, -1.0]);
        assert_eq!(s.b, vec![0.0, 0.0]);
        assert_eq!(s.region.classify_origin(), OriginClass::Interior);
        assert_eq!(s.region.inner().len(), 2);
        assert_eq!(f.x0().unwrap(), Some(vec![1.0, 0.5]));
        let back = SystemFile::from_json(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn ellipsoid_region_needs_explicit_enclosure() {
        let text = r#"{
            "n": 1, "A": [-1.0],
            "region": {"ellipsoids": [{"q": [1.0], "b": [-1.5], "c": 2.0}]}
        }"#;
        let f = SystemFile::from_json(text).unwrap();
        assert!(matches!(f.affine(), Err(Error::Config(_))));
        let text = r#"{
            "n": 1, "A": [-1.0],
            "region": {"ellipsoids": [{"q": [1.0], "b": [-1.5], "c": 2.0}]},
            "enclosure": {"points": [[1.0], [2.0]]}
        }"#;
        let s = SystemFile::from_json(text).unwrap().affine().unwrap();
        assert_eq!(s.region.enclosure().len(), 2);
        assert!(s.region.contains(&[1.5], 0.0).unwrap());
    }

    #[test]
    fn modes_array() {
        let text = r#"{
            "n": 1,
            "modes": [
                {"A": [-1.0], "b": [2.0], "region": {"box": {"lo": [0], "hi": [1]}}},
                {"A": [-1.0], "region": {"box": {"lo": [1], "hi": [3]}}, "enclosure": "vertices"}
            ]
        }"#;
        let sys = SystemFile::from_json(text).unwrap().switched().unwrap();
        assert_eq!(sys.modes().len(), 2);
        assert_eq!(sys.modes()[1].b_aff, vec![0.0]);
        assert_eq!(sys.modes()[1].region.enclosure().len(), 2);
    }

    #[test]
    fn malformed_files_are_config_errors() {
        for text in [
            "{",
            r#"{"n": 2, "A": [1.0], "region": {"box": {"lo": [0, 0], "hi": [1, 1]}}}"#,
            r#"{"n": 1, "A": [-1.0], "region": {"box": {"lo": [0, 0], "hi": [1, 1]}}}"#,
            r#"{"n": 1}"#,
        ] {
            let res = SystemFile::from_json(text).and_then(|f| f.affine());
            assert!(matches!(res, Err(Error::Config(_))), "{text}: {res:?}");
        }
    }
}
