//! Phase quantization and the divide-and-assemble map.
//!
//! A `b`-bit surface only realizes the phases `2 pi k / 2^b`. Each level is
//! produced by one of a few base element patterns, possibly mirrored (adds
//! 180 degrees) or rotated (adds 90 or 270 degrees). The catalog holds the
//! fewest base patterns that cover every level, the assembly map says which
//! pattern and transform goes where, and the bill of materials counts parts.

use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_to_db;
use crate::optimizer::{BeamSolution, Method, SampleSet};
use crate::scenario::Scenario;
use crate::steering::CVector;

pub const MAX_BITS: u32 = 4;

/// Phase grid point `k` for `bits` bits. Every grid phase in the crate comes
/// from here so that round trips are exact.
pub fn grid_phase(k: u32, bits: u32) -> f64 {
    TAU * k as f64 / (1u32 << bits) as f64
}

/// Nearest grid index to `phase`; exact midpoints go to the lower index.
pub fn quantize_phase(phase: f64, bits: u32) -> u32 {
    let levels = 1u32 << bits;
    let x = phase.rem_euclid(TAU) / TAU * levels as f64;
    let k = (x - 0.5).ceil();
    (k as i64).rem_euclid(levels as i64) as u32
}

fn check_bits(bits: u32) -> Result<()> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::UnsupportedBits(bits))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedSolution {
    pub bits: u32,
    /// Grid index per element, frozen y-outer order.
    pub levels: Vec<u32>,
    pub m_y: usize,
    pub m_z: usize,
    pub parent_method: Method,
    pub parent_rho_db: f64,
    pub rho_db: f64,
}

impl QuantizedSolution {
    pub fn phases(&self) -> Vec<f64> {
        self.levels.iter().map(|&k| grid_phase(k, self.bits)).collect()
    }

    pub fn weights(&self) -> CVector {
        CVector::from_iterator(
            self.levels.len(),
            self.phases().into_iter().map(|p| Complex64::from_polar(1.0, p)),
        )
    }

    pub fn loss_db(&self) -> f64 {
        self.parent_rho_db - self.rho_db
    }

    /// The quantized weights as a plain solution (no traces).
    pub fn to_beam(&self) -> BeamSolution {
        BeamSolution {
            method: self.parent_method,
            w: self.weights(),
            w_y: None,
            w_z: None,
            rho_db: self.rho_db,
            relaxation_rho_db: None,
            traces: Default::default(),
            flags: Default::default(),
            wall_seconds: 0.0,
        }
    }
}

/// Rounds every phase of `solution` to `bits` bits and recomputes `rho`.
pub fn quantize(scenario: &Scenario, solution: &BeamSolution, bits: u32) -> Result<QuantizedSolution> {
    check_bits(bits)?;
    let m = scenario.geometry.elements();
    if solution.w.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: solution.w.len(),
        });
    }
    let samples = SampleSet::new(scenario)?;
    let levels: Vec<u32> = solution.w.iter().map(|x| quantize_phase(x.arg(), bits)).collect();
    let mut q = QuantizedSolution {
        bits,
        levels,
        m_y: scenario.geometry.m_y,
        m_z: scenario.geometry.m_z,
        parent_method: solution.method,
        parent_rho_db: solution.rho_db,
        rho_db: f64::NAN,
    };
    let (main, _) = samples.evaluate(&q.weights());
    q.rho_db = linear_to_db(main);
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Mirror,
    Rotate90,
    Rotate270,
}

impl Transform {
    /// Phase offset in quarter turns.
    pub fn quarter_turns(self) -> u32 {
        match self {
            Transform::Identity => 0,
            Transform::Rotate90 => 1,
            Transform::Mirror => 2,
            Transform::Rotate270 => 3,
        }
    }

    pub fn offset_rad(self) -> f64 {
        TAU * self.quarter_turns() as f64 / 4.0
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Transform::Identity => "identity",
            Transform::Mirror => "mirror",
            Transform::Rotate90 => "rotate_90",
            Transform::Rotate270 => "rotate_270",
        };
        f.write_str(s)
    }
}

/// Which physical transforms the element design supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformSet {
    #[default]
    MirrorOnly,
    MirrorRotation,
}

impl TransformSet {
    fn candidates(self) -> &'static [Transform] {
        match self {
            TransformSet::MirrorOnly => &[Transform::Identity, Transform::Mirror],
            TransformSet::MirrorRotation => &[
                Transform::Identity,
                Transform::Rotate90,
                Transform::Mirror,
                Transform::Rotate270,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePattern {
    pub id: String,
    /// Grid index of the untransformed pattern.
    pub level: u32,
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternCatalog {
    pub bits: u32,
    pub transform_set: TransformSet,
    /// Transforms whose offset lands on the grid, in increasing offset.
    pub transforms: Vec<Transform>,
    pub bases: Vec<BasePattern>,
}

/// `pattern_a`, `pattern_b`, ...
fn pattern_id(i: usize) -> String {
    format!("pattern_{}", (b'a' + i as u8) as char)
}

/// Fewest base patterns that, with the usable transforms, give every level once.
pub fn build_catalog(bits: u32, set: TransformSet) -> Result<PatternCatalog> {
    check_bits(bits)?;
    let levels = 1u32 << bits;
    // a quarter turn is on the grid only from 2 bits up
    let transforms: Vec<Transform> = set
        .candidates()
        .iter()
        .copied()
        .filter(|t| (t.quarter_turns() * levels).is_multiple_of(4))
        .collect();
    let base_count = levels / transforms.len() as u32;
    let bases = (0..base_count)
        .map(|k| BasePattern {
            id: pattern_id(k as usize),
            level: k,
            phase_rad: grid_phase(k, bits),
        })
        .collect();
    Ok(PatternCatalog {
        bits,
        transform_set: set,
        transforms,
        bases,
    })
}

impl PatternCatalog {
    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    /// Grid index produced by `transform` applied to base `base`.
    pub fn level_of(&self, base: usize, transform: Transform) -> u32 {
        (self.bases[base].level + transform.quarter_turns() * self.levels() / 4) % self.levels()
    }

    /// The unique `(base index, transform)` giving `level`.
    pub fn cover(&self, level: u32) -> Result<(usize, Transform)> {
        let levels = self.levels();
        for (b, _) in self.bases.iter().enumerate() {
            for &t in &self.transforms {
                if self.level_of(b, t) == level % levels {
                    return Ok((b, t));
                }
            }
        }
        Err(Error::Uncoverable { level, levels })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub pattern: String,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BomLine {
    pub pattern_id: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyMap {
    pub catalog: PatternCatalog,
    pub m_y: usize,
    pub m_z: usize,
    /// `m_y * m_z` placements, y-outer.
    pub placements: Vec<Placement>,
    pub bom: Vec<BomLine>,
}

/// Maps every element to its pattern and transform.
pub fn assemble(q: &QuantizedSolution, catalog: &PatternCatalog) -> Result<AssemblyMap> {
    if catalog.bits != q.bits {
        // levels of another grid cannot be matched one to one
        let level = q.levels.first().copied().unwrap_or(0);
        return Err(Error::Uncoverable {
            level,
            levels: catalog.levels(),
        });
    }
    let mut counts = vec![0usize; catalog.bases.len()];
    let placements = q
        .levels
        .iter()
        .map(|&k| {
            let (b, t) = catalog.cover(k)?;
            counts[b] += 1;
            Ok(Placement {
                pattern: catalog.bases[b].id.clone(),
                transform: t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bom = catalog
        .bases
        .iter()
        .zip(counts)
        .map(|(b, count)| BomLine {
            pattern_id: b.id.clone(),
            count,
        })
        .collect();
    Ok(AssemblyMap {
        catalog: catalog.clone(),
        m_y: q.m_y,
        m_z: q.m_z,
        placements,
        bom,
    })
}

impl AssemblyMap {
    /// Grid index of every element, recomputed from the placements.
    pub fn reconstruct_levels(&self) -> Result<Vec<u32>> {
        self.placements
            .iter()
            .map(|p| {
                let b = self
                    .catalog
                    .bases
                    .iter()
                    .position(|x| x.id == p.pattern)
                    .ok_or_else(|| Error::Parse(format!("unknown pattern '{}'", p.pattern)))?;
                if !self.catalog.transforms.contains(&p.transform) {
                    return Err(Error::Parse(format!("transform '{}' not in the catalog", p.transform)));
                }
                Ok(self.catalog.level_of(b, p.transform))
            })
            .collect()
    }

    /// Element phases recomputed from the placements.
    pub fn reconstruct(&self) -> Result<Vec<f64>> {
        Ok(self
            .reconstruct_levels()?
            .into_iter()
            .map(|k| grid_phase(k, self.catalog.bits))
            .collect())
    }

    pub fn to_file(&self) -> AssemblyFile {
        AssemblyFile {
            format: ASSEMBLY_FORMAT.into(),
            version: 1,
            ordering: "y_outer_row_major".into(),
            m_y: self.m_y,
            m_z: self.m_z,
            catalog: self.catalog.clone(),
            grid: self.placements.chunks(self.m_z.max(1)).map(|r| r.to_vec()).collect(),
            bom: self.bom.clone(),
        }
    }

    pub fn from_file(file: AssemblyFile) -> Result<Self> {
        if file.format != ASSEMBLY_FORMAT {
            return Err(Error::Parse(format!("unknown assembly format '{}'", file.format)));
        }
        if file.grid.len() != file.m_y || file.grid.iter().any(|r| r.len() != file.m_z) {
            return Err(Error::Dimension {
                expected: file.m_y * file.m_z,
                got: file.grid.iter().map(Vec::len).sum(),
            });
        }
        Ok(Self {
            catalog: file.catalog,
            m_y: file.m_y,
            m_z: file.m_z,
            placements: file.grid.into_iter().flatten().collect(),
            bom: file.bom,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn write_bom_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for line in &self.bom {
            w.serialize(line)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const ASSEMBLY_FORMAT: &str = "qsirs-assembly";

/// On-disk form of [`AssemblyMap`]: `grid[y][z]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssemblyFile {
    pub format: String,
    pub version: u32,
    pub ordering: String,
    pub m_y: usize,
    pub m_z: usize,
    pub catalog: PatternCatalog,
    pub grid: Vec<Vec<Placement>>,
    pub bom: Vec<BomLine>,
}

pub fn read_bom_csv(path: impl AsRef<Path>) -> Result<Vec<BomLine>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<BomLine>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rounding_examples() {
        assert_eq!(quantize_phase(0.3 * PI, 2), 1);
        assert_eq!(quantize_phase(0.0, 2), 0);
        // midpoint between levels 0 and 1 goes down
        assert_eq!(quantize_phase(PI / 4.0, 2), 0);
        assert_eq!(quantize_phase(3.0 * PI / 4.0, 2), 1);
        // wraps to level 0 near 2 pi and for negative input
        assert_eq!(quantize_phase(TAU - 0.1, 2), 0);
        assert_eq!(quantize_phase(-PI / 2.0, 2), 3);
        assert_eq!(quantize_phase(PI, 1), 1);
    }

    #[test]
    fn rounding_error_bound() {
        for bits in 1..=4 {
            for i in 0..1000 {
                let p = -7.0 + 14.0 * i as f64 / 999.0;
                let k = quantize_phase(p, bits);
                let d = (grid_phase(k, bits) - p).rem_euclid(TAU);
                let d = d.min(TAU - d);
                assert!(d <= PI / (1u32 << bits) as f64 + 1e-12, "bits {bits} phase {p}");
            }
        }
    }

    #[test]
    fn catalog_counts() {
        let c = build_catalog(2, TransformSet::MirrorOnly).unwrap();
        assert_eq!(c.bases.len(), 2);
        assert_eq!(c.bases[0].phase_rad, 0.0);
        assert!((c.bases[1].phase_rad - PI / 2.0).abs() < 1e-15);
        assert_eq!(c.level_of(0, Transform::Mirror), 2);
        assert_eq!(c.level_of(1, Transform::Mirror), 3);

        assert_eq!(build_catalog(1, TransformSet::MirrorOnly).unwrap().bases.len(), 1);
        let c = build_catalog(1, TransformSet::MirrorRotation).unwrap();
        assert_eq!(c.bases.len(), 1);
        assert_eq!(c.transforms, vec![Transform::Identity, Transform::Mirror]);

        let c = build_catalog(3, TransformSet::MirrorRotation).unwrap();
        assert_eq!(c.bases.len(), 2);
        assert_eq!(build_catalog(2, TransformSet::MirrorRotation).unwrap().bases.len(), 1);
        assert_eq!(build_catalog(4, TransformSet::MirrorOnly).unwrap().bases.len(), 8);

        assert!(matches!(
            build_catalog(0, TransformSet::MirrorOnly),
            Err(Error::UnsupportedBits(0))
        ));
        assert!(matches!(
            build_catalog(5, TransformSet::MirrorOnly),
            Err(Error::UnsupportedBits(5))
        ));
    }

    #[test]
    fn catalog_covers_each_level_once() {
        for bits in 1..=4 {
            for set in [TransformSet::MirrorOnly, TransformSet::MirrorRotation] {
                let c = build_catalog(bits, set).unwrap();
                let mut seen = vec![0; c.levels() as usize];
                for b in 0..c.bases.len() {
                    for &t in &c.transforms {
                        seen[c.level_of(b, t) as usize] += 1;
                    }
                }
                assert!(seen.iter().all(|&n| n == 1), "bits {bits} {set:?}: {seen:?}");
            }
        }
    }

    fn quantized(levels: Vec<u32>, bits: u32, m_y: usize, m_z: usize) -> QuantizedSolution {
        QuantizedSolution {
            bits,
            levels,
            m_y,
            m_z,
            parent_method: Method::Ao,
            parent_rho_db: 0.0,
            rho_db: 0.0,
        }
    }

    #[test]
    fn assembly_examples() {
        let c = build_catalog(2, TransformSet::MirrorOnly).unwrap();
        let a = assemble(&quantized(vec![0; 6], 2, 2, 3), &c).unwrap();
        assert_eq!(a.bom[0].count, 6);
        assert_eq!(a.bom[1].count, 0);
        assert!(a.placements.iter().all(|p| p.transform == Transform::Identity));

        let checker: Vec<u32> = (0..16).map(|i| if (i / 4 + i % 4) % 2 == 0 { 0 } else { 2 }).collect();
        let a = assemble(&quantized(checker.clone(), 2, 4, 4), &c).unwrap();
        assert!(a.placements.iter().all(|p| p.pattern == "pattern_a"));
        for (p, k) in a.placements.iter().zip(&checker) {
            let want = if *k == 0 {
                Transform::Identity
            } else {
                Transform::Mirror
            };
            assert_eq!(p.transform, want);
        }
        assert_eq!(a.reconstruct_levels().unwrap(), checker);
    }

    #[test]
    fn bits_mismatch_is_uncoverable() {
        let c = build_catalog(1, TransformSet::MirrorOnly).unwrap();
        let r = assemble(&quantized(vec![1, 3], 2, 1, 2), &c);
        assert!(matches!(r, Err(Error::Uncoverable { .. })));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = build_catalog(3, TransformSet::MirrorRotation).unwrap();
        let levels: Vec<u32> = (0..12).map(|i| (i * 5 % 8) as u32).collect();
        let a = assemble(&quantized(levels.clone(), 3, 3, 4), &c).unwrap();
        let path = dir.path().join("assembly.json");
        a.write_json(&path).unwrap();
        let back = AssemblyMap::read_json(&path).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.reconstruct_levels().unwrap(), levels);

        let bom = dir.path().join("bom.csv");
        a.write_bom_csv(&bom).unwrap();
        let text = std::fs::read_to_string(&bom).unwrap();
        assert!(text.starts_with("pattern_id,count\n"));
        let lines = read_bom_csv(&bom).unwrap();
        assert_eq!(lines.iter().map(|l| l.count).sum::<usize>(), 12);
    }

    #[test]
    fn quantized_json_and_beam() {
        let q = quantized(vec![0, 1, 2, 3, 3, 1], 2, 2, 3);
        let back: QuantizedSolution = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
        assert_eq!(back, q);
        let b = q.to_beam();
        assert_eq!(b.w.len(), 6);
        assert!((b.w[1] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        assert!((b.w[2] + Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert_eq!(b.rho_db.to_bits(), q.rho_db.to_bits());
    }
}
