//! Interleaving of per-attribute SVQ layers into LoD levels.

use serde::{Deserialize, Serialize};

use super::{Result, TilingError};
use crate::svq::{AttributeKind, AttributeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRef {
    pub attribute: AttributeKind,
    pub layer: usize,
}

/// `levels[0]` holds every base layer; each later level holds one
/// enhancement layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LodSchedule {
    pub levels: Vec<Vec<LayerRef>>,
}

/// Enhancement order used when no sweep is run.
fn default_rank(k: AttributeKind) -> u8 {
    match k {
        AttributeKind::Scale => 0,
        AttributeKind::RotImag => 1,
        AttributeKind::RotReal => 2,
        AttributeKind::Sh(l) => 3 + l,
        AttributeKind::Opacity => 7,
    }
}

fn base_level(specs: &[AttributeSpec]) -> Vec<LayerRef> {
    specs.iter().map(|s| LayerRef { attribute: s.kind, layer: 0 }).collect()
}

impl LodSchedule {
    /// All base layers, then every enhancement layer of scale, rot_imag,
    /// rot_real, SH levels 0..3 and opacity, in that order.
    pub fn default_for(specs: &[AttributeSpec]) -> Self {
        let mut order: Vec<&AttributeSpec> = specs.iter().collect();
        order.sort_by_key(|s| default_rank(s.kind));
        let mut levels = vec![base_level(specs)];
        for s in order {
            for layer in 1..s.layer_count() {
                levels.push(vec![LayerRef { attribute: s.kind, layer }]);
            }
        }
        Self { levels }
    }

    /// Greedy schedule: at each step adds the pending layer whose addition
    /// scores highest under `quality`, given layer counts per attribute in
    /// `specs` order. Ties go to the default order.
    pub fn sweep(specs: &[AttributeSpec], mut quality: impl FnMut(&[usize]) -> f64) -> Self {
        let mut current = vec![1usize; specs.len()];
        let mut levels = vec![base_level(specs)];
        let mut order: Vec<usize> = (0..specs.len()).collect();
        order.sort_by_key(|&i| default_rank(specs[i].kind));
        loop {
            let mut best: Option<(f64, usize)> = None;
            for &i in &order {
                if current[i] >= specs[i].layer_count() {
                    continue;
                }
                current[i] += 1;
                let q = quality(&current);
                current[i] -= 1;
                if best.is_none_or(|(bq, _)| q > bq) {
                    best = Some((q, i));
                }
            }
            let Some((_, i)) = best else { break };
            levels.push(vec![LayerRef { attribute: specs[i].kind, layer: current[i] }]);
            current[i] += 1;
        }
        Self { levels }
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Checks that every layer of every spec appears once, base layers sit
    /// in level 0, and each attribute's layers arrive in order.
    pub fn validate(&self, specs: &[AttributeSpec]) -> Result<()> {
        let bad = |m: String| Err(TilingError::Schedule(m));
        let Some(first) = self.levels.first() else { return bad("no levels".into()) };
        if first.iter().any(|r| r.layer != 0) || first.len() != specs.len() {
            return bad("level 0 must hold exactly the base layers".into());
        }
        let mut next = vec![0usize; specs.len()];
        for (l, level) in self.levels.iter().enumerate() {
            if level.is_empty() {
                return bad(format!("level {l} is empty"));
            }
            for r in level {
                let Some(i) = specs.iter().position(|s| s.kind == r.attribute) else {
                    return bad(format!("level {l}: unknown attribute {}", r.attribute));
                };
                if r.layer != next[i] {
                    return bad(format!("level {l}: {} layer {} out of order", r.attribute, r.layer));
                }
                next[i] += 1;
            }
        }
        for (s, &n) in specs.iter().zip(&next) {
            if n != s.layer_count() {
                return bad(format!("{}: {} of {} layers scheduled", s.kind, n, s.layer_count()));
            }
        }
        Ok(())
    }

    /// Layers available per attribute (in `specs` order) once levels
    /// `0..=lod` have arrived.
    pub fn layers_at(&self, specs: &[AttributeSpec], lod: usize) -> Vec<usize> {
        let mut n = vec![0usize; specs.len()];
        for level in &self.levels[..=lod.min(self.max_level())] {
            for r in level {
                if let Some(i) = specs.iter().position(|s| s.kind == r.attribute) {
                    n[i] += 1;
                }
            }
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_for_66_bits() {
        let specs = AttributeSpec::defaults(3);
        let s = LodSchedule::default_for(&specs);
        s.validate(&specs).unwrap();
        let enh: usize = specs.iter().map(|s| s.layer_count() - 1).sum();
        assert_eq!(s.level_count(), 1 + enh);
        assert_eq!(s.levels[1], vec![LayerRef { attribute: AttributeKind::Scale, layer: 1 }]);
        assert_eq!(s.levels[4][0].attribute, AttributeKind::RotImag);
        assert_eq!(s.levels.last().unwrap()[0].attribute, AttributeKind::Opacity);
        assert_eq!(s.layers_at(&specs, 0), vec![1; specs.len()]);
        assert_eq!(s.layers_at(&specs, s.max_level()), specs.iter().map(|s| s.layer_count()).collect::<Vec<_>>());
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"rot_imag\""));
        assert_eq!(serde_json::from_str::<LodSchedule>(&json).unwrap(), s);
    }

    #[test]
    fn invalid_schedules() {
        let specs = AttributeSpec::defaults(0);
        let mut s = LodSchedule::default_for(&specs);
        s.levels.swap(1, 2);
        assert!(s.validate(&specs).is_err());
        let mut s = LodSchedule::default_for(&specs);
        s.levels.pop();
        assert!(s.validate(&specs).is_err());
    }

    #[test]
    fn sweep_follows_gains_and_keeps_layer_order() {
        let specs = vec![
            AttributeSpec::new(AttributeKind::Scale, 8, 4),
            AttributeSpec::new(AttributeKind::Opacity, 8, 4),
        ];
        // opacity layers are worth more than scale layers
        let s = LodSchedule::sweep(&specs, |n| n[0] as f64 + 3.0 * n[1] as f64);
        s.validate(&specs).unwrap();
        let order: Vec<AttributeKind> = s.levels[1..].iter().map(|l| l[0].attribute).collect();
        assert_eq!(
            order,
            vec![AttributeKind::Opacity, AttributeKind::Opacity, AttributeKind::Scale, AttributeKind::Scale]
        );
    }
}
