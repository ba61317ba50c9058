//! Forward-pass interventions. Hooks compose; an empty spec is the identity.
//!
//! Application order at each site is fixed regardless of list order:
//! masks are modified before the softmax, temperature divides scores before
//! the softmax, freeze-from-cache replaces a computed quantity, clamps
//! override frozen patterns, and zero-head wins over everything downstream
//! of it.

use crate::data::{LABEL_POSITIONS, QUERY_POS, SEQ_LEN};
use crate::error::{Error, Result};

/// Which cached quantity a freeze restores in place of the live computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheComponent {
    Patterns,
    Keys,
    Queries,
    Values,
    HeadOutputs,
}

impl CacheComponent {
    pub const ALL: [CacheComponent; 5] = [
        CacheComponent::Patterns,
        CacheComponent::Keys,
        CacheComponent::Queries,
        CacheComponent::Values,
        CacheComponent::HeadOutputs,
    ];
}

/// Attention-edge families that can be blocked in a layer's mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeClass {
    /// Block every position from attending to its immediate predecessor.
    PrevToken,
}

#[derive(Clone, Debug)]
pub enum Hook {
    /// Zero a head's output contribution everywhere.
    ZeroHead { layer: usize, head: usize },
    /// Replace a head's attention pattern with fixed rows (row-stochastic on
    /// the causal support).
    ClampPattern { layer: usize, head: usize, rows: [[f64; SEQ_LEN]; SEQ_LEN] },
    /// Restore a cached quantity for every head of a layer.
    FreezeFromCache { layer: usize, component: CacheComponent },
    /// Divide a head's attention scores by `t` before the softmax, optionally
    /// restricting the query row's support to the label positions.
    Temperature { layer: usize, head: usize, t: f64, restrict_to_labels: bool },
    /// Remove an edge family from a layer's attention mask (all heads).
    BlockAttnEdge { layer: usize, edge: EdgeClass },
    /// Exclude the embedding contribution from the final-position readout.
    ZeroDirectPath,
    /// Exclude a layer's head contributions from the final readout while they
    /// still feed later layers normally.
    ZeroLayerReadout { layer: usize },
    /// Remove `src_layer` head outputs from the residual stream seen by
    /// `dst_layer` (composition block); the readout still includes them.
    BlockComposition { src_layer: usize, dst_layer: usize },
}

/// An ordered set of interventions applied during one forward pass.
#[derive(Clone, Debug, Default)]
pub struct HookSpec {
    pub hooks: Vec<Hook>,
}

impl HookSpec {
    pub fn none() -> Self {
        HookSpec { hooks: Vec::new() }
    }

    pub fn of(hooks: Vec<Hook>) -> Self {
        HookSpec { hooks }
    }

    pub fn push(&mut self, h: Hook) -> &mut Self {
        self.hooks.push(h);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.hooks.is_empty()
    }

    /// Freeze every component of every layer (identity when the cache comes
    /// from the same unhooked pass).
    pub fn freeze_all(num_layers: usize) -> Self {
        let mut hooks = Vec::new();
        for layer in 0..num_layers {
            for component in CacheComponent::ALL {
                hooks.push(Hook::FreezeFromCache { layer, component });
            }
        }
        HookSpec { hooks }
    }

    /// Zero every head of a layer.
    pub fn zero_layer(layer: usize, num_heads: usize) -> Vec<Hook> {
        (0..num_heads).map(|head| Hook::ZeroHead { layer, head }).collect()
    }

    pub fn needs_cache(&self) -> bool {
        self.hooks.iter().any(|h| matches!(h, Hook::FreezeFromCache { .. }))
    }

    pub fn zero_head_set(&self, layer: usize) -> Vec<usize> {
        self.hooks
            .iter()
            .filter_map(|h| match h {
                Hook::ZeroHead { layer: l, head } if *l == layer => Some(*head),
                _ => None,
            })
            .collect()
    }

    pub fn frozen(&self, layer: usize, component: CacheComponent) -> bool {
        self.hooks.iter().any(|h| {
            matches!(h, Hook::FreezeFromCache { layer: l, component: c }
                if *l == layer && *c == component)
        })
    }

    pub fn clamp_for(&self, layer: usize, head: usize) -> Option<&[[f64; SEQ_LEN]; SEQ_LEN]> {
        self.hooks.iter().find_map(|h| match h {
            Hook::ClampPattern { layer: l, head: hd, rows } if *l == layer && *hd == head => {
                Some(rows)
            }
            _ => None,
        })
    }

    pub fn temperature_for(&self, layer: usize, head: usize) -> Option<(f64, bool)> {
        self.hooks.iter().find_map(|h| match h {
            Hook::Temperature { layer: l, head: hd, t, restrict_to_labels }
                if *l == layer && *hd == head =>
            {
                Some((*t, *restrict_to_labels))
            }
            _ => None,
        })
    }

    pub fn blocked_edges(&self, layer: usize) -> Vec<EdgeClass> {
        self.hooks
            .iter()
            .filter_map(|h| match h {
                Hook::BlockAttnEdge { layer: l, edge } if *l == layer => Some(*edge),
                _ => None,
            })
            .collect()
    }

    pub fn zero_direct_path(&self) -> bool {
        self.hooks.iter().any(|h| matches!(h, Hook::ZeroDirectPath))
    }

    pub fn zero_layer_readout(&self, layer: usize) -> bool {
        self.hooks
            .iter()
            .any(|h| matches!(h, Hook::ZeroLayerReadout { layer: l } if *l == layer))
    }

    pub fn composition_blocked(&self, src_layer: usize, dst_layer: usize) -> bool {
        self.hooks.iter().any(|h| {
            matches!(h, Hook::BlockComposition { src_layer: s, dst_layer: d }
                if *s == src_layer && *d == dst_layer)
        })
    }

    /// Validate hook indices and clamp rows against a model shape.
    pub fn validate(&self, num_layers: usize, num_heads: usize) -> Result<()> {
        for h in &self.hooks {
            let (layer, head) = match h {
                Hook::ZeroHead { layer, head }
                | Hook::ClampPattern { layer, head, .. }
                | Hook::Temperature { layer, head, .. } => (*layer, Some(*head)),
                Hook::FreezeFromCache { layer, .. }
                | Hook::BlockAttnEdge { layer, .. }
                | Hook::ZeroLayerReadout { layer } => (*layer, None),
                Hook::BlockComposition { src_layer, dst_layer } => {
                    if *dst_layer <= *src_layer {
                        return Err(Error::invalid("composition block must point forward"));
                    }
                    (*dst_layer, None)
                }
                Hook::ZeroDirectPath => continue,
            };
            if layer >= num_layers {
                return Err(Error::invalid(format!("hook layer {layer} out of range")));
            }
            if let Some(hd) = head {
                if hd >= num_heads {
                    return Err(Error::invalid(format!("hook head {hd} out of range")));
                }
            }
            if let Hook::Temperature { t, .. } = h {
                if *t <= 0.0 {
                    return Err(Error::invalid(format!("temperature must be positive, got {t}")));
                }
            }
            if let Hook::ClampPattern { rows, .. } = h {
                for (i, row) in rows.iter().enumerate() {
                    let mut sum = 0.0;
                    for (j, &v) in row.iter().enumerate() {
                        if v < 0.0 {
                            return Err(Error::invalid("clamp rows must be nonnegative"));
                        }
                        if j > i && v != 0.0 {
                            return Err(Error::invalid("clamp rows must respect causality"));
                        }
                        sum += v;
                    }
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::invalid(format!(
                            "clamp row {i} sums to {sum}, expected 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Clamp rows for the query position: weight `w` on the correct-label
/// position, `1 - w` on the other label position, self-attention elsewhere.
pub fn clamp_rows_for_labels(
    correct_label_pos: usize,
    incorrect_label_pos: usize,
    w: f64,
) -> Result<[[f64; SEQ_LEN]; SEQ_LEN]> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("clamp weight must be in [0,1], got {w}")));
    }
    if !LABEL_POSITIONS.contains(&correct_label_pos)
        || !LABEL_POSITIONS.contains(&incorrect_label_pos)
        || correct_label_pos == incorrect_label_pos
    {
        return Err(Error::invalid("clamp needs the two distinct label positions"));
    }
    let mut rows = [[0.0; SEQ_LEN]; SEQ_LEN];
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] = 1.0; // self-attention filler for non-query rows
    }
    rows[QUERY_POS] = [0.0; SEQ_LEN];
    rows[QUERY_POS][correct_label_pos] = w;
    rows[QUERY_POS][incorrect_label_pos] = 1.0 - w;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_is_identity_marker() {
        let spec = HookSpec::none();
        assert!(spec.is_empty());
        assert!(!spec.needs_cache());
        assert!(spec.validate(2, 8).is_ok());
    }

    #[test]
    fn clamp_rows_validate() {
        let rows = clamp_rows_for_labels(1, 3, 0.7).unwrap();
        let spec = HookSpec::of(vec![Hook::ClampPattern { layer: 1, head: 0, rows }]);
        assert!(spec.validate(2, 8).is_ok());
        assert!(clamp_rows_for_labels(1, 3, 1.2).is_err());
        assert!(clamp_rows_for_labels(1, 1, 0.5).is_err());
    }

    #[test]
    fn bad_clamp_rows_rejected() {
        let mut rows = clamp_rows_for_labels(1, 3, 0.5).unwrap();
        rows[2][2] = 0.5; // row no longer sums to 1
        let spec = HookSpec::of(vec![Hook::ClampPattern { layer: 1, head: 0, rows }]);
        assert!(spec.validate(2, 8).is_err());

        let mut acausal = clamp_rows_for_labels(1, 3, 0.5).unwrap();
        acausal[0] = [0.0, 1.0, 0.0, 0.0, 0.0]; // attends forward
        let spec = HookSpec::of(vec![Hook::ClampPattern { layer: 1, head: 0, rows: acausal }]);
        assert!(spec.validate(2, 8).is_err());
    }

    #[test]
    fn out_of_range_hooks_rejected() {
        let spec = HookSpec::of(vec![Hook::ZeroHead { layer: 2, head: 0 }]);
        assert!(spec.validate(2, 8).is_err());
        let spec = HookSpec::of(vec![Hook::Temperature {
            layer: 0,
            head: 0,
            t: 0.0,
            restrict_to_labels: false,
        }]);
        assert!(spec.validate(2, 8).is_err());
    }
}
