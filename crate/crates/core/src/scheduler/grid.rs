use serde::{Deserialize, Serialize};

use super::queue::Pending;
use crate::cost_model::{BatchShape, KernelKind};

pub const MB: u64 = 1_000_000;

/// Captured execution shapes: every (length, depth) pair of the two sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphGrid {
    pub lengths: Vec<u32>,
    pub depths: Vec<u32>,
    pub mem_per_graph: u64,
    pub mem_budget: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    Qwen7B,
    Qwen14B,
    Qwen32B,
}

impl ModelPreset {
    /// Measured size of one captured prefill graph.
    pub fn mem_per_graph(&self) -> u64 {
        match self {
            ModelPreset::Qwen7B => 228 * MB,
            ModelPreset::Qwen14B => 240 * MB,
            ModelPreset::Qwen32B => 277 * MB,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "7b" => Some(ModelPreset::Qwen7B),
            "14b" => Some(ModelPreset::Qwen14B),
            "32b" => Some(ModelPreset::Qwen32B),
            _ => None,
        }
    }
}

impl Default for GraphGrid {
    fn default() -> Self {
        Self::for_preset(ModelPreset::Qwen32B)
    }
}

impl GraphGrid {
    pub fn for_preset(preset: ModelPreset) -> Self {
        Self {
            lengths: vec![8, 16, 32, 64, 128, 256],
            depths: vec![1, 2, 4, 8, 16, 32, 64],
            mem_per_graph: preset.mem_per_graph(),
            mem_budget: 16_000 * MB,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let increasing = |v: &[u32]| !v.is_empty() && v[0] >= 1 && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&self.lengths) {
            return Err("grid lengths must be non-empty, >= 1 and strictly increasing".into());
        }
        if !increasing(&self.depths) {
            return Err("grid depths must be non-empty, >= 1 and strictly increasing".into());
        }
        if self.mem_per_graph == 0 {
            return Err("mem_per_graph must be > 0".into());
        }
        Ok(())
    }

    pub fn max_length(&self) -> u32 {
        *self.lengths.last().expect("validated grid")
    }

    pub fn max_depth(&self) -> u32 {
        *self.depths.last().expect("validated grid")
    }

    /// Whether captured graphs fit the memory budget at all.
    pub fn graphs_fit(&self) -> bool {
        self.mem_per_graph <= self.mem_budget
    }

    /// Index of the bucket a request of `tokens` lands in; the overflow
    /// bucket (`lengths.len()`) holds everything longer than the grid.
    pub fn bucket_index(&self, tokens: u32) -> usize {
        self.lengths.partition_point(|&l| l < tokens)
    }
}

/// Smallest captured length `>= tokens`, if any.
pub fn bucket_of(tokens: u32, grid: &GraphGrid) -> Option<u32> {
    grid.lengths.get(grid.bucket_index(tokens)).copied()
}

/// Captured shape covering `members` with the least padded-token waste.
///
/// Ties go to the smaller depth, then the smaller length. `None` means no
/// captured shape qualifies and the batch must use the standard kernel.
pub fn nearest_graph(members: &[Pending], grid: &GraphGrid) -> Option<BatchShape> {
    if members.is_empty() || !grid.graphs_fit() {
        return None;
    }
    let max_len = members.iter().map(|m| m.new_tokens).max()?;
    let count = members.len() as u64;
    let real: u64 = members.iter().map(|m| m.new_tokens as u64).sum();
    let mut best: Option<(u64, u32, u32)> = None;
    for &depth in grid.depths.iter().filter(|&&d| d as u64 >= count) {
        for &len in grid.lengths.iter().filter(|&&l| l >= max_len) {
            let waste = len as u64 * depth as u64 - real;
            let key = (waste, depth, len);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
    }
    best.map(|(_, depth, l_pad)| BatchShape {
        l_pad,
        depth,
        kind: KernelKind::Graph,
    })
}

/// Shape used when no graph qualifies: rows padded to the longest member.
pub fn standard_shape(members: &[Pending]) -> BatchShape {
    BatchShape {
        l_pad: members.iter().map(|m| m.new_tokens).max().unwrap_or(1).max(1),
        depth: members.len().max(1) as u32,
        kind: KernelKind::Standard,
    }
}

pub fn shape_for(members: &[Pending], grid: &GraphGrid) -> BatchShape {
    nearest_graph(members, grid).unwrap_or_else(|| standard_shape(members))
}
