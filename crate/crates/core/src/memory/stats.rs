use serde::Serialize;

use super::MemorySet;

/// Items whose frequency falls in `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrequencyBucket {
    pub lo: u32,
    pub hi: u32,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryStats {
    pub rows: usize,
    pub items: usize,
    pub dim: usize,
    pub freq_min: u32,
    pub freq_median: f64,
    pub freq_max: u32,
    pub freq_mean: f64,
    /// Power-of-two buckets: 1, 2-3, 4-7, ...
    pub histogram: Vec<FrequencyBucket>,
}

pub fn memory_stats(m: &MemorySet) -> MemoryStats {
    let mut freq = m.catalog().frequencies().to_vec();
    freq.sort_unstable();
    let items = freq.len();
    let (freq_min, freq_max, freq_median, freq_mean) = if items == 0 {
        (0, 0, 0.0, 0.0)
    } else {
        let median = if items % 2 == 1 {
            f64::from(freq[items / 2])
        } else {
            (f64::from(freq[items / 2 - 1]) + f64::from(freq[items / 2])) / 2.0
        };
        (
            freq[0],
            freq[items - 1],
            median,
            m.len() as f64 / items as f64,
        )
    };
    let mut histogram: Vec<FrequencyBucket> = Vec::new();
    for f in freq {
        let lo = 1u32 << (31 - f.leading_zeros());
        match histogram.last_mut() {
            Some(b) if b.lo == lo => b.items += 1,
            _ => histogram.push(FrequencyBucket {
                lo,
                hi: lo.saturating_mul(2) - 1,
                items: 1,
            }),
        }
    }
    MemoryStats {
        rows: m.len(),
        items,
        dim: m.dim(),
        freq_min,
        freq_median,
        freq_max,
        freq_mean,
        histogram,
    }
}
