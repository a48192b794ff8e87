//! Gaussian-cluster stand-in for LLM hidden states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::BenchError;
use crate::decoder::Query;
use crate::evaluation::EvalSample;
use crate::memory::{build_memory, MemoryRecord, MemorySet};

/// Centroids used to estimate the mean pairwise separation.
const SEPARATION_SAMPLE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Per-component standard deviation.
    Absolute(f32),
    /// Standard deviation as a fraction of the mean pairwise centroid distance.
    RelativeToSeparation(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthSpec {
    pub num_items: usize,
    pub dim: usize,
    pub samples_per_item: usize,
    pub noise: Noise,
    pub query_count: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.num_items < 2 {
            return Err(BenchError::Spec("num_items must be at least 2".into()));
        }
        if self.dim < 2 {
            return Err(BenchError::Spec("dim must be at least 2".into()));
        }
        if self.samples_per_item < 1 {
            return Err(BenchError::Spec(
                "samples_per_item must be at least 1".into(),
            ));
        }
        let sigma = match self.noise {
            Noise::Absolute(s) | Noise::RelativeToSeparation(s) => s,
        };
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(BenchError::Spec(
                "noise must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub records: Vec<MemoryRecord>,
    pub memory: MemorySet,
    pub samples: Vec<EvalSample>,
    /// `num_items x dim`, row-major.
    pub centroids: Vec<f32>,
    pub separation: f64,
    pub sigma: f64,
}

pub fn item_key(v: usize) -> String {
    format!("item{v}")
}

/// Mean Euclidean distance over pairs of the first few hundred centroids.
fn mean_separation(centroids: &[f32], dim: usize) -> f64 {
    let n = (centroids.len() / dim).min(SEPARATION_SAMPLE);
    let row = |i: usize| &centroids[i * dim..(i + 1) * dim];
    let (mut sum, mut pairs) = (0.0f64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let sq: f64 = row(i)
                .iter()
                .zip(row(j))
                .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
                .sum();
            sum += sq.sqrt();
            pairs += 1;
        }
    }
    sum / pairs as f64
}

fn noisy(rng: &mut ChaCha8Rng, centroid: &[f32], sigma: f64) -> Vec<f32> {
    if sigma == 0.0 {
        return centroid.to_vec();
    }
    centroid
        .iter()
        .map(|&c| {
            let z: f64 = rng.sample(StandardNormal);
            (f64::from(c) + sigma * z) as f32
        })
        .collect()
}

/// Item centroids uniform in the unit hypercube; memory rows and queries are
/// centroids plus isotropic Gaussian noise. Deterministic for a given seed.
pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthData, BenchError> {
    spec.validate()?;
    let SynthSpec {
        num_items,
        dim,
        samples_per_item,
        ..
    } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids: Vec<f32> = (0..num_items * dim).map(|_| rng.random::<f32>()).collect();
    let separation = mean_separation(&centroids, dim);
    let sigma = match spec.noise {
        Noise::Absolute(s) => f64::from(s),
        Noise::RelativeToSeparation(r) => f64::from(r) * separation,
    };
    let centroid = |v: usize| &centroids[v * dim..(v + 1) * dim];

    let mut records = Vec::with_capacity(num_items * samples_per_item);
    for s in 0..samples_per_item {
        for v in 0..num_items {
            records.push(MemoryRecord {
                sample_id: (s * num_items + v) as u64,
                item: item_key(v),
                vector: noisy(&mut rng, centroid(v), sigma),
            });
        }
    }
    let samples = (0..spec.query_count)
        .map(|i| {
            let v = rng.random_range(0..num_items);
            EvalSample {
                query: Query {
                    query_id: i as u64,
                    vector: noisy(&mut rng, centroid(v), sigma),
                },
                truth: item_key(v),
            }
        })
        .collect();
    let memory = build_memory(&records, dim).expect("generated records are valid");
    Ok(SynthData {
        records,
        memory,
        samples,
        centroids,
        separation,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::global_representations;
    use crate::decoder::DecodeConfig;
    use crate::evaluation::evaluate;
    use crate::memory::write_memory;
    use crate::memory::Dtype;

    fn spec(noise: Noise) -> SynthSpec {
        SynthSpec {
            num_items: 30,
            dim: 8,
            samples_per_item: 4,
            noise,
            query_count: 50,
            seed: 42,
        }
    }

    #[test]
    fn zero_noise_rows_equal_centroids() {
        let d = synth_dataset(&spec(Noise::Absolute(0.0))).unwrap();
        for r in &d.records {
            let v: usize = r.item[4..].parse().unwrap();
            assert_eq!(r.vector, &d.centroids[v * 8..(v + 1) * 8]);
        }
        let g = global_representations(&d.memory).unwrap();
        let rep = evaluate(
            &d.samples,
            &d.memory,
            &g,
            &DecodeConfig::global(1),
            &[1],
            "all",
        )
        .unwrap();
        assert_eq!(rep.at(1).unwrap().recall, 1.0);
    }

    #[test]
    fn deterministic_bytes() {
        let a = synth_dataset(&spec(Noise::RelativeToSeparation(0.1))).unwrap();
        let b = synth_dataset(&spec(Noise::RelativeToSeparation(0.1))).unwrap();
        assert_eq!(
            write_memory(&a.memory, Vec::new(), Dtype::F32).unwrap(),
            write_memory(&b.memory, Vec::new(), Dtype::F32).unwrap()
        );
        assert_eq!(a.samples, b.samples);
        assert!((a.sigma / a.separation - 0.1).abs() < 1e-7);
        assert_eq!(a.memory.len(), 120);
        assert_eq!(a.memory.catalog().len(), 30);
    }

    #[test]
    fn separation_near_cube_expectation() {
        let d = synth_dataset(&SynthSpec {
            num_items: 300,
            dim: 64,
            ..spec(Noise::Absolute(0.0))
        })
        .unwrap();
        // mean distance of uniform points in [0,1]^64 is close to sqrt(64/6)
        assert!((d.separation - (64.0f64 / 6.0).sqrt()).abs() < 0.1);
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(synth_dataset(&SynthSpec {
            num_items: 1,
            ..spec(Noise::Absolute(0.0))
        })
        .is_err());
        assert!(synth_dataset(&SynthSpec {
            dim: 1,
            ..spec(Noise::Absolute(0.0))
        })
        .is_err());
        assert!(synth_dataset(&spec(Noise::Absolute(-1.0))).is_err());
    }
}
