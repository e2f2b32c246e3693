//! Chunked replica engine.
//!
//! Samples are grouped into fixed chunks, each drawn from its own child
//! stream, so results do not depend on the number of worker threads. Chunk
//! partial sums are reduced sequentially in chunk order with compensated
//! summation, and assigned to batches for the batch-means error bar.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tags, RandomStream, StreamRng};

/// Default number of samples per chunk.
pub const CHUNK: u64 = 1024;
/// Default number of batches for batch means.
pub const DEFAULT_BATCHES: usize = 64;

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Count, sum and sum of squares of one scalar output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub sum: CompensatedSum,
    pub sum_sq: CompensatedSum,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum.value() / self.count as f64
        }
    }

    /// Classical i.i.d. standard error of the mean.
    pub fn iid_stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.mean();
        let var = ((self.sum_sq.value() - n * m * m) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Monte Carlo mean with batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    /// Sum of the sampled values (the hit count for indicators).
    pub total: f64,
    pub n_batches: usize,
}

impl Estimate {
    pub fn exact(value: f64, n: u64) -> Self {
        Self { mean: value, stderr: 0.0, n, total: value * n as f64, n_batches: 0 }
    }

    /// Rule-of-three upper bound used when an indicator estimate is zero.
    pub fn zero_hit_upper(&self) -> Option<f64> {
        (self.total == 0.0 && self.n > 0).then(|| 3.0 / self.n as f64)
    }

    pub fn z_score(&self, target: f64) -> f64 {
        if self.stderr > 0.0 {
            (self.mean - target) / self.stderr
        } else if self.mean == target {
            0.0
        } else {
            f64::INFINITY.copysign(self.mean - target)
        }
    }
}

/// Reduces batch partial sums into an [`Estimate`].
///
/// The standard error is the ratio-estimator form
/// `B/(B-1) * sum_b (S_b - m n_b)^2 / n^2`, which reduces to the usual
/// batch-means formula for equal batch sizes.
pub fn estimate_from_batches(batches: &[Moments]) -> Estimate {
    let mut all = Moments::default();
    for b in batches {
        all.merge(b);
    }
    let n = all.count;
    let mean = all.mean();
    let used: Vec<&Moments> = batches.iter().filter(|b| b.count > 0).collect();
    let nb = used.len();
    let stderr = if nb >= 2 && n > 0 {
        let mut acc = CompensatedSum::default();
        for b in &used {
            let d = b.sum.value() - mean * b.count as f64;
            acc.add(d * d);
        }
        let nf = n as f64;
        (nb as f64 / (nb as f64 - 1.0) * acc.value() / (nf * nf)).sqrt()
    } else {
        0.0
    };
    Estimate { mean, stderr, n, total: all.sum.value(), n_batches: nb }
}

/// How a run splits its samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub n: u64,
    pub chunk: u64,
    pub n_chunks: u64,
    pub n_batches: usize,
}

impl ChunkPlan {
    /// Chunks of at most [`CHUNK`] samples, small enough that every batch
    /// holds at least one chunk.
    pub fn new(n: u64, n_batches: usize) -> Result<Self> {
        if n_batches < 8 {
            return Err(Error::param("n_batches", format!("need at least 8, got {n_batches}")));
        }
        if n < 2 * n_batches as u64 {
            return Err(Error::InsufficientData(format!(
                "{n} samples cannot fill {n_batches} batches with at least 2 samples each"
            )));
        }
        let chunk = CHUNK.min(n / n_batches as u64).max(1);
        let n_chunks = n.div_ceil(chunk);
        Ok(Self { n, chunk, n_chunks, n_batches })
    }

    pub fn chunk_len(&self, c: u64) -> u64 {
        if c + 1 == self.n_chunks {
            self.n - c * self.chunk
        } else {
            self.chunk
        }
    }

    pub fn batch_of(&self, c: u64) -> usize {
        ((c as u128 * self.n_batches as u128) / self.n_chunks as u128) as usize
    }
}

/// Per-chunk partial sums of a `dim`-dimensional output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSums {
    pub chunk: u64,
    pub moments: Vec<Moments>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    stream: RandomStream,
    plan: ChunkPlan,
    dim: usize,
    done: Vec<ChunkSums>,
}

/// Runs `n` replicas of a vector-valued sampler.
///
/// `sample(rng, out)` writes one replica into `out` (length `dim`).
/// Returns one [`Estimate`] per component.
pub fn run_vector<F>(n: u64, dim: usize, n_batches: usize, stream: RandomStream, sample: F) -> Result<Vec<Estimate>>
where
    F: Fn(&mut StreamRng, &mut [f64]) + Sync,
{
    run_vector_checkpointed(n, dim, n_batches, stream, None, sample)
}

/// As [`run_vector`], optionally persisting chunk partial sums to
/// `checkpoint` so an interrupted run resumes with identical results.
pub fn run_vector_checkpointed<F>(
    n: u64,
    dim: usize,
    n_batches: usize,
    stream: RandomStream,
    checkpoint: Option<&Path>,
    sample: F,
) -> Result<Vec<Estimate>>
where
    F: Fn(&mut StreamRng, &mut [f64]) + Sync,
{
    let plan = ChunkPlan::new(n, n_batches)?;
    let mut done: Vec<ChunkSums> = Vec::new();
    if let Some(path) = checkpoint {
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Config(format!("checkpoint {}: {e}", path.display())))?;
            if cp.stream != stream || cp.plan != plan || cp.dim != dim {
                return Err(Error::Config(format!("checkpoint {} belongs to a different run", path.display())));
            }
            done = cp.done;
        }
    }

    let run_chunk = |c: u64| -> ChunkSums {
        let mut rng = stream.child(tags::CHUNK, c).rng();
        let mut out = vec![0.0; dim];
        let mut moments = vec![Moments::default(); dim];
        for _ in 0..plan.chunk_len(c) {
            out.iter_mut().for_each(|v| *v = 0.0);
            sample(&mut rng, &mut out);
            for (m, &v) in moments.iter_mut().zip(&out) {
                m.push(v);
            }
        }
        ChunkSums { chunk: c, moments }
    };

    let block = match checkpoint {
        Some(_) => 256,
        None => plan.n_chunks,
    };
    let mut next = done.len() as u64;
    while next < plan.n_chunks {
        let end = (next + block).min(plan.n_chunks);
        let part: Vec<ChunkSums> = (next..end).into_par_iter().map(run_chunk).collect();
        done.extend(part);
        next = end;
        if let Some(path) = checkpoint {
            let cp = Checkpoint { stream, plan, dim, done: done.clone() };
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, serde_json::to_vec(&cp).map_err(|e| Error::Io(e.to_string()))?)?;
            std::fs::rename(&tmp, path)?;
        }
    }

    let mut batches = vec![vec![Moments::default(); plan.n_batches]; dim];
    for cs in &done {
        let b = plan.batch_of(cs.chunk);
        for (d, m) in cs.moments.iter().enumerate() {
            batches[d][b].merge(m);
        }
    }
    Ok(batches.iter().map(|b| estimate_from_batches(b)).collect())
}

/// Scalar convenience wrapper around [`run_vector`].
pub fn run_scalar<F>(n: u64, stream: RandomStream, sample: F) -> Result<Estimate>
where
    F: Fn(&mut StreamRng) -> f64 + Sync,
{
    let v = run_vector(n, 1, DEFAULT_BATCHES, stream, |rng, out| out[0] = sample(rng))?;
    Ok(v[0])
}

/// Maps `f` over `0..n` in parallel, each index with its own child stream,
/// returning results in index order.
pub fn map_indexed<T, F>(n: u64, stream: RandomStream, tag: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut StreamRng) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(tag, i).rng();
            f(i, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let stream = RandomStream::new(3, 9);
        let f = |rng: &mut StreamRng| rng.random::<f64>();
        let a = run_scalar(50_000, stream, f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| run_scalar(50_000, stream, f).unwrap());
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.json");
        let stream = RandomStream::new(1, 2);
        let f = |rng: &mut StreamRng, out: &mut [f64]| {
            out[0] = rng.random::<f64>();
            out[1] = out[0] * out[0];
        };
        let full = run_vector(600_000, 2, 32, stream, f).unwrap();
        let first = run_vector_checkpointed(600_000, 2, 32, stream, Some(&path), f).unwrap();
        // Truncate the checkpoint to simulate an interruption, then resume.
        let mut cp: Checkpoint = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        cp.done.truncate(100);
        std::fs::write(&path, serde_json::to_vec(&cp).unwrap()).unwrap();
        let resumed = run_vector_checkpointed(600_000, 2, 32, stream, Some(&path), f).unwrap();
        assert_eq!(full, first);
        assert_eq!(full, resumed);
    }

    #[test]
    fn plan_rejects_too_few_batches_or_samples() {
        assert!(ChunkPlan::new(1000, 4).is_err());
        assert!(ChunkPlan::new(10, 8).is_err());
        let p = ChunkPlan::new(100, 8).unwrap();
        let total: u64 = (0..p.n_chunks).map(|c| p.chunk_len(c)).sum();
        assert_eq!(total, 100);
        assert!((0..p.n_chunks).all(|c| p.batch_of(c) < 8));
    }
}
