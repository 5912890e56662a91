use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bsr::BlockSparseMatrix;
use super::kernel::{dense_gemm, spmm, GemmOutput};
use super::quant::{Int8Matrix, QuantParams};
use crate::error::{Error, Result};

/// Kernel under measurement.
#[derive(Debug, Clone, Copy)]
pub enum BenchKernel<'a> {
    Dense(&'a Int8Matrix),
    Sparse(&'a BlockSparseMatrix),
}

impl BenchKernel<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            BenchKernel::Dense(_) => "dense",
            BenchKernel::Sparse(_) => "bsr1x4",
        }
    }

    fn shape(&self) -> (usize, usize) {
        match self {
            BenchKernel::Dense(m) => (m.rows, m.cols),
            BenchKernel::Sparse(m) => (m.rows, m.cols),
        }
    }

    fn sparsity(&self) -> f64 {
        match self {
            BenchKernel::Dense(_) => 0.0,
            BenchKernel::Sparse(m) => m.block_sparsity(),
        }
    }

    pub fn run(&self, x: &[i8], batch: usize, params: &QuantParams) -> Result<GemmOutput> {
        match self {
            BenchKernel::Dense(m) => dense_gemm(m, x, batch, params),
            BenchKernel::Sparse(m) => spmm(m, x, batch, params),
        }
    }
}

pub const CSV_HEADER: &str = "kernel,rows,cols,batch,sparsity,mac_count,median_ns,mad_ns";

/// Timing summary of one kernel. `mac_count` comes from the kernel's own
/// instrumentation and does not depend on timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub kernel: String,
    pub rows: usize,
    pub cols: usize,
    pub batch: usize,
    pub sparsity: f64,
    pub warmup_iters: usize,
    pub measure_iters: usize,
    pub median_ns: f64,
    pub mad_ns: f64,
    pub mac_count: u64,
}

impl LatencyStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.4},{},{:.0},{:.0}",
            self.kernel, self.rows, self.cols, self.batch, self.sparsity, self.mac_count, self.median_ns, self.mad_ns
        )
    }
}

/// Median and median absolute deviation. Even counts average the two middle
/// values.
pub fn median_and_mad(samples: &[f64]) -> (f64, f64) {
    fn median(v: &mut [f64]) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            0.0
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    }
    let mut v = samples.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = samples.iter().map(|s| (s - med).abs()).collect();
    (med, median(&mut dev))
}

/// Runs `warmup_iters` untimed and `measure_iters` timed calls of `kernel`
/// on a single thread pinned to one core.
///
/// Not meant to run concurrently with itself: parallel runs contend for the
/// same core.
pub fn benchmark(
    kernel: BenchKernel<'_>,
    x: &[i8],
    batch: usize,
    params: &QuantParams,
    warmup_iters: usize,
    measure_iters: usize,
) -> Result<LatencyStats> {
    if measure_iters == 0 {
        return Err(Error::Config("measure_iters must be at least 1".into()));
    }
    // Validate shapes once outside the timed loop.
    let probe = kernel.run(x, batch, params)?;
    let mac_count = probe.mac_count;

    let samples = std::thread::scope(|scope| {
        scope
            .spawn(|| {
                if let Some(core) = core_affinity::get_core_ids().and_then(|ids| ids.into_iter().next()) {
                    core_affinity::set_for_current(core);
                }
                for _ in 0..warmup_iters {
                    black_box(kernel.run(black_box(x), batch, params).expect("validated"));
                }
                let mut samples = Vec::with_capacity(measure_iters);
                for _ in 0..measure_iters {
                    let start = Instant::now();
                    let out = kernel.run(black_box(x), batch, params).expect("validated");
                    samples.push(start.elapsed().as_nanos() as f64);
                    debug_assert_eq!(out.mac_count, mac_count);
                    black_box(out);
                }
                samples
            })
            .join()
            .expect("benchmark thread panicked")
    });

    let (median_ns, mad_ns) = median_and_mad(&samples);
    let (rows, cols) = kernel.shape();
    Ok(LatencyStats {
        kernel: kernel.name().to_string(),
        rows,
        cols,
        batch,
        sparsity: kernel.sparsity(),
        warmup_iters,
        measure_iters,
        median_ns,
        mad_ns,
        mac_count,
    })
}
