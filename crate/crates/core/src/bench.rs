//! Forward-only latency of the NOAH head against the GAP head.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, HeadKind};
use crate::error::{Error, Result};
use crate::heads::{gap_forward, init_gap, init_noah, noah_forward};
use crate::tensor::{Dims, Matrix, Tensor};
use crate::train::{Model, Predictor};

pub const BENCH_CSV_HEADER: &str = "scope,batch,channels,height,width,categories,repeats,warmup,\
noah_mean_ms,noah_median_ms,noah_min_ms,noah_fps,gap_mean_ms,gap_median_ms,gap_min_ms,gap_fps,\
overhead_percent,noah_checksum,gap_checksum";

/// Wall time statistics over the timed runs, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    /// Images per second at the mean latency.
    pub fps: f64,
    /// Sum of the output logits, identical for every run.
    pub checksum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// `head` or `end_to_end`.
    pub scope: &'static str,
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub categories: usize,
    pub noah: Timing,
    pub gap: Timing,
}

impl Comparison {
    /// `(t_noah − t_gap) / t_gap · 100` on mean latency.
    pub fn overhead_percent(&self) -> f64 {
        (self.noah.mean - self.gap.mean) / self.gap.mean * 100.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub repeats: usize,
    pub warmup: usize,
    pub runs: Vec<Comparison>,
}

fn checksum(logits: &Matrix<f32>) -> f64 {
    logits.data().iter().map(|v| *v as f64).sum()
}

/// Run `f` `warmup` times untimed, then `repeats` times timed.
pub fn time_runs(
    warmup: usize,
    repeats: usize,
    batch: usize,
    mut f: impl FnMut() -> Result<f64>,
) -> Result<Timing> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(repeats);
    let mut sum = None;
    for _ in 0..repeats {
        let t = Instant::now();
        let c = f()?;
        times.push(t.elapsed().as_secs_f64().max(1e-9));
        match sum {
            None => sum = Some(c),
            Some(s) if s.to_bits() != c.to_bits() => {
                return Err(Error::Consistency(format!(
                    "output checksum changed between runs: {s} vs {c}"
                )))
            }
            _ => {}
        }
    }
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / repeats as f64;
    let median = if repeats % 2 == 1 {
        times[repeats / 2]
    } else {
        (times[repeats / 2 - 1] + times[repeats / 2]) / 2.0
    };
    Ok(Timing {
        mean,
        median,
        min: times[0],
        fps: batch as f64 / mean,
        checksum: sum.unwrap_or(0.0),
    })
}

fn uniform(seed: u64, dims: Dims) -> Result<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.len())
        .map(|_| rng.gen_range(0.0f32..1.0))
        .collect();
    Tensor::new(dims, data)
}

/// Head-isolated run on `[batch, height, width, channels]` seeded features,
/// then end-to-end on seeded images through the configured backbone.
pub fn run_bench(config: &ExperimentConfig) -> Result<BenchReport> {
    let b = &config.bench;
    if b.repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    if b.batch == 0 || b.height == 0 || b.width == 0 {
        return Err(Error::Config(
            "bench batch, height and width must be >= 1".into(),
        ));
    }
    let noah_cfg = &config.model.noah;
    let m = noah_cfg.categories;
    let seed = config.train.seed;

    let features = uniform(seed, Dims::new(b.batch, b.height, b.width, b.channels))?;
    let noah = init_noah::<f32>(noah_cfg, b.channels, seed)?;
    let gap = init_gap::<f32>(b.channels, m, noah_cfg.use_bias, seed)?;
    let head = Comparison {
        scope: "head",
        batch: b.batch,
        channels: b.channels,
        height: b.height,
        width: b.width,
        categories: m,
        noah: time_runs(b.warmup, b.repeats, b.batch, || {
            Ok(checksum(&noah_forward(&features, &noah)?.0))
        })?,
        gap: time_runs(b.warmup, b.repeats, b.batch, || {
            Ok(checksum(&gap_forward(&features, &gap)?.0))
        })?,
    };

    let size = config.data.image_size;
    let in_ch = config.model.backbone.in_channels;
    let images = uniform(seed.wrapping_add(1), Dims::new(b.batch, size, size, in_ch))?;
    let mut model_cfg = config.model.clone();
    model_cfg.head = HeadKind::Noah;
    let noah_model = Model::<f32>::init(&model_cfg, seed)?;
    model_cfg.head = HeadKind::Gap;
    let gap_model = Model::<f32>::init(&model_cfg, seed)?;
    let extent = model_cfg.backbone.output_extent(size);
    let end_to_end = Comparison {
        scope: "end_to_end",
        batch: b.batch,
        channels: model_cfg.backbone.out_channels(),
        height: extent,
        width: extent,
        categories: m,
        noah: time_runs(b.warmup, b.repeats, b.batch, || {
            Ok(checksum(&noah_model.logits(&images)?))
        })?,
        gap: time_runs(b.warmup, b.repeats, b.batch, || {
            Ok(checksum(&gap_model.logits(&images)?))
        })?,
    };
    Ok(BenchReport {
        repeats: b.repeats,
        warmup: b.warmup,
        runs: vec![head, end_to_end],
    })
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            writeln!(
                out,
                "{}: B={} C={} H={} W={} M={} ({} runs after {} warmup)",
                r.scope,
                r.batch,
                r.channels,
                r.height,
                r.width,
                r.categories,
                self.repeats,
                self.warmup
            )
            .unwrap();
            for (name, t) in [("noah", &r.noah), ("gap", &r.gap)] {
                writeln!(
                    out,
                    "  {name:<4} mean {:.3} ms  median {:.3} ms  min {:.3} ms  {:.1} fps  checksum {:.6e}",
                    t.mean * 1e3,
                    t.median * 1e3,
                    t.min * 1e3,
                    t.fps,
                    t.checksum
                )
                .unwrap();
            }
            writeln!(out, "  overhead_percent={:.2}", r.overhead_percent()).unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{BENCH_CSV_HEADER}\n");
        for r in &self.runs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.3},{:.6},{:.6},{:.6},{:.3},{:.4},{:e},{:e}",
                r.scope,
                r.batch,
                r.channels,
                r.height,
                r.width,
                r.categories,
                self.repeats,
                self.warmup,
                r.noah.mean * 1e3,
                r.noah.median * 1e3,
                r.noah.min * 1e3,
                r.noah.fps,
                r.gap.mean * 1e3,
                r.gap.median * 1e3,
                r.gap.min * 1e3,
                r.gap.fps,
                r.overhead_percent(),
                r.noah.checksum,
                r.gap.checksum
            )
            .unwrap();
        }
        out
    }
}
