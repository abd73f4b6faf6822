//! Randomized observation protocols.
//!
//! Both protocols draw an initial state uniformly on the unit sphere and a
//! noise vector from the chosen law. The hybrid protocol draws a lifted
//! edge uniformly and exposes its endpoints; the continuous protocol draws
//! a word uniformly from the length-`l` language and exposes only states.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvfmt::num;
use crate::graph::Word;
use crate::linalg::Vector;
use crate::system::{SwitchedSystem, SystemError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid sampling configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    System(#[from] SystemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLaw {
    /// Uniform on the closed ball of radius `W`.
    #[default]
    UniformBall,
    /// No noise regardless of `W`.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub horizon: usize,
    pub samples: usize,
    pub noise_radius: f64,
    pub seed: u64,
    pub noise_law: NoiseLaw,
}

impl SamplingConfig {
    pub fn new(
        horizon: usize,
        samples: usize,
        noise_radius: f64,
        seed: u64,
    ) -> Result<Self, SamplingError> {
        let cfg = SamplingConfig {
            horizon,
            samples,
            noise_radius,
            seed,
            noise_law: NoiseLaw::UniformBall,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.horizon == 0 {
            return Err(SamplingError::InvalidConfig("horizon must be >= 1"));
        }
        if self.samples == 0 {
            return Err(SamplingError::InvalidConfig("sample count must be >= 1"));
        }
        if !(self.noise_radius >= 0.0 && self.noise_radius.is_finite()) {
            return Err(SamplingError::InvalidConfig("noise radius must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Uniform point on the unit sphere of `R^n` (normalized Gaussian).
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vector {
    loop {
        let v = Vector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.norm();
        if norm > 1e-300 {
            return v / norm;
        }
    }
}

/// Uniform point in the closed ball of radius `radius`.
pub fn uniform_ball<R: Rng + ?Sized>(rng: &mut R, n: usize, radius: f64) -> Vector {
    let dir = unit_sphere(rng, n);
    let u: f64 = rng.random();
    dir * (radius * u.powf(1.0 / n as f64))
}

fn draw_noise<R: Rng + ?Sized>(rng: &mut R, n: usize, cfg: &SamplingConfig) -> Vector {
    match cfg.noise_law {
        NoiseLaw::Zero => Vector::zeros(n),
        NoiseLaw::UniformBall if cfg.noise_radius == 0.0 => Vector::zeros(n),
        NoiseLaw::UniformBall => uniform_ball(rng, n, cfg.noise_radius),
    }
}

/// What the solver sees of one hybrid sample: `(x, u)` and `(y, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridObservation {
    pub x: Vector,
    pub source: usize,
    pub y: Vector,
    pub target: usize,
}

/// A drawn triplet `(x, e, w)` with its exposed observation.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridSample {
    pub x: Vector,
    /// Lifted edge id (hidden from the solver).
    pub edge: usize,
    /// Noise (hidden from the solver).
    pub w: Vector,
    pub y: Vector,
    pub source: usize,
    pub target: usize,
}

impl HybridSample {
    pub fn observation(&self) -> HybridObservation {
        HybridObservation {
            x: self.x.clone(),
            source: self.source,
            y: self.y.clone(),
            target: self.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridSampleSet {
    pub samples: Vec<HybridSample>,
    pub node_count: usize,
    pub lifted_edge_count: usize,
    pub horizon: usize,
    pub noise_radius: f64,
    pub dim: usize,
}

impl HybridSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn observations(&self) -> Vec<HybridObservation> {
        self.samples.iter().map(HybridSample::observation).collect()
    }

    /// Distinct `(source, target)` node pairs seen in the data.
    pub fn observed_pairs(&self) -> Vec<(usize, usize)> {
        self.samples
            .iter()
            .map(|s| (s.source, s.target))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// `index,x0..,u,y0..,v`; only observed quantities.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let n = self.dim;
        let mut header = vec!["index".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.push("u".into());
        header.extend((0..n).map(|i| format!("y{i}")));
        header.push("v".into());
        writeln!(out, "{}", header.join(","))?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(s.x.iter().map(|&v| num(v)));
            row.push(s.source.to_string());
            row.extend(s.y.iter().map(|&v| num(v)));
            row.push(s.target.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// What the solver sees of one continuous sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousObservation {
    pub x: Vector,
    pub y: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSample {
    pub x: Vector,
    /// Hidden switching word; kept for test oracles only.
    pub word: Word,
    pub w: Vector,
    pub y: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSampleSet {
    pub samples: Vec<ContinuousSample>,
    pub word_count: usize,
    pub horizon: usize,
    pub noise_radius: f64,
    pub dim: usize,
}

impl ContinuousSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn observations(&self) -> Vec<ContinuousObservation> {
        self.samples
            .iter()
            .map(|s| ContinuousObservation {
                x: s.x.clone(),
                y: s.y.clone(),
            })
            .collect()
    }

    /// `index,x0..,y0..`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let n = self.dim;
        let mut header = vec!["index".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..n).map(|i| format!("y{i}")));
        writeln!(out, "{}", header.join(","))?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(s.x.iter().map(|&v| num(v)));
            row.extend(s.y.iter().map(|&v| num(v)));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Draws `N` hybrid samples: `x` uniform on the sphere, a lifted edge
/// uniform on `E(G^(l))`, and noise from the configured law.
pub fn sample_hybrid(
    sys: &SwitchedSystem,
    cfg: &SamplingConfig,
) -> Result<HybridSampleSet, SamplingError> {
    cfg.validate()?;
    let lift = sys.build_lift(cfg.horizon)?;
    let edges = lift.lifted_graph().edges();
    let n = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = (0..cfg.samples)
        .map(|_| {
            let x = unit_sphere(&mut rng, n);
            let edge = rng.random_range(0..edges.len());
            let w = draw_noise(&mut rng, n, cfg);
            let y = lift.edge_matrix(edge) * &x + &w;
            HybridSample {
                x,
                edge,
                w,
                y,
                source: edges[edge].source,
                target: edges[edge].target,
            }
        })
        .collect();
    Ok(HybridSampleSet {
        samples,
        node_count: sys.graph().node_count(),
        lifted_edge_count: edges.len(),
        horizon: cfg.horizon,
        noise_radius: cfg.noise_radius,
        dim: n,
    })
}

/// Draws `N` continuous samples with the word uniform on `L_{G,l}`.
pub fn sample_continuous(
    sys: &SwitchedSystem,
    cfg: &SamplingConfig,
) -> Result<ContinuousSampleSet, SamplingError> {
    cfg.validate()?;
    let words: Vec<Word> = sys.graph().language(cfg.horizon).map_err(SystemError::from)?.into_iter().collect();
    let matrices: Vec<_> = words.iter().map(|w| sys.word_matrix(w)).collect();
    let n = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = (0..cfg.samples)
        .map(|_| {
            let x = unit_sphere(&mut rng, n);
            let k = rng.random_range(0..words.len());
            let w = draw_noise(&mut rng, n, cfg);
            let y = &matrices[k] * &x + &w;
            ContinuousSample {
                x,
                word: words[k].clone(),
                w,
                y,
            }
        })
        .collect();
    Ok(ContinuousSampleSet {
        samples,
        word_count: words.len(),
        horizon: cfg.horizon,
        noise_radius: cfg.noise_radius,
        dim: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{flower, LabeledGraph};
    use nalgebra::DMatrix;

    fn ncs_like() -> SwitchedSystem {
        let g = LabeledGraph::new(3, [(0, 0, 1), (0, 1, 2), (1, 0, 1), (1, 2, 2), (2, 0, 1)]).unwrap();
        let a1 = DMatrix::from_row_slice(2, 2, &[0.45, 1.08, -0.06, -0.27]);
        let a2 = DMatrix::from_row_slice(2, 2, &[0.45, 1.08, 0.36, 0.09]);
        SwitchedSystem::new(g, vec![a1, a2]).unwrap()
    }

    fn two_node() -> SwitchedSystem {
        let g = LabeledGraph::new(2, [(0, 0, 1), (0, 1, 2), (1, 0, 1)]).unwrap();
        let a1 = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.1, 0.4]);
        let a2 = DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.7, 0.1]);
        SwitchedSystem::new(g, vec![a1, a2]).unwrap()
    }

    #[test]
    fn noiseless_hybrid_samples_are_exact() {
        let sys = ncs_like();
        let cfg = SamplingConfig::new(2, 200, 0.0, 5).unwrap();
        let set = sample_hybrid(&sys, &cfg).unwrap();
        let lift = sys.build_lift(2).unwrap();
        for s in &set.samples {
            assert!((s.x.norm() - 1.0).abs() < 1e-12);
            assert_eq!(s.w.norm(), 0.0);
            assert!((lift.edge_matrix(s.edge) * &s.x - &s.y).norm() < 1e-12);
            let e = &lift.lifted_graph().edges()[s.edge];
            assert_eq!((e.source, e.target), (s.source, s.target));
        }
    }

    #[test]
    fn noise_stays_in_ball() {
        let sys = ncs_like();
        let cfg = SamplingConfig::new(1, 500, 0.1, 9).unwrap();
        let set = sample_hybrid(&sys, &cfg).unwrap();
        assert!(set.samples.iter().all(|s| s.w.norm() <= 0.1 + 1e-15));
        assert!(set.samples.iter().any(|s| s.w.norm() > 0.05));
    }

    #[test]
    fn seeded_determinism() {
        let sys = ncs_like();
        let cfg = SamplingConfig::new(2, 50, 0.01, 77).unwrap();
        assert_eq!(sample_hybrid(&sys, &cfg).unwrap(), sample_hybrid(&sys, &cfg).unwrap());
        assert_eq!(
            sample_continuous(&sys, &cfg).unwrap(),
            sample_continuous(&sys, &cfg).unwrap()
        );
        let other = SamplingConfig { seed: 78, ..cfg };
        assert_ne!(sample_hybrid(&sys, &cfg).unwrap(), sample_hybrid(&sys, &other).unwrap());
    }

    #[test]
    fn edge_frequencies_uniform() {
        let sys = ncs_like();
        let n = 100_000;
        let cfg = SamplingConfig::new(2, n, 0.0, 1).unwrap();
        let set = sample_hybrid(&sys, &cfg).unwrap();
        let k = set.lifted_edge_count;
        let mut counts = vec![0usize; k];
        for s in &set.samples {
            counts[s.edge] += 1;
        }
        let p = 1.0 / k as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd + 1.0, "{c} vs {mean}");
        }
    }

    #[test]
    fn word_frequencies_uniform_over_language() {
        let sys = ncs_like();
        let n = 60_000;
        let cfg = SamplingConfig::new(3, n, 0.0, 2).unwrap();
        let set = sample_continuous(&sys, &cfg).unwrap();
        assert_eq!(set.word_count, 7);
        let lang = sys.graph().language(3).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for s in &set.samples {
            *counts.entry(s.word.clone()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 7);
        let p = 1.0 / 7.0;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for (w, c) in counts {
            assert!(lang.contains(&w));
            assert!((c as f64 - mean).abs() <= 3.0 * sd + 1.0);
        }
    }

    #[test]
    fn continuous_words_respect_graph() {
        let sys = two_node();
        let cfg = SamplingConfig::new(2, 300, 0.0, 4).unwrap();
        let set = sample_continuous(&sys, &cfg).unwrap();
        let allowed = sys.graph().language(2).unwrap();
        assert_eq!(allowed.len(), 3);
        for s in &set.samples {
            assert!(allowed.contains(&s.word));
            assert_ne!(s.word.labels(), &[2, 2]);
            assert!((sys.word_matrix(&s.word) * &s.x - &s.y).norm() < 1e-12);
        }
    }

    #[test]
    fn scalar_system_halves_states() {
        let sys = SwitchedSystem::new(
            flower(2),
            vec![DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 2) * 0.5],
        )
        .unwrap();
        let set = sample_continuous(&sys, &SamplingConfig::new(1, 20, 0.0, 0).unwrap()).unwrap();
        for o in set.observations() {
            assert!((o.y - o.x * 0.5).norm() < 1e-15);
        }
    }

    #[test]
    fn homogeneity_of_noiseless_image() {
        let sys = ncs_like();
        let set = sample_hybrid(&sys, &SamplingConfig::new(1, 10, 0.0, 6).unwrap()).unwrap();
        let lift = sys.build_lift(1).unwrap();
        for s in &set.samples {
            let mu = 3.7;
            let scaled = lift.edge_matrix(s.edge) * (&s.x * mu);
            assert!((scaled - &s.y * mu).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SamplingConfig::new(0, 1, 0.0, 0).is_err());
        assert!(SamplingConfig::new(1, 0, 0.0, 0).is_err());
        assert!(SamplingConfig::new(1, 1, -0.1, 0).is_err());
    }

    #[test]
    fn csv_exposes_only_observations() {
        let sys = ncs_like();
        let set = sample_hybrid(&sys, &SamplingConfig::new(1, 3, 0.0, 6).unwrap()).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,x0,x1,u,y0,y1,v");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(',').count(), 7);
    }
}
