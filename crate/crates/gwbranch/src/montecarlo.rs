//! Simulation of Z_n paths in a varying environment, with per-(path,
//! generation) random streams so results do not depend on scheduling.

use rand::RngCore;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::environment::{EnvironmentModel, OffspringLaw};
use crate::error::{Error, Result};
use crate::quad::neumaier;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64 stream keyed by (seed, path, generation).
#[derive(Debug, Clone)]
pub struct SubStream {
    state: u64,
}

impl SubStream {
    pub fn new(seed: u64, path: u64, generation: u64) -> Self {
        let a = mix64(seed ^ 0x6a09_e667_f3bc_c909);
        let b = mix64(a ^ path.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let state = mix64(b ^ generation.wrapping_mul(0xd1b5_4a32_d192_ed03).wrapping_add(0x3c6e_f372_fe94_f82b));
        SubStream { state }
    }
}

impl RngCore for SubStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

fn uniform01(rng: &mut SubStream) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Binomial(n, 1/2) from random bits.
fn fair_binomial(n: u64, rng: &mut SubStream) -> u64 {
    let mut left = n;
    let mut count = 0u64;
    while left >= 64 {
        count += rng.next_u64().count_ones() as u64;
        left -= 64;
    }
    if left > 0 {
        count += (rng.next_u64() & ((1u64 << left) - 1)).count_ones() as u64;
    }
    count
}

fn binomial(n: u64, p: f64, rng: &mut SubStream) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if p == 0.5 && n <= 2048 {
        return fair_binomial(n, rng);
    }
    Binomial::new(n, p).map(|d| d.sample(rng)).unwrap_or(0)
}

/// How one generation's offspring total is drawn.
#[derive(Debug, Clone)]
enum Sampler {
    Dirac(u64),
    Bernoulli(f64),
    Poisson(f64),
    Finite { ks: Vec<u64>, ps: Vec<f64>, cdf: Vec<f64>, fair_pair: bool },
}

impl Sampler {
    fn new(law: &OffspringLaw) -> Result<Self> {
        Ok(match law {
            OffspringLaw::Dirac { k } => Sampler::Dirac(*k),
            OffspringLaw::Bernoulli01 { p } => Sampler::Bernoulli(*p),
            OffspringLaw::Poisson { mean } => Sampler::Poisson(*mean),
            _ => {
                let pmf = law.pmf()?;
                let ks: Vec<u64> = pmf.iter().map(|a| a.0).collect();
                let ps: Vec<f64> = pmf.iter().map(|a| a.1).collect();
                let mut cdf = Vec::with_capacity(ps.len());
                let mut acc = 0.0;
                for p in &ps {
                    acc += p;
                    cdf.push(acc);
                }
                let fair_pair = ps.len() == 2 && ps[0] == 0.5 && ps[1] == 0.5;
                Sampler::Finite { ks, ps, cdf, fair_pair }
            }
        })
    }

    /// Sum of z i.i.d. offspring counts; None on overflow of `cap`.
    fn total(&self, z: u64, cap: u64, rng: &mut SubStream) -> Option<u64> {
        if z == 0 {
            return Some(0);
        }
        let out = match self {
            Sampler::Dirac(k) => z.checked_mul(*k)?,
            Sampler::Bernoulli(p) => binomial(z, *p, rng),
            Sampler::Poisson(m) => {
                let mean = z as f64 * m;
                if mean <= 0.0 {
                    0
                } else if mean > 2.0 * cap as f64 {
                    return None;
                } else {
                    Poisson::new(mean).map(|d| d.sample(rng)).ok()? as u64
                }
            }
            Sampler::Finite { ks, ps, cdf, fair_pair } => {
                if *fair_pair {
                    let hi = binomial(z, 0.5, rng);
                    hi.checked_mul(ks[1])?.checked_add((z - hi).checked_mul(ks[0])?)?
                } else if z <= 64 || (z as f64) * (ks.len() as f64).log2().max(1.0) < ks.len() as f64 {
                    let mut s: u64 = 0;
                    let last = cdf.len() - 1;
                    for _ in 0..z {
                        let u = uniform01(rng) * cdf[last];
                        let j = cdf.partition_point(|&c| c <= u).min(last);
                        s = s.checked_add(ks[j])?;
                    }
                    s
                } else {
                    // multinomial category counts through conditional binomials
                    let mut left = z;
                    let mut rest = 1.0;
                    let mut s: u64 = 0;
                    for (j, (&k, &p)) in ks.iter().zip(ps).enumerate() {
                        if left == 0 {
                            break;
                        }
                        let c = if j + 1 == ks.len() { left } else { binomial(left, (p / rest).min(1.0), rng) };
                        s = s.checked_add(c.checked_mul(k)?)?;
                        left -= c;
                        rest -= p;
                        if rest <= 0.0 {
                            rest = f64::MIN_POSITIVE;
                        }
                    }
                    s
                }
            }
        };
        if out > cap {
            None
        } else {
            Some(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Record {
    All,
    Generations(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub z0: u64,
    /// Last simulated generation (inclusive).
    pub max_gen: u64,
    pub start_gen: u64,
    pub seed: u64,
    pub n_paths: usize,
    pub record: Record,
    pub cap: u64,
}

impl SimConfig {
    pub fn new(z0: u64, max_gen: u64, seed: u64, n_paths: usize) -> Self {
        SimConfig { z0, max_gen, start_gen: 0, seed, n_paths, record: Record::All, cap: 1u64 << 53 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathBatch {
    pub n: u64,
    pub z0: u64,
    pub seed: u64,
    pub start_gen: u64,
    /// Recorded generation indices, ascending.
    pub generations: Vec<u64>,
    /// pops[path][k] = Z at generations[k]
    pub pops: Vec<Vec<u64>>,
    /// First generation at which the path exceeded the cap.
    pub overflow_gen: Vec<Option<u64>>,
    #[serde(skip)]
    env: EnvironmentModel,
}

fn simulate_path(samplers: &[(u64, u64, Sampler)], cfg: &SimConfig, gens: &[u64], path: u64) -> (Vec<u64>, Option<u64>) {
    let mut out = Vec::with_capacity(gens.len());
    let mut next = 0;
    let mut z = cfg.z0;
    let mut overflow = None;
    if gens.first() == Some(&cfg.start_gen) {
        out.push(z);
        next = 1;
    }
    for &(lo, hi, ref smp) in samplers {
        for g in lo..hi {
            if overflow.is_none() {
                let mut rng = SubStream::new(cfg.seed, path, g);
                match smp.total(z, cfg.cap, &mut rng) {
                    Some(v) => z = v,
                    None => {
                        overflow = Some(g + 1);
                        z = cfg.cap;
                    }
                }
            }
            if next < gens.len() && gens[next] == g + 1 {
                out.push(z);
                next += 1;
            }
        }
    }
    (out, overflow)
}

/// Simulate n_paths paths from z0 individuals at generation start_gen up to max_gen.
pub fn simulate_with(env: &EnvironmentModel, cfg: &SimConfig) -> Result<PathBatch> {
    if cfg.max_gen < cfg.start_gen {
        return Err(Error::InvalidInput("max_gen must be >= start_gen".into()));
    }
    let gens: Vec<u64> = match &cfg.record {
        Record::All => (cfg.start_gen..=cfg.max_gen).collect(),
        Record::Generations(v) => {
            let mut v: Vec<u64> = v.clone();
            v.sort_unstable();
            v.dedup();
            if v.iter().any(|&g| g < cfg.start_gen || g > cfg.max_gen) {
                return Err(Error::InvalidInput("recorded generations must lie in [start_gen, max_gen]".into()));
            }
            v
        }
    };
    let mut samplers = Vec::new();
    for (j, lo, hi) in env.runs(cfg.start_gen, cfg.max_gen)? {
        samplers.push((lo, hi, Sampler::new(&env.blocks()[j].law)?));
    }
    let results: Vec<(Vec<u64>, Option<u64>)> =
        (0..cfg.n_paths as u64).into_par_iter().map(|p| simulate_path(&samplers, cfg, &gens, p)).collect();
    let (pops, overflow_gen) = results.into_iter().unzip();
    Ok(PathBatch {
        n: env.n(),
        z0: cfg.z0,
        seed: cfg.seed,
        start_gen: cfg.start_gen,
        generations: gens,
        pops,
        overflow_gen,
        env: env.clone(),
    })
}

pub fn simulate(env: &EnvironmentModel, z0: u64, max_gen: u64, seed: u64, n_paths: usize) -> Result<PathBatch> {
    simulate_with(env, &SimConfig::new(z0, max_gen, seed, n_paths))
}

/// (mean, standard error)
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub used: usize,
    pub excluded: usize,
}

fn estimate(values: &[f64], excluded: usize) -> Result<Estimate> {
    if values.is_empty() {
        return Err(Error::AllPathsOverflowed);
    }
    let k = values.len() as f64;
    let mean = neumaier(values.iter().copied()) / k;
    let var = if values.len() > 1 { neumaier(values.iter().map(|v| (v - mean) * (v - mean))) / (k - 1.0) } else { 0.0 };
    Ok(Estimate { mean, se: (var / k).sqrt(), used: values.len(), excluded })
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.pops.len()
    }

    pub fn overflowed(&self) -> usize {
        self.overflow_gen.iter().filter(|o| o.is_some()).count()
    }

    pub fn env(&self) -> &EnvironmentModel {
        &self.env
    }

    fn column(&self, g: u64) -> Result<usize> {
        self.generations.binary_search(&g).map_err(|_| Error::GenerationNotCovered(g))
    }

    /// Column index for time t.
    pub fn index_of_time(&self, t: f64) -> Result<usize> {
        self.column(self.env.gamma(t))
    }

    /// Functional exp(-sum lam_k Z(g_k)/n) over paths that have not overflowed by the last g_k.
    fn functional(&self, cols: &[(usize, f64)]) -> Result<Estimate> {
        let last = cols.iter().map(|c| self.generations[c.0]).max().unwrap_or(self.start_gen);
        let nf = self.n as f64;
        let mut vals = Vec::with_capacity(self.pops.len());
        let mut excluded = 0;
        for (p, row) in self.pops.iter().enumerate() {
            if matches!(self.overflow_gen[p], Some(o) if o <= last) {
                excluded += 1;
                continue;
            }
            let e: f64 = cols.iter().map(|&(c, lam)| lam * row[c] as f64 / nf).sum();
            vals.push((-e).exp());
        }
        estimate(&vals, excluded)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let nf = self.n as f64;
        let mut means = Vec::new();
        let mut ses = Vec::new();
        for (c, &g) in self.generations.iter().enumerate() {
            let vals: Vec<f64> = self
                .pops
                .iter()
                .zip(&self.overflow_gen)
                .filter(|(_, o)| !matches!(o, Some(x) if *x <= g))
                .map(|(r, _)| r[c] as f64 / nf)
                .collect();
            match estimate(&vals, 0) {
                Ok(e) => {
                    means.push(serde_json::json!(e.mean));
                    ses.push(serde_json::json!(e.se));
                }
                Err(_) => {
                    means.push(serde_json::Value::Null);
                    ses.push(serde_json::Value::Null);
                }
            }
        }
        serde_json::json!({
            "paths": self.n_paths(),
            "overflowed": self.overflowed(),
            "generations": self.generations,
            "means": means,
            "se": ses,
        })
    }

    /// Per-path CSV: path, generation, z.
    pub fn paths_csv(&self) -> String {
        let mut s = String::from("path,generation,z\n");
        for (p, row) in self.pops.iter().enumerate() {
            for (g, z) in self.generations.iter().zip(row) {
                s.push_str(&format!("{p},{g},{z}\n"));
            }
        }
        s
    }
}

/// Mean and SE of exp(-lam Z_{gamma_n(t)} / n).
pub fn empirical_laplace(batch: &PathBatch, t: f64, lam: f64) -> Result<Estimate> {
    if !(lam >= 0.0) {
        return Err(Error::InvalidInput("lambda must be >= 0".into()));
    }
    let c = batch.index_of_time(t)?;
    batch.functional(&[(c, lam)])
}

/// Mean and SE of exp(-sum lam_i X_n(t_i)); s must be the batch start time.
pub fn empirical_fdd(batch: &PathBatch, s: f64, pairs: &[(f64, f64)]) -> Result<Estimate> {
    if batch.env.gamma(s) != batch.start_gen {
        return Err(Error::InvalidInput(format!("s = {s} is not the start of the batch")));
    }
    if pairs.iter().any(|p| !(p.1 >= 0.0) || p.0 < s) {
        return Err(Error::InvalidInput("pairs need t_i >= s and lambda_i >= 0".into()));
    }
    let cols = pairs.iter().map(|&(t, l)| Ok((batch.index_of_time(t)?, l))).collect::<Result<Vec<_>>>()?;
    batch.functional(&cols)
}

/// Fraction of paths with Z_{gamma_n(t)} > 0 (overflowed paths count as alive).
pub fn survival_estimate(batch: &PathBatch, t: f64) -> Result<Estimate> {
    let c = batch.index_of_time(t)?;
    let vals: Vec<f64> = batch.pops.iter().map(|r| if r[c] > 0 { 1.0 } else { 0.0 }).collect();
    estimate(&vals, 0)
}
