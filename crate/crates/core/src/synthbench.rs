//! Synthetic task families with known relatedness.
//!
//! A family has a linear base network `W₀` with orthonormal rows and variants
//! `R(θ)·(W₀ + σ·G)`, where `G` is a Gaussian direction normalized to unit
//! Frobenius norm (one direction per family, shared by all variants) and
//! `R(θ)` rotates the first two output coordinates. All networks see the same
//! standard-normal probe set.
//!
//! Random numbers come from xoshiro256** seeded through SplitMix64 with the
//! family seed. Stream `s` is that generator advanced by `s` jumps of 2¹²⁸:
//! stream 0 draws the base matrix, stream 1 the probe, stream 2 the
//! perturbation direction. Uniforms take the top 53 bits of each output;
//! normals use Box–Muller on successive uniform pairs `(u₁, u₂)` with
//! `r = √(−2 ln(1 − u₁))`, yielding `r·cos 2πu₂` then `r·sin 2πu₂`.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::build_graph_with;
use crate::numfmt::ser_sig9;
use crate::probe::save_probe_csv;
use crate::refnet::{export_bundle_with, save_refnet, Activation, DenseLayer, LayerTap, RefNet};
use crate::similarity::{check_lambda, graph_similarity};
use crate::stats::median;
use crate::tensor_store::{save_bundle, BundleIds};

pub const STREAM_BASE: u64 = 0;
pub const STREAM_PROBE: u64 = 1;
pub const STREAM_DIRECTION: u64 = 2;

/// Seeded standard-normal source.
pub struct GaussianStream {
    rng: Xoshiro256StarStar,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        for _ in 0..stream {
            rng.jump();
        }
        GaussianStream { rng, spare: None }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn normals(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.normal()).collect()
    }
}

/// Orthonormalizes the rows of a `rows × cols` matrix (modified Gram–Schmidt,
/// i.e. the Q factor of a QR decomposition of its transpose).
pub fn orthonormal_rows(m: &mut [f64], rows: usize, cols: usize) -> Result<()> {
    if rows > cols {
        return Err(Error::invalid(
            "synthetic family",
            format!("d_embed {rows} > d_input {cols}: orthonormal rows impossible"),
        ));
    }
    for i in 0..rows {
        for j in 0..i {
            let (done, rest) = m.split_at_mut(i * cols);
            let prev = &done[j * cols..(j + 1) * cols];
            let row = &mut rest[..cols];
            let dot: f64 = row.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (a, b) in row.iter_mut().zip(prev) {
                *a -= dot * b;
            }
        }
        let row = &mut m[i * cols..(i + 1) * cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Degenerate("random matrix (rank deficient)"));
        }
        for v in row {
            *v /= norm;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Nuisance {
    /// Rotation of output coordinates 0 and 1, in radians.
    pub rotation_angle: f64,
    pub noise_sigma: f64,
}

impl Nuisance {
    pub fn noise(sigma: f64) -> Self {
        Nuisance {
            rotation_angle: 0.0,
            noise_sigma: sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FamilyParams {
    pub seed: u64,
    pub d_input: usize,
    pub d_embed: usize,
    pub n_probe: usize,
}

impl FamilyParams {
    pub fn new(seed: u64, d_input: usize, d_embed: usize, n_probe: usize) -> Self {
        FamilyParams {
            seed,
            d_input,
            d_embed,
            n_probe,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVariant {
    pub variant_id: String,
    pub net: RefNet,
    pub nuisance: Nuisance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFamily {
    pub params: FamilyParams,
    pub base: RefNet,
    pub variants: Vec<SynthVariant>,
    /// `n_probe × d_input`, standard normal.
    pub probe: Vec<Vec<f64>>,
}

pub fn variant_id(nuisance: &Nuisance) -> String {
    if nuisance.rotation_angle == 0.0 {
        format!("variant-{}", nuisance.noise_sigma)
    } else {
        format!(
            "variant-{}-rot-{}",
            nuisance.noise_sigma, nuisance.rotation_angle
        )
    }
}

fn linear_net(d_input: usize, d_embed: usize, weights: &[f64]) -> Result<RefNet> {
    let layer = DenseLayer::new(
        d_input,
        d_embed,
        weights.iter().map(|&w| w as f32).collect(),
        vec![0.0; d_embed],
        Activation::Identity,
    )?;
    RefNet::new(d_input, vec![layer])
}

pub fn generate_family(params: FamilyParams, sigmas: &[f64]) -> Result<SynthFamily> {
    let nuisances: Vec<Nuisance> = sigmas.iter().map(|&s| Nuisance::noise(s)).collect();
    generate_family_with(params, &nuisances)
}

pub fn generate_family_with(params: FamilyParams, nuisances: &[Nuisance]) -> Result<SynthFamily> {
    let FamilyParams {
        seed,
        d_input,
        d_embed,
        n_probe,
    } = params;
    if n_probe < 2 {
        return Err(Error::invalid(
            "synthetic family",
            "n_probe must be at least 2",
        ));
    }
    if d_input == 0 || d_embed == 0 {
        return Err(Error::invalid("synthetic family", "zero dimensionality"));
    }
    if d_embed > d_input {
        return Err(Error::invalid(
            "synthetic family",
            format!("d_embed {d_embed} > d_input {d_input}: orthonormal rows impossible"),
        ));
    }
    for n in nuisances {
        if !(n.noise_sigma.is_finite() && n.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma", n.noise_sigma.to_string()));
        }
        if !n.rotation_angle.is_finite() {
            return Err(Error::invalid(
                "rotation angle",
                n.rotation_angle.to_string(),
            ));
        }
        if n.rotation_angle != 0.0 && d_embed < 2 {
            return Err(Error::invalid("rotation angle", "needs d_embed >= 2"));
        }
    }

    let mut base_w = GaussianStream::new(seed, STREAM_BASE).normals(d_embed * d_input);
    orthonormal_rows(&mut base_w, d_embed, d_input)?;

    let mut probe_stream = GaussianStream::new(seed, STREAM_PROBE);
    let probe: Vec<Vec<f64>> = (0..n_probe)
        .map(|_| probe_stream.normals(d_input))
        .collect();

    let mut direction = GaussianStream::new(seed, STREAM_DIRECTION).normals(d_embed * d_input);
    let fro = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut direction {
        *v /= fro;
    }

    let variants = nuisances
        .iter()
        .map(|nuisance| {
            let mut w: Vec<f64> = base_w
                .iter()
                .zip(&direction)
                .map(|(b, g)| b + nuisance.noise_sigma * g)
                .collect();
            if nuisance.rotation_angle != 0.0 {
                let (s, c) = nuisance.rotation_angle.sin_cos();
                let (r0, r1) = w.split_at_mut(d_input);
                for (a, b) in r0.iter_mut().zip(&mut r1[..d_input]) {
                    let (x, y) = (*a, *b);
                    *a = c * x - s * y;
                    *b = s * x + c * y;
                }
            }
            Ok(SynthVariant {
                variant_id: variant_id(nuisance),
                net: linear_net(d_input, d_embed, &w)?,
                nuisance: *nuisance,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthFamily {
        params,
        base: linear_net(d_input, d_embed, &base_w)?,
        variants,
        probe,
    })
}

impl SynthFamily {
    pub fn probe_id(&self) -> String {
        format!("synth-{}", self.params.seed)
    }

    fn bundle_for(
        &self,
        model_id: &str,
        net: &RefNet,
        exec: Exec,
    ) -> Result<crate::tensor_store::ProbeBundle> {
        let tap = LayerTap::new(1)?;
        export_bundle_with(
            net,
            &self.probe,
            tap,
            BundleIds::new(model_id, tap.to_string(), self.probe_id()),
            exec,
        )
    }

    /// Writes `family-<seed>/` with `probe.csv`, `base/` and one
    /// `variant-<sigma>/` directory per variant, each holding `net.depn` and
    /// `bundle.depb`. Returns the family directory.
    pub fn write_to(&self, root: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = root.as_ref().join(format!("family-{}", self.params.seed));
        fs::create_dir_all(&dir)?;
        save_probe_csv(&self.probe, dir.join("probe.csv"))?;
        let members = std::iter::once(("base".to_string(), &self.base))
            .chain(self.variants.iter().map(|v| (v.variant_id.clone(), &v.net)));
        for (name, net) in members {
            let sub = dir.join(&name);
            fs::create_dir_all(&sub)?;
            save_refnet(net, sub.join("net.depn"))?;
            save_bundle(
                &self.bundle_for(&name, net, Exec::default())?,
                sub.join("bundle.depb"),
            )?;
        }
        Ok(dir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HarnessPoint {
    #[serde(serialize_with = "ser_sig9")]
    pub sigma: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub score: f64,
}

/// Similarity of every variant to the base, sorted by ascending sigma.
pub fn monotonicity_harness(family: &SynthFamily, lambda: f64) -> Result<Vec<HarnessPoint>> {
    monotonicity_harness_with(family, lambda, Exec::default())
}

pub fn monotonicity_harness_with(
    family: &SynthFamily,
    lambda: f64,
    exec: Exec,
) -> Result<Vec<HarnessPoint>> {
    check_lambda(lambda)?;
    if family.variants.len() < 2 {
        return Err(Error::invalid(
            "sigma list",
            format!("{} sigmas, need at least 2", family.variants.len()),
        ));
    }
    let base = build_graph_with(&family.bundle_for("base", &family.base, exec)?, exec)?;
    let mut points = family
        .variants
        .iter()
        .map(|v| {
            let g = build_graph_with(&family.bundle_for(&v.variant_id, &v.net, exec)?, exec)?;
            Ok(HarnessPoint {
                sigma: v.nuisance.noise_sigma,
                score: graph_similarity(&g, &base, lambda)?.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(serialize_with = "ser_sig9")]
    pub sigma: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub median_score: f64,
    /// One score per seed, in seed order.
    #[serde(serialize_with = "crate::numfmt::ser_vec_sig9")]
    pub scores: Vec<f64>,
}

/// Runs the harness for every seed (one family each, generated in parallel)
/// and aggregates scores per sigma by the median.
pub fn median_sweep(
    seeds: &[u64],
    d_input: usize,
    d_embed: usize,
    n_probe: usize,
    sigmas: &[f64],
    lambda: f64,
) -> Result<Vec<SweepRow>> {
    median_sweep_with(
        seeds,
        d_input,
        d_embed,
        n_probe,
        sigmas,
        lambda,
        Exec::default(),
    )
}

pub fn median_sweep_with(
    seeds: &[u64],
    d_input: usize,
    d_embed: usize,
    n_probe: usize,
    sigmas: &[f64],
    lambda: f64,
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let per_seed = exec.try_map(seeds.len(), |i| {
        let family = generate_family(
            FamilyParams::new(seeds[i], d_input, d_embed, n_probe),
            sigmas,
        )?;
        // the outer loop already fans out
        monotonicity_harness_with(&family, lambda, Exec::Sequential)
    })?;
    let columns = per_seed[0].len();
    Ok((0..columns)
        .map(|c| {
            let scores: Vec<f64> = per_seed.iter().map(|row| row[c].score).collect();
            SweepRow {
                sigma: per_seed[0][c].sigma,
                median_score: median(&scores).expect("non-empty seed list"),
                scores,
            }
        })
        .collect())
}
