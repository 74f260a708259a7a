//! A small dense feed-forward network used to produce embeddings and
//! Gradient*Input attributions without any external ML framework.
//!
//! Weights are stored as f32 (the DEPN container's dtype). All arithmetic is
//! carried out in f64.
//!
//! DEPN v1 uses the same fixed header as DEPB (magic `DEPN`, version, flags,
//! `meta_len`) followed by JSON metadata
//! `{"input_dim", "layers": [{"d_in", "d_out", "activation"}], "dtype", "checksum"}`
//! and then, per layer in order, the row-major `d_out × d_in` weights and the
//! `d_out` biases as little-endian f32. The checksum is the CRC-32 of that
//! payload.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor_store::{
    check_dtype, parse_checksum, read_f32s, read_header, write_f32s, write_header, BundleIds,
    ProbeBundle, DTYPE,
};

pub const NET_MAGIC: [u8; 4] = *b"DEPN";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output `a`.
    /// ReLU uses 0 at exactly 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    d_in: usize,
    d_out: usize,
    /// Row-major `d_out × d_in`.
    weights: Vec<f32>,
    bias: Vec<f32>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        d_in: usize,
        d_out: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::invalid("layer", "zero width"));
        }
        if weights.len() != d_in * d_out {
            return Err(Error::DimensionMismatch {
                expected: d_in * d_out,
                got: weights.len(),
            });
        }
        if bias.len() != d_out {
            return Err(Error::DimensionMismatch {
                expected: d_out,
                got: bias.len(),
            });
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "weights" });
        }
        Ok(DenseLayer {
            d_in,
            d_out,
            weights,
            bias,
            activation,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.d_in)
            .zip(&self.bias)
            .map(|(row, b)| {
                row.iter()
                    .zip(x)
                    .map(|(w, xi)| f64::from(*w) * xi)
                    .sum::<f64>()
                    + f64::from(*b)
            })
            .collect()
    }

    /// `Wᵀ δ`
    fn backprop(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d_in];
        for (row, d) in self.weights.chunks_exact(self.d_in).zip(delta) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += f64::from(*w) * d;
            }
        }
        out
    }
}

/// Selects which layer's post-activation output is exposed as the embedding.
/// Layers are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayerTap(usize);

impl LayerTap {
    pub fn new(layer_index: usize) -> Result<Self> {
        if layer_index == 0 {
            return Err(Error::TapOutOfRange { tap: 0, layers: 0 });
        }
        Ok(LayerTap(layer_index))
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for LayerTap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tap-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefNet {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

impl RefNet {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network"));
        }
        let mut expected = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.d_in != expected {
                return Err(Error::DimensionChain {
                    layer: i + 1,
                    expected,
                    got: layer.d_in,
                });
            }
            expected = layer.d_out;
        }
        Ok(RefNet { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::d_out)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// All taps `1..=depth`.
    pub fn taps(&self) -> impl Iterator<Item = LayerTap> {
        (1..=self.layers.len()).map(LayerTap)
    }

    /// Width of the embedding exposed at `tap`.
    pub fn tap_width(&self, tap: LayerTap) -> Result<usize> {
        self.check_tap(tap)?;
        Ok(self.layers[tap.0 - 1].d_out)
    }

    fn check_tap(&self, tap: LayerTap) -> Result<()> {
        if tap.0 == 0 || tap.0 > self.layers.len() {
            return Err(Error::TapOutOfRange {
                tap: tap.0,
                layers: self.layers.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "input" });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], tap: LayerTap) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_tap(tap)?;
        let mut h = x.to_vec();
        for layer in &self.layers[..tap.0] {
            h = layer
                .pre_activation(&h)
                .into_iter()
                .map(|z| layer.activation.apply(z))
                .collect();
        }
        Ok(h)
    }

    /// Gradient of `‖F(x)‖²` with respect to the input, where `F` is the
    /// post-activation output at `tap`.
    pub fn grad_sq_norm(&self, x: &[f64], tap: LayerTap) -> Result<Vec<f64>> {
        Ok(self.forward_backward(x, tap)?.1)
    }

    /// Gradient*Input: `x ⊙ ∂‖F(x)‖²/∂x`.
    pub fn attribution(&self, x: &[f64], tap: LayerTap) -> Result<Vec<f64>> {
        let grad = self.grad_sq_norm(x, tap)?;
        Ok(x.iter().zip(&grad).map(|(xi, gi)| xi * gi).collect())
    }

    /// Embedding and input gradient from one forward/backward pass.
    fn forward_backward(&self, x: &[f64], tap: LayerTap) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        self.check_tap(tap)?;
        let used = &self.layers[..tap.0];
        let mut pre = Vec::with_capacity(used.len());
        let mut post = Vec::with_capacity(used.len());
        let mut h = x.to_vec();
        for layer in used {
            let z = layer.pre_activation(&h);
            h = z.iter().map(|&zi| layer.activation.apply(zi)).collect();
            pre.push(z);
            post.push(h.clone());
        }
        let embedding = h;
        // seed: d‖a‖²/da = 2a
        let mut grad: Vec<f64> = embedding.iter().map(|a| 2.0 * a).collect();
        for (i, layer) in used.iter().enumerate().rev() {
            let delta: Vec<f64> = grad
                .iter()
                .zip(&pre[i])
                .zip(&post[i])
                .map(|((g, &z), &a)| g * layer.activation.derivative(z, a))
                .collect();
            grad = layer.backprop(&delta);
        }
        Ok((embedding, grad))
    }
}

/// Runs every probe row through `net` and records embeddings and attributions
/// at `tap`.
pub fn export_bundle(
    net: &RefNet,
    probe: &[Vec<f64>],
    tap: LayerTap,
    ids: BundleIds,
) -> Result<ProbeBundle> {
    export_bundle_with(net, probe, tap, ids, Exec::default())
}

pub fn export_bundle_with(
    net: &RefNet,
    probe: &[Vec<f64>],
    tap: LayerTap,
    ids: BundleIds,
    exec: Exec,
) -> Result<ProbeBundle> {
    if probe.len() < 2 {
        return Err(Error::invalid(
            "probe",
            format!("{} probe points, need at least 2", probe.len()),
        ));
    }
    let d_embed = net.tap_width(tap)?;
    let rows = exec.try_map(probe.len(), |k| {
        let x = &probe[k];
        let (embedding, grad) = net.forward_backward(x, tap)?;
        let attribution: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi * gi).collect();
        Ok::<_, Error>((embedding, attribution))
    })?;
    let mut embeddings = Vec::with_capacity(probe.len() * d_embed);
    let mut attributions = Vec::with_capacity(probe.len() * net.input_dim);
    for (e, a) in rows {
        embeddings.extend(e.into_iter().map(|v| v as f32));
        attributions.extend(a.into_iter().map(|v| v as f32));
    }
    ProbeBundle::new(
        ids,
        probe.len(),
        d_embed,
        net.input_dim,
        embeddings,
        attributions,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerMeta {
    d_in: usize,
    d_out: usize,
    activation: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetMeta {
    input_dim: usize,
    layers: Vec<LayerMeta>,
    dtype: String,
    checksum: String,
}

fn net_checksum(net: &RefNet) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    for layer in &net.layers {
        for v in layer.weights.iter().chain(&layer.bias) {
            hasher.update(&v.to_le_bytes());
        }
    }
    hasher.finalize()
}

pub fn write_refnet<W: Write>(net: &RefNet, sink: &mut W) -> Result<()> {
    let meta = NetMeta {
        input_dim: net.input_dim,
        layers: net
            .layers
            .iter()
            .map(|l| LayerMeta {
                d_in: l.d_in,
                d_out: l.d_out,
                activation: l.activation.name().to_string(),
            })
            .collect(),
        dtype: DTYPE.to_string(),
        checksum: format!("{:08x}", net_checksum(net)),
    };
    let meta = serde_json::to_vec(&meta)?;
    write_header(sink, &NET_MAGIC, &meta)?;
    for layer in &net.layers {
        write_f32s(sink, &layer.weights)?;
        write_f32s(sink, &layer.bias)?;
    }
    Ok(())
}

pub fn read_refnet<R: Read>(source: &mut R) -> Result<RefNet> {
    let meta = read_header(source, &NET_MAGIC, "DEPN")?;
    let meta: NetMeta = serde_json::from_slice(&meta).map_err(|e| Error::BadMeta(e.to_string()))?;
    check_dtype(&meta.dtype)?;
    let stored = parse_checksum(&meta.checksum)?;
    if meta.layers.is_empty() {
        return Err(Error::Empty("network"));
    }
    // Validate the architecture before touching the payload.
    let mut expected = meta.input_dim;
    let mut activations = Vec::with_capacity(meta.layers.len());
    for (i, l) in meta.layers.iter().enumerate() {
        if l.d_in != expected {
            return Err(Error::DimensionChain {
                layer: i + 1,
                expected,
                got: l.d_in,
            });
        }
        expected = l.d_out;
        activations.push(l.activation.parse::<Activation>()?);
    }
    let mut hasher = crc32fast::Hasher::new();
    let mut raw = Vec::with_capacity(meta.layers.len());
    for l in &meta.layers {
        let count = l
            .d_in
            .checked_mul(l.d_out)
            .ok_or_else(|| Error::BadMeta("layer size overflows".into()))?;
        let weights = read_f32s(source, count, &mut hasher)?;
        let bias = read_f32s(source, l.d_out, &mut hasher)?;
        raw.push((weights, bias));
    }
    let computed = hasher.finalize();
    if computed != stored {
        return Err(Error::CorruptPayload { stored, computed });
    }
    let layers = meta
        .layers
        .iter()
        .zip(activations)
        .zip(raw)
        .map(|((l, act), (w, b))| DenseLayer::new(l.d_in, l.d_out, w, b, act))
        .collect::<Result<Vec<_>>>()?;
    RefNet::new(meta.input_dim, layers)
}

pub fn save_refnet(net: &RefNet, path: impl AsRef<Path>) -> Result<()> {
    let mut sink = BufWriter::new(File::create(path)?);
    write_refnet(net, &mut sink)?;
    sink.flush()?;
    Ok(())
}

pub fn load_refnet(path: impl AsRef<Path>) -> Result<RefNet> {
    let mut source = BufReader::new(File::open(path)?);
    let net = read_refnet(&mut source)?;
    let mut probe = [0u8; 1];
    if source.read(&mut probe)? != 0 {
        return Err(Error::invalid("network", "trailing bytes after payload"));
    }
    Ok(net)
}
