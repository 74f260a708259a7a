#![allow(dead_code)]

use depara::synthbench::GaussianStream;
use depara::{Activation, BundleIds, DenseLayer, ProbeBundle, RefNet};

/// Seeded source for test fixtures.
pub struct Fixtures {
    g: GaussianStream,
}

impl Fixtures {
    pub fn new(seed: u64) -> Self {
        Fixtures {
            g: GaussianStream::new(seed, 7),
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.g.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.g.normal()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.g.uniform() * (hi - lo + 1) as f64) as usize
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        self.g.normals(n)
    }

    pub fn normals_f32(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.g.normal() as f32).collect()
    }

    pub fn activation(&mut self) -> Activation {
        match self.int(0, 2) {
            0 => Activation::Identity,
            1 => Activation::Relu,
            _ => Activation::Tanh,
        }
    }

    /// Random dense net with `widths[0]` inputs; weights scaled by 1/√d_in.
    pub fn net(&mut self, widths: &[usize], activations: &[Activation], with_bias: bool) -> RefNet {
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| {
                let (d_in, d_out) = (w[0], w[1]);
                let scale = 1.0 / (d_in as f64).sqrt();
                let weights = (0..d_in * d_out)
                    .map(|_| (self.normal() * scale) as f32)
                    .collect();
                let bias = (0..d_out)
                    .map(|_| {
                        if with_bias {
                            (0.3 * self.normal()) as f32
                        } else {
                            0.0
                        }
                    })
                    .collect();
                DenseLayer::new(d_in, d_out, weights, bias, act).unwrap()
            })
            .collect();
        RefNet::new(widths[0], layers).unwrap()
    }

    pub fn random_net(&mut self, max_layers: usize, max_width: usize) -> RefNet {
        let depth = self.int(1, max_layers);
        let widths: Vec<usize> = (0..=depth).map(|_| self.int(2, max_width)).collect();
        let acts: Vec<Activation> = (0..depth).map(|_| self.activation()).collect();
        self.net(&widths, &acts, true)
    }

    pub fn bundle(
        &mut self,
        ids: BundleIds,
        n: usize,
        d_embed: usize,
        d_input: usize,
    ) -> ProbeBundle {
        let e = self.normals_f32(n * d_embed);
        let a = self.normals_f32(n * d_input);
        ProbeBundle::new(ids, n, d_embed, d_input, e, a).unwrap()
    }

    pub fn probe(&mut self, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.normals(d)).collect()
    }
}

/// Forward pass written independently of the library: returns
/// pre-activations and outputs of every layer up to `tap` (1-based).
pub fn oracle_forward(net: &RefNet, x: &[f64], tap: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut h = x.to_vec();
    let mut pres = Vec::new();
    for layer in &net.layers()[..tap] {
        let w = layer.weights();
        let mut z = vec![0.0f64; layer.d_out()];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut acc = f64::from(layer.bias()[o]);
            for i in 0..layer.d_in() {
                acc += f64::from(w[o * layer.d_in() + i]) * h[i];
            }
            *zo = acc;
        }
        h = z
            .iter()
            .map(|&v| match layer.activation() {
                Activation::Identity => v,
                Activation::Relu => {
                    if v > 0.0 {
                        v
                    } else {
                        0.0
                    }
                }
                Activation::Tanh => v.tanh(),
            })
            .collect();
        pres.push(z);
    }
    (pres, h)
}

pub fn oracle_sq_norm(net: &RefNet, x: &[f64], tap: usize) -> f64 {
    oracle_forward(net, x, tap).1.iter().map(|v| v * v).sum()
}

/// Smallest |pre-activation| over ReLU units feeding `tap`.
pub fn relu_margin(net: &RefNet, x: &[f64], tap: usize) -> f64 {
    let (pres, _) = oracle_forward(net, x, tap);
    net.layers()[..tap]
        .iter()
        .zip(&pres)
        .filter(|(l, _)| l.activation() == Activation::Relu)
        .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

/// Central finite differences of ‖F(x)‖², step `h`.
pub fn fd_gradient(net: &RefNet, x: &[f64], tap: usize, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (oracle_sq_norm(net, &up, tap) - oracle_sq_norm(net, &down, tap)) / (2.0 * h)
        })
        .collect()
}

/// Brute-force Spearman: explicit counting ranks (average rank for ties),
/// then Pearson via raw sums.
pub fn brute_spearman(a: &[f64], b: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                1.0 + less + (equal - 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let sx: f64 = ra.iter().sum();
    let sy: f64 = rb.iter().sum();
    let sxx: f64 = ra.iter().map(|v| v * v).sum();
    let syy: f64 = rb.iter().map(|v| v * v).sum();
    let sxy: f64 = ra.iter().zip(&rb).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

/// `1 − 6Σd²/(m³ − m)` for tie-free inputs.
pub fn shortcut_spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64], x: f64| 1.0 + v.iter().filter(|y| **y < x).count() as f64;
    let m = a.len() as f64;
    let d2: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = rank(a, *x) - rank(b, *y);
            d * d
        })
        .sum();
    1.0 - 6.0 * d2 / (m * m * m - m)
}

pub fn has_ties(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}
