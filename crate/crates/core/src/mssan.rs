//! Multi-scale spatial attention network for channel tensor refinement,
//! plus its single-scale ablation and a plain convolutional baseline.
//!
//! The input is a noisy channel estimate as an `[Nr, Nt, 2]` tensor
//! (real/imaginary planes); the output has the same extents. The multi-scale
//! variant runs a three-layer encoder–decoder where antenna-splitting stages
//! trade receive rows for features, so the attention blocks of deeper layers
//! see progressively smaller subchannels:
//!
//! ```text
//! embed -> SA^B1 -> AS -> SA^B2 -> AS -> SA^B3        (encoder)
//!            |             |              |
//!            v             v              v
//!          + <- DW <- AC + <- DW <- AC ---+           (decoder, cross sums)
//!          SA^B1          SA^B2
//!            \-> SA^Br -> + DW(embed) -> reconstruct
//! ```
//!
//! Each spatial attention block is `x + SMA(LN(x))` followed by
//! `h + GSFN(LN(h))`. The SMA head correlates whole feature maps — its
//! attention map is the Gram matrix of flattened query/key features — which
//! keeps cost linear in the antenna count. Parameters live in a
//! [`ParamStore`] under hierarchical names (`enc2.block0.sma.head1.q.pw.w`),
//! so checkpoints are plain name/tensor lists.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, StreamDomain};
use crate::tensor::{Graph, ParamStore, Scalar, TensorData, TensorId};

/// Shared layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum MssanError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("input shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkVariant {
    Mssan,
    San,
    CnnBaseline,
}

impl fmt::Display for NetworkVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkVariant::Mssan => "mssan",
            NetworkVariant::San => "san",
            NetworkVariant::CnnBaseline => "cnn-baseline",
        })
    }
}

/// Architecture hyper-parameters. Block and head counts are indexed by
/// stage: `[layer 1, layer 2, layer 3, refinement]`. The single-scale and
/// convolutional variants only read the first entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub variant: NetworkVariant,
    /// Receive and transmit antenna counts of the channel tensor.
    pub nr: usize,
    pub nt: usize,
    /// Embedding feature count `C`.
    pub embed_features: usize,
    /// SA blocks per stage `{B1, B2, B3, Br}`.
    pub blocks: [usize; 4],
    /// Attention heads per stage `{K1, K2, K3, Kr}`.
    pub heads: [usize; 4],
}

impl NetworkConfig {
    /// Published multi-scale settings: `C = 32`, blocks `{1,1,2,1}`,
    /// heads `{1,2,4,1}`.
    pub fn mssan(nr: usize, nt: usize) -> Self {
        NetworkConfig {
            variant: NetworkVariant::Mssan,
            nr,
            nt,
            embed_features: 32,
            blocks: [1, 1, 2, 1],
            heads: [1, 2, 4, 1],
        }
    }

    /// Single-scale ablation: 10 SA blocks at `C = 48`, one head.
    pub fn san(nr: usize, nt: usize) -> Self {
        NetworkConfig {
            variant: NetworkVariant::San,
            nr,
            nt,
            embed_features: 48,
            blocks: [10, 0, 0, 0],
            heads: [1, 0, 0, 0],
        }
    }

    /// Convolutional baseline: 6 stacked 3x3 layers at `C = 32` with a
    /// residual output head. The depth is carried in `blocks[0]`.
    pub fn cnn_baseline(nr: usize, nt: usize) -> Self {
        NetworkConfig {
            variant: NetworkVariant::CnnBaseline,
            nr,
            nt,
            embed_features: 32,
            blocks: [6, 0, 0, 0],
            heads: [1, 0, 0, 0],
        }
    }

    /// Feature width at each attention stage.
    fn stage_widths(&self) -> [usize; 4] {
        let c = self.embed_features;
        [c, 2 * c, 4 * c, c]
    }

    pub fn validate(&self) -> Result<(), MssanError> {
        if self.nr == 0 || self.nt == 0 {
            return Err(MssanError::InvalidConfig(
                "antenna extents must be positive".into(),
            ));
        }
        if self.embed_features == 0 {
            return Err(MssanError::InvalidConfig(
                "embedding feature count must be positive".into(),
            ));
        }
        let stages: &[usize] = match self.variant {
            NetworkVariant::Mssan => {
                if self.nr % 4 != 0 {
                    return Err(MssanError::InvalidConfig(format!(
                        "two antenna splits need Nr divisible by 4, got {}",
                        self.nr
                    )));
                }
                &[0, 1, 2, 3]
            }
            NetworkVariant::San => &[0],
            NetworkVariant::CnnBaseline => &[],
        };
        let widths = self.stage_widths();
        for &s in stages {
            if self.heads[s] == 0 {
                return Err(MssanError::InvalidConfig(format!(
                    "stage {} needs at least one head",
                    s + 1
                )));
            }
            if widths[s] % self.heads[s] != 0 {
                return Err(MssanError::InvalidConfig(format!(
                    "stage {} width {} not divisible by {} heads",
                    s + 1,
                    widths[s],
                    self.heads[s]
                )));
            }
        }
        Ok(())
    }

    /// `(name, output extents)` for every stage of the forward pass.
    pub fn stage_extents(&self) -> Vec<(String, [usize; 3])> {
        let (nr, nt, c) = (self.nr, self.nt, self.embed_features);
        match self.variant {
            NetworkVariant::Mssan => vec![
                ("embed".into(), [nr, nt, c]),
                ("encoder-1".into(), [nr, nt, c]),
                ("encoder-2".into(), [nr / 2, nt, 2 * c]),
                ("encoder-3".into(), [nr / 4, nt, 4 * c]),
                ("decoder-2".into(), [nr / 2, nt, 2 * c]),
                ("decoder-1".into(), [nr, nt, c]),
                ("refine".into(), [nr, nt, c]),
                ("reconstruct".into(), [nr, nt, 2]),
            ],
            NetworkVariant::San => vec![
                ("embed".into(), [nr, nt, c]),
                ("blocks".into(), [nr, nt, c]),
                ("reconstruct".into(), [nr, nt, 2]),
            ],
            NetworkVariant::CnnBaseline => vec![
                ("convolutions".into(), [nr, nt, c]),
                ("residual head".into(), [nr, nt, 2]),
            ],
        }
    }
}

/// Parameter lookup used during a forward pass: binding names to graph
/// leaves registered by [`Network::bind`].
pub type ParamIds<'a> = BTreeMap<&'a str, TensorId>;

/// Index bindings by name for the forward pass.
pub fn binding_map(bindings: &[(String, TensorId)]) -> ParamIds<'_> {
    bindings.iter().map(|(n, id)| (n.as_str(), *id)).collect()
}

fn param(map: &ParamIds<'_>, name: &str) -> TensorId {
    *map.get(name)
        .unwrap_or_else(|| panic!("parameter {name} is not bound"))
}

fn sc<S: Scalar>(x: f64) -> S {
    S::from(x).expect("constant representable in scalar type")
}

// --- parameter initialization -------------------------------------------
//
// All weights are fan-in-scaled uniform (±1/sqrt(inputs per output)), biases
// zero, layer-norm gain one, attention scales one. Draws happen in
// construction order — embedding, encoder, decoder, refinement,
// reconstruction — so a seed pins every parameter.

fn init_conv<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut impl Rng,
    prefix: &str,
    k: usize,
    cin_g: usize,
    cout: usize,
) {
    let bound = 1.0 / ((k * k * cin_g) as f64).sqrt();
    let w = TensorData::from_fn(&[k, k, cin_g, cout], |_| sc(rng.gen_range(-bound..bound)));
    store.insert(&format!("{prefix}.w"), w).expect("distinct parameter paths");
    store
        .insert(&format!("{prefix}.b"), TensorData::zeros(&[cout]))
        .expect("distinct parameter paths");
}

fn init_layer_norm<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, c: usize) {
    store
        .insert(&format!("{prefix}.g"), TensorData::filled(&[c], S::one()))
        .expect("distinct parameter paths");
    store
        .insert(&format!("{prefix}.b"), TensorData::zeros(&[c]))
        .expect("distinct parameter paths");
}

fn init_sa_block<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut impl Rng,
    prefix: &str,
    c: usize,
    heads: usize,
) {
    init_layer_norm(store, &format!("{prefix}.ln1"), c);
    let ck = c / heads;
    for h in 0..heads {
        for branch in ["q", "k", "v"] {
            init_conv(store, rng, &format!("{prefix}.sma.head{h}.{branch}.pw"), 1, ck, ck);
            init_conv(store, rng, &format!("{prefix}.sma.head{h}.{branch}.dw"), 3, 1, ck);
        }
        store
            .insert(
                &format!("{prefix}.sma.head{h}.scale"),
                TensorData::filled(&[1], S::one()),
            )
            .expect("distinct parameter paths");
        init_conv(store, rng, &format!("{prefix}.sma.head{h}.out"), 1, ck, ck);
    }
    init_layer_norm(store, &format!("{prefix}.ln2"), c);
    init_conv(store, rng, &format!("{prefix}.gsfn.gate.pw"), 1, c, c);
    init_conv(store, rng, &format!("{prefix}.gsfn.gate.dw"), 3, 1, c);
    init_conv(store, rng, &format!("{prefix}.gsfn.lin"), 1, c, c);
    init_conv(store, rng, &format!("{prefix}.gsfn.out"), 1, c, c);
}

// --- forward building blocks ---------------------------------------------

fn conv<S: Scalar>(
    g: &mut Graph<S>,
    map: &ParamIds<'_>,
    prefix: &str,
    x: TensorId,
    stride: usize,
    groups: usize,
) -> TensorId {
    let w = param(map, &format!("{prefix}.w"));
    let b = param(map, &format!("{prefix}.b"));
    g.conv2d(x, w, b, stride, groups)
}

/// Depthwise 3x3 over however many features `x` carries.
fn conv_depthwise<S: Scalar>(
    g: &mut Graph<S>,
    map: &ParamIds<'_>,
    prefix: &str,
    x: TensorId,
) -> TensorId {
    let groups = g.value(x).shape()[2];
    conv(g, map, prefix, x, 1, groups)
}

fn layer_norm<S: Scalar>(
    g: &mut Graph<S>,
    map: &ParamIds<'_>,
    prefix: &str,
    x: TensorId,
) -> TensorId {
    let gain = param(map, &format!("{prefix}.g"));
    let bias = param(map, &format!("{prefix}.b"));
    g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

/// Attention map of one head: the Gram matrix of flattened feature maps,
/// `M[i, j] = vec(K feature i) . vec(Q feature j)`.
pub fn attention_gram<S: Scalar>(g: &mut Graph<S>, query: TensorId, key: TensorId) -> TensorId {
    let shape = g.value(query).shape().to_vec();
    assert_eq!(shape, g.value(key).shape(), "query/key extents must agree");
    let (h, w, ck) = (shape[0], shape[1], shape[2]);
    let qf = g.reshape(query, &[h * w, ck]);
    let kf = g.reshape(key, &[h * w, ck]);
    g.matmul(kf, true, qf, false)
}

/// Spatial multi-head attention. Features are divided across heads; each
/// head derives query/key/value maps through point-then-depthwise
/// convolutions, weighs value features by the softmax-normalized (over the
/// key index) scaled Gram matrix, and projects pointwise. Heads concatenate
/// back to the input width.
pub fn sma_forward<S: Scalar>(
    g: &mut Graph<S>,
    map: &ParamIds<'_>,
    prefix: &str,
    x: TensorId,
    heads: usize,
) -> TensorId {
    let shape = g.value(x).shape().to_vec();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    assert_eq!(c % heads, 0, "feature count {c} must divide into {heads} heads");
    let ck = c / heads;
    let mut outputs = Vec::with_capacity(heads);
    for head in 0..heads {
        let hp = format!("{prefix}.head{head}");
        let xk = g.slice_features(x, head * ck, ck);
        let branch = |g: &mut Graph<S>, name: &str| {
            let pw = conv(g, map, &format!("{hp}.{name}.pw"), xk, 1, 1);
            conv(g, map, &format!("{hp}.{name}.dw"), pw, 1, ck)
        };
        let q = branch(g, "q");
        let k = branch(g, "k");
        let v = branch(g, "v");
        let gram = attention_gram(g, q, k);
        let scale = param(map, &format!("{hp}.scale"));
        let scaled = g.div_scalar_var(gram, scale);
        let weights = g.softmax(scaled, 0);
        let vf = g.reshape(v, &[h * w, ck]);
        let mixed = g.matmul(vf, false, weights, false);
        let folded = g.reshape(mixed, &[h, w, ck]);
        outputs.push(conv(g, map, &format!("{hp}.out"), folded, 1, 1));
    }
    g.concat_features(&outputs)
}

/// Gated feed-forward: `PW(GELU(DW(PW(x))) ⊙ PW(x))`, width-preserving.
pub fn gsfn_forward<S: Scalar>(
    g: &mut Graph<S>,
    map: &ParamIds<'_>,
    prefix: &str,
    x: TensorId,
) -> TensorId {
    let pw = conv(g, map, &format!("{prefix}.gate.pw"), x, 1, 1);
    let dw = conv_depthwise(g, map, &format!("{prefix}.gate.dw"), pw);
    let gate = g.gelu(dw);
    let lin = conv(g, map, &format!("{prefix}.lin"), x, 1, 1);
    let gated = g.mul(gate, lin);
    conv(g, map, &format!("{prefix}.out"), gated, 1, 1)
}

/// One spatial attention block: `h = x + SMA(LN(x)); h + GSFN(LN(h))`.
pub fn sa_block<S: Scalar>(
    g: &mut Graph<S>,
    map: &ParamIds<'_>,
    prefix: &str,
    x: TensorId,
    heads: usize,
) -> TensorId {
    let n1 = layer_norm(g, map, &format!("{prefix}.ln1"), x);
    let att = sma_forward(g, map, &format!("{prefix}.sma"), n1, heads);
    let h = g.add(x, att);
    let n2 = layer_norm(g, map, &format!("{prefix}.ln2"), h);
    let ff = gsfn_forward(g, map, &format!("{prefix}.gsfn"), n2);
    g.add(h, ff)
}

fn sa_chain<S: Scalar>(
    g: &mut Graph<S>,
    map: &ParamIds<'_>,
    prefix: &str,
    mut x: TensorId,
    blocks: usize,
    heads: usize,
) -> TensorId {
    for b in 0..blocks {
        let name = if prefix.is_empty() {
            format!("block{b}")
        } else {
            format!("{prefix}.block{b}")
        };
        x = sa_block(g, map, &name, x, heads);
    }
    x
}

/// A network instance: architecture plus its parameter store.
#[derive(Debug, Clone)]
pub struct Network<S: Scalar> {
    config: NetworkConfig,
    pub store: ParamStore<S>,
}

impl<S: Scalar> Network<S> {
    /// Validate the architecture and draw its initial parameters from the
    /// dedicated initialization stream of `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, MssanError> {
        config.validate()?;
        let mut rng = stream(seed, StreamDomain::ParamInit, 0);
        let mut store = ParamStore::new();
        let c = config.embed_features;
        match config.variant {
            NetworkVariant::Mssan => {
                let [b1, b2, b3, br] = config.blocks;
                let [k1, k2, k3, kr] = config.heads;
                init_conv(&mut store, &mut rng, "embed", 3, 2, c);
                for b in 0..b1 {
                    init_sa_block(&mut store, &mut rng, &format!("enc1.block{b}"), c, k1);
                }
                init_conv(&mut store, &mut rng, "as1.conv", 3, c, c);
                for b in 0..b2 {
                    init_sa_block(&mut store, &mut rng, &format!("enc2.block{b}"), 2 * c, k2);
                }
                init_conv(&mut store, &mut rng, "as2.conv", 3, 2 * c, 2 * c);
                for b in 0..b3 {
                    init_sa_block(&mut store, &mut rng, &format!("enc3.block{b}"), 4 * c, k3);
                }
                init_conv(&mut store, &mut rng, "ac3.conv", 3, 4 * c, 4 * c);
                init_conv(&mut store, &mut rng, "dec2.fuse", 3, 1, 2 * c);
                for b in 0..b2 {
                    init_sa_block(&mut store, &mut rng, &format!("dec2.block{b}"), 2 * c, k2);
                }
                init_conv(&mut store, &mut rng, "ac2.conv", 3, 2 * c, 2 * c);
                init_conv(&mut store, &mut rng, "dec1.fuse", 3, 1, c);
                for b in 0..b1 {
                    init_sa_block(&mut store, &mut rng, &format!("dec1.block{b}"), c, k1);
                }
                for b in 0..br {
                    init_sa_block(&mut store, &mut rng, &format!("refine.block{b}"), c, kr);
                }
                init_conv(&mut store, &mut rng, "skip.dw", 3, 1, c);
                init_conv(&mut store, &mut rng, "recon", 3, c, 2);
            }
            NetworkVariant::San => {
                init_conv(&mut store, &mut rng, "embed", 3, 2, c);
                for b in 0..config.blocks[0] {
                    init_sa_block(&mut store, &mut rng, &format!("block{b}"), c, config.heads[0]);
                }
                init_conv(&mut store, &mut rng, "recon", 3, c, 2);
            }
            NetworkVariant::CnnBaseline => {
                init_conv(&mut store, &mut rng, "conv0", 3, 2, c);
                for d in 1..config.blocks[0] {
                    init_conv(&mut store, &mut rng, &format!("conv{d}"), 3, c, c);
                }
                init_conv(&mut store, &mut rng, "recon", 3, c, 2);
            }
        }
        Ok(Network { config, store })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Register every parameter as a graph leaf; feed the result to
    /// [`Network::forward`] and the optimizer.
    pub fn bind(&self, graph: &mut Graph<S>) -> Vec<(String, TensorId)> {
        self.store.bind(graph)
    }

    /// Run the network on an `[Nr, Nt, 2]` input already on the graph.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        x: TensorId,
        bindings: &[(String, TensorId)],
    ) -> Result<TensorId, MssanError> {
        let expected = [self.config.nr, self.config.nt, 2];
        if g.value(x).shape() != expected {
            return Err(MssanError::ShapeMismatch(format!(
                "network expects {:?}, got {:?}",
                expected,
                g.value(x).shape()
            )));
        }
        let map = binding_map(bindings);
        let out = match self.config.variant {
            NetworkVariant::Mssan => self.forward_mssan(g, &map, x),
            NetworkVariant::San => {
                let f0 = conv(g, &map, "embed", x, 1, 1);
                let body = sa_chain(g, &map, "", f0, self.config.blocks[0], self.config.heads[0]);
                conv(g, &map, "recon", body, 1, 1)
            }
            NetworkVariant::CnnBaseline => {
                let mut h = x;
                for d in 0..self.config.blocks[0] {
                    let c = conv(g, &map, &format!("conv{d}"), h, 1, 1);
                    h = g.gelu(c);
                }
                let head = conv(g, &map, "recon", h, 1, 1);
                g.add(x, head)
            }
        };
        debug_assert_eq!(g.value(out).shape(), expected);
        Ok(out)
    }

    fn forward_mssan(&self, g: &mut Graph<S>, map: &ParamIds<'_>, x: TensorId) -> TensorId {
        let (nr, nt, c) = (self.config.nr, self.config.nt, self.config.embed_features);
        let [b1, b2, b3, br] = self.config.blocks;
        let [k1, k2, k3, kr] = self.config.heads;

        let f0 = conv(g, map, "embed", x, 1, 1);
        assert_eq!(g.value(f0).shape(), &[nr, nt, c]);

        let e1 = sa_chain(g, map, "enc1", f0, b1, k1);
        let as1 = conv(g, map, "as1.conv", e1, 1, 1);
        let s1 = g.split_rows(as1);
        let e2 = sa_chain(g, map, "enc2", s1, b2, k2);
        assert_eq!(g.value(e2).shape(), &[nr / 2, nt, 2 * c]);
        let as2 = conv(g, map, "as2.conv", e2, 1, 1);
        let s2 = g.split_rows(as2);
        let e3 = sa_chain(g, map, "enc3", s2, b3, k3);
        assert_eq!(g.value(e3).shape(), &[nr / 4, nt, 4 * c]);

        let ac3 = conv(g, map, "ac3.conv", e3, 1, 1);
        let up3 = g.merge_rows(ac3);
        let sum2 = g.add(e2, up3);
        let fused2 = conv_depthwise(g, map, "dec2.fuse", sum2);
        let d2 = sa_chain(g, map, "dec2", fused2, b2, k2);
        assert_eq!(g.value(d2).shape(), &[nr / 2, nt, 2 * c]);

        let ac2 = conv(g, map, "ac2.conv", d2, 1, 1);
        let up2 = g.merge_rows(ac2);
        let sum1 = g.add(e1, up2);
        let fused1 = conv_depthwise(g, map, "dec1.fuse", sum1);
        let d1 = sa_chain(g, map, "dec1", fused1, b1, k1);
        assert_eq!(g.value(d1).shape(), &[nr, nt, c]);

        let refined = sa_chain(g, map, "refine", d1, br, kr);
        let skip = conv_depthwise(g, map, "skip.dw", f0);
        let fused = g.add(skip, refined);
        conv(g, map, "recon", fused, 1, 1)
    }

    /// Human-readable stage table with parameter totals.
    pub fn describe(&self) -> String {
        use std::fmt::Write;
        let cfg = &self.config;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}: Nr={} Nt={} C={}, blocks {:?}, heads {:?}",
            cfg.variant, cfg.nr, cfg.nt, cfg.embed_features, cfg.blocks, cfg.heads
        );
        let _ = writeln!(s, "{:<14} {:>20}", "stage", "output extents");
        for (name, [h, w, c]) in cfg.stage_extents() {
            let _ = writeln!(s, "{name:<14} {:>20}", format!("{h} x {w} x {c}"));
        }
        let _ = writeln!(s, "parameters: {}", self.param_count());
        s
    }
}
