use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lenia::Observation;
use crate::ndiff::{
    adam_update, bce_pixelwise, bce_pixelwise_grad, conv2d, conv2d_backward, gaussian_kl,
    kaiming_uniform_init, linear, linear_backward, relu, relu_backward, transpose_conv2d,
    transpose_conv2d_backward, AdamState, LayerGrads, LayerKind, LayerParams, Scalar, Tensor,
};

use super::arch::{Architecture, KERNEL, LATENT_DIM, PADDING, STRIDE};

/// Additive connections from one ancestor into this module.
#[derive(Clone, Debug, PartialEq)]
pub struct LateralSet<T> {
    /// Ancestor encoder conv-1 features into this encoder's conv-1.
    pub enc_local: LayerParams<T>,
    /// Ancestor decoder input-of-last-layer into the same position here.
    pub dec_local: LayerParams<T>,
    pub dec_global: LayerParams<T>,
    /// Ancestor latent into this decoder's first dense layer.
    pub embedding: LayerParams<T>,
    /// Ancestor output logits into this module's output logits.
    pub original: LayerParams<T>,
}

const LATERAL_SLOTS: usize = 5;

/// Features a module exposes to its descendants for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeTaps<T> {
    pub enc_local: Tensor<T>,
    pub dec_global: Tensor<T>,
    pub dec_local: Tensor<T>,
    pub embedding: Tensor<T>,
    pub original: Tensor<T>,
}

/// Taps of every ancestor, root first. Produced by frozen modules only.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AncestorFeatures<T> {
    pub levels: Vec<NodeTaps<T>>,
}

impl<T> AncestorFeatures<T> {
    pub fn none() -> Self {
        Self { levels: Vec::new() }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Posterior parameters; the goal point is `mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding<T> {
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// Mean over the batch of per-image summed BCE plus KL.
    pub total: f64,
    pub bce: f64,
    pub kl: f64,
}

/// One representation module: encoder, decoder and its lateral inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeModule<T> {
    arch: Architecture,
    enc_convs: Vec<LayerParams<T>>,
    enc_fcs: Vec<LayerParams<T>>,
    dec_fcs: Vec<LayerParams<T>>,
    dec_tconvs: Vec<LayerParams<T>>,
    laterals: Vec<LateralSet<T>>,
    frozen: bool,
}

struct EncoderTrace<T> {
    conv_in: Vec<Tensor<T>>,
    conv_pre: Vec<Tensor<T>>,
    fc_in: Vec<Tensor<T>>,
    fc_pre: Vec<Tensor<T>>,
    head: Tensor<T>,
}

struct DecoderTrace<T> {
    fc_in: Vec<Tensor<T>>,
    fc_pre: Vec<Tensor<T>>,
    map_pre: Vec<Tensor<T>>,
    maps: Vec<Tensor<T>>,
    logits: Tensor<T>,
}

fn kaiming_layer<T: Scalar, R: Rng + ?Sized>(
    kind: LayerKind,
    shape: &[usize],
    rng: &mut R,
) -> LayerParams<T> {
    let fan_in = match kind {
        LayerKind::FullyConnected => shape[1],
        LayerKind::Conv | LayerKind::Lateral1x1 => shape[1] * shape[2] * shape[3],
        LayerKind::TransposeConv => shape[1] * shape[2] * shape[3],
    };
    let n_out = if kind == LayerKind::TransposeConv {
        shape[1]
    } else {
        shape[0]
    };
    LayerParams::new(
        kind,
        kaiming_uniform_init(shape, fan_in, rng),
        Tensor::zeros(&[n_out]),
    )
    .expect("shapes built consistently")
}

fn zero_layer<T: Scalar>(kind: LayerKind, shape: &[usize]) -> LayerParams<T> {
    LayerParams::new(kind, Tensor::zeros(shape), Tensor::zeros(&[shape[0]])).expect("shapes built consistently")
}

fn add_into<T: Scalar>(acc: &mut Tensor<T>, other: &Tensor<T>) {
    acc.add_assign(other).expect("lateral shapes match their tap");
}

impl<T: Scalar> LateralSet<T> {
    /// All-zero connections: a new child starts out computing exactly what
    /// it would in isolation and learns how much ancestor signal to take in.
    fn zeroed(arch: &Architecture) -> Self {
        let c = arch.channels;
        Self {
            enc_local: zero_layer(LayerKind::Lateral1x1, &[c, c, 1, 1]),
            dec_local: zero_layer(LayerKind::Lateral1x1, &[c, c, 1, 1]),
            dec_global: zero_layer(LayerKind::Lateral1x1, &[c, c, 1, 1]),
            embedding: zero_layer(LayerKind::FullyConnected, &[arch.hidden, LATENT_DIM]),
            original: zero_layer(LayerKind::Lateral1x1, &[1, 1, 1, 1]),
        }
    }

    fn slots(&self) -> [&LayerParams<T>; LATERAL_SLOTS] {
        [
            &self.enc_local,
            &self.dec_local,
            &self.dec_global,
            &self.embedding,
            &self.original,
        ]
    }

    fn slots_mut(&mut self) -> [&mut LayerParams<T>; LATERAL_SLOTS] {
        [
            &mut self.enc_local,
            &mut self.dec_local,
            &mut self.dec_global,
            &mut self.embedding,
            &mut self.original,
        ]
    }
}

const SLOT_NAMES: [&str; LATERAL_SLOTS] = ["enc_local", "dec_local", "dec_global", "embedding", "original"];

impl<T: Scalar> NodeModule<T> {
    /// Fresh Kaiming-initialized module with lateral inputs from
    /// `n_ancestors` ancestors.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, n_ancestors: usize, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let n = arch.n_conv();
        let c = arch.channels;
        let h = arch.hidden;
        let enc_convs = (0..n)
            .map(|i| {
                let cin = if i == 0 { 1 } else { c };
                kaiming_layer(LayerKind::Conv, &[c, cin, KERNEL, KERNEL], rng)
            })
            .collect();
        let enc_fcs = vec![
            kaiming_layer(LayerKind::FullyConnected, &[h, arch.flat_features()], rng),
            kaiming_layer(LayerKind::FullyConnected, &[h, h], rng),
            kaiming_layer(LayerKind::FullyConnected, &[2 * LATENT_DIM, h], rng),
        ];
        let dec_fcs = vec![
            kaiming_layer(LayerKind::FullyConnected, &[h, LATENT_DIM], rng),
            kaiming_layer(LayerKind::FullyConnected, &[h, h], rng),
            kaiming_layer(LayerKind::FullyConnected, &[arch.flat_features(), h], rng),
        ];
        let dec_tconvs = (0..n)
            .map(|i| {
                let cout = if i + 1 == n { 1 } else { c };
                kaiming_layer(LayerKind::TransposeConv, &[c, cout, KERNEL, KERNEL], rng)
            })
            .collect();
        let laterals = (0..n_ancestors)
            .map(|_| LateralSet::zeroed(&arch))
            .collect();
        Ok(Self {
            arch,
            enc_convs,
            enc_fcs,
            dec_fcs,
            dec_tconvs,
            laterals,
            frozen: false,
        })
    }

    /// Child of `parent`: laterals from the parent and all of its ancestors,
    /// first encoder convolution copied from the parent, the rest fresh.
    pub fn child_of<R: Rng + ?Sized>(parent: &Self, rng: &mut R) -> Result<Self> {
        let mut child = Self::new(parent.arch, parent.laterals.len() + 1, rng)?;
        child.enc_convs[0] = parent.enc_convs[0].clone();
        Ok(child)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn n_ancestors(&self) -> usize {
        self.laterals.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn laterals(&self) -> &[LateralSet<T>] {
        &self.laterals
    }

    pub fn laterals_mut(&mut self) -> &mut [LateralSet<T>] {
        &mut self.laterals
    }

    pub fn param_count(&self, include_laterals: bool) -> usize {
        let own: usize = self.own_layers().map(|l| l.param_count()).sum();
        let lat: usize = if include_laterals {
            self.laterals
                .iter()
                .flat_map(|s| s.slots())
                .map(|l| l.param_count())
                .sum()
        } else {
            0
        };
        own + lat
    }

    fn own_layers(&self) -> impl Iterator<Item = &LayerParams<T>> {
        self.enc_convs
            .iter()
            .chain(&self.enc_fcs)
            .chain(&self.dec_fcs)
            .chain(&self.dec_tconvs)
    }

    /// Every parameter layer in gradient order.
    pub fn layers(&self) -> Vec<&LayerParams<T>> {
        self.own_layers()
            .chain(self.laterals.iter().flat_map(|s| s.slots()))
            .collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        self.enc_convs
            .iter_mut()
            .chain(self.enc_fcs.iter_mut())
            .chain(self.dec_fcs.iter_mut())
            .chain(self.dec_tconvs.iter_mut())
            .chain(self.laterals.iter_mut().flat_map(|s| s.slots_mut()))
            .collect()
    }

    /// Stable names matching [`Self::layers`], used for checkpoints.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.extend((0..self.enc_convs.len()).map(|i| format!("enc.conv{i}")));
        names.extend((0..self.enc_fcs.len()).map(|i| format!("enc.fc{i}")));
        names.extend((0..self.dec_fcs.len()).map(|i| format!("dec.fc{i}")));
        names.extend((0..self.dec_tconvs.len()).map(|i| format!("dec.tconv{i}")));
        for k in 0..self.laterals.len() {
            names.extend(SLOT_NAMES.iter().map(|s| format!("lat{k}.{s}")));
        }
        names
    }

    /// Tensors in checkpoint order: `<layer>.weight`, `<layer>.bias`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.layer_names()
            .into_iter()
            .zip(self.layers())
            .flat_map(|(n, l)| [(format!("{n}.weight"), &l.weight), (format!("{n}.bias"), &l.bias)])
            .collect()
    }

    /// Overwrites parameters from named tensors; every name must be present
    /// with the expected shape.
    pub fn load_named(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let names = self.layer_names();
        for (name, layer) in names.iter().zip(self.layers_mut()) {
            for (suffix, slot) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
                let key = format!("{name}.{suffix}");
                let t = tensors
                    .iter()
                    .find(|(n, _)| *n == key)
                    .map(|(_, t)| t)
                    .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks {key}")))?;
                slot.check_same_shape(t, &key)?;
                *slot = t.clone();
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> NodeModule<U> {
        let cast_all = |v: &[LayerParams<T>]| v.iter().map(|l| l.cast()).collect();
        NodeModule {
            arch: self.arch,
            enc_convs: cast_all(&self.enc_convs),
            enc_fcs: cast_all(&self.enc_fcs),
            dec_fcs: cast_all(&self.dec_fcs),
            dec_tconvs: cast_all(&self.dec_tconvs),
            laterals: self
                .laterals
                .iter()
                .map(|s| LateralSet {
                    enc_local: s.enc_local.cast(),
                    dec_local: s.dec_local.cast(),
                    dec_global: s.dec_global.cast(),
                    embedding: s.embedding.cast(),
                    original: s.original.cast(),
                })
                .collect(),
            frozen: self.frozen,
        }
    }

    fn check_inputs(&self, x: &Tensor<T>, anc: &AncestorFeatures<T>) -> Result<()> {
        let s = self.arch.input_size;
        if x.rank() != 4 || x.shape()[1..] != [1, s, s] {
            return Err(Error::Shape(format!(
                "module expects [batch, 1, {s}, {s}], got {:?}",
                x.shape()
            )));
        }
        if anc.depth() != self.laterals.len() {
            return Err(Error::MissingAncestors {
                expected: self.laterals.len(),
                got: anc.depth(),
            });
        }
        Ok(())
    }

    fn encoder_forward(&self, x: &Tensor<T>, anc: &AncestorFeatures<T>) -> Result<EncoderTrace<T>> {
        let batch = x.dim(0);
        let mut conv_in = Vec::with_capacity(self.enc_convs.len());
        let mut conv_pre = Vec::with_capacity(self.enc_convs.len());
        let mut h = x.clone();
        for (i, layer) in self.enc_convs.iter().enumerate() {
            let mut pre = conv2d(&h, layer, STRIDE, PADDING)?;
            if i == 0 {
                for (lat, taps) in self.laterals.iter().zip(&anc.levels) {
                    add_into(&mut pre, &conv2d(&taps.enc_local, &lat.enc_local, 1, 0)?);
                }
            }
            conv_in.push(h);
            h = relu(&pre);
            conv_pre.push(pre);
        }
        conv_in.push(h.clone());
        let flat = h.reshape(&[batch, self.arch.flat_features()])?;
        let mut fc_in = vec![flat];
        let mut fc_pre = Vec::new();
        for layer in &self.enc_fcs[..2] {
            let pre = linear(fc_in.last().expect("non-empty"), layer)?;
            fc_in.push(relu(&pre));
            fc_pre.push(pre);
        }
        let head = linear(fc_in.last().expect("non-empty"), &self.enc_fcs[2])?;
        Ok(EncoderTrace {
            conv_in,
            conv_pre,
            fc_in,
            fc_pre,
            head,
        })
    }

    fn decoder_forward(&self, z: &Tensor<T>, anc: &AncestorFeatures<T>) -> Result<DecoderTrace<T>> {
        let batch = z.dim(0);
        let mut fc_in = vec![z.clone()];
        let mut fc_pre = Vec::new();
        for (i, layer) in self.dec_fcs.iter().enumerate() {
            let mut pre = linear(fc_in.last().expect("non-empty"), layer)?;
            if i == 0 {
                for (lat, taps) in self.laterals.iter().zip(&anc.levels) {
                    add_into(&mut pre, &linear(&taps.embedding, &lat.embedding)?);
                }
            }
            if i + 1 < self.dec_fcs.len() {
                fc_in.push(relu(&pre));
            }
            fc_pre.push(pre);
        }
        let b = super::arch::BOTTLENECK;
        let n = self.dec_tconvs.len();
        let (g_tap, l_tap) = (self.arch.global_tap(), self.arch.local_tap());
        let mut map_pre = Vec::with_capacity(n);
        let mut maps: Vec<Tensor<T>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut pre = if i == 0 {
                fc_pre[2].clone().reshape(&[batch, self.arch.channels, b, b])?
            } else {
                transpose_conv2d(&maps[i - 1], &self.dec_tconvs[i - 1], STRIDE, PADDING)?
            };
            for (lat, taps) in self.laterals.iter().zip(&anc.levels) {
                if i == g_tap {
                    add_into(&mut pre, &conv2d(&taps.dec_global, &lat.dec_global, 1, 0)?);
                }
                if i == l_tap {
                    add_into(&mut pre, &conv2d(&taps.dec_local, &lat.dec_local, 1, 0)?);
                }
            }
            maps.push(relu(&pre));
            map_pre.push(pre);
        }
        let mut logits = transpose_conv2d(&maps[n - 1], &self.dec_tconvs[n - 1], STRIDE, PADDING)?;
        for (lat, taps) in self.laterals.iter().zip(&anc.levels) {
            add_into(&mut logits, &conv2d(&taps.original, &lat.original, 1, 0)?);
        }
        Ok(DecoderTrace {
            fc_in,
            fc_pre,
            map_pre,
            maps,
            logits,
        })
    }

    fn split_head(&self, head: &Tensor<T>) -> Encoding<T> {
        let batch = head.dim(0);
        let mut mu = Tensor::zeros(&[batch, LATENT_DIM]);
        let mut logvar = Tensor::zeros(&[batch, LATENT_DIM]);
        for b in 0..batch {
            let row = head.item(b);
            mu.item_mut(b).copy_from_slice(&row[..LATENT_DIM]);
            logvar.item_mut(b).copy_from_slice(&row[LATENT_DIM..]);
        }
        Encoding { mu, logvar }
    }

    pub fn encode(&self, x: &Tensor<T>, anc: &AncestorFeatures<T>) -> Result<Encoding<T>> {
        self.check_inputs(x, anc)?;
        let trace = self.encoder_forward(x, anc)?;
        Ok(self.split_head(&trace.head))
    }

    /// Output logits `[batch, 1, size, size]` for latent codes `z`.
    pub fn decode(&self, z: &Tensor<T>, anc: &AncestorFeatures<T>) -> Result<Tensor<T>> {
        if z.rank() != 2 || z.dim(1) != LATENT_DIM {
            return Err(Error::Shape(format!(
                "decode expects [batch, {LATENT_DIM}], got {:?}",
                z.shape()
            )));
        }
        if !z.all_finite() {
            return Err(Error::NonFinite("latent code"));
        }
        if anc.depth() != self.laterals.len() {
            return Err(Error::MissingAncestors {
                expected: self.laterals.len(),
                got: anc.depth(),
            });
        }
        Ok(self.decoder_forward(z, anc)?.logits)
    }

    /// Deterministic pass (posterior mean): encoding, reconstruction logits
    /// and the taps this module offers its descendants.
    pub fn forward_eval(
        &self,
        x: &Tensor<T>,
        anc: &AncestorFeatures<T>,
    ) -> Result<(Encoding<T>, NodeTaps<T>)> {
        self.check_inputs(x, anc)?;
        let enc = self.encoder_forward(x, anc)?;
        let encoding = self.split_head(&enc.head);
        let dec = self.decoder_forward(&encoding.mu, anc)?;
        let taps = NodeTaps {
            enc_local: enc.conv_in[1].clone(),
            dec_global: dec.maps[self.arch.global_tap()].clone(),
            dec_local: dec.maps[self.arch.local_tap()].clone(),
            embedding: encoding.mu.clone(),
            original: dec.logits,
        };
        Ok((encoding, taps))
    }

    /// Batch loss and parameter gradients. `noise` holds the reparameterization
    /// draws `[batch, 16]`; `None` decodes the posterior mean.
    pub fn loss_and_grads(
        &self,
        x: &Tensor<T>,
        anc: &AncestorFeatures<T>,
        noise: Option<&Tensor<T>>,
    ) -> Result<(LossBreakdown, Vec<LayerGrads<T>>)> {
        self.check_inputs(x, anc)?;
        let batch = x.dim(0);
        let inv_b = T::one() / T::lit(batch as f64);
        let half = T::lit(0.5);
        let enc = self.encoder_forward(x, anc)?;
        let Encoding { mu, logvar } = self.split_head(&enc.head);
        let z = match noise {
            Some(eps) => {
                mu.check_same_shape(eps, "reparameterization noise")?;
                let mut z = mu.clone();
                for ((zi, &lv), &e) in z.data_mut().iter_mut().zip(logvar.data()).zip(eps.data()) {
                    *zi += (half * lv).exp() * e;
                }
                z
            }
            None => mu.clone(),
        };
        let dec = self.decoder_forward(&z, anc)?;
        let bce = bce_pixelwise(&dec.logits, x)?;
        let kl = gaussian_kl(&mu, &logvar)?;
        let to_f64 = |v: T| v.to_f64().unwrap_or(f64::NAN) / batch as f64;
        let breakdown = LossBreakdown {
            total: to_f64(bce + kl),
            bce: to_f64(bce),
            kl: to_f64(kl),
        };

        let mut grads: Vec<Option<LayerGrads<T>>> = vec![None; self.layers().len()];
        let mut dlogits = bce_pixelwise_grad(&dec.logits, x)?;
        dlogits.scale(inv_b);
        let dz = self.decoder_backward(&dec, anc, &dlogits, &mut grads)?;

        let mut dhead = Tensor::zeros(&[batch, 2 * LATENT_DIM]);
        for b in 0..batch {
            let (m, lv, g) = (mu.item(b), logvar.item(b), dz.item(b));
            let row = dhead.item_mut(b);
            for d in 0..LATENT_DIM {
                row[d] = g[d] + m[d] * inv_b;
                let dlv_kl = half * (lv[d].exp() - T::one()) * inv_b;
                let dlv_z = match noise {
                    Some(eps) => g[d] * eps.item(b)[d] * half * (half * lv[d]).exp(),
                    None => T::zero(),
                };
                row[LATENT_DIM + d] = dlv_kl + dlv_z;
            }
        }
        self.encoder_backward(&enc, anc, &dhead, &mut grads)?;
        let grads = grads
            .into_iter()
            .zip(self.layers())
            .map(|(g, l)| g.unwrap_or_else(|| l.zero_grads()))
            .collect();
        Ok((breakdown, grads))
    }

    fn lateral_index(&self, k: usize, slot: usize) -> usize {
        let n = self.enc_convs.len();
        2 * n + 6 + LATERAL_SLOTS * k + slot
    }

    fn decoder_backward(
        &self,
        dec: &DecoderTrace<T>,
        anc: &AncestorFeatures<T>,
        dlogits: &Tensor<T>,
        grads: &mut [Option<LayerGrads<T>>],
    ) -> Result<Tensor<T>> {
        let n = self.dec_tconvs.len();
        let tconv_idx = |i: usize| n + 6 + i;
        let fc_idx = |i: usize| n + 3 + i;
        for (k, (lat, taps)) in self.laterals.iter().zip(&anc.levels).enumerate() {
            let (_, g) = conv2d_backward(&taps.original, &lat.original, 1, 0, dlogits)?;
            grads[self.lateral_index(k, 4)] = Some(g);
        }
        let (mut dmap, g) =
            transpose_conv2d_backward(&dec.maps[n - 1], &self.dec_tconvs[n - 1], STRIDE, PADDING, dlogits)?;
        grads[tconv_idx(n - 1)] = Some(g);
        let (g_tap, l_tap) = (self.arch.global_tap(), self.arch.local_tap());
        let mut dp3 = None;
        for i in (0..n).rev() {
            let dpre = relu_backward(&dec.map_pre[i], &dmap)?;
            for (k, (lat, taps)) in self.laterals.iter().zip(&anc.levels).enumerate() {
                if i == l_tap {
                    let (_, g) = conv2d_backward(&taps.dec_local, &lat.dec_local, 1, 0, &dpre)?;
                    grads[self.lateral_index(k, 1)] = Some(g);
                }
                if i == g_tap {
                    let (_, g) = conv2d_backward(&taps.dec_global, &lat.dec_global, 1, 0, &dpre)?;
                    grads[self.lateral_index(k, 2)] = Some(g);
                }
            }
            if i > 0 {
                let (d, g) = transpose_conv2d_backward(
                    &dec.maps[i - 1],
                    &self.dec_tconvs[i - 1],
                    STRIDE,
                    PADDING,
                    &dpre,
                )?;
                grads[tconv_idx(i - 1)] = Some(g);
                dmap = d;
            } else {
                let batch = dpre.dim(0);
                dp3 = Some(dpre.reshape(&[batch, self.arch.flat_features()])?);
            }
        }
        let mut dpre = dp3.expect("decoder has at least one map");
        for i in (0..self.dec_fcs.len()).rev() {
            if i == 0 {
                for (k, (lat, taps)) in self.laterals.iter().zip(&anc.levels).enumerate() {
                    let (_, g) = linear_backward(&taps.embedding, &lat.embedding, &dpre)?;
                    grads[self.lateral_index(k, 3)] = Some(g);
                }
            }
            let (din, g) = linear_backward(&dec.fc_in[i], &self.dec_fcs[i], &dpre)?;
            grads[fc_idx(i)] = Some(g);
            if i == 0 {
                return Ok(din);
            }
            dpre = relu_backward(&dec.fc_pre[i - 1], &din)?;
        }
        unreachable!("loop returns at the first dense layer")
    }

    fn encoder_backward(
        &self,
        enc: &EncoderTrace<T>,
        anc: &AncestorFeatures<T>,
        dhead: &Tensor<T>,
        grads: &mut [Option<LayerGrads<T>>],
    ) -> Result<()> {
        let n = self.enc_convs.len();
        let mut dpre = dhead.clone();
        let mut dflat = None;
        for i in (0..self.enc_fcs.len()).rev() {
            let (din, g) = linear_backward(&enc.fc_in[i], &self.enc_fcs[i], &dpre)?;
            grads[n + i] = Some(g);
            if i == 0 {
                dflat = Some(din);
                break;
            }
            dpre = relu_backward(&enc.fc_pre[i - 1], &din)?;
        }
        let dflat = dflat.expect("dense stack non-empty");
        let batch = dflat.dim(0);
        let b = super::arch::BOTTLENECK;
        let mut dh = dflat.reshape(&[batch, self.arch.channels, b, b])?;
        for i in (0..n).rev() {
            let dpre = relu_backward(&enc.conv_pre[i], &dh)?;
            if i == 0 {
                for (k, (lat, taps)) in self.laterals.iter().zip(&anc.levels).enumerate() {
                    let (_, g) = conv2d_backward(&taps.enc_local, &lat.enc_local, 1, 0, &dpre)?;
                    grads[self.lateral_index(k, 0)] = Some(g);
                }
            }
            let (din, g) = conv2d_backward(&enc.conv_in[i], &self.enc_convs[i], STRIDE, PADDING, &dpre)?;
            grads[i] = Some(g);
            dh = din;
        }
        Ok(())
    }

    /// Adam step on every owned parameter. Frozen modules refuse.
    pub fn apply_grads(&mut self, grads: &[LayerGrads<T>], state: &mut AdamState<T>) -> Result<()> {
        if self.frozen {
            return Err(Error::InvalidArgument("cannot update a frozen module".into()));
        }
        let mut params: Vec<&mut Tensor<T>> = self
            .layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        let grad_refs: Vec<&Tensor<T>> = grads.iter().flat_map(|g| [&g.weight, &g.bias]).collect();
        adam_update(&mut params, &grad_refs, state)
    }

    pub fn new_optimizer(&self, config: crate::ndiff::AdamConfig) -> AdamState<T> {
        AdamState::new(
            config,
            self.layers().into_iter().flat_map(|l| [&l.weight, &l.bias]),
        )
    }
}

/// Stacks observations into a `[batch, 1, size, size]` tensor.
pub fn observation_batch<T: Scalar>(obs: &[&Observation]) -> Result<Tensor<T>> {
    let first = obs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty observation batch".into()))?;
    let size = first.size();
    let mut data = Vec::with_capacity(obs.len() * size * size);
    for o in obs {
        if o.size() != size {
            return Err(Error::Shape("mixed observation sizes in batch".into()));
        }
        data.extend(o.cells().iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::new(vec![obs.len(), 1, size, size], data)
}

/// Per-image summed BCE of a reconstruction.
pub fn per_image_bce<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<f64>> {
    logits.check_same_shape(target, "per_image_bce")?;
    (0..logits.dim(0))
        .map(|b| {
            let n = logits.item(b).len();
            let l = Tensor::new(vec![n], logits.item(b).to_vec())?;
            let t = Tensor::new(vec![n], target.item(b).to_vec())?;
            Ok(bce_pixelwise(&l, &t)?.to_f64().unwrap_or(f64::NAN))
        })
        .collect()
}

/// Snapshot of how a node is wired, stored beside its tensors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub key: String,
    pub frozen: bool,
    pub arch: Architecture,
    /// Keys of the ancestors feeding each lateral set, root first.
    pub ancestors: Vec<String>,
    pub global_tap: usize,
    pub local_tap: usize,
}
