//! The ten-network bundle: pose VAE (`pose_enc`, `pose_dec`), depth
//! encoders/decoders per domain, per-domain patch discriminators, the
//! pose-to-depth latent mapping and the posterior estimator.
//!
//! Sharing map (views bound to one storage cell):
//! - last residual block of `enc_s` / `enc_r`
//! - first residual block of `dec_s` / `dec_r`
//! - discriminator layers 3–6 of `disc_s` / `disc_r`
//! - posterior layers 1–5 with `disc_s` layers 1–5 (only the posterior head is private)

pub mod layers;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::depth::DepthImage;
use crate::error::{Error, Result};
use crate::params::{CellId, CellSet, ParamStore};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;
use layers::{Conv, Dense, ResBlock, TConv};

/// Largest decoder output magnitude; keeps `tanh` outputs strictly inside
/// `(-1, 1)` after rounding to `f32`.
pub const DECODER_OUTPUT_SCALE: f64 = 1.0 - 1.0 / 1_048_576.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "s")]
    Synthetic,
    #[serde(rename = "r")]
    Real,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::Synthetic, Domain::Real];

    fn idx(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Domain::Synthetic => "s",
            Domain::Real => "r",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Synthetic => Domain::Real,
            Domain::Real => Domain::Synthetic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub image_resolution: usize,
    pub base_channels: usize,
    /// Length of the flattened pose vector (`3J`).
    pub pose_dim: usize,
    pub pose_latent_dim: usize,
    pub pose_hidden: usize,
    pub depth_latent_channels: usize,
    pub residual_cardinality: usize,
    pub negative_slope: f64,
}

impl ArchConfig {
    /// Desk-scale defaults for a given skeleton size.
    pub fn desk(joint_count: usize) -> Self {
        Self::scaled(64, 32, joint_count)
    }

    /// Smallest configuration, used for gradient checks.
    pub fn tiny(joint_count: usize) -> Self {
        Self::scaled(8, 8, joint_count)
    }

    pub fn scaled(image_resolution: usize, base_channels: usize, joint_count: usize) -> Self {
        let mut c = ArchConfig {
            image_resolution,
            base_channels,
            pose_dim: 3 * joint_count,
            pose_latent_dim: 20,
            pose_hidden: 30,
            depth_latent_channels: 0,
            residual_cardinality: 4,
            negative_slope: 0.2,
        };
        c.depth_latent_channels = c.ch(512);
        c
    }

    /// Reference channel count scaled by `base_channels / 64`, at least 8.
    pub fn ch(&self, reference: usize) -> usize {
        (reference * self.base_channels / 64).max(8)
    }

    pub fn latent_spatial(&self) -> usize {
        self.image_resolution / 4
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [self.depth_latent_channels, self.latent_spatial(), self.latent_spatial()]
    }

    pub fn validate(&self) -> Result<()> {
        let err = |layer: &str, reason: String| Err(Error::Construction { layer: layer.into(), reason });
        if self.image_resolution < 4 || self.image_resolution % 4 != 0 {
            return err("config", format!("image resolution {} is not a positive multiple of 4", self.image_resolution));
        }
        if self.pose_latent_dim < 2 || self.pose_dim == 0 || self.pose_hidden == 0 {
            return err("config", "pose dimensions must be positive and the latent at least 2".into());
        }
        if self.base_channels == 0 || self.residual_cardinality == 0 {
            return err("config", "channel counts must be positive".into());
        }
        let card = self.residual_cardinality;
        for (layer, c) in [("enc.c3", self.ch(256)), ("latent", self.depth_latent_channels)] {
            if c % card != 0 {
                return err(layer, format!("{c} channels not divisible by cardinality {card}"));
            }
        }
        if !(self.negative_slope >= 0.0 && self.negative_slope <= 1.0) {
            return err("config", "negative slope must be in [0, 1]".into());
        }
        mapping_plan(self.latent_spatial()).map(|_| ())
    }
}

/// Kernel/stride/padding of each mapping layer reaching `target` from 1×1.
fn mapping_plan(target: usize) -> Result<Vec<(usize, usize, usize)>> {
    if target < 4 {
        return Ok(vec![(target, 1, 0)]);
    }
    let mut plan = vec![(4, 1, 0)];
    let mut s = 4;
    while s < target {
        plan.push((4, 2, 1));
        s *= 2;
    }
    if s != target {
        return Err(Error::Construction { layer: "map".into(), reason: format!("cannot reach latent size {target} by doubling from 4") });
    }
    Ok(plan)
}

/// Spatial sizes implied by stride arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchGeometry {
    pub latent: [usize; 3],
    /// Spatial size of the discriminator penultimate (layer-5) map.
    pub disc_feature: usize,
    pub disc_patch: usize,
    pub disc_head_kernel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseEncoder {
    pub hidden: Dense,
    pub mu: Dense,
    pub logvar: Dense,
    slope: f64,
}

impl PoseEncoder {
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, y: Var) -> (Var, Var) {
        let h = self.hidden.forward(g, y);
        let h = g.leaky_relu(h, self.slope);
        (self.mu.forward(g, h), self.logvar.forward(g, h))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseDecoder {
    pub hidden: Dense,
    pub out: Dense,
    slope: f64,
}

impl PoseDecoder {
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, z: Var) -> Var {
        let h = self.hidden.forward(g, z);
        let h = g.leaky_relu(h, self.slope);
        self.out.forward(g, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthEncoder {
    pub convs: Vec<Conv>,
    pub blocks: Vec<ResBlock>,
    slope: f64,
}

impl DepthEncoder {
    /// Latent mean.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(g, h);
            h = g.leaky_relu(h, self.slope);
        }
        for b in &self.blocks {
            h = b.forward(g, h);
        }
        h
    }

    /// Activations entering the last (shared) block, and its output.
    pub fn forward_split<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> (Var, Var) {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(g, h);
            h = g.leaky_relu(h, self.slope);
        }
        let (last, rest) = self.blocks.split_last().expect("encoder has residual blocks");
        for b in rest {
            h = b.forward(g, h);
        }
        (h, last.forward(g, h))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthDecoder {
    pub blocks: Vec<ResBlock>,
    pub up: Vec<TConv>,
    pub out: TConv,
    slope: f64,
}

impl DepthDecoder {
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, z: Var) -> Var {
        let mut h = z;
        for b in &self.blocks {
            h = b.forward(g, h);
        }
        for u in &self.up {
            h = u.forward(g, h);
            h = g.leaky_relu(h, self.slope);
        }
        let h = self.out.forward(g, h);
        let h = g.tanh(h);
        g.scale(h, DECODER_OUTPUT_SCALE)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub convs: Vec<Conv>,
    pub head: Conv,
    slope: f64,
}

/// Discriminator outputs on one batch.
#[derive(Clone, Copy, Debug)]
pub struct DiscOut {
    /// Pre-sigmoid patch map `[N, 1, p, p]`.
    pub logits: Var,
    /// Penultimate activations `[N, C, f, f]`.
    pub phi: Var,
}

impl Discriminator {
    pub fn trunk<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(g, h);
            h = g.leaky_relu(h, self.slope);
        }
        h
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> DiscOut {
        let phi = self.trunk(g, x);
        DiscOut { logits: self.head.forward(g, phi), phi }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mapping {
    pub layers: Vec<TConv>,
    slope: f64,
}

impl Mapping {
    /// `[N, d]` pose latent to `[N, C, s, s]` depth latent.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, z: Var) -> Var {
        let (n, d) = (g.shape(z)[0], g.shape(z)[1]);
        let mut h = g.reshape(z, &[n, d, 1, 1]);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, h);
            if i != last {
                h = g.leaky_relu(h, self.slope);
            }
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub trunk: Discriminator,
    pub head: Conv,
}

impl Posterior {
    /// Head patch map globally averaged to a `[N, d]` pose latent.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let phi = self.trunk.trunk(g, x);
        self.forward_from_features(g, phi)
    }

    pub fn forward_from_features<S: Real>(&self, g: &mut Graph<'_, S>, phi: Var) -> Var {
        let h = self.head.forward(g, phi);
        g.spatial_mean(h)
    }
}

/// Network identifiers, each mapping to a parameter-name prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Net {
    PoseEnc,
    PoseDec,
    EncS,
    EncR,
    DecS,
    DecR,
    DiscS,
    DiscR,
    Map,
    Post,
}

impl Net {
    pub const ALL: [Net; 10] =
        [Net::PoseEnc, Net::PoseDec, Net::EncS, Net::EncR, Net::DecS, Net::DecR, Net::DiscS, Net::DiscR, Net::Map, Net::Post];

    pub fn prefix(self) -> &'static str {
        match self {
            Net::PoseEnc => "pose_enc.",
            Net::PoseDec => "pose_dec.",
            Net::EncS => "enc_s.",
            Net::EncR => "enc_r.",
            Net::DecS => "dec_s.",
            Net::DecR => "dec_r.",
            Net::DiscS => "disc_s.",
            Net::DiscR => "disc_r.",
            Net::Map => "map.",
            Net::Post => "post.",
        }
    }

    pub fn enc(d: Domain) -> Net {
        [Net::EncS, Net::EncR][d.idx()]
    }

    pub fn dec(d: Domain) -> Net {
        [Net::DecS, Net::DecR][d.idx()]
    }

    pub fn disc(d: Domain) -> Net {
        [Net::DiscS, Net::DiscR][d.idx()]
    }
}

#[derive(Clone, Debug)]
pub struct ModelBundle<S> {
    pub config: ArchConfig,
    pub geometry: ArchGeometry,
    pub init_seed: u64,
    pub store: ParamStore<S>,
    pub pose_enc: PoseEncoder,
    pub pose_dec: PoseDecoder,
    enc: [DepthEncoder; 2],
    dec: [DepthDecoder; 2],
    disc: [Discriminator; 2],
    pub map: Mapping,
    pub post: Posterior,
}

fn build_encoder<S: Real>(store: &mut ParamStore<S>, c: &ArchConfig, name: &str, seed: u64, shared_last: Option<&ResBlock>) -> DepthEncoder {
    let slope = c.negative_slope;
    let convs = vec![
        Conv::new(store, &format!("{name}.c1"), 1, c.ch(64), 7, 1, 3, 1, true, seed),
        Conv::new(store, &format!("{name}.c2"), c.ch(64), c.ch(128), 3, 2, 1, 1, true, seed),
        Conv::new(store, &format!("{name}.c3"), c.ch(128), c.ch(256), 3, 2, 1, 1, true, seed),
    ];
    let latent = c.depth_latent_channels;
    let mut blocks = Vec::with_capacity(4);
    for i in 0..4 {
        let bname = format!("{name}.res{}", i + 1);
        let cin = if i == 0 { c.ch(256) } else { latent };
        match (i, shared_last) {
            (3, Some(b)) => blocks.push(b.bind_as(store, &bname)),
            _ => blocks.push(ResBlock::new(store, &bname, cin, latent, c.residual_cardinality, slope, seed)),
        }
    }
    DepthEncoder { convs, blocks, slope }
}

fn build_decoder<S: Real>(store: &mut ParamStore<S>, c: &ArchConfig, name: &str, seed: u64, shared_first: Option<&ResBlock>) -> DepthDecoder {
    let slope = c.negative_slope;
    let latent = c.depth_latent_channels;
    let mut blocks = Vec::with_capacity(4);
    for i in 0..4 {
        let bname = format!("{name}.res{}", i + 1);
        match (i, shared_first) {
            (0, Some(b)) => blocks.push(b.bind_as(store, &bname)),
            _ => blocks.push(ResBlock::new(store, &bname, latent, latent, c.residual_cardinality, slope, seed)),
        }
    }
    let up = vec![
        TConv::new(store, &format!("{name}.up1"), latent, c.ch(256), 3, 2, 1, 1, seed),
        TConv::new(store, &format!("{name}.up2"), c.ch(256), c.ch(128), 3, 2, 1, 1, seed),
    ];
    let out = TConv::new(store, &format!("{name}.out"), c.ch(128), 1, 1, 1, 0, 0, seed);
    DepthDecoder { blocks, up, out, slope }
}

fn disc_channels(c: &ArchConfig) -> [usize; 5] {
    [c.ch(64), c.ch(128), c.ch(256), c.ch(512), c.ch(1024)]
}

fn build_discriminator<S: Real>(
    store: &mut ParamStore<S>,
    c: &ArchConfig,
    geo: &ArchGeometry,
    name: &str,
    seed: u64,
    shared: Option<&Discriminator>,
) -> Discriminator {
    let ch = disc_channels(c);
    let mut convs = Vec::with_capacity(5);
    let mut cin = 1;
    for (i, &cout) in ch.iter().enumerate() {
        let lname = format!("{name}.c{}", i + 1);
        match shared {
            // Layers 3-5 are bound; layers 1-2 stay private.
            Some(s) if i >= 2 => convs.push(s.convs[i].bind_as(store, &lname)),
            _ => convs.push(Conv::new(store, &lname, cin, cout, 3, 2, 1, 1, true, seed)),
        }
        cin = cout;
    }
    let head = match shared {
        Some(s) => s.head.bind_as(store, &format!("{name}.c6")),
        None => Conv::new(store, &format!("{name}.c6"), cin, 1, geo.disc_head_kernel, 1, 0, 1, true, seed),
    };
    Discriminator { convs, head, slope: c.negative_slope }
}

impl<S: Real> ModelBundle<S> {
    pub fn build(config: &ArchConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let seed = init_seed;
        // Stride arithmetic for the discriminator and latent shapes.
        let mut f = c.image_resolution;
        for i in 0..5 {
            f = crate::autodiff::conv_out(f, 3, 2, 1)
                .ok_or_else(|| Error::Construction { layer: format!("disc.c{}", i + 1), reason: "window larger than input".into() })?;
        }
        let head_k = f.min(2);
        let geometry = ArchGeometry { latent: c.latent_shape(), disc_feature: f, disc_patch: f + 1 - head_k, disc_head_kernel: head_k };

        let mut store = ParamStore::new();
        let slope = c.negative_slope;
        let pose_enc = PoseEncoder {
            hidden: Dense::new(&mut store, "pose_enc.fc1", c.pose_dim, c.pose_hidden, seed),
            mu: Dense::new(&mut store, "pose_enc.mu", c.pose_hidden, c.pose_latent_dim, seed),
            logvar: Dense::new(&mut store, "pose_enc.logvar", c.pose_hidden, c.pose_latent_dim, seed),
            slope,
        };
        let pose_dec = PoseDecoder {
            hidden: Dense::new(&mut store, "pose_dec.fc1", c.pose_latent_dim, c.pose_hidden, seed),
            out: Dense::new(&mut store, "pose_dec.fc2", c.pose_hidden, c.pose_dim, seed),
            slope,
        };
        let enc_s = build_encoder(&mut store, c, "enc_s", seed, None);
        let enc_r = build_encoder(&mut store, c, "enc_r", seed, enc_s.blocks.last());
        let dec_s = build_decoder(&mut store, c, "dec_s", seed, None);
        let dec_r = build_decoder(&mut store, c, "dec_r", seed, dec_s.blocks.first());
        let disc_s = build_discriminator(&mut store, c, &geometry, "disc_s", seed, None);
        let disc_r = build_discriminator(&mut store, c, &geometry, "disc_r", seed, Some(&disc_s));

        let plan = mapping_plan(c.latent_spatial())?;
        let inner = [c.ch(1024), c.ch(1024), c.ch(512)];
        let mut layers = Vec::with_capacity(plan.len());
        let mut cin = c.pose_latent_dim;
        for (i, &(k, s, p)) in plan.iter().enumerate() {
            let cout = if i + 1 == plan.len() { c.depth_latent_channels } else { inner[i.min(inner.len() - 1)] };
            layers.push(TConv::new(&mut store, &format!("map.t{}", i + 1), cin, cout, k, s, p, 0, seed));
            cin = cout;
        }
        let map = Mapping { layers, slope };

        let trunk = Discriminator {
            convs: disc_s.convs.iter().enumerate().map(|(i, l)| l.bind_as(&mut store, &format!("post.c{}", i + 1))).collect(),
            head: disc_s.head.clone(),
            slope,
        };
        let head = Conv::new(&mut store, "post.c6", c.ch(1024), c.pose_latent_dim, head_k, 1, 0, 1, true, seed);
        let post = Posterior { trunk, head };

        let bundle = ModelBundle {
            config: c.clone(),
            geometry,
            init_seed,
            store,
            pose_enc,
            pose_dec,
            enc: [enc_s, enc_r],
            dec: [dec_s, dec_r],
            disc: [disc_s, disc_r],
            map,
            post,
        };
        bundle.check_geometry()?;
        Ok(bundle)
    }

    fn check_geometry(&self) -> Result<()> {
        let fail = |layer: &str, reason: String| Err(Error::Construction { layer: layer.into(), reason });
        let c = &self.config;
        let mut s = c.image_resolution;
        for conv in &self.enc[0].convs {
            s = conv.out_size(s).unwrap_or(0);
        }
        if s != c.latent_spatial() {
            return fail("enc.c3", format!("encoder reaches {s}, latent is {}", c.latent_spatial()));
        }
        for u in &self.dec[0].up {
            s = u.out_size(s).unwrap_or(0);
        }
        if s != c.image_resolution {
            return fail("dec.up2", format!("decoder reaches {s}, image is {}", c.image_resolution));
        }
        let mut m = 1;
        for l in &self.map.layers {
            m = l.out_size(m).unwrap_or(0);
        }
        if m != c.latent_spatial() {
            return fail("map", format!("mapping reaches {m}, latent is {}", c.latent_spatial()));
        }
        Ok(())
    }

    pub fn encoder(&self, d: Domain) -> &DepthEncoder {
        &self.enc[d.idx()]
    }

    pub fn decoder(&self, d: Domain) -> &DepthDecoder {
        &self.dec[d.idx()]
    }

    pub fn discriminator(&self, d: Domain) -> &Discriminator {
        &self.disc[d.idx()]
    }

    /// Distinct storage cells reachable from the given networks.
    pub fn cells(&self, nets: &[Net]) -> CellSet {
        let mut set = CellSet::none(self.store.cell_count());
        for n in nets {
            for id in self.store.cells_with_prefix(n.prefix()) {
                set.insert(id);
            }
        }
        set
    }

    /// The posterior's private output layer.
    pub fn posterior_head_cells(&self) -> CellSet {
        let mut ids: Vec<CellId> = vec![self.post.head.w];
        ids.extend(self.post.head.b);
        CellSet::from_cells(self.store.cell_count(), ids)
    }

    pub fn all_cells(&self) -> CellSet {
        CellSet::all(self.store.cell_count())
    }

    /// Forward-only evaluation in a throwaway graph with no trainable cells.
    pub fn eval<R>(&self, f: impl FnOnce(&mut Graph<'_, S>) -> R) -> R {
        let none = CellSet::none(self.store.cell_count());
        let mut g = Graph::with_trainable(&self.store, &none);
        f(&mut g)
    }

    pub fn pose_vectors(&self, poses: &[&crate::posekit::PoseVec]) -> Tensor<S> {
        let d = self.config.pose_dim;
        let mut data = Vec::with_capacity(poses.len() * d);
        for p in poses {
            assert_eq!(p.values.len(), d, "pose vector length");
            data.extend(p.values.iter().map(|&v| S::from_f64(v)));
        }
        Tensor::from_vec(&[poses.len(), d], data)
    }

    fn check_images(&self, x: &Tensor<S>) -> Result<()> {
        let r = self.config.image_resolution;
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != r || s[3] != r {
            return Err(Error::Shape { context: "depth batch", expected: vec![s.first().copied().unwrap_or(0), 1, r, r], got: s.to_vec() });
        }
        Ok(())
    }

    fn finite(t: Tensor<S>, what: &'static str) -> Result<Tensor<S>> {
        if t.all_finite() {
            Ok(t)
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// Mean and log-variance of the pose posterior, `[N, d]` each.
    pub fn encode_pose(&self, y: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let (mu, lv) = self.eval(|g| {
            let y = g.input(y.clone());
            let (m, l) = self.pose_enc.forward(g, y);
            (g.value(m).clone(), g.value(l).clone())
        });
        Ok((Self::finite(mu, "pose encoder mean")?, Self::finite(lv, "pose encoder log-variance")?))
    }

    pub fn decode_pose(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        Self::finite(
            self.eval(|g| {
                let z = g.input(z.clone());
                let y = self.pose_dec.forward(g, z);
                g.value(y).clone()
            }),
            "pose decoder",
        )
    }

    /// Latent mean (evaluation mode, no sampling noise).
    pub fn encode_depth(&self, x: &Tensor<S>, d: Domain) -> Result<Tensor<S>> {
        self.check_images(x)?;
        Ok(self.eval(|g| {
            let x = g.input(x.clone());
            let z = self.enc[d.idx()].forward(g, x);
            g.value(z).clone()
        }))
    }

    pub fn decode_depth(&self, z: &Tensor<S>, d: Domain) -> Tensor<S> {
        self.eval(|g| {
            let z = g.input(z.clone());
            let x = self.dec[d.idx()].forward(g, z);
            g.value(x).clone()
        })
    }

    /// `(patch_logits, penultimate features)`.
    pub fn discriminate(&self, x: &Tensor<S>, d: Domain) -> Result<(Tensor<S>, Tensor<S>)> {
        self.check_images(x)?;
        Ok(self.eval(|g| {
            let x = g.input(x.clone());
            let o = self.disc[d.idx()].forward(g, x);
            (g.value(o.logits).clone(), g.value(o.phi).clone())
        }))
    }

    pub fn map_latent(&self, z: &Tensor<S>) -> Tensor<S> {
        self.eval(|g| {
            let z = g.input(z.clone());
            let m = self.map.forward(g, z);
            g.value(m).clone()
        })
    }

    pub fn posterior(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_images(x)?;
        Ok(self.eval(|g| {
            let x = g.input(x.clone());
            let p = self.post.forward(g, x);
            g.value(p).clone()
        }))
    }

    /// `G_to(E_from(x))`.
    pub fn translate(&self, x: &Tensor<S>, from: Domain, to: Domain) -> Result<Tensor<S>> {
        self.check_images(x)?;
        Ok(self.eval(|g| {
            let x = g.input(x.clone());
            let z = self.enc[from.idx()].forward(g, x);
            let y = self.dec[to.idx()].forward(g, z);
            g.value(y).clone()
        }))
    }

    /// `G_y(P(x))`, unclipped normalized pose vectors.
    pub fn predict_pose_raw(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_images(x)?;
        Self::finite(
            self.eval(|g| {
                let x = g.input(x.clone());
                let z = self.post.forward(g, x);
                let y = self.pose_dec.forward(g, z);
                g.value(y).clone()
            }),
            "pose prediction",
        )
    }

    /// `G_to(M(mu_y(y)))`.
    pub fn render_from_pose(&self, y: &Tensor<S>, to: Domain) -> Tensor<S> {
        self.eval(|g| {
            let y = g.input(y.clone());
            let (mu, _) = self.pose_enc.forward(g, y);
            let z = self.map.forward(g, mu);
            let x = self.dec[to.idx()].forward(g, z);
            g.value(x).clone()
        })
    }

    /// Decodes pose latents into all three domains.
    pub fn decode_latent_all(&self, z: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
        self.eval(|g| {
            let z = g.input(z.clone());
            let y = self.pose_dec.forward(g, z);
            let zx = self.map.forward(g, z);
            let xs = self.dec[0].forward(g, zx);
            let xr = self.dec[1].forward(g, zx);
            (g.value(y).clone(), g.value(xs).clone(), g.value(xr).clone())
        })
    }

    pub fn images(&self, imgs: &[&DepthImage]) -> Tensor<S> {
        DepthImage::batch_tensor(imgs)
    }
}

/// `mu + exp(logvar / 2) * eps` with `eps` drawn from the stream `seed`.
pub fn sample_pose_latent<S: Real>(mu: &Tensor<S>, logvar: &Tensor<S>, seed: u64) -> Tensor<S> {
    let mut r = rng::stream(seed, &[rng::tag::LATENT]);
    let mut eps = Tensor::<S>::zeros(mu.shape());
    rng::fill_normal(&mut r, eps.data_mut());
    let half = S::from_f64(0.5);
    let mut out = mu.clone();
    for ((o, &lv), &e) in out.data_mut().iter_mut().zip(logvar.data()).zip(eps.data()) {
        *o += (lv * half).exp() * e;
    }
    out
}

