//! Parameterized layers. Each layer stores only cell ids; the values live
//! in the bundle's [`ParamStore`], which is what makes sharing a matter of
//! binding two layers to the same cells.

use alloc::format;
use alloc::string::String;

use crate::autodiff::{Graph, Var};
use crate::params::{CellId, ParamStore};
use crate::real::Real;
use crate::rng::{self, tag};
use crate::tensor::Tensor;

fn name_tag(name: &str) -> u64 {
    // FNV-1a keeps per-parameter streams independent of construction order.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Zero-mean Gaussian weights with standard deviation `sqrt(2 / fan_in)`.
pub(crate) fn init_weight<S: Real>(store: &mut ParamStore<S>, name: &str, shape: &[usize], fan_in: usize, seed: u64) -> CellId {
    let mut r = rng::stream(seed, &[tag::INIT, name_tag(name)]);
    let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
    let mut t = Tensor::<S>::zeros(shape);
    for v in t.data_mut() {
        *v = S::from_f64(std * rng::normal::<f64, _>(&mut r));
    }
    store.register(name, t)
}

pub(crate) fn init_bias<S: Real>(store: &mut ParamStore<S>, name: &str, n: usize) -> CellId {
    store.register(name, Tensor::zeros(&[n]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub name: String,
    pub w: CellId,
    pub b: Option<CellId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
        seed: u64,
    ) -> Self {
        let w = init_weight(store, &format!("{name}.w"), &[cout, cin / groups, kernel, kernel], cin / groups * kernel * kernel, seed);
        let b = bias.then(|| init_bias(store, &format!("{name}.b"), cout));
        Conv { name: name.into(), w, b, cin, cout, kernel, stride, pad, groups }
    }

    /// Same cells under a new name prefix.
    pub fn bind_as<S: Real>(&self, store: &mut ParamStore<S>, name: &str) -> Self {
        store.bind(&format!("{name}.w"), self.w);
        if let Some(b) = self.b {
            store.bind(&format!("{name}.b"), b);
        }
        Conv { name: name.into(), ..self.clone() }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.pad, self.groups)
    }

    pub fn out_size(&self, size: usize) -> Option<usize> {
        crate::autodiff::conv_out(size, self.kernel, self.stride, self.pad)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TConv {
    pub name: String,
    pub w: CellId,
    pub b: Option<CellId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl TConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
        seed: u64,
    ) -> Self {
        let fan_in = (cin * kernel * kernel / (stride * stride)).max(1);
        let w = init_weight(store, &format!("{name}.w"), &[cin, cout, kernel, kernel], fan_in, seed);
        let b = Some(init_bias(store, &format!("{name}.b"), cout));
        TConv { name: name.into(), w, b, cin, cout, kernel, stride, pad, out_pad }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.tconv2d(x, w, b, self.stride, self.pad, self.out_pad)
    }

    pub fn out_size(&self, size: usize) -> Option<usize> {
        crate::autodiff::tconv_out(size, self.kernel, self.stride, self.pad, self.out_pad)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub name: String,
    pub w: CellId,
    pub b: CellId,
    pub fin: usize,
    pub fout: usize,
}

impl Dense {
    pub fn new<S: Real>(store: &mut ParamStore<S>, name: &str, fin: usize, fout: usize, seed: u64) -> Self {
        let w = init_weight(store, &format!("{name}.w"), &[fout, fin], fin, seed);
        let b = init_bias(store, &format!("{name}.b"), fout);
        Dense { name: name.into(), w, b, fin, fout }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, Some(b))
    }
}

/// Multi-branch residual block: the input is split into `cardinality`
/// channel groups, each transformed by its own 3×3 convolution, the branches
/// are concatenated, fused by a 1×1 convolution and added to the skip path.
/// Both transforms are followed by instance normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub name: String,
    pub grouped: Conv,
    pub fuse: Conv,
    pub skip: Option<Conv>,
    pub slope: f64,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real>(store: &mut ParamStore<S>, name: &str, cin: usize, cout: usize, cardinality: usize, slope: f64, seed: u64) -> Self {
        let grouped = Conv::new(store, &format!("{name}.grouped"), cin, cout, 3, 1, 1, cardinality, false, seed);
        let fuse = Conv::new(store, &format!("{name}.fuse"), cout, cout, 1, 1, 0, 1, false, seed);
        let skip = (cin != cout).then(|| Conv::new(store, &format!("{name}.skip"), cin, cout, 1, 1, 0, 1, false, seed));
        ResBlock { name: name.into(), grouped, fuse, skip, slope }
    }

    pub fn bind_as<S: Real>(&self, store: &mut ParamStore<S>, name: &str) -> Self {
        ResBlock {
            name: name.into(),
            grouped: self.grouped.bind_as(store, &format!("{name}.grouped")),
            fuse: self.fuse.bind_as(store, &format!("{name}.fuse")),
            skip: self.skip.as_ref().map(|s| s.bind_as(store, &format!("{name}.skip"))),
            slope: self.slope,
        }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let h = self.grouped.forward(g, x);
        let h = g.instance_norm(h);
        let h = g.leaky_relu(h, self.slope);
        let h = self.fuse.forward(g, h);
        let h = g.instance_norm(h);
        let s = match &self.skip {
            Some(p) => p.forward(g, x),
            None => x,
        };
        g.add(h, s)
    }

    pub fn cells(&self) -> alloc::vec::Vec<CellId> {
        let mut v = alloc::vec![self.grouped.w, self.fuse.w];
        if let Some(s) = &self.skip {
            v.push(s.w);
        }
        v
    }
}
