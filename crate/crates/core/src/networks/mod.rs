//! Architecture descriptors, parameter containers, and forward passes for
//! the three networks: the localizer (regresses the 6-vector transform),
//! the classifier that consumes the focus crop, and the 12-layer baseline.
//!
//! A network is a plain [`ArchDescriptor`] — a layer list — interpreted by
//! one executor ([`forward`]). Parameters live outside any graph in a
//! [`ParamGroup`] and are uploaded as leaves per mini-batch ([`bind`]), so
//! one tape serves one batch and the optimizer updates the external buffers.

pub mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::seeding;
use crate::tensor::{Graph, Tensor};

/// Channel widths of the four inception branches (1×1, reduced 3×3,
/// reduced 5×5, pooled projection).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionSpec {
    pub b1: usize,
    pub b3_reduce: usize,
    pub b3: usize,
    pub b5_reduce: usize,
    pub b5: usize,
    pub pool_proj: usize,
}

impl InceptionSpec {
    pub fn out_channels(&self) -> usize {
        self.b1 + self.b3 + self.b5 + self.pool_proj
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.b1,
            self.b3_reduce,
            self.b3,
            self.b5_reduce,
            self.b5,
            self.pool_proj,
        ];
        if all.iter().any(|&c| c == 0) {
            return Err(Error::contract(
                "inception_spec",
                format!("all branch widths must be >= 1, got {:?}", self),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Act {
    Linear,
    Relu,
    Softmax,
}

/// One layer of a descriptor. Convolutions are same-padded; dense layers
/// flatten spatial input implicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv { out_c: usize, k: usize, relu: bool },
    MaxPool2,
    Inception(InceptionSpec),
    Dense { out: usize, act: Act },
}

/// A network architecture: input geometry plus the layer sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub name: String,
    pub in_channels: usize,
    pub in_side: usize,
    pub layers: Vec<Layer>,
}

impl ArchDescriptor {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Dimension of the network output (head width).
    pub fn output_dim(&self) -> Result<usize> {
        match plan(self)?.1 {
            Feat::Flat(n) => Ok(n),
            Feat::Spatial(c, h, w) => Ok(c * h * w),
        }
    }
}

/// One parameter buffer: a named tensor held outside the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBuf<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// All parameters of one network, in executor order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup<T> {
    pub arch: ArchDescriptor,
    pub bufs: Vec<ParamBuf<T>>,
}

impl<T: Real> ParamGroup<T> {
    pub fn param_count(&self) -> usize {
        self.bufs.iter().map(|b| b.data.len()).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.bufs.iter().map(|b| b.data.len()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.bufs
            .iter()
            .all(|b| b.data.iter().all(|v| v.is_finite()))
    }
}

/// Named parameter groups forming one model: `{localizer, classifier}` for
/// the transformer network or `{baseline}` for the plain CNN.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub groups: Vec<ParamGroup<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn group(&self, name: &str) -> Result<&ParamGroup<T>> {
        self.groups
            .iter()
            .find(|g| g.arch.name == name)
            .ok_or_else(|| {
                Error::contract(
                    "model_params",
                    format!(
                        "no group {:?}; have {:?}",
                        name,
                        self.groups.iter().map(|g| &g.arch.name).collect::<Vec<_>>()
                    ),
                )
            })
    }

    pub fn group_mut(&mut self, name: &str) -> Result<&mut ParamGroup<T>> {
        let names: Vec<String> = self.groups.iter().map(|g| g.arch.name.clone()).collect();
        self.groups
            .iter_mut()
            .find(|g| g.arch.name == name)
            .ok_or_else(|| {
                Error::contract(
                    "model_params",
                    format!("no group {:?}; have {:?}", name, names),
                )
            })
    }

    pub fn all_finite(&self) -> bool {
        self.groups.iter().all(ParamGroup::all_finite)
    }
}

/// Feature shape while walking a descriptor.
enum Feat {
    Spatial(usize, usize, usize),
    Flat(usize),
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    /// He-uniform fan-in for weights; `None` zero-initializes (biases).
    fan_in: Option<usize>,
}

fn conv_specs(prefix: &str, out_c: usize, in_c: usize, k: usize, specs: &mut Vec<ParamSpec>) {
    specs.push(ParamSpec {
        name: format!("{}.w", prefix),
        shape: vec![out_c, in_c, k, k],
        fan_in: Some(in_c * k * k),
    });
    specs.push(ParamSpec {
        name: format!("{}.b", prefix),
        shape: vec![out_c],
        fan_in: None,
    });
}

/// Walk the descriptor: emit parameter specs in executor order and return
/// the output feature shape. All shape feasibility errors surface here.
fn plan(arch: &ArchDescriptor) -> Result<(Vec<ParamSpec>, Feat)> {
    let mut specs = Vec::new();
    let mut feat = Feat::Spatial(arch.in_channels, arch.in_side, arch.in_side);
    for (li, layer) in arch.layers.iter().enumerate() {
        let tag = format!("l{}", li);
        feat = match (layer, feat) {
            (Layer::Conv { out_c, k, .. }, Feat::Spatial(c, h, w)) => {
                if k % 2 == 0 {
                    return Err(Error::contract(
                        format!("{}:{}", arch.name, tag),
                        format!("even kernel {} unsupported for same padding", k),
                    ));
                }
                conv_specs(&format!("{}.conv", tag), *out_c, c, *k, &mut specs);
                Feat::Spatial(*out_c, h, w)
            }
            (Layer::MaxPool2, Feat::Spatial(c, h, w)) => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::dim(
                        format!("{}:{}", arch.name, tag),
                        format!("2x2 pool needs even dims, got {}x{}", h, w),
                    ));
                }
                Feat::Spatial(c, h / 2, w / 2)
            }
            (Layer::Inception(spec), Feat::Spatial(c, h, w)) => {
                spec.validate()?;
                let p = format!("{}.incep", tag);
                conv_specs(&format!("{}.b1", p), spec.b1, c, 1, &mut specs);
                conv_specs(&format!("{}.b3r", p), spec.b3_reduce, c, 1, &mut specs);
                conv_specs(&format!("{}.b3", p), spec.b3, spec.b3_reduce, 3, &mut specs);
                conv_specs(&format!("{}.b5r", p), spec.b5_reduce, c, 1, &mut specs);
                conv_specs(&format!("{}.b5", p), spec.b5, spec.b5_reduce, 5, &mut specs);
                conv_specs(&format!("{}.pp", p), spec.pool_proj, c, 1, &mut specs);
                Feat::Spatial(spec.out_channels(), h, w)
            }
            (Layer::Dense { out, .. }, feat) => {
                let n_in = match feat {
                    Feat::Spatial(c, h, w) => c * h * w,
                    Feat::Flat(n) => n,
                };
                specs.push(ParamSpec {
                    name: format!("{}.dense.w", tag),
                    shape: vec![*out, n_in],
                    fan_in: Some(n_in),
                });
                specs.push(ParamSpec {
                    name: format!("{}.dense.b", tag),
                    shape: vec![*out],
                    fan_in: None,
                });
                Feat::Flat(*out)
            }
            (layer, _) => {
                return Err(Error::contract(
                    format!("{}:{}", arch.name, tag),
                    format!("{:?} cannot follow a dense layer", layer),
                ));
            }
        };
    }
    Ok((specs, feat))
}

/// Head override applied by a builder after the generic initialization.
enum HeadInit<T> {
    /// Keep the generic He-uniform weights.
    Default,
    /// Zero weights, fixed bias — pins the initial network output.
    Constant(Vec<T>),
}

/// Initialize all parameters of `arch` from a per-network seeded stream:
/// He-uniform `±√(6/fan_in)` weights, zero biases.
fn init_group<T: Real>(arch: ArchDescriptor, seed: u64, head: HeadInit<T>) -> Result<ParamGroup<T>> {
    let (specs, _) = plan(&arch)?;
    let mut rng = seeding::stream(seed, &arch.name, 0);
    let mut bufs: Vec<ParamBuf<T>> = specs
        .into_iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let data = match s.fan_in {
                Some(fan) => {
                    let bound = (6.0 / fan as f64).sqrt();
                    (0..n)
                        .map(|_| T::from_f64c(rng.random_range(-bound..bound)))
                        .collect()
                }
                None => vec![T::zero(); n],
            };
            ParamBuf {
                name: s.name,
                shape: s.shape,
                data,
            }
        })
        .collect();
    if let HeadInit::Constant(bias) = head {
        let nb = bufs.len();
        let (bw, bb) = (&mut bufs[nb - 2..]).split_at_mut(1);
        let (bw, bb) = (&mut bw[0], &mut bb[0]);
        if bb.data.len() != bias.len() {
            return Err(Error::dim(
                "init_group",
                format!("head bias wants {} values, got {}", bb.data.len(), bias.len()),
            ));
        }
        bw.data.iter_mut().for_each(|v| *v = T::zero());
        bb.data = bias;
    }
    Ok(ParamGroup { arch, bufs })
}

/// Parameter leaves of one group inside a graph, in executor order.
pub struct BoundGroup {
    pub leaves: Vec<Tensor>,
}

/// Upload a group's parameters as graph leaves for one batch.
pub fn bind<T: Real>(g: &mut Graph<T>, group: &ParamGroup<T>) -> Result<BoundGroup> {
    let leaves = group
        .bufs
        .iter()
        .map(|p| g.leaf(&p.shape, p.data.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundGroup { leaves })
}

/// The inception block: channel concat of a 1×1 branch, a 1×1→3×3 branch,
/// a 1×1→5×5 branch, and a same-padded stride-1 3×3-max-pool→1×1 branch,
/// relu after every convolution; spatial size preserved. `params` holds the
/// 12 tensors in [`plan`] order (w,b per conv).
pub fn inception_block<T: Real>(
    g: &mut Graph<T>,
    x: Tensor,
    spec: &InceptionSpec,
    params: &[Tensor],
) -> Result<Tensor> {
    spec.validate()?;
    if params.len() != 12 {
        return Err(Error::dim(
            "inception_block",
            format!("want 12 parameter tensors, got {}", params.len()),
        ));
    }
    fn conv<T: Real>(g: &mut Graph<T>, x: Tensor, w: Tensor, b: Tensor) -> Result<Tensor> {
        let y = g.conv2d(x, w, b, true)?;
        Ok(g.relu(y))
    }
    let b1 = conv(g, x, params[0], params[1])?;
    let r3 = conv(g, x, params[2], params[3])?;
    let b3 = conv(g, r3, params[4], params[5])?;
    let r5 = conv(g, x, params[6], params[7])?;
    let b5 = conv(g, r5, params[8], params[9])?;
    let pooled = g.maxpool(x, 3, 1, true)?;
    let pp = conv(g, pooled, params[10], params[11])?;
    g.concat_channels(&[b1, b3, b5, pp])
}

/// Run `input` through the descriptor, consuming `bound` leaves in plan
/// order. Input must match the descriptor's geometry.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    group: &ParamGroup<T>,
    bound: &BoundGroup,
    input: Tensor,
) -> Result<Tensor> {
    let arch = &group.arch;
    let shape = g.shape(input).to_vec();
    let spatial_ok = match shape.as_slice() {
        [c, h, w] => *c == arch.in_channels && *h == arch.in_side && *w == arch.in_side,
        [_, c, h, w] => *c == arch.in_channels && *h == arch.in_side && *w == arch.in_side,
        _ => false,
    };
    if !spatial_ok {
        return Err(Error::dim(
            format!("forward[{}]", arch.name),
            format!(
                "input shape {:?}, want [{c},{s},{s}] or [B,{c},{s},{s}]",
                shape,
                c = arch.in_channels,
                s = arch.in_side
            ),
        ));
    }
    if bound.leaves.len() != group.bufs.len() {
        return Err(Error::dim(
            format!("forward[{}]", arch.name),
            format!(
                "bound {} leaves for {} params",
                bound.leaves.len(),
                group.bufs.len()
            ),
        ));
    }
    let mut cur = input;
    let mut cursor = 0usize;
    let mut take = |n: usize| {
        let s = cursor;
        cursor += n;
        s
    };
    for layer in &arch.layers {
        cur = match layer {
            Layer::Conv { relu, .. } => {
                let s = take(2);
                let y = g.conv2d(cur, bound.leaves[s], bound.leaves[s + 1], true)?;
                if *relu {
                    g.relu(y)
                } else {
                    y
                }
            }
            Layer::MaxPool2 => g.maxpool2d(cur)?,
            Layer::Inception(spec) => {
                let s = take(12);
                inception_block(g, cur, spec, &bound.leaves[s..s + 12])?
            }
            Layer::Dense { act, .. } => {
                let s = take(2);
                let x = if g.shape(cur).len() >= 3 {
                    g.flatten_features(cur)?
                } else {
                    cur
                };
                let y = g.dense(x, bound.leaves[s], bound.leaves[s + 1])?;
                match act {
                    Act::Linear => y,
                    Act::Relu => g.relu(y),
                    Act::Softmax => g.softmax_rows(y)?,
                }
            }
        };
    }
    Ok(cur)
}

const INCEPTION: InceptionSpec = InceptionSpec {
    b1: 4,
    b3_reduce: 2,
    b3: 4,
    b5_reduce: 2,
    b5: 2,
    pool_proj: 2,
};

/// Two conv/pool stages, one inception layer, two dense layers — the shared
/// trunk of the localizer and the classifier.
fn trunk_layers(head: Layer) -> Vec<Layer> {
    vec![
        Layer::Conv {
            out_c: 4,
            k: 5,
            relu: true,
        },
        Layer::MaxPool2,
        Layer::Conv {
            out_c: 8,
            k: 3,
            relu: true,
        },
        Layer::MaxPool2,
        Layer::Inception(INCEPTION),
        Layer::Dense {
            out: 32,
            act: Act::Relu,
        },
        head,
    ]
}

pub fn localizer_arch(d_i: usize) -> ArchDescriptor {
    ArchDescriptor {
        name: "localizer".into(),
        in_channels: 3,
        in_side: d_i,
        layers: trunk_layers(Layer::Dense {
            out: 6,
            act: Act::Linear,
        }),
    }
}

pub fn classifier_arch(d_c: usize) -> ArchDescriptor {
    ArchDescriptor {
        name: "classifier".into(),
        in_channels: 3,
        in_side: d_c,
        layers: trunk_layers(Layer::Dense {
            out: 3,
            act: Act::Softmax,
        }),
    }
}

pub fn baseline_arch(d_i: usize) -> ArchDescriptor {
    let conv = |out_c: usize| Layer::Conv {
        out_c,
        k: 3,
        relu: true,
    };
    ArchDescriptor {
        name: "baseline".into(),
        in_channels: 3,
        in_side: d_i,
        layers: vec![
            conv(4),
            Layer::MaxPool2,
            conv(8),
            Layer::MaxPool2,
            conv(8),
            Layer::MaxPool2,
            conv(16),
            Layer::MaxPool2,
            conv(16),
            Layer::MaxPool2,
            Layer::Dense {
                out: 32,
                act: Act::Relu,
            },
            Layer::Dense {
                out: 3,
                act: Act::Softmax,
            },
        ],
    }
}

/// Build the localizer for `d_i`-sided patches. The head starts at zero
/// weights with bias `[ϑ_s,0,0,0,ϑ_s,0]`, so the initial transform is the
/// centered scale-`ϑ_s` crop regardless of the trunk.
pub fn build_localizer<T: Real>(d_i: usize, theta_s: T, seed: u64) -> Result<ParamGroup<T>> {
    let z = T::zero();
    init_group(
        localizer_arch(d_i),
        seed,
        HeadInit::Constant(vec![theta_s, z, z, z, theta_s, z]),
    )
}

/// Build the 7-layer classifier for `d_c`-sided focus crops.
pub fn build_classifier<T: Real>(d_c: usize, seed: u64) -> Result<ParamGroup<T>> {
    init_group(classifier_arch(d_c), seed, HeadInit::Default)
}

/// Build the 12-layer baseline CNN over full `d_i`-sided patches.
pub fn build_baseline<T: Real>(d_i: usize, seed: u64) -> Result<ParamGroup<T>> {
    init_group(baseline_arch(d_i), seed, HeadInit::Default)
}

/// Output handles of one transformer forward pass.
pub struct StnOutputs {
    /// Regressed transform, `[6]` / `[B,6]`.
    pub theta: Tensor,
    /// Focus crop sampled under `theta`, `[3,d_c,d_c]` / `[B,3,d_c,d_c]`.
    pub focus: Tensor,
    /// Class probabilities, `[3]` / `[B,3]`.
    pub probs: Tensor,
}

/// The full transformer chain: localizer → affine grid → bilinear sample →
/// classifier, differentiable end to end. The focus-crop side comes from
/// the classifier's input geometry.
pub fn stn_forward<T: Real>(
    g: &mut Graph<T>,
    localizer: &ParamGroup<T>,
    loc_bound: &BoundGroup,
    classifier: &ParamGroup<T>,
    cla_bound: &BoundGroup,
    patch: Tensor,
) -> Result<StnOutputs> {
    let theta = forward(g, localizer, loc_bound, patch)?;
    let d_c = classifier.arch.in_side;
    let grid = g.affine_grid(theta, d_c, d_c)?;
    let focus = g.bilinear_sample(patch, grid)?;
    let probs = forward(g, classifier, cla_bound, focus)?;
    Ok(StnOutputs {
        theta,
        focus,
        probs,
    })
}
