use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, BnCache, ConvGeom};
use super::params::{ModelParams, ParamTag, ParamTensor};
use super::DetectorConfig;
use crate::data::Image;
use crate::{Error, Result};

/// Raw head output in `[batch][gy][gx][k]` layout with
/// `k = objectness, class logits..., tx, ty, tw, th`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridOutput {
    pub batch: usize,
    pub grid: usize,
    /// Grid at the nominal input size. Box sizes are predicted in units of
    /// `box_cells` cells, so they mean the same pixel extent at any input.
    pub box_cells: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

impl GridOutput {
    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.grid, self.grid, self.k]
    }

    pub fn cell(&self, b: usize, gy: usize, gx: usize) -> &[f64] {
        let off = ((b * self.grid + gy) * self.grid + gx) * self.k;
        &self.data[off..off + self.k]
    }
}

/// A batch of planar square images.
#[derive(Clone, Debug)]
pub struct InputBatch {
    pub batch: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl InputBatch {
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Image>, size: usize) -> Self {
        let plane = 3 * size * size;
        let mut data = Vec::new();
        let mut batch = 0;
        for img in images {
            data.resize(data.len() + plane, 0.0);
            let start = data.len() - plane;
            img.write_chw(size, &mut data[start..]);
            batch += 1;
        }
        Self { batch, size, data }
    }

    pub fn zeros(batch: usize, size: usize) -> Self {
        Self {
            batch,
            size,
            data: vec![0.0; batch * 3 * size * size],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BnIdx {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Copy, Debug)]
struct BlockIdx {
    weight: usize,
    bias: Option<usize>,
    bn: Option<BnIdx>,
    geom: ConvGeom,
}

#[derive(Clone, Copy, Debug)]
struct HeadIdx {
    weight: usize,
    bias: usize,
    geom: ConvGeom,
}

struct BlockTape {
    cols: Vec<f64>,
    bn: Option<BnCache>,
    /// Pre-activation (after BN, before SiLU).
    z: Vec<f64>,
}

/// Everything the backward pass needs from a training-mode forward.
pub struct Tape {
    batch: usize,
    size: usize,
    blocks: Vec<BlockTape>,
    head_cols: Vec<f64>,
}

impl Tape {
    /// Batch statistics per BN block, in block order: (mean, biased var, count).
    pub fn batch_stats(&self) -> impl Iterator<Item = (&[f64], &[f64], usize)> {
        self.blocks
            .iter()
            .filter_map(|b| b.bn.as_ref().map(|c| (c.mean.as_slice(), c.var.as_slice(), c.count)))
    }
}

/// One gradient buffer per parameter tensor; empty for tensors that
/// received no gradient (frozen or running statistics).
pub type Grads = Vec<Vec<f64>>;

/// Parameters plus the layer wiring for a [`DetectorConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub config: DetectorConfig,
    pub params: ModelParams,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut tensors = Vec::new();
        let mut c_in = 3;
        for (i, &c_out) in config.channels.iter().enumerate() {
            let fan_in = c_in * 9;
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            let w: Vec<f64> = (0..c_out * fan_in).map(|_| normal.sample(&mut rng)).collect();
            tensors.push(ParamTensor::new(
                format!("block{i}.conv.weight"),
                ParamTag::ConvOrHead,
                vec![c_out, c_in, 3, 3],
                w,
            ));
            if config.batch_norm {
                let bn = |suffix: &str, tag, v: f64| {
                    ParamTensor::new(format!("block{i}.bn.{suffix}"), tag, vec![c_out], vec![v; c_out])
                };
                tensors.push(bn("weight", ParamTag::BnAffine, 1.0));
                tensors.push(bn("bias", ParamTag::BnAffine, 0.0));
                tensors.push(bn("running_mean", ParamTag::BnRunning, 0.0));
                tensors.push(bn("running_var", ParamTag::BnRunning, 1.0));
            } else {
                tensors.push(ParamTensor::new(
                    format!("block{i}.conv.bias"),
                    ParamTag::ConvOrHead,
                    vec![c_out],
                    vec![0.0; c_out],
                ));
            }
            c_in = c_out;
        }
        let k = config.outputs_per_cell();
        let normal = Normal::new(0.0, 0.01).expect("finite std");
        let hk = config.head_kernel;
        let w: Vec<f64> = (0..k * c_in * hk * hk).map(|_| normal.sample(&mut rng)).collect();
        tensors.push(ParamTensor::new("head.weight", ParamTag::ConvOrHead, vec![k, c_in, hk, hk], w));
        let mut bias = vec![0.0; k];
        // Priors: rare objects, unsure classes, boxes about a quarter of the image.
        bias[0] = logit(0.01);
        for b in &mut bias[1..1 + config.n_classes] {
            *b = logit(0.1);
        }
        bias[k - 2] = logit(0.25);
        bias[k - 1] = logit(0.25);
        tensors.push(ParamTensor::new("head.bias", ParamTag::ConvOrHead, vec![k], bias));
        Ok(Self {
            config,
            params: ModelParams::new(tensors)?,
        })
    }

    /// Rebuilds a detector around existing parameters, checking that every
    /// tensor the wiring expects is present with the right shape and tag.
    pub fn from_params(config: DetectorConfig, params: ModelParams) -> Result<Self> {
        let reference = Detector::new(config.clone())?;
        if reference.params.len() != params.len() {
            return Err(Error::Contract(format!(
                "expected {} tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (want, got) in reference.params.tensors().iter().zip(params.tensors()) {
            if want.name != got.name || want.shape != got.shape || want.tag != got.tag {
                return Err(Error::Contract(format!(
                    "tensor mismatch: expected {} {:?} {}, found {} {:?} {}",
                    want.name, want.shape, want.tag, got.name, got.shape, got.tag
                )));
            }
        }
        Ok(Self { config, params })
    }

    fn wiring(&self, size: usize) -> (Vec<BlockIdx>, HeadIdx) {
        let cfg = &self.config;
        let mut blocks = Vec::with_capacity(cfg.channels.len());
        let mut idx = 0;
        let (mut c_in, mut hw) = (3, size);
        for (&c_out, &stride) in cfg.channels.iter().zip(&cfg.strides()) {
            let geom = ConvGeom {
                c_in,
                h_in: hw,
                w_in: hw,
                c_out,
                kernel: 3,
                stride,
            };
            let weight = idx;
            idx += 1;
            let (bias, bn) = if cfg.batch_norm {
                let bn = BnIdx {
                    gamma: idx,
                    beta: idx + 1,
                    mean: idx + 2,
                    var: idx + 3,
                };
                idx += 4;
                (None, Some(bn))
            } else {
                idx += 1;
                (Some(idx - 1), None)
            };
            blocks.push(BlockIdx { weight, bias, bn, geom });
            c_in = c_out;
            hw = geom.h_out();
        }
        let head = HeadIdx {
            weight: idx,
            bias: idx + 1,
            geom: ConvGeom {
                c_in,
                h_in: hw,
                w_in: hw,
                c_out: cfg.outputs_per_cell(),
                kernel: cfg.head_kernel,
                stride: 1,
            },
        };
        (blocks, head)
    }

    /// The network is fully convolutional: any positive multiple of the
    /// output stride is accepted, the nominal input size included.
    fn check_input(&self, x: &InputBatch) -> Result<()> {
        let stride = self.config.input_size / self.config.grid;
        if x.size == 0 || x.size % stride != 0 || x.data.len() != x.batch * 3 * x.size * x.size {
            return Err(Error::Contract(format!(
                "input batch of size {} is not a multiple of the model stride {stride}",
                x.size
            )));
        }
        if x.batch == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        Ok(())
    }

    /// Eval mode: BN uses running statistics; parameters are untouched.
    pub fn forward(&self, x: &InputBatch) -> Result<GridOutput> {
        self.check_input(x)?;
        Ok(self.run(x, false).0)
    }

    /// Training mode: BN normalizes with batch statistics. Running
    /// statistics are not modified here; see [`Detector::update_running_stats`].
    pub fn forward_train(&self, x: &InputBatch) -> Result<(GridOutput, Tape)> {
        self.check_input(x)?;
        let (out, tape) = self.run(x, true);
        Ok((out, tape.expect("training forward records a tape")))
    }

    fn run(&self, x: &InputBatch, train: bool) -> (GridOutput, Option<Tape>) {
        let (blocks, head) = self.wiring(x.size);
        let p = &self.params;
        let n = x.batch;
        let eps = self.config.bn_eps;
        let mut act = x.data.clone();
        let mut tapes = Vec::with_capacity(blocks.len());
        for blk in &blocks {
            let g = blk.geom;
            let bias = blk.bias.map(|i| p.data(i));
            let (conv, cols) = layers::conv_forward(&g, n, &act, p.data(blk.weight), bias, train);
            let (z, bn_cache) = match blk.bn {
                Some(bn) if train => {
                    let (z, c) = layers::bn_forward_train(
                        n,
                        g.c_out,
                        g.out_plane(),
                        &conv,
                        p.data(bn.gamma),
                        p.data(bn.beta),
                        eps,
                    );
                    (z, Some(c))
                }
                Some(bn) => (
                    layers::bn_forward_eval(
                        n,
                        g.c_out,
                        g.out_plane(),
                        &conv,
                        p.data(bn.gamma),
                        p.data(bn.beta),
                        p.data(bn.mean),
                        p.data(bn.var),
                        eps,
                    ),
                    None,
                ),
                None => (conv, None),
            };
            act = layers::silu_forward(&z);
            if train {
                tapes.push(BlockTape { cols, bn: bn_cache, z });
            }
        }
        let hg = head.geom;
        let (raw, head_cols) = layers::conv_forward(&hg, n, &act, p.data(head.weight), Some(p.data(head.bias)), train);
        let out = nchw_to_cells(&raw, n, hg.c_out, hg.h_out(), self.config.grid);
        let tape = train.then(|| Tape {
            batch: n,
            size: x.size,
            blocks: tapes,
            head_cols,
        });
        (out, tape)
    }

    /// Folds the batch statistics of a training forward into the running
    /// estimates: `r = (1 - m) r + m * batch` with the unbiased variance.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        let (blocks, _) = self.wiring(tape.size);
        let m = self.config.bn_momentum;
        for (blk, bt) in blocks.iter().zip(&tape.blocks) {
            let (Some(bn), Some(cache)) = (blk.bn, bt.bn.as_ref()) else {
                continue;
            };
            let unbias = if cache.count > 1 {
                cache.count as f64 / (cache.count - 1) as f64
            } else {
                1.0
            };
            for (r, v) in self.params.data_mut(bn.mean).iter_mut().zip(&cache.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in self.params.data_mut(bn.var).iter_mut().zip(&cache.var) {
                *r = (1.0 - m) * *r + m * v * unbias;
            }
        }
    }

    /// Gradients of a scalar loss given `d loss / d output`. Frozen tensors
    /// get an empty gradient and their weight gradient is never computed.
    pub fn backward(&self, tape: &Tape, d_out: &GridOutput) -> Grads {
        let (blocks, head) = self.wiring(tape.size);
        let p = &self.params;
        let n = tape.batch;
        let want = |i: usize| p.get(i).trainable();
        let mut grads: Grads = vec![Vec::new(); p.len()];
        let alloc = |grads: &mut Grads, i: usize| {
            if want(i) {
                grads[i] = vec![0.0; p.get(i).data.len()];
            }
        };

        let hg = head.geom;
        let draw = cells_to_nchw(d_out, hg.c_out);
        alloc(&mut grads, head.weight);
        alloc(&mut grads, head.bias);
        let (gw, gb) = two_mut(&mut grads, head.weight, head.bias);
        let mut dact = layers::conv_backward(
            &hg,
            n,
            &tape.head_cols,
            p.data(head.weight),
            &draw,
            nonempty(gw),
            nonempty(gb),
            true,
        )
        .expect("head dx requested");

        for (bi, (blk, bt)) in blocks.iter().zip(&tape.blocks).enumerate().rev() {
            let g = blk.geom;
            layers::silu_backward(&bt.z, &mut dact);
            let dconv = match (blk.bn, bt.bn.as_ref()) {
                (Some(bn), Some(cache)) => {
                    alloc(&mut grads, bn.gamma);
                    alloc(&mut grads, bn.beta);
                    let (dg, db) = two_mut(&mut grads, bn.gamma, bn.beta);
                    layers::bn_backward(
                        n,
                        g.c_out,
                        g.out_plane(),
                        cache,
                        p.data(bn.gamma),
                        &dact,
                        nonempty(dg),
                        nonempty(db),
                    )
                }
                _ => dact,
            };
            alloc(&mut grads, blk.weight);
            let need_dx = bi > 0;
            let dx = match blk.bias {
                Some(bias_idx) => {
                    alloc(&mut grads, bias_idx);
                    let (gw, gb) = two_mut(&mut grads, blk.weight, bias_idx);
                    layers::conv_backward(&g, n, &bt.cols, p.data(blk.weight), &dconv, nonempty(gw), nonempty(gb), need_dx)
                }
                None => {
                    let gw = nonempty(&mut grads[blk.weight]);
                    layers::conv_backward(&g, n, &bt.cols, p.data(blk.weight), &dconv, gw, None, need_dx)
                }
            };
            match dx {
                Some(dx) => dact = dx,
                None => break,
            }
        }
        grads
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn nonempty(v: &mut Vec<f64>) -> Option<&mut [f64]> {
    (!v.is_empty()).then_some(v.as_mut_slice())
}

fn two_mut(v: &mut [Vec<f64>], a: usize, b: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn nchw_to_cells(raw: &[f64], n: usize, k: usize, grid: usize, box_cells: usize) -> GridOutput {
    let plane = grid * grid;
    let mut data = vec![0.0; n * plane * k];
    for b in 0..n {
        for c in 0..k {
            for i in 0..plane {
                data[(b * plane + i) * k + c] = raw[(b * k + c) * plane + i];
            }
        }
    }
    GridOutput {
        batch: n,
        grid,
        box_cells,
        k,
        data,
    }
}

fn cells_to_nchw(out: &GridOutput, k: usize) -> Vec<f64> {
    let plane = out.grid * out.grid;
    let mut raw = vec![0.0; out.data.len()];
    for b in 0..out.batch {
        for c in 0..k {
            for i in 0..plane {
                raw[(b * k + c) * plane + i] = out.data[(b * plane + i) * k + c];
            }
        }
    }
    raw
}
