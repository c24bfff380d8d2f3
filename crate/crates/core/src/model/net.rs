use defog_tensor::{Padding, ParamId, ParamSet, Real, Tape, Tensor, Var};

use super::config::{BlockKind, EncoderKind, ModelConfig};
use crate::baselines::Predictions;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::grid::{CountGrid, GridSpec, TERRAIN_CHANNELS};
use crate::rng::SplitMix64;

/// Parameters of one convolution.
#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

/// One layer of a given block kind. `shortcut` is the 1x1 projection a
/// residual block uses when its input and output widths differ.
#[derive(Clone, Debug)]
struct Block {
    kind: BlockKind,
    first: Conv,
    second: Option<Conv>,
    shortcut: Option<Conv>,
    in_ch: usize,
    out_ch: usize,
}

#[derive(Clone, Copy, Debug)]
struct Lstm {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Stage {
    layers: Vec<Block>,
    /// Spatially replicated LSTM closing a convolutional-LSTM block.
    lstm: Option<Lstm>,
}

#[derive(Clone, Debug)]
struct Layout {
    terrain: Conv,
    factions: ParamId,
    stages: Vec<Stage>,
    latent: Lstm,
    decoder: Vec<Block>,
    regress: Conv,
    classify_w: ParamId,
    classify_b: ParamId,
}

struct Init<'a, T: Real> {
    params: &'a mut ParamSet<T>,
    rng: SplitMix64,
}

impl<T: Real> Init<'_, T> {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(self.rng.uniform(-bound, bound))).collect();
        self.params.add(name, Tensor::new(shape, data).expect("shape matches data"))
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.params.add(name, Tensor::zeros(shape))
    }

    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, stride: usize, zero: bool) -> Conv {
        let shape = [k, k, cin, cout];
        let w = if zero {
            self.zeros(format!("{name}.w"), &shape)
        } else {
            self.uniform(format!("{name}.w"), &shape, (3.0 / (k * k * cin) as f64).sqrt())
        };
        let b = self.zeros(format!("{name}.b"), &[cout]);
        Conv { w, b, stride }
    }

    fn block(&mut self, name: &str, kind: BlockKind, k: usize, cin: usize, cout: usize, stride: usize) -> Block {
        match kind {
            BlockKind::Basic => Block {
                kind,
                first: self.conv(name, k, cin, cout, stride, false),
                second: None,
                shortcut: None,
                in_ch: cin,
                out_ch: cout,
            },
            BlockKind::Gated => Block {
                kind,
                first: self.conv(name, k, cin, 2 * cout, stride, false),
                second: None,
                shortcut: None,
                in_ch: cin,
                out_ch: cout,
            },
            BlockKind::Residual => Block {
                kind,
                first: self.conv(&format!("{name}.a"), k, cin, cout, stride, false),
                second: Some(self.conv(&format!("{name}.b"), k, cout, cout, 1, false)),
                shortcut: (cin != cout).then(|| self.conv(&format!("{name}.proj"), 1, cin, cout, stride, false)),
                in_ch: cin,
                out_ch: cout,
            },
        }
    }

    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> Lstm {
        let w = self.uniform(format!("{name}.w"), &[input + hidden, 4 * hidden], 1.0 / (hidden as f64).sqrt());
        let mut bias = vec![T::zero(); 4 * hidden];
        for v in &mut bias[hidden..2 * hidden] {
            *v = T::one();
        }
        let b = self.params.add(format!("{name}.b"), Tensor::new(&[4 * hidden], bias).expect("bias shape"));
        Lstm { w, b }
    }
}

fn pv(p: &[Var], id: ParamId) -> Var {
    p[id.index()]
}

/// Group sizes of the encoder: the last layer of every group downsamples.
fn conv_groups(depth: usize) -> Vec<usize> {
    let base = depth / 4;
    let extra = depth % 4;
    (0..4).map(|i| base + usize::from(i < extra)).collect()
}

/// Layers per convolutional-LSTM block.
fn lstm_groups(depth: usize, blocks: usize) -> Vec<usize> {
    let base = depth / blocks;
    let extra = depth % blocks;
    (0..blocks).map(|i| base + usize::from(i < extra)).collect()
}

/// Recurrent state of one game: the latent LSTM plus, for the
/// convolutional-LSTM encoder, one per-cell state per block.
struct State {
    latent: (Var, Var),
    spatial: Vec<Option<(Var, Var)>>,
}

/// Tape outputs of one forward pass over a sample.
pub struct ForwardPass {
    /// Unclamped count predictions, `[rows, cols, C_u]` per step.
    pub counts: Vec<Var>,
    /// Enemy type logits, `[num_types]` per step.
    pub logits: Vec<Var>,
}

/// The recurrent encoder-decoder.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    config: ModelConfig,
    spec: GridSpec,
    params: ParamSet<T>,
    layout: Layout,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = config.spec()?;
        let mut params = ParamSet::new();
        let layout = {
            let mut init = Init { params: &mut params, rng: SplitMix64::new(seed) };
            build_layout(&config, &mut init)
        };
        Ok(Self { config, spec, params, layout })
    }

    /// Same architecture with externally supplied parameters, checked by
    /// name and shape.
    pub fn with_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Model(format!(
                "expected {} parameter tensors, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((name, t), (want_name, want)) in params
            .names()
            .iter()
            .zip(params.tensors())
            .zip(model.params.names().iter().zip(model.params.tensors()))
        {
            if name != want_name || t.shape() != want.shape() {
                return Err(Error::Model(format!(
                    "parameter {name} {:?} does not match {want_name} {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.spec != self.spec {
            return Err(Error::Model(format!(
                "sample grid {}x{} (r={}, g={}) does not match the model's {}x{} (r={}, g={})",
                sample.spec.rows, sample.spec.cols, sample.spec.r, sample.spec.g,
                self.spec.rows, self.spec.cols, self.spec.r, self.spec.g
            )));
        }
        if sample.num_types() != self.config.num_types {
            return Err(Error::Model(format!(
                "sample has {} unit types, model {}",
                sample.num_types(),
                self.config.num_types
            )));
        }
        for f in [sample.faction_me, sample.faction_op] {
            if f >= self.config.num_factions {
                return Err(Error::Model(format!("faction {f} outside the embedding table")));
            }
        }
        if sample.terrain.height() != self.spec.height || sample.terrain.width() != self.spec.width {
            return Err(Error::Model("terrain does not match the model's map size".into()));
        }
        if sample.is_empty() {
            return Err(Error::Model("empty sample".into()));
        }
        Ok(())
    }

    fn conv(&self, tape: &mut Tape<T>, p: &[Var], x: Var, c: Conv, k: usize, pad: bool) -> Result<Var> {
        let s = tape.shape(x);
        let padding = if pad { Padding::ceil_mode(s[0], s[1], k, c.stride) } else { Padding::NONE };
        Ok(tape.conv2d(x, pv(p, c.w), Some(pv(p, c.b)), c.stride, padding)?)
    }

    fn block(&self, tape: &mut Tape<T>, p: &[Var], x: Var, b: &Block, k: usize) -> Result<Var> {
        let act = self.config.activation;
        match b.kind {
            BlockKind::Basic => {
                let y = self.conv(tape, p, x, b.first, k, true)?;
                Ok(tape.activate(y, act))
            }
            BlockKind::Gated => {
                let y = self.conv(tape, p, x, b.first, k, true)?;
                Ok(tape.glu(y)?)
            }
            BlockKind::Residual => {
                let y = self.conv(tape, p, x, b.first, k, true)?;
                let y = tape.activate(y, act);
                let y = self.conv(tape, p, y, b.second.expect("residual has two convs"), k, true)?;
                let short = match b.shortcut {
                    Some(proj) => self.conv(tape, p, x, proj, 1, false)?,
                    None if b.first.stride > 1 => tape.subsample(x, b.first.stride)?,
                    None => x,
                };
                debug_assert_eq!(b.in_ch == b.out_ch, b.shortcut.is_none());
                let y = tape.add(y, short)?;
                Ok(tape.activate(y, act))
            }
        }
    }

    /// Terrain and faction embeddings, `[rows, cols, F_T + F_F]`.
    fn encode_static(&self, tape: &mut Tape<T>, p: &[Var], sample: &Sample) -> Result<Var> {
        let (h, w) = self.spec.covered_extent();
        let terrain: Vec<T> = sample.terrain.crop(h, w).into_iter().map(|v| T::from_f64(v as f64)).collect();
        let terrain = tape.constant(Tensor::new(&[h, w, TERRAIN_CHANNELS], terrain)?);
        let t = self.conv(tape, p, terrain, self.layout.terrain, self.spec.r, false)?;
        let t = tape.activate(t, self.config.activation);
        let nf = self.config.num_factions;
        let mut onehot = vec![T::zero(); 2 * nf];
        onehot[sample.faction_me] = T::one();
        onehot[nf + sample.faction_op] = T::one();
        let onehot = tape.constant(Tensor::new(&[2, nf], onehot)?);
        let f = tape.linear(onehot, pv(p, self.layout.factions), None)?;
        let f = tape.reshape(f, &[self.config.faction_channels])?;
        let f = tape.broadcast_spatial(f, self.spec.rows, self.spec.cols)?;
        Ok(tape.concat(&[t, f])?)
    }

    fn grid_tensor(&self, g: &CountGrid) -> Result<Tensor<T>> {
        let data = g.data().iter().map(|&v| T::from_f64(v as f64)).collect();
        Ok(Tensor::new(&[g.rows(), g.cols(), g.channels()], data)?)
    }

    fn zeros(&self, tape: &mut Tape<T>, rows: usize, width: usize) -> (Var, Var) {
        (tape.constant(Tensor::zeros(&[rows, width])), tape.constant(Tensor::zeros(&[rows, width])))
    }

    /// Spatial shape the encoder trunk leaves before sum-pooling, for an
    /// input grid of `rows x cols`.
    pub fn encoder_output_shape(&self, rows: usize, cols: usize) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let p = tape.bind_constant(&self.params);
        let mut h = tape.constant(Tensor::zeros(&[rows, cols, self.config.input_channels()]));
        for stage in &self.layout.stages {
            for b in &stage.layers {
                h = self.block(&mut tape, &p, h, b, self.config.kernel)?;
            }
            if let Some(lstm) = stage.lstm {
                let s = tape.shape(h).to_vec();
                let n = s[0] * s[1];
                let flat = tape.reshape(h, &[n, s[2]])?;
                let (hp, cp) = self.zeros(&mut tape, n, self.config.embed_channels);
                let (hn, _) = tape.lstm_cell(flat, hp, cp, pv(&p, lstm.w), pv(&p, lstm.b))?;
                h = tape.reshape(hn, &[s[0], s[1], self.config.embed_channels])?;
            }
        }
        Ok(tape.shape(h).to_vec())
    }

    /// Builds the full unrolled graph. `p` comes from binding `self.params`.
    pub fn forward_tape(&self, tape: &mut Tape<T>, p: &[Var], sample: &Sample) -> Result<ForwardPass> {
        self.check_sample(sample)?;
        let cfg = &self.config;
        let k = cfg.kernel;
        let (rows, cols) = (self.spec.rows, self.spec.cols);
        let fe = cfg.embed_channels;
        let stat = self.encode_static(tape, p, sample)?;
        let mut state = State {
            latent: self.zeros(tape, 1, fe),
            spatial: vec![None; self.layout.stages.len()],
        };
        let mut out = ForwardPass { counts: Vec::with_capacity(sample.len()), logits: Vec::with_capacity(sample.len()) };
        for obs in &sample.inputs {
            let o = tape.constant(self.grid_tensor(obs)?);
            let x = tape.concat(&[stat, o])?;
            let mut h = x;
            let mut skips = Vec::new();
            for (si, stage) in self.layout.stages.iter().enumerate() {
                for b in &stage.layers {
                    h = self.block(tape, p, h, b, k)?;
                }
                if let Some(lstm) = stage.lstm {
                    let s = tape.shape(h).to_vec();
                    let n = s[0] * s[1];
                    let flat = tape.reshape(h, &[n, s[2]])?;
                    let (hp, cp) = match state.spatial[si] {
                        Some(st) => st,
                        None => self.zeros(tape, n, fe),
                    };
                    let (hn, cn) = tape.lstm_cell(flat, hp, cp, pv(p, lstm.w), pv(p, lstm.b))?;
                    state.spatial[si] = Some((hn, cn));
                    h = tape.reshape(hn, &[s[0], s[1], fe])?;
                    let up = tape.upsample_nearest(h, 1 << (si + 1), rows, cols)?;
                    skips.push(up);
                }
            }
            let emb = tape.sum_spatial(h)?;
            let emb = tape.reshape(emb, &[1, fe])?;
            let (lh, lc) = state.latent;
            let (lh, lc) = tape.lstm_cell(emb, lh, lc, pv(p, self.layout.latent.w), pv(p, self.layout.latent.b))?;
            state.latent = (lh, lc);
            let lat = tape.reshape(lh, &[fe])?;
            let lat = tape.broadcast_spatial(lat, rows, cols)?;
            let mut parts = vec![lat, x];
            parts.extend(skips);
            let mut d = tape.concat(&parts)?;
            for b in &self.layout.decoder {
                d = self.block(tape, p, d, b, 1)?;
            }
            let delta = self.conv(tape, p, d, self.layout.regress, 1, false)?;
            let y = if cfg.predict_delta { tape.add(o, delta)? } else { delta };
            let pooled = tape.sum_spatial(d)?;
            let logits = tape.linear(
                pooled,
                pv(p, self.layout.classify_w),
                Some(pv(p, self.layout.classify_b)),
            )?;
            out.counts.push(y);
            out.logits.push(logits);
        }
        Ok(out)
    }

    /// Mean over steps of Huber(counts) plus `class_weight` times BCE(logits).
    pub fn loss_tape(&self, tape: &mut Tape<T>, pass: &ForwardPass, sample: &Sample) -> Result<LossVars> {
        let delta = T::from_f64(self.config.huber_delta);
        let mut regress = Vec::with_capacity(sample.len());
        let mut classify = Vec::with_capacity(sample.len());
        for ((&y, &c), (target, global)) in pass
            .counts
            .iter()
            .zip(&pass.logits)
            .zip(sample.targets.iter().zip(&sample.global_targets))
        {
            regress.push(tape.huber(y, &self.grid_tensor(target)?, delta)?);
            let g: Vec<T> = global.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
            classify.push(tape.bce_with_logits(c, &Tensor::new(&[g.len()], g)?)?);
        }
        let inv = T::from_f64(1.0 / sample.len() as f64);
        let r = tape.add_n(&regress)?;
        let r = tape.scale(r, inv);
        let c = tape.add_n(&classify)?;
        let c = tape.scale(c, inv);
        let cw = tape.scale(c, T::from_f64(self.config.class_weight));
        let total = tape.add(r, cw)?;
        Ok(LossVars { total, huber: r, bce: c })
    }

    /// Inference: counts clamped at zero, sigmoid global scores.
    pub fn predict(&self, sample: &Sample) -> Result<Predictions> {
        let mut tape = Tape::new();
        let p = tape.bind_constant(&self.params);
        let pass = self.forward_tape(&mut tape, &p, sample)?;
        let (rows, cols, ch) = (self.spec.rows, self.spec.cols, self.config.unit_channels());
        let mut counts = Vec::with_capacity(sample.len());
        let mut global = Vec::with_capacity(sample.len());
        for (&y, &c) in pass.counts.iter().zip(&pass.logits) {
            let data = tape.value(y).data().iter().map(|v| v.as_f64().max(0.0) as f32).collect();
            counts.push(CountGrid::from_data(rows, cols, ch, data)?);
            global.push(tape.value(c).data().iter().map(|v| 1.0 / (1.0 + (-v.as_f64()).exp())).collect());
        }
        Ok(Predictions { counts, global })
    }

    /// Loss value and gradient for every parameter, in parameter order.
    pub fn loss_and_grad(&self, sample: &Sample) -> Result<(LossValues, Vec<Vec<T>>)> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let pass = self.forward_tape(&mut tape, &p, sample)?;
        let l = self.loss_tape(&mut tape, &pass, sample)?;
        let grads = tape.backward(l.total)?.for_params(&p, &self.params);
        Ok((l.values(&tape), grads))
    }

    pub fn loss(&self, sample: &Sample) -> Result<LossValues> {
        let mut tape = Tape::new();
        let p = tape.bind_constant(&self.params);
        let pass = self.forward_tape(&mut tape, &p, sample)?;
        Ok(self.loss_tape(&mut tape, &pass, sample)?.values(&tape))
    }
}

pub struct LossVars {
    pub total: Var,
    pub huber: Var,
    pub bce: Var,
}

impl LossVars {
    fn values<T: Real>(&self, tape: &Tape<T>) -> LossValues {
        LossValues {
            total: tape.value(self.total).item().as_f64(),
            huber: tape.value(self.huber).item().as_f64(),
            bce: tape.value(self.bce).item().as_f64(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    /// Mean Huber over all channels, before any clamping.
    pub huber: f64,
    pub bce: f64,
}

fn build_layout<T: Real>(cfg: &ModelConfig, init: &mut Init<'_, T>) -> Layout {
    let (k, cc, fe) = (cfg.kernel, cfg.conv_channels, cfg.embed_channels);
    let terrain = init.conv("terrain", cfg.r, TERRAIN_CHANNELS, cfg.terrain_channels, cfg.g, false);
    let factions = init.uniform("factions".into(), &[cfg.num_factions, cfg.faction_channels / 2], 1.0);
    let mut stages = Vec::new();
    let mut cin = cfg.input_channels();
    match cfg.encoder {
        EncoderKind::Conv => {
            let groups = conv_groups(cfg.depth);
            let mut layer = 0;
            let mut layers = Vec::new();
            for (gi, &n) in groups.iter().enumerate() {
                for li in 0..n {
                    layer += 1;
                    let last_group = gi + 1 == groups.len();
                    let cout = if last_group && li + 1 == n { fe } else { cc };
                    let stride = if li + 1 == n { 2 } else { 1 };
                    layers.push(init.block(&format!("enc{layer}"), cfg.block, k, cin, cout, stride));
                    cin = cout;
                }
            }
            stages.push(Stage { layers, lstm: None });
        }
        EncoderKind::ConvLstm => {
            let mut layer = 0;
            for (bi, &n) in lstm_groups(cfg.depth, cfg.lstm_blocks()).iter().enumerate() {
                let mut layers = Vec::new();
                for li in 0..n {
                    layer += 1;
                    let stride = if li + 1 == n { 2 } else { 1 };
                    layers.push(init.block(&format!("enc{layer}"), cfg.block, k, cin, cc, stride));
                    cin = cc;
                }
                let lstm = init.lstm(&format!("enc_lstm{}", bi + 1), cc, fe);
                stages.push(Stage { layers, lstm: Some(lstm) });
                cin = fe;
            }
        }
    }
    let latent = init.lstm("latent", fe, fe);
    let skips = if cfg.encoder == EncoderKind::ConvLstm { cfg.lstm_blocks() * fe } else { 0 };
    let mut din = fe + cfg.input_channels() + skips;
    let mut decoder = Vec::new();
    for i in 0..cfg.decoder_layers {
        decoder.push(init.block(&format!("dec{}", i + 1), cfg.block, 1, din, cc, 1));
        din = cc;
    }
    let zero = cfg.zero_init_heads;
    let regress = init.conv("regress", 1, cc, cfg.unit_channels(), 1, zero);
    let classify_w = if zero {
        init.zeros("classify.w".into(), &[cc, cfg.num_types])
    } else {
        init.uniform("classify.w".into(), &[cc, cfg.num_types], (3.0 / cc as f64).sqrt())
    };
    let classify_b = init.zeros("classify.b".into(), &[cfg.num_types]);
    Layout { terrain, factions, stages, latent, decoder, regress, classify_w, classify_b }
}
