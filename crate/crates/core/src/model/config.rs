use defog_tensor::Activation;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    /// Strided convolutions down to a single cell.
    Conv,
    /// Convolution blocks, each ending in a spatially replicated LSTM.
    ConvLstm,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Conv => "C",
            EncoderKind::ConvLstm => "CL",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Gated,
    Residual,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Basic => "basic",
            BlockKind::Gated => "gated",
            BlockKind::Residual => "residual",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    /// Number of encoder convolutions: 4 or 9.
    pub depth: usize,
    pub block: BlockKind,
    pub conv_channels: usize,
    /// Width of the encoder embedding and of every LSTM.
    pub embed_channels: usize,
    pub terrain_channels: usize,
    /// Faction embedding width for both players together; must be even.
    pub faction_channels: usize,
    pub kernel: usize,
    pub decoder_layers: usize,
    pub activation: Activation,
    pub predict_delta: bool,
    pub zero_init_heads: bool,
    pub huber_delta: f64,
    /// Weight of the classification loss.
    pub class_weight: f64,
    pub r: usize,
    pub g: usize,
    pub horizon: f64,
    pub map_height: usize,
    pub map_width: usize,
    pub num_types: usize,
    pub num_factions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(EncoderKind::ConvLstm)
    }
}

impl ModelConfig {
    /// CPU-sized widths on the default 264x264 map with 32-tile cells.
    pub fn desk(encoder: EncoderKind) -> Self {
        Self {
            encoder,
            depth: 4,
            block: BlockKind::Basic,
            conv_channels: 32,
            embed_channels: 64,
            terrain_channels: 8,
            faction_channels: 8,
            kernel: 3,
            decoder_layers: 2,
            activation: Activation::Elu,
            predict_delta: true,
            zero_init_heads: true,
            huber_delta: 1.0,
            class_weight: 1.0,
            r: 32,
            g: 32,
            horizon: 15.0,
            map_height: 264,
            map_width: 264,
            num_types: 6,
            num_factions: 3,
        }
    }

    /// The widths used for the reference parameter counts: 128-channel
    /// convolutions and 256-channel LSTMs.
    pub fn full_width(encoder: EncoderKind, depth: usize) -> Self {
        Self {
            depth,
            conv_channels: 128,
            embed_channels: 256,
            ..Self::desk(encoder)
        }
    }

    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.map_height, self.map_width, self.r, self.g)
    }

    pub fn unit_channels(&self) -> usize {
        2 * self.num_types
    }

    /// Channels of each per-step encoder input: terrain, factions, counts.
    pub fn input_channels(&self) -> usize {
        self.terrain_channels + self.faction_channels + self.unit_channels()
    }

    /// Number of LSTM blocks in the convolutional-LSTM encoder.
    pub fn lstm_blocks(&self) -> usize {
        1 + (self.depth - 4) / 5
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if ![4, 9].contains(&self.depth) {
            return bad(format!("depth must be 4 or 9, got {}", self.depth));
        }
        if self.conv_channels == 0 || self.embed_channels == 0 || self.terrain_channels == 0 {
            return bad("channel widths must be positive".into());
        }
        if self.faction_channels == 0 || self.faction_channels % 2 != 0 {
            return bad("faction_channels must be positive and even".into());
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad("kernel must be odd".into());
        }
        if self.decoder_layers == 0 {
            return bad("decoder needs at least one layer".into());
        }
        if !(self.huber_delta > 0.0) || !(self.class_weight >= 0.0) {
            return bad("huber_delta must be positive and class_weight non-negative".into());
        }
        if self.num_types == 0 || self.num_factions == 0 {
            return bad("need at least one unit type and one faction".into());
        }
        self.spec()?;
        Ok(())
    }

    /// Reads and removes recognised `model.*` keys over `self`.
    pub fn apply(mut self, kv: &mut KeyValues) -> Result<Self> {
        if let Some(v) = kv.take_string("model.encoder") {
            self.encoder = match v.as_str() {
                "C" | "c" | "conv" => EncoderKind::Conv,
                "CL" | "cl" | "conv_lstm" => EncoderKind::ConvLstm,
                _ => return Err(Error::Config(format!("unknown encoder {v:?}"))),
            };
        }
        if let Some(v) = kv.take_string("model.block") {
            self.block = match v.as_str() {
                "basic" => BlockKind::Basic,
                "gated" => BlockKind::Gated,
                "residual" => BlockKind::Residual,
                _ => return Err(Error::Config(format!("unknown block kind {v:?}"))),
            };
        }
        if let Some(v) = kv.take_string("model.activation") {
            self.activation = match v.as_str() {
                "elu" => Activation::Elu,
                "relu" => Activation::Relu,
                _ => return Err(Error::Config(format!("unknown activation {v:?}"))),
            };
        }
        self.depth = kv.take_or("model.depth", self.depth)?;
        self.conv_channels = kv.take_or("model.conv_channels", self.conv_channels)?;
        self.embed_channels = kv.take_or("model.embed_channels", self.embed_channels)?;
        self.terrain_channels = kv.take_or("model.terrain_channels", self.terrain_channels)?;
        self.faction_channels = kv.take_or("model.faction_channels", self.faction_channels)?;
        self.kernel = kv.take_or("model.kernel", self.kernel)?;
        self.decoder_layers = kv.take_or("model.decoder_layers", self.decoder_layers)?;
        self.predict_delta = kv.take_or("model.predict_delta", self.predict_delta)?;
        self.zero_init_heads = kv.take_or("model.zero_init_heads", self.zero_init_heads)?;
        self.huber_delta = kv.take_or("model.huber_delta", self.huber_delta)?;
        self.class_weight = kv.take_or("model.class_weight", self.class_weight)?;
        self.validate()?;
        Ok(self)
    }

    /// Round-trippable `key=value` description, stored in checkpoints.
    pub fn to_text(&self) -> String {
        let act = match self.activation {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
        };
        format!(
            "model.encoder={}\nmodel.depth={}\nmodel.block={}\nmodel.conv_channels={}\nmodel.embed_channels={}\n\
             model.terrain_channels={}\nmodel.faction_channels={}\nmodel.kernel={}\nmodel.decoder_layers={}\n\
             model.activation={act}\nmodel.predict_delta={}\nmodel.zero_init_heads={}\nmodel.huber_delta={}\n\
             model.class_weight={}\nr={}\ng={}\nhorizon={}\nmap_height={}\nmap_width={}\nnum_types={}\nnum_factions={}\n",
            self.encoder.name(),
            self.depth,
            self.block.name(),
            self.conv_channels,
            self.embed_channels,
            self.terrain_channels,
            self.faction_channels,
            self.kernel,
            self.decoder_layers,
            self.predict_delta,
            self.zero_init_heads,
            self.huber_delta,
            self.class_weight,
            self.r,
            self.g,
            self.horizon,
            self.map_height,
            self.map_width,
            self.num_types,
            self.num_factions,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut cfg = Self::desk(EncoderKind::ConvLstm);
        cfg.r = kv.take_or("r", cfg.r)?;
        cfg.g = kv.take_or("g", cfg.g)?;
        cfg.horizon = kv.take_or("horizon", cfg.horizon)?;
        cfg.map_height = kv.take_or("map_height", cfg.map_height)?;
        cfg.map_width = kv.take_or("map_width", cfg.map_width)?;
        cfg.num_types = kv.take_or("num_types", cfg.num_types)?;
        cfg.num_factions = kv.take_or("num_factions", cfg.num_factions)?;
        let cfg = cfg.apply(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }
}
