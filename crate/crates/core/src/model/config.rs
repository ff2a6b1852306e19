use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Output channels per convolution layer.
    pub conv_channels: Vec<usize>,
    /// Time stride per convolution layer.
    pub conv_strides: Vec<usize>,
    pub conv_dilations: Vec<usize>,
    pub conv_kernel: usize,
    /// Number of pyramidal LSTM layers.
    pub plstm_layers: usize,
    /// Consecutive lower-layer outputs concatenated per pLSTM step.
    pub pyramid_factor: usize,
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            conv_channels: vec![32, 32],
            conv_strides: vec![2, 2],
            conv_dilations: vec![1, 2],
            conv_kernel: 3,
            plstm_layers: 2,
            pyramid_factor: 2,
            hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub embedding: usize,
    pub hidden: usize,
    /// Width of the additive attention layer.
    pub attention: usize,
    pub max_decode_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            embedding: 64,
            hidden: 128,
            attention: 128,
            max_decode_len: 16,
        }
    }
}

/// Architecture plus the data-dependent input and output sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub input_dim: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let n = e.conv_channels.len();
        if e.conv_strides.len() != n || e.conv_dilations.len() != n {
            return Err(Error::Validation(
                "conv_channels, conv_strides and conv_dilations must have equal length".into(),
            ));
        }
        if e.conv_strides.iter().chain(&e.conv_dilations).chain(&e.conv_channels).any(|&v| v == 0) {
            return Err(Error::Validation("conv sizes, strides and dilations must be >= 1".into()));
        }
        if e.conv_kernel == 0 {
            return Err(Error::Validation("conv_kernel must be >= 1".into()));
        }
        if e.pyramid_factor < 2 {
            return Err(Error::Validation("pyramid_factor must be >= 2".into()));
        }
        if e.plstm_layers == 0 || e.hidden == 0 {
            return Err(Error::Validation("need at least one pLSTM layer of hidden size >= 1".into()));
        }
        let d = &self.decoder;
        if d.embedding == 0 || d.hidden == 0 || d.attention == 0 || d.max_decode_len == 0 {
            return Err(Error::Validation("decoder sizes must be >= 1".into()));
        }
        if self.input_dim == 0 || self.vocab_size < 5 {
            return Err(Error::Validation(
                "input_dim must be >= 1 and the vocabulary needs at least one content word".into(),
            ));
        }
        Ok(())
    }
}
