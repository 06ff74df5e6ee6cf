use serde::{Deserialize, Serialize};

use super::NnError;

/// Number of output classes (negative, positive).
pub const N_CLASSES: usize = 2;

/// Architecture of the temporal CNN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_length: usize,
    /// Output channels of each conv block.
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    /// Zero padding added on each side of every convolution input.
    pub padding_per_side: usize,
    pub pool_size: usize,
    pub conv_dropout: f64,
    /// Widths of the hidden fully-connected layers.
    pub dense_widths: Vec<usize>,
    pub dense_dropout: f64,
    pub n_classes: usize,
    /// L2 factor applied to kernels and weight matrices.
    pub weight_decay: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_length: 5000,
            conv_channels: vec![4, 8, 16, 16, 16, 16, 16, 16, 16],
            kernel_size: 8,
            padding_per_side: 6,
            pool_size: 2,
            conv_dropout: 0.01,
            dense_widths: vec![160, 96, 48, 32, 16],
            dense_dropout: 0.1,
            n_classes: N_CLASSES,
            weight_decay: 0.001,
        }
    }
}

/// Output geometry of one conv block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub in_channels: usize,
    pub in_length: usize,
    /// Length after convolution, before pooling.
    pub conv_length: usize,
    pub out_channels: usize,
    /// Length after pooling.
    pub out_length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeFlow {
    pub blocks: Vec<BlockShape>,
    pub flatten: usize,
}

impl ShapeFlow {
    pub fn block_lengths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.out_length).collect()
    }
}

impl ModelConfig {
    /// The stated reference architecture has nine conv and five dense blocks;
    /// smaller stacks are accepted for experiments and tests.
    pub fn is_reference_depth(&self) -> bool {
        self.conv_channels.len() == 9 && self.dense_widths.len() == 5
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::InvalidConfig(msg));
        if self.input_length == 0 {
            return bad("input_length must be positive".into());
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad("conv_channels must be non-empty and positive".into());
        }
        if self.dense_widths.is_empty() || self.dense_widths.contains(&0) {
            return bad("dense_widths must be non-empty and positive".into());
        }
        if self.kernel_size == 0 || self.pool_size == 0 {
            return bad("kernel_size and pool_size must be positive".into());
        }
        if self.n_classes != N_CLASSES {
            return bad(format!("n_classes must be {N_CLASSES}"));
        }
        for (name, p) in [
            ("conv_dropout", self.conv_dropout),
            ("dense_dropout", self.dense_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        self.shape_flow().map(|_| ())
    }

    /// Per-block lengths: `L -> floor((L + 2*pad - kernel + 1) / pool)`.
    pub fn shape_flow(&self) -> Result<ShapeFlow, NnError> {
        let mut blocks = Vec::with_capacity(self.conv_channels.len());
        let mut length = self.input_length;
        let mut channels = 1;
        for (i, &out_channels) in self.conv_channels.iter().enumerate() {
            let padded = length + 2 * self.padding_per_side;
            if padded < self.kernel_size {
                return Err(NnError::ShapeCollapse { block: i });
            }
            let conv_length = padded - self.kernel_size + 1;
            let out_length = conv_length / self.pool_size;
            if out_length == 0 {
                return Err(NnError::ShapeCollapse { block: i });
            }
            blocks.push(BlockShape {
                in_channels: channels,
                in_length: length,
                conv_length,
                out_channels,
                out_length,
            });
            length = out_length;
            channels = out_channels;
        }
        Ok(ShapeFlow {
            blocks,
            flatten: length * channels,
        })
    }

    /// `(inputs, outputs)` of every affine layer, output layer last.
    pub fn dense_shapes(&self) -> Result<Vec<(usize, usize)>, NnError> {
        let mut fan_in = self.shape_flow()?.flatten;
        let mut shapes = Vec::with_capacity(self.dense_widths.len() + 1);
        for &w in &self.dense_widths {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        shapes.push((fan_in, self.n_classes));
        Ok(shapes)
    }

    /// Total number of stored reals, running statistics included.
    pub fn parameter_count(&self) -> Result<usize, NnError> {
        let flow = self.shape_flow()?;
        let conv: usize = flow
            .blocks
            .iter()
            .map(|b| b.out_channels * b.in_channels * self.kernel_size + 5 * b.out_channels)
            .sum();
        let dense: usize = self.dense_shapes()?.iter().map(|(i, o)| i * o + o).sum();
        Ok(conv + dense)
    }
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad(format!("bn_momentum must lie in (0, 1], got {}", self.bn_momentum));
        }
        Ok(())
    }
}
