//! Residual stacks: a stem conv, equal-width residual blocks, and a linear
//! head. The first `encoder_blocks` blocks form the feature encoder that a
//! classification head can share.

use rand_chacha::ChaCha8Rng;

use super::conv::ConvLayer;
use super::tensor::{add, leaky_relu, Tensor};

/// Negative-side slope of the activation; avoids dead units in tiny nets.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Two 3x3 convs with an identity skip; input and output widths are equal.
pub struct ResidualBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl ResidualBlock {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: ConvLayer::new(channels, channels, 3, 3, 1, rng),
            conv2: ConvLayer::new(channels, channels, 3, 3, 1, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let y = leaky_relu(&self.conv1.forward(x), LEAKY_SLOPE);
        let y = self.conv2.forward(&y);
        leaky_relu(&add(&y, x), LEAKY_SLOPE)
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.conv1.params();
        p.extend(self.conv2.params());
        p
    }
}

/// Stem + residual blocks + linear head. `encode` runs the stem and the
/// first `encoder_blocks` blocks; `decode` runs the rest and the head.
pub struct Backbone {
    pub stem: ConvLayer,
    pub blocks: Vec<ResidualBlock>,
    pub head: ConvLayer,
    pub encoder_blocks: usize,
}

impl Backbone {
    pub fn new(
        in_ch: usize,
        channels: usize,
        n_blocks: usize,
        encoder_blocks: usize,
        out_ch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(encoder_blocks <= n_blocks);
        Self {
            stem: ConvLayer::new(in_ch, channels, 3, 3, 1, rng),
            blocks: (0..n_blocks).map(|_| ResidualBlock::new(channels, rng)).collect(),
            head: ConvLayer::new(channels, out_ch, 3, 3, 1, rng),
            encoder_blocks,
        }
    }

    pub fn encode(&self, x: &Tensor) -> Tensor {
        let mut y = leaky_relu(&self.stem.forward(x), LEAKY_SLOPE);
        for block in &self.blocks[..self.encoder_blocks] {
            y = block.forward(&y);
        }
        y
    }

    pub fn decode(&self, features: &Tensor) -> Tensor {
        let mut y = features.clone();
        for block in &self.blocks[self.encoder_blocks..] {
            y = block.forward(&y);
        }
        self.head.forward(&y)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.decode(&self.encode(x))
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.stem.params();
        for block in &self.blocks {
            p.extend(block.params());
        }
        p.extend(self.head.params());
        p
    }

    /// Stable `(name, tensor)` pairs for checkpoints.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}.stem.weight"), self.stem.weight.clone()),
            (format!("{prefix}.stem.bias"), self.stem.bias.clone()),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            out.push((format!("{prefix}.block{i}.conv1.weight"), block.conv1.weight.clone()));
            out.push((format!("{prefix}.block{i}.conv1.bias"), block.conv1.bias.clone()));
            out.push((format!("{prefix}.block{i}.conv2.weight"), block.conv2.weight.clone()));
            out.push((format!("{prefix}.block{i}.conv2.bias"), block.conv2.bias.clone()));
        }
        out.push((format!("{prefix}.head.weight"), self.head.weight.clone()));
        out.push((format!("{prefix}.head.bias"), self.head.bias.clone()));
        out
    }
}

/// Decoder-only stack (residual blocks + linear head) that consumes
/// features produced by another backbone's encoder.
pub struct DecoderHead {
    pub blocks: Vec<ResidualBlock>,
    pub head: ConvLayer,
}

impl DecoderHead {
    pub fn new(channels: usize, n_blocks: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            blocks: (0..n_blocks).map(|_| ResidualBlock::new(channels, rng)).collect(),
            head: ConvLayer::new(channels, out_ch, 3, 3, 1, rng),
        }
    }

    pub fn forward(&self, features: &Tensor) -> Tensor {
        let mut y = features.clone();
        for block in &self.blocks {
            y = block.forward(&y);
        }
        self.head.forward(&y)
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = Vec::new();
        for block in &self.blocks {
            p.extend(block.params());
        }
        p.extend(self.head.params());
        p
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            out.push((format!("{prefix}.block{i}.conv1.weight"), block.conv1.weight.clone()));
            out.push((format!("{prefix}.block{i}.conv1.bias"), block.conv1.bias.clone()));
            out.push((format!("{prefix}.block{i}.conv2.weight"), block.conv2.weight.clone()));
            out.push((format!("{prefix}.block{i}.conv2.bias"), block.conv2.bias.clone()));
        }
        out.push((format!("{prefix}.head.weight"), self.head.weight.clone()));
        out.push((format!("{prefix}.head.bias"), self.head.bias.clone()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn residual_block_keeps_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = ResidualBlock::new(4, &mut rng);
        let x = Tensor::from_values(&[2, 4, 3, 8], vec![0.1; 2 * 4 * 3 * 8]);
        assert_eq!(block.forward(&x).shape(), vec![2, 4, 3, 8]);
    }

    #[test]
    fn backbone_shapes_and_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Backbone::new(2, 8, 3, 2, 5, &mut rng);
        let x = Tensor::from_values(&[1, 2, 4, 16], vec![0.0; 2 * 4 * 16]);
        let y = net.forward(&x);
        assert_eq!(y.shape(), vec![1, 5, 4, 16]);
        // stem + 3 blocks * 2 convs + head = 8 convs, 2 tensors each
        assert_eq!(net.params().len(), 16);
        assert_eq!(net.named_params("net").len(), 16);
    }

    #[test]
    fn encode_decode_composition_equals_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Backbone::new(1, 6, 2, 1, 1, &mut rng);
        let x = Tensor::from_values(&[1, 1, 3, 8], (0..24).map(|i| (i as f64 * 0.3).sin()).collect());
        let direct = net.forward(&x).values();
        let composed = net.decode(&net.encode(&x)).values();
        assert_eq!(direct, composed);
    }
}
