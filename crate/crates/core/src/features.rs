//! Frozen random convolutional feature stacks, used by the perceptual loss
//! and by the generative metrics.

use autograd::{Graph, Real, Tensor, Var};

use crate::error::Result;
use crate::image_tensor::{to_batch, ImageTensor};
use crate::rng::RngStream;

const SLOPE: f64 = 0.2;

/// Seeded conv stack that is never trained. Layers are 3×3 convolutions
/// with the given widths and strides, each followed by leaky ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFeatures {
    pub seed: u64,
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    layers: Vec<(Tensor<f64>, Tensor<f64>)>,
}

impl ConvFeatures {
    pub fn new(seed: u64, widths: &[usize], strides: &[usize]) -> Self {
        assert_eq!(widths.len(), strides.len(), "one stride per layer");
        let mut rng = RngStream::derived(seed, 0xFEA7);
        let mut channels = 3;
        let mut layers = Vec::with_capacity(widths.len());
        for &w in widths {
            // He-normal keeps activation scale roughly constant with depth.
            let std = (2.0 / (channels * 9) as f64).sqrt();
            let weights: Vec<f64> = (0..w * channels * 9).map(|_| std * rng.normal()).collect();
            let bias: Vec<f64> = (0..w).map(|_| 0.1 * rng.normal()).collect();
            layers.push((Tensor::new(&[w, channels, 3, 3], weights), Tensor::new(&[w], bias)));
            channels = w;
        }
        ConvFeatures { seed, widths: widths.to_vec(), strides: strides.to_vec(), layers }
    }

    /// Perceptual-loss extractor: stride-1 then stride-2 layers.
    pub fn perceptual(seed: u64, widths: &[usize]) -> Self {
        let strides: Vec<usize> = (0..widths.len()).map(|i| if i == 0 { 1 } else { 2 }).collect();
        ConvFeatures::new(seed, widths, &strides)
    }

    /// Metric extractor: widths 16, 32, 64 with strides 1, 2, 2, mean-pooled
    /// to a 64-dimensional embedding.
    pub fn metric(seed: u64) -> Self {
        ConvFeatures::new(seed, &[16, 32, 64], &[1, 2, 2])
    }

    /// Identity string recorded in checkpoints and metric reports.
    pub fn tag(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("-");
        format!("random-conv(seed={},widths={},strides={})", self.seed, join(&self.widths), join(&self.strides))
    }

    pub fn dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }

    /// Activations after every layer for `[B, 3, H, W]` input.
    pub fn activations<'g, R: Real>(&self, x: Var<'g, R>) -> Vec<Var<'g, R>> {
        let graph = x.graph();
        let mut h = x;
        let mut out = Vec::with_capacity(self.layers.len());
        for ((w, b), &stride) in self.layers.iter().zip(&self.strides) {
            h = h.conv2d(graph.constant(w.cast()), Some(graph.constant(b.cast())), stride, 1).leaky_relu(SLOPE);
            out.push(h);
        }
        out
    }

    /// Mean-pooled final-layer embedding of each image.
    pub fn embed(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(16) {
            let graph = Graph::<f64>::new();
            let x = graph.constant(to_batch(chunk)?);
            let last = *self.activations(x).last().expect("at least one layer");
            let pooled = last.mean_spatial().value();
            out.extend(pooled.data().chunks_exact(self.dim()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_are_deterministic_and_sized() {
        let f = ConvFeatures::metric(3);
        let img = ImageTensor::filled(8, 8, [0.2, -0.4, 0.9]);
        let a = f.embed(&[&img, &img]).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].len(), 64);
        assert_eq!(a[0], a[1]);
        assert_eq!(a, ConvFeatures::metric(3).embed(&[&img, &img]).unwrap());
        assert_ne!(ConvFeatures::metric(4).tag(), f.tag());
    }
}
