#![allow(dead_code)]

use std::path::{Path, PathBuf};

use deepcompress::data::{write_idx, Dataset};
use deepcompress::pipeline::RunConfig;
use deepcompress::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Digit-like synthetic set: class `k` lights a 6×6 block at a class-specific
/// position, plus pixel noise.
pub fn synthetic_digits(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0f32; n * 784];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 10;
        labels.push(k);
        let (r0, c0) = (2 + (k / 5) * 13, 1 + (k % 5) * 5);
        let img = &mut data[i * 784..(i + 1) * 784];
        for p in img.iter_mut() {
            *p = rng.random_range(0.0..0.2);
        }
        let dr: usize = rng.random_range(0..3);
        for r in r0 + dr..r0 + dr + 6 {
            for c in c0..c0 + 6 {
                img[r * 28 + c] = rng.random_range(0.7..1.0);
            }
        }
    }
    Dataset {
        images: Tensor::from_vec([n, 1, 28, 28], data).unwrap(),
        labels,
        classes: 10,
    }
}

pub fn write_synthetic(dir: &Path, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let ds = synthetic_digits(n, seed);
    let (i, l) = (dir.join("images.idx"), dir.join("labels.idx"));
    write_idx(&ds, &i, &l).unwrap();
    (i, l)
}

/// Seconds-scale configuration over synthetic data in `dir`.
pub fn tiny_config(dir: &Path) -> RunConfig {
    let (images, labels) = write_synthetic(dir, 500, 11);
    let mut cfg = RunConfig::default();
    cfg.seed = 3;
    cfg.data.images = images;
    cfg.data.labels = Some(labels);
    cfg.data.train = 300;
    cfg.data.val = 100;
    cfg.data.test = 100;
    cfg.eval_batch = 100;
    cfg.train.epochs = 2;
    cfg.vp.alpha = 0.01;
    cfg.vp.steps = 5;
    cfg.prune.episodes = 2;
    cfg.prune.env.lasso_images = 40;
    cfg.prune.env.lasso_positions = 5;
    cfg.prune.env.lasso_fc_images = 150;
    cfg.prune.env.calibration_images = 50;
    cfg.prune.finetune.epochs = 1;
    cfg.agent.batch_size = 4;
    cfg.quant.episodes = 2;
    cfg.quant.finetune.steps = 5;
    cfg.single_layer.rates = vec![0.0, 0.5];
    cfg
}
