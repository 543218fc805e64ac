//! Labeled image sets: IDX (optionally gzip-compressed) and CIFAR-style raw
//! binary records, with splitting, minibatching and shift augmentation.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `(n, c, h, w)` with pixel values in `[0, 1]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                message: format!("bad gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), "truncated header"))
}

/// Parse an IDX buffer: magic, big-endian dimension sizes, then raw bytes.
fn parse_idx<'a>(bytes: &'a [u8], magic: u32, path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    let got = be_u32(bytes, 0, path)?;
    if got != magic {
        return Err(format_err(path, 0, format!("magic {got:#010x}, expected {magic:#010x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|d| be_u32(bytes, 4 + 4 * d, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndims;
    let count: usize = dims.iter().product();
    if bytes.len() < start + count {
        return Err(format_err(path, bytes.len(), format!("payload needs {count} bytes after offset {start}")));
    }
    Ok((dims, &bytes[start..start + count]))
}

/// Load an IDX image/label pair (raw or gzip), scaling pixels to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = read_maybe_gz(images)?;
    let lb = read_maybe_gz(labels)?;
    let (idims, pixels) = parse_idx(&ib, IDX_IMAGES_MAGIC, images)?;
    let (ldims, lab) = parse_idx(&lb, IDX_LABELS_MAGIC, labels)?;
    if idims[0] != ldims[0] {
        return Err(Error::Data(format!(
            "{} holds {} images but {} holds {} labels",
            images.display(),
            idims[0],
            labels.display(),
            ldims[0]
        )));
    }
    let data = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let images = Tensor::from_vec([idims[0], 1, idims[1], idims[2]], data)?;
    let labels: Vec<usize> = lab.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Ok(Dataset { images, labels, classes })
}

/// Write a single-channel set as uncompressed IDX (pixels rounded to bytes).
pub fn write_idx(ds: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    let [n, c, h, w] = ds.images.shape();
    if c != 1 {
        return Err(Error::invalid("IDX images must have one channel"));
    }
    let mut ib = Vec::with_capacity(16 + n * h * w);
    for v in [IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    ib.extend(ds.images.data().iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lb = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    lb.extend(ds.labels.iter().map(|&l| l as u8));
    for (path, bytes) in [(images, ib), (labels, lb)] {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Generic raw importer for CIFAR-10 style binaries: each record is one label
/// byte followed by `c·h·w` channel-major pixel bytes.
pub fn load_raw_records(path: &Path, shape: [usize; 3], classes: usize) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let item = shape.iter().product::<usize>();
    let rec = 1 + item;
    if bytes.is_empty() || bytes.len() % rec != 0 {
        return Err(format_err(path, bytes.len() - bytes.len() % rec, format!("length is not a multiple of the {rec}-byte record")));
    }
    let n = bytes.len() / rec;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * item);
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let l = r[0] as usize;
        if l >= classes {
            return Err(format_err(path, i * rec, format!("label {l} out of range for {classes} classes")));
        }
        labels.push(l);
        data.extend(r[1..].iter().map(|&p| p as f32 / 255.0));
    }
    let images = Tensor::from_vec([n, shape[0], shape[1], shape[2]], data)?;
    Ok(Dataset { images, labels, classes })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn item_shape(&self) -> [usize; 3] {
        let [_, c, h, w] = self.images.shape();
        [c, h, w]
    }

    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            images: self.images.slice_items(start, end),
            labels: self.labels[start..end].to_vec(),
            classes: self.classes,
        }
    }

    /// Consecutive train/val/test splits of the given sizes.
    pub fn split3(&self, n_train: usize, n_val: usize, n_test: usize) -> Result<(Dataset, Dataset, Dataset)> {
        let need = n_train + n_val + n_test;
        if need > self.len() {
            return Err(Error::Data(format!("splits need {need} items, dataset has {}", self.len())));
        }
        Ok((
            self.slice(0, n_train),
            self.slice(n_train, n_train + n_val),
            self.slice(n_train + n_val, need),
        ))
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        (self.images.gather_items(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Epoch-wise shuffled minibatch indices.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize) -> Self {
        BatchSampler {
            order: (0..n).collect(),
            pos: n,
            batch: batch.clamp(1, n.max(1)),
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }

    pub fn next(&mut self, rng: &mut dyn RngCore) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

/// Shift each image by an independent offset in `[-max, max]²`, zero filling.
pub fn random_shift(x: &Tensor<f32>, max: usize, rng: &mut dyn RngCore) -> Tensor<f32> {
    if max == 0 {
        return x.clone();
    }
    let [n, c, h, w] = x.shape();
    let m = max as i64;
    let mut out = Tensor::zeros(x.shape());
    for img in 0..n {
        let dy = rng.random_range(-m..=m);
        let dx = rng.random_range(-m..=m);
        for ch in 0..c {
            for y in 0..h as i64 {
                let sy = y - dy;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                for xx in 0..w as i64 {
                    let sx = xx - dx;
                    if sx >= 0 && sx < w as i64 {
                        out.set(img, ch, y as usize, xx as usize, x.get(img, ch, sy as usize, sx as usize));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn single_image_header() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, idx_bytes(0x803, &[1, 28, 28], &[255u8; 784])).unwrap();
        fs::write(&lp, idx_bytes(0x801, &[1], &[7])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.images.shape(), [1, 1, 28, 28]);
        assert_eq!(ds.labels, vec![7]);
        assert!(ds.images.data().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn count_mismatch_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, idx_bytes(0x803, &[2, 1, 1], &[0, 1])).unwrap();
        fs::write(&lp, idx_bytes(0x801, &[1], &[0])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Data(_))));
        fs::write(&lp, idx_bytes(0x803, &[1], &[0])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { offset: 0, .. })));
        fs::write(&lp, idx_bytes(0x801, &[3], &[0])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::{write::GzEncoder, Compression};
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i.gz"), dir.path().join("l"));
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&idx_bytes(0x803, &[1, 2, 2], &[0, 51, 102, 255])).unwrap();
        fs::write(&ip, enc.finish().unwrap()).unwrap();
        fs::write(&lp, idx_bytes(0x801, &[1], &[3])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.images.data(), &[0.0, 0.2, 0.4, 1.0]);
    }

    #[test]
    fn raw_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("batch.bin");
        let mut bytes = vec![3u8];
        bytes.extend((0..12).map(|v| v as u8));
        bytes.push(9);
        bytes.extend([255u8; 12]);
        fs::write(&p, &bytes).unwrap();
        let ds = load_raw_records(&p, [3, 2, 2], 10).unwrap();
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.images.shape(), [2, 3, 2, 2]);
        assert_eq!(ds.images.get(1, 2, 1, 1), 1.0);
        fs::write(&p, &bytes[..20]).unwrap();
        assert!(matches!(load_raw_records(&p, [3, 2, 2], 10), Err(Error::Format { .. })));
    }

    #[test]
    fn sampler_covers_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = BatchSampler::new(10, 4);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next(&mut rng)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn shift_moves_pixels() {
        let mut x = Tensor::zeros([1, 1, 5, 5]);
        x.set(0, 0, 2, 2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = random_shift(&x, 1, &mut rng);
        assert_eq!(y.sum_f64(), 1.0);
    }
}
