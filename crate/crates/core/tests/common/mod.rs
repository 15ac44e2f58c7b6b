#![allow(dead_code)]

use std::path::PathBuf;

use qvnn::data::{load_mnist, Dataset, Encoding, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `QVNN_MNIST_DIR`, or `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("QVNN_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn have_mnist() -> bool {
    let dir = mnist_dir();
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .iter()
        .all(|f| dir.join(f).exists())
}

/// Training and test splits, or `None` (with a note on stderr) when the
/// files are not available.
pub fn mnist() -> Option<(Dataset, Dataset)> {
    if !have_mnist() {
        eprintln!("skipping: MNIST files not found in {}", mnist_dir().display());
        return None;
    }
    let dir = mnist_dir();
    Some((load_mnist(&dir, Split::Train).unwrap(), load_mnist(&dir, Split::Test).unwrap()))
}

/// Random 28×28 grayscale images with uniformly drawn labels.
pub fn noise_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..n * 784).map(|_| rng.gen()).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..10)).collect();
    Dataset::new(Encoding::Gray, 28, 28, 10, pixels, labels).unwrap()
}
