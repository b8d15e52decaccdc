//! Cuts the desk-scale MNIST "5" subset out of the full IDX files.
//!
//! cargo run --release --example make_desk_subset -- <mnist-dir> <out-dir> [train-count] [test-count]

use std::path::PathBuf;

use diffusion_crossover::dataio::idx;

fn take_fives(images: &[u8], labels: &[u8], count: usize) -> (Vec<u8>, Vec<u8>, usize, usize) {
    let (n, rows, cols, pixels) = idx::parse_images(images).expect("image file");
    let labels = idx::parse_labels(labels).expect("label file");
    assert_eq!(n, labels.len());
    let mut out = Vec::new();
    let mut kept = 0;
    for (i, &l) in labels.iter().enumerate() {
        if l == 5 && kept < count {
            out.extend_from_slice(&pixels[i * rows * cols..(i + 1) * rows * cols]);
            kept += 1;
        }
    }
    (out, vec![5; kept], rows, cols)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: make_desk_subset <mnist-dir> <out-dir> [train-count] [test-count]");
        std::process::exit(2);
    }
    let src = PathBuf::from(&args[0]);
    let dst = PathBuf::from(&args[1]);
    let n_train: usize = args
        .get(2)
        .map_or(1000, |s| s.parse().expect("train count"));
    let n_test: usize = args.get(3).map_or(100, |s| s.parse().expect("test count"));
    std::fs::create_dir_all(&dst).unwrap();
    for (split, count) in [("train", n_train), ("t10k", n_test)] {
        let images = std::fs::read(src.join(format!("{split}-images.idx3-ubyte"))).unwrap();
        let labels = std::fs::read(src.join(format!("{split}-labels.idx1-ubyte"))).unwrap();
        let (pixels, labs, rows, cols) = take_fives(&images, &labels, count);
        let name = if split == "train" {
            "fives-train"
        } else {
            "fives-test"
        };
        std::fs::write(
            dst.join(format!("{name}-images.idx3-ubyte")),
            idx::encode_images(rows, cols, &pixels),
        )
        .unwrap();
        std::fs::write(
            dst.join(format!("{name}-labels.idx1-ubyte")),
            idx::encode_labels(&labs),
        )
        .unwrap();
        println!("{name}: {} images", labs.len());
    }
}
