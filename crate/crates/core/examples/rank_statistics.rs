//! Spearman correlation with the exact permutation test, and PCA.
//!
//! cargo run --release --example rank_statistics

use diffusion_crossover::metrics::{mid_ranks, permutation_distribution, spearman, Pca};

fn main() -> diffusion_crossover::Result<()> {
    let lambda = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let dist = [0.21, 0.25, 0.24, 0.33, 0.38, 0.36, 0.45, 0.52, 0.50];
    let r = spearman(&lambda, &dist)?;
    println!("rho = {:.4}, p = {:.5} ({:?}, n = {})", r.rho, r.p_value, r.method, r.n);

    println!("mid-ranks of [3, 1, 3, 2]: {:?}", mid_ranks(&[3.0, 1.0, 3.0, 2.0]));
    println!("null distribution of rho for n = 4:");
    for (rho, count) in permutation_distribution(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0])? {
        println!("  {rho:+.1}: {count}");
    }

    // points along one direction plus a little spread
    let pts: Vec<Vec<f64>> = (0..20)
        .map(|i| {
            let s = f64::from(i) / 10.0 - 1.0;
            vec![2.0 * s, -s + 0.01 * f64::from(i % 3), 0.5 * s]
        })
        .collect();
    let pca = Pca::fit(&pts, 2)?;
    println!("explained variance ratio: {:?}", pca.explained_variance_ratio());
    println!("PC1 direction: {:?}", pca.components[0]);
    Ok(())
}
