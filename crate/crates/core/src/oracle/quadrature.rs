use nalgebra::{DMatrix, SymmetricEigen};

/// Gauss–Hermite nodes and weights for the standard normal law
/// (`Σ w_i f(x_i) ≈ E f(Z)`), via the Golub–Welsch eigenproblem.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    if order == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut jacobi = DMatrix::zeros(order, order);
    for k in 1..order {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}
