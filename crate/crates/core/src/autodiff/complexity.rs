use crate::error::{Error, Result};

/// Least-squares fit of measurements over the basis {n^3, n^2, n, 1}, plus a
/// log-log dominant-exponent estimate from the two largest sizes.
#[derive(Debug, Clone)]
pub struct ComplexityFit {
    pub sizes: Vec<f64>,
    pub measurements: Vec<f64>,
    /// Coefficients for [n^3, n^2, n, 1].
    pub coefficients: [f64; 4],
    /// RMS residual of the fit.
    pub residual: f64,
    /// log(m_k / m_{k-1}) / log(n_k / n_{k-1}) over the two largest sizes.
    pub dominant_exponent: f64,
}

/// Fits `measurements(sizes)` to a cubic polynomial basis.
///
/// Requires at least four distinct sizes, sorted ascending, with positive
/// measurements (the dominant exponent is a log-log slope).
pub fn fit_complexity(sizes: &[f64], measurements: &[f64]) -> Result<ComplexityFit> {
    if sizes.len() != measurements.len() {
        return Err(Error::Parameter(
            "sizes and measurements must have equal length".into(),
        ));
    }
    let mut distinct = sizes.to_vec();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::Parameter(format!(
            "need at least 4 distinct sizes, got {}",
            distinct.len()
        )));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("sizes must be strictly increasing".into()));
    }
    if measurements.iter().any(|&m| m <= 0.0) {
        return Err(Error::Parameter("measurements must be positive".into()));
    }

    // Column scaling keeps the normal equations well conditioned.
    let basis = |n: f64| [n * n * n, n * n, n, 1.0];
    let nmax = *sizes.last().unwrap();
    let scale = basis(nmax);

    let m = sizes.len();
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for i in 0..m {
        let b = basis(sizes[i]);
        let row: Vec<f64> = (0..4).map(|j| b[j] / scale[j]).collect();
        for j in 0..4 {
            for k in 0..4 {
                ata[j][k] += row[j] * row[k];
            }
            atb[j] += row[j] * measurements[i];
        }
    }
    let scaled = solve4(ata, atb)?;
    let mut coefficients = [0.0f64; 4];
    for j in 0..4 {
        coefficients[j] = scaled[j] / scale[j];
    }

    let mut ss = 0.0;
    for i in 0..m {
        let b = basis(sizes[i]);
        let pred: f64 = (0..4).map(|j| coefficients[j] * b[j]).sum();
        ss += (pred - measurements[i]).powi(2);
    }
    let residual = (ss / m as f64).sqrt();

    let k = sizes.len();
    let dominant_exponent =
        (measurements[k - 1] / measurements[k - 2]).ln() / (sizes[k - 1] / sizes[k - 2]).ln();

    Ok(ComplexityFit {
        sizes: sizes.to_vec(),
        measurements: measurements.to_vec(),
        coefficients,
        residual,
        dominant_exponent,
    })
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Result<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Numeric("singular normal equations in fit".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}
