use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_in, fan_out, limit)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

/// Random `n × n` orthogonal matrix (Gram-Schmidt on a Gaussian matrix).
pub fn orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array2<f64> {
    loop {
        let mut m: Array2<f64> = Array2::from_shape_simple_fn((n, n), || rng.sample(StandardNormal));
        if gram_schmidt_columns(&mut m) {
            return m;
        }
    }
}

/// Orthonormalizes the columns in place; false if they were (nearly) dependent.
fn gram_schmidt_columns(m: &mut Array2<f64>) -> bool {
    let n = m.ncols();
    for j in 0..n {
        for i in 0..j {
            let dot = m.column(i).dot(&m.column(j));
            let prev = m.column(i).to_owned();
            let mut col = m.column_mut(j);
            col.scaled_add(-dot, &prev);
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        if norm < 1e-10 {
            return false;
        }
        m.column_mut(j).mapv_inplace(|x| x / norm);
    }
    true
}

/// `rows × (blocks · rows)` matrix of independent orthogonal blocks.
pub fn orthogonal_blocks<R: Rng + ?Sized>(rng: &mut R, rows: usize, blocks: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, rows * blocks));
    for b in 0..blocks {
        out.slice_mut(ndarray::s![.., b * rows..(b + 1) * rows])
            .assign(&orthogonal(rng, rows));
    }
    out
}
