//! Context-vector export with an optional 2-D PCA projection.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Projects the rows of `data` onto its `dims` leading principal axes.
///
/// Each axis is signed so that its largest-magnitude loading is positive,
/// which keeps the output deterministic.
pub fn pca_project(data: &Array2<f64>, dims: usize) -> Result<Array2<f64>> {
    let (n, d) = data.dim();
    if n == 0 || dims > d {
        return Err(Error::Shape(format!("cannot project {n}×{d} data onto {dims} axes")));
    }
    let mean = data.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = data - &mean;
    let m = DMatrix::from_row_iterator(n, d, centered.iter().copied());
    let cov = m.transpose() * &m / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = Array2::zeros((n, dims));
    for (c, &axis) in order.iter().take(dims).enumerate() {
        let mut v = eig.eigenvectors.column(axis).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            v = -v;
        }
        let projected = &m * v;
        for r in 0..n {
            out[[r, c]] = projected[r];
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// `id,label,c0..c{C-1}[,pc1,pc2]` rows.
pub fn write_context_csv(
    path: &Path,
    keys: &[(String, String)],
    contexts: &Array2<f64>,
    pca: Option<&Array2<f64>>,
) -> Result<()> {
    if keys.len() != contexts.nrows() || pca.is_some_and(|p| p.nrows() != contexts.nrows()) {
        return Err(Error::Shape("context rows, keys and projection disagree".into()));
    }
    let mut out = String::from("id,label");
    for c in 0..contexts.ncols() {
        out.push_str(&format!(",c{c}"));
    }
    if let Some(p) = pca {
        for c in 0..p.ncols() {
            out.push_str(&format!(",pc{}", c + 1));
        }
    }
    out.push('\n');
    for (r, (id, label)) in keys.iter().enumerate() {
        out.push_str(&csv_field(id));
        out.push(',');
        out.push_str(&csv_field(label));
        for v in contexts.row(r) {
            out.push_str(&format!(",{v}"));
        }
        if let Some(p) = pca {
            for v in p.row(r) {
                out.push_str(&format!(",{v}"));
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_is_centered_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = Array2::from_shape_fn((50, 6), |(_, j)| rng.random_range(-1.0..1.0) * (j + 1) as f64);
        let p = pca_project(&data, 2).unwrap();
        for c in 0..2 {
            assert!(p.column(c).mean().unwrap().abs() < 1e-12);
        }
        let var = |c: usize| p.column(c).iter().map(|x| x * x).sum::<f64>();
        assert!(var(0) >= var(1));
    }

    #[test]
    fn recovers_a_line() {
        // Points on the direction (3, 4) / 5 project to their signed offsets.
        let t = [-2.0, -1.0, 0.5, 2.5];
        let data = Array2::from_shape_fn((4, 2), |(i, j)| t[i] * [0.6, 0.8][j] + 1.0);
        let p = pca_project(&data, 1).unwrap();
        let mean = t.iter().sum::<f64>() / 4.0;
        for (i, &ti) in t.iter().enumerate() {
            assert!((p[[i, 0]] - (ti - mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let ctx = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let keys = vec![("a".to_owned(), "walk".to_owned()), ("b".to_owned(), "x,y".to_owned())];
        write_context_csv(&path, &keys, &ctx, None).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "id,label,c0,c1,c2\na,walk,1,2,3\nb,\"x,y\",4,5,6\n");
    }
}
