//! Deterministic feature augmentations: column splitting, z-score
//! standardization, local degree profiles (plain, padded, and pasted onto
//! the original features), and the column permutation used by the
//! permutation-robustness ablation.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::{degree_vector, Graph};
use rand::seq::SliceRandom;
use rand::Rng;

/// An augmented feature matrix together with a human-readable tag saying
/// which augmentation (and parameters) produced it; the tag ends up in run
/// reports.
#[derive(Debug, Clone)]
pub struct FeatureView {
    pub matrix: Matrix<f64>,
    pub provenance: String,
}

/// Split columns into `[0, ⌈F/2⌉)` and `[⌈F/2⌉, F)`; concatenating the views
/// reconstructs the input bit-for-bit.
pub fn split(x: &Matrix<f64>) -> Result<(FeatureView, FeatureView)> {
    let f = x.cols();
    if f < 2 {
        return Err(Error::Data(format!("split needs at least 2 features, got {f}")));
    }
    let w1 = f.div_ceil(2);
    let mut a = Matrix::zeros(x.rows(), w1);
    let mut b = Matrix::zeros(x.rows(), f - w1);
    for i in 0..x.rows() {
        a.row_mut(i).copy_from_slice(&x.row(i)[..w1]);
        b.row_mut(i).copy_from_slice(&x.row(i)[w1..]);
    }
    Ok((
        FeatureView {
            matrix: a,
            provenance: format!("split[0..{w1})"),
        },
        FeatureView {
            matrix: b,
            provenance: format!("split[{w1}..{f})"),
        },
    ))
}

/// Z-score per column with the population standard deviation; zero-variance
/// columns become all zeros.
pub fn standardize(x: &Matrix<f64>) -> FeatureView {
    let (n, f) = x.shape();
    let mut mean = vec![0.0f64; f];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; f];
    for i in 0..n {
        for ((s, m), v) in var.iter_mut().zip(&mean).zip(x.row(i)) {
            let d = v - m;
            *s += d * d;
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                0.0 // zero-variance column maps to zeros
            }
        })
        .collect();
    let mut out = Matrix::zeros(n, f);
    for i in 0..n {
        for (j, v) in x.row(i).iter().enumerate() {
            out[(i, j)] = (v - mean[j]) * inv_std[j];
        }
    }
    FeatureView {
        matrix: out,
        provenance: "standardize".into(),
    }
}

/// Local degree profile: per node `[deg, min, max, mean, std]` of its
/// neighbors' degrees (population std); isolated nodes get all zeros.
/// Computed on the raw adjacency, not on any renormalized or diffused form.
pub fn ldp(g: &Graph) -> Matrix<f64> {
    let deg = degree_vector(&g.adjacency);
    let n = g.num_nodes();
    let mut out = Matrix::zeros(n, 5);
    for i in 0..n {
        let nd: Vec<f64> = g.adjacency.row_iter(i).map(|(j, _)| deg[j]).collect();
        if nd.is_empty() {
            continue;
        }
        let k = nd.len() as f64;
        let mean = nd.iter().sum::<f64>() / k;
        let var = nd.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / k;
        let row = out.row_mut(i);
        row[0] = deg[i];
        row[1] = nd.iter().cloned().fold(f64::INFINITY, f64::min);
        row[2] = nd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row[3] = mean;
        row[4] = var.sqrt();
    }
    out
}

/// LDP in columns 0–4, zeros in columns 5..f.
pub fn ldp_padded(g: &Graph, f: usize) -> Result<FeatureView> {
    if f < 5 {
        return Err(Error::Data(format!(
            "ldp_padded needs width >= 5, got {f}"
        )));
    }
    let base = ldp(g);
    let mut out = Matrix::zeros(g.num_nodes(), f);
    for i in 0..g.num_nodes() {
        out.row_mut(i)[..5].copy_from_slice(base.row(i));
    }
    Ok(FeatureView {
        matrix: out,
        provenance: format!("ldp_padded({f})"),
    })
}

/// View 1 = `[X | 0]`, view 2 = `[X | LDP]`; both N×(F+5).
pub fn paste(x: &Matrix<f64>, g: &Graph) -> (FeatureView, FeatureView) {
    let zeros = Matrix::zeros(x.rows(), 5);
    let v1 = Matrix::hcat(x, &zeros);
    let v2 = Matrix::hcat(x, &ldp(g));
    (
        FeatureView {
            matrix: v1,
            provenance: "paste[X|0]".into(),
        },
        FeatureView {
            matrix: v2,
            provenance: "paste[X|ldp]".into(),
        },
    )
}

/// Column j of the output is column `perm[j]` of the input.
pub fn permute_features(x: &Matrix<f64>, perm: &[usize]) -> Result<Matrix<f64>> {
    let f = x.cols();
    if perm.len() != f {
        return Err(Error::Data(format!(
            "permutation has {} entries for {f} columns",
            perm.len()
        )));
    }
    let mut seen = vec![false; f];
    for &p in perm {
        if p >= f || seen[p] {
            return Err(Error::Data("permutation is not a bijection".into()));
        }
        seen[p] = true;
    }
    let mut out = Matrix::zeros(x.rows(), f);
    for i in 0..x.rows() {
        let src = x.row(i);
        for (j, &p) in perm.iter().enumerate() {
            out[(i, j)] = src[p];
        }
    }
    Ok(out)
}

/// Uniformly random permutation of `[0, f)`, reproducible from the RNG.
pub fn random_permutation(f: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..f).collect();
    perm.shuffle(rng);
    perm
}
