//! Precoder application and stream superposition.
//!
//! The DDPG action is a flat vector of `3 * N_m * N_n` reals; reshaped
//! row-major into `{V1, V2, V3}` (V1 block first) it precodes the
//! semantic stream and the two jamming streams, which are then summed
//! into the transmitted frame `Y = V1*S1 + V2*S2 + V3*S3`.

use crate::channel::Frame;
use crate::error::{Error, Result};
use crate::linalg::{matmul, Mat};

/// The three precoding matrices, each `N_m x N_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub v1: Mat,
    pub v2: Mat,
    pub v3: Mat,
}

impl PrecoderSet {
    /// All-identity precoders; the stage-2/3 transmission `Y = S1 + S2 + S3`.
    pub fn identity(n: usize) -> Self {
        PrecoderSet {
            v1: Mat::identity(n),
            v2: Mat::identity(n),
            v3: Mat::identity(n),
        }
    }

    /// Semantic stream only: `V1 = I`, `V2 = V3 = 0` (stage 1).
    pub fn semantic_only(n: usize) -> Self {
        PrecoderSet {
            v1: Mat::identity(n),
            v2: Mat::zeros(n, n),
            v3: Mat::zeros(n, n),
        }
    }

    /// Flattens back to the action layout: `vec(V1) || vec(V2) || vec(V3)`,
    /// each block row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.v1.data.len());
        out.extend_from_slice(&self.v1.data);
        out.extend_from_slice(&self.v2.data);
        out.extend_from_slice(&self.v3.data);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.v1.is_finite() && self.v2.is_finite() && self.v3.is_finite()
    }
}

/// Splits a flat action of length `3 * n_m * n_n` into the three
/// precoders, row-major, V1 block first.
pub fn reshape_action(action: &[f64], n_m: usize, n_n: usize) -> Result<PrecoderSet> {
    let block = n_m * n_n;
    if action.len() != 3 * block {
        return Err(Error::shape(
            format!("{} values", 3 * block),
            format!("{} values", action.len()),
            "reshape_action",
        ));
    }
    Ok(PrecoderSet {
        v1: Mat::from_vec(n_m, n_n, action[..block].to_vec()),
        v2: Mat::from_vec(n_m, n_n, action[block..2 * block].to_vec()),
        v3: Mat::from_vec(n_m, n_n, action[2 * block..].to_vec()),
    })
}

/// `Y = V1*S1 + V2*S2 + V3*S3`. All streams must be `N_n x L_c`.
pub fn superpose(s1: &Frame, s2: &Frame, s3: &Frame, v: &PrecoderSet) -> Result<Frame> {
    for (name, s) in [("S1", s1), ("S2", s2), ("S3", s3)] {
        if s.rows != v.v1.cols || s.cols != s1.cols {
            return Err(Error::shape(
                format!("{}x{}", v.v1.cols, s1.cols),
                format!("{}x{}", s.rows, s.cols),
                name,
            ));
        }
    }
    let mut y = matmul(&v.v1, s1);
    y.add_assign(&matmul(&v.v2, s2));
    y.add_assign(&matmul(&v.v3, s3));
    Ok(y)
}

/// Gradient of [`superpose`] with respect to stream `i`: `V_i^T * g`.
pub fn superpose_vjp(v_i: &Mat, grad_out: &Mat) -> Mat {
    matmul(&v_i.transpose(), grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use rand::Rng;

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = derive_stream(seed, "superpose-test");
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Deliberately naive triple-loop product for the oracle.
    fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
        let mut out = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut acc = 0.0;
                for k in 0..a.cols {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn action_length_for_four_antennas_is_48() {
        let action = vec![0.0; 48];
        let v = reshape_action(&action, 4, 4).unwrap();
        assert_eq!(v.v1.rows, 4);
        assert_eq!(v.v1.cols, 4);
        assert!(reshape_action(&vec![0.0; 47], 4, 4).is_err());
    }

    #[test]
    fn identity_block_layout() {
        let mut action = vec![0.0; 48];
        for i in 0..4 {
            action[i * 4 + i] = 1.0;
        }
        let v = reshape_action(&action, 4, 4).unwrap();
        assert_eq!(v.v1, Mat::identity(4));
        assert_eq!(v.v2, Mat::zeros(4, 4));
        assert_eq!(v.v3, Mat::zeros(4, 4));
    }

    #[test]
    fn reshape_then_flatten_is_identity() {
        let action: Vec<f64> = (0..48).map(|i| i as f64 * 0.1 - 2.0).collect();
        let v = reshape_action(&action, 4, 4).unwrap();
        assert_eq!(v.flatten(), action);
    }

    #[test]
    fn jamming_off_passes_semantic_stream() {
        let s1 = random_mat(4, 8, 1);
        let s2 = random_mat(4, 8, 2);
        let s3 = random_mat(4, 8, 3);
        let v = PrecoderSet::semantic_only(4);
        let y = superpose(&s1, &s2, &s3, &v).unwrap();
        assert!(y.max_abs_diff(&s1) < 1e-15);
    }

    #[test]
    fn zero_jamming_streams_reduce_to_v1_s1() {
        let s1 = random_mat(4, 8, 4);
        let z = Mat::zeros(4, 8);
        let v = PrecoderSet {
            v1: random_mat(4, 4, 5),
            v2: random_mat(4, 4, 6),
            v3: random_mat(4, 4, 7),
        };
        let y = superpose(&s1, &z, &z, &v).unwrap();
        assert!(y.max_abs_diff(&naive_matmul(&v.v1, &s1)) < 1e-12);
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let s1 = random_mat(4, 8, 10);
        let s2 = random_mat(4, 8, 11);
        let s3 = random_mat(4, 8, 12);
        let v = PrecoderSet {
            v1: random_mat(4, 4, 13),
            v2: random_mat(4, 4, 14),
            v3: random_mat(4, 4, 15),
        };
        let y = superpose(&s1, &s2, &s3, &v).unwrap();
        let oracle = naive_matmul(&v.v1, &s1)
            .add(&naive_matmul(&v.v2, &s2))
            .add(&naive_matmul(&v.v3, &s3));
        assert!(y.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn linear_in_each_stream() {
        let s1 = random_mat(4, 8, 20);
        let s2 = random_mat(4, 8, 21);
        let s3 = random_mat(4, 8, 22);
        let v = PrecoderSet {
            v1: random_mat(4, 4, 23),
            v2: random_mat(4, 4, 24),
            v3: random_mat(4, 4, 25),
        };
        let alpha = 2.5;
        let y_scaled = superpose(&s1.scale(alpha), &s2, &s3, &v).unwrap();
        let expect = naive_matmul(&v.v1, &s1)
            .scale(alpha)
            .add(&naive_matmul(&v.v2, &s2))
            .add(&naive_matmul(&v.v3, &s3));
        assert!(y_scaled.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let s1 = random_mat(4, 8, 30);
        let s2 = random_mat(4, 8, 31);
        let s3 = random_mat(4, 8, 32);
        let v = PrecoderSet {
            v1: random_mat(4, 4, 33),
            v2: random_mat(4, 4, 34),
            v3: random_mat(4, 4, 35),
        };
        let g = random_mat(4, 8, 36);
        let analytic = superpose_vjp(&v.v1, &g);
        let eps = 1e-6;
        for idx in 0..s1.data.len() {
            let mut sp = s1.clone();
            sp.data[idx] += eps;
            let mut sm = s1.clone();
            sm.data[idx] -= eps;
            let fp = superpose(&sp, &s2, &s3, &v).unwrap().dot(&g);
            let fm = superpose(&sm, &s2, &s3, &v).unwrap().dot(&g);
            let numeric = (fp - fm) / (2.0 * eps);
            assert!((analytic.data[idx] - numeric).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let s1 = random_mat(4, 8, 40);
        let bad = random_mat(3, 8, 41);
        let v = PrecoderSet::identity(4);
        assert!(superpose(&s1, &bad, &s1, &v).is_err());
    }
}
