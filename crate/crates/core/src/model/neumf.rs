//! NeuMF scoring head: a GMF path and a two-layer MLP path over the
//! concatenated user and item vectors, summed to one scalar.

use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuMfHead {
    /// `1 × d` weights on the elementwise product.
    pub gmf: Matrix,
    /// `2d × d`
    pub w1: Matrix,
    pub b1: Matrix,
    /// `d × d/2`
    pub w2: Matrix,
    pub b2: Matrix,
    /// `d/2 × 1`
    pub w3: Matrix,
    pub b3: Matrix,
}

impl NeuMfHead {
    pub fn zeros(dim: usize) -> Self {
        let half = dim / 2;
        NeuMfHead {
            gmf: Matrix::zeros(1, dim),
            w1: Matrix::zeros(2 * dim, dim),
            b1: Matrix::zeros(1, dim),
            w2: Matrix::zeros(dim, half),
            b2: Matrix::zeros(1, half),
            w3: Matrix::zeros(half, 1),
            b3: Matrix::zeros(1, 1),
        }
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("neumf.gmf", &self.gmf),
            ("neumf.w1", &self.w1),
            ("neumf.b1", &self.b1),
            ("neumf.w2", &self.w2),
            ("neumf.b2", &self.b2),
            ("neumf.w3", &self.w3),
            ("neumf.b3", &self.b3),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![
            ("neumf.gmf", &mut self.gmf),
            ("neumf.w1", &mut self.w1),
            ("neumf.b1", &mut self.b1),
            ("neumf.w2", &mut self.w2),
            ("neumf.b2", &mut self.b2),
            ("neumf.w3", &mut self.w3),
            ("neumf.b3", &mut self.b3),
        ]
    }

    fn hidden(&self, u: &[f64], i: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut z0 = Vec::with_capacity(u.len() * 2);
        z0.extend_from_slice(u);
        z0.extend_from_slice(i);
        let mut pre1 = self.w1.vec_mul(&z0);
        axpy(1.0, &self.b1.data, &mut pre1);
        let h1: Vec<f64> = pre1.iter().map(|v| v.max(0.0)).collect();
        let mut pre2 = self.w2.vec_mul(&h1);
        axpy(1.0, &self.b2.data, &mut pre2);
        (z0, pre1, h1, pre2)
    }

    pub fn score(&self, u: &[f64], i: &[f64]) -> f64 {
        let gmf: f64 = self
            .gmf
            .data
            .iter()
            .zip(u.iter().zip(i))
            .map(|(w, (a, b))| w * a * b)
            .sum();
        let (_, _, _, pre2) = self.hidden(u, i);
        let h2: Vec<f64> = pre2.iter().map(|v| v.max(0.0)).collect();
        gmf + dot(&h2, &self.w3.data) + self.b3.data[0]
    }

    /// Accumulate `d_score · ∂score` into the head gradient and the two
    /// input gradients.
    pub fn backward(
        &self,
        u: &[f64],
        i: &[f64],
        d_score: f64,
        grad: &mut NeuMfHead,
        du: &mut [f64],
        di: &mut [f64],
    ) {
        let d = u.len();
        for j in 0..d {
            grad.gmf.data[j] += d_score * u[j] * i[j];
            du[j] += d_score * self.gmf.data[j] * i[j];
            di[j] += d_score * self.gmf.data[j] * u[j];
        }
        let (z0, pre1, h1, pre2) = self.hidden(u, i);
        let h2: Vec<f64> = pre2.iter().map(|v| v.max(0.0)).collect();
        axpy(d_score, &h2, &mut grad.w3.data);
        grad.b3.data[0] += d_score;
        let dpre2: Vec<f64> = self
            .w3
            .data
            .iter()
            .zip(&pre2)
            .map(|(w, p)| if *p > 0.0 { d_score * w } else { 0.0 })
            .collect();
        grad.w2.add_outer(1.0, &h1, &dpre2);
        axpy(1.0, &dpre2, &mut grad.b2.data);
        let dh1 = self.w2.mul_vec(&dpre2);
        let dpre1: Vec<f64> = dh1
            .iter()
            .zip(&pre1)
            .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
            .collect();
        grad.w1.add_outer(1.0, &z0, &dpre1);
        axpy(1.0, &dpre1, &mut grad.b1.data);
        let dz0 = self.w1.mul_vec(&dpre1);
        axpy(1.0, &dz0[..d], du);
        axpy(1.0, &dz0[d..], di);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mlp_with_unit_gmf_is_dot_product() {
        let mut head = NeuMfHead::zeros(3);
        head.gmf.fill(1.0);
        let u = [1.0, -2.0, 0.5];
        let i = [0.3, 0.1, 4.0];
        assert!((head.score(&u, &i) - dot(&u, &i)).abs() < 1e-15);
    }
}
