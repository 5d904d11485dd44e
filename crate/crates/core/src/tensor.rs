//! Dense row-major f32 tensors and the handful of kernels the engine needs.
//!
//! Every kernel is a pure function with a fixed evaluation order, so results
//! are bit-reproducible across runs and machines.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::rng::{Seed, SplitMix64};

pub const RMS_EPS: f32 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim_err(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Build a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim_err("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[product of leading dims, last dim]`.
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.cols()).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(dim_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// View as a 2-D `[rows, cols]` tensor.
    pub fn as_matrix(&self) -> Self {
        Self { shape: vec![self.rows(), self.cols()], data: self.data.clone() }
    }

    pub fn transpose(&self) -> Result<Self> {
        let [m, n] = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::new(vec![n, m], out)
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape.as_slice() {
            [m, n] => Ok([*m, *n]),
            s => Err(dim_err(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// Rows `start..end` of the `[rows, cols]` view, as a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows() {
            return Err(dim_err(format!(
                "row range {start}..{end} outside 0..{}",
                self.rows()
            )));
        }
        let c = self.cols();
        Self::new(vec![end - start, c], self.data[start * c..end * c].to_vec())
    }

    /// Stack matrices vertically.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Self> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(dim_err("concat_rows: column count mismatch"));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Self::new(vec![rows, cols], data)
    }

    /// Join matrices side by side (channel concatenation).
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Self> {
        let rows = parts.first().map_or(0, |t| t.rows());
        if parts.iter().any(|p| p.rows() != rows) {
            return Err(dim_err("concat_cols: row count mismatch"));
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Self::new(vec![rows, cols], data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f32) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.data.len() != other.data.len() || self.cols() != other.cols() {
            return Err(dim_err(format!(
                "elementwise shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    /// Broadcast-add a vector to every row.
    pub fn add_row(&self, v: &[f32]) -> Result<Self> {
        if v.len() != self.cols() {
            return Err(dim_err("add_row: vector length differs from column count"));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(v.len()) {
            for (x, b) in row.iter_mut().zip(v) {
                *x += b;
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Largest elementwise absolute difference. Shapes must hold equal counts.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.data.len(), other.data.len(), "max_abs_diff: length mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Shape and every element equal at the bit level.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Matrix product with accumulation over the inner dimension in ascending
/// index order for every output element.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = a.dims2()?;
    let [k2, n] = b.dims2()?;
    if k != k2 {
        return Err(dim_err(format!("matmul inner dims {k} vs {k2}")));
    }
    let mut out = vec![0.0f32; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let b_row = &bd[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a × bᵀ` without materializing the transpose.
pub fn matmul_transposed(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = a.dims2()?;
    let [n, k2] = b.dims2()?;
    if k != k2 {
        return Err(dim_err(format!("matmul_transposed inner dims {k} vs {k2}")));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let ar = &a.data()[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b.data()[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for p in 0..k {
                acc += ar[p] * br[p];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Row-wise softmax with max subtraction. `-inf` entries act as masked
/// positions; NaN is rejected.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let cols = x.cols();
    let mut out = x.clone().as_matrix();
    if cols == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if max == f32::NEG_INFINITY {
            return Err(dim_err("softmax row is fully masked"));
        }
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += f64::from(*v);
        }
        let inv = (1.0 / sum) as f32;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    out.reshape(x.shape())
}

/// `x / sqrt(mean(x²) + 1e-6) * gain`, per row of the last dimension.
pub fn rmsnorm(x: &Tensor, gain: &[f32]) -> Result<Tensor> {
    let cols = x.cols();
    if cols == 0 {
        return Err(dim_err("rmsnorm over a zero-length row"));
    }
    if gain.len() != cols {
        return Err(dim_err(format!("rmsnorm gain length {} vs row length {cols}", gain.len())));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let ms = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / cols as f64;
        let inv = (1.0 / (ms + f64::from(RMS_EPS)).sqrt()) as f32;
        for (v, g) in row.iter_mut().zip(gain) {
            *v = *v * inv * g;
        }
    }
    Ok(out)
}

/// GELU, tanh approximation, evaluated as `v · sigmoid(2u)` which equals
/// `0.5 · v · (1 + tanh(u))`.
pub fn gelu(x: &Tensor) -> Tensor {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    x.map(|v| v / (1.0 + (-2.0 * C * (v + 0.044_715 * v * v * v)).exp()))
}

/// Deterministic N(0, scale²) samples drawn from the seed's SplitMix64 stream.
pub fn gaussian_init(shape: &[usize], seed: Seed, scale: f32) -> Result<Tensor> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::Config(format!("gaussian_init scale must be finite and >= 0, got {scale}")));
    }
    let n: usize = shape.iter().product();
    if scale == 0.0 {
        return Ok(Tensor::zeros(shape));
    }
    let mut rng = SplitMix64::from(seed);
    let data = (0..n).map(|_| (rng.next_gaussian() * f64::from(scale)) as f32).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let [m, k] = a.dims2().unwrap();
        let [_, n] = b.dims2().unwrap();
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += f64::from(a.data()[i * k + p]) * f64::from(b.data()[p * n + j]);
                }
            }
        }
        out
    }

    #[test]
    fn deserialize_checks_shape() {
        let ok: Tensor = serde_json::from_str(r#"{"shape":[2],"data":[1.0,2.0]}"#).unwrap();
        assert_eq!(ok.shape(), &[2]);
        assert!(serde_json::from_str::<Tensor>(r#"{"shape":[3],"data":[1.0]}"#).is_err());
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap(), b);
    }

    #[test]
    fn matmul_row_times_column() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_random_8x8_matches_triple_loop() {
        let a = gaussian_init(&[8, 8], Seed(11), 1.0).unwrap();
        let b = gaussian_init(&[8, 8], Seed(12), 1.0).unwrap();
        let c = matmul(&a, &b).unwrap();
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((f64::from(*x) - y).abs() < 1e-6 * 8.0, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_transposed_agrees_with_explicit_transpose() {
        let a = gaussian_init(&[5, 7], Seed(1), 1.0).unwrap();
        let b = gaussian_init(&[3, 7], Seed(2), 1.0).unwrap();
        let lhs = matmul_transposed(&a, &b).unwrap();
        let rhs = matmul(&a, &b.transpose().unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-5);
    }

    #[test]
    fn softmax_uniform_and_saturated() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![1000.0, 0.0, 0.0]]).unwrap();
        let y = softmax_rows(&x).unwrap();
        for v in y.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        assert!((y.row(1)[0] - 1.0).abs() < 1e-7);
        assert!(y.row(1)[1] < 1e-30);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let y = softmax_rows(&x).unwrap();
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for (got, want) in y.data().iter().zip(e.iter().map(|v| v / s)) {
            assert!((f64::from(*got) - want).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = Tensor::from_rows(&[vec![f32::NAN, 0.0]]).unwrap();
        assert!(softmax_rows(&x).is_err());
    }

    #[test]
    fn rmsnorm_constant_and_zero_rows() {
        let x = Tensor::from_rows(&[vec![2.0; 4], vec![0.0; 4]]).unwrap();
        let y = rmsnorm(&x, &[1.0; 4]).unwrap();
        for v in y.row(0) {
            assert!((v - 1.0).abs() < 1e-6);
        }
        assert_eq!(y.row(1), &[0.0; 4]);
    }

    #[test]
    fn rmsnorm_matches_direct_formula() {
        let x = gaussian_init(&[1, 16], Seed(5), 2.0).unwrap();
        let gain = gaussian_init(&[16], Seed(6), 1.0).unwrap();
        let y = rmsnorm(&x, gain.data()).unwrap();
        let ms: f64 = x.data().iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / 16.0;
        let denom = (ms + 1e-6).sqrt();
        for i in 0..16 {
            let want = f64::from(x.data()[i]) / denom * f64::from(gain.data()[i]);
            assert!((f64::from(y.data()[i]) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn rmsnorm_errors() {
        assert!(rmsnorm(&Tensor::zeros(&[2, 0]), &[]).is_err());
        assert!(rmsnorm(&Tensor::zeros(&[2, 3]), &[1.0; 2]).is_err());
    }

    #[test]
    fn gaussian_init_contracts() {
        assert!(gaussian_init(&[4, 4], Seed(3), 0.0).unwrap().data().iter().all(|&v| v == 0.0));
        let a = gaussian_init(&[32, 32], Seed(9), 0.5).unwrap();
        let b = gaussian_init(&[32, 32], Seed(9), 0.5).unwrap();
        assert!(a.bit_eq(&b));
        assert!(gaussian_init(&[2], Seed(0), -1.0).is_err());
    }

    #[test]
    fn gaussian_init_statistics() {
        let t = gaussian_init(&[64, 64], Seed(1), 0.02).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = t.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.018..=0.022).contains(&sd), "stddev {sd}");
        assert!(mean.abs() < 0.002, "mean {mean}");
    }

    fn matrix(max: usize) -> impl Strategy<Value = (usize, usize, usize, Vec<f32>, Vec<f32>)> {
        (1..=max, 1..=max, 1..=max).prop_flat_map(|(m, k, n)| {
            (
                Just(m),
                Just(k),
                Just(n),
                prop::collection::vec(-4.0f32..4.0, m * k),
                prop::collection::vec(-4.0f32..4.0, k * n),
            )
        })
    }

    proptest! {
        #[test]
        fn matmul_matches_oracle((m, k, n, a, b) in matrix(16)) {
            let a = Tensor::new(vec![m, k], a).unwrap();
            let b = Tensor::new(vec![k, n], b).unwrap();
            let c = matmul(&a, &b).unwrap();
            let scale: f64 = (0..m * k).map(|i| f64::from(a.data()[i].abs())).fold(1.0, f64::max)
                * (0..k * n).map(|i| f64::from(b.data()[i].abs())).fold(1.0, f64::max) * k as f64;
            for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
                prop_assert!((f64::from(*x) - y).abs() <= 1e-5 * scale);
            }
        }

        #[test]
        fn softmax_rows_sum_to_one_and_permute(row in prop::collection::vec(-30.0f32..30.0, 1..24), rot in 0usize..24) {
            let n = row.len();
            let x = Tensor::new(vec![1, n], row.clone()).unwrap();
            let y = softmax_rows(&x).unwrap();
            let s: f64 = y.data().iter().map(|&v| f64::from(v)).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);

            let r = rot % n;
            let mut permuted = row.clone();
            permuted.rotate_left(r);
            let yp = softmax_rows(&Tensor::new(vec![1, n], permuted).unwrap()).unwrap();
            let mut expected = y.data().to_vec();
            expected.rotate_left(r);
            for (a, b) in yp.data().iter().zip(&expected) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }

        #[test]
        fn kernels_are_pure(seed in any::<u64>()) {
            let x = gaussian_init(&[3, 8], Seed(seed), 1.0).unwrap();
            let g = vec![1.5f32; 8];
            prop_assert!(rmsnorm(&x, &g).unwrap().bit_eq(&rmsnorm(&x, &g).unwrap()));
            prop_assert!(softmax_rows(&x).unwrap().bit_eq(&softmax_rows(&x).unwrap()));
        }
    }
}
