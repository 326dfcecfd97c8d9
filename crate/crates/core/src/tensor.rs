//! Dense row-major `f64` tensors, the seeded random source, and the
//! elementary operations the layers are assembled from.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A dense n-dimensional array stored in row-major order.
///
/// Element `(i, j)` of an `(R, C)` tensor lives at flat index `i * C + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// One-dimensional tensor over `values`.
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            data: values,
        }
    }

    /// Two-dimensional tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::ShapeMismatch {
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, s)| i >= s) {
            return Err(Error::IndexOutOfBounds {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        Ok(index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (i, s)| acc * s + i))
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.flat_index(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let flat = self.flat_index(index)?;
        self.data[flat] = value;
        Ok(())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Elementwise (Hadamard) product of two tensors of identical shape.
pub fn elementwise_product(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Sum of every element; zero for an empty tensor.
///
/// The result is the exactly rounded sum (Shewchuk's partials), so it does
/// not depend on element order.
pub fn sum_all(a: &Tensor) -> f64 {
    exact_sum(a.data())
}

pub(crate) fn exact_sum(values: &[f64]) -> f64 {
    if !values.iter().all(|v| v.is_finite()) {
        return values.iter().sum();
    }
    let mut partials: Vec<f64> = Vec::new();
    for &value in values {
        let mut x = value;
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // Round-half-even correction when the remaining partials push past a tie.
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Maximum of a non-empty sequence together with the smallest index attaining it.
pub fn max_over_time(values: &[f64]) -> Result<(f64, usize)> {
    let (&first, rest) = values.split_first().ok_or(Error::EmptyInput("max_over_time"))?;
    let mut best = (first, 0);
    for (i, &v) in rest.iter().enumerate() {
        if v > best.0 {
            best = (v, i + 1);
        }
    }
    Ok(best)
}

/// Routes `grad` to `argmax` of a length-`len` map.
pub fn max_over_time_backward(len: usize, argmax: usize, grad: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    out[argmax] = grad;
    out
}

/// Name of the generator backing [`Rng`], recorded in run manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9)";

/// Seeded ChaCha8 stream.
///
/// The same seed yields the same sequence of draws on every platform.
/// [`Rng::derive`] opens an independent stream from the same seed, which is
/// how per-example dropout masks stay identical between single-threaded and
/// parallel training.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent generator on stream `stream` of this seed.
    pub fn derive(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Uniform draw from the half-open interval `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.inner.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

/// He initialization: i.i.d. `Normal(0, 2 / fan_in)`.
pub fn he_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("he_init: fan_in must be at least 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data.iter_mut().for_each(|x| *x = rng.normal(0.0, std));
    Ok(t)
}

/// Xavier (Glorot) uniform initialization on `[-L, L)`, `L = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(format!(
            "xavier_init: fans must be positive (fan_in {fan_in}, fan_out {fan_out})"
        )));
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data.iter_mut().for_each(|x| *x = rng.uniform(-limit, limit));
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    fn sample_variance(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn identity_mask_product() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = elementwise_product(&a, &b).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0, 0.0, 4.0]);
        assert_eq!(out.shape(), &[2, 2]);
    }

    #[test]
    fn product_with_ones_is_identity() {
        let mut rng = Rng::new(3);
        let x = he_init(&[4, 5], 3, &mut rng).unwrap();
        let out = elementwise_product(&x, &Tensor::ones(&[4, 5])).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn product_matches_double_loop() {
        let mut rng = Rng::new(11);
        let a = he_init(&[3, 4], 2, &mut rng).unwrap();
        let b = he_init(&[3, 4], 2, &mut rng).unwrap();
        let out = elementwise_product(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let expected = a.get(&[i, j]).unwrap() * b.get(&[i, j]).unwrap();
                assert_eq!(out.get(&[i, j]).unwrap(), expected);
            }
        }
    }

    #[test]
    fn product_shape_mismatch_reports_both() {
        let err = elementwise_product(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn sum_small_cases() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(sum_all(&a), 10.0);
        assert_eq!(sum_all(&Tensor::zeros(&[5, 5])), 0.0);
        assert_eq!(sum_all(&Tensor::zeros(&[0])), 0.0);
    }

    #[test]
    fn sum_matches_sequential_accumulation() {
        let mut rng = Rng::new(5);
        let v = he_init(&[7], 1, &mut rng).unwrap();
        let mut acc = 0.0;
        for i in 0..7 {
            acc += v.get(&[i]).unwrap();
        }
        assert!((sum_all(&v) - acc).abs() <= 1e-12);
    }

    #[test]
    fn he_variance_matches_two_over_fan_in() {
        let mut rng = Rng::new(2024);
        let t = he_init(&[100_000], 12, &mut rng).unwrap();
        let var = sample_variance(t.data());
        assert!((var - 2.0 / 12.0).abs() / (2.0 / 12.0) < 0.05, "{var}");

        let t = he_init(&[100_000], 2, &mut rng).unwrap();
        let std = sample_variance(t.data()).sqrt();
        assert!((std - 1.0).abs() < 0.05, "{std}");
    }

    #[test]
    fn he_small_shape_is_deterministic() {
        let a = he_init(&[3, 4], 12, &mut Rng::new(9)).unwrap();
        let b = he_init(&[3, 4], 12, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert!(he_init(&[3], 0, &mut Rng::new(9)).is_err());
    }

    #[test]
    fn xavier_bounds_and_variance() {
        let mut rng = Rng::new(77);
        let limit = (6.0f64 / 106.0).sqrt();
        let t = xavier_init(&[100_000], 100, 6, &mut rng).unwrap();
        assert!(t.data().iter().all(|x| x.abs() <= limit));

        let t = xavier_init(&[100_000], 3, 3, &mut rng).unwrap();
        let var = sample_variance(t.data());
        assert!((var - 1.0 / 3.0).abs() / (1.0 / 3.0) < 0.05, "{var}");

        assert_eq!(
            xavier_init(&[2, 2], 3, 3, &mut Rng::new(1)).unwrap(),
            xavier_init(&[2, 2], 3, 3, &mut Rng::new(1)).unwrap()
        );
        assert!(xavier_init(&[2], 0, 3, &mut rng).is_err());
        assert!(xavier_init(&[2], 3, 0, &mut rng).is_err());
    }

    #[test]
    fn exact_sum_survives_cancellation() {
        assert_eq!(exact_sum(&[1e16, 1.0, -1e16]), 1.0);
        assert_eq!(exact_sum(&[0.1; 10]), 1.0);
    }

    #[test]
    fn max_over_time_cases() {
        assert_eq!(max_over_time(&[5.0, 9.0]).unwrap(), (9.0, 1));
        assert_eq!(max_over_time(&[3.0, 3.0, 1.0]).unwrap(), (3.0, 0));
        assert!(max_over_time(&[]).is_err());
    }

    #[test]
    fn max_over_time_matches_linear_scan() {
        let mut rng = Rng::new(8);
        let v: Vec<f64> = (0..20).map(|_| rng.standard_normal()).collect();
        let mut best = 0;
        for i in 0..v.len() {
            if v[i] > v[best] {
                best = i;
            }
        }
        assert_eq!(max_over_time(&v).unwrap(), (v[best], best));
    }

    #[test]
    fn pooling_gradient_matches_finite_differences() {
        let v = [0.3, -1.2, 2.5, 0.7, 2.1];
        let (_, arg) = max_over_time(&v).unwrap();
        let analytic = max_over_time_backward(v.len(), arg, 1.0);
        let eps = 1e-6;
        for i in 0..v.len() {
            let mut plus = v;
            let mut minus = v;
            plus[i] += eps;
            minus[i] -= eps;
            let numeric =
                (max_over_time(&plus).unwrap().0 - max_over_time(&minus).unwrap().0) / (2.0 * eps);
            assert!((numeric - analytic[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn derived_streams_differ_and_repeat() {
        let base = Rng::new(42);
        let a: Vec<u64> = (0..4).map(|_| 0).scan(base.derive(1), |r, _: u64| Some(r.next_u64())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(base.derive(1), |r, _: u64| Some(r.next_u64())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(base.derive(2), |r, _: u64| Some(r.next_u64())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn row_major_get_set_round_trip(rows in 1usize..8, cols in 1usize..8, value in -1e3f64..1e3) {
            let mut t = Tensor::zeros(&[rows, cols]);
            for i in 0..rows {
                for j in 0..cols {
                    t.set(&[i, j], value + (i * cols + j) as f64).unwrap();
                }
            }
            for i in 0..rows {
                for j in 0..cols {
                    prop_assert_eq!(t.data()[i * cols + j], value + (i * cols + j) as f64);
                    prop_assert_eq!(t.get(&[i, j]).unwrap(), t.data()[i * cols + j]);
                }
            }
        }

        #[test]
        fn sum_is_permutation_invariant(values in proptest::collection::vec(-1e3f64..1e3, 0..2000), seed in any::<u64>()) {
            let t = Tensor::from_vec(values.clone());
            let mut shuffled = values;
            Rng::new(seed).shuffle(&mut shuffled);
            let s = Tensor::from_vec(shuffled);
            prop_assert!((sum_all(&t) - sum_all(&s)).abs() <= 1e-12);
        }
    }
}
