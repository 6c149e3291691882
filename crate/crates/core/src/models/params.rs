use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A named tensor: trainable parameter or persistent buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Tensor>,
    /// Non-trainable state (normalization running statistics).
    pub buffers: Vec<Tensor>,
}

impl ParamStore {
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn push(&mut self, name: String, shape: &[usize], value: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.params.push(Tensor {
            name,
            shape: shape.to_vec(),
            value,
        });
        self.params.len() - 1
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> usize {
        let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.push(name, shape, value)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], v: f64) -> usize {
        let n = shape.iter().product();
        self.push(name, shape, vec![v; n])
    }

    /// `[blocks·h, h]` with each `h × h` block orthogonal.
    pub fn orthogonal_blocks(&mut self, name: String, blocks: usize, h: usize, rng: &mut ChaCha8Rng) -> usize {
        let mut value = Vec::with_capacity(blocks * h * h);
        for _ in 0..blocks {
            value.extend(orthogonal(h, rng));
        }
        self.push(name, &[blocks * h, h], value)
    }

    /// Appends a weight-norm magnitude initialised to the row norms of `v`.
    pub fn row_norms(&mut self, name: String, v: usize) -> usize {
        let rows = self.params[v].shape[0];
        let per = self.params[v].value.len() / rows;
        let value = self.params[v]
            .value
            .chunks(per)
            .map(|r| libm::sqrt(r.iter().map(|x| x * x).sum::<f64>()))
            .collect();
        self.push(name, &[rows], value)
    }

    pub fn buffer(&mut self, name: String, len: usize, v: f64) -> usize {
        self.buffers.push(Tensor {
            name,
            shape: vec![len],
            value: vec![v; len],
        });
        self.buffers.len() - 1
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .chain(&self.buffers)
            .all(|t| t.value.iter().all(|v| v.is_finite()))
    }
}

/// Random orthogonal `n × n` matrix via Gram-Schmidt on uniform rows.
pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut m: Vec<f64> = Vec::with_capacity(n * n);
    while m.len() < n * n {
        let mut row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let done = m.len() / n;
        for _ in 0..2 {
            for j in 0..done {
                let q = &m[j * n..(j + 1) * n];
                let d: f64 = row.iter().zip(q).map(|(a, b)| a * b).sum();
                row.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-6 {
            m.extend(row.iter().map(|x| x / norm));
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 16;
        let q = orthogonal(n, &mut rng);
        for i in 0..n {
            for j in 0..n {
                let d: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((d - e).abs() < 1e-10);
            }
        }
    }
}
