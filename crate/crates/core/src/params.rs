use rand::Rng;
use serde::{Deserialize, Serialize};

/// A dense row-major parameter array stored at 64-bit precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamArray {
    pub fn zeros(shape: &[usize]) -> Self {
        ParamArray {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn uniform<R: Rng>(shape: &[usize], range: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = if range > 0.0 {
            (0..n).map(|_| rng.gen_range(-range..=range)).collect()
        } else {
            vec![0.0; n]
        };
        ParamArray {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// 64-bit FNV-1a, used to derive stable per-name seeds.
pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
