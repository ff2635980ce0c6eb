//! Fixed training triplets `(x, x+, x-)` with a delta-separation certificate.
//!
//! Members are stored as rows of one `3n x d_x` matrix in the order
//! `x_0, x_0+, x_0-, x_1, ...`, which is also the on-disk order.
//!
//! Binary layout (little-endian): magic `CBL1`, version `u32`, `n: u32`,
//! `d_x: u32`, `delta: f64`, then `3n * d_x` row-major `f64`, then an optional
//! label block of `3n` `u32` class indices.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::latent_model::{norm, LatentClassModel};

const MAGIC: &[u8; 4] = b"CBL1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;
/// Redraws allowed per member before separation is declared infeasible.
pub const SEPARATION_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TripletDataset {
    members: Array2<f64>,
    labels: Option<Vec<[usize; 3]>>,
    delta: f64,
}

/// Exact minimum Euclidean distance over all pairs of rows (`inf` for < 2 rows).
pub fn min_pairwise_distance(members: ArrayView2<'_, f64>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..members.nrows() {
        let a = members.row(i);
        for j in 0..i {
            let b = members.row(j);
            let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

fn min_distance_to(candidate: &[f64], accepted: &[Vec<f64>]) -> f64 {
    accepted
        .iter()
        .map(|m| {
            m.iter()
                .zip(candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn perturb<R: Rng + ?Sized>(x: &mut [f64], noise: f64, rng: &mut R) {
    if noise <= 0.0 {
        return;
    }
    let base = x.to_vec();
    loop {
        for (o, b) in x.iter_mut().zip(&base) {
            let e: f64 = rng.sample(StandardNormal);
            *o = b + noise * e;
        }
        let n = norm(x);
        if n > 1e-12 && n.is_finite() {
            x.iter_mut().for_each(|v| *v /= n);
            return;
        }
    }
}

impl TripletDataset {
    /// Validates unit norms and computes delta by brute force.
    pub fn new(members: Array2<f64>, labels: Option<Vec<[usize; 3]>>) -> Result<Self> {
        if members.nrows() == 0 || !members.nrows().is_multiple_of(3) {
            return Err(invalid(format!(
                "member count {} is not a positive multiple of 3",
                members.nrows()
            )));
        }
        if let Some(l) = &labels {
            if l.len() * 3 != members.nrows() {
                return Err(invalid("label count does not match triplet count"));
            }
        }
        for (i, row) in members.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("member {i} has norm {n}, expected 1")));
            }
        }
        let delta = min_pairwise_distance(members.view());
        if delta <= 0.0 {
            return Err(Error::SeparationFailed {
                achieved: delta,
                required: f64::MIN_POSITIVE,
                retries: 0,
            });
        }
        Ok(Self {
            members,
            labels,
            delta,
        })
    }

    /// Draws `n` triplets from the model. `x+` and `x-` get a one-off isotropic
    /// Gaussian perturbation of scale `augment_noise` before renormalization.
    /// Any member closer than `min_delta` to an accepted member is redrawn from
    /// its own class, at most [`SEPARATION_RETRIES`] times.
    pub fn build<R: Rng + ?Sized>(
        model: &LatentClassModel,
        n: usize,
        augment_noise: f64,
        min_delta: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("dataset needs at least one triplet"));
        }
        if !(min_delta > 0.0 && min_delta.is_finite()) {
            return Err(invalid(format!("min_delta {min_delta} must be positive")));
        }
        if !(augment_noise >= 0.0 && augment_noise.is_finite()) {
            return Err(invalid(format!("augment_noise {augment_noise} must be >= 0")));
        }
        let d_x = model.input_dim();
        let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(3 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let pair = model.sample_positive_pair(rng);
            let neg = model.sample_negatives(1, rng).remove(0);
            let roles = [
                (pair.anchor, pair.class, false),
                (pair.positive, pair.class, true),
                (neg.x, neg.class, true),
            ];
            for (first, class, augmented) in roles {
                let mut candidate = first;
                let mut best = 0.0f64;
                let mut placed = false;
                for attempt in 0..=SEPARATION_RETRIES {
                    if attempt > 0 {
                        candidate = vec![0.0; d_x];
                        model.sample_input_into(class, rng, &mut candidate);
                    }
                    if augmented {
                        perturb(&mut candidate, augment_noise, rng);
                    }
                    let d = min_distance_to(&candidate, &accepted);
                    if d >= min_delta {
                        placed = true;
                        break;
                    }
                    best = best.max(d);
                }
                if !placed {
                    return Err(Error::SeparationFailed {
                        achieved: best,
                        required: min_delta,
                        retries: SEPARATION_RETRIES,
                    });
                }
                accepted.push(candidate);
            }
            labels.push([pair.class, pair.class, neg.class]);
        }
        let flat: Vec<f64> = accepted.into_iter().flatten().collect();
        let members = Array2::from_shape_vec((3 * n, d_x), flat).expect("sized");
        Self::new(members, Some(labels))
    }

    pub fn len(&self) -> usize {
        self.members.nrows() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.members.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.members.ncols()
    }

    pub fn members(&self) -> &Array2<f64> {
        &self.members
    }

    pub fn labels(&self) -> Option<&[[usize; 3]]> {
        self.labels.as_deref()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `(x_i, x_i+, x_i-)`.
    pub fn triplet(&self, i: usize) -> [ArrayView1<'_, f64>; 3] {
        [
            self.members.row(3 * i),
            self.members.row(3 * i + 1),
            self.members.row(3 * i + 2),
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.members.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&self.delta.to_le_bytes());
        for v in self.members.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for c in labels.iter().flatten() {
                out.extend_from_slice(&(*c as u32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("dataset header truncated ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad dataset magic {:?}", &bytes[..4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let n = u32_at(8) as usize;
        let d_x = u32_at(12) as usize;
        let stored_delta = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let n_values = 3 * n * d_x;
        let body = HEADER_LEN + 8 * n_values;
        let with_labels = body + 4 * 3 * n;
        if bytes.len() != body && bytes.len() != with_labels {
            return Err(Error::Format(format!(
                "dataset is {} bytes, expected {body} or {with_labels}",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes[HEADER_LEN..body]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let members = Array2::from_shape_vec((3 * n, d_x), values).expect("sized");
        let labels = (bytes.len() == with_labels).then(|| {
            bytes[body..]
                .chunks_exact(12)
                .map(|c| {
                    let l = |k: usize| u32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap()) as usize;
                    [l(0), l(1), l(2)]
                })
                .collect()
        });
        let data = Self::new(members, labels)?;
        if data.delta.to_bits() != stored_delta.to_bits() {
            return Err(Error::Format(format!(
                "stored delta {stored_delta} disagrees with recomputed {}",
                data.delta
            )));
        }
        Ok(data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
