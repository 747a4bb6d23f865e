//! Latent-space geometry of one region.
//!
//! Each region has Gaussian CN and DE populations in a K-dimensional latent
//! space. The progression axis runs from an origin just outside the CN cloud
//! to an endpoint just outside the DE cloud, and a point's abnormality is its
//! normalized projection onto that axis: 0 near healthy, 1 near end-stage,
//! values outside [0, 1] for points beyond either extension.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::SimError;

/// Draws per class when estimating the pooled sampling distribution.
const POOLED_DRAWS: usize = 500;

/// Geometry and sampling distributions of one region's latent space.
#[derive(Debug, Clone)]
pub struct LatentRegionModel {
    /// Axis origin `O`, placed `extension` projected CN stds before the CN mean.
    pub origin: Vec<f64>,
    /// Unit direction from the CN mean towards the DE mean.
    pub direction: Vec<f64>,
    /// Full axis vector `U` from origin to endpoint; parallel to `direction`.
    pub scale: Vec<f64>,
    /// Length of `scale`.
    pub scale_len: f64,
    /// Projected CN and DE standard deviations along the axis.
    pub sigma_cn_proj: f64,
    pub sigma_de_proj: f64,
    /// Pooled per-dimension sampling distribution over both populations,
    /// estimated from seeded draws.
    pub pooled_mean: Vec<f64>,
    pub pooled_std: Vec<f64>,
}

impl LatentRegionModel {
    /// Builds the axis geometry from class means and per-dimension stds, and
    /// estimates the pooled sampling distribution with `rng`.
    ///
    /// `extension` is how many projected stds the axis extends beyond each
    /// class mean (3 in the default generator).
    pub fn new(
        mu_cn: &[f64],
        sigma_cn: &[f64],
        mu_de: &[f64],
        sigma_de: &[f64],
        extension: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, SimError> {
        let k = mu_cn.len();
        if k == 0 || mu_de.len() != k || sigma_cn.len() != k || sigma_de.len() != k {
            return Err(SimError::InvalidConfig(format!(
                "latent population dimensions disagree: {} / {} / {} / {}",
                mu_cn.len(),
                sigma_cn.len(),
                mu_de.len(),
                sigma_de.len()
            )));
        }
        if sigma_cn.iter().chain(sigma_de).any(|&s| !(s > 0.0)) {
            return Err(SimError::InvalidConfig(
                "latent population stds must be positive".to_string(),
            ));
        }
        if !(extension >= 0.0) {
            return Err(SimError::InvalidConfig(
                "axis extension must be non-negative".to_string(),
            ));
        }

        let diff: Vec<f64> = (0..k).map(|d| mu_de[d] - mu_cn[d]).collect();
        let diff_len = norm(&diff);
        if !(diff_len > 0.0) || !diff_len.is_finite() {
            return Err(SimError::DegenerateGeometry);
        }
        let direction: Vec<f64> = diff.iter().map(|&v| v / diff_len).collect();
        let sigma_cn_proj = dot(sigma_cn, &direction).abs();
        let sigma_de_proj = dot(sigma_de, &direction).abs();
        let origin: Vec<f64> = (0..k)
            .map(|d| mu_cn[d] - extension * sigma_cn_proj * direction[d])
            .collect();
        let endpoint: Vec<f64> = (0..k)
            .map(|d| mu_de[d] + extension * sigma_de_proj * direction[d])
            .collect();
        let scale: Vec<f64> = (0..k).map(|d| endpoint[d] - origin[d]).collect();
        let scale_len = norm(&scale);

        let mut pooled = vec![Vec::with_capacity(2 * POOLED_DRAWS); k];
        for (mu, sigma) in [(mu_cn, sigma_cn), (mu_de, sigma_de)] {
            for _ in 0..POOLED_DRAWS {
                for d in 0..k {
                    let g: f64 = StandardNormal.sample(rng);
                    pooled[d].push(mu[d] + sigma[d] * g);
                }
            }
        }
        let pooled_mean: Vec<f64> = pooled
            .iter()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        let pooled_std: Vec<f64> = pooled
            .iter()
            .zip(&pooled_mean)
            .map(|(v, &m)| {
                (v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
            })
            .collect();

        Ok(LatentRegionModel {
            origin,
            direction,
            scale,
            scale_len,
            sigma_cn_proj,
            sigma_de_proj,
            pooled_mean,
            pooled_std,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.origin.len()
    }

    /// Normalized projection of `point` onto the progression axis.
    pub fn abnormality_of_point(&self, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.latent_dim(), "latent dimension mismatch");
        let mut proj = 0.0;
        for d in 0..point.len() {
            proj += (point[d] - self.origin[d]) * self.direction[d];
        }
        proj / self.scale_len
    }

    /// Draws a latent point whose abnormality equals `target`.
    ///
    /// A seed point is drawn from the pooled distribution and then shifted
    /// along the axis by the abnormality gap, which leaves the off-axis
    /// components of the pooled draw intact.
    pub fn sample_latent_at(&self, target: f64, rng: &mut impl Rng) -> Vec<f64> {
        assert!(target.is_finite(), "abnormality target must be finite");
        let k = self.latent_dim();
        let mut point = Vec::with_capacity(k);
        for d in 0..k {
            let g: f64 = StandardNormal.sample(rng);
            point.push(self.pooled_mean[d] + self.pooled_std[d] * g);
        }
        let gap = target - self.abnormality_of_point(&point);
        for d in 0..k {
            point[d] += gap * self.scale[d];
        }
        point
    }
}

/// Decoder from latent points to non-negative voxel intensities:
/// `softplus(W z + b)` plus truncated Gaussian observation noise.
#[derive(Debug, Clone)]
pub struct DecoderModel {
    /// Row-major D-by-K weight matrix.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub latent_dim: usize,
    pub voxel_dim: usize,
    pub noise_std: f64,
}

impl DecoderModel {
    /// Draws a random decoder. Weights are scaled by `1/sqrt(K)` so the
    /// pre-activation variance is independent of the latent dimension.
    pub fn random(
        latent_dim: usize,
        voxel_dim: usize,
        noise_std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w_scale = 1.0 / (latent_dim as f64).sqrt();
        let weights = (0..voxel_dim * latent_dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                g * w_scale
            })
            .collect();
        let bias = (0..voxel_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        DecoderModel {
            weights,
            bias,
            latent_dim,
            voxel_dim,
            noise_std,
        }
    }

    /// Decodes one latent point into voxel intensities, clamped at zero.
    pub fn decode(&self, z: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        assert_eq!(z.len(), self.latent_dim, "latent dimension mismatch");
        let noise = Normal::new(0.0, self.noise_std).expect("noise std validated");
        let mut out = Vec::with_capacity(self.voxel_dim);
        for v in 0..self.voxel_dim {
            let row = &self.weights[v * self.latent_dim..(v + 1) * self.latent_dim];
            let pre = dot(row, z) + self.bias[v];
            let value = softplus(pre) + noise.sample(rng);
            out.push(value.max(0.0));
        }
        out
    }
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;

    fn line_model() -> LatentRegionModel {
        let mut rng = substream(11, &[99]);
        LatentRegionModel::new(&[0.0], &[1.0], &[10.0], &[2.0], 3.0, &mut rng).unwrap()
    }

    #[test]
    fn one_dimensional_geometry() {
        let m = line_model();
        assert_abs_diff_eq!(m.origin[0], -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.scale[0], 19.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.scale_len, 19.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.abnormality_of_point(&[0.0]), 3.0 / 19.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.abnormality_of_point(&[-3.0]), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.abnormality_of_point(&[16.0]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scale_length_identity() {
        let mut rng = substream(4, &[7]);
        for k in [1usize, 3, 16] {
            let mu_cn: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mu_de: Vec<f64> = (0..k).map(|d| mu_cn[d] + rng.random_range(0.5..2.0)).collect();
            let sigma_cn: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
            let sigma_de: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
            let m =
                LatentRegionModel::new(&mu_cn, &sigma_cn, &mu_de, &sigma_de, 3.0, &mut rng)
                    .unwrap();
            let diff: Vec<f64> = (0..k).map(|d| mu_de[d] - mu_cn[d]).collect();
            let expected =
                norm(&diff) + 3.0 * m.sigma_cn_proj + 3.0 * m.sigma_de_proj;
            assert_abs_diff_eq!(m.scale_len, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn sample_hits_requested_abnormality() {
        let mut rng = substream(21, &[5]);
        let mu_cn: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu_de: Vec<f64> = (0..8).map(|d| mu_cn[d] + rng.random_range(0.2..1.0)).collect();
        let sigma: Vec<f64> = (0..8).map(|_| rng.random_range(0.5..1.5)).collect();
        let m = LatentRegionModel::new(&mu_cn, &sigma, &mu_de, &sigma, 3.0, &mut rng).unwrap();
        for &a in &[-0.4, 0.0, 0.3, 0.5, 1.0, 1.6] {
            let z = m.sample_latent_at(a, &mut rng);
            assert_abs_diff_eq!(m.abnormality_of_point(&z), a, epsilon = 1e-10);
        }
    }

    #[test]
    fn coincident_means_are_degenerate() {
        let mut rng = substream(3, &[1]);
        let r = LatentRegionModel::new(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 1.0], 3.0, &mut rng);
        assert!(matches!(r, Err(SimError::DegenerateGeometry)));
    }

    #[test]
    fn softplus_matches_reference() {
        assert_abs_diff_eq!(softplus(0.0), 0.6931471805599453, epsilon = 1e-15);
        assert_abs_diff_eq!(softplus(50.0), 50.0, epsilon = 1e-12);
        assert!(softplus(-500.0) >= 0.0);
        assert!(softplus(-500.0) < 1e-100);
    }

    #[test]
    fn decoder_output_is_non_negative_and_deterministic() {
        let mut rng = substream(8, &[2]);
        let dec = DecoderModel::random(4, 32, 0.1, &mut rng);
        let z = [0.5, -0.2, 1.0, 0.0];
        let a = dec.decode(&z, &mut substream(8, &[3]));
        let b = dec.decode(&z, &mut substream(8, &[3]));
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v >= 0.0));
        assert_eq!(a.len(), 32);
    }
}
