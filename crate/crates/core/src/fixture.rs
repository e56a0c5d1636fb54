//! Synthetic Gaussian-mixture embedding tables.
//!
//! Class `c` has mean `separation_c * u_c` for a random unit direction `u_c`.
//! Its noise is Gaussian with standard deviation `noise`, stretched by
//! `stretch` along a second random axis of its own, so each class is an
//! elongated cloud whose extent is not visible from its densest rows. The
//! out-of-distribution variant shifts each class's test-domain mean by
//! `domain_shift` along a third random direction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{DomainTag, EmbeddingTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureSpec {
    pub n_classes: usize,
    pub dim: usize,
    /// Training-universe rows per class (base + pool, or the OOD train domain).
    pub per_class: usize,
    /// Held-out rows per class.
    pub test_per_class: usize,
    /// Norm of every class mean.
    pub separation: f64,
    /// Class `c`'s mean norm is scaled by `1 - separation_spread * c / (k - 1)`,
    /// so later classes sit closer to the origin and are harder.
    pub separation_spread: f64,
    pub noise: f64,
    /// Noise standard deviation along each class's own random axis is
    /// `noise * stretch`; 1 gives isotropic classes.
    pub stretch: f64,
    /// Fraction of each class placed in the base set (IID fixtures).
    pub base_fraction: f64,
    /// Norm of the per-class mean shift applied to the test domain (OOD fixtures).
    pub domain_shift: f64,
    /// Attach logits equal to negated distances to the generating class means.
    pub with_logits: bool,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            n_classes: 10,
            dim: 16,
            per_class: 500,
            test_per_class: 200,
            separation: 3.0,
            separation_spread: 0.0,
            noise: 0.7,
            stretch: 6.0,
            base_fraction: 0.1,
            domain_shift: 0.0,
            with_logits: false,
            seed: 42,
        }
    }
}

impl MixtureSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_classes < 2 {
            return bad("a fixture needs at least 2 classes");
        }
        if self.dim == 0 || self.per_class == 0 {
            return bad("dim and per_class must be positive");
        }
        if !(0.0..1.0).contains(&self.base_fraction) {
            return bad("base_fraction must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.separation_spread) {
            return bad("separation_spread must be in [0, 1]");
        }
        let finite = [self.separation, self.noise, self.stretch, self.domain_shift];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("separation, noise, stretch and domain_shift must be finite and non-negative");
        }
        Ok(())
    }
}

struct Geometry {
    means: Vec<Vec<f64>>,
    axes: Vec<Vec<f64>>,
    shifts: Vec<Vec<f64>>,
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn geometry(spec: &MixtureSpec, rng: &mut ChaCha8Rng) -> Geometry {
    let k = spec.n_classes;
    let mut means = Vec::with_capacity(k);
    let mut shifts = Vec::with_capacity(k);
    let mut axes = Vec::with_capacity(k);
    for c in 0..k {
        let scale = spec.separation * (1.0 - spec.separation_spread * c as f64 / (k - 1) as f64);
        let mean: Vec<f64> = unit(rng, spec.dim).into_iter().map(|x| x * scale).collect();
        shifts.push(unit(rng, spec.dim).into_iter().map(|x| x * spec.domain_shift).collect());
        axes.push(unit(rng, spec.dim));
        means.push(mean);
    }
    Geometry {
        means,
        axes,
        shifts,
    }
}

fn draw(spec: &MixtureSpec, geo: &Geometry, class: usize, shifted: bool, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let centre = &geo.means[class];
    let z: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(rng)).collect();
    let axis = &geo.axes[class];
    let along = (spec.stretch - 1.0) * z.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
    centre
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let shift = if shifted { geo.shifts[class][j] } else { 0.0 };
            (m + shift + spec.noise * (z[j] + along * axis[j])) as f32
        })
        .collect()
}

/// Draws `per` rows of every class with ids `first_id..`, interleaving classes
/// through a shuffled id assignment.
fn sample_table(
    spec: &MixtureSpec,
    geo: &Geometry,
    per: usize,
    shifted: bool,
    first_id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EmbeddingTable> {
    let k = spec.n_classes;
    let mut ids: Vec<u64> = (first_id..first_id + (per * k) as u64).collect();
    ids.shuffle(rng);
    let mut labels = Vec::with_capacity(per * k);
    let mut features = Vec::with_capacity(per * k * spec.dim);
    for c in 0..k {
        for _ in 0..per {
            labels.push(c as u32);
            features.extend(draw(spec, geo, c, shifted, rng));
        }
    }
    let logits = spec.with_logits.then(|| {
        features
            .chunks_exact(spec.dim)
            .flat_map(|x| {
                geo.means.iter().enumerate().map(move |(c, m)| {
                    let d2: f64 = x
                        .iter()
                        .zip(m)
                        .zip(&geo.shifts[c])
                        .map(|((&xi, mi), si)| {
                            let centre = mi + if shifted { *si } else { 0.0 };
                            (xi as f64 - centre).powi(2)
                        })
                        .sum();
                    -(d2.sqrt()) as f32
                })
            })
            .collect()
    });
    EmbeddingTable::new(spec.dim, k, ids, labels, features, logits)
}

/// Base, pool and held-out test tables drawn from one mixture.
#[derive(Debug, Clone)]
pub struct IidFixture {
    pub base: EmbeddingTable,
    pub pool: EmbeddingTable,
    pub test: EmbeddingTable,
}

pub fn iid(spec: &MixtureSpec) -> Result<IidFixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let geo = geometry(spec, &mut rng);
    let universe = sample_table(spec, &geo, spec.per_class, false, 0, &mut rng)?;
    let test = sample_table(
        spec,
        &geo,
        spec.test_per_class,
        false,
        (spec.per_class * spec.n_classes) as u64,
        &mut rng,
    )?
    .with_domain(DomainTag::Test);
    let n_base = ((spec.per_class as f64 * spec.base_fraction).round() as usize).clamp(1, spec.per_class);
    let mut base_ids = Vec::new();
    for c in 0..spec.n_classes as u32 {
        let mut ids: Vec<u64> = universe
            .sample_ids()
            .iter()
            .zip(universe.labels())
            .filter(|(_, &l)| l == c)
            .map(|(&id, _)| id)
            .collect();
        ids.shuffle(&mut rng);
        base_ids.extend_from_slice(&ids[..n_base]);
    }
    Ok(IidFixture {
        base: universe.subset(&base_ids)?.with_domain(DomainTag::Base),
        pool: universe.without(&base_ids)?.with_domain(DomainTag::Pool),
        test,
    })
}

/// Train domain and mean-shifted test domain.
#[derive(Debug, Clone)]
pub struct OodFixture {
    pub train: EmbeddingTable,
    pub test: EmbeddingTable,
}

pub fn ood(spec: &MixtureSpec) -> Result<OodFixture> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let geo = geometry(spec, &mut rng);
    let train = sample_table(spec, &geo, spec.per_class, false, 0, &mut rng)?.with_domain(DomainTag::Train);
    let test = sample_table(
        spec,
        &geo,
        spec.test_per_class,
        true,
        (spec.per_class * spec.n_classes) as u64,
        &mut rng,
    )?
    .with_domain(DomainTag::Test);
    Ok(OodFixture { train, test })
}
