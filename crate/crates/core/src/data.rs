//! Synthetic instance generators, ratings-file parsing, train/test splitting,
//! and the seeded mini-batch sampler.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::manifold::{gaussian_matrix, qf, ManifoldDescriptor, Matrix};
use crate::problems::{Batch, IcaProblem, McProblem, PcaProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    PcaConditioned,
    LowRankMc,
    CommutingIca,
}

/// Parameters of a synthetic instance. `condition` is the ratio of the largest
/// to the smallest retained singular value; `density` is the observed fraction
/// (MC only).
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub num_points: usize,
    pub n: usize,
    pub r: usize,
    pub condition: f64,
    pub noise_sd: f64,
    pub density: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.r == 0 || self.num_points == 0 || self.r > self.n {
            return Err(Error::ConfigError(format!(
                "invalid sizes N={}, n={}, r={}",
                self.num_points, self.n, self.r
            )));
        }
        if self.condition < 1.0 {
            return Err(Error::ConfigError(format!(
                "condition must be >= 1, got {}",
                self.condition
            )));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::ConfigError("noise_sd must be nonnegative".into()));
        }
        if !(0.0 < self.density && self.density <= 1.0) {
            return Err(Error::ConfigError(format!(
                "density must lie in (0,1], got {}",
                self.density
            )));
        }
        Ok(())
    }
}

/// Geometric singular spectrum: the first r values decay from 1 to
/// 1/condition; the tail sits strictly below with its own geometric decay so
/// the planted top-r subspace is identified.
fn spectrum(n: usize, r: usize, condition: f64) -> Vec<f64> {
    let mut s = Vec::with_capacity(n);
    for i in 0..r {
        let expo = if r == 1 { 0.0 } else { i as f64 / (r - 1) as f64 };
        s.push(condition.powf(-expo));
    }
    let floor = s[r - 1];
    for i in r..n {
        s.push(floor * 0.5 * 0.9f64.powi((i - r) as i32));
    }
    s
}

/// Synthetic PCA data Z = U*·diag(s)·Vᵀ + noise. Returns the problem and the
/// planted top-r basis (the leading columns of U*).
pub fn gen_pca(spec: &SyntheticSpec, manifold: ManifoldDescriptor) -> Result<(PcaProblem, Matrix)> {
    spec.validate()?;
    if spec.kind != SyntheticKind::PcaConditioned {
        return Err(Error::ConfigError("gen_pca requires kind PcaConditioned".into()));
    }
    let (n, big_n) = (spec.n, spec.num_points);
    if big_n < n {
        return Err(Error::ConfigError(format!(
            "PCA generator needs N >= n, got N={big_n}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let u_star = qf(&gaussian_matrix(&mut rng, n, n)).expect("gaussian basis full rank");
    let v = qf(&gaussian_matrix(&mut rng, big_n, n)).expect("gaussian basis full rank");
    let s = spectrum(n, spec.r, spec.condition);
    let mut scaled = u_star.clone();
    for (j, &sj) in s.iter().enumerate() {
        scaled.column_mut(j).scale_mut(sj);
    }
    let mut z = scaled * v.transpose();
    if spec.noise_sd > 0.0 {
        z += gaussian_matrix(&mut rng, n, big_n) * spec.noise_sd;
    }
    let planted = u_star.columns(0, spec.r).into_owned();
    Ok((PcaProblem::new(z, manifold)?, planted))
}

/// Holdout observations as (row, col, value) triplets.
pub type Holdout = Vec<(usize, usize, f64)>;

/// Planted low-rank completion instance: Z = A·Bᵀ observed entrywise with
/// probability `density`, observations split 80/20 into train and holdout.
pub fn gen_mc(spec: &SyntheticSpec, lambda: f64) -> Result<(McProblem, Holdout)> {
    spec.validate()?;
    if spec.kind != SyntheticKind::LowRankMc {
        return Err(Error::ConfigError("gen_mc requires kind LowRankMc".into()));
    }
    let (n, big_n, r) = (spec.n, spec.num_points, spec.r);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = gaussian_matrix(&mut rng, n, r);
    let b = gaussian_matrix(&mut rng, big_n, r);
    let z = a * b.transpose();
    let mut observed = Vec::new();
    for col in 0..big_n {
        for row in 0..n {
            if rng.gen::<f64>() < spec.density {
                let noise: f64 = if spec.noise_sd > 0.0 {
                    spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                observed.push((row, col, z[(row, col)] + noise));
            }
        }
    }
    observed.shuffle(&mut rng);
    let train_len = observed.len() * 4 / 5;
    let (train, holdout) = observed.split_at(train_len);
    let manifold = ManifoldDescriptor::grassmann(n, r)?;
    let problem = McProblem::new(train, n, big_n, lambda, manifold)?;
    if let Some(col) = (0..big_n).find(|&c| problem.cols[c].is_empty()) {
        return Err(Error::DensityTooLow { column: col });
    }
    Ok((problem, holdout.to_vec()))
}

/// Commuting family C_i = U*·D_i·U*ᵀ (+ symmetrized noise) with a shared random
/// orthogonal U* and random positive diagonals. Returns the problem and U*.
pub fn gen_ica(spec: &SyntheticSpec) -> Result<(IcaProblem, Matrix)> {
    spec.validate()?;
    if spec.kind != SyntheticKind::CommutingIca {
        return Err(Error::ConfigError("gen_ica requires kind CommutingIca".into()));
    }
    let (n, big_n) = (spec.n, spec.num_points);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let u_star = qf(&gaussian_matrix(&mut rng, n, n)).expect("gaussian basis full rank");
    // Scale the random diagonals by the conditioned spectrum so the planted
    // top-r eigenvectors dominate the per-direction scores with a clear margin.
    let s = spectrum(n, spec.r, spec.condition);
    let mut family = Vec::with_capacity(big_n);
    for _ in 0..big_n {
        let mut d = Matrix::zeros(n, n);
        for k in 0..n {
            d[(k, k)] = s[k] * rng.gen_range(0.5..2.0);
        }
        let mut c = &u_star * d * u_star.transpose();
        // The congruence is symmetric only up to round-off.
        c = (&c + c.transpose()) * 0.5;
        if spec.noise_sd > 0.0 {
            let e = gaussian_matrix(&mut rng, n, n);
            c += (&e + e.transpose()) * (0.5 * spec.noise_sd);
        }
        family.push(c);
    }
    let manifold = ManifoldDescriptor::stiefel(n, spec.r)?;
    Ok((IcaProblem::new_symmetrized(family, manifold)?, u_star))
}

// ---------------------------------------------------------------------------
// Ratings files

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingsFormat {
    /// `user::item::rating[::timestamp]`
    DoubleColon,
    /// `user,item,rating` with optional header
    Csv,
}

/// Triplets with densely re-indexed 1-based user and item ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    pub triplets: Vec<(u32, u32, f64)>,
    pub n_users: u32,
    pub n_items: u32,
}

impl RatingsDataset {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: RatingsDataset,
    pub test: RatingsDataset,
    pub seed: u64,
}

pub fn parse_ratings(path: &Path, format: RatingsFormat) -> Result<RatingsDataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    parse_ratings_reader(reader, format)
}

fn parse_ratings_reader<R: BufRead>(reader: R, format: RatingsFormat) -> Result<RatingsDataset> {
    let mut raw: Vec<(u64, u64, f64)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            RatingsFormat::DoubleColon => trimmed.split("::").collect(),
            RatingsFormat::Csv => trimmed.split(',').collect(),
        };
        let enough = match format {
            RatingsFormat::DoubleColon => fields.len() == 3 || fields.len() == 4,
            RatingsFormat::Csv => fields.len() == 3,
        };
        if !enough {
            return Err(Error::ParseError {
                line: line_no,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let parsed: std::result::Result<(u64, u64, f64), String> = (|| {
            let user = fields[0]
                .trim()
                .parse::<u64>()
                .map_err(|e| format!("bad user id `{}`: {e}", fields[0]))?;
            let item = fields[1]
                .trim()
                .parse::<u64>()
                .map_err(|e| format!("bad item id `{}`: {e}", fields[1]))?;
            let rating = fields[2]
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("bad rating `{}`: {e}", fields[2]))?;
            if !rating.is_finite() {
                return Err(format!("non-finite rating {rating}"));
            }
            Ok((user, item, rating))
        })();
        match parsed {
            Ok(t) => raw.push(t),
            Err(message) => {
                // A header line is only tolerated as the very first CSV line.
                if format == RatingsFormat::Csv && line_no == 1 && raw.is_empty() {
                    continue;
                }
                return Err(Error::ParseError {
                    line: line_no,
                    message,
                });
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyFile);
    }
    // Dense 1-based re-indexing in first-seen order.
    let mut user_map = std::collections::HashMap::new();
    let mut item_map = std::collections::HashMap::new();
    let mut triplets = Vec::with_capacity(raw.len());
    for (user, item, rating) in raw {
        let next_user = user_map.len() as u32 + 1;
        let u = *user_map.entry(user).or_insert(next_user);
        let next_item = item_map.len() as u32 + 1;
        let i = *item_map.entry(item).or_insert(next_item);
        triplets.push((u, i, rating));
    }
    Ok(RatingsDataset {
        triplets,
        n_users: user_map.len() as u32,
        n_items: item_map.len() as u32,
    })
}

pub fn write_ratings_csv(d: &RatingsDataset, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "user,item,rating")?;
    for &(u, i, r) in &d.triplets {
        writeln!(file, "{u},{i},{r}")?;
    }
    Ok(())
}

/// Seeded uniform permutation; the first 80% (floor) become the train split.
pub fn split_80_20(d: &RatingsDataset, seed: u64) -> Result<SplitDataset> {
    const MIN: usize = 5;
    if d.len() < MIN {
        return Err(Error::TooFewRatings {
            need: MIN,
            got: d.len(),
        });
    }
    let mut perm: Vec<usize> = (0..d.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let train_len = d.len() * 4 / 5;
    let pick = |idxs: &[usize]| RatingsDataset {
        triplets: idxs.iter().map(|&i| d.triplets[i]).collect(),
        n_users: d.n_users,
        n_items: d.n_items,
    };
    Ok(SplitDataset {
        train: pick(&perm[..train_len]),
        test: pick(&perm[train_len..]),
        seed,
    })
}

/// Draws batches of indices uniformly with replacement from a seeded stream.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    population: usize,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(population: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > population {
            return Err(Error::BadBatchSize {
                batch_size,
                population,
            });
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            population,
            batch_size,
        })
    }

    pub fn next_batch(&mut self) -> Batch {
        let indices = (0..self.batch_size)
            .map(|_| self.rng.gen_range(0..self.population))
            .collect();
        Batch { indices }
    }
}
