use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionParams;
use crate::error::{Error, Result};

pub const GENE_COUNT: usize = 7;

/// Gene order inside a [`Genome`].
pub const GENE_NAMES: [&str; GENE_COUNT] = ["alpha", "beta", "gamma", "k_s", "k", "iterations", "trunc"];

/// Decoded alpha never reaches 1, where the diffusion system turns singular.
pub const ALPHA_MAX: f64 = 0.9999;

/// Lower bound of the `trunc` gene on datasets larger than it.
pub const TRUNC_LOWER: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneKind {
    Real,
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneRange {
    pub lower: f64,
    pub upper: f64,
    pub kind: GeneKind,
}

impl GeneRange {
    pub const fn real(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            kind: GeneKind::Real,
        }
    }

    pub const fn integer(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            kind: GeneKind::Integer,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper && (self.kind == GeneKind::Real || v.fract() == 0.0)
    }

    /// Uniform draw: continuous on `[lower, upper)` for reals, inclusive for integers.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            GeneKind::Real if self.upper > self.lower => rng.random_range(self.lower..self.upper),
            GeneKind::Real => self.lower,
            GeneKind::Integer => rng.random_range(self.lower as i64..=self.upper as i64) as f64,
        }
    }

    /// Affine map from `[0, 1]`; integer genes are rounded.
    pub fn from_unit(&self, u: f64) -> f64 {
        let v = self.lower + u.clamp(0.0, 1.0) * (self.upper - self.lower);
        match self.kind {
            GeneKind::Real => v.clamp(self.lower, self.upper),
            GeneKind::Integer => v.round().clamp(self.lower, self.upper),
        }
    }

    /// Inverse of [`GeneRange::from_unit`] up to rounding.
    pub fn to_unit(&self, v: f64) -> f64 {
        if self.upper > self.lower {
            ((v - self.lower) / (self.upper - self.lower)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    /// Midpoint, rounded for integer genes.
    pub fn midpoint(&self) -> f64 {
        self.from_unit(0.5)
    }
}

/// Per-gene bounds for the seven diffusion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub genes: [GeneRange; GENE_COUNT],
}

impl ParamRanges {
    pub fn new(genes: [GeneRange; GENE_COUNT]) -> Result<Self> {
        let r = Self { genes };
        r.validate()?;
        Ok(r)
    }

    /// Standard ranges for a database of `dataset_size` items. `trunc` spans
    /// `[3000, N]`, pinned to `N` when the database is smaller than that.
    pub fn standard(dataset_size: usize) -> Self {
        let n = dataset_size as f64;
        let trunc_lo = TRUNC_LOWER.min(dataset_size) as f64;
        Self {
            genes: [
                GeneRange::real(0.0, 1.0),
                GeneRange::integer(1.0, 10.0),
                GeneRange::integer(1.0, 10.0),
                GeneRange::integer(20.0, 100.0),
                GeneRange::integer(5.0, 40.0),
                GeneRange::integer(10.0, 30.0),
                GeneRange::integer(trunc_lo, n),
            ],
        }
    }

    /// Standard ranges with `k_s` widened to `[20, 250]` and `k` to `[5, 100]`.
    pub fn large(dataset_size: usize) -> Self {
        let mut r = Self::standard(dataset_size);
        r.genes[3].upper = 250.0;
        r.genes[4].upper = 100.0;
        r
    }

    pub fn for_dataset(dataset_size: usize, large: bool) -> Self {
        if large {
            Self::large(dataset_size)
        } else {
            Self::standard(dataset_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in GENE_NAMES.iter().zip(&self.genes) {
            if !(g.lower.is_finite() && g.upper.is_finite()) || g.lower > g.upper {
                return Err(Error::InvalidParameter(format!(
                    "gene {name}: bad range [{}, {}]",
                    g.lower, g.upper
                )));
            }
            if g.kind == GeneKind::Integer && (g.lower.fract() != 0.0 || g.upper.fract() != 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "gene {name}: integer range needs integral bounds"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, g: &Genome) -> bool {
        self.genes.iter().zip(&g.0).all(|(r, &v)| r.contains(v))
    }
}

/// Seven genes in the fixed order of [`GENE_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Genome(pub [f64; GENE_COUNT]);

impl Genome {
    pub fn genes(&self) -> &[f64; GENE_COUNT] {
        &self.0
    }

    /// Bit pattern of every gene, usable as an exact identity key.
    pub fn bits(&self) -> [u64; GENE_COUNT] {
        self.0.map(f64::to_bits)
    }

    /// Decodes into diffusion parameters. Alpha is capped at [`ALPHA_MAX`];
    /// integer genes are rounded and floored at 1.
    pub fn to_params(&self) -> DiffusionParams {
        let int = |v: f64| v.round().max(1.0) as usize;
        DiffusionParams {
            alpha: self.0[0].clamp(0.0, ALPHA_MAX),
            beta: int(self.0[1]) as u32,
            gamma: int(self.0[2]) as u32,
            k_s: int(self.0[3]),
            k: int(self.0[4]),
            iterations: int(self.0[5]),
            trunc: int(self.0[6]),
        }
    }

    pub fn from_params(p: &DiffusionParams) -> Self {
        Genome([
            p.alpha,
            p.beta as f64,
            p.gamma as f64,
            p.k_s as f64,
            p.k as f64,
            p.iterations as f64,
            p.trunc as f64,
        ])
    }
}

/// Draws every gene uniformly from its range.
pub fn random_genome<R: Rng + ?Sized>(ranges: &ParamRanges, rng: &mut R) -> Genome {
    Genome(ranges.genes.map(|g| g.sample(rng)))
}
