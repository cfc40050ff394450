//! Standard normal CDF and quantile, seeded substreams, multiplier weights
//! and order-statistic quantiles.

#![allow(clippy::excessive_precision)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HdmError, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Bootstrap replication `b` always draws from `stream_id = b` of a stream
/// forked for that purpose, so serial and parallel runs agree bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Same seed, different substream.
    pub fn substream(&self, stream_id: u64) -> Self {
        RngStream { seed: self.seed, stream_id }
    }

    /// Derives an independent child stream for a named purpose.
    pub fn fork(&self, label: &str) -> Self {
        let seed = splitmix64(self.seed ^ splitmix64(self.stream_id ^ fnv1a(label)));
        RngStream { seed, stream_id: 0 }
    }

    /// Child stream keyed by an integer, e.g. a Monte Carlo replication.
    pub fn fork_index(&self, label: &str, index: u64) -> Self {
        self.fork(label).substream(index)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Law of the bootstrap multipliers. All three have mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiplierKind {
    /// Standard Gaussian.
    Normal,
    /// Rademacher, ±1 with probability one half.
    Wild,
    /// Exponential(1) − 1.
    Bayes,
}

impl MultiplierKind {
    pub fn label(self) -> &'static str {
        match self {
            MultiplierKind::Normal => "normal",
            MultiplierKind::Wild => "wild",
            MultiplierKind::Bayes => "bayes",
        }
    }
}

impl std::str::FromStr for MultiplierKind {
    type Err = HdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(MultiplierKind::Normal),
            "wild" => Ok(MultiplierKind::Wild),
            "bayes" => Ok(MultiplierKind::Bayes),
            other => Err(HdmError::Schema(format!("unknown multiplier kind {other:?}"))),
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 − Φ(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Two-sided normal p-value for a z statistic.
pub fn two_sided_p(t: f64) -> f64 {
    (2.0 * normal_sf(t.abs())).min(1.0)
}

fn poly(coef: &[f64; 8], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

// Wichura (1988), algorithm AS 241, PPND16.
const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    133.141_667_891_784_377_45,
    1_971.590_950_306_551_442_7,
    13_731.693_765_509_461_125,
    45_921.953_931_549_871_457,
    67_265.770_927_008_700_853,
    33_430.575_583_588_128_105,
    2_509.080_928_730_122_672_7,
];
const B: [f64; 8] = [
    1.0,
    42.313_330_701_600_911_252,
    687.187_007_492_057_908_3,
    5_394.196_021_424_751_107_7,
    21_213.794_301_586_595_867,
    39_307.895_800_092_710_61,
    28_729.085_735_721_942_674,
    5_226.495_278_852_545_925,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    0.241_780_725_177_450_611_77,
    0.022_723_844_989_269_184_583_3,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    0.689_767_334_985_100_004_55,
    0.148_103_976_427_480_074_59,
    0.015_198_666_563_616_457_196_6,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    0.296_560_571_828_504_891_23,
    0.026_532_189_526_576_123_093,
    0.001_242_660_947_388_078_438_6,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    0.599_832_206_555_887_937_69,
    0.136_929_880_922_735_805_31,
    0.014_875_361_290_850_614_852_5,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// Standard normal quantile Φ⁻¹(u) for `u` in (0, 1).
pub fn normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(HdmError::Domain(format!(
            "normal quantile needs a probability in (0,1), got {u}"
        )));
    }
    let q = u - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let tail = if q < 0.0 { u } else { 1.0 - u };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < 0.0 { -x } else { x })
}

/// Draws `n` multipliers of the requested kind from `stream`.
pub fn multiplier_draws(kind: MultiplierKind, n: usize, stream: RngStream) -> Vec<f64> {
    let mut rng = stream.rng();
    fill_multipliers(kind, &mut rng, n)
}

pub(crate) fn fill_multipliers<R: Rng>(kind: MultiplierKind, rng: &mut R, n: usize) -> Vec<f64> {
    match kind {
        MultiplierKind::Normal => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        MultiplierKind::Wild => (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
        MultiplierKind::Bayes => (0..n).map(|_| rng.sample::<f64, _>(Exp1) - 1.0).collect(),
    }
}

/// Order-statistic quantile: the `⌈u·len⌉`-th smallest element (1-based).
pub fn empirical_quantile(v: &[f64], u: f64) -> Result<f64> {
    let mut scratch = v.to_vec();
    empirical_quantile_in_place(&mut scratch, u)
}

/// Same as [`empirical_quantile`] but reorders `v` instead of copying it.
pub fn empirical_quantile_in_place(v: &mut [f64], u: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(HdmError::Domain("empirical quantile of an empty sample".into()));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(HdmError::Domain(format!(
            "quantile level must lie in (0,1), got {u}"
        )));
    }
    let rank = ((u * v.len() as f64).ceil() as usize).clamp(1, v.len());
    let (_, kth, _) = v.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    Ok(*kth)
}
