//! Quasi-Monte Carlo utilities: scrambled Sobol points, the inverse-normal
//! transform, deterministic seed splitting, and the bundled base samples used
//! by the knowledge-gradient acquisitions.
//!
//! The Sobol generator builds its direction numbers at first use: primitive
//! polynomials over GF(2) are enumerated in increasing (degree, value) order
//! (1110 of them through degree 13, giving the classic 1111-dimension limit
//! together with the van der Corput first dimension), and the free initial
//! direction numbers are drawn from a fixed SplitMix64 stream, which makes the
//! table reproducible without shipping a data file. Randomization is a
//! hash-based nested-uniform (Owen-style) scramble applied per dimension, so
//! points are deterministic given `(dim, n, seed)` and sequences with
//! different seeds are independent rerandomizations of the same net.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::risk::{WSet, WSetSource};

/// Largest supported Sobol dimension (van der Corput + all primitive
/// polynomials of degree <= 13).
pub const MAX_SOBOL_DIM: usize = 1111;

const SOBOL_BITS: u32 = 32;

// ---------------------------------------------------------------------------
// Seed splitting
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `(seed, stream)`. Used everywhere a
/// component needs its own deterministic randomness (per-iteration base
/// samples, noise streams, restart selection, ...).
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Seeded, platform-independent RNG for the few places that need plain
/// pseudo-random draws (environment subsampling, softmax restart selection).
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Direction numbers
// ---------------------------------------------------------------------------

/// Carry-less multiplication of GF(2) polynomials (bit i = coefficient of x^i).
fn gf2_mul(a: u64, b: u64) -> u64 {
    let mut r = 0u64;
    let mut a = a;
    let mut shift = 0;
    while a != 0 {
        if a & 1 == 1 {
            r ^= b << shift;
        }
        a >>= 1;
        shift += 1;
    }
    r
}

fn gf2_degree(p: u64) -> i32 {
    63 - p.leading_zeros() as i32
}

/// Remainder of polynomial division over GF(2).
fn gf2_mod(mut a: u64, m: u64) -> u64 {
    let dm = gf2_degree(m);
    while gf2_degree(a) >= dm && a != 0 {
        a ^= m << (gf2_degree(a) - dm);
    }
    a
}

fn gf2_mulmod(a: u64, b: u64, m: u64) -> u64 {
    gf2_mod(gf2_mul(a, b), m)
}

/// x^e mod m over GF(2).
fn gf2_powmod(mut e: u64, m: u64) -> u64 {
    let mut base = gf2_mod(0b10, m); // the polynomial x
    let mut acc = gf2_mod(1, m);
    while e > 0 {
        if e & 1 == 1 {
            acc = gf2_mulmod(acc, base, m);
        }
        base = gf2_mulmod(base, base, m);
        e >>= 1;
    }
    acc
}

fn gf2_gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = gf2_mod(a, b);
        a = b;
        b = r;
    }
    a
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            out.push(d);
            while n % d == 0 {
                n /= d;
            }
        }
        d += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Tests whether `p` (degree `d`, constant term 1) is primitive over GF(2):
/// irreducible, with x generating the full multiplicative group of order
/// 2^d - 1 in GF(2)[x]/(p).
fn is_primitive(p: u64, d: u32) -> bool {
    if d == 1 {
        return p == 0b11; // x + 1
    }
    // Irreducibility: gcd(p, x^(2^i) - x) = 1 for i = 1..d/2.
    for i in 1..=(d / 2) {
        let xp = gf2_powmod(1u64 << i, p); // x^(2^i) mod p
        if gf2_gcd(p, xp ^ 0b10) != 1 {
            return false;
        }
    }
    let order = (1u64 << d) - 1;
    if gf2_powmod(order, p) != 1 {
        return false;
    }
    for q in prime_factors(order) {
        if gf2_powmod(order / q, p) == 1 {
            return false;
        }
    }
    true
}

struct Dimension {
    /// Direction integers v_1..v_32, already shifted into the top bits.
    v: [u32; SOBOL_BITS as usize],
}

/// Fixed internal seed for generating the free initial direction numbers.
/// Changing it changes the (still valid) digital net, so it is a constant.
const DIRECTION_SEED: u64 = 0x5EED_D1_4EC7_1045;

fn build_dimension(index: usize, poly: u64) -> Dimension {
    let bits = SOBOL_BITS as usize;
    let mut m = [0u64; SOBOL_BITS as usize];
    if index == 0 {
        // Van der Corput: m_k = 1 for all k.
        for slot in m.iter_mut() {
            *slot = 1;
        }
    } else {
        let d = gf2_degree(poly) as usize;
        // Free initial values: odd m_k < 2^k from a fixed deterministic stream.
        let mut state = mix64(DIRECTION_SEED ^ (index as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
        for (k, slot) in m.iter_mut().take(d).enumerate() {
            state = mix64(state);
            let span = 1u64 << k; // number of odd values below 2^(k+1)
            *slot = 2 * (state % span) + 1;
        }
        // Recurrence from the polynomial coefficients a_1..a_{d-1} (between
        // the leading and constant terms).
        for k in d..bits {
            let mut val = m[k - d] ^ (m[k - d] << d);
            for j in 1..d {
                let a = (poly >> (d - j)) & 1;
                if a == 1 {
                    val ^= m[k - j] << j;
                }
            }
            m[k] = val;
        }
    }
    let mut v = [0u32; SOBOL_BITS as usize];
    for k in 0..bits {
        v[k] = (m[k] as u32) << (SOBOL_BITS as usize - 1 - k);
    }
    Dimension { v }
}

fn direction_table() -> &'static Vec<Dimension> {
    static TABLE: OnceLock<Vec<Dimension>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut dims = Vec::with_capacity(MAX_SOBOL_DIM);
        dims.push(build_dimension(0, 0));
        let mut degree = 1u32;
        'outer: while dims.len() < MAX_SOBOL_DIM {
            let lo = 1u64 << degree;
            let hi = 1u64 << (degree + 1);
            let mut p = lo | 1;
            while p < hi {
                if is_primitive(p, degree) {
                    dims.push(build_dimension(dims.len(), p));
                    if dims.len() == MAX_SOBOL_DIM {
                        break 'outer;
                    }
                }
                p += 2;
            }
            degree += 1;
        }
        dims
    })
}

// ---------------------------------------------------------------------------
// Owen scrambling
// ---------------------------------------------------------------------------

/// Hash-based nested-uniform scramble: in bit-reversed space every output bit
/// is a pseudo-random function of the strictly higher-order input bits and
/// the seed, which is exactly the structure of an Owen scramble tree.
fn owen_scramble(mut x: u32, seed: u32) -> u32 {
    x = x.reverse_bits();
    x = x.wrapping_add(seed);
    x ^= x.wrapping_mul(0x6c50_b47c);
    x ^= x.wrapping_mul(0xb82f_1e52);
    x ^= x.wrapping_mul(0xc7af_e638);
    x ^= x.wrapping_mul(0x8d22_f6e6);
    x.reverse_bits()
}

/// First `n` points of the seed-scrambled Sobol sequence in `dim` dimensions,
/// one point per row, coordinates in `[0, 1)`.
pub fn sobol_points(dim: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(Error::invalid("sobol dimension must be at least 1"));
    }
    if dim > MAX_SOBOL_DIM {
        return Err(Error::invalid(format!(
            "sobol dimension {dim} exceeds the direction-number table limit {MAX_SOBOL_DIM}"
        )));
    }
    let table = direction_table();
    let mut out = DMatrix::zeros(n, dim);
    let scale = (2.0f64).powi(-(SOBOL_BITS as i32));
    for (d, dims) in table.iter().enumerate().take(dim) {
        let dim_seed = mix64(seed ^ (d as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) as u32;
        let mut state = 0u32;
        for i in 0..n {
            if i > 0 {
                let c = (i as u32).trailing_zeros() as usize;
                state ^= dims.v[c];
            }
            out[(i, d)] = owen_scramble(state, dim_seed) as f64 * scale;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Normal transform
// ---------------------------------------------------------------------------

/// Clamp bound keeping the inverse CDF finite at the interval ends.
const UNIFORM_CLAMP: f64 = 1e-12;

/// Inverse standard-normal CDF.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    // Evaluate on the lower half and reflect: `1.0 - p` is exact for
    // p in [0.5, 1] (Sterbenz), so the two tails negate each other exactly
    // and the upper tail keeps full precision. The clamp sits inside the
    // reflected branch so that p = 0 and p = 1 map to exact negatives.
    if p > 0.5 {
        return -inverse_normal_cdf(1.0 - p);
    }
    let dist = Normal::new(0.0, 1.0).expect("standard normal");
    dist.inverse_cdf(p.max(UNIFORM_CLAMP))
}

/// Maps uniforms in `[0, 1)` to standard normals via the inverse CDF,
/// clamping the input to `[1e-12, 1 - 1e-12]` first.
pub fn normal_transform(u: &DMatrix<f64>) -> DMatrix<f64> {
    u.map(inverse_normal_cdf)
}

// ---------------------------------------------------------------------------
// Base samples
// ---------------------------------------------------------------------------

/// Where the environment points for a [`BaseSampleSet`] come from.
#[derive(Debug, Clone)]
pub enum WSource<'a> {
    /// Use a finite support verbatim (weights included).
    Full(&'a WSet),
    /// Draw `l` i.i.d. uniform points from a box (one `(lower, upper)` pair
    /// per coordinate), weighted 1/L each.
    SubsampleBox { bounds: &'a [(f64, f64)], l: usize },
    /// Draw `l` distinct points from a finite support, uniformly weighted.
    SubsampleFinite { set: &'a WSet, l: usize },
}

/// The frozen randomness behind one acquisition evaluation round: fantasy
/// seeds `z0`, inner sample paths `zl`, and the environment subsample.
///
/// `zl` has `K + 1` rows of `M` standard-normal `L`-vectors. Row 0 belongs to
/// the current (non-fantasized) model and doubles as the common-random-number
/// row shared across fantasies inside the knowledge-gradient estimators; rows
/// `1..=K` provide per-fantasy replicates for estimators that want them.
#[derive(Debug, Clone)]
pub struct BaseSampleSet {
    z0: DVector<f64>,
    zl: Vec<DMatrix<f64>>,
    wset: WSet,
    seed: u64,
}

impl BaseSampleSet {
    pub fn k(&self) -> usize {
        self.z0.len()
    }

    pub fn m(&self) -> usize {
        self.zl[0].nrows()
    }

    pub fn l(&self) -> usize {
        self.wset.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fantasy-seed normals, length K.
    pub fn z0(&self) -> &DVector<f64> {
        &self.z0
    }

    /// Inner-path normals for model `i` (0 = current model), an `M x L` matrix.
    pub fn z_row(&self, i: usize) -> &DMatrix<f64> {
        &self.zl[i]
    }

    pub fn wset(&self) -> &WSet {
        &self.wset
    }

    /// Assembles base samples from externally supplied draws. `zl` must hold
    /// `z0.len() + 1` matrices of identical shape `M x wset.len()`. Used by
    /// estimators that need degenerate or custom path draws (for example a
    /// posterior-mean knowledge gradient with all-zero inner paths).
    pub fn from_parts(z0: DVector<f64>, zl: Vec<DMatrix<f64>>, wset: WSet, seed: u64) -> Result<Self> {
        let k = z0.len();
        if k == 0 {
            return Err(Error::invalid("base samples need K >= 1"));
        }
        if zl.len() != k + 1 {
            return Err(Error::invalid(format!(
                "expected {} path matrices (K + 1), got {}",
                k + 1,
                zl.len()
            )));
        }
        let m = zl[0].nrows();
        if m == 0 {
            return Err(Error::invalid("base samples need M >= 1"));
        }
        for zi in &zl {
            if zi.nrows() != m || zi.ncols() != wset.len() {
                return Err(Error::invalid(format!(
                    "path matrix is {}x{}, expected {m}x{}",
                    zi.nrows(),
                    zi.ncols(),
                    wset.len()
                )));
            }
        }
        for v in z0.iter().chain(zl.iter().flat_map(|zi| zi.iter())) {
            if !v.is_finite() {
                return Err(Error::invalid("base sample draws must be finite"));
            }
        }
        Ok(Self { z0, zl, wset, seed })
    }
}

/// Builds the frozen base samples for one acquisition round.
///
/// All normals come from seed-scrambled Sobol points (`z0` from a 1-dim
/// sequence of length `K`, the inner paths from an `L`-dim sequence of length
/// `(K+1) * M`), so estimates are deterministic given the seed.
pub fn make_base_samples(k: usize, m: usize, wsource: WSource<'_>, seed: u64) -> Result<BaseSampleSet> {
    if k == 0 || m == 0 {
        return Err(Error::invalid("base samples need K >= 1 and M >= 1"));
    }
    let wset = realize_wset(wsource, split_seed(seed, 0))?;
    let l = wset.len();

    let z0_u = sobol_points(1, k, split_seed(seed, 1))?;
    let z0 = DVector::from_fn(k, |i, _| {
        inverse_normal_cdf(z0_u[(i, 0)])
    });

    let zl_u = normal_transform(&sobol_points(l, (k + 1) * m, split_seed(seed, 2))?);
    let zl = (0..=k)
        .map(|i| DMatrix::from_fn(m, l, |j, c| zl_u[(i * m + j, c)]))
        .collect();

    Ok(BaseSampleSet { z0, zl, wset, seed })
}

/// Materializes an environment set from its source description: the full
/// support verbatim, or a seeded subsample of a box or finite support.
pub fn realize_wset(wsource: WSource<'_>, seed: u64) -> Result<WSet> {
    match wsource {
        WSource::Full(set) => Ok(set.clone()),
        WSource::SubsampleBox { bounds, l } => {
            if l == 0 {
                return Err(Error::invalid("subsample size L must be at least 1"));
            }
            if bounds.iter().any(|(lo, hi)| !(hi > lo)) {
                return Err(Error::invalid("subsample box has empty extent"));
            }
            let mut rng = rng_from_seed(seed);
            let d = bounds.len();
            let points =
                DMatrix::from_fn(l, d, |_, c| rng.gen_range(bounds[c].0..bounds[c].1));
            WSet::uniform(points, WSetSource::Subsampled)
        }
        WSource::SubsampleFinite { set, l } => {
            if l == 0 {
                return Err(Error::invalid("subsample size L must be at least 1"));
            }
            if l > set.len() {
                return Err(Error::invalid(format!(
                    "cannot subsample {l} points from a support of size {}",
                    set.len()
                )));
            }
            let mut rng = rng_from_seed(seed);
            let mut chosen: Vec<usize> = (0..set.len()).collect();
            // Partial Fisher-Yates: the first l entries are the sample.
            for i in 0..l {
                let j = rng.gen_range(i..chosen.len());
                chosen.swap(i, j);
            }
            let points = DMatrix::from_fn(l, set.dim(), |r, c| set.points()[(chosen[r], c)]);
            WSet::uniform(points, WSetSource::Subsampled)
        }
    }
}
