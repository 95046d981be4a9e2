//! Bit-packed electronic configurations (Slater determinant labels).
//!
//! A configuration over `M` spin-orbitals is stored in one `u64`; bit `q` is
//! the occupation `n_q`. Bits `0..M/2` form the spin-down block and bits
//! `M/2..M` the spin-up block. Within each block spatial orbitals are laid out
//! from highest to lowest energy, so spatial orbital `p` occupies bit
//! `M/2 - 1 - p` (down) and bit `M - 1 - p` (up). With this layout the
//! closed-shell reference of 4 electrons in 4 orbitals reads `00110011`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest number of spin-orbitals a [`Configuration`] can hold.
pub const MAX_SPIN_ORBITALS: usize = 64;

/// Upper bound on the number of configurations [`enumerate_sector`] will produce.
pub const ENUMERATION_GUARD: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcitationOrder {
    Singles,
    Doubles,
}

/// Occupation bitstring over `n_bits` spin-orbitals.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Configuration {
    bits: u64,
    n_bits: u8,
}

#[inline]
fn low_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl Configuration {
    pub fn new(bits: u64, n_bits: usize) -> Result<Self> {
        if n_bits > MAX_SPIN_ORBITALS {
            return Err(Error::InvalidArgument(format!(
                "{n_bits} spin-orbitals exceeds the supported maximum of {MAX_SPIN_ORBITALS}"
            )));
        }
        if bits & !low_mask(n_bits) != 0 {
            return Err(Error::InvalidArgument(format!(
                "bits {bits:#x} do not fit in {n_bits} spin-orbitals"
            )));
        }
        Ok(Configuration { bits, n_bits: n_bits as u8 })
    }

    /// Construct without range checks; `bits` must fit in `n_bits`.
    #[inline]
    pub(crate) fn from_raw(bits: u64, n_bits: usize) -> Self {
        debug_assert!(n_bits <= MAX_SPIN_ORBITALS && bits & !low_mask(n_bits) == 0);
        Configuration { bits, n_bits: n_bits as u8 }
    }

    pub fn empty(n_bits: usize) -> Result<Self> {
        Configuration::new(0, n_bits)
    }

    /// Build from an occupation vector `(n_0, …, n_{M-1})`.
    pub fn from_occupations(occ: &[u8]) -> Result<Self> {
        let mut bits = 0u64;
        for (q, &n) in occ.iter().enumerate() {
            match n {
                0 => {}
                1 if q < 64 => bits |= 1 << q,
                1 => {}
                _ => return Err(Error::InvalidArgument(format!("occupation {n} at {q}"))),
            }
        }
        Configuration::new(bits, occ.len())
    }

    /// Closed- or open-shell aufbau determinant: the lowest `n_down` spatial
    /// orbitals occupied with spin down and the lowest `n_up` with spin up.
    pub fn aufbau(n_spatial: usize, n_down: usize, n_up: usize) -> Result<Self> {
        if n_down > n_spatial || n_up > n_spatial {
            return Err(Error::InvalidArgument(format!(
                "cannot place {n_down}/{n_up} electrons in {n_spatial} orbitals"
            )));
        }
        let m = 2 * n_spatial;
        let mut bits = 0u64;
        for p in 0..n_down {
            bits |= 1 << spin_orbital(m, p, Block::Down);
        }
        for p in 0..n_up {
            bits |= 1 << spin_orbital(m, p, Block::Up);
        }
        Configuration::new(bits, m)
    }

    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn n_bits(&self) -> usize {
        self.n_bits as usize
    }

    #[inline]
    pub fn is_occupied(&self, q: usize) -> bool {
        self.bits >> q & 1 == 1
    }

    #[inline]
    pub fn popcount(&self) -> u32 {
        self.bits.count_ones()
    }

    /// Number of electrons in the given spin block. `M` must be even.
    #[inline]
    pub fn popcount_block(&self, block: Block) -> u32 {
        let half = self.n_bits() / 2;
        let down = low_mask(half);
        match block {
            Block::Down => (self.bits & down).count_ones(),
            Block::Up => (self.bits & !down).count_ones(),
        }
    }

    /// Copy with bit `q` flipped.
    #[inline]
    pub fn flipped(&self, q: usize) -> Self {
        Configuration { bits: self.bits ^ (1 << q), n_bits: self.n_bits }
    }

    /// Copy with bit `q` set to `value`.
    #[inline]
    pub fn with_bit(&self, q: usize, value: bool) -> Self {
        let bits = if value { self.bits | 1 << q } else { self.bits & !(1 << q) };
        Configuration { bits, n_bits: self.n_bits }
    }

    /// Number of spin-orbitals in which `self` and `other` differ, halved.
    #[inline]
    pub fn excitation_degree(&self, other: &Configuration) -> u32 {
        (self.bits ^ other.bits).count_ones() / 2
    }

    /// Occupied spin-orbital indices in increasing order.
    pub fn occupied(&self) -> impl Iterator<Item = usize> {
        BitIter(self.bits)
    }

    /// Unoccupied spin-orbital indices in increasing order.
    pub fn virtuals(&self) -> impl Iterator<Item = usize> {
        BitIter(!self.bits & low_mask(self.n_bits()))
    }

    /// Key that orders configurations lexicographically by their bitstring.
    #[inline]
    fn lex_key(&self) -> u64 {
        if self.n_bits == 0 {
            0
        } else {
            self.bits.reverse_bits() >> (64 - self.n_bits as u32)
        }
    }

    /// Spin-preserving single or double excitations, without duplicates.
    pub fn excitations(&self, order: ExcitationOrder) -> Vec<Configuration> {
        let m = self.n_bits();
        let half = m / 2;
        let occ: Vec<usize> = self.occupied().collect();
        let vir: Vec<usize> = self.virtuals().collect();
        let spin = |q: usize| q >= half;
        let mut out = Vec::new();
        match order {
            ExcitationOrder::Singles => {
                for &i in &occ {
                    for &a in &vir {
                        if spin(i) == spin(a) {
                            out.push(self.flipped(i).flipped(a));
                        }
                    }
                }
            }
            ExcitationOrder::Doubles => {
                for (x, &i) in occ.iter().enumerate() {
                    for &j in &occ[x + 1..] {
                        let holes = spin(i) as u8 + spin(j) as u8;
                        for (y, &a) in vir.iter().enumerate() {
                            for &b in &vir[y + 1..] {
                                if spin(a) as u8 + spin(b) as u8 == holes {
                                    out.push(self.flipped(i).flipped(j).flipped(a).flipped(b));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Spin-orbital index of spatial orbital `p` in `block` for `m` spin-orbitals.
#[inline]
pub fn spin_orbital(m: usize, p: usize, block: Block) -> usize {
    match block {
        Block::Down => m / 2 - 1 - p,
        Block::Up => m - 1 - p,
    }
}

/// Inverse of [`spin_orbital`].
#[inline]
pub fn spatial_of(m: usize, q: usize) -> (usize, Block) {
    let half = m / 2;
    if q < half {
        (half - 1 - q, Block::Down)
    } else {
        (m - 1 - q, Block::Up)
    }
}

struct BitIter(u64);

impl Iterator for BitIter {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            None
        } else {
            let q = self.0.trailing_zeros() as usize;
            self.0 &= self.0 - 1;
            Some(q)
        }
    }
}

impl PartialOrd for Configuration {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Configuration {
    fn cmp(&self, other: &Self) -> Ordering {
        self.n_bits
            .cmp(&other.n_bits)
            .then_with(|| self.lex_key().cmp(&other.lex_key()))
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.n_bits())
            .map(|q| if self.is_occupied(q) { '1' } else { '0' })
            .collect();
        f.write_str(&s)
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Configuration({self})")
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let occ = s
            .trim()
            .chars()
            .map(|ch| match ch {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(Error::InvalidArgument(format!("invalid bitstring character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Configuration::from_occupations(&occ)
    }
}

/// Particle-number, spin and point-group constraints of the physical sector.
///
/// Irreducible representations of D2h and its subgroups are encoded as
/// 3-bit XOR labels; the totally symmetric irrep is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrySector {
    n_electrons: usize,
    require_sz_zero: bool,
    target_irrep: u8,
    orbital_irreps: Vec<u8>,
    /// `planes[d]` has bit `q` set when the spatial orbital of spin-orbital `q`
    /// carries irrep bit `d`.
    planes: [u64; 3],
}

impl SymmetrySector {
    pub fn new(
        n_electrons: usize,
        require_sz_zero: bool,
        target_irrep: u8,
        orbital_irreps: Vec<u8>,
    ) -> Result<Self> {
        let m = 2 * orbital_irreps.len();
        if m > MAX_SPIN_ORBITALS {
            return Err(Error::InvalidArgument(format!("{m} spin-orbitals exceeds 64")));
        }
        if target_irrep > 7 || orbital_irreps.iter().any(|&k| k > 7) {
            return Err(Error::InvalidArgument("irrep labels must lie in 0..=7".into()));
        }
        if n_electrons > m {
            return Err(Error::InvalidArgument(format!("{n_electrons} electrons in {m} spin-orbitals")));
        }
        let mut planes = [0u64; 3];
        for (p, &k) in orbital_irreps.iter().enumerate() {
            for (d, plane) in planes.iter_mut().enumerate() {
                if k >> d & 1 == 1 {
                    *plane |= 1 << spin_orbital(m, p, Block::Down);
                    *plane |= 1 << spin_orbital(m, p, Block::Up);
                }
            }
        }
        Ok(SymmetrySector { n_electrons, require_sz_zero, target_irrep, orbital_irreps, planes })
    }

    /// Sector with no point-group information (all orbitals totally symmetric).
    pub fn without_point_group(n_spatial: usize, n_electrons: usize, require_sz_zero: bool) -> Result<Self> {
        SymmetrySector::new(n_electrons, require_sz_zero, 0, vec![0; n_spatial])
    }

    pub fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    pub fn require_sz_zero(&self) -> bool {
        self.require_sz_zero
    }

    pub fn target_irrep(&self) -> u8 {
        self.target_irrep
    }

    pub fn orbital_irreps(&self) -> &[u8] {
        &self.orbital_irreps
    }

    pub fn n_bits(&self) -> usize {
        2 * self.orbital_irreps.len()
    }

    /// XOR of the irreps of all occupied spin-orbitals.
    #[inline]
    pub fn irrep_of(&self, c: &Configuration) -> u8 {
        let mut k = 0u8;
        for (d, plane) in self.planes.iter().enumerate() {
            k |= (((c.bits & plane).count_ones() & 1) as u8) << d;
        }
        k
    }

    /// Membership test for a configuration known to have `n_bits()` spin-orbitals.
    #[inline]
    pub fn contains(&self, c: &Configuration) -> bool {
        debug_assert_eq!(c.n_bits(), self.n_bits());
        c.popcount() as usize == self.n_electrons
            && (!self.require_sz_zero || c.popcount_block(Block::Down) == c.popcount_block(Block::Up))
            && self.irrep_of(c) == self.target_irrep
    }

    /// Number of configurations in the sector, counted by dynamic programming
    /// over spatial orbitals (no enumeration).
    pub fn count(&self) -> u128 {
        let n = self.orbital_irreps.len();
        let ne = self.n_electrons;
        // table[down][up][irrep]
        let idx = |d: usize, u: usize, k: usize| (d * (n + 1) + u) * 8 + k;
        let mut table = vec![0u128; (n + 1) * (n + 1) * 8];
        table[idx(0, 0, 0)] = 1;
        for &irrep in &self.orbital_irreps {
            let mut next = vec![0u128; table.len()];
            for d in 0..=n {
                for u in 0..=n {
                    for k in 0..8 {
                        let v = table[idx(d, u, k)];
                        if v == 0 {
                            continue;
                        }
                        let ki = k ^ irrep as usize;
                        next[idx(d, u, k)] += v;
                        if d < n {
                            next[idx(d + 1, u, ki)] += v;
                        }
                        if u < n {
                            next[idx(d, u + 1, ki)] += v;
                        }
                        if d < n && u < n {
                            next[idx(d + 1, u + 1, k)] += v;
                        }
                    }
                }
            }
            table = next;
        }
        let mut total = 0u128;
        for d in 0..=n {
            for u in 0..=n {
                if d + u == ne && (!self.require_sz_zero || d == u) {
                    total += table[idx(d, u, self.target_irrep as usize)];
                }
            }
        }
        total
    }
}

/// Checked symmetry predicate.
pub fn passes_symmetry(c: &Configuration, s: &SymmetrySector) -> Result<bool> {
    if c.n_bits() != s.n_bits() {
        return Err(Error::DimensionMismatch { expected: s.n_bits(), found: c.n_bits() });
    }
    Ok(s.contains(c))
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Size of the number-conserving sector: `C(M/2, N/2)^2` when `sz_zero`,
/// else `C(M, N)`.
pub fn count_sector(m: usize, n_electrons: usize, sz_zero: bool) -> Result<u128> {
    if n_electrons > m {
        return Err(Error::InvalidArgument(format!("{n_electrons} electrons in {m} spin-orbitals")));
    }
    if sz_zero {
        if n_electrons % 2 == 1 {
            return Err(Error::InvalidArgument(format!(
                "odd electron count {n_electrons} cannot have Sz = 0"
            )));
        }
        if m % 2 == 1 {
            return Err(Error::InvalidArgument(format!("odd spin-orbital count {m}")));
        }
        let c = binomial((m / 2) as u64, (n_electrons / 2) as u64);
        Ok(c * c)
    } else {
        Ok(binomial(m as u64, n_electrons as u64))
    }
}

/// Size of the full Fock space, `2^M`.
pub fn total_states(m: usize) -> u128 {
    1u128 << m
}

/// Enumerate every configuration of the sector exactly once, in
/// lexicographic bitstring order.
pub fn enumerate_sector(s: &SymmetrySector) -> Result<impl Iterator<Item = Configuration> + '_> {
    let m = s.n_bits();
    let ne = s.n_electrons();
    if s.require_sz_zero() && ne % 2 == 1 {
        return Err(Error::InvalidArgument(format!("odd electron count {ne} cannot have Sz = 0")));
    }
    let size = count_sector(m, ne, s.require_sz_zero())?;
    if size > ENUMERATION_GUARD as u128 {
        return Err(Error::GuardExceeded { size, guard: ENUMERATION_GUARD as u128 });
    }
    let raw: Box<dyn Iterator<Item = u64>> = if s.require_sz_zero() {
        let half = m / 2;
        let k = ne / 2;
        Box::new(LexCombinations::new(half, k).flat_map(move |down| {
            LexCombinations::new(half, k).map(move |up| down | (up << half))
        }))
    } else {
        Box::new(LexCombinations::new(m, ne))
    };
    Ok(raw.map(move |bits| Configuration::from_raw(bits, m)).filter(move |c| s.contains(c)))
}

/// k-subsets of `0..h` as bitmasks, ordered lexicographically by the
/// bitstring read from position 0.
struct LexCombinations {
    h: usize,
    current: Option<u128>,
}

impl LexCombinations {
    fn new(h: usize, k: usize) -> Self {
        let current = if k > h { None } else { Some((1u128 << k) - 1) };
        LexCombinations { h, current }
    }
}

impl Iterator for LexCombinations {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        let v = self.current?;
        // Next integer with the same popcount (Gosper), where position 0 is the MSB.
        self.current = if v == 0 {
            None
        } else {
            let c = v & v.wrapping_neg();
            let r = v + c;
            let nxt = (((r ^ v) >> 2) / c) | r;
            (nxt < 1u128 << self.h).then_some(nxt)
        };
        let mut bits = 0u64;
        for i in 0..self.h {
            if v >> i & 1 == 1 {
                bits |= 1 << (self.h - 1 - i);
            }
        }
        Some(bits)
    }
}
