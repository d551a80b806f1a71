//! Carry-propagating byte-wise range coder over quantized frequency tables.
//!
//! The coding interval is split by exact integer division, so a symbol of
//! frequency `f` narrows the range to within one unit of `range·f/T`. The
//! final state is flushed as the four bytes of `low`, and the decoder demands
//! that it lands exactly on that point, which turns most payload damage into
//! an error instead of a silently different token sequence.

use thiserror::Error;

use crate::prob_model::Distribution;

pub const TOTAL_BITS: u32 = 22;
/// Every frequency table sums to this.
pub const TOTAL: u32 = 1 << TOTAL_BITS;
/// Largest alphabet for which every symbol can keep a frequency of at least 1.
pub const MAX_ALPHABET: usize = 1 << 18;

const TOP: u64 = 1 << 32;
const RENORM: u32 = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoderError {
    #[error("alphabet of {0} symbols exceeds the limit of 262144")]
    AlphabetTooLarge(usize),
    #[error("empty alphabet")]
    EmptyAlphabet,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid frequency table: {0}")]
    InvalidTable(String),
    #[error("symbol {symbol} outside alphabet of size {size}")]
    SymbolOutOfRange { symbol: u32, size: usize },
    #[error("payload exhausted after {consumed} bytes")]
    Exhausted { consumed: usize },
    #[error("corrupt payload: {0}")]
    Corrupt(&'static str),
}

/// Integer frequencies summing to [`TOTAL`], each at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    cum: Vec<u32>,
}

impl FreqTable {
    pub fn new(freqs: &[u32]) -> Result<Self, CoderError> {
        check_alphabet(freqs.len())?;
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc: u64 = 0;
        cum.push(0);
        for &f in freqs {
            if f == 0 {
                return Err(CoderError::InvalidTable("zero frequency".into()));
            }
            acc += u64::from(f);
            if acc > u64::from(TOTAL) {
                return Err(CoderError::InvalidTable("frequencies exceed the total".into()));
            }
            cum.push(acc as u32);
        }
        if acc != u64::from(TOTAL) {
            return Err(CoderError::InvalidTable(format!("frequencies sum to {acc}")));
        }
        Ok(FreqTable { cum })
    }

    /// For frequencies already known to be positive and to sum to [`TOTAL`].
    fn from_valid(freqs: &[u32]) -> Self {
        let mut cum = vec![0u32; freqs.len() + 1];
        let mut acc = 0u32;
        for (c, &f) in cum[1..].iter_mut().zip(freqs) {
            acc += f;
            *c = acc;
        }
        debug_assert_eq!(acc, TOTAL);
        debug_assert!(freqs.iter().all(|&f| f > 0));
        FreqTable { cum }
    }

    /// Equal split of [`TOTAL`], remainder units to the lowest symbols.
    pub fn uniform(size: usize) -> Result<Self, CoderError> {
        check_alphabet(size)?;
        let base = TOTAL / size as u32;
        let extra = (TOTAL % size as u32) as usize;
        let freqs: Vec<u32> = (0..size).map(|s| base + u32::from(s < extra)).collect();
        FreqTable::new(&freqs)
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn freq(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    pub fn cum(&self, symbol: usize) -> u32 {
        self.cum[symbol]
    }

    pub fn freqs(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Symbol whose cumulative interval contains `target` (< [`TOTAL`]).
    pub fn symbol_at(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }

    /// `−log2(f/T)` bits for `symbol`.
    pub fn self_information(&self, symbol: usize) -> f64 {
        -(f64::from(self.freq(symbol)) / f64::from(TOTAL)).log2()
    }
}

fn check_alphabet(size: usize) -> Result<(), CoderError> {
    if size == 0 {
        return Err(CoderError::EmptyAlphabet);
    }
    if size > MAX_ALPHABET {
        return Err(CoderError::AlphabetTooLarge(size));
    }
    Ok(())
}

/// Rounds a distribution onto the integer grid of [`TOTAL`] units.
///
/// Every symbol starts at `max(1, floor(p·T))`. A shortfall is handed out one
/// unit at a time by decreasing fractional remainder; a surplus is taken back
/// one unit at a time by increasing remainder from symbols still above 1. Ties
/// go to the lower symbol index, and passes repeat until the total is exact.
pub fn quantize(dist: &Distribution) -> Result<FreqTable, CoderError> {
    let probs = dist.probs();
    check_alphabet(probs.len())?;
    let total = f64::from(TOTAL);
    let mut freqs = vec![0u32; probs.len()];
    let (mut sum, mut assigned, mut bad) = (0.0f64, 0i64, false);
    for (f, &p) in freqs.iter_mut().zip(probs) {
        // One range test rejects NaN, negative and infinite entries alike.
        bad |= !(0.0..=2.0).contains(&p);
        sum += p;
        // Truncation is floor here since p·T ≥ 0.
        *f = ((p * total) as u32).max(1);
        assigned += i64::from(*f);
    }
    if bad {
        let p = probs.iter().find(|&&p| !(0.0..=2.0).contains(&p)).copied().unwrap_or(f64::NAN);
        return Err(CoderError::InvalidDistribution(format!("entry {p}")));
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(CoderError::InvalidDistribution(format!("sums to {sum}")));
    }
    let remainders = || -> Vec<f64> {
        probs
            .iter()
            .map(|&p| {
                let scaled = p * total;
                scaled - f64::from(scaled as u32)
            })
            .collect()
    };

    let delta = i64::from(TOTAL) - assigned;
    let n = probs.len();
    if delta > 0 {
        let rounds = (delta / n as i64) as u32;
        if rounds > 0 {
            freqs.iter_mut().for_each(|f| *f += rounds);
        }
        let extra = (delta % n as i64) as usize;
        for s in ranked(&remainders(), (0..n).collect(), extra, true) {
            freqs[s] += 1;
        }
    } else if delta < 0 {
        let surplus = delta.unsigned_abs();
        // k whole passes leave every symbol at max(1, f - k), so the passes
        // that take one unit from every eligible symbol collapse into one.
        let removed = |k: u64| -> u64 { freqs.iter().map(|&f| u64::from(f - 1).min(k)).sum() };
        // Every symbol can give up all but one unit.
        if (assigned - n as i64) < surplus as i64 {
            return Err(CoderError::InvalidDistribution("cannot fit the total".into()));
        }
        // Usually a single partial pass suffices and the search is skipped.
        let (mut lo, mut hi) = if removed(1) > surplus { (0, 0) } else { (1u64, u64::from(TOTAL)) };
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if removed(mid) <= surplus {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let left = (surplus - removed(lo)) as usize;
        if lo > 0 {
            for f in &mut freqs {
                *f -= (*f - 1).min(lo as u32);
            }
        }
        let eligible: Vec<usize> = (0..n).filter(|&s| freqs[s] > 1).collect();
        for s in ranked(&remainders(), eligible, left, false) {
            freqs[s] -= 1;
        }
    }
    Ok(FreqTable::from_valid(&freqs))
}

/// The first `count` of `candidates` (ascending indices) ordered by
/// remainder, descending when `largest`, else ascending; ties go to the lower
/// index. Returned in index order.
fn ranked(rems: &[f64], candidates: Vec<usize>, count: usize, largest: bool) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    if count >= candidates.len() {
        return candidates;
    }
    // Remainders are in [0, 1), where the IEEE bit pattern orders like the
    // value; smaller keys rank first.
    let key = |s: usize| {
        let bits = rems[s].to_bits();
        if largest {
            !bits
        } else {
            bits
        }
    };
    let mut keys: Vec<u64> = candidates.iter().map(|&s| key(s)).collect();
    let (before, &mut threshold, _) = keys.select_nth_unstable(count - 1);
    let mut ties = count - before.iter().filter(|&&k| k < threshold).count();
    let mut out = Vec::with_capacity(count);
    for s in candidates {
        let k = key(s);
        if k < threshold {
            out.push(s);
        } else if k == threshold && ties > 0 {
            out.push(s);
            ties -= 1;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, table: &FreqTable, symbol: u32) -> Result<(), CoderError> {
        let s = symbol as usize;
        if s >= table.len() {
            return Err(CoderError::SymbolOutOfRange {
                symbol,
                size: table.len(),
            });
        }
        let range = u64::from(self.range);
        let lo = (range * u64::from(table.cum(s))) >> TOTAL_BITS;
        let hi = (range * u64::from(table.cum(s + 1))) >> TOTAL_BITS;
        self.low += lo;
        self.range = (hi - lo) as u32;
        if self.low >= TOP {
            self.low -= TOP;
            self.carry();
        }
        while self.range < RENORM {
            self.out.push((self.low >> 24) as u8);
            self.low = (self.low << 8) & (TOP - 1);
            self.range <<= 8;
        }
        Ok(())
    }

    fn carry(&mut self) {
        for byte in self.out.iter_mut().rev() {
            let (v, overflow) = byte.overflowing_add(1);
            *byte = v;
            if !overflow {
                return;
            }
        }
        unreachable!("carry past the start of the payload");
    }

    /// Bytes emitted so far plus the four flush bytes.
    pub fn len_after_flush(&self) -> usize {
        self.out.len() + 4
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.out.extend_from_slice(&(self.low as u32).to_be_bytes());
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// Offset of the code point above `low`; always below `range`.
    value: u64,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self, CoderError> {
        if bytes.len() < 4 {
            return Err(CoderError::Exhausted { consumed: bytes.len() });
        }
        let value = u64::from(u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]));
        if value >= u64::from(u32::MAX) {
            return Err(CoderError::Corrupt("code point outside the interval"));
        }
        Ok(RangeDecoder {
            bytes,
            pos: 4,
            value,
            range: u32::MAX,
        })
    }

    pub fn decode(&mut self, table: &FreqTable) -> Result<u32, CoderError> {
        let range = u64::from(self.range);
        let target = (((self.value + 1) << TOTAL_BITS) - 1) / range;
        let s = table.symbol_at(target as u32);
        let lo = (range * u64::from(table.cum(s))) >> TOTAL_BITS;
        let hi = (range * u64::from(table.cum(s + 1))) >> TOTAL_BITS;
        debug_assert!(lo <= self.value && self.value < hi);
        self.value -= lo;
        self.range = (hi - lo) as u32;
        while self.range < RENORM {
            let Some(&byte) = self.bytes.get(self.pos) else {
                return Err(CoderError::Exhausted { consumed: self.pos });
            };
            self.pos += 1;
            self.value = (self.value << 8) | u64::from(byte);
            self.range <<= 8;
            if self.value >= u64::from(self.range) {
                return Err(CoderError::Corrupt("code point outside the interval"));
            }
        }
        Ok(s as u32)
    }

    /// Checks that the payload ended exactly where the encoder flushed.
    pub fn finish(self) -> Result<(), CoderError> {
        if self.pos != self.bytes.len() {
            return Err(CoderError::Corrupt("trailing payload bytes"));
        }
        if self.value != 0 {
            return Err(CoderError::Corrupt("final code point mismatch"));
        }
        Ok(())
    }
}

/// Codes `symbols` with the table `tables(history)` at each step, where
/// `history` is the prefix already coded.
pub fn encode<F>(symbols: &[u32], mut tables: F) -> Result<Vec<u8>, CoderError>
where
    F: FnMut(&[u32]) -> Result<FreqTable, CoderError>,
{
    let mut enc = RangeEncoder::new();
    for i in 0..symbols.len() {
        let table = tables(&symbols[..i])?;
        enc.encode(&table, symbols[i])?;
    }
    Ok(enc.finish())
}

/// Mirror of [`encode`]: recovers `n` symbols, asking `tables` with the
/// symbols decoded so far.
pub fn decode<F>(payload: &[u8], n: usize, mut tables: F) -> Result<Vec<u32>, CoderError>
where
    F: FnMut(&[u32]) -> Result<FreqTable, CoderError>,
{
    let mut dec = RangeDecoder::new(payload)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let table = tables(&out)?;
        let s = dec.decode(&table)?;
        out.push(s);
    }
    dec.finish()?;
    Ok(out)
}

/// `Σ −log2(f_i[s_i] / T)` over the tables used for coding.
pub fn ideal_bits<F>(symbols: &[u32], mut tables: F) -> Result<f64, CoderError>
where
    F: FnMut(&[u32]) -> Result<FreqTable, CoderError>,
{
    let mut bits = 0.0;
    for i in 0..symbols.len() {
        bits += tables(&symbols[..i])?.self_information(symbols[i] as usize);
    }
    Ok(bits)
}
