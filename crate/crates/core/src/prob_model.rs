//! Causal probability models over the token alphabet.
//!
//! The adaptive models blend order-2, order-1 and order-0 context statistics
//! with PPM method C escapes and fall back to a uniform order −1. Encoder and
//! decoder drive identical instances with identical (context, symbol) pairs,
//! which keeps their predictions bit-for-bit equal.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// A context total above this triggers halving of all its counts.
pub const MAX_CONTEXT_TOTAL: u32 = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("symbol {symbol} outside alphabet of size {size}")]
    SymbolOutOfRange { symbol: u32, size: usize },
    #[error("unknown model id {0}")]
    UnknownModel(u8),
}

/// What the model may look at when predicting the next token. Missing
/// neighbours are the sentinel `V`, one past the last token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Context {
    Raster { west: u32, north: u32 },
    Scale { parent: u32, west: u32, scale_index: u32 },
}

/// Model registry; the discriminant is the id stored in bitstream headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ModelKind {
    Uniform = 0,
    RasterPpm = 1,
    ScaleParent = 2,
    ScaleParentWest = 3,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Uniform,
        ModelKind::RasterPpm,
        ModelKind::ScaleParent,
        ModelKind::ScaleParentWest,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, ModelError> {
        ModelKind::ALL
            .get(id as usize)
            .copied()
            .ok_or(ModelError::UnknownModel(id))
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Uniform => "uniform",
            ModelKind::RasterPpm => "raster",
            ModelKind::ScaleParent => "parent",
            ModelKind::ScaleParentWest => "parent-west",
        }
    }

    /// The context this kind of model conditions on, from the neighbours of
    /// the token being coded.
    pub fn context(self, west: u32, north: u32, parent: u32, scale_index: u32) -> Context {
        match self {
            ModelKind::Uniform | ModelKind::RasterPpm => Context::Raster { west, north },
            ModelKind::ScaleParent | ModelKind::ScaleParentWest => Context::Scale {
                parent,
                west,
                scale_index,
            },
        }
    }

    pub fn instantiate(self, alphabet: usize) -> Box<dyn ProbabilityModel + Send> {
        match self {
            ModelKind::Uniform => Box::new(UniformModel::new(alphabet)),
            kind => Box::new(PpmModel::new(kind, alphabet)),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense probabilities over the alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Self {
        Distribution(probs)
    }

    pub fn uniform(size: usize) -> Self {
        Distribution(vec![1.0 / size as f64; size])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `p^(1/temperature)` renormalized, computed in the log domain so tiny
    /// temperatures collapse onto the mode instead of underflowing.
    pub fn sharpen(&self, temperature: f64) -> Distribution {
        assert!(temperature > 0.0, "temperature must be positive");
        let max_log = self.0.iter().fold(f64::NEG_INFINITY, |m, &p| m.max(p.ln()));
        let weights: Vec<f64> = self.0.iter().map(|&p| ((p.ln() - max_log) / temperature).exp()).collect();
        let total: f64 = weights.iter().sum();
        Distribution(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

pub trait ProbabilityModel {
    fn alphabet_size(&self) -> usize;
    fn predict(&self, ctx: &Context) -> Distribution;
    fn update(&mut self, ctx: &Context, symbol: u32) -> Result<(), ModelError>;
}

/// Every token costs `log2 V` bits; the baseline for the AR contribution.
#[derive(Debug, Clone)]
pub struct UniformModel {
    size: usize,
}

impl UniformModel {
    pub fn new(size: usize) -> Self {
        UniformModel { size }
    }
}

impl ProbabilityModel for UniformModel {
    fn alphabet_size(&self) -> usize {
        self.size
    }

    fn predict(&self, _ctx: &Context) -> Distribution {
        Distribution::uniform(self.size)
    }

    fn update(&mut self, _ctx: &Context, symbol: u32) -> Result<(), ModelError> {
        check_symbol(symbol, self.size)
    }
}

fn check_symbol(symbol: u32, size: usize) -> Result<(), ModelError> {
    if symbol as usize >= size {
        return Err(ModelError::SymbolOutOfRange { symbol, size });
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContextStats {
    counts: HashMap<u32, u32>,
    total: u32,
}

impl ContextStats {
    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, symbol: u32) -> u32 {
        self.counts.get(&symbol).copied().unwrap_or(0)
    }

    fn increment(&mut self, symbol: u32) {
        *self.counts.entry(symbol).or_insert(0) += 1;
        self.total += 1;
        if self.total > MAX_CONTEXT_TOTAL {
            self.halve();
        }
    }

    fn halve(&mut self) {
        self.counts.retain(|_, c| {
            *c /= 2;
            *c > 0
        });
        self.total = self.counts.values().sum();
    }
}

/// Sparse per-context symbol counts, keyed by order and neighbour ids.
#[derive(Debug, Clone, Default)]
pub struct CountStore {
    contexts: HashMap<u64, ContextStats>,
}

impl CountStore {
    pub fn get(&self, key: ContextKey) -> Option<&ContextStats> {
        self.contexts.get(&key.0)
    }

    fn increment(&mut self, key: ContextKey, symbol: u32) {
        self.contexts.entry(key.0).or_default().increment(symbol);
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

/// Order and up to two neighbour ids packed into one word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextKey(u64);

impl ContextKey {
    fn new(order: u8, a: u32, b: u32) -> Self {
        ContextKey((u64::from(order) << 62) | (u64::from(a) << 31) | u64::from(b))
    }
}

/// PPM-style blend of context orders, highest first, method C escapes,
/// no exclusions and full (non-exclusive) updates.
#[derive(Debug, Clone)]
pub struct PpmModel {
    kind: ModelKind,
    size: usize,
    store: CountStore,
}

impl PpmModel {
    pub fn new(kind: ModelKind, size: usize) -> Self {
        assert!(kind != ModelKind::Uniform, "uniform is not a context model");
        PpmModel {
            kind,
            size,
            store: CountStore::default(),
        }
    }

    pub fn store(&self) -> &CountStore {
        &self.store
    }

    /// Context keys from the highest order down to order 0.
    pub fn keys(&self, ctx: &Context) -> Vec<ContextKey> {
        let (near, far) = match *ctx {
            Context::Raster { west, north } => (west, north),
            Context::Scale { parent, west, .. } => (parent, west),
        };
        match self.kind {
            // (north, west), (west), ()
            ModelKind::RasterPpm => vec![
                ContextKey::new(2, far, near),
                ContextKey::new(1, near, 0),
                ContextKey::new(0, 0, 0),
            ],
            // (parent), ()
            ModelKind::ScaleParent => vec![ContextKey::new(1, near, 0), ContextKey::new(0, 0, 0)],
            // (parent, west), (parent), ()
            ModelKind::ScaleParentWest => vec![
                ContextKey::new(2, near, far),
                ContextKey::new(1, near, 0),
                ContextKey::new(0, 0, 0),
            ],
            ModelKind::Uniform => unreachable!(),
        }
    }
}

impl ProbabilityModel for PpmModel {
    fn alphabet_size(&self) -> usize {
        self.size
    }

    fn predict(&self, ctx: &Context) -> Distribution {
        let mut probs = vec![0.0; self.size];
        let mut escape = 1.0;
        for key in self.keys(ctx) {
            let Some(stats) = self.store.get(key) else {
                continue;
            };
            if stats.total == 0 {
                continue;
            }
            let denom = f64::from(stats.total) + stats.distinct() as f64;
            for (&s, &c) in &stats.counts {
                probs[s as usize] += escape * (f64::from(c) / denom);
            }
            escape *= stats.distinct() as f64 / denom;
        }
        let floor = escape / self.size as f64;
        for p in &mut probs {
            *p += floor;
        }
        Distribution(probs)
    }

    fn update(&mut self, ctx: &Context, symbol: u32) -> Result<(), ModelError> {
        check_symbol(symbol, self.size)?;
        for key in self.keys(ctx) {
            self.store.increment(key, symbol);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RASTER: Context = Context::Raster { west: 3, north: 7 };

    #[test]
    fn fresh_model_is_uniform() {
        for kind in [ModelKind::RasterPpm, ModelKind::ScaleParent, ModelKind::ScaleParentWest] {
            let m = PpmModel::new(kind, 16);
            let ctx = kind.context(16, 16, 16, 0);
            assert!(m.predict(&ctx).probs().iter().all(|&p| p == 1.0 / 16.0));
        }
        let u = UniformModel::new(4096);
        assert!(u.predict(&RASTER).probs().iter().all(|&p| p == 1.0 / 4096.0));
    }

    #[test]
    fn single_order_zero_observation() {
        let mut m = PpmModel::new(ModelKind::RasterPpm, 16);
        m.update(&Context::Raster { west: 1, north: 2 }, 5).unwrap();
        // Orders 2 and 1 of this context have never been seen.
        let d = m.predict(&Context::Raster { west: 9, north: 9 });
        assert_eq!(d.probs()[5], 0.53125);
        for (s, &p) in d.probs().iter().enumerate() {
            if s != 5 {
                assert_eq!(p, 0.03125);
            }
        }
    }

    #[test]
    fn repeated_symbol_closed_form() {
        // All three orders hold count n for symbol 0 and distinct 1, so
        // P(0) = 1 − 1 / (2 (n + 1)^3).
        let mut m = PpmModel::new(ModelKind::RasterPpm, 2);
        let mut last = 0.5;
        for n in 1..=3u32 {
            m.update(&RASTER, 0).unwrap();
            let p = m.predict(&RASTER).probs()[0];
            let expected = 1.0 - 1.0 / (2.0 * f64::from((n + 1).pow(3)));
            assert!((p - expected).abs() < 1e-15, "n={n}: {p} vs {expected}");
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn halving_on_overflow() {
        let mut stats = ContextStats::default();
        for _ in 0..MAX_CONTEXT_TOTAL {
            stats.increment(4);
        }
        assert_eq!(stats.total(), 65536);
        stats.increment(4);
        assert_eq!((stats.count(4), stats.total(), stats.distinct()), (32768, 32768, 1));
    }

    #[test]
    fn halving_drops_singletons() {
        let mut stats = ContextStats::default();
        stats.increment(1);
        for _ in 0..MAX_CONTEXT_TOTAL {
            stats.increment(2);
        }
        assert_eq!((stats.count(1), stats.count(2), stats.distinct()), (0, 32768, 1));
        assert_eq!(stats.total(), 32768);
    }

    #[test]
    fn rejects_out_of_range_symbols() {
        let mut m = PpmModel::new(ModelKind::ScaleParentWest, 8);
        assert_eq!(
            m.update(&Context::Scale { parent: 8, west: 8, scale_index: 0 }, 8),
            Err(ModelError::SymbolOutOfRange { symbol: 8, size: 8 })
        );
        assert!(UniformModel::new(8).update(&RASTER, 9).is_err());
    }

    #[test]
    fn registry_round_trip() {
        for kind in ModelKind::ALL {
            assert_eq!(ModelKind::from_id(kind.id()).unwrap(), kind);
        }
        assert_eq!(ModelKind::from_id(4), Err(ModelError::UnknownModel(4)));
    }

    #[test]
    fn parent_only_ignores_west() {
        let mut m = PpmModel::new(ModelKind::ScaleParent, 8);
        let a = Context::Scale { parent: 2, west: 1, scale_index: 1 };
        let b = Context::Scale { parent: 2, west: 5, scale_index: 1 };
        m.update(&a, 3).unwrap();
        assert_eq!(m.predict(&a), m.predict(&b));
    }

    #[test]
    fn sharpen_collapses_to_mode() {
        let d = Distribution::new(vec![0.2, 0.5, 0.3]);
        let s = d.sharpen(1e-6);
        assert_eq!(s.probs(), &[0.0, 1.0, 0.0]);
        let same = d.sharpen(1.0);
        for (a, b) in same.probs().iter().zip(d.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(d.argmax(), 1);
    }

    fn arb_events(size: u32) -> impl Strategy<Value = Vec<(u32, u32, u32)>> {
        proptest::collection::vec((0..=size, 0..=size, 0..size), 0..200)
    }

    proptest! {
        #[test]
        fn predictions_are_normalized(events in arb_events(12), kind in 1u8..4, probe in (0u32..=12, 0u32..=12)) {
            let kind = ModelKind::from_id(kind).unwrap();
            let mut m = PpmModel::new(kind, 12);
            for (a, b, s) in events {
                m.update(&kind.context(a, b, a, 1), s).unwrap();
            }
            let d = m.predict(&kind.context(probe.0, probe.1, probe.0, 1));
            let sum: f64 = d.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(d.probs().iter().all(|&p| p > 0.0));
        }

        #[test]
        fn update_raises_probability(events in arb_events(10), kind in 1u8..4, ctx in (0u32..=10, 0u32..=10), s in 0u32..10) {
            let kind = ModelKind::from_id(kind).unwrap();
            let mut m = PpmModel::new(kind, 10);
            for (a, b, sym) in events {
                m.update(&kind.context(a, b, a, 0), sym).unwrap();
            }
            let ctx = kind.context(ctx.0, ctx.1, ctx.0, 0);
            let before = m.predict(&ctx).probs()[s as usize];
            m.update(&ctx, s).unwrap();
            prop_assert!(m.predict(&ctx).probs()[s as usize] > before);
        }

        #[test]
        fn identical_histories_identical_predictions(events in arb_events(9)) {
            let mut a = PpmModel::new(ModelKind::RasterPpm, 9);
            let mut b = PpmModel::new(ModelKind::RasterPpm, 9);
            for (w, n, s) in events {
                let ctx = Context::Raster { west: w, north: n };
                a.update(&ctx, s).unwrap();
                b.update(&ctx, s).unwrap();
                prop_assert_eq!(a.predict(&ctx), b.predict(&ctx));
            }
        }

        #[test]
        fn backoff_equals_order_zero(events in arb_events(8)) {
            // A context never seen at orders 1 and 2 sees only order-0 stats.
            let mut m = PpmModel::new(ModelKind::RasterPpm, 8);
            let mut counts = [0u32; 8];
            for (w, n, s) in &events {
                m.update(&Context::Raster { west: *w, north: *n }, *s).unwrap();
                counts[*s as usize] += 1;
            }
            let d = m.predict(&Context::Raster { west: 100, north: 100 });
            let n: u32 = counts.iter().sum();
            let distinct = counts.iter().filter(|&&c| c > 0).count() as f64;
            let denom = n as f64 + distinct;
            for (s, &c) in counts.iter().enumerate() {
                let escape = if n == 0 { 1.0 } else { distinct / denom };
                let seen = if n == 0 { 0.0 } else { c as f64 / denom };
                prop_assert!((d.probs()[s] - (seen + escape / 8.0)).abs() < 1e-15);
            }
        }
    }
}
