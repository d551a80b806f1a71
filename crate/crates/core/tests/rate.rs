use aric::codec::sample_tokens;
use aric::range_coder::{self, TOTAL, TOTAL_BITS};
use aric::{quantize, Distribution, FreqTable, ModelKind, Resolution, UniformModel};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn unit(r: &mut Xoshiro256PlusPlus) -> f64 {
    (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Heavy-tailed random distribution; `sharp` > 1 concentrates the mass.
fn random_dist(r: &mut Xoshiro256PlusPlus, size: usize, sharp: i32) -> Distribution {
    let w: Vec<f64> = (0..size).map(|_| unit(r).powi(sharp) + 1e-12).collect();
    let s: f64 = w.iter().sum();
    Distribution::new(w.iter().map(|x| x / s).collect())
}

fn draw(r: &mut Xoshiro256PlusPlus, p: &[f64]) -> usize {
    let u = unit(r);
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// `Σ −log2(f_i / T)` from the product of the frequencies, carried as a
/// mantissa in [1, 2) and an integer exponent.
fn product_oracle(freqs: &[u32]) -> f64 {
    let (mut m, mut e) = (1.0f64, 0i64);
    for &f in freqs {
        let lz = f.leading_zeros() as i64;
        let fe = 31 - lz;
        m *= f64::from(f) / (fe as f64).exp2();
        e += fe;
        if m >= 2.0 {
            m /= 2.0;
            e += 1;
        }
    }
    f64::from(TOTAL_BITS) * freqs.len() as f64 - (e as f64 + m.log2())
}

#[test]
fn ideal_bits_matches_product_oracle() {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(7);
    for size in [2usize, 17, 4096] {
        let tables: Vec<FreqTable> = (0..8).map(|i| quantize(&random_dist(&mut r, size, 1 + i % 4)).unwrap()).collect();
        let n = 20_000;
        let symbols: Vec<u32> = (0..n).map(|_| (r.next_u64() % size as u64) as u32).collect();
        let pick = |i: usize| &tables[(i * 7 + 3) % tables.len()];
        let bits = range_coder::ideal_bits(&symbols, |prev| Ok(pick(prev.len()).clone())).unwrap();
        let used: Vec<u32> = symbols.iter().enumerate().map(|(i, &s)| pick(i).freq(s as usize)).collect();
        let oracle = product_oracle(&used);
        assert!((bits - oracle).abs() <= 1e-9 * oracle, "V={size}: {bits} vs {oracle}");

        let payload = range_coder::encode(&symbols, |prev| Ok(pick(prev.len()).clone())).unwrap();
        let out = 8.0 * payload.len() as f64;
        assert!(out >= bits && out <= bits + 64.0, "V={size}: {out} bits for {bits}");
    }
}

#[test]
fn quantization_costs_at_most_the_flooring_bound() {
    let size = 4096usize;
    let per_symbol = (f64::from(TOTAL) / (f64::from(TOTAL) - size as f64)).log2();
    let mut r = Xoshiro256PlusPlus::seed_from_u64(99);
    for trial in 0..60 {
        let dist = random_dist(&mut r, size, 1 + trial % 6);
        let table = quantize(&dist).unwrap();
        let p = dist.probs();
        let n = 2000;
        let (mut quantized, mut exact) = (0.0, 0.0);
        for _ in 0..n {
            let s = draw(&mut r, p);
            quantized += table.self_information(s);
            exact -= p[s].log2();
        }
        let excess = quantized - exact;
        assert!(excess <= n as f64 * per_symbol, "trial {trial}: excess {excess} bits over {n} symbols");
    }
}

#[test]
fn uniform_sampling_is_uniform_within_four_sigma() {
    let size = 16usize;
    let (cols, rows) = (400, 250);
    let n = (cols * rows) as f64;
    let mut model = UniformModel::new(size);
    let grids = sample_tokens(&[Resolution::new(cols, rows)], &mut model, ModelKind::Uniform, 2024, 1.0).unwrap();
    let mut counts = vec![0usize; size];
    for &t in &grids[0].tokens {
        counts[t as usize] += 1;
    }
    let p = 1.0 / size as f64;
    let sigma = (n * p * (1.0 - p)).sqrt();
    for (s, &c) in counts.iter().enumerate() {
        assert!((c as f64 - n * p).abs() <= 4.0 * sigma, "symbol {s}: {c} draws, expected {}", n * p);
    }
}
