//! Regenerates `data/betabinom_synthetic.csv`: 20 (n_j, y_j) records drawn
//! from a beta-binomial with known m* = 0.005, L* = 1500, so posterior
//! estimates can be sanity-checked against the generating values.
//!
//!     cargo run -p velflow --example gen_betabinom_data [out.csv]

use velflow::rng::Rng;

/// Marsaglia-Tsang gamma sampler, shape >= 1.
fn gamma(rng: &mut Rng, shape: f64) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (3.0 * d.sqrt());
    loop {
        let x = rng.normal();
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        if rng.uniform().ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data/betabinom_synthetic.csv".into());
    let (m_star, l_star) = (0.005, 1500.0);
    let (a, b) = (l_star * m_star, l_star * (1.0 - m_star));
    let mut rng = Rng::new(0xbb);
    let mut rows = String::from("n,y\n");
    for _ in 0..20 {
        // n_j log-uniform in [1e3, 1e5]
        let n = 10f64.powf(3.0 + 2.0 * rng.uniform()).round() as u64;
        let ga = gamma(&mut rng, a);
        let gb = gamma(&mut rng, b);
        let theta = ga / (ga + gb);
        let mut y = 0u64;
        for _ in 0..n {
            if rng.uniform() < theta {
                y += 1;
            }
        }
        rows.push_str(&format!("{n},{y}\n"));
    }
    std::fs::write(&out, &rows).unwrap();
    eprintln!("wrote {out}");
}
