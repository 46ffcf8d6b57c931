//! Writes the bundled synthetic panel used by the documentation and the
//! smoke tests: N=400 women-style units over T=9 periods with a count
//! covariate, a time-invariant starting age, and a continuous income.

use panelbin::rng::CounterRng;
use std::io::Write;

fn main() {
    let mut rng = CounterRng::new(20240811, 0);
    let (n, t) = (400usize, 9usize);
    let mut f = std::fs::File::create("crates/core/tests/data/synth_panel.csv").unwrap();
    writeln!(f, "unit,period,lfp,kids,age0,loghinc").unwrap();
    for i in 0..n {
        let age0 = 25.0 + (rng.uniform() * 25.0).floor();
        let base_kids = (rng.uniform() * 4.0).floor();
        let base_inc = 9.5 + 0.8 * rng.normal();
        // heterogeneity depends on time-averages of the covariates
        let mut kids_path = Vec::new();
        let mut inc_path = Vec::new();
        for s in 0..t {
            let drift = if rng.uniform() < 0.15 { 1.0 } else { 0.0 };
            let kids = (base_kids + drift - if s > 4 && rng.uniform() < 0.2 { 1.0 } else { 0.0 })
                .clamp(0.0, 6.0);
            kids_path.push(kids);
            inc_path.push(base_inc + 0.05 * s as f64 + 0.25 * rng.normal());
        }
        let kbar = kids_path.iter().sum::<f64>() / t as f64;
        let ibar = inc_path.iter().sum::<f64>() / t as f64;
        let c = 0.9 * (ibar - 10.0) - 0.4 * (kbar - 1.5) - 0.01 * (age0 - 37.0)
            + 0.8 * rng.normal();
        for s in 0..t {
            let idx = -0.45 * kids_path[s] - 0.6 * (inc_path[s] - 10.0);
            let y = ((idx + c - rng.logistic()) >= 0.0) as u8;
            writeln!(
                f,
                "w{:04},{},{},{},{},{:.6}",
                i,
                1980 + s,
                y,
                kids_path[s] as i64,
                age0 as i64,
                inc_path[s]
            )
            .unwrap();
        }
    }
    println!("wrote crates/core/tests/data/synth_panel.csv");
}
