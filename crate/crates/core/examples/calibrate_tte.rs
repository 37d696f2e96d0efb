//! Calibrates the treatment coefficients of the time-to-event scenarios.
//!
//! Prints, for each scenario, the true subgroup AHRs implied by the current
//! coefficients, typical follow-up of the last event, and bisection results for
//! the coefficients of scenarios 1 and 2.
//!
//! Run with `cargo run --release --example calibrate_tte`.

use subgroup_shrink::design::Endpoint;
use subgroup_shrink::simlab::{
    compute_true_effects, generate_tte_trial, GeneratorParams, SimScenario,
};
use subgroup_shrink::Result;

const N_LARGE: usize = 200_000;
const SEED: u64 = 7;

fn params(s: &mut SimScenario) -> &mut subgroup_shrink::simlab::TteParams {
    match &mut s.params {
        GeneratorParams::Tte(p) => p,
        _ => unreachable!(),
    }
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn main() -> Result<()> {
    for id in 1..=4 {
        let s = SimScenario::tte(id)?;
        let t = compute_true_effects(&s, N_LARGE, SEED)?;
        let ahr: Vec<f64> = t.theta.iter().map(|v| v.exp()).collect();
        let min = ahr.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ahr.iter().copied().fold(0.0, f64::max);
        println!(
            "scenario {id}: population AHR {:.3}, subgroup range {min:.3}-{max:.3}",
            t.population.exp()
        );
        for (l, a) in t.labels.iter().zip(&ahr) {
            print!("{l}:{a:.3} ");
        }
        println!();
        let mut last = Vec::new();
        for r in 0..20 {
            let d = generate_tte_trial(&s, 1000 + r)?;
            if let Endpoint::TimeToEvent { time, event } = d.endpoint() {
                last.push(
                    time.iter()
                        .zip(event)
                        .filter(|(_, &e)| e)
                        .map(|(&t, _)| t)
                        .fold(0.0, f64::max),
                );
                let min_fu = time.iter().copied().fold(f64::INFINITY, f64::min);
                if r == 0 {
                    println!("  shortest follow-up in first trial {min_fu:.3}");
                }
            }
        }
        last.sort_by(f64::total_cmp);
        println!(
            "  last event follow-up: median {:.3}, range {:.3}-{:.3}",
            last[10], last[0], last[19]
        );
    }

    // Scenario 1: population AHR 0.66.
    let base = SimScenario::tte(1)?;
    let b1 = bisect(-1.0, 0.0, |b| {
        let mut s = base.clone();
        params(&mut s).log_hr = b;
        compute_true_effects(&s, N_LARGE, SEED).unwrap().population - 0.66f64.ln()
    });
    println!("scenario 1 log_hr = {b1:.4}");

    // Scenario 2: AHR 0.53 in 4b/4c (log_hr), then 1.00 in 4a (interaction).
    let base = SimScenario::tte(2)?;
    let idx = |s: &SimScenario, l: &str| {
        compute_true_effects(s, N_LARGE, SEED)
            .unwrap()
            .index_of(l)
            .unwrap()
    };
    let i4b = idx(&base, "x4=b");
    let i4a = idx(&base, "x4=a");
    let b2 = bisect(-1.5, 0.0, |b| {
        let mut s = base.clone();
        params(&mut s).log_hr = b;
        compute_true_effects(&s, N_LARGE, SEED).unwrap().theta[i4b] - 0.53f64.ln()
    });
    let g2 = bisect(0.0, 1.5, |g| {
        let mut s = base.clone();
        params(&mut s).log_hr = b2;
        params(&mut s).interactions = vec![(3, 0, g)];
        compute_true_effects(&s, N_LARGE, SEED).unwrap().theta[i4a]
    });
    println!("scenario 2 log_hr = {b2:.4}, x4=a interaction = {g2:.4}");
    Ok(())
}
