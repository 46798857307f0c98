//! Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

use std::process::Command;
use std::time::Instant;

use averis::decomposition::{attribute_outliers, decompose, diagnose};
use averis::extreme_stats::{
    dimension_scaling_check, normal_cdf, q_l_delta, verify_dense_amplification, verify_extreme_dominance,
    verify_extreme_separation, NoiseDistribution, ScalingConfig, TailModel, MC_SLACK,
};
use averis::io::{read_tensor, to_json, write_tensor, DType, Report};
use averis::linalg::{center, column_mean, norm, thin_svd, Matrix};
use averis::mean_residual::{backward, backward_vanilla, compare_forward, forward, forward_vanilla};
use averis::quantizer::QuantConfig;
use averis::synth::{self, AnisotropicConfig};
use averis::trainer::{train, train_many, Mode, ModelConfig, ToyModel, TrainConfig};
use averis::{rng, Error};
use rand::Rng as _;

type Check = Result<(bool, Vec<String>), Error>;

const DISTRIBUTIONS: [NoiseDistribution; 3] =
    [NoiseDistribution::Gaussian, NoiseDistribution::Rademacher, NoiseDistribution::Uniform];

fn frob_sq(m: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            s += m.get(i, j).powi(2);
        }
    }
    s
}

fn naive(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|p| a.get(i, p) * b.get(p, j)).sum())
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    let d = a.sub(b).unwrap().frobenius();
    let n = b.frobenius();
    if n == 0.0 {
        d
    } else {
        d / n
    }
}

fn energy_separation() -> Check {
    let mut r = rng::stream(1, 0xacc1);
    let mut worst: f64 = 0.0;
    let mut shapes = vec![(1024, 256)];
    while shapes.len() < 50 {
        shapes.push((r.random_range(2..=1024), r.random_range(2..=256)));
    }
    for (i, &(l, m)) in shapes.iter().enumerate() {
        let scale = r.random_range(0.0..10.0);
        let (x, _) = synth::mean_biased(l, m, scale, 1.0, i as u64);
        let d = decompose(&x, None, i as u64)?;
        let total = frob_sq(&x);
        worst = worst.max((total - (d.mean_energy + d.spike_energy + d.tail_energy)).abs() / total);
    }
    Ok((worst <= 1e-8, vec![format!("max relative residual {worst:.2e} over {} matrices up to 1024x256", shapes.len())]))
}

fn averis_exactness() -> Check {
    let cfg = QuantConfig::pass_through();
    let mut r = rng::stream(2, 0xacc2);
    let (mut fwd, mut bwd, mut mid): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for t in 0..100u64 {
        let (l, m, n) = (r.random_range(1..=96), r.random_range(1..=96), r.random_range(1..=96));
        let shift = r.random_range(0.0..20.0);
        let (x, _) = synth::mean_biased(l, m, shift, 1.0, t);
        let w = Matrix::gaussian(m, n, 1.0, &mut r);
        let (d, _) = synth::mean_biased(l, n, shift / 4.0, 1.0, t + 1000);
        let xw = naive(&x, &w);
        fwd = fwd.max(rel(&forward(&x, &w, &cfg)?, &xw)).max(rel(&forward_vanilla(&x, &w, &cfg)?, &xw));
        let g = backward(&x, &w, &d, &cfg)?;
        let v = backward_vanilla(&x, &w, &d, &cfg)?;
        let dwt = naive(&d, &w.transpose());
        let xtd = naive(&x.transpose(), &d);
        bwd = bwd
            .max(rel(&g.grad_input, &dwt))
            .max(rel(&g.grad_weight, &xtd))
            .max(rel(&v.grad_input, &dwt))
            .max(rel(&v.grad_weight, &xtd));
        let s = xtd.frobenius();
        if s > 0.0 {
            mid = mid.max(g.terms.residual_mean.frobenius() / s).max(g.terms.mean_residual.frobenius() / s);
        }
    }
    let ok = fwd <= 1e-10 && bwd <= 1e-10 && mid <= 1e-10;
    Ok((ok, vec![format!("100 triples: forward {fwd:.2e}, backward {bwd:.2e}, middle terms {mid:.2e} (relative)")]))
}

fn dominance_cells() -> Vec<(f64, f64, f64)> {
    let mut cells = Vec::new();
    for mu in [1.0, 2.0, 4.0] {
        for sigma in [0.5, 1.0] {
            for frac in [0.25, 0.5] {
                cells.push((mu, sigma, frac * mu));
            }
        }
    }
    cells
}

fn theorem_one() -> Check {
    let cells = dominance_cells();
    let mut checked = 0;
    let mut misses = Vec::new();
    let mut min_margin = f64::INFINITY;
    for dist in DISTRIBUTIONS {
        for &(mu, sigma, t) in &cells {
            for seed in 0..3 {
                let m = TailModel { mu, sigma, l: 1, distribution: dist };
                let s = verify_extreme_dominance(&m, t, 100_000, seed)?;
                let bound = 1.0 - 2.0 * (-(mu - t).powi(2) / (2.0 * sigma * sigma)).exp();
                assert!((bound - s.theoretical_bound).abs() < 1e-12);
                checked += 1;
                let margin = (s.empirical_prob - bound) / s.mc_stderr.max(f64::MIN_POSITIVE);
                min_margin = min_margin.min(margin);
                if s.empirical_prob < bound - MC_SLACK * s.mc_stderr {
                    misses.push(format!("{dist:?} mu={mu} sigma={sigma} t={t} seed={seed}: {} < {bound}", s.empirical_prob));
                }
            }
        }
    }
    let mut lines = vec![format!(
        "{} cells x 3 laws x seeds 0..2 = {checked} checks, {} below bound - 4 stderr; tightest margin {min_margin:.1} stderr",
        cells.len(),
        misses.len()
    )];
    lines.extend(misses.iter().cloned());
    Ok((misses.is_empty(), lines))
}

fn theorem_two() -> Check {
    let cells = [(3.0, 1.0, 1.0), (2.0, 1.0, 0.5), (4.0, 1.0, 2.0), (3.0, 0.5, 2.5)];
    let l = 1024;
    let mut ok = true;
    let mut lines = Vec::new();
    for dist in DISTRIBUTIONS {
        for (mu, sigma, t) in cells {
            let (a, b) = verify_dense_amplification(&TailModel { mu, sigma, l, distribution: dist }, t, 1_000, 0)?;
            let lower = l as f64 * (1.0 - 2.0 * (-(mu - t).powi(2) / (2.0 * sigma * sigma)).exp());
            let upper = 2.0 * l as f64 * (-t * t / (2.0 * sigma * sigma)).exp();
            let pass_a = a.empirical_count_mean >= lower - MC_SLACK * a.empirical_count_stderr;
            let pass_b = b.empirical_count_mean <= upper + MC_SLACK * b.empirical_count_stderr;
            if !(pass_a && pass_b) {
                ok = false;
                lines.push(format!("{dist:?} ({mu},{sigma},{t}): E[C]={} vs {lower}, null E[C]={} vs {upper}", a.empirical_count_mean, b.empirical_count_mean));
            }
        }
    }
    let (a, _) = verify_dense_amplification(&TailModel::gaussian(3.0, 1.0, l), 1.0, 1_000, 0)?;
    let truth = l as f64 * (normal_cdf(2.0) + normal_cdf(-4.0));
    let values = (a.count_bound - 746.8).abs() < 0.1 && (truth - 1000.8).abs() < 0.1;
    let near = (a.empirical_count_mean - truth).abs() <= MC_SLACK * a.empirical_count_stderr;
    ok &= values && near;
    lines.insert(
        0,
        format!(
            "(mu=3, sigma=1, t=1): bound {:.2} (~746.8), truth {truth:.2} (~1000.8), empirical {:.2} ± {:.2}; 24 regime checks {}",
            a.count_bound,
            a.empirical_count_mean,
            a.empirical_count_stderr,
            if lines.is_empty() { "PASS" } else { "FAIL" }
        ),
    );
    Ok((ok, lines))
}

fn theorem_three() -> Check {
    let mu = 4.0;
    let (mut ok_a, mut ok_b, mut ok_c) = (true, true, true);
    let mut lines = Vec::new();
    for l in [4usize, 64, 1024] {
        for delta in [0.05, 0.2] {
            let s = verify_extreme_separation(&TailModel::gaussian(mu, 1.0, l), delta, 100_000, 0)?;
            let q = q_l_delta(1.0, l, delta)?;
            let pa = s.empirical_prob_above_mu_plus_q;
            let a = pa >= 1.0 - delta - MC_SLACK * s.stderr_above_mu_plus_q;
            let closed = 1.0 - 0.5f64.powi(l as i32);
            let se_b = (closed * (1.0 - closed) / 1e5).sqrt();
            let b = (s.empirical_prob_above_mu - closed).abs() <= MC_SLACK * se_b;
            let vb = (2.0 * (2.0 * l as f64 / delta).ln()).sqrt();
            let c = s.frac_within_variance_bound >= 1.0 - delta - MC_SLACK * s.stderr_within_variance_bound;
            ok_a &= a;
            ok_b &= b;
            ok_c &= c;
            lines.push(format!(
                "l={l:<4} delta={delta:<4} q={q:.3}: (a) P(M>=|mu|+q)={pa:.4} vs 1-delta={:.2} [{}], level delta {}; (b) P(M>=|mu|)={:.5} vs {closed:.5} [{}]; (c) P(M<={vb:.3})={:.4} [{}]",
                1.0 - delta,
                tag(a),
                if (pa - delta).abs() <= MC_SLACK * s.stderr_above_mu_plus_q { "matched" } else { "missed" },
                s.empirical_prob_above_mu,
                tag(b),
                s.frac_within_variance_bound,
                tag(c)
            ));
        }
    }
    lines.insert(0, format!("mu=4 sigma=1, 1e5 trials: (a) {} (b) {} (c) {}", tag(ok_a), tag(ok_b), tag(ok_c)));
    Ok((ok_a && ok_b && ok_c, lines))
}

/// `|μ_j| = size·σ` with random signs, `σ = 1`.
fn shifted_noise(l: usize, m: usize, size: f64, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 0xacc6);
    let mu: Vec<f64> = (0..m).map(|_| if r.random::<bool>() { size } else { -size }).collect();
    let mut x = Matrix::gaussian(l, m, 1.0, &mut r);
    x.add_row_broadcast(&mu);
    x
}

fn attribution() -> Check {
    let pure = Matrix::broadcast_row(128, &(0..64).map(|j| (j as f64 - 20.0) * 0.3).collect::<Vec<_>>());
    let pm = attribute_outliers(&pure, &decompose(&pure, None, 0)?)?.aggregate;
    let spike = synth::centered_rank_one(512, 128, 3.0, 1);
    let ps = attribute_outliers(&spike, &decompose(&spike, Some(1), 0)?)?.aggregate;
    let mut mean_share = 0.0;
    let seeds = 10;
    for seed in 0..seeds {
        let x = shifted_noise(1024, 256, 8.0, seed);
        mean_share += attribute_outliers(&x, &decompose(&x, None, seed)?)?.aggregate.mean / seeds as f64;
    }
    let a = (pm.mean - 1.0).abs() <= 1e-9;
    let b = (ps.spike - 1.0).abs() <= 1e-9;
    let c = mean_share > 0.9;
    Ok((
        a && b && c,
        vec![
            format!("pure mean: rho_mean = {:.12} [{}]", pm.mean, tag(a)),
            format!("pure spike: rho_spike = {:.12} [{}]", ps.spike, tag(b)),
            format!("|mu_j| = 8 sigma, 1024x256, 10 seeds: aggregate rho_mean = {mean_share:.4} (need > 0.9) [{}]", tag(c)),
        ],
    ))
}

fn error_reversal() -> Check {
    let mut wins = 0;
    let mut control_ok = true;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let (x, _) = synth::mean_biased(1024, 256, 5.0, 1.0, seed);
        let w = Matrix::gaussian(256, 256, 1.0 / 16.0, &mut rng::stream(seed, 0xacc7));
        let cfg = QuantConfig::stochastic(seed);
        let e = compare_forward(&x, &w, &cfg)?;
        let xc = center(&synth::mean_biased(1024, 256, 0.0, 1.0, seed + 100).0);
        let c = compare_forward(&xc, &w, &cfg)?;
        let within = (c.averis - c.vanilla).abs() <= 0.05 * c.vanilla;
        control_ok &= within;
        if e.averis < e.vanilla {
            wins += 1;
        }
        lines.push(format!(
            "seed {seed}: averis {:.4} vanilla {:.4} (ratio {:.3}); token-varying part {:.4} vs {:.4} (x{:.2}); centered control {:.4} vs {:.4}",
            e.averis,
            e.vanilla,
            e.averis / e.vanilla,
            e.averis_centered,
            e.vanilla_centered,
            e.vanilla_centered / e.averis_centered,
            c.averis,
            c.vanilla
        ));
    }
    lines.insert(0, format!("averis < vanilla on {wins}/10 seeds; centered control within 5%: {}", tag(control_ok)));
    Ok((wins == 10 && control_ok, lines))
}

fn training_ordering() -> Check {
    let model_cfg = ModelConfig::default();
    let base = TrainConfig::default();
    let logs = train_many(&model_cfg, &base, &Mode::ALL, &[0, 1, 2])?;
    let mut held = 0;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let f = |m: Mode| logs.iter().find(|r| r.seed == seed && r.mode == m).unwrap().final_loss;
        let (full, av, va) = (f(Mode::Fullprec), f(Mode::Fp4Averis), f(Mode::Fp4Vanilla));
        let order = full <= av && av <= va;
        held += order as usize;
        lines.push(format!("seed {seed}: fullprec {full:.5}  fp4_averis {av:.5}  fp4_vanilla {va:.5}  ordered: {order}"));
    }
    let model = ToyModel::new(model_cfg, 0)?;
    let ident = TrainConfig { mode: Mode::Fp4Averis, quant: QuantConfig::pass_through(), ..base };
    let (_, id_log) = train(&model, &ident)?;
    let full0 = logs.iter().find(|r| r.seed == 0 && r.mode == Mode::Fullprec).unwrap();
    let gap = id_log
        .losses
        .iter()
        .zip(&full0.losses)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);
    let ident_ok = id_log.losses.len() == full0.losses.len() && gap <= 1e-8;
    lines.insert(0, format!("ordering held on {held}/3 seeds (need 2); identity quantizer max gap {gap:.2e} [{}]", tag(ident_ok)));
    Ok((held >= 2 && ident_ok, lines))
}

fn scaling_law() -> Check {
    let cfg = ScalingConfig::default();
    let rep = dimension_scaling_check(&cfg, 0)?;
    let xs: Vec<f64> = rep.points.iter().map(|p| (p.h as f64).ln()).collect();
    let ys: Vec<f64> = rep.points.iter().map(|p| p.mean_norm.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let ok = (0.45..=0.55).contains(&slope) && (slope - rep.slope).abs() < 1e-12;
    Ok((ok, vec![format!("H = {:?}: slope {slope:.4}", cfg.h_values)]))
}

fn alignment() -> Check {
    let cfg = AnisotropicConfig::default();
    let mut hits = 0;
    let mut cosines = Vec::new();
    for seed in 0..10u64 {
        let (x, _) = synth::anisotropic(512, 128, &cfg, seed);
        let mu = column_mean(&x);
        let v1 = thin_svd(&x).v.col(0);
        let cos = (mu.iter().zip(&v1).map(|(a, b)| a * b).sum::<f64>() / norm(&mu)).abs();
        let lib = diagnose(&x, 4, seed)?.cos_mu_v1;
        if cos >= 0.99 && lib >= 0.99 {
            hits += 1;
        }
        cosines.push(format!("{cos:.4}"));
    }
    Ok((hits >= 9, vec![format!("cos(mu, v1) >= 0.99 on {hits}/10 seeds: [{}]", cosines.join(", "))]))
}

fn round_trips() -> Check {
    let dir = tempfile::tempdir()?;
    let mut r = rng::stream(11, 0xacc11);
    let mut ok = true;
    for (i, &(l, m)) in [(1, 1), (7, 5), (64, 33), (300, 17)].iter().enumerate() {
        let x = Matrix::gaussian(l, m, 1e3, &mut r);
        let p = dir.path().join(format!("{i}.avts"));
        write_tensor(&p, &x, DType::F64)?;
        let back = read_tensor(&p)?;
        ok &= back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        write_tensor(&p, &x, DType::F32)?;
        let back = read_tensor(&p)?;
        ok &= back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == (*b as f32 as f64).to_bits());
        let q = dir.path().join(format!("{i}b.avts"));
        write_tensor(&q, &back, DType::F32)?;
        ok &= std::fs::read(&p)? == std::fs::read(&q)?;
    }
    let report = |v: f64| to_json(&Report::new("check", 3, vec![("k", 1)], vec![v, v / 3.0], false));
    ok &= report(0.1)? == report(0.1)?;

    let mut cli_ok = true;
    for format in ["json", "csv"] {
        let args = ["decompose", "--rows", "200", "--cols", "64", "--no-timestamp", "--format", format];
        let run = || Command::new(env!("CARGO_BIN_EXE_averis")).args(args).env_remove("AVERIS_SEED").output();
        let (a, b) = (run()?, run()?);
        cli_ok &= a.status.success() && !a.stdout.is_empty() && a.stdout == b.stdout;
    }
    Ok((
        ok && cli_ok,
        vec![format!("tensor files (f64 bit-exact, f32 stable) and reports: {}; CLI --no-timestamp byte-identical: {}", tag(ok), tag(cli_ok))],
    ))
}

fn tag(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() {
    let criteria: [(&str, f64, fn() -> Check); 11] = [
        ("energy separation identity", 30.0, energy_separation),
        ("mean-residual GeMM exactness", 30.0, averis_exactness),
        ("single-entry dominance bound", 120.0, theorem_one),
        ("row-count bounds", 60.0, theorem_two),
        ("row-maximum bounds", 120.0, theorem_three),
        ("outlier attribution sanity", 60.0, attribution),
        ("quantization-error reversal", 60.0, error_reversal),
        ("toy-training ordering", 600.0, training_ordering),
        ("square-root scaling law", 60.0, scaling_law),
        ("mean/v1 alignment", 60.0, alignment),
        ("format round trips", 10.0, round_trips),
    ];
    let mut passed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        let (ok, lines) = match result {
            Ok((ok, lines)) => (ok, lines),
            Err(e) => (false, vec![format!("error: {e}")]),
        };
        let in_time = secs <= *budget;
        let ok = ok && in_time;
        passed += ok as usize;
        let time_note = if in_time { String::new() } else { format!(", over the {budget} s budget") };
        println!("[{}] criterion {:>2}: {name} ({secs:.1} s{time_note})", tag(ok), i + 1);
        for l in lines {
            println!("       {l}");
        }
    }
    println!("{passed}/{} criteria passed", criteria.len());
    if passed != criteria.len() {
        std::process::exit(1);
    }
}
