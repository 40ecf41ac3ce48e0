//! Acceptance criteria 1-10, one PASS/FAIL/SKIP line each.
//!
//! Pass criterion numbers as arguments to run a subset
//! (`cargo test --release --test acceptance -- 4 9`).

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::Instant;

use common::{gig_quad, hessian, ln_bessel_k_quad, mean_sd, posterior_gig, total_mass};
use msvg_cli::panel::{load_returns, read_return_matrix, LoadOptions};
use msvg_cli::report::correlation;
use msvg_cli::stats::summarize;
use msvg_core::ecm::{fit, fit_sample, observed_loglik, Algorithm, FitConfig};
use msvg_core::harness::{replicate_data, run_study, FitSettings, ParamSpec, StudyResult, StudySpec};
use msvg_core::infer::{aicc, observed_info, params_from_theta, standard_errors, theta_vector};
use msvg_core::msvg::{posterior_lambda_moments, sample, CenterGuard, MsvgParams, Params, Sample};
use msvg_core::specfun::log_bessel_k;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { verdict: Verdict::Pass, lines: Vec::new() }
    }

    /// Records a sub-check; any failing check fails the criterion.
    fn check(&mut self, ok: bool, msg: impl Into<String>) {
        let msg = msg.into();
        self.lines.push(format!("{} {msg}", if ok { "ok  " } else { "FAIL" }));
        if !ok {
            self.verdict = Verdict::Fail;
        }
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.lines.push(format!("     {}", msg.into()));
    }
}

fn params(mu: &[f64], sigma: &[f64], gamma: &[f64], nu: f64) -> MsvgParams {
    let d = mu.len();
    MsvgParams::new(DVector::from_row_slice(mu), DMatrix::from_row_slice(d, d, sigma), DVector::from_row_slice(gamma), nu)
        .unwrap()
}

fn study(truth: &MsvgParams, n: usize, r: usize, seed: u64, algorithms: Vec<Algorithm>) -> StudySpec {
    StudySpec {
        name: String::new(),
        true_params: ParamSpec::from(truth),
        n,
        r,
        seed,
        algorithms,
        delta_levels: None,
        gamma_levels: None,
        fit: FitSettings::default(),
    }
}

fn label_index(res: &StudyResult, label: &str) -> usize {
    res.labels.iter().position(|l| l == label).unwrap()
}

fn c1_bessel() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst: (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..500 {
        let nu = 20.0 * rng.random::<f64>();
        let z = 50.0 * (1.0 - rng.random::<f64>());
        // relative error of K is the absolute error of ln K
        let err = (log_bessel_k(nu, z).unwrap() - ln_bessel_k_quad(nu, z)).abs();
        if err > worst.0 {
            worst = (err, nu, z);
        }
    }
    o.check(worst.0 <= 1e-12, format!("500 random points: max relative error {:.2e} at nu={:.4} z={:.4}", worst.0, worst.1, worst.2));
    let mut worst_half: f64 = 0.0;
    for &z in &[1e-3, 0.1, 0.5, 1.0, 2.0, 7.5, 20.0, 49.0] {
        let base = 0.5 * (std::f64::consts::PI / (2.0 * z)).ln() - z;
        let forms = [(0.5, base), (1.5, base + (1.0 / z).ln_1p()), (2.5, base + (3.0 / z + 3.0 / (z * z)).ln_1p())];
        for (nu, want) in forms {
            let got = log_bessel_k(nu, z).unwrap();
            worst_half = worst_half.max((got - want).abs() / want.abs().max(1.0));
        }
    }
    o.check(worst_half <= 1e-14, format!("half-integer closed forms: max error {worst_half:.2e}"));
    o
}

fn random_spd(rng: &mut ChaCha20Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn c2_gig() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let guard = CenterGuard::new(1e-300).unwrap();
    let mut worst = [0.0f64; 3];
    for _ in 0..200 {
        let d = rng.random_range(1..=3);
        let mu = DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
        let sigma = random_spd(&mut rng, d);
        let gamma = DVector::from_fn(d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let nu = 0.3 + 4.7 * rng.random::<f64>();
        let y = &mu + DVector::from_fn(d, |_, _| 6.0 * rng.random::<f64>() - 3.0);
        let p = MsvgParams::new(mu.clone(), sigma.clone(), gamma.clone(), nu).unwrap();
        let data = DMatrix::from_row_slice(1, d, y.as_slice());
        let mix = posterior_lambda_moments(&Params::Iid(p), &Sample::iid(&data), guard).unwrap();
        let (pp, chi, psi2) = posterior_gig(&mu, &sigma, &gamma, nu, &y);
        let q = gig_quad(pp, chi, psi2);
        worst[0] = worst[0].max((mix.e_lambda[0] - q.e_lambda).abs());
        worst[1] = worst[1].max((mix.e_inv_lambda[0] - q.e_inv_lambda).abs());
        worst[2] = worst[2].max((mix.e_log_lambda[0] - q.e_log_lambda).abs());
    }
    for (name, w) in ["E(lambda)", "E(1/lambda)", "E(log lambda)"].iter().zip(worst) {
        o.check(w <= 1e-8, format!("{name}: max absolute error {w:.2e} over 200 points"));
    }
    o
}

fn c3_normalization() -> Outcome {
    let mut o = Outcome::new();
    for nu in [0.6, 1.0, 3.0] {
        for gamma in [[0.0, 0.0], [0.2, 0.3]] {
            let m2 = total_mass(&params(&[0.1, -0.1], &[1.0, 0.4, 0.4, 1.0], &gamma, nu));
            let m1 = total_mass(&params(&[0.1], &[1.5], &gamma[1..], nu));
            o.check((m2 - 1.0).abs() <= 1e-4, format!("d=2 nu={nu} gamma={gamma:?}: mass {m2:.8}"));
            o.check((m1 - 1.0).abs() <= 1e-4, format!("d=1 nu={nu} gamma={:?}: mass {m1:.8}", &gamma[1..]));
        }
    }
    o
}

fn c4_algorithm_comparison() -> Outcome {
    let mut o = Outcome::new();
    let truth = MsvgParams::base_bivariate(2.5);
    let spec = study(&truth, 1000, 50, 20240501, vec![Algorithm::Mcecm, Algorithm::Ecme, Algorithm::Hecm]);
    let res = run_study(&spec).unwrap();
    // reported means per algorithm, in parameter-vector order, then mean loglik
    let table: [[f64; 9]; 3] = [
        [-0.0072, -0.0069, 0.9959, 0.3973, 0.9914, 0.2067, 0.3062, 2.5699, -2713.41],
        [-0.0072, -0.0069, 0.9959, 0.3973, 0.9914, 0.2067, 0.3062, 2.5709, -2713.41],
        [-0.0072, -0.0069, 0.9959, 0.3973, 0.9914, 0.2068, 0.3062, 2.5710, -2713.41],
    ];
    for (c, reported) in res.cells.iter().zip(table) {
        let alg = c.key.algorithm;
        o.note(format!("{alg}: n_ok={} mean conv_iter={:.1} time={:.1}s", c.n_ok, c.mean_conv_iter, c.total_time));
        for (j, label) in res.labels.iter().enumerate() {
            let (m, se, t) = (c.mean[j], c.mc_se[j], c.truth[j]);
            o.check((m - t).abs() <= 3.0 * se, format!("{alg} {label}: mean {m:.4} (se {se:.4}) vs true {t}"));
            let rep = reported[j];
            o.check((m - rep).abs() <= 3.0 * se, format!("{alg} {label}: mean {m:.4} vs reported {rep}"));
        }
        let (m, se) = (c.mean_loglik, c.mc_se_loglik);
        o.check((m - reported[8]).abs() <= 3.0 * se, format!("{alg} loglik: mean {m:.2} (se {se:.2}) vs reported {}", reported[8]));
    }
    let (mc, hecm) = (&res.cells[0], &res.cells[2]);
    let mut worse = 0;
    for (a, b) in mc.replicates.iter().zip(&hecm.replicates) {
        if let (Some(la), Some(lb)) = (a.loglik, b.loglik) {
            if lb < la - 1e-6 * la.abs() {
                worse += 1;
            }
        }
    }
    o.check(worse == 0, format!("HECM loglik below MCECM on {worse} of {} seeds", mc.replicates.len()));
    o
}

fn c5_delta_sweep() -> Outcome {
    let mut o = Outcome::new();
    let mut spec = study(&MsvgParams::base_bivariate(0.6), 1000, 30, 20240502, vec![Algorithm::Hecm]);
    spec.delta_levels = Some(vec![1e-300, 1e-7, 1e-4]);
    let res = run_study(&spec).unwrap();
    let k = label_index(&res, "nu");
    let means: Vec<f64> = res.cells.iter().map(|c| c.mean[k]).collect();
    for c in &res.cells {
        o.note(format!(
            "delta={:e}: mean nu {:.4} (se {:.4}), n_ok={}, n_failed={}, flagged={}",
            c.key.delta.unwrap(),
            c.mean[k],
            c.mc_se[k],
            c.n_ok,
            c.n_failed,
            c.flagged
        ));
    }
    o.check(means[0] < 0.45, format!("mean nu at 1e-300 = {:.4} < 0.45", means[0]));
    o.check((0.55..=0.65).contains(&means[2]), format!("mean nu at 1e-4 = {:.4} in [0.55, 0.65]", means[2]));
    let gaps: Vec<f64> = means.iter().map(|m| (m - 0.6).abs()).collect();
    o.check(gaps[0] > gaps[1] && gaps[1] > gaps[2], format!("|mean nu - 0.6| = {gaps:.4?} strictly decreasing"));
    o
}

fn c6_trivariate() -> Outcome {
    let mut o = Outcome::new();
    let truth = params(&[0.0; 3], &[1.0, 0.4, 0.3, 0.4, 1.0, 0.2, 0.3, 0.2, 1.0], &[0.2, 0.3, 0.4], 1.0);
    let mut spec = study(&truth, 1000, 20, 20240503, vec![Algorithm::Hecm]);
    spec.fit.delta_cap = Some(1e-2);
    let res = run_study(&spec).unwrap();
    let c = &res.cells[0];
    let m = c.mean[label_index(&res, "nu")];
    o.note(format!("n_ok={} n_failed={}", c.n_ok, c.n_failed));
    o.check((0.93..=1.07).contains(&m), format!("mean nu {m:.4} in [0.93, 1.07]"));
    o
}

fn c7_skew() -> Outcome {
    let mut o = Outcome::new();
    let mut spec = study(&MsvgParams::base_bivariate(3.0), 1000, 20, 20240504, vec![Algorithm::Hecm]);
    spec.gamma_levels = Some(vec![vec![2.0, 2.0]]);
    let res = run_study(&spec).unwrap();
    let c = &res.cells[0];
    for j in 1..=2 {
        let m = c.mean[label_index(&res, &format!("gamma[{j}]"))];
        o.check((m - 2.0).abs() <= 0.1, format!("nu=3 gamma=(2,2): mean gamma[{j}] {m:.4} within 0.1 of 2"));
    }

    let mut spec = study(&MsvgParams::base_bivariate(0.6), 1000, 20, 20240505, vec![Algorithm::Hecm]);
    spec.gamma_levels = Some(vec![vec![0.5, 2.0]]);
    let res = run_study(&spec).unwrap();
    let c = &res.cells[0];
    let m = c.mean[label_index(&res, "nu")];
    o.check((0.55..=0.65).contains(&m), format!("nu=0.6 gamma=(0.5,2): mean nu {m:.4} in [0.55, 0.65]"));
    let switched = c.replicates.iter().filter(|r| r.switch_iter.is_some()).count();
    o.note(format!(
        "mean switch_iter {:.1}, mean conv_iter {:.1}",
        c.mean_switch_iter.unwrap_or(f64::NAN),
        c.mean_conv_iter
    ));
    o.check(
        switched as f64 >= 0.8 * c.replicates.len() as f64,
        format!("switch to ECME recorded on {switched} of {} replicates", c.replicates.len()),
    );
    o
}

fn c8_louis() -> Outcome {
    let mut o = Outcome::new();
    let data = sample(&MsvgParams::base_bivariate(3.0), 1000, 21).unwrap();
    let s = Sample::iid(&data);
    let cfg = FitConfig::default();
    let guard = cfg.guard(2).unwrap();
    let p = fit(&data, &cfg).unwrap().params;
    let info = observed_info(&p, &s, guard).unwrap();
    let theta = theta_vector(&p);
    let steps: Vec<f64> = theta.iter().map(|v| 1e-4 * v.abs().max(0.1)).collect();
    let f = |t: &DVector<f64>| observed_loglik(&s, &params_from_theta(&p, t).unwrap(), guard).unwrap();
    let num = -hessian(f, &theta, &steps);
    let trace = info.matrix.trace();
    let (mut checked, mut worst) = (0, 0.0f64);
    for i in 0..num.nrows() {
        for j in 0..num.ncols() {
            if num[(i, j)].abs() > 1e-6 * trace {
                checked += 1;
                worst = worst.max((info.matrix[(i, j)] / num[(i, j)] - 1.0).abs());
            }
        }
    }
    o.check(worst <= 0.05, format!("(a) Louis vs difference Hessian: {checked} entries, max relative gap {worst:.4}"));

    let truth = params(&[0.0], &[1.0], &[0.3], 1.5);
    let (n, r) = (2000, 200);
    let rows: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..r)
        .into_par_iter()
        .map(|i| {
            let data = replicate_data(&truth, n, 8, i).ok()?;
            let cfg = FitConfig::new(Algorithm::Hecm);
            let rep = fit(&data, &cfg).ok().filter(|rep| rep.converged)?;
            let info = observed_info(&rep.params, &Sample::iid(&data), cfg.guard(1).unwrap()).ok()?;
            let se = standard_errors(&info).ok()?;
            Some((theta_vector(&rep.params).iter().copied().collect(), se.values))
        })
        .collect();
    let good: Vec<&(Vec<f64>, Vec<f64>)> = rows.iter().flatten().collect();
    o.note(format!("(b) {} of {r} refits usable", good.len()));
    for (j, label) in ["mu", "sigma", "gamma", "nu"].iter().enumerate() {
        let est: Vec<f64> = good.iter().map(|g| g.0[j]).collect();
        let se: Vec<f64> = good.iter().map(|g| g.1[j]).collect();
        let (_, sd) = mean_sd(&est);
        let (mse, _) = mean_sd(&se);
        o.check((mse / sd - 1.0).abs() <= 0.2, format!("(b) {label}: mean SE {mse:.5} vs replicate SD {sd:.5}"));
    }
    o
}

fn c9_scale_equivariance() -> Outcome {
    let mut o = Outcome::new();
    let data = sample(&MsvgParams::base_bivariate(2.0), 1000, 9).unwrap();
    let big = &data * 100.0;
    let cfg = FitConfig { max_iter: 400, min_iter: 400, ..FitConfig::new(Algorithm::Hecm) };
    let a = fit(&data, &cfg).unwrap();
    let b = fit(&big, &cfg).unwrap();
    let back = b.params.scaled(0.01);
    let (ta, tb) = (theta_vector(&a.params), theta_vector(&back));
    let worst = ta.iter().zip(tb.iter()).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs())).fold(0.0, f64::max);
    o.check(worst <= 1e-8, format!("max relative gap over all parameters {worst:.2e}"));
    let shift = (1000 * 2) as f64 * 100f64.ln();
    let gap = (a.final_loglik - (b.final_loglik + shift)).abs() / a.final_loglik.abs();
    o.note(format!("loglik gap after the Jacobian shift {gap:.2e}"));
    o
}

/// Reference values for the five-index panel (summary means are per 1000).
const REAL_SERIES: usize = 5;
const REAL_SD: [f64; 5] = [0.0146, 0.0136, 0.0127, 0.0114, 0.0287];
const REAL_KURT: [f64; 5] = [9.4529, 12.9395, 11.0138, 10.4846, 11.7483];
const REAL_SKEW: [f64; 5] = [0.0208, -0.2939, -0.0946, -0.7291, 0.1524];
const REAL_MEAN_X1000: [f64; 5] = [0.2901, 0.1096, 0.1223, 0.1587, 0.1755];

fn c10_real_data() -> Outcome {
    let mut o = Outcome::new();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/panel.csv");
    let opts = LoadOptions { date_column: Some("Date".into()), ..LoadOptions::log() };
    let panel = load_returns(&fixture, &opts).unwrap();
    o.check(panel.n() == 394 && panel.d() == 5 && panel.dropped_rows == 6, format!(
        "fixture: n={} d={} dropped={}",
        panel.n(),
        panel.d(),
        panel.dropped_rows
    ));
    let back = read_return_matrix(panel.to_csv().unwrap().as_bytes()).unwrap();
    o.check(
        back.values == panel.values && back.dates == panel.dates && back.series_names == panel.series_names,
        "fixture returns survive a CSV round trip bit for bit",
    );
    o.check(panel.values.iter().all(|v| v.is_finite()), "fixture returns are finite");

    let Ok(path) = std::env::var("MSVG_REAL_DATA") else {
        if matches!(o.verdict, Verdict::Pass) {
            o.verdict = Verdict::Skip;
        }
        o.note("real-data checks skipped: MSVG_REAL_DATA is not set");
        return o;
    };
    let date = std::env::var("MSVG_REAL_DATA_DATE_COLUMN").unwrap_or_else(|_| "Date".into());
    let opts = LoadOptions { date_column: Some(date), ..LoadOptions::log() };
    let panel = match load_returns(Path::new(&path), &opts) {
        Ok(p) => p,
        Err(e) => {
            o.check(false, format!("cannot load {path}: {e:#}"));
            return o;
        }
    };
    o.check(panel.n() == 2188 && panel.d() == REAL_SERIES, format!("n = {} (d = {})", panel.n(), panel.d()));
    if panel.d() != REAL_SERIES {
        return o;
    }
    for (j, s) in summarize(&panel).iter().enumerate() {
        let close = |a: f64, b: f64| (a - b).abs() <= 5e-5;
        o.check(
            close(1000.0 * s.mean, REAL_MEAN_X1000[j])
                && close(s.sd, REAL_SD[j])
                && close(s.skewness, REAL_SKEW[j])
                && close(s.kurtosis, REAL_KURT[j]),
            format!(
                "{}: mean*1000 {:.4} sd {:.4} skew {:.4} kurt {:.4}",
                s.name,
                1000.0 * s.mean,
                s.sd,
                s.skewness,
                s.kurtosis
            ),
        );
    }
    for (ar, nu_ref, aicc_ref) in [(0, 1.40, -69422.0), (1, 1.45, -70866.0)] {
        let cfg = FitConfig::real_data(Algorithm::Hecm, ar);
        let sample = if ar == 1 { Sample::ar1(&panel.values).unwrap() } else { Sample::iid(&panel.values) };
        match fit_sample(&sample, &cfg) {
            Ok(rep) => {
                let k = rep.params.free_parameter_count();
                let a = aicc(rep.final_loglik, k, rep.n_obs).unwrap();
                let nu = rep.params.nu();
                o.check((nu - nu_ref).abs() <= 0.05, format!("AR({ar}): nu {nu:.4} vs {nu_ref}"));
                o.check((a - aicc_ref).abs() <= 30.0, format!("AR({ar}): AICc {a:.1} vs {aicc_ref}"));
                let corr = correlation(rep.params.sigma());
                o.note(format!("AR({ar}): corr_sigma[1,2] = {:.2}", corr[(0, 1)]));
            }
            Err(e) => o.check(false, format!("AR({ar}) fit failed: {e}")),
        }
    }
    o
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "special functions vs quadrature", c1_bessel),
        (2, "E-step vs GIG quadrature", c2_gig),
        (3, "density normalization", c3_normalization),
        (4, "algorithm comparison, base model", c4_algorithm_comparison),
        (5, "delta sweep, d=2", c5_delta_sweep),
        (6, "d=3 spot check", c6_trivariate),
        (7, "skew spot checks", c7_skew),
        (8, "Louis standard errors", c8_louis),
        (9, "scale equivariance", c9_scale_equivariance),
        (10, "real-data workflow", c10_real_data),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        let tag = match out.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("criterion {id:>2}: {tag} {name} ({secs:.1} s)");
        for l in &out.lines {
            println!("    {l}");
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
