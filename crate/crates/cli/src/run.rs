//! Experiment execution. Parameters are validated in full before any
//! sampling starts; every artifact except `manifest.json` is a pure function
//! of the config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use torwalk_core::algebra::{affine_span_defect, generate_algebra, proximal_dimension, DEFAULT_OMEGA, MEMBERSHIP_TOL};
use torwalk_core::diophantine::{dioph_screen, verify_main_theorem, MainTheoremParams};
use torwalk_core::discretized::{flatten_iterate, rescaled_empirical, FlattenParams};
use torwalk_core::lyapunov::{deviation_tails, lyapunov_vector, spectrum, top_exponent, TailMode};
use torwalk_core::specgap::{gap_sweep, symmetrize, DEFAULT_GROUP_CAP};
use torwalk_core::torus::{fourier_from_samples, frequency_ball, large_coefficient_scan, walk_samples, TorusPoint};
use torwalk_core::{Error, FiniteMeasure, IntMatrix};

use crate::config::{Experiment, ExperimentConfig, Params};
use crate::presets::{builtin_measure, BUILTIN_PREFIX};
use crate::CliError;

struct Equidistribute {
    n: usize,
    samples: usize,
    x0: String,
    radius: i64,
}

struct Lyapunov {
    n: usize,
    samples: usize,
    reorth_period: usize,
    omega: f64,
    tail_ns: Vec<usize>,
    tail_samples: usize,
}

struct FourierScan {
    n: usize,
    samples: usize,
    x0: String,
    t: f64,
    radius: i64,
    budget: u128,
}

struct DiophVerify {
    x0: String,
    a: Vec<i64>,
    t: f64,
    ns: Vec<usize>,
    lambda: Option<f64>,
    lambda_factor: f64,
    lambda_n: usize,
    lambda_samples: usize,
    c_window: f64,
    samples: usize,
    screen: Option<Screen>,
}

struct Screen {
    rho: f64,
    eta_fit: f64,
    n: usize,
    samples: usize,
}

struct Flatten {
    n: usize,
    particles: usize,
    lambda: Option<f64>,
    lambda_samples: usize,
    params: FlattenParams,
}

struct Specgap {
    primes: Vec<u64>,
    n_cap: usize,
    cap: usize,
    symmetrize: bool,
}

struct AlgebraInfo {
    n: usize,
    samples: usize,
    omega: f64,
    word_length: usize,
}

enum Plan {
    Equidistribute(Equidistribute),
    Lyapunov(Lyapunov),
    FourierScan(FourierScan),
    DiophVerify(DiophVerify),
    Flatten(Flatten),
    Specgap(Specgap),
    AlgebraInfo(AlgebraInfo),
}

fn positive(key: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        Err(CliError::Config(format!("param {key} must be positive")))
    } else {
        Ok(v)
    }
}

fn check(cond: bool, msg: &str) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg.to_string()))
    }
}

fn plan(cfg: &ExperimentConfig) -> Result<Plan, CliError> {
    let mut p = Params::new(&cfg.params);
    let plan = match cfg.experiment {
        Experiment::Equidistribute => {
            let e = Equidistribute {
                n: p.usize("n", 30)?,
                samples: positive("samples", p.usize("samples", 100_000)?)?,
                x0: p.string("x0", "golden-sqrt2"),
                radius: p.usize("radius", 3)? as i64,
            };
            check(e.samples >= 100, "param samples must be at least 100")?;
            Plan::Equidistribute(e)
        }
        Experiment::Lyapunov => {
            let l = Lyapunov {
                n: positive("n", p.usize("n", 100)?)?,
                samples: p.usize("samples", 10_000)?,
                reorth_period: positive("reorth_period", p.usize("reorth_period", 10)?)?,
                omega: p.f64("omega", 0.2)?,
                tail_ns: p.list("tail_ns", "10,20,40")?,
                tail_samples: positive("tail_samples", p.usize("tail_samples", 100_000)?)?,
            };
            check(l.samples >= 2, "param samples must be at least 2")?;
            check(l.reorth_period <= l.n, "param reorth_period must not exceed n")?;
            check(l.omega > 0.0, "param omega must be positive")?;
            check(l.tail_ns.iter().all(|&n| n > 0), "param tail_ns must be positive")?;
            Plan::Lyapunov(l)
        }
        Experiment::FourierScan => {
            let f = FourierScan {
                n: p.usize("n", 20)?,
                samples: p.usize("samples", 20_000)?,
                x0: p.string("x0", "golden-sqrt2"),
                t: p.f64("t", 0.1)?,
                radius: p.usize("radius", 4)? as i64,
                budget: p.f64("budget", 1e10)? as u128,
            };
            check(f.samples >= 100, "param samples must be at least 100")?;
            check(f.t > 0.0 && f.t < 1.0, "param t must lie in (0, 1)")?;
            Plan::FourierScan(f)
        }
        Experiment::DiophVerify => {
            let screen_rho = p.opt_f64("screen_rho")?;
            let eta_fit = p.f64("eta_fit", 1.0)?;
            let screen_n = p.usize("screen_n", 20)?;
            let screen_samples = p.usize("screen_samples", 2000)?;
            let d = DiophVerify {
                x0: p.string("x0", "1/5,2/5"),
                a: p.list("a", "5,0")?,
                t: p.f64("t", 0.4)?,
                ns: p.list("ns", "1,5,10,20")?,
                lambda: p.opt_f64("lambda")?,
                lambda_factor: p.f64("lambda_factor", 0.5)?,
                lambda_n: positive("lambda_n", p.usize("lambda_n", 100)?)?,
                lambda_samples: p.usize("lambda_samples", 2000)?,
                c_window: p.f64("c_window", 1.0)?,
                samples: p.usize("samples", 20_000)?,
                screen: screen_rho.map(|rho| Screen { rho, eta_fit, n: screen_n, samples: screen_samples }),
            };
            check(d.t > 0.0 && d.t < 0.5, "param t must lie in (0, 1/2)")?;
            check(d.c_window > 0.0, "param c_window must be positive")?;
            check(d.samples >= 100, "param samples must be at least 100")?;
            check(d.lambda_samples >= 2, "param lambda_samples must be at least 2")?;
            check(d.lambda.is_none_or(|l| l > 0.0), "param lambda must be positive")?;
            if let Some(s) = &d.screen {
                check(s.rho > 0.0 && s.rho < 1.0, "param screen_rho must lie in (0, 1)")?;
                check(s.samples > 0, "param screen_samples must be positive")?;
            }
            Plan::DiophVerify(d)
        }
        Experiment::Flatten => {
            let f = Flatten {
                n: p.usize("n", 40)?,
                particles: positive("particles", p.usize("particles", 20_000)?)?,
                lambda: p.opt_f64("lambda")?,
                lambda_samples: p.usize("lambda_samples", 2000)?,
                params: FlattenParams {
                    delta: p.f64("delta", 2f64.powi(-10))?,
                    eps: p.f64("eps", 0.05)?,
                    k_max: p.usize("k_max", 3)?,
                    particles: positive("mc_particles", p.usize("mc_particles", 100_000)?)?,
                    exact_cap: p.usize("exact_cap", 1 << 20)?,
                    cell_budget: p.usize("cell_budget", 50_000_000)?,
                    seed: cfg.seed,
                },
            };
            check(f.params.delta > 0.0 && f.params.delta < 1.0, "param delta must lie in (0, 1)")?;
            check(f.params.eps > 0.0, "param eps must be positive")?;
            check((1..=6).contains(&f.params.k_max), "param k_max must lie in 1..=6")?;
            check(f.lambda_samples >= 2, "param lambda_samples must be at least 2")?;
            Plan::Flatten(f)
        }
        Experiment::Specgap => {
            let s = Specgap {
                primes: p.list("primes", "5,7,11,13")?,
                n_cap: p.usize("n_cap", 10_000)?,
                cap: p.usize("cap", DEFAULT_GROUP_CAP)?,
                symmetrize: p.bool("symmetrize", true)?,
            };
            check(
                s.primes.iter().all(|&q| torwalk_core::specgap::is_prime(q)),
                "param primes must all be prime",
            )?;
            Plan::Specgap(s)
        }
        Experiment::AlgebraInfo => {
            let a = AlgebraInfo {
                n: positive("n", p.usize("n", 60)?)?,
                samples: positive("samples", p.usize("samples", 200)?)?,
                omega: p.f64("omega", DEFAULT_OMEGA)?,
                word_length: p.usize("word_length", 3)?,
            };
            check(a.omega > 0.0, "param omega must be positive")?;
            check((1..=4).contains(&a.word_length), "param word_length must lie in 1..=4")?;
            Plan::AlgebraInfo(a)
        }
    };
    p.finish()?;
    Ok(plan)
}

/// Resolves `builtin:<name>` or a JSON file path.
pub fn load_measure(path: &str) -> Result<FiniteMeasure<IntMatrix>, CliError> {
    if let Some(name) = path.strip_prefix(BUILTIN_PREFIX) {
        return builtin_measure(name).ok_or_else(|| CliError::Config(format!("unknown builtin measure {name:?}")));
    }
    let p = Path::new(path);
    if !p.is_file() {
        return Err(CliError::Config("measure_path not found".into()));
    }
    FiniteMeasure::load(p).map_err(|e| CliError::Config(format!("measure_path invalid: {e}")))
}

fn parse_point(s: &str, d: usize) -> Result<TorusPoint, CliError> {
    TorusPoint::parse(s, d).map_err(|e| CliError::Config(format!("param x0: {e}")))
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(name), contents).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, v: &Value) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(v).expect("serializable");
        s.push('\n');
        self.write(name, &s)
    }
}

/// Outcome of a successful run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub artifacts: Vec<String>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let plan = plan(cfg)?;
    let mu = load_measure(&cfg.measure_path)?;
    let d = mu.dim();
    // point parameters depend on d, so they are checked before any sampling
    match &plan {
        Plan::Equidistribute(e) => drop(parse_point(&e.x0, d)?),
        Plan::FourierScan(f) => drop(parse_point(&f.x0, d)?),
        Plan::DiophVerify(v) => {
            parse_point(&v.x0, d)?;
            check(v.a.len() == d, "param a must have one entry per coordinate")?;
            check(v.a.iter().any(|&x| x != 0), "param a must be nonzero")?;
        }
        _ => {}
    }
    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("output_dir: {e}")))?;
    let mut out = Artifacts { dir: dir.clone(), files: Vec::new() };
    let seed = cfg.seed;
    match plan {
        Plan::Equidistribute(e) => equidistribute(&mu, &e, seed, &mut out)?,
        Plan::Lyapunov(l) => lyapunov(&mu, &l, seed, &mut out)?,
        Plan::FourierScan(f) => fourier_scan(&mu, &f, seed, &mut out)?,
        Plan::DiophVerify(v) => dioph_verify(&mu, &v, seed, &mut out)?,
        Plan::Flatten(f) => flatten(&mu, &f, seed, &mut out)?,
        Plan::Specgap(s) => specgap(&mu, &s, seed, &mut out)?,
        Plan::AlgebraInfo(a) => algebra_info(&mu, &a, seed, &mut out)?,
    }
    let text = cfg.serialize();
    let hash: String = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    let manifest = json!({
        "experiment": cfg.experiment.as_str(),
        "config_sha256": hash,
        "version": env!("CARGO_PKG_VERSION"),
        "threads": rayon::current_num_threads(),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "artifacts": out.files,
    });
    let files = out.files.clone();
    out.json("manifest.json", &manifest)?;
    Ok(RunSummary { output_dir: dir, artifacts: files })
}

fn equidistribute(mu: &FiniteMeasure<IntMatrix>, e: &Equidistribute, seed: u64, out: &mut Artifacts) -> Result<(), CliError> {
    let x0 = parse_point(&e.x0, mu.dim())?;
    let w = walk_samples(mu, e.n, &x0, e.samples, seed)?;
    let freqs: Vec<Vec<i64>> = frequency_ball(mu.dim(), e.radius)
        .into_iter()
        .filter(|a| a.iter().any(|&v| v != 0))
        .collect();
    let est: Vec<_> = freqs.iter().map(|a| fourier_from_samples(&w.points, a)).collect();
    let set = torwalk_core::torus::CoefficientSet {
        threshold: 0.0,
        radius: e.radius,
        members: est.clone(),
        scanned: freqs.len(),
        max_error: w.max_error,
    };
    out.write("fourier.csv", &set.to_csv(mu.dim()))?;
    let mut dat = String::new();
    for f in &est {
        let norm = f.a.iter().map(|v| v.abs()).max().unwrap_or(0);
        writeln!(dat, "{} {:.12e}", norm, f.abs()).expect("string write");
    }
    out.write("fourier.dat", &dat)?;
    let max_abs = est.iter().map(|f| f.abs()).fold(0.0, f64::max);
    let max_sigmas = est.iter().map(|f| f.abs() / f.stderr).fold(0.0, f64::max);
    out.json(
        "summary.json",
        &json!({
            "experiment": "equidistribute",
            "n": e.n,
            "samples": e.samples,
            "x0": e.x0,
            "frequencies": freqs.len(),
            "max_abs": max_abs,
            "max_abs_over_stderr": max_sigmas,
            "max_fixed_point_error": w.max_error,
        }),
    )
}

fn lyapunov(mu: &FiniteMeasure<IntMatrix>, l: &Lyapunov, seed: u64, out: &mut Artifacts) -> Result<(), CliError> {
    let (top, top_se) = top_exponent(mu, l.n, l.samples, seed)?;
    let spec = spectrum(mu, l.n, l.samples, seed, l.reorth_period)?;
    let (vec_mean, vec_se) = lyapunov_vector(mu, l.n, l.samples, seed)?;
    let tails = deviation_tails(mu, l.omega, &l.tail_ns, l.tail_samples, &TailMode::Norm, top, seed)?;
    out.json(
        "lyapunov.json",
        &json!({
            "n": l.n,
            "samples": l.samples,
            "top_exponent": {"mean": top, "stderr": top_se},
            "spectrum": {"lambda": spec.lambda, "stderr": spec.stderr, "reorth_period": l.reorth_period},
            "lyapunov_vector": {"mean": vec_mean, "stderr": vec_se},
            "tails": {"omega": l.omega, "strictly_separated": tails.strictly_separated()},
        }),
    )?;
    out.write("tails.csv", &tails.to_csv())?;
    let mut dat = String::new();
    for r in &tails.rows {
        writeln!(dat, "{} {:.12e}", r.n, r.prob).expect("string write");
    }
    out.write("tails.dat", &dat)
}

fn fourier_scan(mu: &FiniteMeasure<IntMatrix>, f: &FourierScan, seed: u64, out: &mut Artifacts) -> Result<(), CliError> {
    let x0 = parse_point(&f.x0, mu.dim())?;
    let set = large_coefficient_scan(mu, f.n, &x0, f.t, f.radius, f.samples, seed, f.budget)?;
    out.write("scan.csv", &set.to_csv(mu.dim()))?;
    out.json(
        "summary.json",
        &json!({
            "experiment": "fourier-scan",
            "n": f.n,
            "t": f.t,
            "radius": f.radius,
            "scanned": set.scanned,
            "members": set.members.len(),
            "max_fixed_point_error": set.max_error,
        }),
    )
}

fn dioph_verify(mu: &FiniteMeasure<IntMatrix>, v: &DiophVerify, seed: u64, out: &mut Artifacts) -> Result<(), CliError> {
    let x0 = parse_point(&v.x0, mu.dim())?;
    let (lambda_hat, lambda_se) = match v.lambda {
        Some(l) => (l / v.lambda_factor, 0.0),
        None => top_exponent(mu, v.lambda_n, v.lambda_samples, seed)?,
    };
    let lambda = v.lambda.unwrap_or(v.lambda_factor * lambda_hat);
    if !(lambda > 0.0) {
        return Err(CliError::Core(Error::InvalidArgument(format!(
            "estimated exponent {lambda_hat} is not positive"
        ))));
    }
    let mut rows = Vec::with_capacity(v.ns.len());
    for &n in &v.ns {
        let p = MainTheoremParams {
            a: v.a.clone(),
            t: v.t,
            n,
            lambda,
            c_window: v.c_window,
            samples: v.samples,
            seed,
        };
        match verify_main_theorem(mu, &x0, &p) {
            Ok(r) => rows.push(json!({"n": n, "status": "checked", "report": r.to_json()})),
            Err(Error::NotApplicable { coefficient, threshold }) => rows.push(json!({
                "n": n,
                "status": "not-applicable",
                "coefficient_abs": coefficient,
                "threshold": threshold,
            })),
            Err(e) => return Err(e.into()),
        }
    }
    out.json(
        "dioph.json",
        &json!({
            "x0": v.x0,
            "a": v.a,
            "t": v.t,
            "lambda_hat": lambda_hat,
            "lambda_hat_stderr": lambda_se,
            "lambda": lambda,
            "c_window": v.c_window,
            "rows": rows,
        }),
    )?;
    if let Some(s) = &v.screen {
        let w = walk_samples(mu, s.n, &x0, s.samples, seed)?;
        let r = dioph_screen(&w.points, s.rho, s.n, s.eta_fit)?;
        out.json("screen.json", &r.to_json())?;
    }
    Ok(())
}

fn flatten(mu: &FiniteMeasure<IntMatrix>, f: &Flatten, seed: u64, out: &mut Artifacts) -> Result<(), CliError> {
    let lambda_hat = match f.lambda {
        Some(l) => l,
        None => top_exponent(mu, f.n.max(1), f.lambda_samples, seed)?.0,
    };
    let rescaled = rescaled_empirical(mu, f.n, lambda_hat, f.particles, seed)?;
    let basis = torwalk_core::algebra::AlgebraBasis::full(mu.dim());
    let trace = flatten_iterate(&rescaled, &basis, &f.params)?;
    out.write("flatten.csv", &trace.to_csv())?;
    let mut dat = String::new();
    for r in &trace.records {
        writeln!(dat, "{} {:.12e}", r.k, r.l2_eta).expect("string write");
    }
    out.write("flatten.dat", &dat)?;
    out.json(
        "summary.json",
        &json!({
            "experiment": "flatten",
            "n": f.n,
            "particles": f.particles,
            "lambda_hat": lambda_hat,
            "delta": f.params.delta,
            "eps": f.params.eps,
            "kernel_normalization": trace.kernel_normalization,
            "l2_strictly_decreasing": trace.l2_strictly_decreasing(),
            "exact_stages": trace.records.iter().filter(|r| r.exact).count(),
        }),
    )
}

fn specgap(mu: &FiniteMeasure<IntMatrix>, s: &Specgap, seed: u64, out: &mut Artifacts) -> Result<(), CliError> {
    let m = if s.symmetrize { symmetrize(mu)? } else { mu.clone() };
    let sweep = gap_sweep(&m, &s.primes, s.cap, s.n_cap, seed)?;
    out.write("specgap.csv", &sweep.to_csv())?;
    let mut dat = String::new();
    for r in &sweep.rows {
        if let Some(t) = r.uniformization_time {
            writeln!(dat, "{:.12e} {}", (r.p as f64).ln(), t).expect("string write");
        }
    }
    out.write("specgap.dat", &dat)?;
    out.json(
        "summary.json",
        &json!({
            "experiment": "specgap",
            "symmetrized": s.symmetrize,
            "c_hat": sweep.c_hat,
            "slope_vs_log_p": sweep.slope,
            "min_gap": sweep.rows.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min),
            "max_sum_error": sweep.rows.iter().map(|r| r.max_sum_error).fold(0.0, f64::max),
        }),
    )
}

fn words(support: &[IntMatrix], max_len: usize) -> Vec<IntMatrix> {
    let mut all = Vec::new();
    let mut layer = vec![IntMatrix::identity(support[0].dim())];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|w| support.iter().map(move |g| g.mat_mul(w).expect("same dimension")))
            .collect();
        all.extend(layer.iter().cloned());
    }
    all
}

fn algebra_info(mu: &FiniteMeasure<IntMatrix>, a: &AlgebraInfo, seed: u64, out: &mut Artifacts) -> Result<(), CliError> {
    let support = mu.support();
    let basis = generate_algebra(&support, MEMBERSHIP_TOL)?;
    let defect = affine_span_defect(&basis, &words(&support, a.word_length));
    let prox = proximal_dimension(mu, a.n, a.samples, seed, a.omega)?;
    let mut v = basis.to_json();
    v["closure_residual"] = json!(basis.closure_residual());
    v["affine_span_defect"] = json!(defect);
    v["word_length"] = json!(a.word_length);
    v["proximal"] = json!({
        "n": a.n,
        "samples": a.samples,
        "omega": a.omega,
        "r_estimate": prox.r_estimate,
        "histogram": prox.histogram,
        "modal_fraction": prox.modal_fraction,
        "median_gap_ratio": prox.median_gap_ratio,
        "low_confidence": prox.low_confidence,
        "note": prox.confidence_note,
    });
    out.json("algebra.json", &v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    #[test]
    fn unknown_param_is_rejected_before_work() {
        let mut cfg = preset("specgap-sweep").unwrap().config;
        cfg.params.insert("prims".into(), "5".into());
        cfg.output_dir = "/nonexistent/never-created".into();
        assert!(matches!(run(&cfg), Err(CliError::Config(_))));
    }

    #[test]
    fn missing_measure_file() {
        let mut cfg = preset("specgap-sweep").unwrap().config;
        cfg.measure_path = "/definitely/missing.json".into();
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.to_string(), "measure_path not found");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn words_count() {
        let s = torwalk_core::fixtures::sl2_dense().support();
        assert_eq!(words(&s, 3).len(), 4 + 16 + 64);
    }
}
