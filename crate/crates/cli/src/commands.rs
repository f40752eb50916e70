//! Command bodies. Each returns the process outcome; `main` maps it to an exit
//! status.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};

use anyhow::{anyhow, Context};
use loocusum::density::{
    estimate_kl_loss, estimate_mise, verify_lemma1, ClampBounds, DiagnosticPlan, McEstimate,
};
use loocusum::detect::Detector;
use loocusum::sim::{
    check_delay_slope, check_first_order_optimality, compare_at_matched_mtfa, delay_cap,
    sweep_with_delay_trials, verify_lemma2, Lemma2Plan, MatchedPlan, SweepPlan,
};
use loocusum::Execution;

use crate::config::{Check, RunConfig};
use crate::output::{self, float, io_err};
use crate::{Failure, Outcome};

fn read_stream(path: &str) -> Result<Vec<f64>, Failure> {
    let reader: Box<dyn BufRead> = if path == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        let f = File::open(path)
            .with_context(|| format!("cannot open input {path}"))
            .map_err(Failure::Io)?;
        Box::new(BufReader::new(f))
    };
    let mut xs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {path}")).map_err(Failure::Io)?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|e| Failure::Parse(anyhow!("line {}: {t:?} is not a number ({e})", i + 1)))?;
        if !v.is_finite() {
            return Err(Failure::Parse(anyhow!("line {}: non-finite value {t:?}", i + 1)));
        }
        xs.push(v);
    }
    Ok(xs)
}

pub fn detect(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let kind = cfg.detectors.as_ref().unwrap()[0];
    let window = cfg.windows.as_ref().unwrap()[0];
    let threshold = match &cfg.thresholds {
        crate::config::Thresholds::List(list) => list[0],
        crate::config::Thresholds::Auto(_) => cfg.auto_threshold(kind, window).map_err(Failure::Parse)?,
    };
    let mut out = output::csv_writer(&cfg.output)?;
    let mut trace = match &cfg.trace {
        Some(path) => Some(output::csv_writer(path)?),
        None => None,
    };
    let xs = read_stream(&cfg.input)?;
    let pre = cfg.pre_model().map_err(Failure::Parse)?;
    let post = cfg.post_model().map_err(Failure::Parse)?;
    let mut detector = cfg.spec(kind, window).build(pre, post)?;

    if let Some(t) = trace.as_mut() {
        t.write_record(["time", "observation", "statistic"]).map_err(io_err)?;
    }
    let mut alarm = None;
    for &x in &xs {
        let stat = detector.observe(x);
        if let Some(t) = trace.as_mut() {
            let s = stat.map(float).unwrap_or_default();
            t.write_record([detector.time().to_string(), float(x), s])
                .map_err(io_err)?;
        }
        if let Some(s) = stat {
            if s >= threshold {
                alarm = Some((detector.time(), s));
                break;
            }
        }
    }
    if let Some(mut t) = trace {
        t.flush().map_err(io_err)?;
    }
    out.write_record([
        "detector",
        "window",
        "threshold",
        "stopping_time",
        "statistic",
        "observations",
    ])
    .map_err(io_err)?;
    let (time, stat) = match alarm {
        Some((t, s)) => (t.to_string(), float(s)),
        None => (String::new(), String::new()),
    };
    out.write_record([
        kind.name().to_string(),
        window.to_string(),
        float(threshold),
        time,
        stat,
        detector.time().to_string(),
    ])
    .map_err(io_err)?;
    out.flush().map_err(io_err)?;
    Ok(if alarm.is_some() {
        Outcome::Success
    } else {
        Outcome::NoAlarm
    })
}

pub fn sweep(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let mut out = output::csv_writer(&cfg.output)?;
    let pre = cfg.pre_model().map_err(Failure::Parse)?;
    let post = cfg.require_post("sweep").map_err(Failure::Parse)?;
    let kl = loocusum::model::kl_divergence(&post, &pre);
    out.write_record([
        "detector",
        "window",
        "threshold",
        "mtfa",
        "mtfa_ci",
        "delay",
        "delay_ci",
        "censored_far",
        "trials",
        "seed",
    ])
    .map_err(io_err)?;
    for &kind in cfg.detectors.as_ref().unwrap() {
        for &window in cfg.windows.as_ref().unwrap() {
            let thresholds = cfg.sweep_thresholds(kind, window).map_err(Failure::Parse)?;
            let plan = SweepPlan {
                detector: cfg.spec(kind, window),
                pre,
                post,
                delay_max_steps: cfg.change_point + delay_cap(&thresholds, kl.max(1e-3)),
                thresholds,
                trials: cfg.trials.unwrap(),
                mtfa_max_steps: cfg.max_steps(),
                seed: cfg.seed,
                change_point: cfg.change_point,
            };
            log::info!("sweeping {kind} window {window}");
            for p in sweep_with_delay_trials(&plan, cfg.delay_trials, Execution::default())? {
                out.write_record([
                    p.detector.name().to_string(),
                    p.window.to_string(),
                    float(p.threshold),
                    float(p.mtfa),
                    float(p.mtfa_ci),
                    float(p.delay),
                    float(p.delay_ci),
                    float(p.censored_far),
                    p.trials.to_string(),
                    p.seed.to_string(),
                ])
                .map_err(io_err)?;
            }
        }
    }
    out.flush().map_err(io_err)?;
    Ok(Outcome::Success)
}

pub fn diagnose_density(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let mut out = output::csv_writer(&cfg.output)?;
    let truth = cfg.pre_model().map_err(Failure::Parse)?;
    let clamp = ClampBounds::default();
    let exec = Execution::default();
    let mut rows: Vec<(usize, McEstimate, McEstimate)> = Vec::new();
    for &n in &cfg.sizes {
        let plan = DiagnosticPlan::new(truth, n, cfg.kernel, cfg.bandwidth, cfg.trials.unwrap(), cfg.seed);
        let mise = estimate_mise(&plan, exec)?;
        let kl = estimate_kl_loss(&plan, &clamp, exec)?;
        rows.push((n, mise, kl));
    }
    out.write_record(["sample_size", "mise", "mise_se", "kl_loss", "kl_se"])
        .map_err(io_err)?;
    for (n, m, k) in &rows {
        out.write_record([
            n.to_string(),
            float(m.mean),
            float(m.std_error),
            float(k.mean),
            float(k.std_error),
        ])
        .map_err(io_err)?;
    }
    let series: Vec<(f64, f64)> = rows.iter().map(|(n, m, _)| (*n as f64, m.mean)).collect();
    let fit = match verify_lemma1(&clamp, &series) {
        Ok(f) => f,
        Err(e) => {
            // keep whatever was computed, then report the series
            out.flush().map_err(io_err)?;
            for (n, v) in &series {
                eprintln!("sample_size={n} mise={}", float(*v));
            }
            return Err(e.into());
        }
    };
    let mut w = out.into_inner().map_err(|e| io_err(anyhow!("{e}")))?;
    writeln!(
        w,
        "# beta1={} beta2={} c1={} c2={} c3={}",
        float(fit.beta1),
        float(fit.beta2),
        float(fit.c1),
        float(fit.c2),
        float(fit.c3)
    )
    .and_then(|_| w.flush())
    .map_err(io_err)?;
    Ok(Outcome::Success)
}

pub fn verify(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let mut out = output::open(&cfg.output)?;
    let exec = Execution::default();
    let pre = cfg.pre_model().map_err(Failure::Parse)?;
    let post = cfg.require_post("verify").map_err(Failure::Parse)?;
    let v = &cfg.verify;
    let trials = cfg.trials.unwrap();
    let mut failed = Vec::new();
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };

    macro_rules! line {
        ($($arg:tt)*) => {
            writeln!(out, $($arg)*).and_then(|_| out.flush()).map_err(io_err)?
        };
    }

    if v.checks.contains(&Check::Lemma2) {
        for &window in cfg.windows.as_ref().unwrap() {
            let r = verify_lemma2(
                &Lemma2Plan {
                    alpha: cfg.alpha,
                    window,
                    pre,
                    loo: cfg.loo_settings(),
                    trials,
                    seed: cfg.seed,
                    threshold_offset: v.threshold_offset,
                },
                exec,
            )?;
            line!(
                "lemma2 {} alpha={} window={} threshold={} mtfa={} lower={} bound={} margin={} censored={} seed={}",
                verdict(r.pass),
                r.alpha,
                r.window,
                float(r.threshold),
                float(r.mtfa.estimate.mean),
                float(r.lower_confidence),
                float(r.bound),
                float(r.margin),
                r.mtfa.censored_fraction,
                r.seed
            );
            if !r.pass {
                failed.push(format!("lemma2 window {window}"));
            }
        }
    }

    if v.checks.contains(&Check::Slope) {
        let s = check_delay_slope(pre, post, &v.slope_thresholds, cfg.delay_trials, cfg.seed, exec)?;
        for ((b, d), r) in s.thresholds.iter().zip(&s.delays).zip(&s.ratios) {
            line!(
                "slope-point threshold={} delay={} ci={} ratio={} asymptote={}",
                float(*b),
                float(d.mean),
                float(d.ci_half),
                float(*r),
                float(1.0 / s.kl)
            );
        }
        let o = check_first_order_optimality(
            pre,
            post,
            &v.slope_thresholds,
            v.compare_window,
            cfg.loo_settings(),
            cfg.delay_trials,
            cfg.seed,
            exec,
        )?;
        for ((b, c), (l, r)) in o.log_alphas.iter().zip(&o.cusum).zip(o.loo.iter().zip(&o.ratios)) {
            line!(
                "optimality-point log_alpha={} cusum_delay={} loo_delay={} ratio={}",
                float(*b),
                float(c.mean),
                float(l.mean),
                float(*r)
            );
        }
        let ok = s.bracket_ok && o.all_finite && o.ratios_decrease;
        line!(
            "slope {} bracket={} converging={} loo_finite={} ratios_decrease={} window={} trials={} seed={}",
            verdict(ok),
            s.bracket_ok,
            s.converging,
            o.all_finite,
            o.ratios_decrease,
            o.window,
            cfg.delay_trials,
            cfg.seed
        );
        if !ok {
            failed.push("slope".into());
        }
    }

    if v.checks.contains(&Check::Matched) {
        let r = compare_at_matched_mtfa(
            &MatchedPlan {
                pre,
                post,
                window: v.compare_window,
                loo: cfg.loo_settings(),
                target_mtfa: v.target_mtfa,
                cusum_thresholds: v.cusum_thresholds.clone(),
                glr_thresholds: v.glr_thresholds.clone(),
                loo_thresholds: v.loo_thresholds.clone(),
                far_trials: trials,
                loo_far_trials: v.loo_far_trials,
                delay_trials: cfg.delay_trials,
                seed: cfg.seed,
            },
            exec,
        )?;
        let delay = |m: &Option<loocusum::sim::MatchedDelay>| {
            m.as_ref().map(|d| float(d.delay)).unwrap_or_else(|| "none".into())
        };
        line!(
            "matched {} target_mtfa={} window={} cusum={} glr={} loo={} ratio={} above_cusum={} seed={}",
            verdict(r.pass),
            float(v.target_mtfa),
            v.compare_window,
            delay(&r.cusum),
            delay(&r.glr),
            delay(&r.loo),
            r.ratio.map(float).unwrap_or_else(|| "none".into()),
            r.above_cusum,
            cfg.seed
        );
        if !r.pass {
            failed.push("matched".into());
        }
    }

    if failed.is_empty() {
        line!("verify PASS");
        Ok(Outcome::Success)
    } else {
        line!("verify FAIL");
        Err(Failure::Verify(format!(
            "failed: {} (seed {}; rerun with --seed {} to reproduce)",
            failed.join(", "),
            cfg.seed,
            cfg.seed
        )))
    }
}
