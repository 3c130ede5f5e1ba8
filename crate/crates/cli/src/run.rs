//! Subcommand pipelines and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use hardyheat::grid::{build_generator_with, Grid};
use hardyheat::hardy::{HardyParams, ProfileParams};
use hardyheat::kernel::{KernelSource, SpectralKernel};
use hardyheat::montecarlo::{estimate_kernel_mc_multi, write_records, McRecord, PathConfig};
use hardyheat::perturbation::{ck_residual, duhamel_residual, SeriesEngine};
use hardyheat::stable::StableParams;
use hardyheat::verify::{
    blowup_diagnostic, calibrate_profile, check_harmonicity_sign, check_invariance, check_pd_moment, check_supermedian,
    check_weighted_mass, cross_route, invariance_negative_control, sweep_dirichlet, sweep_main_estimate, BlowupSettings, CheckEntry,
    CheckReport, SweepReport,
};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{build_grid, Format, Resolved, Route, RunConfig};
use crate::{CliError, Command};

/// What a subcommand produced.
#[derive(Debug)]
pub struct Outcome {
    pub pass: bool,
    pub notice: Option<String>,
    pub files: Vec<PathBuf>,
}

/// Report body: JSON results plus the CSV rendering of the same data.
struct Body {
    pass: bool,
    notice: Option<String>,
    kernel_hashes: BTreeMap<String, String>,
    json: Value,
    csv: Vec<u8>,
    extra_files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a> {
    command: &'a str,
    config: &'a RunConfig,
    resolved: Resolved,
    config_hash: String,
    kernel_hashes: &'a BTreeMap<String, String>,
    pass: bool,
    notice: &'a Option<String>,
    results: &'a Value,
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let resolved = cfg.resolve()?;
    if resolved.supercritical() && cmd != Command::Blowup {
        return Err(CliError::Usage(format!(
            "coupling κ = {} exceeds the critical constant κ* = {} for α = {}; above it the heat kernel blows up. \
             Use the blowup subcommand to study the divergence.",
            resolved.kappa, resolved.kappa_star, resolved.alpha
        )));
    }
    fs::create_dir_all(&cfg.output.dir)?;
    let body = match cmd {
        Command::Kernel => kernel(cfg, &resolved)?,
        Command::Sweep => sweep(cfg, &resolved)?,
        Command::Verify => verify(cfg, &resolved)?,
        Command::Mc => mc(cfg, &resolved)?,
        Command::Blowup => blowup(cfg, &resolved)?,
        Command::Calibrate => calibrate(cfg)?,
    };
    let config_hash = hex::encode(Sha256::digest(cfg.to_toml().as_bytes()));
    let envelope = Envelope {
        command: cmd.name(),
        config: cfg,
        resolved,
        config_hash,
        kernel_hashes: &body.kernel_hashes,
        pass: body.pass,
        notice: &body.notice,
        results: &body.json,
    };
    let path = match cfg.output.format {
        Format::Json => {
            let path = cfg.output.dir.join(format!("{}.json", cmd.name()));
            fs::write(&path, serde_json::to_string_pretty(&envelope).map_err(hardyheat::Error::from)?)?;
            path
        }
        Format::Csv => {
            let path = cfg.output.dir.join(format!("{}.csv", cmd.name()));
            let mut text = String::new();
            text.push_str(&format!("# command: {}\n", envelope.command));
            text.push_str(&format!("# config: {}\n", serde_json::to_string(cfg).map_err(hardyheat::Error::from)?));
            text.push_str(&format!("# resolved: {}\n", serde_json::to_string(&resolved).map_err(hardyheat::Error::from)?));
            text.push_str(&format!("# config_hash: {}\n", envelope.config_hash));
            for (k, v) in &body.kernel_hashes {
                text.push_str(&format!("# kernel_hash: {k} {v}\n"));
            }
            text.push_str(&format!("# pass: {}\n", body.pass));
            if let Some(n) = &body.notice {
                text.push_str(&format!("# notice: {n}\n"));
            }
            let mut bytes = text.into_bytes();
            bytes.extend_from_slice(&body.csv);
            fs::write(&path, bytes)?;
            path
        }
    };
    let mut files = vec![path];
    files.extend(body.extra_files);
    Ok(Outcome {
        pass: body.pass,
        notice: body.notice,
        files,
    })
}

fn family(cfg: &RunConfig, grid: &Grid, kappa: f64) -> Result<SpectralKernel, CliError> {
    let params = StableParams::new(cfg.alpha)?;
    Ok(SpectralKernel::new(&build_generator_with(&params, grid, kappa, cfg.grid.stencil)?)?)
}

fn record_hashes(hashes: &mut BTreeMap<String, String>, label: &str, fam: &SpectralKernel, ts: &[f64]) -> Result<(), CliError> {
    for &t in ts {
        hashes.insert(format!("{label}@t={t}"), fam.kernel(t)?.content_hash());
    }
    Ok(())
}

fn reports_csv(reports: &[CheckReport]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    for (k, r) in reports.iter().enumerate() {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        // One header for the concatenated reports.
        let text = String::from_utf8(buf).expect("csv is utf-8");
        let skip = if k == 0 { 0 } else { 1 };
        for line in text.lines().skip(skip) {
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
    }
    Ok(out)
}

fn sweep_csv(reports: &[&SweepReport]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check_name", "t", "x", "y", "value", "rhs", "ratio"]).map_err(hardyheat::Error::from)?;
    for r in reports {
        for e in &r.entries {
            w.write_record([
                r.check_name.clone(),
                e.t.to_string(),
                e.x.to_string(),
                e.y.to_string(),
                e.value.to_string(),
                e.rhs.to_string(),
                e.ratio.to_string(),
            ])
            .map_err(hardyheat::Error::from)?;
        }
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn kernel(cfg: &RunConfig, r: &Resolved) -> Result<Body, CliError> {
    let grid = cfg.grid.build()?;
    let fam = family(cfg, &grid, r.kappa)?;
    let (ts, xs, ys) = (cfg.t_list.values(), cfg.x_list.values(), cfg.y_list.values());
    let mut hashes = BTreeMap::new();
    let mut extra = Vec::new();
    let mut rows = Vec::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "x", "y", "value"]).map_err(hardyheat::Error::from)?;
    for &t in &ts {
        let k = fam.kernel(t)?;
        hashes.insert(format!("kernel@t={t}"), k.content_hash());
        let path = cfg.output.dir.join(format!("kernel_t{t}.hhk"));
        k.write_binary(fs::File::create(&path)?)?;
        extra.push(path);
        let values = fam.values(t, &xs, &ys)?;
        for (a, &x) in xs.iter().enumerate() {
            for (b, &y) in ys.iter().enumerate() {
                let v = values[a][b];
                rows.push(json!({"t": t, "x": x, "y": y, "value": v}));
                w.write_record([t.to_string(), x.to_string(), y.to_string(), v.to_string()])
                    .map_err(hardyheat::Error::from)?;
            }
        }
    }
    Ok(Body {
        pass: true,
        notice: None,
        kernel_hashes: hashes,
        json: json!({"values": rows}),
        csv: w.into_inner().map_err(|e| CliError::Io(e.into_error()))?,
        extra_files: extra,
    })
}

fn sweep(cfg: &RunConfig, r: &Resolved) -> Result<Body, CliError> {
    let grid = cfg.grid.build()?;
    let (ts, xs, ys) = (cfg.t_list.values(), cfg.x_list.values(), cfg.y_list.values());
    let base = family(cfg, &grid, 0.0)?;
    let mut hashes = BTreeMap::new();
    let (report, limit) = match r.hardy() {
        None => {
            record_hashes(&mut hashes, "dirichlet", &base, &ts)?;
            (sweep_dirichlet(&base, &ts, &xs, &ys)?, cfg.sweep.dirichlet_max_bracket)
        }
        Some(hp) => {
            let report = match cfg.sweep.route {
                Route::Grid => {
                    let fam = family(cfg, &grid, r.kappa)?;
                    record_hashes(&mut hashes, "perturbed", &fam, &ts)?;
                    sweep_main_estimate(&fam, &hp, &ts, &xs, &ys)?
                }
                Route::Series => {
                    record_hashes(&mut hashes, "dirichlet", &base, &ts)?;
                    let engine = SeriesEngine::new(&base, r.kappa, cfg.series)?;
                    sweep_main_estimate(&engine, &hp, &ts, &xs, &ys)?
                }
            };
            (report, cfg.sweep.max_bracket)
        }
    };
    let pass = report.bracket() <= limit;
    Ok(Body {
        pass,
        notice: None,
        kernel_hashes: hashes,
        json: json!({"sweep": report, "bracket": report.bracket(), "max_bracket": limit}),
        csv: sweep_csv(&[&report])?,
        extra_files: Vec::new(),
    })
}

fn verify(cfg: &RunConfig, r: &Resolved) -> Result<Body, CliError> {
    let v = &cfg.verify;
    let wants = |name: &str| v.checks.iter().any(|c| c == name);
    let hp: Option<HardyParams> = r.hardy();
    let needs_hardy = ["sweep", "invariance", "invariance_negative_control", "supermedian", "duhamel", "cross_route"];
    if hp.is_none() {
        if let Some(c) = needs_hardy.iter().find(|c| wants(c)) {
            return Err(CliError::Usage(format!("check `{c}` needs a positive coupling (give delta or kappa > 0)")));
        }
    }
    let (ts, xs, ys) = (cfg.t_list.values(), cfg.x_list.values(), cfg.y_list.values());
    let [pt, px, py] = v.point;
    let grid = cfg.grid.build()?;
    let base = family(cfg, &grid, 0.0)?;
    let perturbed = if r.kappa > 0.0 { Some(family(cfg, &grid, r.kappa)?) } else { None };
    let mut hashes = BTreeMap::new();
    record_hashes(&mut hashes, "dirichlet", &base, &ts)?;
    if let Some(p) = &perturbed {
        record_hashes(&mut hashes, "perturbed", p, &ts)?;
    }

    let identity_needed = ["invariance", "invariance_negative_control", "supermedian", "weighted_mass", "harmonicity"]
        .iter()
        .any(|c| wants(c));
    let identity = if identity_needed {
        let g = build_grid(v.identity_length, v.identity_n, cfg.grid.cutoff_eps)?;
        let b = family(cfg, &g, 0.0)?;
        record_hashes(&mut hashes, "identity_dirichlet", &b, &[pt])?;
        let p = if r.kappa > 0.0 {
            let p = family(cfg, &g, r.kappa)?;
            record_hashes(&mut hashes, "identity_perturbed", &p, &[pt])?;
            Some(p)
        } else {
            None
        };
        Some((b, p))
    } else {
        None
    };

    let mut reports: Vec<CheckReport> = Vec::new();
    let mut sweeps = Vec::new();
    if wants("sweep") {
        let s = sweep_main_estimate(perturbed.as_ref().expect("κ > 0"), hp.as_ref().expect("κ > 0"), &ts, &xs, &ys)?;
        reports.push(s.to_check_report(cfg.sweep.max_bracket));
        sweeps.push(s);
    }
    if wants("dirichlet_sweep") {
        let s = sweep_dirichlet(&base, &ts, &xs, &ys)?;
        reports.push(s.to_check_report(cfg.sweep.dirichlet_max_bracket));
        sweeps.push(s);
    }
    if let Some((ib, ip)) = &identity {
        if let (Some(ip), Some(hp)) = (ip, &hp) {
            if wants("invariance") {
                reports.push(check_invariance(ip, hp, &ts, v.invariance_tol)?);
            }
            if wants("invariance_negative_control") {
                reports.push(invariance_negative_control(ip, hp, v.negative_shift, &ts, v.negative_min_error)?);
            }
            if wants("supermedian") {
                reports.push(check_supermedian(ip, hp, &ts, v.supermedian_tol)?);
            }
        }
        if wants("weighted_mass") {
            reports.push(check_weighted_mass(ib, &ts, v.mass_tol)?);
        }
        if wants("harmonicity") {
            let source: &dyn KernelSource = match ip {
                Some(p) => p,
                None => ib,
            };
            for &beta in &v.harmonicity_betas {
                reports.push(check_harmonicity_sign(source, beta, &[pt], v.dead_band)?);
            }
            if ip.is_some() {
                // κ = 0 control: every power is superharmonic for the killed kernel.
                for &beta in &v.harmonicity_betas {
                    let mut c = check_harmonicity_sign(ib, beta, &[pt], v.dead_band)?;
                    c.check_name = "harmonicity_sign_dirichlet_control".into();
                    reports.push(c);
                }
            }
        }
    }
    let series = if wants("duhamel") || wants("chapman_kolmogorov") || wants("cross_route") {
        Some(SeriesEngine::new(&base, r.kappa, cfg.series)?)
    } else {
        None
    };
    if wants("duhamel") {
        let p = perturbed.as_ref().expect("κ > 0");
        let res = duhamel_residual(p, &base, r.kappa, pt, px, py, &cfg.series.ladder)?;
        let value = p.value(pt, px, py)?;
        let metric = (res / value).abs();
        let mut params = BTreeMap::new();
        params.insert("y".into(), json!(py));
        params.insert("residual".into(), json!(res));
        reports.push(CheckReport::new(
            "duhamel_residual",
            params,
            vec![CheckEntry {
                t: pt,
                x: px,
                value: res,
                reference: value,
                metric,
            }],
            &[("max_relative_residual", v.duhamel_tol)],
            metric <= v.duhamel_tol,
        ));
    }
    if wants("chapman_kolmogorov") {
        let source: &SpectralKernel = perturbed.as_ref().unwrap_or(&base);
        let res = ck_residual(source, 0.5 * pt, 0.5 * pt, px, py)?;
        let k = source.kernel(pt)?.max_entry();
        let metric = res.abs() / k;
        let mut params = BTreeMap::new();
        params.insert("y".into(), json!(py));
        params.insert("route".into(), json!(source.route()));
        reports.push(CheckReport::new(
            "chapman_kolmogorov",
            params,
            vec![CheckEntry {
                t: pt,
                x: px,
                value: res,
                reference: k,
                metric,
            }],
            &[("max_residual_over_max_entry", v.ck_tol)],
            metric <= v.ck_tol,
        ));
    }
    if wants("cross_route") {
        let p = perturbed.as_ref().expect("κ > 0");
        let mc_cfg = PathConfig {
            alpha: cfg.alpha,
            t_end: pt,
            dt: cfg.mc.dt,
            x0: px,
            cutoff_eps: grid.cutoff_eps(),
            domain_length: grid.length(),
            seed: cfg.mc.seed,
        };
        let c = cross_route(p, series.as_ref().expect("built"), &mc_cfg, pt, px, py, cfg.mc.y_halfwidth, cfg.mc.n_paths)?;
        let mut params = BTreeMap::new();
        params.insert("y".into(), json!(py));
        params.insert("routes".into(), json!(c));
        let pass = c.series_vs_grid <= v.series_tol && c.mc_z_score <= v.mc_max_z && !c.mc.unstable;
        reports.push(CheckReport::new(
            "cross_route",
            params,
            vec![
                CheckEntry {
                    t: pt,
                    x: px,
                    value: c.series_value,
                    reference: c.grid_value,
                    metric: c.series_vs_grid,
                },
                CheckEntry {
                    t: pt,
                    x: px,
                    value: c.mc.mean,
                    reference: c.grid_bin_average,
                    metric: c.mc_z_score,
                },
            ],
            &[("series_vs_grid", v.series_tol), ("mc_max_z", v.mc_max_z)],
            pass,
        ));
    }
    if wants("pd_moment") {
        reports.push(check_pd_moment(&base, v.moment_gamma, &ts, &xs, v.moment_max_bracket)?);
    }
    let pass = reports.iter().all(|r| r.pass);
    let summary: Vec<Value> = reports
        .iter()
        .map(|r| json!({"check_name": r.check_name, "pass": r.pass, "extrema": r.extrema}))
        .collect();
    Ok(Body {
        pass,
        notice: None,
        kernel_hashes: hashes,
        json: json!({"summary": summary, "checks": reports}),
        csv: reports_csv(&reports)?,
        extra_files: Vec::new(),
    })
}

fn mc(cfg: &RunConfig, r: &Resolved) -> Result<Body, CliError> {
    let mut records = Vec::new();
    let mut details = Vec::new();
    let kappas = if r.kappa > 0.0 { vec![0.0, r.kappa] } else { vec![0.0] };
    let grid = cfg.grid.build()?;
    for &[t, x0, y] in &cfg.mc.points {
        let pc = PathConfig {
            alpha: cfg.alpha,
            t_end: t,
            dt: cfg.mc.dt,
            x0,
            cutoff_eps: grid.cutoff_eps(),
            domain_length: grid.length(),
            seed: cfg.mc.seed,
        };
        let ests = estimate_kernel_mc_multi(&pc, &kappas, y, cfg.mc.y_halfwidth, cfg.mc.n_paths)?;
        for (est, &k) in ests.iter().zip(&kappas) {
            let delta = if k > 0.0 { r.delta } else { None };
            records.push(McRecord::new(&pc, delta, y, est));
            details.push(json!({"kappa": k, "t": t, "x0": x0, "y_center": y, "estimate": est}));
        }
    }
    let mut csv = Vec::new();
    write_records(&mut csv, &records)?;
    Ok(Body {
        pass: true,
        notice: None,
        kernel_hashes: BTreeMap::new(),
        json: json!({"estimates": details}),
        csv,
        extra_files: Vec::new(),
    })
}

fn blowup(cfg: &RunConfig, r: &Resolved) -> Result<Body, CliError> {
    let b = &cfg.blowup;
    let settings = BlowupSettings {
        n: b.n,
        lengths: b.lengths.clone(),
        max_terms: b.max_terms,
        ladder: cfg.series.ladder,
    };
    let [t, x, y] = b.point;
    let report = blowup_diagnostic(cfg.alpha, r.kappa, t, x, y, &settings)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["length", "cutoff_eps", "partial_sum", "last_ratio"]).map_err(hardyheat::Error::from)?;
    for row in &report.rows {
        w.write_record([
            row.length.to_string(),
            row.cutoff_eps.to_string(),
            row.partial_sum.to_string(),
            row.last_ratio.to_string(),
        ])
        .map_err(hardyheat::Error::from)?;
    }
    let pass = report.notice.is_some() || report.diverges;
    Ok(Body {
        pass,
        notice: report.notice.clone(),
        kernel_hashes: BTreeMap::new(),
        json: json!({"blowup": report}),
        csv: w.into_inner().map_err(|e| CliError::Io(e.into_error()))?,
        extra_files: Vec::new(),
    })
}

fn calibrate(cfg: &RunConfig) -> Result<Body, CliError> {
    let c = &cfg.calibrate;
    let pp = ProfileParams::new(cfg.alpha, c.beta, c.gamma)?;
    let grid = build_grid(c.length, c.n, None)?;
    let base = family(cfg, &grid, 0.0)?;
    let mut hashes = BTreeMap::new();
    record_hashes(&mut hashes, "dirichlet", &base, &[1.0])?;
    let cal = calibrate_profile(&pp, &base, &c.quadrature)?;
    let report = cal.to_check_report(&pp, c.quadrature.tol);
    Ok(Body {
        pass: cal.pass,
        notice: None,
        kernel_hashes: hashes,
        json: json!({"calibration": cal, "check": report}),
        csv: reports_csv(&[report])?,
        extra_files: Vec::new(),
    })
}
