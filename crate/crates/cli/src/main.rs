mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lhw::averaging::{average_series, average_series_until, write_series_csv};
use lhw::bigreal::bits_for_decimal;
use lhw::map1d::find_period2;
use lhw::semiflow::{build_orbit, write_orbit_csv, TailRule};
use lhw::witness::*;
use lhw::{BigReal, SigmaPoint, WitnessCertificate, WitnessRequest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use config::{parse_mode, parse_style, RunConfig};

const USAGE: u8 = 1;
const FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "lhw", version, about = "Historic-behavior witnesses for a geometric Lorenz flow")]
struct Cli {
    /// Run configuration, one `key = value` per line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the effective configuration to this file.
    #[arg(long, global = true)]
    dump_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModeArgs {
    /// strict or relaxed.
    #[arg(long)]
    mode: Option<String>,
    /// Factor replacing 3 in relaxed mode.
    #[arg(long)]
    margin: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Construct and verify a witness certificate near (x0, y).
    Witness {
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        y: f64,
        #[arg(long = "N")]
        n: u64,
        #[arg(long)]
        eps: String,
        /// sampled or shadowing.
        #[arg(long)]
        style: Option<String>,
        #[command(flatten)]
        mode: ModeArgs,
        /// Certificate JSON.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Average series CSV of the center orbit.
        #[arg(long)]
        series: Option<PathBuf>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Follow one orbit and record its segments and running averages.
    Simulate {
        /// Start abscissa; `pstar` or `-pstar` for the period-2 point, omit
        /// for a seeded random start.
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        y0: Option<f64>,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        orbit: Option<PathBuf>,
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Extend a stored certificate to a nested chain.
    Deepen {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        deep_margin: Option<f64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Certificates near every point of a grid on Σ.
    Cover {
        #[arg(long = "N")]
        n: u64,
        #[arg(long)]
        m: u64,
        #[arg(long)]
        grid: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Re-derive and check a stored certificate.
    Verify {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        precision_scale: Option<u32>,
        /// Full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

struct Exit {
    code: u8,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Exit {
    Exit {
        code: USAGE,
        msg: msg.into(),
    }
}

fn failed(msg: impl Into<String>) -> Exit {
    Exit {
        code: FAILED,
        msg: msg.into(),
    }
}

type Outcome = Result<(), Exit>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lhw: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, &cli.command)?;
    cfg.validate().map_err(usage)?;
    if let Some(p) = &cli.dump_config {
        std::fs::write(p, cfg.dump()).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    match cli.command {
        Command::Witness {
            x0, y, n, eps, out, series, ..
        } => cmd_witness(&cfg, &x0, y, n, &eps, out, series),
        Command::Simulate {
            x0,
            y0,
            horizon,
            orbit,
            series,
            ..
        } => cmd_simulate(&cfg, x0.as_deref(), y0, horizon, orbit, series),
        Command::Deepen { cert, levels, out, .. } => cmd_deepen(&cfg, &cert, levels, out),
        Command::Cover { n, m, grid, out } => cmd_cover(&cfg, n, m, grid, out),
        Command::Verify { cert, report, .. } => cmd_verify(&cfg, &cert, report),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cmd: &Command) -> Outcome {
    let set_mode = |cfg: &mut RunConfig, m: &ModeArgs| -> Outcome {
        if m.mode.is_some() || m.margin.is_some() {
            let base = match (&m.mode, cfg.mode) {
                (Some(s), _) => s.clone(),
                (None, Mode::Strict) => "strict".into(),
                (None, Mode::Relaxed { .. }) => "relaxed".into(),
            };
            cfg.mode = parse_mode(&base, m.margin).map_err(usage)?;
        }
        Ok(())
    };
    match cmd {
        Command::Witness { style, mode, grid, .. } => {
            if let Some(s) = style {
                cfg.style = parse_style(s).map_err(usage)?;
            }
            set_mode(cfg, mode)?;
            if let Some(g) = grid {
                cfg.grid = *g;
            }
        }
        Command::Simulate { grid: Some(g), .. } => cfg.grid = *g,
        Command::Deepen {
            deep_margin: Some(m), ..
        } => cfg.deep_margin = *m,
        Command::Verify {
            precision_scale: Some(s),
            ..
        } => cfg.precision_scale = *s,
        _ => {}
    }
    Ok(())
}

fn parse_decimal(cfg: &RunConfig, name: &str, text: &str) -> Result<BigReal, Exit> {
    let bits = bits_for_decimal(text).max(cfg.precision_bits);
    let v = BigReal::parse(text, bits).map_err(|e| usage(format!("--{name}: {e}")))?;
    if !v.to_f64().is_finite() {
        return Err(usage(format!("--{name}: {text:?} is not a finite number")));
    }
    Ok(v)
}

fn out_path(flag: Option<PathBuf>, cfg_value: &Option<String>, default: &str) -> PathBuf {
    flag.or_else(|| cfg_value.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default))
}

fn create(path: &Path) -> Result<BufWriter<File>, Exit> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn io_failed(path: &Path) -> impl Fn(std::io::Error) -> Exit + '_ {
    move |e| failed(format!("{}: {e}", path.display()))
}

fn header(cfg: &RunConfig, command: &str, args: &[(&str, String)]) -> Vec<String> {
    let mut lines = vec![format!("schema = {SCHEMA}"), format!("command = {command}")];
    lines.extend(args.iter().map(|(k, v)| format!("{k} = {v}")));
    lines.extend(cfg.header_lines());
    lines
}

fn header_json(lines: &[String]) -> Value {
    let map: serde_json::Map<String, Value> = lines
        .iter()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), Value::from(v)))
        .collect();
    Value::Object(map)
}

fn write_json(path: &Path, v: &Value) -> Outcome {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| failed(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_failed(path))
}

#[derive(Deserialize)]
struct Envelope {
    certificate: WitnessCertificate,
}

fn read_certificate(path: &Path) -> Result<WitnessCertificate, Exit> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Ok(env) = serde_json::from_str::<Envelope>(&text) {
        return Ok(env.certificate);
    }
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: not a certificate: {e}", path.display())))
}

fn cmd_witness(
    cfg: &RunConfig,
    x0: &str,
    y: f64,
    n: u64,
    eps: &str,
    out: Option<PathBuf>,
    series: Option<PathBuf>,
) -> Outcome {
    let x = parse_decimal(cfg, "x0", x0)?;
    let e = parse_decimal(cfg, "eps", eps)?;
    if !(e > 0.0 && e < 1.0) {
        return Err(usage(format!("--eps {eps}: ε must be in (0, 1)")));
    }
    if x.is_zero() {
        return Err(usage("--x0 0 lies on Γ, where the return map is undefined"));
    }
    if !(x >= -1.0 && x <= 1.0) {
        return Err(usage(format!("--x0 {x0}: must lie in [-1, 1]")));
    }
    if !(y.abs() <= 1.0) {
        return Err(usage(format!("--y {y}: must lie in [-1, 1]")));
    }
    if n == 0 {
        return Err(usage("--N must be at least 1"));
    }
    let model = cfg.model();
    let req = WitnessRequest { x0: x, y, n, eps: e };
    let opts = WitnessOptions {
        mode: cfg.mode,
        style: cfg.style,
        precision_scale: cfg.precision_scale,
        ..WitnessOptions::default()
    };
    let cert = construct_witness(&req, &model, &opts).map_err(|e| failed(format!("construction failed: {e}")))?;
    let report = verify_certificate(&cert, &model, &VerifyOptions::default());

    let hdr = header(
        cfg,
        "witness",
        &[
            ("x0", x0.to_string()),
            ("y", y.to_string()),
            ("N", n.to_string()),
            ("eps", eps.to_string()),
        ],
    );
    let json_path = out_path(out, &cfg.json_out, "certificate.json");
    let doc = json!({
        "schema": SCHEMA,
        "header": header_json(&hdr),
        "verified": report.passed,
        "certificate": cert,
    });
    write_json(&json_path, &doc)?;

    let csv_path = out_path(series, &cfg.csv_out, "series.csv");
    let orbit = cert.center_orbit().map_err(|e| failed(format!("center orbit: {e}")))?;
    let s = average_series_until(&orbit, cfg.grid, &model.flow, &model.boxes, cert.tau1)
        .map_err(|e| failed(format!("series: {e}")))?;
    let mut w = create(&csv_path)?;
    write_series_csv(&mut w, &s, &hdr)
        .and_then(|_| w.flush())
        .map_err(io_failed(&csv_path))?;

    println!(
        "σ = {:.4}  n0 = {}  n1 = {}  τ0 = {:.3}  τ1 = {:.3}  A0 = {:.5}  A1 = {:.5}  bits = {}",
        cert.sigma, cert.n0, cert.n1, cert.tau0, cert.tau1, cert.a0, cert.a1, cert.precision_bits
    );
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    if report.passed {
        println!("verified");
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        Err(failed(format!("verification failed: {}", names.join(", "))))
    }
}

fn cmd_simulate(
    cfg: &RunConfig,
    x0: Option<&str>,
    y0: Option<f64>,
    horizon: f64,
    orbit_out: Option<PathBuf>,
    series_out: Option<PathBuf>,
) -> Outcome {
    if !(horizon >= 0.0) || horizon.is_infinite() {
        return Err(usage("--horizon must be finite and non-negative"));
    }
    let model = cfg.model();
    let p_star = find_period2(&model.map, 256.max(cfg.precision_bits));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = match x0 {
        Some("pstar") => p_star.clone(),
        Some("-pstar") => -&p_star,
        Some(text) => parse_decimal(cfg, "x0", text)?,
        None => loop {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v != 0.0 {
                break BigReal::from_f64(v, 64.max(cfg.precision_bits));
            }
        },
    };
    let y = y0.unwrap_or_else(|| if x0.is_none() { rng.gen_range(-1.0..1.0) } else { 0.0 });
    if x.is_zero() {
        return Err(usage("--x0 0 lies on Γ, where the return map is undefined"));
    }
    if !(x >= -1.0 && x <= 1.0) || !(y.abs() <= 1.0) {
        return Err(usage("the start must lie in Σ = [-1, 1]²"));
    }
    let rule = TailRule::SnapAnywhere {
        p_star,
        log2_tol: -200.0,
    };
    let orbit = build_orbit(&SigmaPoint::new(x.clone(), y), horizon, &model, &rule)
        .map_err(|e| failed(format!("simulation failed: {e}")))?;
    let series = average_series(&orbit, cfg.grid, &model.flow, &model.boxes).map_err(|e| failed(e.to_string()))?;

    let hdr = header(
        cfg,
        "simulate",
        &[
            ("x0", x.to_decimal()),
            ("y0", format!("{y:e}")),
            ("horizon", horizon.to_string()),
        ],
    );
    let orbit_path = out_path(orbit_out, &cfg.orbit_out, "orbit.csv");
    let mut w = create(&orbit_path)?;
    write_orbit_csv(&mut w, &orbit, &hdr, false)
        .and_then(|_| w.flush())
        .map_err(io_failed(&orbit_path))?;
    let series_path = out_path(series_out, &cfg.csv_out, "series.csv");
    let mut w = create(&series_path)?;
    write_series_csv(&mut w, &series, &hdr)
        .and_then(|_| w.flush())
        .map_err(io_failed(&series_path))?;
    println!(
        "{} segments, {} crossings, {} samples{}",
        orbit.segments.len(),
        orbit.crossings.len(),
        series.len(),
        if orbit.tail.is_some() { ", period-2 tail" } else { "" }
    );
    println!("wrote {} and {}", orbit_path.display(), series_path.display());
    Ok(())
}

#[derive(Serialize)]
struct LevelStatus {
    level: usize,
    verified: bool,
    failures: Vec<String>,
    residual: f64,
}

fn cmd_deepen(cfg: &RunConfig, cert_path: &Path, levels: usize, out: Option<PathBuf>) -> Outcome {
    if levels == 0 {
        return Err(usage("--levels must be at least 1"));
    }
    let seed = read_certificate(cert_path)?;
    let model = cfg.model();
    let dopts = DeepenOptions {
        deep_mode: Mode::Relaxed {
            margin: cfg.deep_margin,
        },
        ..DeepenOptions::default()
    };
    let chain = deepen(&seed, levels, &model, &dopts).map_err(|e| failed(format!("deepen failed: {e}")))?;
    let vopts = VerifyOptions {
        precision_scale: cfg.precision_scale,
        ..VerifyOptions::default()
    };
    let status: Vec<LevelStatus> = chain
        .levels
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let r = verify_certificate(c, &model, &vopts);
            println!(
                "level {}: N = {}, σ = {:.3}, {} bits, verify {}",
                i + 1,
                c.n,
                c.sigma,
                c.precision_bits,
                if r.passed { "passed" } else { "FAILED" }
            );
            LevelStatus {
                level: i + 1,
                verified: r.passed,
                failures: r.failures().iter().map(|c| c.name.clone()).collect(),
                residual: r.residual,
            }
        })
        .collect();
    let nested = chain.is_nested();
    let hdr = header(
        cfg,
        "deepen",
        &[("cert", cert_path.display().to_string()), ("levels", levels.to_string())],
    );
    let path = out_path(out, &cfg.json_out, "chain.json");
    let doc = json!({
        "schema": SCHEMA,
        "header": header_json(&hdr),
        "nested": nested,
        "status": status,
        "chain": chain,
    });
    write_json(&path, &doc)?;
    println!("wrote {}", path.display());
    if nested && status.iter().all(|s| s.verified) {
        Ok(())
    } else {
        Err(failed("chain is not nested or a level failed verification"))
    }
}

fn cmd_cover(cfg: &RunConfig, n: u64, m: u64, grid: usize, out: Option<PathBuf>) -> Outcome {
    if grid == 0 || m == 0 || n == 0 {
        return Err(usage("--N, --m and --grid must be positive"));
    }
    let model = cfg.model();
    let entries = dense_cover(n, m, grid, &model).map_err(|e| failed(e.to_string()))?;
    for e in &entries {
        match (&e.error, e.center_distance) {
            (None, Some(d)) => println!("x = {:+.4}: verified, center distance {d:.3e}", e.x),
            (err, _) => println!("x = {:+.4}: FAILED {}", e.x, err.as_deref().unwrap_or("")),
        }
    }
    let ok = entries.iter().filter(|e| e.verified).count();
    let hdr = header(
        cfg,
        "cover",
        &[("N", n.to_string()), ("m", m.to_string()), ("grid", grid.to_string())],
    );
    let path = out_path(out, &cfg.json_out, "cover.json");
    let doc = json!({
        "schema": SCHEMA,
        "header": header_json(&hdr),
        "verified": ok,
        "entries": entries,
    });
    write_json(&path, &doc)?;
    println!("{ok}/{} verified; wrote {}", entries.len(), path.display());
    if ok == entries.len() {
        Ok(())
    } else {
        Err(failed("some grid points have no verified certificate"))
    }
}

fn cmd_verify(cfg: &RunConfig, cert_path: &Path, report_out: Option<PathBuf>) -> Outcome {
    let cert = read_certificate(cert_path)?;
    let model = cfg.model();
    let vopts = VerifyOptions {
        precision_scale: cfg.precision_scale,
        ..VerifyOptions::default()
    };
    let report = verify_certificate(&cert, &model, &vopts);
    for c in &report.checks {
        println!("{} {}  {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    println!("residual {:.3e}", report.residual);
    if let Some(p) = report_out {
        let hdr = header(cfg, "verify", &[("cert", cert_path.display().to_string())]);
        write_json(
            &p,
            &json!({ "schema": SCHEMA, "header": header_json(&hdr), "report": report }),
        )?;
    }
    if report.passed {
        println!("verified");
        Ok(())
    } else {
        Err(failed(format!("{} checks failed", report.failures().len())))
    }
}
