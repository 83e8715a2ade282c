use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eqs_core::bands::extended_f64::format_value;
use eqs_core::circuit::DeviceTermination;
use eqs_core::formats;
use eqs_core::scenario::{self, AnalysisOutput, Scenario};
use eqs_core::spectral::{self, SpectrumFrame, WindowKind};
use eqs_core::{Error, ErrorClass, Result};
use serde_json::{json, Value};

/// Interference pickup simulator and spectral forensics for body-coupled wearables.
#[derive(Parser)]
#[command(name = "eqsi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and write every artifact.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Analyze a recorded capture CSV.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        capture: PathBuf,
    },
    /// Attribute the peaks of a capture or spectrum.
    Explain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
    },
    /// Score and recommend frequency bands.
    Bands {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        /// Expected body-channel signal level.
        #[arg(long, allow_hyphen_values = true)]
        signal_level: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        sir_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        snr_min: Option<f64>,
        /// Leave device clock spurs out of the SIR.
        #[arg(long)]
        exclude_spurs: bool,
    },
    /// Derive the amplitude calibration factor from a reference tone capture.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        capture: PathBuf,
        /// Peak amplitude of the reference tone, volts.
        #[arg(long)]
        amplitude: f64,
    },
    /// Sweep one numeric scenario field and tabulate summary metrics.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted field path, e.g. `geometry.c_g` or `sources.0.fundamental_hz`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Input {
    #[arg(long)]
    capture: Option<PathBuf>,
    #[arg(long)]
    spectrum: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; the default catalog scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Format of the summary printed to stdout.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fs: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    /// rectangular, hann, blackman or chebyshev:<sidelobe dB>
    #[arg(long)]
    window: Option<WindowKind>,
    /// sa, osc, wrg or wr
    #[arg(long, value_parser = parse_device)]
    device: Option<DeviceTermination>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_device(s: &str) -> std::result::Result<DeviceTermination, String> {
    DeviceTermination::from_label(s).ok_or_else(|| format!("unknown device '{s}' (expected sa, osc, wrg or wr)"))
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Parse => 3,
        ErrorClass::Schema => 4,
        ErrorClass::Numeric => 5,
        ErrorClass::Io => 6,
    }
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        let mut s = match &self.scenario {
            Some(p) => Scenario::load(p)?,
            None => Scenario::default_catalog(),
        };
        if let Some(seed) = self.seed {
            s.capture.seed = seed;
        }
        if let Some(fs) = self.fs {
            s.set_fs(fs);
        }
        if let Some(n) = self.n {
            s.analysis.n = n;
        }
        if let Some(w) = self.window {
            s.analysis.window = w;
        }
        if let Some(d) = self.device {
            s.device = d;
        }
        s.validate()?;
        Ok(s)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| Error::from(e).context(self.out.display().to_string()))?;
        let path = self.out.join(name);
        fs::write(&path, text).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Ok(path)
    }

    fn print(&self, summary: Value) {
        match self.format {
            Format::Json => emit(&format!("{}\n", serde_json::to_string_pretty(&summary).expect("summary serializes"))),
            Format::Csv => {
                let mut text = String::from("key,value\n");
                if let Value::Object(map) = summary {
                    for (k, v) in map {
                        let v = match v {
                            Value::String(s) => s,
                            Value::Array(items) => items.iter().map(plain).collect::<Vec<_>>().join(";"),
                            other => plain(&other),
                        };
                        text.push_str(&format!("{k},{v}\n"));
                    }
                }
                emit(&text);
            }
        }
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn plain(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(format_value(v))
    }
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

fn load_frame(path: &Path) -> Result<SpectrumFrame> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    formats::spectrum_from_csv(&text).map_err(|e| e.context(path.display().to_string()))
}

fn analyze_input(input: &Input, s: &Scenario) -> Result<AnalysisOutput> {
    match (&input.capture, &input.spectrum) {
        (Some(c), _) => scenario::analyze_capture(c, &s.analysis, &s.bands),
        (None, Some(p)) => scenario::analyze_frame(load_frame(p)?, &s.analysis, &s.bands),
        (None, None) => Err(Error::schema("one of --capture or --spectrum is required")),
    }
}

fn summary(a: &AnalysisOutput, outputs: &[PathBuf]) -> Value {
    json!({
        "fs_hz": a.frame.fs,
        "n": a.frame.n,
        "window": a.frame.window.to_string(),
        "nf_dbv": num(a.frame.nf),
        "peak_count": a.peaks.len(),
        "fundamentals_hz": a.report.fundamentals_hz,
        "unexplained_count": a.report.unexplained_count,
        "recommended_bands": a.plan.bands.iter().filter(|b| b.recommended).count(),
        "lowest_recommended_edge_hz": opt(a.plan.lowest_recommended_edge_hz),
        "operating_edge_hz": opt(a.plan.operating_edge_hz),
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    })
}

fn write_analysis(common: &Common, a: &AnalysisOutput) -> Result<Vec<PathBuf>> {
    Ok(vec![
        common.write("spectrum.csv", &formats::spectrum_to_csv(&a.frame))?,
        common.write("report.json", &formats::report_to_json(&a.report))?,
        common.write("bands.json", &formats::bands_to_json(&a.plan))?,
        common.write("bands.csv", &a.plan.to_csv())?,
    ])
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let s = common.scenario()?;
            let out = scenario::run_scenario(&s)?;
            let mut written = vec![common.write("capture.csv", &formats::capture_to_csv(&out.capture))?];
            written.extend(write_analysis(&common, &out.analysis)?);
            common.print(summary(&out.analysis, &written));
        }
        Command::Analyze { common, capture } => {
            let s = common.scenario()?;
            let a = scenario::analyze_capture(&capture, &s.analysis, &s.bands)?;
            let written = write_analysis(&common, &a)?;
            common.print(summary(&a, &written));
        }
        Command::Explain { common, input } => {
            let s = common.scenario()?;
            let a = analyze_input(&input, &s)?;
            let path = common.write("report.json", &formats::report_to_json(&a.report))?;
            match common.format {
                Format::Json => common.print(serde_json::to_value(&a.report).expect("report serializes")),
                Format::Csv => {
                    let mut text = String::from("freq_hz,mag_dbv,class,provenance\n");
                    for e in &a.report.peaks {
                        let class = serde_json::to_value(&e.class).expect("class serializes");
                        text.push_str(&format!(
                            "{},{},{},\"{}\"\n",
                            e.peak.freq,
                            e.peak.mag,
                            class["class"].as_str().unwrap_or("unknown"),
                            e.provenance.replace('"', "'")
                        ));
                    }
                    emit(&text);
                    eprintln!("wrote {}", path.display());
                }
            }
        }
        Command::Bands {
            common,
            input,
            signal_level,
            sir_min,
            snr_min,
            exclude_spurs,
        } => {
            let mut s = common.scenario()?;
            if let Some(v) = signal_level {
                s.bands.signal_level_dbv = v;
            }
            if let Some(v) = sir_min {
                s.bands.sir_min_db = v;
            }
            if let Some(v) = snr_min {
                s.bands.snr_min_db = v;
            }
            if exclude_spurs {
                s.bands.include_spurs = false;
            }
            s.validate()?;
            let a = analyze_input(&input, &s)?;
            let written = vec![
                common.write("bands.json", &formats::bands_to_json(&a.plan))?,
                common.write("bands.csv", &a.plan.to_csv())?,
            ];
            match common.format {
                Format::Json => common.print(serde_json::to_value(&a.plan).expect("plan serializes")),
                Format::Csv => {
                    emit(&a.plan.to_csv());
                    for p in &written {
                        eprintln!("wrote {}", p.display());
                    }
                }
            }
        }
        Command::Calibrate {
            common,
            capture,
            amplitude,
        } => {
            let cap = scenario::load_capture(&capture)?;
            let factor = spectral::calibrate(&cap, amplitude).map_err(|e| Error::from(e).context("calibrate"))?;
            common.print(json!({
                "capture": capture.display().to_string(),
                "known_amplitude_v": amplitude,
                "calibration": factor,
                "calibration_db": 20.0 * factor.log10(),
            }));
        }
        Command::Sweep {
            common,
            param,
            values,
            threads,
        } => {
            let s = common.scenario()?;
            let rows = scenario::sweep(&s, &param, &values, threads)?;
            let text = scenario::sweep_to_csv(&param, &rows);
            let path = common.write("sweep.csv", &text)?;
            match common.format {
                Format::Csv => {
                    emit(&text);
                    eprintln!("wrote {}", path.display());
                }
                Format::Json => {
                    let points: Vec<Value> = rows
                        .iter()
                        .map(|r| json!({"value": r.value, "metric": r.metric, "result": num(r.result)}))
                        .collect();
                    common.print(json!({"parameter": param, "rows": points, "outputs": [path.display().to_string()]}));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
