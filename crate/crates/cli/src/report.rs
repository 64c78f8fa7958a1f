//! The results table: recognizer CER and synthesizer feature loss per
//! training regime, operating mode and input kind.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ichain::alignment::{compute_delays, BlockConfig};
use ichain::corpus::{FrameSpec, Split};
use ichain::trainer::TrainMode;
use ichain::{Error, Result};

use crate::eval::{eval_id, EvalArgs, EvalRecord, InputKind};
use crate::layout::{mode_name, write_file, Regime, RunLayout};
use crate::io_error;

const MODES: [TrainMode; 2] = [TrainMode::Nonincremental, TrainMode::Incremental];
const INPUTS: [InputKind; 2] = [InputKind::Natural, InputKind::Synthetic];

/// One metric cell; `value` is `None` for a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub regime: Regime,
    /// `recognizer` or `synthesizer`.
    pub system: &'static str,
    pub mode: TrainMode,
    pub input: InputKind,
    pub value: Option<f64>,
    /// Evaluation run the value comes from.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub split: Split,
    pub cells: Vec<Cell>,
    /// Per mode: recognizer delay in seconds and synthesizer delay in characters.
    pub delays: Vec<(TrainMode, Option<(f64, f64)>)>,
    /// The same delays for the 8-frame, 4+4-block, 5-character configuration.
    pub reference_delays: (f64, f64),
    pub missing: Vec<String>,
    pub csv: String,
    pub table: String,
}

fn read_records(dir: &Path) -> Result<Vec<EvalRecord>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_error(dir, e)),
    };
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| io_error(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "json") {
            paths.push(p);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Builds the table from `eval/` records of `split` under `run_dir` and
/// writes `report.csv` and `report.txt`. Fails only when there is no
/// record at all; otherwise gaps are shown as `-`.
pub fn report(run_dir: &Path, split: Split) -> Result<Report> {
    let layout = RunLayout::new(run_dir);
    let records: Vec<EvalRecord> = read_records(&layout.eval_dir())?
        .into_iter()
        .filter(|r| r.split == split)
        .collect();

    let mut cells = Vec::new();
    let mut missing = Vec::new();
    for regime in Regime::ALL {
        for system in ["recognizer", "synthesizer"] {
            for mode in MODES {
                for input in INPUTS {
                    let id = eval_id(&EvalArgs {
                        mode,
                        regime,
                        input,
                        split,
                    });
                    let found = records.iter().find(|r| r.id == id);
                    let value = found.map(|r| if system == "recognizer" { r.cer } else { r.feature_loss });
                    if found.is_none() && system == "recognizer" {
                        missing.push(format!("eval/{id}.json"));
                    }
                    cells.push(Cell {
                        regime,
                        system,
                        mode,
                        input,
                        value,
                        source: found.map_or_else(String::new, |r| r.id.clone()),
                    });
                }
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Argument(format!(
            "no {} evaluation records under {}; missing: {}",
            split.name(),
            layout.eval_dir().display(),
            missing.join(", ")
        )));
    }
    let delays: Vec<_> = MODES
        .iter()
        .map(|&m| {
            let d = records
                .iter()
                .filter(|r| r.mode == m)
                .min_by_key(|r| (r.regime, r.input))
                .map(|r| (r.delay_seconds, r.delay_characters));
            (m, d)
        })
        .collect();
    let reference = compute_delays(&BlockConfig::default(), &FrameSpec::MEL_80);
    let reference_delays = (reference.isr_seconds, reference.itts_characters);

    let mut csv = String::from("regime,system,mode,input,metric,value,source\n");
    for c in &cells {
        let metric = if c.system == "recognizer" { "cer_percent" } else { "feature_loss" };
        let _ = writeln!(
            csv,
            "{},{},{},{},{metric},{},{}",
            c.regime.name(),
            c.system,
            mode_name(c.mode),
            c.input.name(),
            c.value.map_or_else(String::new, |v| v.to_string()),
            c.source
        );
    }
    for (m, d) in &delays {
        let (s, ch) = (d.map(|d| d.0), d.map(|d| d.1));
        let _ = writeln!(
            csv,
            ",recognizer,{},,delay_seconds,{},",
            mode_name(*m),
            s.map_or_else(String::new, |v| v.to_string())
        );
        let _ = writeln!(
            csv,
            ",synthesizer,{},,delay_characters,{},",
            mode_name(*m),
            ch.map_or_else(String::new, |v| v.to_string())
        );
    }
    let _ = writeln!(csv, "reference,recognizer,incremental,,delay_seconds,{},", reference_delays.0);
    let _ = writeln!(csv, "reference,synthesizer,incremental,,delay_characters,{},", reference_delays.1);

    let table = render_table(split, &cells, &delays, reference_delays, &missing);
    write_file(&layout.report_csv(), csv.as_bytes())?;
    write_file(&layout.report_txt(), table.as_bytes())?;
    Ok(Report {
        split,
        cells,
        delays,
        reference_delays,
        missing,
        csv,
        table,
    })
}

fn render_table(
    split: Split,
    cells: &[Cell],
    delays: &[(TrainMode, Option<(f64, f64)>)],
    reference: (f64, f64),
    missing: &[String],
) -> String {
    const W: usize = 10;
    let mut out = String::new();
    let _ = writeln!(out, "split: {}", split.name());
    let _ = writeln!(
        out,
        "{:<22}|{:^w2$}|{:^w2$}|{:^w2$}|{:^w2$}",
        "",
        "CER % non-inc",
        "CER % inc",
        "L2 non-inc",
        "L2 inc",
        w2 = 2 * W + 1
    );
    let _ = write!(
        out,
        "{:<22}|{:>W$} {:>W$}|{:>W$} {:>W$}|{:>W$} {:>W$}|{:>W$} {:>W$}",
        "", "nat-sp", "syn-sp", "nat-sp", "syn-sp", "nat-txt", "rec-txt", "nat-txt", "rec-txt"
    );
    out.push('\n');
    for regime in Regime::ALL {
        let _ = write!(out, "{:<22}", regime.name());
        for system in ["recognizer", "synthesizer"] {
            for mode in MODES {
                out.push('|');
                for (i, input) in INPUTS.iter().enumerate() {
                    let v = cells
                        .iter()
                        .find(|c| c.regime == regime && c.system == system && c.mode == mode && c.input == *input)
                        .and_then(|c| c.value);
                    let digits = if system == "recognizer" { 2 } else { 4 };
                    if i > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{:>W$}", fmt_opt(v, digits));
                }
            }
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<22}", "delay");
    for unit in [0, 1] {
        for (_, d) in delays {
            let v = d.map(|d| if unit == 0 { format!("{:.4} s", d.0) } else { format!("{:.1} chars", d.1) });
            let _ = write!(out, "|{:^w2$}", v.unwrap_or_else(|| "-".into()), w2 = 2 * W + 1);
        }
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "reference blocks (8 frames, 4 main + 4 look-ahead, 5 chars): {} s, {} chars",
        reference.0, reference.1
    );
    if !missing.is_empty() {
        let _ = writeln!(out, "missing: {}", missing.join(", "));
    }
    out
}
