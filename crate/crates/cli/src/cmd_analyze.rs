//! `moxel analyze`: routing-trace reports in JSON or CSV.

use std::path::PathBuf;

use clap::Args;
use moxel::analytics::{
    expert_modality_distribution, load_balance, modality_expert_distribution, top_pathways,
    write_report, ExportFormat, Report,
};
use moxel::moe::RoutingTrace;
use moxel::{Error, Result};

const REPORT_NAMES: [&str; 5] = [
    "expert_modality",
    "modality_expert",
    "load_balance",
    "pathways",
    "all",
];

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Routing-trace JSON file (as written by `moxel train`).
    #[arg(long)]
    pub trace: PathBuf,
    /// One of: expert_modality, modality_expert, load_balance, pathways, all.
    #[arg(long)]
    pub report: String,
    /// Restrict per-layer reports to one MoE layer (default: every layer).
    #[arg(long)]
    pub layer: Option<usize>,
    /// Pathways per modality.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Output directory (one file per report).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn load_trace(path: &PathBuf) -> Result<RoutingTrace> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let trace: RoutingTrace = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    if trace.records.is_empty() {
        return Err(Error::Empty("routing trace"));
    }
    trace.validate()?;
    Ok(trace)
}

pub fn run(args: AnalyzeArgs) -> Result<u8> {
    if !REPORT_NAMES.contains(&args.report.as_str()) {
        return Err(Error::Config(format!(
            "unknown report {:?}; valid names: {}",
            args.report,
            REPORT_NAMES.join(", ")
        )));
    }
    let format = match args.format.as_str() {
        "json" => ExportFormat::Json,
        "csv" => ExportFormat::Csv,
        other => {
            return Err(Error::Config(format!(
                "unknown format {other:?}; expected json or csv"
            )))
        }
    };
    let ext = match format {
        ExportFormat::Json => "json",
        ExportFormat::Csv => "csv",
    };
    let trace = load_trace(&args.trace)?;
    let layers: Vec<usize> = match args.layer {
        Some(l) => vec![l],
        None => trace.moe_layers.clone(),
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;

    let mut written = Vec::new();
    let wants = |name: &str| args.report == name || args.report == "all";
    for &layer in &layers {
        if wants("expert_modality") {
            let r = Report::ExpertModality(expert_modality_distribution(&trace, layer)?);
            let path = args.out.join(format!("expert_modality_layer{layer}.{ext}"));
            write_report(&r, format, &path)?;
            written.push(path);
        }
        if wants("modality_expert") {
            let r = Report::ModalityExpert(modality_expert_distribution(&trace, layer)?);
            let path = args.out.join(format!("modality_expert_layer{layer}.{ext}"));
            write_report(&r, format, &path)?;
            written.push(path);
        }
        if wants("load_balance") {
            let r = Report::LoadBalance {
                layer,
                fractions: load_balance(&trace, layer)?,
            };
            let path = args.out.join(format!("load_balance_layer{layer}.{ext}"));
            write_report(&r, format, &path)?;
            written.push(path);
        }
    }
    if wants("pathways") {
        let r = Report::Pathways {
            top_n: args.top,
            pathways: top_pathways(&trace, args.top)?,
        };
        let path = args.out.join(format!("pathways.{ext}"));
        write_report(&r, format, &path)?;
        written.push(path);
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(0)
}
