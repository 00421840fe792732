//! `deskrl curate`: dedup → eval-overlap scrub → length balance, in that
//! order, over a JSON corpus.

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args;
use deskrl_core::curation::{
    decontaminate, dedup, length_balance, BalanceReport, CorpusItem, DecontaminationReport,
    DedupReport, LengthBalanceSpec, DECONTAMINATION_NGRAM,
};
use serde::Serialize;

use crate::util::{read_json, resolve_out, write_json, CliError};

#[derive(Args)]
pub struct CurateArgs {
    /// Training corpus: a JSON array of {id, text, response_length} items.
    #[arg(long)]
    train: PathBuf,
    /// Held-out corpus to scrub against (same format); omit to skip nothing.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Word n-gram size for overlap removal.
    #[arg(long, default_value_t = DECONTAMINATION_NGRAM)]
    ngram: usize,
    /// Drop normalized exact duplicates before scrubbing.
    #[arg(long)]
    dedup: bool,
    /// Length-balancing spec JSON ({edges, targets, tolerance_points, seed});
    /// runs after scrubbing.
    #[arg(long)]
    balance: Option<PathBuf>,
    /// Output directory (falls back to DESKRL_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Everything the run removed and why, stage by stage.
#[derive(Serialize)]
struct CurateReport {
    input: usize,
    kept: usize,
    dedup: Option<DedupReport>,
    decontamination: DecontaminationReport,
    balance: Option<BalanceReport>,
    /// Ids removed by any stage, in input order.
    removed_ids: Vec<String>,
}

pub fn run(args: CurateArgs) -> Result<(), CliError> {
    if args.ngram == 0 {
        return Err(CliError::Input("--ngram must be at least 1".into()));
    }
    let out = resolve_out(args.out)?;
    let items: Vec<CorpusItem> = read_json(&args.train)?;
    let eval_items: Vec<CorpusItem> = match &args.eval {
        Some(path) => read_json(path)?,
        None => Vec::new(),
    };
    let eval_texts: Vec<String> = eval_items.into_iter().map(|it| it.text).collect();
    let input_ids: Vec<String> = items.iter().map(|it| it.id.clone()).collect();
    let input = items.len();

    let (items, dedup_report) = if args.dedup {
        let (kept, report) = dedup(items);
        (kept, Some(report))
    } else {
        (items, None)
    };
    let (items, decontamination) = decontaminate(items, &eval_texts, args.ngram);
    let (items, balance) = match &args.balance {
        Some(path) => {
            let spec: LengthBalanceSpec = read_json(path)?;
            let (kept, report) = length_balance(items, &spec)?;
            (kept, Some(report))
        }
        None => (items, None),
    };

    let kept_ids: BTreeSet<&str> = items.iter().map(|it| it.id.as_str()).collect();
    let removed_ids: Vec<String> =
        input_ids.into_iter().filter(|id| !kept_ids.contains(id.as_str())).collect();
    let report = CurateReport {
        input,
        kept: items.len(),
        dedup: dedup_report,
        decontamination,
        balance,
        removed_ids,
    };

    write_json(&out.join("corpus.json"), &items)?;
    write_json(&out.join("report.json"), &report)?;
    println!(
        "kept {}/{} items ({} removed); corpus and report written to {}",
        report.kept,
        report.input,
        report.removed_ids.len(),
        out.display()
    );
    Ok(())
}
