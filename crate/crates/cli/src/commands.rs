// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;

use serde_json::json;
use vipseval::convert::{to_instance, to_semantic};
use vipseval::ema::ema;
use vipseval::fusion::{average_softmax, merge_panoptic, InstanceFile, MergeParams};
use vipseval::io::{
    check_dataset, load_dataset, read_categories, read_logits, read_logits_checked, read_weights,
    save_dataset, save_instance_dataset, save_semantic_dataset, write_weights, Dataset,
    ResizeShortSide,
};
use vipseval::querydecode::{assignment_to_panoptic, decode_masks, DecodeParams, FeatureVolume, QueryMatrix};
use vipseval::report::{entries_from_reports, read_envelope, render_ranking, Envelope, RankingEntry};
use vipseval::stq::stq;
use vipseval::synth::{generate, ScenarioSpec};
use vipseval::vpq::{vpq, VpqConfig, MATCH_IOU, VOID_IGNORE_FRACTION};
use vipseval::{Error, Result};

use crate::{Command, ConvertMode, EvalArgs};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::EvalVpq {
            eval,
            windows,
            no_ignore_void,
        } => eval_vpq(&eval, windows, !no_ignore_void),
        Command::EvalStq { eval } => eval_stq(&eval),
        Command::Convert { input, mode, out } => convert(&input, mode, &out),
        Command::Fuse {
            logits,
            instances,
            categories,
            out,
            weights,
            min_area,
            overlap_keep,
        } => fuse(
            &logits,
            &instances,
            &categories,
            &out,
            weights.as_deref(),
            MergeParams {
                min_area,
                overlap_keep,
            },
        ),
        Command::Decode {
            queries,
            features,
            categories,
            tau,
            normalize,
            video_id,
            out,
        } => {
            let q = QueryMatrix::from_weights(&read_weights(&queries)?)?;
            let f = FeatureVolume::from_logits(&read_logits(&features)?);
            let cats = read_categories(&categories)?;
            let av = decode_masks(&q, &f, &DecodeParams { tau, normalize })?;
            let seq = assignment_to_panoptic(&video_id, &av, &q, &cats)?;
            let manifest = save_dataset("decoded", &cats, &[seq], &out)?;
            println!("wrote {}", manifest.display());
            Ok(())
        }
        Command::Ema {
            snapshots,
            decay,
            out,
        } => {
            let maps = snapshots
                .iter()
                .map(|p| read_weights(p))
                .collect::<Result<Vec<_>>>()?;
            let avg = ema(&maps, decay)?;
            write_weights(&avg, &out)?;
            println!("averaged {} snapshots into {}", maps.len(), out.display());
            Ok(())
        }
        Command::Synth {
            spec,
            out_gt,
            out_pred,
        } => {
            let spec = ScenarioSpec::read(&spec)?;
            let pair = generate(&spec)?;
            let g = save_dataset("synth-gt", &spec.categories, &[pair.gt], &out_gt)?;
            let p = save_dataset("synth-pred", &spec.categories, &[pair.pred], &out_pred)?;
            println!("wrote {} and {}", g.display(), p.display());
            Ok(())
        }
        Command::Resize {
            input,
            short_side,
            out,
        } => {
            if short_side == 0 {
                return Err(Error::InvalidArgument("--short-side must be at least 1".into()));
            }
            let ds = load_dataset(&input)?;
            let seqs: Vec<_> = ds
                .sequences
                .iter()
                .map(|s| s.resize_short_side(short_side))
                .collect();
            let manifest = save_dataset(&ds.manifest.dataset_name, &ds.categories, &seqs, &out)?;
            println!("wrote {}", manifest.display());
            Ok(())
        }
        Command::Validate { input } => validate(&input),
        Command::Report {
            reports,
            entry,
            windows,
            out,
        } => report(&reports, &entry, &windows, out.as_deref()),
    }
}

fn pct(v: f64) -> String {
    format!("{:.4}", v * 100.0)
}

fn load_pair(args: &EvalArgs) -> Result<(Dataset, Dataset)> {
    if args.short_side == Some(0) {
        return Err(Error::InvalidArgument("--short-side must be at least 1".into()));
    }
    let mut gt = load_dataset(&args.gt)?;
    let mut pred = load_dataset(&args.pred)?;
    if gt.categories != pred.categories {
        return Err(Error::InvalidArgument(
            "gt and pred category tables differ".into(),
        ));
    }
    if let Some(n) = args.short_side {
        for ds in [&mut gt, &mut pred] {
            ds.sequences = ds.sequences.iter().map(|s| s.resize_short_side(n)).collect();
        }
    }
    Ok((gt, pred))
}

fn eval_config(args: &EvalArgs) -> serde_json::Value {
    json!({
        "gt": args.gt,
        "pred": args.pred,
        "short_side": args.short_side,
        "threads": rayon::current_num_threads(),
    })
}

fn eval_vpq(args: &EvalArgs, windows: Vec<usize>, ignore_void: bool) -> Result<()> {
    let config = VpqConfig {
        windows,
        ignore_void_predictions: ignore_void,
    };
    config.validate()?;
    let (gt, pred) = load_pair(args)?;
    let report = vpq(&gt.sequences, &pred.sequences, &gt.categories, &config)?;
    for w in &report.windows {
        println!("VPQ{:<3} {}", w.k, pct(w.vpq));
    }
    println!("VPQ    {}", pct(report.overall_vpq));
    if let Some(out) = &args.out {
        let mut cfg = eval_config(args);
        cfg["windows"] = json!(config.windows);
        let rules = json!({
            "clip_stride": 1,
            "match_iou_exclusive": MATCH_IOU,
            "gt_void_excluded_from_iou": true,
            "ignore_void_predictions": config.ignore_void_predictions,
            "void_ignore_fraction": VOID_IGNORE_FRACTION,
            "class_accumulation": "all clips and videos before division",
            "class_mean": "unweighted over classes that occur",
            "overall": "mean over windows",
        });
        Envelope::new("vpq", args.name.clone(), cfg, rules, &report).write(out)?;
    }
    Ok(())
}

fn eval_stq(args: &EvalArgs) -> Result<()> {
    let (gt, pred) = load_pair(args)?;
    let report = stq(&gt.sequences, &pred.sequences, &gt.categories)?;
    let opt = |v: Option<f64>| v.map_or("undefined".to_string(), pct);
    println!("SQ  {}", pct(report.sq));
    println!("AQ  {}", opt(report.aq));
    println!("STQ {}", opt(report.stq));
    if let Some(out) = &args.out {
        let rules = json!({
            "sq": "mean class IoU; gt void excluded, pred void counted as a miss",
            "aq_tracks": "gt thing segments over the whole video",
            "aq_pred_tracks": "pred thing-category segments, sized on gt non-void pixels",
            "aq_matching": "class-agnostic",
            "aq_mean": "over all gt tracks",
            "stq": "sqrt(aq * sq)",
        });
        Envelope::new("stq", args.name.clone(), eval_config(args), rules, &report).write(out)?;
    }
    Ok(())
}

fn convert(input: &Path, mode: ConvertMode, out: &Path) -> Result<()> {
    let ds = load_dataset(input)?;
    let name = &ds.manifest.dataset_name;
    let manifest = match mode {
        ConvertMode::Semantic => {
            let seqs = ds
                .sequences
                .iter()
                .map(|s| to_semantic(s, &ds.categories))
                .collect::<Result<Vec<_>>>()?;
            save_semantic_dataset(name, &ds.categories, &seqs, out)?
        }
        ConvertMode::Instance => {
            let seqs = ds
                .sequences
                .iter()
                .map(|s| to_instance(s, &ds.categories))
                .collect::<Result<Vec<_>>>()?;
            save_instance_dataset(name, &ds.categories, &seqs, out)?
        }
    };
    println!("wrote {}", manifest.display());
    Ok(())
}

fn fuse(
    logits: &[std::path::PathBuf],
    instances: &Path,
    categories: &Path,
    out: &Path,
    weights: Option<&[f64]>,
    params: MergeParams,
) -> Result<()> {
    let cats = read_categories(categories)?;
    let vols = logits
        .iter()
        .map(|p| read_logits_checked(p, &cats))
        .collect::<Result<Vec<_>>>()?;
    let probs = average_softmax(&vols, weights)?;
    let inst = InstanceFile::read(instances)?;
    let masks = inst.masks()?;
    let seq = merge_panoptic(&inst.video_id, &probs, &masks, &cats, &params)?;
    let manifest = save_dataset("fused", &cats, &[seq], out)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn validate(input: &Path) -> Result<()> {
    let (_, outcomes) = check_dataset(input)?;
    let mut bad = 0;
    for (id, outcome) in &outcomes {
        match outcome {
            Ok(_) => println!("ok      {id}"),
            Err(e) => {
                bad += 1;
                println!("invalid {id}: {e}");
            }
        }
    }
    if bad > 0 {
        return Err(Error::InvalidArgument(format!(
            "{bad} of {} videos failed validation",
            outcomes.len()
        )));
    }
    println!("{} videos valid", outcomes.len());
    Ok(())
}

fn parse_entry(s: &str, windows: &[usize]) -> Result<RankingEntry> {
    let bad = || Error::InvalidArgument(format!("malformed entry '{s}', expected name:v1,v2,...[:stq]"));
    let parts: Vec<&str> = s.split(':').collect();
    if !(2..=3).contains(&parts.len()) || parts[0].is_empty() {
        return Err(bad());
    }
    let scores = parts[1]
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    if scores.len() != windows.len() {
        return Err(Error::InvalidArgument(format!(
            "entry '{}' has {} window scores for {} windows",
            parts[0],
            scores.len(),
            windows.len()
        )));
    }
    let stq = match parts.get(2) {
        Some(v) => Some(v.trim().parse::<f64>().map_err(|_| bad())?),
        None => None,
    };
    Ok(RankingEntry {
        name: parts[0].to_owned(),
        windows: windows.iter().copied().zip(scores.iter().map(|v| v / 100.0)).collect(),
        stq,
    })
}

fn report(files: &[std::path::PathBuf], literals: &[String], windows: &[usize], out: Option<&Path>) -> Result<()> {
    let envs = files
        .iter()
        .map(|p| read_envelope(p))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = entries_from_reports(&envs)?;
    for lit in literals {
        entries.push(parse_entry(lit, windows)?);
    }
    if entries.is_empty() {
        return Err(Error::InvalidArgument("no reports or entries given".into()));
    }
    let table = render_ranking(&entries);
    print!("{table}");
    if let Some(out) = out {
        fs::write(out, &table).map_err(|e| Error::Io {
            path: out.to_owned(),
            source: e,
        })?;
    }
    Ok(())
}
