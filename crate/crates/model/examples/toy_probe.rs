//! One toy run with diagnostics: `toy_probe <seed> [full|nrar|base]`.
//! `S1` / `S2` override the stage iteration counts.

use std::time::Instant;

use crr_model::experiment::{discrepancy_ratio, evaluate, run_toy, toy_data};
use crr_model::CrrConfig;

fn main() -> crr_model::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let mode = args.get(2).cloned().unwrap_or_else(|| "full".into());
    let mut cfg = CrrConfig::toy();
    cfg.trainer.seed = seed;
    cfg.trainer.log_every = 25;
    match mode.as_str() {
        "nrar" => cfg.repair_net.feature_masking = false,
        "base" => {
            cfg.repair_net.feature_masking = false;
            cfg.trainer.nrar = false;
        }
        _ => {}
    }
    if let Ok(v) = std::env::var("S1") {
        cfg.trainer.stage1.iterations = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("S2") {
        cfg.trainer.stage2.iterations = v.parse().unwrap();
    }
    let data = toy_data(&cfg, 200, 40, 40, 1000 + seed)?;
    let t = Instant::now();
    let run = run_toy(&cfg, data)?;
    eprintln!("train {:.1}s", t.elapsed().as_secs_f64());
    let l1 = run.stage1.losses(1);
    eprintln!("stage1 losses {:?} time {:?}", l1, run.stage1.events.iter().rev().find_map(|e| match e { crr_model::trainer::LogEvent::Iteration { elapsed_s, .. } => Some(*elapsed_s), _ => None }));
    if let Some(l) = &run.stage2 {
        eprintln!("stage2 losses {:?}", l.losses(2));
    }
    let ratio = discrepancy_ratio(&run.model, &run.data.test, 16)?;
    let ev = evaluate(&run.model, &run.data.test, 16)?;
    println!("{mode} seed {seed} ratio {ratio:.3}\n{}", ev.report.to_table());
    let mut m = run.model;
    let base = m.config.clone();
    m.config.scoring.use_segnet = false;
    let ev = evaluate(&m, &run.data.test, 16)?;
    println!("discrepancy only\n{}", ev.report.to_table());
    m.config = base.clone();
    m.config.repair_net.feature_masking = false;
    let ev = evaluate(&m, &run.data.test, 16)?;
    println!("no test-time masking\n{}", ev.report.to_table());
    Ok(())
}
