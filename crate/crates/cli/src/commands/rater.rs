use std::sync::Arc;

use agf_rater::{agreement, replay, session_report, ItemPool, RaterReport, Store};
use serde_json::json;

use super::{json_pretty, read_pack, Ctx, Dataset};
use crate::args::{RaterServeArgs, ReportArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub fn rater_serve(ctx: &Ctx, a: &RaterServeArgs) -> CliResult<RunManifest> {
    let log_dir = a.log_dir.clone().unwrap_or_else(|| ctx.data_dir.join("rater"));
    let mut rec = ctx.recorder("rater-serve", &log_dir)?;
    let ds = Dataset::load(&mut rec, &ctx.dataset_dir(&a.dataset))?;
    let mut rois = ds.rois;
    for p in &a.synthetic {
        rois.extend(read_pack(&mut rec, p)?);
    }
    let pool = ItemPool::new(rois)?;
    let (real, synthetic) = pool.counts();
    let store = Arc::new(Store::open(&log_dir, pool)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(ctx.jobs.max(1))
        .enable_all()
        .build()
        .map_err(|e| CliError::Other(format!("cannot start the runtime: {e}")))?;
    eprintln!("serving {real} real and {synthetic} synthetic ROIs on http://{} (logs in {})", a.addr, log_dir.display());
    rt.block_on(agf_rater::serve(store, a.addr)).map_err(|e| CliError::Other(format!("server on {}: {e}", a.addr)))?;
    rec.finish()
}

fn print_session(r: &RaterReport) {
    let pct = |s: &agf_rater::Score| s.accuracy.map_or("  n/a".to_owned(), |a| format!("{:5.1}%", 100.0 * a));
    let c = &r.classification;
    println!("session {} (rater {}): {}/{} answered", r.session_id, r.rater_id, r.answered, r.total_items);
    println!("  classification  real {} ({}/{})  synthetic {} ({}/{})  total {} ({}/{})",
        pct(&c.real), c.real.correct, c.real.answered,
        pct(&c.synthetic), c.synthetic.correct, c.synthetic.answered,
        pct(&c.total), c.total.correct, c.total.answered);
    if let Some(rf) = &r.real_vs_fake {
        println!("  real vs. synthetic {} ({}/{})", pct(rf), rf.correct, rf.answered);
    }
}

pub fn report(ctx: &Ctx, a: &ReportArgs) -> CliResult<RunManifest> {
    let mut rec = ctx.recorder("report", &ctx.out_dir(&a.out, "report"))?;
    let mut sessions = Vec::new();
    for p in &a.logs {
        let bytes = rec.input(p)?;
        let (created, responses) = replay(&bytes).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
        sessions.push((created, responses));
    }
    let reports: Vec<RaterReport> = sessions.iter().map(|(c, r)| session_report(c, r)).collect::<Result<_, _>>()?;
    for r in &reports {
        print_session(r);
    }
    let agree = match &sessions[..] {
        [(ca, ra), (cb, rb)] => {
            let g = agreement((ca, ra), (cb, rb))?;
            println!("agreement {:.1}% ({}/{}), both correct {}", 100.0 * g.agreement, g.agreed, g.co_answered, g.both_correct);
            Some(g)
        }
        _ => None,
    };
    rec.write("report.json", &json_pretty(&json!({ "sessions": reports, "agreement": agree })))?;
    rec.finish()
}
