//! Window planning over a long video: near-online and dense (online)
//! schedules, per-frame coverage, and the worst-case mask latency.
//!
//! ```bash
//! cargo run -p vos3d --example sliding_window
//! ```

use vos3d::pipeline::{plan_windows, worst_case_latency, ClipScheduleConfig};

fn show(label: &str, video_len: usize, cfg: &ClipScheduleConfig) {
    let plans = plan_windows(video_len, cfg).unwrap();
    println!(
        "{label}: clip {} overlap {} over {video_len} frames -> {} windows, latency {} frames",
        cfg.clip_length,
        cfg.overlap,
        plans.len(),
        worst_case_latency(cfg)
    );
    for p in &plans {
        let real_end = p.start + p.real_len();
        let pad = if p.pad_count > 0 {
            format!(" (+{} padded)", p.pad_count)
        } else {
            String::new()
        };
        println!("  frames {:>3}..{:<3}{pad}", p.start, real_end - 1);
    }
}

fn main() {
    let near_online = ClipScheduleConfig { clip_length: 8, overlap: 3 };
    show("near-online", 23, &near_online);

    let dense = ClipScheduleConfig::dense(8).unwrap();
    show("\ndense/online", 12, &dense);

    let short = ClipScheduleConfig { clip_length: 8, overlap: 3 };
    show("\nshort video", 5, &short);
}
