//! Separate video clips into the paired set (static background, clean
//! median estimate available) and the unpaired set (global background
//! motion).
//!
//! Run with: `cargo run --example clip_manifest`

use kinpose::video::{build_manifest, clip_motion_stats, Clip, Frame, ManifestConfig};

fn textured(w: usize, h: usize, phase: usize) -> Frame {
    let mut f = Frame::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let v = (((x + phase) * 37 + y * 11) % 200) as u8;
            f.set_pixel(x, y, [v, v / 2 + 20, 255 - v]);
        }
    }
    f
}

pub fn main() {
    let (w, h) = (20, 20);

    // Tripod clip: fixed texture, small moving square (the "subject").
    let tripod: Vec<Frame> = (0..80)
        .map(|k| {
            let mut f = textured(w, h, 0);
            let (ox, oy) = ((3 * k) % 14, (2 * k) % 14);
            for y in oy..oy + 6 {
                for x in ox..ox + 6 {
                    f.set_pixel(x, y, [250, 250, 250]);
                }
            }
            f
        })
        .collect();
    // Handheld clip: the whole texture drifts every frame.
    let handheld: Vec<Frame> = (0..80).map(|k| textured(w, h, k)).collect();
    // Too short to use at all.
    let stub: Vec<Frame> = (0..20).map(|_| textured(w, h, 0)).collect();

    let clips = vec![
        Clip::new(tripod, 10.0, "tripod").unwrap(),
        Clip::new(handheld, 10.0, "handheld").unwrap(),
        Clip::new(stub, 10.0, "stub").unwrap(),
    ];

    for clip in &clips {
        let stats = clip_motion_stats(clip).unwrap();
        println!(
            "{:>9}: {:>5.1} s, score {:.4}, mean L2 to median {:.4}",
            clip.source_id,
            clip.duration_s(),
            stats.score,
            stats.mean_l2_to_median
        );
    }

    let tripod_score = clip_motion_stats(&clips[0]).unwrap().score;
    let handheld_score = clip_motion_stats(&clips[1]).unwrap().score;
    let config = ManifestConfig {
        threshold: (tripod_score + handheld_score) / 2.0,
        gap_s: 1.0,
        window: 61,
        min_duration_s: 5.0,
    };
    let manifest = build_manifest(&clips, &config).unwrap();

    println!(
        "\nthreshold {:.4}, pair gap {} s:",
        config.threshold, config.gap_s
    );
    println!("  paired tuples:   {}", manifest.paired.len());
    for t in manifest.paired.iter().take(3) {
        println!(
            "    ({}#{}, {}#{}, background@{})",
            t.source.clip, t.source.index, t.target.clip, t.target.index, t.background.index
        );
    }
    println!("  unpaired tuples: {}", manifest.unpaired.len());
    for t in manifest.unpaired.iter().take(3) {
        println!(
            "    ({}#{}, {}#{})",
            t.source.clip, t.source.index, t.target.clip, t.target.index
        );
    }
    for s in &manifest.meta.skipped {
        println!("  skipped `{}`: {}", s.clip, s.reason);
    }

    println!(
        "\nmanifest JSON:\n{}",
        serde_json::to_string_pretty(&manifest).unwrap()
    );
}
