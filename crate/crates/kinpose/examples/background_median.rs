//! Recover a clean background from a clip where a moving subject occludes
//! every pixel for a minority of frames.
//!
//! Run with: `cargo run --example background_median`

use kinpose::video::{median_background, Clip, Frame};

pub fn main() {
    // A textured background, never fully visible in any single frame.
    let (w, h, side) = (24, 24, 8);
    let mut background = Frame::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            background.set_pixel(x, y, [(x * 10) as u8, (y * 9) as u8, ((x + y) * 5) as u8]);
        }
    }

    // The occluder square visits a 5x5 grid of positions, 8 frames each.
    let mut frames = Vec::with_capacity(200);
    for k in 0..200 {
        let position = k / 8;
        let (ox, oy) = (4 * (position % 5), 4 * (position / 5));
        let mut frame = background.clone();
        for y in oy..(oy + side).min(h) {
            for x in ox..(ox + side).min(w) {
                frame.set_pixel(x, y, [255, 0, 255]);
            }
        }
        frames.push(frame);
    }
    let clip = Clip::new(frames, 25.0, "occluded").unwrap();
    println!(
        "clip: {} frames, {:.1} s at {} fps",
        clip.frames.len(),
        clip.duration_s(),
        clip.fps
    );

    let recovered = median_background(&clip, 100, 199).unwrap();
    let exact = recovered == background;
    println!("median background equals the true background byte-exactly: {exact}");
    assert!(exact);

    // The estimate degrades gracefully with smaller windows.
    for window in [199, 49, 9] {
        let bg = median_background(&clip, 100, window).unwrap();
        let wrong = bg
            .data
            .iter()
            .zip(&background.data)
            .filter(|(a, b)| a != b)
            .count();
        println!(
            "window {window:>3}: {wrong} of {} bytes differ",
            bg.data.len()
        );
    }
}
