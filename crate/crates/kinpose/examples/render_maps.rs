//! Render landmarks into Gaussian heat-maps and limb affinity maps, then
//! recover the landmarks back with the soft-argmax.
//!
//! Run with: `cargo run --example render_maps`

use kinpose::camera::PerspectiveCamera;
use kinpose::maps::{render_spatial_maps, soft_argmax, MapConfig};
use kinpose::skeleton::default_h36m_tree;
use kinpose::{fk, io, synth};

pub fn main() {
    let tree = default_h36m_tree();
    let (params, camera) = synth::synth_pose(0, &tree);
    let pose = fk::forward_kinematics(&params, &tree).unwrap();
    let landmarks =
        kinpose::camera::project(&pose, &camera, &PerspectiveCamera::default()).unwrap();

    let config = MapConfig::default(); // 56x56, sigma 2.0, sigma_y 1.5, alpha 0.5
    let maps = render_spatial_maps(&landmarks, &tree, &config).unwrap();
    println!(
        "rendered {} heat + {} affinity channels on {}x{}",
        maps.heat.channel_count(),
        maps.affinity.channel_count(),
        config.lattice.height,
        config.lattice.width
    );

    // Round trip: soft-argmax of each heat channel recovers its landmark.
    let mut worst_cells: f64 = 0.0;
    for j in 0..tree.joint_count() {
        let recovered = soft_argmax(&maps.heat.channels[j], config.lattice).unwrap();
        let diff = (recovered - landmarks.points[j]).abs() * 55.0;
        worst_cells = worst_cells.max(diff.x.max(diff.y));
    }
    println!("soft-argmax recovery: worst deviation {worst_cells:.4} lattice cells");

    let out_dir = std::env::temp_dir().join("kinpose-render-maps");
    std::fs::create_dir_all(&out_dir).unwrap();
    for (j, channel) in maps.heat.channels.iter().enumerate() {
        let path = out_dir.join(format!("hm_{j:02}_{}.pgm", tree.name(j)));
        io::write_pgm16(path, channel, config.lattice).unwrap();
    }
    for (l, channel) in maps.affinity.channels.iter().enumerate() {
        let (a, b) = tree.limbs()[l];
        let path = out_dir.join(format!("am_{l:02}_{}_{}.pgm", tree.name(a), tree.name(b)));
        io::write_pgm16(path, channel, config.lattice).unwrap();
    }
    io::write_map_dump(out_dir.join("maps.bin"), &[&maps.heat, &maps.affinity]).unwrap();
    println!("wrote PGM channels and maps.bin to {}", out_dir.display());
}
