//! The loss terms and the flip-consistency machinery: spatial transforms
//! on landmarks and images, and the equivariance residual of a pose
//! encoder measured through the energy-model interface.
//!
//! Run with: `cargo run --example flip_consistency`

use kinpose::losses::{
    apply_transform, invert_transform, loss_paired, loss_unpaired, transform_image,
    unpaired_consistency_residual, EnergyError, EnergyModel, FeatureVector, SpatialTransform,
};
use kinpose::maps::SpatialMaps;
use kinpose::skeleton::{default_h36m_tree, Landmarks2D};
use kinpose::video::Frame;
use kinpose::{camera, fk, synth};

/// Toy encoder: answers known images (by exact bytes) with stored
/// landmarks. Equivariant by construction, except for one joint when a
/// violation is injected.
struct TableEncoder {
    entries: Vec<(Frame, Landmarks2D)>,
}

impl EnergyModel for TableEncoder {
    fn reconstruct(
        &self,
        _maps: &SpatialMaps,
        _appearance: &FeatureVector,
        background: &Frame,
    ) -> Result<Frame, EnergyError> {
        Ok(background.clone())
    }

    fn encode_pose(&self, image: &Frame) -> Result<Landmarks2D, EnergyError> {
        self.entries
            .iter()
            .find(|(f, _)| f == image)
            .map(|(_, p)| p.clone())
            .ok_or_else(|| EnergyError("unknown image".into()))
    }

    fn encode_appearance(&self, _image: &Frame) -> Result<FeatureVector, EnergyError> {
        Ok(FeatureVector(vec![0.25, -1.5, 0.75]))
    }
}

pub fn main() {
    let tree = default_h36m_tree();
    let (params, cam_params) = synth::synth_pose(6, &tree);
    let pose = fk::forward_kinematics(&params, &tree).unwrap();
    let landmarks = camera::project(&pose, &cam_params, &Default::default()).unwrap();

    // Flip on landmarks: x -> 1 - x plus the left/right channel exchange.
    let flip = SpatialTransform::HorizontalFlip;
    let flipped = apply_transform(&landmarks, &flip, tree.mirror_map());
    let lw = tree.index_of("left_wrist").unwrap();
    let rw = tree.index_of("right_wrist").unwrap();
    println!(
        "left_wrist  {:.4?}",
        (landmarks.points[lw].x, landmarks.points[lw].y)
    );
    println!(
        "flipped -> right_wrist channel {:.4?}",
        (flipped.points[rw].x, flipped.points[rw].y)
    );
    let round = invert_transform(&flipped, &flip, tree.mirror_map());
    let residual: f64 = round
        .points
        .iter()
        .zip(&landmarks.points)
        .map(|(a, b)| (a - b).norm())
        .sum();
    println!("flip round-trip residual: {residual:.2e}");

    // Losses on the flipped pair.
    let f = FeatureVector(vec![0.25, -1.5, 0.75]);
    println!(
        "paired loss against itself:   {:.4}",
        loss_paired(0.0, &landmarks, &landmarks, &f, &f, 1.0, 1.0).unwrap()
    );
    println!(
        "unpaired loss against flipped: {:.4}",
        loss_unpaired(&landmarks, &flipped, &f, &f, 1.0).unwrap()
    );

    // An image and its flip, answered by an exactly equivariant encoder.
    let mut image = Frame::filled(12, 10, [0, 0, 0]);
    for y in 0..10 {
        for x in 0..12 {
            image.set_pixel(x, y, [(x * 20) as u8, (y * 25) as u8, 3]);
        }
    }
    let flipped_image = transform_image(&image, &flip);
    let equivariant = TableEncoder {
        entries: vec![
            (image.clone(), landmarks.clone()),
            (
                flipped_image.clone(),
                apply_transform(&landmarks, &flip, tree.mirror_map()),
            ),
        ],
    };
    let res =
        unpaired_consistency_residual(&image, &flip, tree.mirror_map(), &equivariant).unwrap();
    let max = res
        .per_joint_pose_residual()
        .into_iter()
        .fold(0.0f64, f64::max);
    println!("\nequivariant encoder: max per-joint residual {max:.2e}");

    // Same encoder with a 0.05 violation on the left elbow.
    let mut broken_pose = apply_transform(&landmarks, &flip, tree.mirror_map());
    broken_pose.points[tree.index_of("left_elbow").unwrap()].x += 0.05;
    let broken = TableEncoder {
        entries: vec![
            (image.clone(), landmarks.clone()),
            (flipped_image, broken_pose),
        ],
    };
    let res = unpaired_consistency_residual(&image, &flip, tree.mirror_map(), &broken).unwrap();
    println!("broken encoder, per-joint residuals:");
    for (j, r) in res.per_joint_pose_residual().iter().enumerate() {
        if *r > 1e-9 {
            println!("  {:>14}: {r:.4}", tree.name(j));
        }
    }
    println!(
        "unpaired loss of the residual: {:.6}",
        res.unpaired_loss(1.0).unwrap()
    );
}
