//! Mean pairwise IoU and Dice between three annotators on two images.
//!
//! ```text
//! cargo run --example interrater_agreement
//! ```

use segfair::metrics::{self, Annotation};
use segfair::LabelMask;

fn square(size: usize, x0: usize, y0: usize, side: usize) -> segfair::Result<LabelMask> {
    let mut data = vec![0u8; size * size];
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            data[y * size + x] = 1;
        }
    }
    Ok(LabelMask::new(size, size, data)?)
}

fn main() -> segfair::Result<()> {
    let mut annotations = Vec::new();
    for (annotator, shift) in [("ann_a", 0), ("ann_b", 1), ("ann_c", 2)] {
        for image in ["knee01", "knee02"] {
            annotations.push(Annotation {
                annotator: annotator.into(),
                image: image.into(),
                mask: square(16, 4 + shift, 4, 8)?,
            });
        }
    }
    let agreement = metrics::pairwise_agreement(&annotations)?;
    println!(
        "{} annotators, {} images, {} comparisons",
        agreement.annotators, agreement.images, agreement.cells
    );
    println!("IoU {:.3}, Dice {:.3}", agreement.mean_iou, agreement.mean_dice);
    Ok(())
}
