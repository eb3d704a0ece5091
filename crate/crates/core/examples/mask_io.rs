//! Write a label mask as PNG and PGM, read both back, and score a
//! prediction against it.
//!
//! ```text
//! cargo run --example mask_io
//! ```

use segfair::ingest::{self, MaskFormat};
use segfair::{classes_present, mask_scores, AuditConfig, ClassLabel, LabelMask};

fn main() -> segfair::Result<()> {
    let dir = std::env::temp_dir().join("segfair-mask-io");
    std::fs::create_dir_all(&dir).map_err(|e| segfair::Error::Other(e.to_string()))?;

    // 8x8: class 1 in the top-left quadrant, class 2 in the bottom-right.
    let mut gt = vec![0u8; 64];
    let mut pred = vec![0u8; 64];
    for y in 0..8 {
        for x in 0..8 {
            let i = y * 8 + x;
            if x < 4 && y < 4 {
                gt[i] = 1;
            }
            if x >= 4 && y >= 4 {
                gt[i] = 2;
            }
            // The prediction shifts class 1 one column right.
            if (1..5).contains(&x) && y < 4 {
                pred[i] = 1;
            }
            if x >= 4 && y >= 4 {
                pred[i] = 2;
            }
        }
    }
    let gt = LabelMask::new(8, 8, gt)?;
    let pred = LabelMask::new(8, 8, pred)?;

    for format in [MaskFormat::Png, MaskFormat::Pgm] {
        let path = dir.join(format!("gt.{}", format.extension()));
        ingest::write_mask(&path, &gt, format)?;
        let back = ingest::load_mask(&path)?;
        assert_eq!(back, gt);
        println!("{}: round trip ok", path.display());
    }

    let present: Vec<&str> = classes_present(&gt).iter().map(|c| c.name()).collect();
    println!("classes present: {}", present.join(", "));

    let scores = mask_scores(&gt, &pred, &AuditConfig::default())?;
    for class in ClassLabel::FOREGROUND {
        match (scores.iou(class), scores.dice(class)) {
            (Some(iou), Some(dice)) => println!("{:<14} IoU {iou:.3}  Dice {dice:.3}", class.name()),
            _ => println!("{:<14} absent", class.name()),
        }
    }
    println!("mean IoU {:.3}, mean Dice {:.3}", scores.mean_iou, scores.mean_dice);
    Ok(())
}
