//! Boxes, IoU and the adaptive shrink that drives every episode.

use shrinkground::geometry::{iou, shrink, spatial_feature, BBox, ImageFrame, Side};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frame = ImageFrame::new(100.0, 100.0)?;
    let target = BBox::new(55.0, 20.0, 85.0, 60.0)?;
    let mut patch = frame.full_box();

    println!("target {:?}", target.to_array());
    println!("{:>3} {:<7} {:>28} {:>6}", "k", "side", "patch", "iou");
    println!("{:>3} {:<7} {:>28} {:>6.3}", 0, "-", fmt(&patch), iou(&patch, &target));
    // walk the patch towards the target, always cutting the side with the most slack
    for k in 1..=10 {
        let slack = [
            (Side::Top, target.y_tl() - patch.y_tl()),
            (Side::Bottom, patch.y_br() - target.y_br()),
            (Side::Left, target.x_tl() - patch.x_tl()),
            (Side::Right, patch.x_br() - target.x_br()),
        ];
        let (side, _) = slack.iter().copied().fold(slack[0], |a, b| if b.1 > a.1 { b } else { a });
        patch = shrink(&patch, side, 0.2)?;
        println!("{k:>3} {:<7} {:>28} {:>6.3}", format!("{side:?}"), fmt(&patch), iou(&patch, &target));
    }

    let f = spatial_feature(&patch, &frame)?;
    println!("spatial feature of the final patch: {:?}", f.as_slice());
    Ok(())
}

fn fmt(b: &BBox) -> String {
    let [a, c, d, e] = b.to_array();
    format!("[{a:5.1} {c:5.1} {d:5.1} {e:5.1}]")
}
