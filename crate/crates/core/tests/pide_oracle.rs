//! The contrastive loss against a direct evaluation of its definition.

mod common;

use common::{pide_sweep, supcon_oracle};
use prodisc_core::diffcore::RealArray;
use prodisc_core::losses::{pide_loss, ExtremeSelection, PseudoLabel, Selected};

fn selection(entries: &[(usize, usize, PseudoLabel)]) -> ExtremeSelection {
    ExtremeSelection {
        entries: entries
            .iter()
            .map(|&(bag, index, label)| Selected { bag, index, label })
            .collect(),
    }
}

#[test]
fn matches_direct_evaluation_on_random_batches() {
    let worst = pide_sweep(150, 7);
    assert!(worst <= 1e-5, "max deviation {worst}");
}

#[test]
fn two_bag_example_frozen_value() {
    // Bag 0 contributes z1 (+1) and z3 (-1), bag 1 contributes z2 (+1) and z4 (-1).
    let z = [[1.0, 0.0, 0.0], [0.8, 0.6, 0.0], [0.0, 0.0, 1.0], [0.0, 0.6, 0.8]];
    let feats = RealArray::<f64>::from_fn(&[2, 2, 3], |i| {
        let (bag, pos, c) = (i / 6, (i / 3) % 2, i % 3);
        let row = match (bag, pos) {
            (0, 0) => 0,
            (0, 1) => 2,
            (1, 0) => 1,
            _ => 3,
        };
        z[row][c]
    });
    use PseudoLabel::*;
    let sel = selection(&[(0, 0, Anomalous), (0, 1, Normal), (1, 0, Anomalous), (1, 1, Normal)]);
    let got = pide_loss(&feats, &sel, 0.1).unwrap().value;
    let oracle = supcon_oracle(
        &z.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        &[1, 1, -1, -1],
        0.1,
    );
    assert!((got - 0.006602311976564916).abs() < 1e-12, "{got}");
    assert!((got - oracle).abs() < 1e-12);
}

#[test]
fn tighter_classes_give_lower_loss() {
    use PseudoLabel::*;
    let sel = selection(&[(0, 0, Anomalous), (0, 1, Normal), (1, 0, Anomalous), (1, 1, Normal)]);
    let loss_for = |spread: f64| {
        let rows = [[1.0, spread], [-1.0, spread], [1.0, -spread], [-1.0, -spread]];
        let feats = RealArray::<f64>::from_fn(&[2, 2, 2], |i| {
            let (bag, pos, c) = (i / 4, (i / 2) % 2, i % 2);
            rows[bag * 2 + pos][c]
        });
        pide_loss(&feats, &sel, 0.1).unwrap().value
    };
    assert!(loss_for(0.1) < loss_for(0.5));
    assert!(loss_for(0.5) < loss_for(2.0));
}

#[test]
fn single_class_selection_is_handled() {
    use PseudoLabel::*;
    let feats = RealArray::<f64>::from_fn(&[2, 1, 3], |i| i as f64 + 1.0);
    // Two anchors with one positive each and no negatives.
    let sel = selection(&[(0, 0, Anomalous), (1, 0, Anomalous)]);
    let got = pide_loss(&feats, &sel, 0.1).unwrap().value;
    let oracle = supcon_oracle(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], &[1, 1], 0.1);
    assert!((got - oracle).abs() < 1e-12);
    assert!(got.abs() < 1e-6);
}
