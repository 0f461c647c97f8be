//! Splits a chorale mixture into four voices with the greedy assignment,
//! using the true voices as anchors, then with a model's inferred voices.
//!
//! ```text
//! cargo run --release --example voice_separation -- [voicesep.ckpt]
//! ```

use std::path::Path;

use trackquery::corpus::synthetic_chorales;
use trackquery::instrument::InstrumentTable;
use trackquery::score::condense_mixture;
use trackquery::training::load_checkpoint;
use trackquery::voicesep::{
    accuracy, assign_mixture_notes, entry_hints, score_assignment, separate_voices, true_voices, voice_order,
};

fn main() -> trackquery::Result<()> {
    let table = InstrumentTable::standard();
    let seg = voice_order(&synthetic_chorales(1, 2, 51, &table).remove(0).1.remove(0));
    let notes = condense_mixture(&seg).notes();
    let anchors: Vec<_> = seg.tracks.iter().map(|t| t.grid.notes()).collect();
    let truth = true_voices(&seg, &notes);

    let a = assign_mixture_notes(&notes, &anchors);
    let (c, t) = score_assignment(&truth, &a.voices);
    println!("oracle anchors: {:.1}% of {t} notes, {} residual conflicts", accuracy(c, t), a.residual_conflicts);

    let Some(path) = std::env::args().nth(1) else {
        println!("pass a voicesep checkpoint to run the inferred separation");
        return Ok(());
    };
    let model = load_checkpoint(Path::new(&path), &table)?.model;
    let hints = entry_hints(&seg.tracks);
    for h in [None, Some(hints.as_slice())] {
        let sep = separate_voices(&model, &seg, h, seg.tracks[0].instrument)?;
        let (c, t) = score_assignment(&true_voices(&seg, &sep.notes), &sep.assignment.voices);
        println!("model, hints {}: {:.1}%", h.is_some(), accuracy(c, t));
    }
    Ok(())
}
