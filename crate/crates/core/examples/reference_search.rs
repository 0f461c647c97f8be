//! Builds a reference database and searches it with increasing randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trackquery::corpus::synthetic_band;
use trackquery::instrument::InstrumentTable;
use trackquery::rearrange::{search_piece, search_reference, ReferenceDb};

fn main() -> trackquery::Result<()> {
    let table = InstrumentTable::standard();
    let pieces = synthetic_band(8, 4, 41, &table);
    let db = ReferenceDb::from_pieces(&pieces);
    println!("{} entries from {} pieces", db.len(), pieces.len());

    let source = &pieces[3].1[1];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for alpha in [0.0, 0.2, 1.0, 10.0] {
        let hits: Vec<String> = (0..5)
            .map(|_| search_reference(source, &db, alpha, &mut rng).map(|i| format!("{}#{}", db.entries[i].piece, db.entries[i].index)))
            .collect::<trackquery::Result<_>>()?;
        println!("alpha {alpha:>4}: {}", hits.join(" "));
    }
    let piece = search_piece(&pieces[5].1, &db, 0.0, &mut rng)?;
    println!("whole-piece search for {}: {}", pieces[5].0, db.pieces()[piece].0);
    Ok(())
}
