//! Parse filter expressions against a table schema; errors carry a position.

use slicelens::model::parse_predicate;
use slicelens::table::{ingest::ingest_delimited, IngestOptions};

const CSV: &str = "\
id,transcript,speaker_age,gender,recorded_at,noisy
a1,turn left,34,female,2023-03-01,false
a2,call mom,61,male,2023-05-12,true
a3,play music,25,nonbinary,2023-07-30,false
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = ingest_delimited(CSV.as_bytes(), b',', &IngestOptions::new("id").label("transcript"))?;
    let schema = table.schema();
    for text in [
        "speaker_age >= 30 && noisy == false",
        "gender in [\"female\", \"nonbinary\"] || recorded_at < 2023-06-01",
        "18 < speaker_age < 40",
        "transcript matches \"mom\"",
        "transcript =~ \"^(turn|play) \"",
        "speaker_age > > 3",
        "height > 180",
    ] {
        match parse_predicate(text, &schema) {
            Ok(p) => println!("{text}\n  => {}\n", serde_json::to_string(&p)?),
            Err(e) => {
                let at = e.position().map_or(String::new(), |p| format!("{}^ ", " ".repeat(p)));
                println!("{text}\n{at}error: {e}\n");
            }
        }
    }
    Ok(())
}
