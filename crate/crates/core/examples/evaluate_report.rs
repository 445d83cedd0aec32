//! Score predictions and write the JSON, CSV and SVG report renderings.

use std::collections::BTreeMap;

use hiertext::eval::{emit_report, read_report, EvalReport, ReportFormat, RunMeta};
use hiertext::text::{LabelSchema, Subtask};
use hiertext::SeedRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = LabelSchema::default();
    let subtask = Subtask::B;
    let mut rng = SeedRng::new(2);
    let golds: Vec<usize> = (0..200).map(|_| rng.below(4)).collect();
    // A noisy predictor that is right about 70% of the time.
    let preds: Vec<usize> = golds.iter().map(|&g| if rng.uniform() < 0.7 { g } else { rng.below(4) }).collect();

    let meta = RunMeta {
        config: BTreeMap::from([("source".to_string(), "example".to_string())]),
        seed: 2,
        checkpoint: None,
    };
    let report = EvalReport::from_predictions(subtask, &preds, &golds, schema.labels(subtask), meta)?;
    let dir = std::env::temp_dir().join("hiertext-report-example");
    std::fs::create_dir_all(&dir)?;
    for p in emit_report(&report, &dir, &ReportFormat::ALL)? {
        println!("wrote {}", p.display());
    }
    let back = read_report(&dir.join("report.json"))?;
    println!("macro-F1 {:.3}, accuracy {:.3}", back.macro_f1, back.accuracy);
    for c in &back.per_class {
        println!("  {:<40} P {:.3} R {:.3} F1 {:.3} n={}", c.label, c.precision, c.recall, c.f1, c.support);
    }
    Ok(())
}
