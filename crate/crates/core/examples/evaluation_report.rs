//! Per-class metrics, confusion matrix and a results-table row from a set
//! of predictions.
//!
//!     cargo run --example evaluation_report

use rsnlab::eval::{confusion_csv, metrics, summary_row};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labels: Vec<String> = ["DMN-PCC-MID", "MOTOR-VENTRAL", "LANG-BROCA", "NOISE"].map(String::from).to_vec();
    let truth = [0, 0, 0, 1, 1, 2, 2, 2, 3, 3, 3, 3];
    let predicted = [0, 0, 3, 1, 1, 2, 2, 1, 3, 3, 3, 0];
    let mut report = metrics(&predicted, &truth, &labels)?;
    report.train_accuracy = Some(0.998);
    report.train_duration_s = Some(300.0);
    report.inference_duration_s = 1.9;

    println!("accuracy {:.3} on {} examples", report.accuracy, report.n_examples);
    for m in &report.per_class {
        println!(
            "{:<14} support {} precision {:.3} recall {:.3}",
            m.label, m.support, m.precision, m.recall
        );
    }
    print!("{}", confusion_csv(&report));
    println!("{}", summary_row("MLP", &report));
    Ok(())
}
