//! The command-line workflow: synth, fit and eval on a small stack.

use sli_fodf::harness::cli;
use sli_fodf::harness::io::read_eval_csv;

fn main() {
    let dir = std::env::temp_dir().join(format!("slifodf-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let (stack, fodfs, table) = (path("stack.slip"), path("fit.fodf"), path("eval.csv"));

    for args in [
        vec!["slifodf", "synth", "--count", "8", "--seed", "2", "--out", &stack],
        vec!["slifodf", "fit", "--input", &stack, "--out", &fodfs],
        vec!["slifodf", "eval", "--estimate", &fodfs, "--truth", &stack, "--csv", &table],
    ] {
        let code = cli::run(args.clone());
        println!("{} -> exit {code}", args[1]);
        assert_eq!(code, 0);
    }
    for row in read_eval_csv(table.as_ref()).expect("eval table") {
        println!("pattern {}: ACC {:.3}, JSD {:.3}, angle {:.2} deg", row.index, row.acc, row.jsd, row.angular_error_deg);
    }
    let _ = std::fs::remove_dir_all(&dir);
}
