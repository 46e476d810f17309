use nalgebra::DMatrix;
use proptest::prelude::*;
use rsnlab::eval::*;
use rsnlab::nn::{mlp_init_with, Samples};

fn names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("C{i}")).collect()
}

#[test]
fn perfect_predictor() {
    let truth: Vec<usize> = (0..96).map(|i| i % 7).collect();
    let r = metrics(&truth, &truth, &names(7)).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.n_examples, 96);
    for i in 0..7 {
        for j in 0..7 {
            if i != j {
                assert_eq!(r.confusion[i][j], 0);
            }
        }
    }
    assert!(r.per_class.iter().all(|m| m.f1 == 1.0));
}

#[test]
fn constant_predictor_balanced() {
    let truth: Vec<usize> = (0..50).map(|i| i % 2).collect();
    let r = metrics(&vec![0; 50], &truth, &names(2)).unwrap();
    assert_eq!(r.accuracy, 0.5);
    assert!(r.per_class[1].precision_undefined);
    assert_eq!(r.per_class[1].precision, 0.0);
    assert_eq!(r.per_class[0].recall, 1.0);
    assert_eq!(r.per_class[0].precision, 0.5);
}

#[test]
fn absent_class_flags_recall() {
    let r = metrics(&[0, 1, 0], &[0, 1, 1], &names(3)).unwrap();
    assert!(r.per_class[2].recall_undefined);
    assert!(r.per_class[2].precision_undefined);
    assert!((r.per_class[1].recall - 0.5).abs() < 1e-15);
}

#[test]
fn mismatched_lengths_rejected() {
    assert!(matches!(metrics(&[0], &[0, 1], &names(2)), Err(EvalError::Mismatch(_))));
    assert!(matches!(metrics(&[], &[], &names(2)), Err(EvalError::Empty)));
}

#[test]
fn evaluate_zero_model_predicts_class_zero() {
    let mut m = mlp_init_with(&[3, 7, 7, 7, 2], 1);
    m.weights.iter_mut().for_each(|w| w.fill(0.0));
    let s = Samples::new(DMatrix::from_element(3, 10, 0.5), (0..10).map(|i| i % 2).collect());
    let r = evaluate(&m, &s, &names(2)).unwrap();
    assert_eq!(r.accuracy, 0.5);
    assert_eq!(r.confusion, vec![vec![5, 0], vec![5, 0]]);
    assert!(r.inference_duration_s >= 0.0);
    assert!(evaluate(&m, &s, &names(3)).is_err());
}

#[test]
fn emitted_files_parse_back() {
    let truth = [0, 1, 2, 2, 1, 0, 0];
    let pred = [0, 2, 2, 2, 1, 1, 0];
    let mut r = metrics(&pred, &truth, &names(3)).unwrap();
    r.inference_duration_s = 0.123456789;
    r.train_duration_s = Some(1.0 / 3.0);
    r.train_accuracy = Some(0.998);
    let dir = tempfile::tempdir().unwrap();
    let paths = report_emit(&r, &dir.path().join("test_report")).unwrap();
    let back = read_report(&paths[0]).unwrap();
    assert_eq!(back, r);
    assert_eq!(back.accuracy, r.accuracy);
    let csv = std::fs::read_to_string(&paths[1]).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    // independent recomputation of accuracy from the CSV
    let mut diag = 0;
    let mut total = 0;
    for (i, row) in rows[1..].iter().enumerate() {
        for (j, v) in row.split(',').skip(1).enumerate() {
            let v: usize = v.parse().unwrap();
            total += v;
            if i == j {
                diag += v;
            }
        }
    }
    assert_eq!(diag as f64 / total as f64, r.accuracy);
    // emission is deterministic
    let again = report_emit(&r, &dir.path().join("again")).unwrap();
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&again[0]).unwrap());
}

#[test]
fn summary_row_format() {
    let truth: Vec<usize> = (0..10).map(|i| i % 2).collect();
    let mut r = metrics(&truth, &truth, &names(2)).unwrap();
    r.train_accuracy = Some(0.998);
    r.train_duration_s = Some(300.0);
    r.inference_duration_s = 1.9;
    assert_eq!(summary_row("MLP", &r), "MLP | 99.8% | 100.0% | 300.00 s | 1.90 s");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_invariant_and_micro_recall(
        pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..80),
        rot in 0usize..80,
    ) {
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let a = metrics(&pred, &truth, &names(5)).unwrap();
        let k = rot % pairs.len();
        let mut p2 = pred.clone();
        let mut t2 = truth.clone();
        p2.rotate_left(k);
        t2.rotate_left(k);
        let b = metrics(&p2, &t2, &names(5)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.micro_recall(), a.accuracy);
        let total: usize = a.confusion.iter().flatten().sum();
        prop_assert_eq!(total, a.n_examples);
    }
}
