use nalgebra::DMatrix;
use proptest::prelude::*;
use rsnlab::dualreg::SubjectComponents;
use rsnlab::ica::BrainMask;
use rsnlab::nifti::{NiftiHeader, Volume3D};
use rsnlab::represent::*;

const TABLE_LABELS: [&str; 10] = [
    "DMN-PCC-MID",
    "EXECUTIVE-POSTERIOR-LEFT",
    "ATTENTION-DORSAL-IPS-MID",
    "MOTOR-VENTRAL",
    "VISUAL-LINGUAL-ANTERIOR",
    "SENSORY-DORSAL-HAND-RIGHT",
    "DMN-CINGULATE-MID",
    "SALIENCE-INSULA-POSTERIOR",
    "COGNITIVE-MFG",
    "LANG-BROCA",
];

fn volume(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> Volume3D {
    let h = NiftiHeader::new([dims[0], dims[1], dims[2], 1], [4.0; 3], 2.0);
    let mut data = Vec::with_capacity(h.n_voxels());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                data.push(f(x, y, z));
            }
        }
    }
    Volume3D::new(h, data).unwrap()
}

#[test]
fn table_labels_parse_and_roundtrip() {
    for raw in TABLE_LABELS {
        let l = parse_label(raw).unwrap();
        assert_eq!(l.raw(), raw);
        assert_eq!(l.tokens().join("-"), raw);
    }
    assert_eq!(parse_label("DMN-PCC-MID").unwrap().tokens(), ["DMN", "PCC", "MID"]);
    assert_eq!(parse_label("LANG-BROCA").unwrap().tokens(), ["LANG", "BROCA"]);
    assert_eq!(parse_label("NOISE").unwrap().tokens(), ["NOISE"]);
    assert_eq!(parse_label("DMN-PCC-MID").unwrap().functional_name(), "DMN");
}

#[test]
fn malformed_labels_rejected() {
    assert!(matches!(parse_label(""), Err(RepresentError::EmptyLabel)));
    assert!(matches!(parse_label("DMN--MID"), Err(RepresentError::EmptyToken { position: 1, .. })));
    assert!(matches!(parse_label("A--B"), Err(RepresentError::EmptyToken { .. })));
    assert!(matches!(parse_label("-A"), Err(RepresentError::EmptyToken { position: 0, .. })));
    assert!(matches!(parse_label("A B"), Err(RepresentError::InvalidToken(_))));
}

#[test]
fn label_set_indices_stable_across_save_load() {
    let set = LabelSet::new(TABLE_LABELS.iter().map(|l| parse_label(l).unwrap()));
    assert_eq!(set.len(), 12);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("classes.txt");
    set.save(&p).unwrap();
    let back = LabelSet::load(&p).unwrap();
    assert_eq!(back, set);
    for (i, l) in set.labels().iter().enumerate() {
        assert_eq!(back.index_of(l), Some(i));
    }
}

#[test]
fn paper_grid_projection_shape() {
    let v = volume([45, 54, 45], |x, y, z| ((x * 7 + y * 3 + z) % 11) as f64);
    let img = project_2p5d(&v).unwrap();
    assert_eq!(img.side, 54);
    // axial is 45 wide: columns 0..4 and 49..54 are padding
    for j in 0..54 {
        for i in (0..4).chain(49..54) {
            assert_eq!(img.pixel(0, i, j), 0);
        }
    }
    let p = projections(&v);
    assert_eq!((p[0].width, p[0].height), (45, 54));
    assert_eq!((p[1].width, p[1].height), (54, 45));
    assert_eq!((p[2].width, p[2].height), (45, 45));
}

#[test]
fn zero_volume_gives_zero_channels() {
    let img = project_2p5d(&volume([5, 6, 7], |_, _, _| 0.0)).unwrap();
    assert!(img.channels.iter().all(|c| c.iter().all(|&b| b == 0)));
}

#[test]
fn single_voxel_hand_traced() {
    let (nx, ny, nz) = (9, 12, 6);
    let (x0, y0, z0) = (2, 7, 4);
    let v = volume([nx, ny, nz], |x, y, z| if (x, y, z) == (x0, y0, z0) { 3.5 } else { 0.0 });
    let img = project_2p5d(&v).unwrap();
    let side = 12;
    assert_eq!(img.side, side);
    let off = |n: usize| (side - n) / 2;
    let expected = [
        (x0 + off(nx), y0 + off(ny)),
        (y0 + off(ny), z0 + off(nz)),
        (x0 + off(nx), z0 + off(nz)),
    ];
    for (c, &(i, j)) in expected.iter().enumerate() {
        let hot: Vec<usize> = (0..side * side).filter(|&p| img.channels[c][p] == 255).collect();
        assert_eq!(hot, vec![j * side + i], "channel {c}");
        assert_eq!(img.channels[c].iter().filter(|&&b| b != 0).count(), 1);
    }
}

#[test]
fn png_roundtrip_and_header() {
    let v = volume([45, 54, 45], |x, y, z| ((x * y + z) % 17) as f64 - 4.0);
    let img = project_2p5d(&v).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("map.png");
    export_png(&img, &p).unwrap();
    let (w, h, _) = read_png_rgb(&p).unwrap();
    assert_eq!((w, h), (54, 54));
    assert_eq!(import_png(&p).unwrap().channels, img.channels);

    let zero = project_2p5d(&volume([4, 4, 4], |_, _, _| 0.0)).unwrap();
    export_png(&zero, &p).unwrap();
    let (_, _, buf) = read_png_rgb(&p).unwrap();
    assert!(buf.iter().all(|&b| b == 0));
}

#[test]
fn split_counts() {
    let ids = |n: usize| (0..n).map(|i| format!("sub{i:03}")).collect::<Vec<_>>();
    let spec = SplitSpec::default();
    assert_eq!(split_subjects(&ids(176), &spec).unwrap().sizes(), (123, 17, 36));
    assert_eq!(split_subjects(&ids(10), &spec).unwrap().sizes(), (7, 1, 2));
    assert_eq!(split_subjects(&ids(12), &spec).unwrap().sizes(), (8, 1, 3));
    assert_eq!(split_subjects(&ids(10), &spec).unwrap(), split_subjects(&ids(10), &spec).unwrap());
    assert!(matches!(split_subjects(&ids(2), &spec), Err(RepresentError::TooFewSubjects(2))));
    let bad = SplitSpec { train: 0.8, ..spec };
    assert!(split_subjects(&ids(10), &bad).is_err());
}

fn components(n_subjects: usize, k: usize) -> (Vec<SubjectComponents>, BrainMask) {
    let h = NiftiHeader::new([4, 5, 3, 1], [4.0; 3], 2.0);
    let flags: Vec<bool> = (0..h.n_voxels()).map(|i| i % 3 != 0).collect();
    let mask = BrainMask::from_flags(&h, &flags).unwrap();
    let subjects = (0..n_subjects)
        .map(|s| SubjectComponents {
            subject_id: format!("sub{s:02}"),
            timecourses: DMatrix::zeros(10, k),
            maps: DMatrix::from_fn(k, mask.len(), |r, c| ((r + 1) * (c + s + 1)) as f64 % 7.0),
            grid: h.clone(),
        })
        .collect();
    (subjects, mask)
}

fn labels(k: usize) -> (ComponentLabels, LabelSet) {
    let labels: ComponentLabels = (0..k)
        .map(|c| (c, parse_label(if c < 6 { TABLE_LABELS[c] } else { NOISE }).unwrap()))
        .collect();
    let set = LabelSet::new(labels.values().cloned());
    (labels, set)
}

#[test]
fn dataset_counts_and_feature_length() {
    let (subjects, mask) = components(12, 8);
    let (l, set) = labels(8);
    let ds = build_dataset(&subjects, &mask, &l, &set, FeatureMode::Flat).unwrap();
    assert_eq!(ds.len(), 96);
    assert!(ds.iter().all(|e| e.features.len() == 60));
    let v = ds[5].features.to_vector();
    let mean = v.iter().sum::<f64>() / 60.0;
    assert!(mean.abs() < 1e-12);
    let rgb = build_dataset(&subjects, &mask, &l, &set, FeatureMode::Rgb).unwrap();
    assert!(rgb.iter().all(|e| e.features.len() == 3 * 5 * 5));

    let mut missing = l.clone();
    missing.remove(&3);
    assert!(matches!(
        build_dataset(&subjects, &mask, &missing, &set, FeatureMode::Flat),
        Err(RepresentError::MissingLabel(3))
    ));
}

#[test]
fn split_class_distribution_identical() {
    let (subjects, mask) = components(10, 8);
    let (l, set) = labels(8);
    let ds = build_dataset(&subjects, &mask, &l, &set, FeatureMode::Flat).unwrap();
    let ids: Vec<String> = subjects.iter().map(|s| s.subject_id.clone()).collect();
    let split = split_subjects(&ids, &SplitSpec::default()).unwrap();
    let c = set.len();
    let total = class_counts(&ds, c);
    for part in [&split.train, &split.val, &split.test] {
        let sel = select(&ds, part);
        let counts = class_counts(sel.iter().copied(), c);
        for k in 0..c {
            let f = counts[k] as f64 / sel.len() as f64;
            let g = total[k] as f64 / ds.len() as f64;
            assert_eq!(f, g);
        }
    }
}

#[test]
fn dataset_file_roundtrip() {
    let (subjects, mask) = components(3, 2);
    let (l, set) = labels(2);
    let ds = build_dataset(&subjects, &mask, &l, &set, FeatureMode::Flat).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ds.bin");
    write_dataset(&p, &ds).unwrap();
    assert_eq!(read_dataset(&p).unwrap(), ds);
}

fn int_volume() -> impl Strategy<Value = (usize, usize, usize, Vec<i32>)> {
    (1usize..7, 1usize..7, 1usize..7).prop_flat_map(|(a, b, c)| {
        (Just(a), Just(b), Just(c), proptest::collection::vec(-50i32..50, a * b * c))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_invariant_and_sum_preserving((nx, ny, nz, vals) in int_volume(), shift in -1000i32..1000) {
        let v = volume([nx, ny, nz], |x, y, z| vals[x + nx * (y + ny * z)] as f64);
        let w = volume([nx, ny, nz], |x, y, z| (vals[x + nx * (y + ny * z)] + shift) as f64);
        let a = project_2p5d(&v).unwrap();
        let b = project_2p5d(&w).unwrap();
        prop_assert_eq!(&a.channels, &b.channels);
        prop_assert_eq!(&a, &project_2p5d(&v).unwrap());
        let total: f64 = v.data.iter().sum();
        let p = projections(&v);
        for proj in &p {
            prop_assert_eq!(proj.values.iter().sum::<f64>(), total);
        }
    }

    #[test]
    fn parse_join_roundtrip(tokens in proptest::collection::vec("[A-Z0-9]{1,8}", 1..6)) {
        let raw = tokens.join("-");
        let l = parse_label(&raw).unwrap();
        prop_assert_eq!(l.tokens(), &tokens[..]);
        prop_assert_eq!(l.raw(), raw);
    }
}
