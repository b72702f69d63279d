use std::fs;
use std::path::Path;

use csafm::data::{encode_pgm, ingest_dir, read_pgm, write_pgm, GrayImage};
use csafm::Error;

fn img(h: usize, w: usize, v: u8) -> GrayImage {
    GrayImage { height: h, width: w, pixels: vec![v; h * w] }
}

fn layout(root: &Path, classes: &[&str], names: &[&str]) {
    for (k, class) in classes.iter().enumerate() {
        for m in ["fp", "fv"] {
            let dir = root.join(class).join(m);
            fs::create_dir_all(&dir).unwrap();
            for (i, n) in names.iter().enumerate() {
                let (h, w) = if m == "fp" { (6, 5) } else { (4, 7) };
                write_pgm(dir.join(n), &img(h, w, (40 * k + 10 * i) as u8)).unwrap();
            }
        }
    }
}

#[test]
fn two_classes_two_pairs() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path(), &["alice", "bob"], &["a.pgm", "b.pgm"]);
    let d = ingest_dir(dir.path()).unwrap();
    assert_eq!(d.samples.len(), 4);
    assert_eq!(d.labels(), vec![0, 0, 1, 1]);
    assert_eq!(d.class_names, vec!["alice", "bob"]);
    assert_eq!((d.fp_size(), d.fv_size()), ([6, 5], [4, 7]));
    // pairs follow sorted file names
    assert_eq!(d.samples[1].fp.data()[0], 10.0 / 255.0);
    assert_eq!(d.samples[3].fv.data()[0], 50.0 / 255.0);
}

#[test]
fn white_image_loads_as_ones() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("white.pgm");
    write_pgm(&p, &img(3, 4, 255)).unwrap();
    let t = csafm::data::preprocess(&read_pgm(&p).unwrap()).unwrap();
    assert!(t.data().iter().all(|&v| v == 1.0));
    assert_eq!(fs::read(&p).unwrap(), encode_pgm(&img(3, 4, 255)));
}

#[test]
fn fingerprint_without_vein_twin() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path(), &["c0"], &["a.pgm", "b.pgm"]);
    write_pgm(dir.path().join("c0/fp/zz.pgm"), &img(6, 5, 1)).unwrap();
    match ingest_dir(dir.path()) {
        Err(e @ Error::Unpaired { .. }) => assert!(e.to_string().contains("zz.pgm"), "{e}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn located_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path(), &["c0"], &["a.pgm"]);
    let target = dir.path().join("c0/fv/a.pgm");

    fs::write(&target, b"P2\n7 4\n255\n").unwrap();
    let e = ingest_dir(dir.path()).unwrap_err();
    assert!(matches!(e, Error::NotP5 { .. }) && e.to_string().contains("c0/fv/a.pgm"), "{e}");

    let mut bytes = b"P5\n7 4\n1023\n".to_vec();
    bytes.extend(vec![0u8; 56]);
    fs::write(&target, bytes).unwrap();
    let e = ingest_dir(dir.path()).unwrap_err();
    assert!(matches!(e, Error::MaxVal { maxval: 1023, .. }) && e.to_string().contains("a.pgm"), "{e}");

    fs::create_dir_all(dir.path().join("c1/fp")).unwrap();
    write_pgm(&target, &img(4, 7, 0)).unwrap();
    let e = ingest_dir(dir.path()).unwrap_err();
    assert!(matches!(e, Error::EmptyClass { .. }) && e.to_string().contains("c1"), "{e}");
}

#[test]
fn mixed_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path(), &["c0"], &["a.pgm", "b.pgm"]);
    write_pgm(dir.path().join("c0/fp/b.pgm"), &img(5, 5, 0)).unwrap();
    assert!(matches!(ingest_dir(dir.path()), Err(Error::InconsistentSize { .. })));
}
