mod common;

use std::io::Write;
use std::path::Path;

use common::*;
use diagsearch::corpus::Binarize;
use diagsearch::*;

fn write_png(path: &Path, img: &Raster) {
    std::fs::write(path, img.to_png_bytes()).unwrap();
}

fn opts(res: usize) -> IngestOptions {
    IngestOptions {
        resolution: (res, res),
        resize: true,
        binarize: Binarize::Auto,
    }
}

#[test]
fn manifest_loads_in_file_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for (i, id) in ["zeta", "alpha", "mid"].iter().enumerate() {
        let img = Raster::from_fn(16, 16, |y, _| if y > i * 4 { 1.0 } else { 0.0 });
        write_png(&dir.path().join(format!("{id}.png")), &img);
        lines.push_str(&format!("{{\"id\":\"{id}\",\"path\":\"{id}.png\",\"class_label\":\"c{i}\"}}\n"));
    }
    let manifest = dir.path().join("m.jsonl");
    std::fs::write(&manifest, lines).unwrap();
    let a = load_manifest(&manifest, &opts(8)).unwrap();
    assert_eq!(a.ids(), vec!["zeta", "alpha", "mid"]);
    assert_eq!(a.resolution(), (8, 8));
    assert_eq!(a.records()[1].class_label.as_deref(), Some("c1"));
    assert!(a.records().iter().all(|r| r.pixels.is_binary()));
    // reload determinism
    assert_eq!(a, load_manifest(&manifest, &opts(8)).unwrap());
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_png(&dir.path().join("a.png"), &Raster::filled(4, 4, 1.0));
    let dup = dir.path().join("dup.jsonl");
    std::fs::write(&dup, "{\"id\":\"a\",\"path\":\"a.png\"}\n{\"id\":\"a\",\"path\":\"a.png\"}\n").unwrap();
    assert!(matches!(load_manifest(&dup, &opts(4)), Err(Error::DuplicateId(id)) if id == "a"));

    let missing = dir.path().join("missing.jsonl");
    std::fs::write(&missing, "{\"id\":\"ghost\",\"path\":\"ghost.png\"}\n").unwrap();
    let err = load_manifest(&missing, &opts(4)).unwrap_err();
    assert!(err.to_string().contains("ghost"), "{err}");

    assert!(matches!(
        load_manifest(&dir.path().join("nope.jsonl"), &opts(4)),
        Err(Error::MissingFile(_))
    ));

    let fixed = IngestOptions {
        resize: false,
        ..opts(8)
    };
    let ok = dir.path().join("ok.jsonl");
    std::fs::write(&ok, "{\"id\":\"a\",\"path\":\"a.png\"}\n").unwrap();
    assert!(load_manifest(&ok, &fixed).is_err());
}

fn idx_images(count: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    b.extend_from_slice(&count.to_be_bytes());
    b.extend_from_slice(&2u32.to_be_bytes());
    b.extend_from_slice(&2u32.to_be_bytes());
    b.extend_from_slice(pixels);
    b
}

fn idx_labels(magic: u32, labels: &[u8]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
    p
}

#[test]
fn idx_hand_built() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = write(dir.path(), "i", &idx_images(2, &[0, 255, 51, 102, 255, 255, 0, 0]));
    let labs = write(dir.path(), "l", &idx_labels(0x801, &[0, 1]));
    let c = load_idx(&imgs, &labs).unwrap();
    assert_eq!(c.len(), 2);
    let r = &c.records()[0];
    assert_eq!(r.class_label.as_deref(), Some("0"));
    assert_eq!(c.records()[1].class_label.as_deref(), Some("1"));
    assert_eq!(r.pixels.data(), &[0.0, 1.0, 0.2, 0.4]);

    let bad = write(dir.path(), "bad", &idx_labels(0x803, &[0, 1]));
    assert!(matches!(load_idx(&imgs, &bad), Err(Error::BadMagic { .. })));
    let three = write(dir.path(), "three", &idx_images(3, &[0; 12]));
    assert!(matches!(load_idx(&three, &labs), Err(Error::CountMismatch { .. })));
    let short = write(dir.path(), "short", &idx_images(2, &[0; 5]));
    assert!(matches!(load_idx(&short, &labs), Err(Error::Truncated { .. })));
}

#[test]
fn similarity_matrix_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = random_corpus(2, 4, 4, 2, 0, true);
    let ids = corpus.ids();
    let write_csv = |name: &str, cells: [[f64; 2]; 2]| {
        let body = format!(
            ",{a},{b}\n{a},{},{}\n{b},{},{}\n",
            cells[0][0],
            cells[0][1],
            cells[1][0],
            cells[1][1],
            a = ids[0],
            b = ids[1]
        );
        write(dir.path(), name, body.as_bytes())
    };
    let ok = load_similarity_matrix(&write_csv("ok.csv", [[5.0, 3.0], [3.0, 5.0]]), &corpus).unwrap();
    assert_eq!(ok.score(&ids[0], &ids[1]).unwrap(), 3.0);
    assert!(matches!(
        load_similarity_matrix(&write_csv("hi.csv", [[5.0, 6.0], [6.0, 5.0]]), &corpus),
        Err(Error::ScoreOutOfRange { .. })
    ));
    assert!(matches!(
        load_similarity_matrix(&write_csv("asym.csv", [[5.0, 3.0], [1.0, 5.0]]), &corpus),
        Err(Error::Asymmetric { .. })
    ));
    let stranger = write(dir.path(), "x.csv", format!(",{a},zz\n{a},5,3\nzz,3,5\n", a = ids[0]).as_bytes());
    assert!(matches!(load_similarity_matrix(&stranger, &corpus), Err(Error::UnknownId(id)) if id == "zz"));
}

#[test]
fn corpus_round_trips_through_manifest() {
    let corpus = random_corpus(6, 8, 8, 3, 5, true);
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus.write_to_dir(dir.path()).unwrap();
    let back = load_manifest(&manifest, &opts(8)).unwrap();
    assert_eq!(back, corpus);
}
