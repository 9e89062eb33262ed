use std::collections::HashSet;
use std::path::Path;

use kansam::data::{
    generate_sample, load_manifest, make_benchmark, quantized, read_pgm, read_ppm, write_dataset, write_pgm, write_ppm,
    Regime, Split,
};
use kansam::{Error, Tensor};

fn sample() -> kansam::data::RgbtSample {
    generate_sample(&Regime::RgbEasy.scene(32, 1), 0).unwrap()
}

#[test]
fn images_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let s = sample();
    let (p_rgb, p_t, p_gt) = (dir.path().join("a.ppm"), dir.path().join("t.pgm"), dir.path().join("g.pgm"));
    write_ppm(&p_rgb, &s.rgb).unwrap();
    write_pgm(&p_t, &s.thermal).unwrap();
    write_pgm(&p_gt, &s.gt).unwrap();
    assert!(read_ppm(&p_rgb).unwrap().max_abs_diff(&s.rgb) <= 1.0 / 510.0 + 1e-15);
    let t = read_pgm(&p_t).unwrap();
    assert!(t.reshape(&[32, 32, 1]).unwrap().max_abs_diff(&s.thermal) <= 1.0 / 510.0 + 1e-15);
    assert_eq!(read_pgm(&p_gt).unwrap(), s.gt);

    let bytes = std::fs::read(&p_gt).unwrap();
    assert!(bytes.starts_with(b"P5"));
    assert!(bytes.iter().skip(bytes.len() - 32 * 32).all(|&b| b == 0 || b == 255));
    assert!(std::fs::read(&p_rgb).unwrap().starts_with(b"P6"));
}

#[test]
fn quantization_rounds_half_away_from_zero() {
    assert_eq!(kansam::data::quantize(0.5 / 255.0), 1);
    assert_eq!(kansam::data::quantize(1.5 / 255.0), 2);
    assert_eq!(kansam::data::quantize(-0.3), 0);
    assert_eq!(kansam::data::quantize(1.7), 255);
}

#[test]
fn malformed_images_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.pgm");
    std::fs::write(&p, b"P5\n4 x\n255\n").unwrap();
    assert!(matches!(read_pgm(&p), Err(Error::Format { .. })));
    std::fs::write(&p, b"P5\n2 2\n255\n\x00").unwrap();
    assert!(matches!(read_pgm(&p), Err(Error::Format { .. })));
    let rgb = dir.path().join("rgb.ppm");
    write_ppm(&rgb, &Tensor::zeros(&[2, 2, 3])).unwrap();
    assert!(matches!(read_pgm(&rgb), Err(Error::Format { .. })));
    assert!(matches!(read_ppm(&dir.path().join("missing.ppm")), Err(Error::Io { .. })));
}

#[test]
fn dataset_split_counts_disjointness_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let scene = Regime::ThermalInformative.scene(32, 7);
    let (train, test) = write_dataset(dir.path(), &scene, Some(Regime::ThermalInformative), 16, 8).unwrap();
    assert_eq!((train.len(), test.len()), (16, 8));
    let a: HashSet<_> = train.ids().into_iter().collect();
    assert!(test.ids().iter().all(|id| !a.contains(id)));
    assert!(train.rows.iter().all(|r| r.split == Split::Train));
    assert!(test.rows.iter().all(|r| r.split == Split::Test));

    let loaded = load_manifest(&dir.path().join("train.manifest")).unwrap();
    assert_eq!(loaded.regime, Some(Regime::ThermalInformative));
    assert_eq!(loaded.scene, scene);
    let samples = loaded.load_samples().unwrap();
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s, &quantized(&generate_sample(&scene, i).unwrap()));
    }
    let files = std::fs::read_dir(dir.path().join("images")).unwrap().count();
    assert_eq!(files, 24 * 3);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

#[test]
fn benchmark_regeneration_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = make_benchmark(a.path(), 32, 4, 2, 3).unwrap();
    make_benchmark(b.path(), 32, 4, 2, 3).unwrap();
    assert_eq!(ma.len(), 2);
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
    // rewriting in place changes nothing
    let before = snapshot(a.path());
    make_benchmark(a.path(), 32, 4, 2, 3).unwrap();
    assert_eq!(before, snapshot(a.path()));
}

#[test]
fn manifest_errors_name_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let scene = Regime::RgbEasy.scene(16, 2);
    write_dataset(dir.path(), &scene, None, 3, 1).unwrap();
    std::fs::remove_file(dir.path().join("images/s00001_thermal.pgm")).unwrap();
    let m = load_manifest(&dir.path().join("train.manifest")).unwrap();
    let err = m.load_samples().unwrap_err().to_string();
    assert!(err.contains("s00001"), "{err}");

    // image size disagreeing with the manifest's scene
    write_pgm(&dir.path().join("images/s00001_thermal.pgm"), &Tensor::zeros(&[8, 8])).unwrap();
    let err = m.load_samples().unwrap_err().to_string();
    assert!(err.contains("s00001") && err.contains("16x16"), "{err}");

    for (name, text) in [
        ("no-magic", "hello\n"),
        ("version", "kan-sam-manifest 9\n"),
        ("no-scene", "kan-sam-manifest 1\nid\tsplit\trgb\tthermal\tgt\n"),
        ("columns", "kan-sam-manifest 1\nscene {}\nid\tsplit\trgb\tthermal\tgt\na\ttrain\tx\n"),
        ("split", "kan-sam-manifest 1\nscene {}\nid\tsplit\trgb\tthermal\tgt\na\tval\tx\ty\tz\n"),
        ("unknown-key", "kan-sam-manifest 1\nscene {\"bogus\":1}\nid\tsplit\trgb\tthermal\tgt\n"),
    ] {
        let p = dir.path().join(format!("{name}.manifest"));
        std::fs::write(&p, text).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Format { .. })), "{name}");
    }
}
