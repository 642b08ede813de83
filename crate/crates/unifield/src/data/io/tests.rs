use super::*;
use crate::data::synthetic::{cylinder_domain, gen_cylinder, sphere_domain};

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("unifield-io-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn single_registry() -> DomainRegistry {
    DomainRegistry::new(vec![cylinder_domain()]).unwrap()
}

#[test]
fn text_round_trip_is_exact() {
    let dir = tmpdir("text");
    let reg = single_registry();
    let sample = gen_cylinder(33, 0.05, 9).unwrap();
    let path = dir.join("s.ufs");
    save_sample_text(&sample, &reg, &path).unwrap();
    let back = load_sample(&path, &reg).unwrap();
    assert_eq!(back.points.coords(), sample.points.coords());
    assert_eq!(back.target, sample.target);
    assert_eq!(back.flow, sample.flow);
    assert_eq!(back.domain, 0);
}

#[test]
fn binary_round_trip_is_bit_exact() {
    let dir = tmpdir("bin");
    let reg = single_registry();
    let sample = gen_cylinder(17, 0.2, 40).unwrap();
    let path = dir.join("s.ufsb");
    save_sample_binary(&sample, &reg, &path).unwrap();
    let back = load_sample(&path, &reg).unwrap();
    assert!(back
        .points
        .coords()
        .iter()
        .zip(sample.points.coords())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(back
        .target
        .iter()
        .zip(&sample.target)
        .all(|(a, b)| a.to_bits() == b.to_bits()));

    // saving again reproduces the same bytes
    let path2 = dir.join("s2.ufsb");
    save_sample_binary(&back, &reg, &path2).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
}

#[test]
fn single_row_sample_loads() {
    let dir = tmpdir("one");
    let reg = single_registry();
    let path = dir.join("one.ufs");
    fs::write(
        &path,
        "# unifield sample v1\ndomain 1 cylinder\nflow 30\npoints 1\n0.5 0.5 0 1.0\n",
    )
    .unwrap();
    let s = load_sample(&path, &reg).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s.target, vec![1.0]);
}

#[test]
fn unknown_domain_is_registry_error() {
    let dir = tmpdir("unknown");
    let reg = single_registry();
    let path = dir.join("bad.ufs");
    fs::write(
        &path,
        "# unifield sample v1\ndomain 9 wing\nflow 30\npoints 1\n0 0 0 1\n",
    )
    .unwrap();
    assert!(matches!(
        load_sample(&path, &reg),
        Err(Error::Registry(_))
    ));
}

#[test]
fn malformed_rows_name_the_line() {
    let dir = tmpdir("malformed");
    let reg = single_registry();
    let path = dir.join("bad.ufs");
    fs::write(
        &path,
        "# unifield sample v1\ndomain 1 cylinder\nflow 30\npoints 2\n0 0 0 1\n0 0 zzz 1\n",
    )
    .unwrap();
    match load_sample(&path, &reg) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn count_mismatch_rejected() {
    let dir = tmpdir("count");
    let reg = single_registry();
    let path = dir.join("bad.ufs");
    fs::write(
        &path,
        "# unifield sample v1\ndomain 1 cylinder\nflow 30\npoints 3\n0 0 0 1\n",
    )
    .unwrap();
    assert!(matches!(load_sample(&path, &reg), Err(Error::Parse { .. })));
}

#[test]
fn affine_pressure_mode_standardizes_on_load() {
    let dir = tmpdir("affine");
    let mut spec = cylinder_domain();
    spec.pressure = PressureMode::Affine {
        mean: -94.5,
        std: 117.25,
    };
    let reg = DomainRegistry::new(vec![spec]).unwrap();
    let path = dir.join("raw.ufs");
    fs::write(
        &path,
        "# unifield sample v1\ndomain 1 cylinder\nflow 30\npoints 1\n0 0 0 -94.5\n",
    )
    .unwrap();
    let s = load_sample(&path, &reg).unwrap();
    assert_eq!(s.target, vec![0.0]);
}

#[test]
fn dataset_generation_is_byte_deterministic() {
    let spec = DatasetSpec {
        domain: SyntheticDomain::Cylinder,
        train_count: 3,
        test_count: 1,
        n_points: 16,
        noise_std: 0.01,
        seed: 5,
        binary: false,
        warp: 0.0,
    };
    let dir_a = tmpdir("det-a");
    let dir_b = tmpdir("det-b");
    let ma = write_dataset(&spec, &dir_a).unwrap();
    let mb = write_dataset(&spec, &dir_b).unwrap();
    assert_eq!(fs::read(&ma).unwrap(), fs::read(&mb).unwrap());
    for name in ["samples/train_0000.ufs", "samples/train_0002.ufs", "samples/test_0000.ufs"] {
        assert_eq!(
            fs::read(dir_a.join(name)).unwrap(),
            fs::read(dir_b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn manifest_round_trip_and_split_loading() {
    let spec = DatasetSpec {
        domain: SyntheticDomain::Sphere,
        train_count: 2,
        test_count: 2,
        n_points: 12,
        noise_std: 0.0,
        seed: 8,
        binary: true,
        warp: 0.0,
    };
    let dir = tmpdir("manifest");
    let mpath = write_dataset(&spec, &dir).unwrap();
    let manifest = Manifest::load(&mpath).unwrap();
    assert_eq!(manifest.domains.len(), 1);
    assert_eq!(manifest.entries.len(), 4);

    let registry = build_registry(std::slice::from_ref(&manifest)).unwrap();
    let train = load_split(&manifest, &registry, Split::Train).unwrap();
    let test = load_split(&manifest, &registry, Split::Test).unwrap();
    assert_eq!(train.len(), 2);
    assert_eq!(test.len(), 2);
    assert!(train.iter().all(|s| s.len() == 12 && s.flow.len() == 2));
}

#[test]
fn registry_merge_assigns_first_seen_order() {
    let cyl = tmpdir("merge-cyl");
    let sph = tmpdir("merge-sph");
    let m1 = write_dataset(
        &DatasetSpec {
            domain: SyntheticDomain::Cylinder,
            train_count: 1,
            test_count: 0,
            n_points: 8,
            noise_std: 0.0,
            seed: 1,
            binary: false,
            warp: 0.0,
        },
        &cyl,
    )
    .unwrap();
    let m2 = write_dataset(
        &DatasetSpec {
            domain: SyntheticDomain::Sphere,
            train_count: 1,
            test_count: 0,
            n_points: 8,
            noise_std: 0.0,
            seed: 2,
            binary: false,
            warp: 0.0,
        },
        &sph,
    )
    .unwrap();
    let manifests = vec![Manifest::load(&m1).unwrap(), Manifest::load(&m2).unwrap()];
    let reg = build_registry(&manifests).unwrap();
    assert_eq!(reg.domains()[0].name, "cylinder");
    assert_eq!(reg.domains()[0].id, 1);
    assert_eq!(reg.domains()[1].name, "sphere");
    assert_eq!(reg.domains()[1].id, 2);

    // samples from both manifests land on distinct registry indices
    let a = load_split(&manifests[0], &reg, Split::Train).unwrap();
    let b = load_split(&manifests[1], &reg, Split::Train).unwrap();
    assert_eq!(a[0].domain, 0);
    assert_eq!(b[0].domain, 1);
}

#[test]
fn manifest_rejects_missing_files() {
    let dir = tmpdir("missing");
    let path = dir.join("manifest.ufm");
    fs::write(
        &path,
        "# unifield manifest v1\nname x\ndomain 1 cylinder conditions=U:m/s pressure=passthrough\nsample samples/nope.ufs domain=cylinder split=train flow=30\n",
    )
    .unwrap();
    assert!(matches!(Manifest::load(&path), Err(Error::Registry(_))));
}

#[test]
fn sphere_and_cylinder_have_different_flow_dims() {
    assert_eq!(cylinder_domain().flow_dim(), 1);
    assert_eq!(sphere_domain().flow_dim(), 2);
}
