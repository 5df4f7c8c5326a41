mod common;

use blockrar::store::{decode, encode, load, save, Encoding};
use blockrar::{solve, Error, Policy};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fuzzed_policy(seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    solve(&common::random_config(&mut rng, 20)).unwrap()
}

fn assert_typed(r: blockrar::Result<Policy>) {
    match r {
        Ok(_) | Err(Error::CorruptFile(_)) | Err(Error::UnsupportedVersion { .. }) => {}
        Err(other) => panic!("unexpected error kind: {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_over_fuzzed_configs(seed in any::<u64>()) {
        let p = fuzzed_policy(seed);
        for enc in [Encoding::Text, Encoding::Binary] {
            let bytes = encode(&p, enc);
            let q = decode(&bytes).unwrap();
            prop_assert_eq!(&q, &p);
            prop_assert_eq!(encode(&q, enc), bytes);
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        assert_typed(decode(&bytes));
        let mut framed = b"TMDP\x01\x00\x00\x00".to_vec();
        framed.extend_from_slice(&bytes);
        assert_typed(decode(&framed));
    }

    #[test]
    fn mutated_files_never_panic(seed in 0u64..8, flips in proptest::collection::vec((any::<usize>(), any::<u8>()), 1..6)) {
        let p = fuzzed_policy(seed);
        for enc in [Encoding::Text, Encoding::Binary] {
            let mut bytes = encode(&p, enc);
            for &(at, v) in &flips {
                let i = at % bytes.len();
                bytes[i] = v;
            }
            assert_typed(decode(&bytes));
            let cut = flips[0].0 % bytes.len();
            assert_typed(decode(&bytes[..cut]));
        }
    }
}

#[test]
fn files_are_byte_identical_across_saves() {
    let dir = tempfile::tempdir().unwrap();
    let p = fuzzed_policy(3);
    for enc in [Encoding::Text, Encoding::Binary] {
        let a = dir.path().join(format!("a.{}", enc.extension()));
        let b = dir.path().join(format!("b.{}", enc.extension()));
        save(&p, &a, enc).unwrap();
        save(&p, &b, enc).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(load(&a).unwrap(), p);
    }
}

#[test]
fn save_overwrites_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.tmdp.bin");
    save(&fuzzed_policy(1), &path, Encoding::Binary).unwrap();
    let second = fuzzed_policy(2);
    save(&second, &path, Encoding::Binary).unwrap();
    assert_eq!(load(&path).unwrap(), second);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn unwritable_destination_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("p.tmdp.json");
    match save(&fuzzed_policy(1), &path, Encoding::Text) {
        Err(Error::Io { path: reported, .. }) => assert_eq!(reported, path),
        other => panic!("{other:?}"),
    }
}
