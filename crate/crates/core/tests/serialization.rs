use bnslim::error::FormatError;
use bnslim::model::{build_model, decode_model, encode_model, load_model, parse_description, save_model, ModelGraph};
use bnslim::prune::{apply_prune, collect_scales, plan_prune, PruneMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = rng.random_range(6..=12);
    let classes = rng.random_range(2..=7);
    let mut text = format!("input = [3, {side}, {side}]\nclasses = {classes}\nseed = {seed}\n");
    for i in 0..rng.random_range(1..=3) {
        text += &format!(
            "[[layers]]\nkind = \"cbr\"\nout = {}\nkernel = {}\npadding = 1\n",
            rng.random_range(1..=13),
            if rng.random_bool(0.5) { 3 } else { 1 }
        );
        if i == 0 && rng.random_bool(0.5) {
            text += "[[layers]]\nkind = \"maxpool\"\nsize = 2\n";
        }
    }
    text += &format!("[[layers]]\nkind = \"globalavgpool\"\n[[layers]]\nkind = \"linear\"\nout = {classes}\n");
    let mut m = build_model(&parse_description(&text).unwrap()).unwrap();
    for p in m.params_mut() {
        for v in p.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
    }
    if seed % 2 == 1 {
        let method = if seed % 4 == 1 { PruneMethod::Normal } else { PruneMethod::Regular };
        let ratio = rng.random_range(0.1..0.8);
        let plan = plan_prune(&collect_scales(&m).unwrap(), ratio, method, &m).unwrap();
        m = apply_prune(&m, &plan).unwrap();
    }
    m
}

#[test]
fn fifty_random_models_round_trip_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut irregular = 0;
    for seed in 0..50 {
        let m = random_model(seed);
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m, "seed {seed}");
        assert_eq!(encode_model(&back), bytes);
        let path = dir.path().join(format!("m{seed}.slim"));
        save_model(&m, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(load_model(&path).unwrap(), m);
        if m.batchnorm_channel_counts().iter().any(|c| c % 8 != 0) && seed % 2 == 1 {
            irregular += 1;
        }
    }
    assert!(irregular >= 10, "only {irregular} pruned models with ragged widths");
}

#[test]
fn corruption_maps_to_distinct_errors() {
    let bytes = encode_model(&random_model(3));

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(matches!(decode_model(&bad), Err(FormatError::BadMagic)));

    for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
        assert!(
            matches!(decode_model(&bytes[..cut]), Err(FormatError::Truncated { .. })),
            "cut at {cut}"
        );
    }

    let mut flipped = bytes.clone();
    let mid = bytes.len() - 20;
    flipped[mid] ^= 0x01;
    assert!(matches!(decode_model(&flipped), Err(FormatError::ChecksumMismatch { .. })));
}
