use std::path::PathBuf;

use overture::corpus::{ChunkSet, Provenance, SubwordCodec, VocabId, WordCodec, GPT2_VOCAB_SIZE};
use overture::nn::Rng;
use serde::Deserialize;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn codec() -> SubwordCodec {
    SubwordCodec::load_dir(&data_dir().join("gpt2")).unwrap()
}

fn text_samples() -> Vec<String> {
    let mut out = Vec::new();
    for f in ["alice29.txt", "asyoulik.txt", "lcet10.txt", "plrabn12.txt"] {
        let t = std::fs::read_to_string(data_dir().join("text").join(f)).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        for block in lines.chunks(40).step_by(5) {
            out.push(block.join("\n"));
        }
    }
    out
}

#[test]
fn matches_reference_tokenizer_on_corpus_text() {
    let ours = codec();
    assert_eq!(ours.vocab_size(), GPT2_VOCAB_SIZE);
    let reference = tiktoken_rs::r50k_base().unwrap();
    let samples = text_samples();
    assert!(samples.len() > 50);
    for s in &samples {
        let want: Vec<u32> = reference.encode_ordinary(s).into_iter().map(|x| x as u32).collect();
        assert_eq!(ours.encode(s), want, "{s:?}");
    }
}

#[derive(Deserialize)]
struct Case {
    text: String,
    ids: Vec<u32>,
}

#[test]
fn frozen_fixture_cases() {
    let cases: Vec<Case> =
        serde_json::from_str(include_str!("fixtures/r50k_cases.json")).unwrap();
    let c = codec();
    for case in &cases {
        assert_eq!(c.encode(&case.text), case.ids, "{:?}", case.text);
        assert_eq!(c.decode(&case.ids).unwrap(), case.text.as_bytes());
    }
}

#[test]
fn arbitrary_bytes_round_trip() {
    let c = codec();
    let mut rng = Rng::new(9, "bytes");
    for i in 0..1000 {
        let len = rng.index(64);
        let bytes: Vec<u8> = if i % 2 == 0 {
            (0..len).map(|_| rng.below(256) as u8).collect()
        } else {
            // mostly printable, the common case
            (0..len).map(|_| b" abcdefghijklmnopqrstuvwxyz.,'\n"[rng.index(31)]).collect()
        };
        let ids = c.encode_bytes(&bytes);
        assert!(ids.iter().all(|&t| (t as usize) < GPT2_VOCAB_SIZE));
        assert_eq!(c.decode(&ids).unwrap(), bytes);
    }
}

#[test]
fn word_codec_on_corpus_text() {
    let samples = text_samples();
    let codec = WordCodec::build(samples.iter().map(|s| s.as_str()), 2000).unwrap();
    assert_eq!(codec.vocab_size(), 2000);
    let ids = codec.encode(&samples[0]);
    assert!(ids.iter().all(|&i| (i as usize) < 2000));
    // known words survive a decode/encode cycle; `<unk>` itself does not
    let known: Vec<u32> = ids.into_iter().filter(|&i| i != 0).collect();
    assert_eq!(codec.encode(&codec.decode(&known)), known);

    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("words.json");
    codec.save(&p).unwrap();
    let back = WordCodec::load(&p).unwrap();
    assert_eq!(back.encode(&samples[3]), codec.encode(&samples[3]));

    let stream: Vec<u32> = samples.iter().flat_map(|s| codec.encode(s)).collect();
    let set = ChunkSet::chunk(&stream, VocabId::WordLevel, 2000, Provenance { source: "canterbury".into(), seed: 0 }).unwrap();
    assert_eq!(set.len(), stream.len() / 257);
    let path = tmp.path().join("x.chunks");
    set.save(&path).unwrap();
    assert_eq!(ChunkSet::load(&path).unwrap(), set);
}
