//! Binary network checkpoints and whole-system checkpoint directories.
//!
//! Run with: cargo run --release -p semsec --example checkpoint_io

use semsec::channel::ChannelConfig;
use semsec::checkpoint::{load_network, save_network};
use semsec::codec::{CodeShape, TextCorpus};
use semsec::nn::{init_network, LayerSpec};
use semsec::trainer::{load_system, save_system, ArchConfig, SemComSystem};

fn main() {
    let dir = std::env::temp_dir().join("semsec_checkpoint_demo");
    std::fs::create_dir_all(&dir).unwrap();

    // Single network file: magic SEMSEC01, layer table, parameters.
    let net = init_network(
        &[
            LayerSpec::dense(12, 24),
            LayerSpec::Relu,
            LayerSpec::dense(24, 6),
            LayerSpec::Sigmoid,
        ],
        99,
    )
    .unwrap();
    let path = dir.join("demo.net");
    save_network(&net, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    println!(
        "wrote {} ({} bytes, magic {:?})",
        path.display(),
        bytes.len(),
        std::str::from_utf8(&bytes[..8]).unwrap()
    );
    let loaded = load_network(&path).unwrap();
    println!(
        "roundtrip: layers match = {}, params match = {}",
        loaded.layers() == net.layers(),
        loaded.params() == net.params()
    );

    // Whole-system checkpoint: five nets plus a TOML manifest.
    let arch = ArchConfig {
        codec_hidden: 32,
        tje_hidden: 16,
        gje_hidden: 16,
        ..ArchConfig::default()
    };
    let sys = SemComSystem::new(
        ChannelConfig::new(4, 4, 1.0, 10.0, 10.0).unwrap(),
        CodeShape::new(1, 16, 16, 3, 4).unwrap(),
        &arch,
        16,
        16,
        3,
        TextCorpus::bundled(arch.vocab_size).unwrap(),
        16,
        99,
    )
    .unwrap();
    let sys_dir = dir.join("system");
    save_system(&sys, 99, &sys_dir).unwrap();
    let names: Vec<String> = std::fs::read_dir(&sys_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    println!("\nsystem checkpoint {} holds: {names:?}", sys_dir.display());
    let restored = load_system(&sys_dir, TextCorpus::bundled(arch.vocab_size).unwrap()).unwrap();
    println!(
        "restored semantic encoder matches: {}",
        restored.se.params() == sys.se.params()
    );
}
