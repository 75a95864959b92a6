//! The three on-disk formats, round-tripped in memory and through files:
//! IDX image/label stacks, BDNC checkpoints, and MCPD pass tensors with
//! their label sidecar. Every codec is deterministic, so serialize ->
//! parse -> serialize must reproduce the first byte string exactly.
//!
//! ```text
//! cargo run --example formats
//! ```

use bdn::data::{self, digits};
use bdn::inference::{labels_bytes, mc_predict, mcpd_bytes, parse_labels, parse_mcpd};
use bdn::layers::{NetworkParams, NetworkSpec};
use bdn::masks::MaskConfig;
use bdn::train::{Checkpoint, CheckpointMeta};

fn main() -> bdn::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");

    // --- IDX: the classic big-endian image/label stack -------------------
    // The payload is u8, so the first write quantizes float pixels onto the
    // 1/255 grid; from then on every round trip is bit-exact.
    let set = digits::expanded(digits::Split::Test, 12, 5)?;
    let img_bytes = data::idx_image_bytes(&set.inputs)?;
    let lab_bytes = data::idx_label_bytes(&set.labels)?;
    let images = data::parse_idx_images(&img_bytes)?;
    let labels: Vec<usize> = data::parse_idx_labels(&lab_bytes)?
        .into_iter()
        .map(|b| b as usize)
        .collect();
    let quant_delta = images
        .data()
        .iter()
        .zip(set.inputs.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(quant_delta <= 0.5 / 255.0);
    assert_eq!(labels, set.labels);
    assert_eq!(img_bytes, data::idx_image_bytes(&images)?);
    assert_eq!(images.data(), data::parse_idx_images(&data::idx_image_bytes(&images)?)?.data());
    println!(
        "IDX    {:>6} + {:<4} bytes  images {:?}  quantization delta {:.5}, then bit-exact",
        img_bytes.len(),
        lab_bytes.len(),
        images.shape(),
        quant_delta
    );

    // --- BDNC: network spec + parameters + mask + metadata ---------------
    let spec = NetworkSpec::mlp(vec![28, 28, 1], 10)?;
    let ckpt = Checkpoint {
        params: NetworkParams::init(&spec, 9)?,
        spec,
        mask: MaskConfig::dropconnect(0.5, 11),
        meta: CheckpointMeta { epochs_trained: 0, final_objective: 2.3 },
    };
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.to_bytes()?, ckpt.to_bytes()?);
    println!(
        "BDNC   {:>6} bytes          {} tensors        round trip bit-exact",
        ckpt.to_bytes()?.len(),
        ckpt.params.tensors().len()
    );

    // --- MCPD: the [T, N, C] pass tensor plus a label sidecar ------------
    let subset = set.take(6)?;
    let mc = mc_predict(&ckpt.spec, &ckpt.params, &ckpt.mask, &subset.inputs, 8)?;
    let mcpd = mcpd_bytes(&mc);
    let sidecar = labels_bytes(&subset.labels)?;
    let back = parse_mcpd(&mcpd)?;
    assert_eq!(back.probs().data(), mc.probs().data());
    assert_eq!(mcpd, mcpd_bytes(&back));
    assert_eq!(parse_labels(&sidecar)?, subset.labels);
    println!(
        "MCPD   {:>6} bytes          [T={}, N={}, C={}]  round trip bit-exact",
        mcpd.len(),
        back.pass_count(),
        back.sample_count(),
        back.class_count()
    );

    // corrupting any byte is caught, not silently absorbed
    let mut bad = mcpd.clone();
    bad[1] ^= 0xFF;
    match parse_mcpd(&bad) {
        Err(e) => println!("corrupt MCPD rejected: {e}"),
        Ok(_) => panic!("corrupt MCPD was accepted"),
    }
    Ok(())
}
