use dcg_core::config::ModelConfig;
use dcg_core::data::{generate_synthetic, Shape, CANVAS_FILL};
use dcg_core::model::{BnMode, LatentNoise, SketchModel};
use dcg_core::pipeline;
use dcg_tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let t0 = std::time::Instant::now();
    let cfg = ModelConfig::paper();
    let model = SketchModel::<f32>::init(cfg.clone(), 0).unwrap();
    println!(
        "paper model: {} tensors, {} trainable coords ({:?} to init)",
        model.params().len(),
        model.params().trainable_numel(),
        t0.elapsed()
    );
    let seq = generate_synthetic(Shape::Circle, &mut ChaCha8Rng::seed_from_u64(0))
        .normalized(CANVAS_FILL);
    let input = pipeline::prepare_input::<f32>(&seq, &cfg, None);
    println!("input stack {:?} ({:?})", input.images.shape(), t0.elapsed());
    let (mu, graph) = model.encode(&input.images).unwrap();
    assert!(mu.is_finite());
    assert_eq!(mu.shape(), &[1, cfg.latent_dim]);
    assert_eq!(graph.a_hat.shape(), &[cfg.patch_count + 1, cfg.patch_count + 1]);
    println!("encode ok: mu[0..4] = {:?} ({:?})", &mu.data()[..4], t0.elapsed());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gen = model.generate(&mu, 0.1, &mut rng).unwrap();
    println!("generated {} points ({:?})", gen.len(), t0.elapsed());
    // One teacher-forced loss + backward at paper scale.
    let target = model.stroke5_target(&seq).unwrap();
    let tape = Tape::new();
    let out = model
        .forward_loss(&tape, &input.images, &target, &LatentNoise::Zero, BnMode::Train, None)
        .unwrap();
    let loss = tape.value(out.loss).item();
    assert!(loss.is_finite());
    println!("forward loss {loss:.3} ({:?})", t0.elapsed());
    let store = tape.backward(out.loss).unwrap();
    let _ = store;
    println!("backward ok ({:?})", t0.elapsed());
}
