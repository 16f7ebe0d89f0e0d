// Scratch probe: sweep desk-scale attend architectures under visual
// supervision to place the localisation ordering. Not part of the library.

use kwloc_core::corpus::io::read_corpus;
use kwloc_core::eval::{detection_from_pairs, evaluate_pairs, localisation_from_pairs};
use kwloc_core::model::{ConvSpec, KeywordModel, ModelConfig, ModelVariant, Preset};
use kwloc_core::supervision::{train, SupervisionKind, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("a");
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(35);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1);
    let kind = match args.get(5).map(|s| s.as_str()) {
        Some("bow") => SupervisionKind::Bow,
        _ => SupervisionKind::Visual,
    };
    let corpus = read_corpus(std::path::Path::new("/tmp/kwexp/corpus")).unwrap();
    let w = corpus.vocab.len();

    let (label, cfg) = match which {
        "a2" => {
            let mut c = ModelConfig::desk(ModelVariant::CnnAttend, 13, w);
            c.conv = vec![
                ConvSpec::new(24, 9),
                ConvSpec::new(24, 7),
                ConvSpec::new(24, 7),
                ConvSpec::new(24, 7),
                ConvSpec::new(24, 7),
                ConvSpec::new(64, 7),
            ];
            c.embed_dim = 64;
            c.mlp_hidden = 256;
            ("attend U=64 mlp=256", c)
        }
        // wider embedding + head
        "a" => {
            let mut c = ModelConfig::desk(ModelVariant::CnnAttend, 13, w);
            c.conv = vec![
                ConvSpec::new(24, 9),
                ConvSpec::new(24, 7),
                ConvSpec::new(24, 7),
                ConvSpec::new(24, 7),
                ConvSpec::new(24, 7),
                ConvSpec::new(64, 7),
            ];
            c.embed_dim = 64;
            c.mlp_hidden = 128;
            ("attend U=64 mlp=128", c)
        }
        // wider trunk too
        "b" => {
            let mut c = ModelConfig::desk(ModelVariant::CnnAttend, 13, w);
            c.conv = vec![
                ConvSpec::new(32, 9),
                ConvSpec::new(32, 7),
                ConvSpec::new(32, 7),
                ConvSpec::new(32, 7),
                ConvSpec::new(32, 7),
                ConvSpec::new(64, 7),
            ];
            c.embed_dim = 64;
            c.mlp_hidden = 128;
            ("attend trunk=32 U=64 mlp=128", c)
        }
        // narrower receptive field
        "c" => {
            let mut c = ModelConfig::desk(ModelVariant::CnnAttend, 13, w);
            c.conv = vec![
                ConvSpec::new(24, 9),
                ConvSpec::new(24, 5),
                ConvSpec::new(24, 5),
                ConvSpec::new(24, 5),
                ConvSpec::new(24, 5),
                ConvSpec::new(64, 5),
            ];
            c.embed_dim = 64;
            c.mlp_hidden = 128;
            ("attend rf=29 U=64 mlp=128", c)
        }
        "psc" => (
            "psc desk",
            ModelConfig::preset(Preset::Desk, ModelVariant::Psc, 13, w),
        ),
        "pool" => (
            "cnn-pool desk",
            ModelConfig::preset(Preset::Desk, ModelVariant::CnnPool, 13, w),
        ),
        "pool2" => {
            let mut c = ModelConfig::desk(ModelVariant::CnnPool, 13, w);
            c.conv = vec![
                ConvSpec::pooled(24, 9, 3),
                ConvSpec::pooled(48, 7, 3),
                ConvSpec::new(64, 7),
            ];
            c.head_hidden = 128;
            ("cnn-pool trunk=24/48/64 head=128", c)
        }
        "pool4" => {
            let mut c = ModelConfig::desk(ModelVariant::CnnPool, 13, w);
            c.conv = vec![
                ConvSpec::pooled(32, 9, 3),
                ConvSpec::pooled(96, 7, 3),
                ConvSpec::new(256, 7),
            ];
            c.head_hidden = 512;
            ("cnn-pool trunk=32/96/256 head=512", c)
        }
        "pool3" => {
            let mut c = ModelConfig::desk(ModelVariant::CnnPool, 13, w);
            c.conv = vec![
                ConvSpec::pooled(24, 9, 3),
                ConvSpec::pooled(64, 7, 3),
                ConvSpec::new(160, 7),
            ];
            c.head_hidden = 256;
            ("cnn-pool trunk=24/64/160 head=256", c)
        }
        other => panic!("unknown sweep '{other}'"),
    };

    let batch: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(32);
    let train_cfg = TrainConfig {
        learning_rate: lr,
        epochs,
        seed,
        theta: 0.5,
        batch_size: batch,
        ..TrainConfig::default()
    };
    let mut model: KeywordModel<f32> =
        KeywordModel::init(cfg, corpus.vocab.clone(), seed).unwrap();
    let t0 = std::time::Instant::now();
    let report = train(&mut model, &corpus.train, &corpus.dev, kind, &train_cfg).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let pairs = evaluate_pairs(&model, &corpus.test, &corpus.vocab).unwrap();
    let det = detection_from_pairs(&pairs, 0.5);
    let loc = localisation_from_pairs(&pairs, 0.5);
    let best = report.best_epoch.unwrap_or(0);
    println!(
        "{label} seed={seed} lr={lr} epochs={epochs}: test det F1 {:.4} (P {:.3} R {:.3}), test loc F1 {:.4} | best dev epoch {best} | {secs:.0}s",
        det.f1, det.precision, det.recall, loc.f1
    );
    // dev-tuned threshold (detection task), then test metrics at θ*
    let theta = kwloc_core::eval::tune_threshold(
        &model,
        &corpus.dev,
        &corpus.vocab,
        kwloc_core::eval::EvalTask::Detection,
        &kwloc_core::eval::default_theta_grid(),
    )
    .unwrap();
    let det_t = detection_from_pairs(&pairs, theta);
    let loc_t = localisation_from_pairs(&pairs, theta);
    println!(
        "  tuned theta={theta:.2}: test det F1 {:.4} (P {:.3} R {:.3}), test loc F1 {:.4}",
        det_t.f1, det_t.precision, det_t.recall, loc_t.f1
    );
}
