use vitstem::augment::{load_image_dir, smooth_labels, synth_dataset, AugmentConfig, Augmenter, SynthSpec};
use vitstem::optim::adamw_step;
use vitstem::tensor::{Tape, Tensor};

fn accuracy(w: &[f32], x: &Tensor<f32>, labels: &[usize], k: usize) -> f64 {
    let f = x.numel() / labels.len();
    let mut hit = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &x.data()[i * f..(i + 1) * f];
        let score = |c: usize| row.iter().enumerate().map(|(j, v)| v * w[j * k + c]).sum::<f32>();
        let best = (0..k).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap();
        hit += (best == y) as usize;
    }
    hit as f64 / labels.len() as f64
}

#[test]
fn linear_probe_beats_chance() {
    let (k, s) = (10, 16);
    let data = synth_dataset(&SynthSpec::new(1000, s, k, 1)).unwrap();
    let f = 3 * s * s;
    let train_idx: Vec<usize> = (0..data.train.len()).collect();
    let batch = data.train.batch(&train_idx, 0.0).unwrap();
    let x = batch.images.clone().reshaped([train_idx.len(), f]).unwrap();
    let mut w = vec![0.0f32; f * k];
    let (mut m, mut v) = (vec![0.0; f * k], vec![0.0; f * k]);
    for step in 1..=60 {
        let tape = Tape::new();
        let wv = tape.leaf(&Tensor::new([f, k], w.clone()).unwrap().requiring_grad());
        let loss = tape.constant(&x).matmul(wv).unwrap().cross_entropy(&batch.targets).unwrap();
        let g = tape.backward(loss).unwrap();
        adamw_step(&mut w, g.slice(wv).unwrap(), &mut m, &mut v, step, 1e-2, 0.0, 0.9, 0.999, 1e-8, true);
    }
    let val_idx: Vec<usize> = (0..data.val.len()).collect();
    let xv = data.val.images(&val_idx).reshaped([val_idx.len(), f]).unwrap();
    let acc = accuracy(&w, &xv, data.val.labels(), k);
    assert!(acc > 0.3, "probe accuracy {acc}");
}

#[test]
fn loads_directory_of_images() {
    let dir = tempfile::tempdir().unwrap();
    for (class, color) in [("cat", [200u8, 10, 10]), ("dog", [10, 10, 200])] {
        let sub = dir.path().join(class);
        std::fs::create_dir(&sub).unwrap();
        for i in 0..5 {
            image::RgbImage::from_pixel(12, 10, image::Rgb(color)).save(sub.join(format!("{i}.png"))).unwrap();
        }
        std::fs::write(sub.join("notes.txt"), "ignored").unwrap();
    }
    let (split, names) = load_image_dir(dir.path(), 8, 0.2, 0).unwrap();
    assert_eq!(names, ["cat", "dog"]);
    assert_eq!(split.train.len() + split.val.len(), 10);
    assert_eq!(split.val.class_counts(), vec![1, 1]);
    assert_eq!(split.train.image_size(), 8);
    let px = split.train.image(0);
    assert!((px[0] - (200.0 / 127.5 - 1.0)).abs() < 1e-3);
    assert!(load_image_dir(&dir.path().join("cat"), 8, 0.2, 0).is_err());
}

#[test]
fn plain_recipe_reduces_to_one_hot_cross_entropy() {
    let data = synth_dataset(&SynthSpec::new(200, 8, 5, 4)).unwrap();
    let idx: Vec<usize> = (0..16).collect();
    let batch = data.train.batch(&idx, 0.0).unwrap();
    let cfg = AugmentConfig { smoothing_eps: 0.0, ..Default::default() };
    let out = Augmenter::new(cfg).unwrap().apply(batch.clone()).unwrap();
    assert_eq!(out.images.data(), batch.images.data());
    assert_eq!(out.targets.data(), batch.targets.data());

    let labels = &data.train.labels()[..16];
    let targets = smooth_labels::<f64>(labels, 5, 0.0).unwrap();
    for (row, &y) in targets.data().chunks(5).zip(labels) {
        assert!(row.iter().enumerate().all(|(c, &t)| t == if c == y { 1.0 } else { 0.0 }));
    }
    let logits = Tensor::from_fn([16, 5], |i| ((i * 37 % 11) as f64 - 5.0) * 0.7);
    let tape = Tape::new();
    let loss = tape.constant(&logits).cross_entropy(&targets).unwrap().value().data()[0];
    let manual: f64 = logits
        .data()
        .chunks(5)
        .zip(labels)
        .map(|(z, &y)| z.iter().map(|v| v.exp()).sum::<f64>().ln() - z[y])
        .sum::<f64>()
        / 16.0;
    assert!((loss - manual).abs() < 1e-12, "{loss} vs {manual}");
}
