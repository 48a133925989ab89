//! Temporary probe: embedding and logit scale diagnostics.
use umafd_core::backbone::{forward_single, BackboneConfig};
use umafd_core::data::{Dataset, Modality, Split};
use umafd_core::heads::classify;
use umafd_core::trainer::load_checkpoint;

fn main() {
    let ckpt = std::env::args().nth(1).unwrap();
    let (state, meta) = load_checkpoint(std::path::Path::new(&ckpt)).unwrap();
    let ds = Dataset::open(std::path::Path::new("/tmp/e2e_data"), (8, 64, 64)).unwrap();
    let recs = ds.select(Modality::Depth, Split::Test);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in recs.iter() {
        let clip = ds.clip_tensor(r).unwrap();
        let (emb, _) = forward_single(&state.params, &meta.backbone, &clip.data).unwrap();
        let out = classify(&state.params.cls, &emb).unwrap();
        if r.label == Some(1) { pos.push(out.score as f64) } else { neg.push(out.score as f64) }
    }
    let stats = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (v[0], v[v.len() / 2], v[v.len() - 1])
    };
    let hist = |v: &[f64]| {
        let mut h = [0usize; 10];
        for &s in v { h[((s * 10.0) as usize).min(9)] += 1 }
        h
    };
    let (n0, n5, n9) = stats(&mut neg);
    let (p0, p5, p9) = stats(&mut pos);
    println!("neg scores min/med/max: {:.4} {:.4} {:.4}  hist {:?}", n0, n5, n9, hist(&neg));
    println!("pos scores min/med/max: {:.4} {:.4} {:.4}  hist {:?}", p0, p5, p9, hist(&pos));
    let _ = BackboneConfig::default();
}
