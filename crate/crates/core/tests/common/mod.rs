//! Shared helpers for the integration tests: bundled nets and seeded
//! random network specs.
#![allow(dead_code)]

use std::path::PathBuf;

use tilestitch::rng::SeededStream;
use tilestitch::NetworkGraph;

pub fn net_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../nets").join(name)
}

pub fn bundled(name: &str, seed: u64) -> NetworkGraph {
    let text = std::fs::read_to_string(net_path(name)).unwrap();
    NetworkGraph::parse(&text).unwrap().init_weights(seed)
}

fn pick<T: Copy>(rng: &mut SeededStream, xs: &[T]) -> T {
    xs[rng.next_below(xs.len() as u64) as usize]
}

/// Stride-1 net with at least one zero-padded convolution, optionally with
/// a pool/upsample pair in the middle. Regenerates until the spec is tileable.
pub fn random_padded_spec(seed: u64) -> String {
    let mut rng = SeededStream::new(seed);
    loop {
        let mut s = String::from("input in channels=1\n");
        let mut prev = "in".to_string();
        let mut padded = false;
        let mut i = 0;
        let mut conv = |s: &mut String, prev: &mut String, rng: &mut SeededStream, padded: &mut bool| {
            let k = pick(rng, &[1, 3, 5]);
            let d = if k > 1 { pick(rng, &[1, 1, 2]) } else { 1 };
            let p = rng.next_below((d * (k - 1) / 2 + 1) as u64) as usize;
            *padded |= p > 0;
            let cout = pick(rng, &[3, 4]);
            *s += &format!("conv c{i} from={prev} k={k} d={d} p={p} cout={cout}\nrelu r{i} from=c{i}\n");
            *prev = format!("r{i}");
            i += 1;
        };
        let pooled = rng.next_below(2) == 1;
        for _ in 0..1 + rng.next_below(2) {
            conv(&mut s, &mut prev, &mut rng, &mut padded);
        }
        if pooled {
            s += &format!("maxpool mp from={prev} k=2 s=2\n");
            prev = "mp".into();
            conv(&mut s, &mut prev, &mut rng, &mut padded);
            s += &format!("upsample up from={prev} f=2\n");
            prev = "up".into();
        }
        conv(&mut s, &mut prev, &mut rng, &mut padded);
        s += &format!("conv head from={prev} k=1 cout=2\noutput out from=head\n");
        let ok = padded
            && NetworkGraph::parse(&s)
                .and_then(|n| n.geometry())
                .and_then(|g| g.check_tileable())
                .is_ok();
        if ok {
            return s;
        }
    }
}

/// Valid (unpadded) U-Net with 2 or 3 pooling levels.
pub fn random_valid_unet(seed: u64) -> String {
    let mut rng = SeededStream::new(seed);
    let levels = 2 + rng.next_below(2) as usize;
    let base = pick(&mut rng, &[2, 3, 4]);
    let convs = 1 + rng.next_below(2) as usize;
    let mut s = String::from("input in channels=1\n");
    let mut prev = "in".to_string();
    let mut n = 0;
    let mut block = |s: &mut String, prev: &mut String, ch: usize| {
        for _ in 0..convs {
            *s += &format!("conv c{n} from={prev} k=3 cout={ch}\nrelu r{n} from=c{n}\n");
            *prev = format!("r{n}");
            n += 1;
        }
    };
    let mut skips = Vec::new();
    for l in 0..levels {
        block(&mut s, &mut prev, base << l);
        skips.push(prev.clone());
        s += &format!("maxpool p{l} from={prev} k=2 s=2\n");
        prev = format!("p{l}");
    }
    block(&mut s, &mut prev, base << levels);
    for l in (0..levels).rev() {
        s += &format!(
            "upsample u{l} from={prev} f=2\ncropconcat cat{l} from={},u{l}\n",
            skips[l]
        );
        prev = format!("cat{l}");
        block(&mut s, &mut prev, base << l);
    }
    s += &format!("conv head from={prev} k=1 cout=2\noutput out from=head\n");
    s
}

/// Shift the class-1 bias of the output convolution so that class 1 wins on
/// about half of `tile`'s pixels. Untrained weights otherwise give nearly
/// constant label maps, which make label-level comparisons vacuous.
pub fn calibrate_head(net: &NetworkGraph, tile: &tilestitch::Raster) -> NetworkGraph {
    let scores = tilestitch::full_tile_forward(net, tile).unwrap();
    let plane = scores.plane_len();
    let v = scores.as_f32().unwrap();
    let mut margin: Vec<f32> = (0..plane).map(|i| v[plane + i] - v[i]).collect();
    margin.sort_by(f32::total_cmp);
    let median = margin[plane / 2];
    let head = &net.nodes()[net.nodes()[net.output_index()].parents[0]].name;
    let mut records = net.weight_records().unwrap();
    let bias = records
        .iter_mut()
        .find(|r| &r.name == head && r.is_bias)
        .expect("output convolution has a bias");
    bias.values[1] -= median;
    net.with_weight_records(&records).unwrap()
}
