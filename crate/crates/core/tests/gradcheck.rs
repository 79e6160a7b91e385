//! Central finite differences against reverse-mode gradients, layer by layer.

mod common;

use common::{fd_rel_error as check, random};
use pgsure::autodiff::{Network, NetworkConfig, ParamStore, Tensor};

const TOL: f64 = 1e-4;

fn conv_case(stride: usize, upsample: bool) -> f64 {
    let seed = stride as u64 + 10 * upsample as u64;
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[2, 6, 6], seed, 0.1, 1.0));
    let w = store.add("w", random(&[3, 2, 3, 3], seed + 100, 0.1, 1.0));
    let b = store.add("b", random(&[3], seed + 200, 0.1, 1.0));
    check(&mut store, 1, |t, s| {
        let mut x = t.param(s, x);
        if upsample {
            x = t.upsample2(x).unwrap();
        }
        let (w, b) = (t.param(s, w), t.param(s, b));
        let y = t.conv2d(x, w, b, stride).unwrap();
        t.sum_squares(y)
    })
}

#[test]
fn conv_gradients() {
    let e = conv_case(1, false);
    assert!(e <= TOL, "conv rel err {e:e}");
}

#[test]
fn strided_conv_gradients() {
    let e = conv_case(2, false);
    assert!(e <= TOL, "stride-2 conv rel err {e:e}");
}

#[test]
fn upsample_conv_gradients() {
    let e = conv_case(1, true);
    assert!(e <= TOL, "upsample + conv rel err {e:e}");
}

#[test]
fn leaky_relu_gradients() {
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[2, 4, 4], 3, 0.05, 2.0));
    let e = check(&mut store, 1, |t, s| {
        let x = t.param(s, x);
        let y = t.leaky_relu(x, 0.1);
        t.sum_squares(y)
    });
    assert!(e <= TOL, "leaky relu rel err {e:e}");
}

#[test]
fn sigmoid_head_gradients() {
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[3, 4, 4], 4, 0.0, 4.0));
    let e = check(&mut store, 1, |t, s| {
        let x = t.param(s, x);
        let y = t.sigmoid_scaled(x, 255.0);
        t.sum_squares(y)
    });
    assert!(e <= TOL, "sigmoid rel err {e:e}");
}

#[test]
fn channel_norm_gradients() {
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[3, 4, 5], 5, 0.0, 3.0));
    let g = store.add("g", random(&[3], 6, 0.5, 1.5));
    let b = store.add("b", random(&[3], 7, 0.0, 1.0));
    // a plain sum of squares is constant in x after normalization, so
    // weight the output by a fixed ramp first
    let ramp = Tensor::new(
        vec![3, 4, 5],
        (0..60).map(|i| (i % 7) as f64 - 3.0).collect(),
    )
    .unwrap();
    let e = check(&mut store, 1, |t, s| {
        let x = t.param(s, x);
        let (g, b) = (t.param(s, g), t.param(s, b));
        let y = t.channel_norm(x, g, b, 1e-5).unwrap();
        let r = t.constant(ramp.clone());
        let z = t.add(y, r).unwrap();
        let z = t.leaky_relu(z, 0.1);
        t.sum_squares(z)
    });
    assert!(e <= TOL, "channel norm rel err {e:e}");
}

#[test]
fn default_network_gradients_on_8x8() {
    for normalize in [true, false] {
        let cfg = NetworkConfig {
            normalize,
            ..NetworkConfig::default()
        };
        let (net, mut store) = Network::init(&cfg, 11).unwrap();
        let u = random(&[3, 8, 8], 8, 0.0, 255.0);
        let e = check(&mut store, 97, |t, s| {
            let x = t.constant(u.clone());
            let f = net.forward(t, s, x).unwrap();
            t.sum_squares(f)
        });
        assert!(e <= TOL, "network (normalize {normalize}) rel err {e:e}");
    }
}
