mod common;

use common::{abs_products, brute_force_block, sparse_matrix};
use proptest::prelude::*;
use sparsekit::kernels::{sparse_matvec, sparse_matvec_tiled};
use sparsekit::pruning::{magnitude_prune, nm_project, prune_count, PruneMask};
use sparsekit::quant::{dequantize, quantize_int8, sparse_quant_compress};
use sparsekit::sparse::{compress, decode_skbc, decompress, write_skbc, NmPattern, ValueWidth};
use sparsekit::tensor::{dense_matvec, DenseMatrix, Vector};
use sparsekit::Rng;

fn width() -> impl Strategy<Value = ValueWidth> {
    prop_oneof![Just(ValueWidth::Fp32), Just(ValueWidth::Fp16), Just(ValueWidth::Int8)]
}

fn skbc_bytes(c: &sparsekit::BitmaskCompressed) -> Vec<u8> {
    let mut buf = Vec::new();
    write_skbc(c, &mut buf).unwrap();
    buf
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fp32_roundtrip_is_exact(rows in 1usize..80, cols in 1usize..100, s in 0.0f64..=1.0, seed: u64) {
        let w = sparse_matrix(rows, cols, s, seed);
        let c = compress(&w, ValueWidth::Fp32);
        prop_assert_eq!(c.nnz(), w.len() - w.count_zeros());
        let back = decompress(&c);
        prop_assert!(back.data().iter().zip(w.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn container_bytes_roundtrip(rows in 1usize..40, cols in 1usize..70, s in 0.0f64..=1.0, seed: u64, wd in width()) {
        let c = compress(&sparse_matrix(rows, cols, s, seed), wd);
        let decoded = decode_skbc(&skbc_bytes(&c)).unwrap();
        prop_assert_eq!(decoded, c);
    }

    #[test]
    fn flipped_mask_bit_is_rejected(rows in 1usize..30, cols in 1usize..70, s in 0.0f64..1.0, seed: u64, bit in 0usize..32) {
        let c = compress(&sparse_matrix(rows, cols, s, seed), ValueWidth::Fp32);
        let mut bytes = skbc_bytes(&c);
        let bit = bit % cols.min(32);
        bytes[13 + bit / 8] ^= 1 << (bit % 8);
        prop_assert!(decode_skbc(&bytes).is_err());
    }

    #[test]
    fn kernel_matches_dense_oracle(rows in 1usize..120, cols in 1usize..200, s in 0.0f64..=1.0, seed: u64, wd in width(), tile in 1usize..40) {
        let w = sparse_matrix(rows, cols, s, seed);
        let mut rng = Rng::new(seed ^ 0xABCD);
        let x = Vector::new((0..cols).map(|_| rng.gaussian(0.0, 1.0) as f32).collect()).unwrap();
        let c = compress(&w, wd);
        let oracle_w = decompress(&c);
        let want = dense_matvec(&oracle_w, &x).unwrap();
        let got = sparse_matvec(&c, &x).unwrap();
        for r in 0..rows {
            let tol = 1e-5 * abs_products(&oracle_w, x.as_slice(), r) + 1e-30;
            prop_assert!((got.as_slice()[r] as f64 - want.as_slice()[r] as f64).abs() <= tol);
        }
        let tiled = sparse_matvec_tiled(&c, &x, tile).unwrap();
        prop_assert_eq!(tiled.as_slice(), got.as_slice());
    }

    #[test]
    fn magnitude_prune_keeps_the_largest(rows in 1usize..50, cols in 1usize..50, s in 0.0f64..=1.0, seed: u64) {
        let w = sparse_matrix(rows, cols, 0.0, seed);
        let (p, mask) = magnitude_prune(&w, s).unwrap();
        let k = prune_count(s, w.len());
        prop_assert_eq!(mask.kept(), w.len() - k);
        prop_assert_eq!(p.count_zeros(), k);
        let max_dropped = w.data().iter().zip(p.data()).filter(|(_, q)| **q == 0.0).map(|(a, _)| a.abs()).fold(0.0f32, f32::max);
        let min_kept = p.data().iter().filter(|q| **q != 0.0).map(|q| q.abs()).fold(f32::INFINITY, f32::min);
        prop_assert!(k == 0 || k == w.len() || max_dropped <= min_kept);
        for r in 0..rows {
            for c in 0..cols {
                let v = p.get(r, c);
                prop_assert_eq!(mask.keep(r, c), v != 0.0);
                if v != 0.0 {
                    prop_assert_eq!(v, w.get(r, c));
                }
            }
        }
    }

    #[test]
    fn nm_projection_matches_brute_force(rows in 1usize..8, blocks in 1usize..6, m in 1usize..=8, n_frac in 0.0f64..1.0, seed: u64) {
        let n = 1 + ((m - 1) as f64 * n_frac) as usize;
        let p = NmPattern::new(n, m).unwrap();
        let mut rng = Rng::new(seed);
        // few distinct magnitudes so ties are common
        let data = (0..rows * blocks * m).map(|_| (rng.below(5) as f32 - 2.0) * 0.5).collect();
        let w = DenseMatrix::new(rows, blocks * m, data).unwrap();
        let (out, mask) = nm_project(&w, p).unwrap();
        prop_assert!(p.conforms(&out));
        for r in 0..rows {
            for b in 0..blocks {
                let keep = brute_force_block(&w.row(r)[b * m..(b + 1) * m], n);
                for (j, k) in keep.iter().enumerate() {
                    prop_assert_eq!(mask.keep(r, b * m + j), *k);
                }
            }
        }
    }

    #[test]
    fn int8_error_within_half_scale(rows in 1usize..30, cols in 1usize..60, seed: u64, scale in 1e-3f32..1e3) {
        let mut w = sparse_matrix(rows, cols, 0.3, seed);
        w.data_mut().iter_mut().for_each(|v| *v *= scale);
        let q = quantize_int8(&w);
        let d = dequantize(&q);
        for r in 0..rows {
            let s = q.scales()[r];
            for c in 0..cols {
                prop_assert!((d.get(r, c) - w.get(r, c)).abs() <= s / 2.0);
            }
        }
    }

    #[test]
    fn prune_then_quantize_keeps_the_pattern(rows in 1usize..30, cols in 1usize..60, s in 0.0f64..=1.0, seed: u64) {
        let w = sparse_matrix(rows, cols, s, seed);
        let c = sparse_quant_compress(&w);
        let mask = PruneMask::from_nonzeros(&w);
        prop_assert_eq!(c.mask_words(), mask.words());
        // kept weights below half a step dequantize to zero; pruned ones never come back
        let back = decompress(&c);
        prop_assert!(back.data().iter().zip(w.data()).all(|(b, a)| *a != 0.0 || *b == 0.0));
    }

    #[test]
    fn mask_bytes_roundtrip(rows in 1usize..40, cols in 1usize..90, s in 0.0f64..=1.0, seed: u64) {
        let mask = PruneMask::from_nonzeros(&sparse_matrix(rows, cols, s, seed));
        prop_assert_eq!(PruneMask::from_bytes(&mask.to_bytes()).unwrap(), mask);
    }
}

#[test]
fn edge_case_matrices_roundtrip() {
    let mut single = DenseMatrix::zeros(7, 33);
    single.set(6, 32, -2.5);
    let cases = [
        DenseMatrix::zeros(5, 40),
        sparse_matrix(9, 65, 0.0, 3),
        single,
        sparse_matrix(1, 1, 0.0, 4),
    ];
    for w in &cases {
        for wd in [ValueWidth::Fp32, ValueWidth::Fp16, ValueWidth::Int8] {
            let c = compress(w, wd);
            assert_eq!(decode_skbc(&skbc_bytes(&c)).unwrap(), c);
        }
        assert_eq!(&decompress(&compress(w, ValueWidth::Fp32)), w);
    }
}

#[test]
fn truncated_and_padded_containers_are_rejected() {
    let c = compress(&sparse_matrix(4, 37, 0.5, 1), ValueWidth::Fp16);
    let bytes = skbc_bytes(&c);
    assert!(decode_skbc(&bytes[..bytes.len() - 1]).is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_skbc(&longer).is_err());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(decode_skbc(&bad_magic).is_err());
    // a pad bit beyond column 37 in the second mask word of row 0
    let mut pad = bytes;
    pad[13 + 4] |= 1 << 6;
    assert!(decode_skbc(&pad).is_err());
}

#[test]
fn standard_nm_patterns_give_exact_sparsity() {
    let w = sparse_matrix(8, 256, 0.0, 9);
    for (n, m, want) in [(2, 4, 0.5), (16, 32, 0.5), (16, 64, 0.75), (16, 128, 0.875)] {
        let (out, _) = nm_project(&w, NmPattern::new(n, m).unwrap()).unwrap();
        let s = out.count_zeros() as f64 / out.len() as f64;
        assert_eq!(s, want, "{n}:{m}");
    }
}
