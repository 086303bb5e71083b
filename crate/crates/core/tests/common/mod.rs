#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use proptest::prelude::*;
use smartho_core::wire::{
    inst, EthernetHeader, ExtHeader, MacAddr, Packet, SmarthoHeader, TagHeader, UeContextHeader,
    ETHERTYPE_CONTROL, ETHERTYPE_INSTRUCTION, ETHERTYPE_SMARTHO, SECURITY_KEY_MASK,
};

pub fn mac() -> impl Strategy<Value = MacAddr> {
    any::<[u8; 6]>().prop_map(MacAddr)
}

pub fn ue_context() -> impl Strategy<Value = UeContextHeader> {
    (any::<u16>(), any::<u16>(), any::<u32>(), any::<u8>(), 0..=SECURITY_KEY_MASK).prop_map(
        |(ue_id, src_gnb_addr, ue_ambr, security_algorithm, security_base_key)| UeContextHeader {
            ue_id,
            src_gnb_addr,
            ue_ambr,
            security_algorithm,
            security_base_key,
        },
    )
}

fn eth(dst: MacAddr, src: MacAddr, ether_type: u16) -> EthernetHeader {
    EthernetHeader { dst, src, ether_type }
}

/// Valid packets covering every header stack the decoder can produce.
pub fn valid_packet() -> impl Strategy<Value = Packet> {
    let payload = proptest::collection::vec(any::<u8>(), 0..64);
    let instruction = (prop::sample::select(inst::ALL.to_vec()), any::<u16>(), ue_context()).prop_map(
        |(tag_value, ue_id, ctx)| {
            let tag = TagHeader::Instruction { tag_value, ue_id };
            let ext = (tag_value == inst::UE_CONTEXT).then_some(ExtHeader::UeContext(ctx));
            (ETHERTYPE_INSTRUCTION, Some(tag), ext)
        },
    );
    let control = (1u8..=12, any::<u16>())
        .prop_map(|(tag_value, ue_id)| (ETHERTYPE_CONTROL, Some(TagHeader::Control { tag_value, ue_id }), None));
    let smartho = (any::<u32>(), any::<u32>()).prop_map(|(ctrl_info, frwd_tag_prt)| {
        (
            ETHERTYPE_SMARTHO,
            None,
            Some(ExtHeader::Smartho(SmarthoHeader { ctrl_info, frwd_tag_prt })),
        )
    });
    let forward = (0x0104u16..=0x01FF, any::<u8>())
        .prop_map(|(et, dest_port)| (et, Some(TagHeader::Forward { dest_port }), None));
    let plain = any::<u16>()
        .prop_filter("outside the experimental range", |et| !(0x0101..=0x01FF).contains(et))
        .prop_map(|et| (et, None, None));
    let stack = prop_oneof![instruction, control, smartho, forward, plain];
    (mac(), mac(), stack, payload).prop_map(|(dst, src, (et, tag, ext), payload)| {
        let mut p = Packet::new(eth(dst, src, et)).with_payload(payload);
        p.tag = tag;
        p.ext = ext;
        p
    })
}

pub fn q(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn pow(x: &BigRational, n: u32) -> BigRational {
    let mut acc = BigRational::one();
    for _ in 0..n {
        acc *= x;
    }
    acc
}

/// λ/(μ−λ) + B·λ^(B+1) / (μ·(μ^B − λ^B)), evaluated exactly.
pub fn router_oracle(lambda: f64, mu: f64, b: u32) -> BigRational {
    let (l, m) = (q(lambda), q(mu));
    let bq = BigRational::from_integer(BigInt::from(b));
    &l / (&m - &l) + bq * pow(&l, b + 1) / (&m * (pow(&m, b) - pow(&l, b)))
}

pub fn rel_err(got: f64, exact: &BigRational) -> f64 {
    let diff = (q(got) - exact).abs();
    if exact.is_zero() {
        return diff.to_f64().unwrap();
    }
    (diff / exact.abs()).to_f64().unwrap()
}

/// 1000 (lambda, mu, buffer) points spanning light load to overload.
pub fn router_grid() -> Vec<(f64, f64, u32)> {
    let buffers = [1u32, 2, 3, 5, 8, 10, 16, 32, 48, 64];
    let mus = [0.5, 1.0, 2.0, 3.7, 10.0, 25.0, 40.0, 100.0, 1e3, 1e4];
    let ratios = [0.05, 0.15, 0.3, 0.45, 0.6, 0.75, 0.9, 0.94, 1.2, 1.8];
    let mut v = Vec::with_capacity(1000);
    for &b in &buffers {
        for &mu in &mus {
            for &r in &ratios {
                v.push((r * mu, mu, b));
            }
        }
    }
    v
}
