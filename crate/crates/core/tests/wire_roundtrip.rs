mod common;

use proptest::prelude::*;
use smartho_core::pipeline::{self, ParseResult, ProgramKind};
use smartho_core::wire::{self, TagHeader, ETHERTYPE_CONTROL, ETHERTYPE_INSTRUCTION};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(p in common::valid_packet()) {
        prop_assert!(p.is_canonical());
        let bytes = wire::serialize(&p).unwrap();
        prop_assert_eq!(bytes.len(), p.wire_len());
        prop_assert_eq!(wire::deserialize(&bytes).unwrap(), p);
    }

    #[test]
    fn serialization_is_deterministic(p in common::valid_packet()) {
        prop_assert_eq!(wire::serialize(&p).unwrap(), wire::serialize(&p.clone()).unwrap());
    }

    #[test]
    fn truncation_is_reported(p in common::valid_packet(), cut in 1usize..40) {
        let bytes = wire::serialize(&p).unwrap();
        let keep = p.header_len().saturating_sub(cut);
        prop_assume!(keep < p.header_len());
        prop_assert!(wire::deserialize(&bytes[..keep]).is_err());
    }

    #[test]
    fn tag_matches_ether_type(p in common::valid_packet()) {
        let q = wire::deserialize(&wire::serialize(&p).unwrap()).unwrap();
        match q.ethernet.ether_type {
            ETHERTYPE_INSTRUCTION => prop_assert!(matches!(q.tag, Some(TagHeader::Instruction { .. })), "instruction tag"),
            ETHERTYPE_CONTROL => prop_assert!(matches!(q.tag, Some(TagHeader::Control { .. })), "control tag"),
            _ => {}
        }
    }

    /// Whatever the DU parser accepts deparses to the input bytes.
    #[test]
    fn du_parser_deparse_identity(p in common::valid_packet()) {
        let bytes = wire::serialize(&p).unwrap();
        let prog = pipeline::builtin(ProgramKind::Du);
        if let ParseResult::Accept(parsed) = prog.parser().run(&bytes) {
            prop_assert_eq!(pipeline::deparse(&parsed).unwrap(), bytes);
        }
    }
}
