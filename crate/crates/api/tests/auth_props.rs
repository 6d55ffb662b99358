use biotrak_api::auth::verify;
use biotrak_api::AuthHeaders;
use biotrak_core::{ActorRecord, ActorRegistry, Role, SigningKey};
use proptest::prelude::*;

fn registry(key: &SigningKey) -> ActorRegistry {
    let mut r = ActorRegistry::default();
    r.insert(ActorRecord {
        actor_id: key.fingerprint(),
        public_key: key.public_key(),
        roles: [Role::Transporter].into(),
        display_name: "T".into(),
    });
    r
}

proptest! {
    #[test]
    fn any_body_change_breaks_the_signature(
        seed in any::<[u8; 32]>(),
        body in proptest::collection::vec(any::<u8>(), 1..512),
        pos in any::<prop::sample::Index>(),
        flip in 1u8..=255,
        ts in 1_000u64..4_000_000_000,
    ) {
        let key = SigningKey::from_seed(seed);
        let reg = registry(&key);
        let h = AuthHeaders::sign(&key, "POST", "/v1/tx", &body, ts);
        prop_assert!(verify(&h, "POST", "/v1/tx", &body, ts, &reg).is_ok());
        let mut tampered = body.clone();
        tampered[pos.index(body.len())] ^= flip;
        prop_assert_eq!(verify(&h, "POST", "/v1/tx", &tampered, ts, &reg).unwrap_err().code(), "bad-signature");
    }

    #[test]
    fn skew_beyond_the_window_is_stale(skew in 301u64..100_000, ahead in any::<bool>()) {
        let key = SigningKey::from_seed([1; 32]);
        let reg = registry(&key);
        let now = 1_700_000_000u64;
        let ts = if ahead { now + skew } else { now - skew };
        let h = AuthHeaders::sign(&key, "POST", "/p", b"", ts);
        prop_assert_eq!(verify(&h, "POST", "/p", b"", now, &reg).unwrap_err().code(), "stale-request");
    }

    #[test]
    fn other_keys_cannot_sign_for_an_actor(a in any::<[u8; 32]>(), b in any::<[u8; 32]>()) {
        prop_assume!(a != b);
        let owner = SigningKey::from_seed(a);
        let forger = SigningKey::from_seed(b);
        let reg = registry(&owner);
        let mut h = AuthHeaders::sign(&forger, "POST", "/p", b"x", 5_000);
        h.actor = owner.fingerprint().to_string();
        prop_assert_eq!(verify(&h, "POST", "/p", b"x", 5_000, &reg).unwrap_err().code(), "bad-signature");
    }
}
