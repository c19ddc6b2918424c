use bfica::crypto::{hash, render_fixture_file, KeyPair, PublicKey, Signature};

const FIXTURE: &str = include_str!("../fixtures/crypto_vectors.txt");

#[test]
fn fixture_file_is_current() {
    assert_eq!(render_fixture_file(), FIXTURE);
}

#[test]
fn fixture_vectors_verify() {
    for line in FIXTURE.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split(' ').collect();
        let msg = if f[2] == "-" { Vec::new() } else { hex::decode(f[2]).unwrap() };
        let pk = PublicKey::from_hex(f[3]).unwrap();
        let sig = Signature::from_bytes(hex::decode(f[4]).unwrap().try_into().unwrap());
        assert!(pk.verify(&msg, &sig), "{}", f[0]);
        assert_eq!(hash(&msg).to_hex(), f[5]);
    }
}

// RFC 8032 Ed25519 test 1
#[test]
fn ed25519_reference_vector() {
    let seed: [u8; 32] = hex::decode("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
        .unwrap()
        .try_into()
        .unwrap();
    let kp = KeyPair::from_seed(seed);
    assert_eq!(
        hex::encode(&kp.public().as_bytes()[..32]),
        "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a"
    );
    assert_eq!(
        kp.sign(b"").to_hex(),
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
    );
}

// FIPS 180-2 two-block message
#[test]
fn sha256_reference_vector() {
    assert_eq!(
        hash(b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq").to_hex(),
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"
    );
}
