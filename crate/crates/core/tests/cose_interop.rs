use gridsign_core::cert::CertificateChain;
use gridsign_core::cose::{self, decode_message};
use gridsign_core::crypto::{self, SigningAlgorithm};
use gridsign_core::firmware::{package_firmware, FirmwarePackage};
use gridsign_core::testpki::{derive_key, issue, CertTemplate, TestPki, DEFAULT_NOT_AFTER, DEFAULT_NOT_BEFORE};
use gridsign_core::verifier::verify_update;
use gridsign_core::KeyPair;
use gridsign_oracles::cose as reference;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const CASES: u64 = 120;
const NOW: u64 = DEFAULT_NOT_BEFORE + 3_600;

fn firmware(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = match rng.next_u32() % 4 {
        0 => 0,
        1 => (rng.next_u32() % 24) as usize,
        2 => (rng.next_u32() % 4096) as usize,
        _ => 65_536 + (rng.next_u32() % 1000) as usize,
    };
    let mut fw = vec![0u8; len];
    rng.fill_bytes(&mut fw);
    fw
}

fn version(rng: &mut ChaCha8Rng) -> String {
    format!("{}.{}.{}", rng.next_u32() % 10, rng.next_u32() % 100, rng.next_u32() % 1000)
}

#[test]
fn toolkit_messages_verify_under_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC05E);
    for case in 0..CASES {
        let pki = TestPki::generate(case % 16, 1 + (case % 3) as usize);
        let fw = firmware(&mut rng);
        let ver = version(&mut rng);
        let ts = NOW + rng.next_u32() as u64;
        let p = FirmwarePackage::new(fw.clone(), ver.clone()).unwrap();
        let packet = package_firmware(
            &p,
            &pki.leaf_key,
            &pki.chain,
            SigningAlgorithm::EcdsaP256Sha256,
            ts,
        )
        .unwrap();

        let v = reference::verify_sign1(&packet).unwrap_or_else(|e| panic!("case {case}: {e}"));
        assert_eq!(v.timestamp, Some(ts));
        let ders: Vec<Vec<u8>> = pki.chain.certs().iter().map(|c| c.der().to_vec()).collect();
        assert_eq!(v.chain, ders);
        let payload = reference::decode_payload(&v.payload).unwrap();
        assert_eq!(payload.firmware, fw);
        assert_eq!(payload.version, ver);
        assert_eq!(payload.digest, reference::sha256(&fw));
        // the payload bytes are the reference library's deterministic encoding too
        assert_eq!(v.payload, reference::payload(&fw, &ver));
    }
}

/// A chain ending in `pki`'s top CA, with a fresh leaf for `leaf_key`.
fn chain_for(pki: &TestPki, seed: u64, leaf_key: &KeyPair) -> CertificateChain {
    let n = pki.chain.len();
    let (issuer, issuer_key) = if n == 1 {
        (pki.root.clone(), pki.root_key.clone())
    } else {
        (
            pki.chain.certs()[1].clone(),
            derive_key(seed, &format!("intermediate-{}", n - 1)),
        )
    };
    let leaf = issue(
        &CertTemplate {
            subject: "CN=External Signer,O=Interop".into(),
            serial: 7,
            not_before: DEFAULT_NOT_BEFORE,
            not_after: DEFAULT_NOT_AFTER,
            ca: false,
        },
        leaf_key,
        Some((&issuer, &issuer_key)),
    )
    .unwrap();
    let mut certs = vec![leaf];
    certs.extend_from_slice(&pki.chain.certs()[1..]);
    CertificateChain::new(certs).unwrap()
}

#[test]
fn reference_messages_verify_under_toolkit() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0C05E);
    for case in 0..CASES {
        let seed = case % 16;
        let pki = TestPki::generate(seed, 1 + (case % 3) as usize);
        let signer = reference::RingSigner::generate();
        let leaf_key = KeyPair::from_pkcs8_der(signer.pkcs8_der()).unwrap();
        let chain = chain_for(&pki, seed, &leaf_key);
        assert_eq!(
            reference::cert_public_point(chain.leaf().der()).unwrap(),
            signer.public_point()
        );

        let fw = firmware(&mut rng);
        let ver = version(&mut rng);
        let ders: Vec<Vec<u8>> = chain.certs().iter().map(|c| c.der().to_vec()).collect();
        let packet = reference::sign1(reference::payload(&fw, &ver), &ders, NOW, &signer);

        let report = verify_update(&packet, &pki.trust_store(), NOW);
        let accepted = report.accepted().unwrap_or_else(|| panic!("case {case}: {report:?}"));
        assert_eq!(accepted.package.firmware(), fw.as_slice());
        assert_eq!(accepted.package.version(), ver);
        assert_eq!(accepted.timestamp, Some(NOW));

        // and the wrong key is caught
        let stranger = reference::RingSigner::generate();
        let forged = reference::sign1(reference::payload(&fw, &ver), &ders, NOW, &stranger);
        assert!(!verify_update(&forged, &pki.trust_store(), NOW).is_accepted());
    }
}

#[test]
fn sig_structure_matches_reference() {
    let pki = TestPki::generate(1, 2);
    let signer = reference::RingSigner::generate();
    let ders: Vec<Vec<u8>> = pki.chain.certs().iter().map(|c| c.der().to_vec()).collect();
    let packet = reference::sign1(b"payload".to_vec(), &ders, 5, &signer);
    let ours = decode_message(&packet).unwrap();
    let tbs = ours.to_be_signed();
    assert!(reference::verify_raw(signer.public_point(), &tbs, &ours.signature));
    assert_eq!(
        tbs,
        cose::build_sig_structure(&[0xa1, 0x01, 0x26], &[], b"payload")
    );
    // re-encoding a foreign message reproduces it byte for byte
    assert_eq!(cose::encode_message(&ours).unwrap(), packet);
}

#[test]
fn raw_ecdsa_interop() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..50 {
        let mut msg = vec![0u8; (rng.next_u32() % 300) as usize];
        rng.fill_bytes(&mut msg);

        let ours = derive_key(i, "ecdsa");
        let point = ours.public_key().to_sec1_bytes();
        let sig = crypto::sign(&msg, &ours).unwrap();
        assert_eq!(sig.len(), 64);
        assert!(reference::verify_raw(&point, &msg, &sig));
        let der = crypto::sign_der(&msg, &ours).unwrap();
        assert!(reference::verify_der(&point, &msg, &der));

        let theirs = reference::RingSigner::generate();
        let theirs_key = KeyPair::from_pkcs8_der(theirs.pkcs8_der()).unwrap();
        let sig = theirs.sign(&msg);
        let alg = SigningAlgorithm::EcdsaP256Sha256;
        assert!(crypto::verify(&msg, &sig, theirs_key.public_key(), alg).unwrap());
        msg.push(0);
        assert!(!crypto::verify(&msg, &sig, theirs_key.public_key(), alg).unwrap());
    }
}

#[test]
fn certificate_signatures_verify_under_reference() {
    let pki = TestPki::generate(3, 3);
    let certs = pki.chain.certs();
    for pair in certs.windows(2) {
        let issuer_point = reference::cert_public_point(pair[1].der()).unwrap();
        let sig = cert_signature(pair[0].der());
        assert!(reference::verify_der(issuer_point, pair[0].tbs_der(), &sig));
    }
}

/// The signature BIT STRING is the last element of a certificate.
fn cert_signature(der: &[u8]) -> Vec<u8> {
    // ECDSA DER signatures are at most 72 bytes; find the BIT STRING header
    // with zero unused bits that runs exactly to the end.
    (0..der.len() - 3)
        .rev()
        .find(|&i| der[i] == 0x03 && der[i + 2] == 0x00 && i + 2 + der[i + 1] as usize == der.len())
        .map(|i| der[i + 3..].to_vec())
        .expect("signature bit string")
}
