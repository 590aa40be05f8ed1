//! Payload bodies carried inside envelopes, each with a canonical encoding.

use sha2::{Digest, Sha256};
use zeroize::Zeroizing;

use super::{DataClassification, DataId, GrantId, PrincipalId, Reason, RequestId, Tick};
use crate::codec::{CanonicalReader, CanonicalWriter, CodecError};
use crate::crypto::{KeyId, PublicKey, Signature};

/// OAEP label for the inner layer of an owner verification.
pub const BINDING_LABEL: &str = "dualguard/v1/owner-binding";

fn classification(r: &mut CanonicalReader<'_>) -> Result<DataClassification, CodecError> {
    let s = r.str()?;
    DataClassification::parse(s).ok_or_else(|| CodecError::BadTag {
        expected: "public|private|shared".into(),
        found: s.into(),
    })
}

fn signature(r: &mut CanonicalReader<'_>) -> Result<Signature, CodecError> {
    Ok(Signature {
        signer_key_id: KeyId::new(r.string()?),
        sig_bytes: r.bytes()?.to_vec(),
    })
}

fn write_signature(w: &mut CanonicalWriter, sig: &Signature) {
    w.str(sig.signer_key_id.as_str()).bytes(&sig.sig_bytes);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterData {
    pub data_id: DataId,
    pub classification: DataClassification,
}

impl RegisterData {
    const TAG: &'static str = "RegisterData/1";

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag(Self::TAG);
        w.str(self.data_id.as_str()).str(self.classification.as_str());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = CanonicalReader::new(bytes);
        r.expect_tag(Self::TAG)?;
        let out = RegisterData {
            data_id: DataId::new(r.string()?),
            classification: classification(&mut r)?,
        };
        r.finish()?;
        Ok(out)
    }
}

/// The data public key, sent in clear to the cloud server and to the owner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPubKeyNotice {
    pub data_id: DataId,
    pub owner_id: PrincipalId,
    pub classification: DataClassification,
    pub data_public_key: PublicKey,
}

impl DataPubKeyNotice {
    const TAG: &'static str = "DataPubKeyNotice/1";

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag(Self::TAG);
        w.str(self.data_id.as_str())
            .str(self.owner_id.as_str())
            .str(self.classification.as_str())
            .bytes(&self.data_public_key.to_der());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = CanonicalReader::new(bytes);
        r.expect_tag(Self::TAG)?;
        let data_id = DataId::new(r.string()?);
        let owner_id = PrincipalId::new(r.string()?);
        let classification = classification(&mut r)?;
        let data_public_key = PublicKey::from_der(r.bytes()?).map_err(|_| CodecError::Invalid(4))?;
        r.finish()?;
        Ok(DataPubKeyNotice {
            data_id,
            owner_id,
            classification,
            data_public_key,
        })
    }
}

/// Owner to cloud: the plaintext to be protected under main cryptography.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataUpload {
    pub data_id: DataId,
    pub plaintext: Zeroizing<Vec<u8>>,
}

impl DataUpload {
    const TAG: &'static str = "DataUpload/1";

    pub fn encode(&self) -> Zeroizing<Vec<u8>> {
        let mut w = CanonicalWriter::with_tag(Self::TAG);
        w.str(self.data_id.as_str()).bytes(&self.plaintext);
        Zeroizing::new(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = CanonicalReader::new(bytes);
        r.expect_tag(Self::TAG)?;
        let out = DataUpload {
            data_id: DataId::new(r.string()?),
            plaintext: Zeroizing::new(r.bytes()?.to_vec()),
        };
        r.finish()?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessRequest {
    pub request_id: RequestId,
    pub data_id: DataId,
    pub applicant_id: PrincipalId,
    pub purpose: String,
}

impl AccessRequest {
    const TAG: &'static str = "AccessRequest/1";

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag(Self::TAG);
        w.str(self.request_id.as_str())
            .str(self.data_id.as_str())
            .str(self.applicant_id.as_str())
            .str(&self.purpose);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = CanonicalReader::new(bytes);
        r.expect_tag(Self::TAG)?;
        let out = AccessRequest {
            request_id: RequestId::new(r.string()?),
            data_id: DataId::new(r.string()?),
            applicant_id: PrincipalId::new(r.string()?),
            purpose: r.string()?,
        };
        r.finish()?;
        Ok(out)
    }
}

/// Agent to owner: an applicant wants Shared data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OwnerApprovalRequest {
    pub request_id: RequestId,
    pub data_id: DataId,
    pub applicant_id: PrincipalId,
    pub purpose: String,
}

impl OwnerApprovalRequest {
    const TAG: &'static str = "OwnerApprovalRequest/1";

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag(Self::TAG);
        w.str(self.request_id.as_str())
            .str(self.data_id.as_str())
            .str(self.applicant_id.as_str())
            .str(&self.purpose);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = CanonicalReader::new(bytes);
        r.expect_tag(Self::TAG)?;
        let out = OwnerApprovalRequest {
            request_id: RequestId::new(r.string()?),
            data_id: DataId::new(r.string()?),
            applicant_id: PrincipalId::new(r.string()?),
            purpose: r.string()?,
        };
        r.finish()?;
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Decision {
    Approve,
    Deny,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Approve => "approve",
            Decision::Deny => "deny",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "approve" => Some(Decision::Approve),
            "deny" => Some(Decision::Deny),
            _ => None,
        }
    }
}

/// Owner's double-layer answer.
///
/// The inner layer is `decision` and a digest of `request_id`, OAEP-encrypted
/// under the data public key the owner received at registration; only the
/// Agent, which vaults the data private key, can open it. The outer layer is
/// the owner's signature over request id, decision and inner layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OwnerVerification {
    pub request_id: RequestId,
    pub decision: Decision,
    pub inner_layer: Vec<u8>,
    pub outer_signature: Signature,
}

impl OwnerVerification {
    const TAG: &'static str = "OwnerVerification/1";

    pub fn inner_plaintext(request_id: &RequestId, decision: Decision) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag(BINDING_LABEL);
        w.str(decision.as_str())
            .bytes(&Sha256::digest(request_id.as_str().as_bytes()));
        w.finish()
    }

    pub fn outer_signed_bytes(request_id: &RequestId, decision: Decision, inner_layer: &[u8]) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag("dualguard/v1/owner-verification");
        w.str(request_id.as_str())
            .str(decision.as_str())
            .bytes(inner_layer);
        w.finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag(Self::TAG);
        w.str(self.request_id.as_str())
            .str(self.decision.as_str())
            .bytes(&self.inner_layer);
        write_signature(&mut w, &self.outer_signature);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = CanonicalReader::new(bytes);
        r.expect_tag(Self::TAG)?;
        let request_id = RequestId::new(r.string()?);
        let decision = Decision::parse(r.str()?).ok_or(CodecError::Invalid(2))?;
        let inner_layer = r.bytes()?.to_vec();
        let outer_signature = signature(&mut r)?;
        r.finish()?;
        Ok(OwnerVerification {
            request_id,
            decision,
            inner_layer,
            outer_signature,
        })
    }
}

/// Grant metadata, countersigned by the Agent so the cloud server can check
/// it without contacting the Agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrantToken {
    pub grant_id: GrantId,
    pub data_id: DataId,
    pub applicant_id: PrincipalId,
    pub request_id: RequestId,
    pub expiry: Tick,
    pub one_time: bool,
    pub agent_signature: Signature,
}

impl GrantToken {
    const TAG: &'static str = "GrantToken/1";

    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag("dualguard/v1/grant");
        w.str(self.grant_id.as_str())
            .str(self.data_id.as_str())
            .str(self.applicant_id.as_str())
            .str(self.request_id.as_str())
            .u64(self.expiry)
            .bool(self.one_time);
        w.finish()
    }

    fn write(&self, w: &mut CanonicalWriter) {
        w.str(Self::TAG)
            .str(self.grant_id.as_str())
            .str(self.data_id.as_str())
            .str(self.applicant_id.as_str())
            .str(self.request_id.as_str())
            .u64(self.expiry)
            .bool(self.one_time);
        write_signature(w, &self.agent_signature);
    }

    fn read(r: &mut CanonicalReader<'_>) -> Result<Self, CodecError> {
        r.expect_tag(Self::TAG)?;
        Ok(GrantToken {
            grant_id: GrantId::new(r.string()?),
            data_id: DataId::new(r.string()?),
            applicant_id: PrincipalId::new(r.string()?),
            request_id: RequestId::new(r.string()?),
            expiry: r.u64()?,
            one_time: r.bool()?,
            agent_signature: signature(r)?,
        })
    }
}

fn encode_grant_with_key(tag: &str, grant: &GrantToken, key: &[u8]) -> Zeroizing<Vec<u8>> {
    let mut w = CanonicalWriter::with_tag(tag);
    grant.write(&mut w);
    w.bytes(key);
    Zeroizing::new(w.finish())
}

fn decode_grant_with_key(tag: &str, bytes: &[u8]) -> Result<(GrantToken, Zeroizing<Vec<u8>>), CodecError> {
    let mut r = CanonicalReader::new(bytes);
    r.expect_tag(tag)?;
    let grant = GrantToken::read(&mut r)?;
    let key = Zeroizing::new(r.bytes()?.to_vec());
    r.finish()?;
    Ok((grant, key))
}

/// Agent to applicant: the grant plus the PKCS#8 data private key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrantIssue {
    pub grant: GrantToken,
    pub data_private_key: Zeroizing<Vec<u8>>,
}

impl GrantIssue {
    const TAG: &'static str = "GrantIssue/1";

    pub fn encode(&self) -> Zeroizing<Vec<u8>> {
        encode_grant_with_key(Self::TAG, &self.grant, &self.data_private_key)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let (grant, data_private_key) = decode_grant_with_key(Self::TAG, bytes)?;
        Ok(GrantIssue {
            grant,
            data_private_key,
        })
    }
}

/// Applicant to cloud: redemption of a grant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CloudAccess {
    pub grant: GrantToken,
    pub data_private_key: Zeroizing<Vec<u8>>,
}

impl CloudAccess {
    const TAG: &'static str = "CloudAccess/1";

    pub fn encode(&self) -> Zeroizing<Vec<u8>> {
        encode_grant_with_key(Self::TAG, &self.grant, &self.data_private_key)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let (grant, data_private_key) = decode_grant_with_key(Self::TAG, bytes)?;
        Ok(CloudAccess {
            grant,
            data_private_key,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataResponse {
    pub data_id: DataId,
    pub grant_id: GrantId,
    pub plaintext: Zeroizing<Vec<u8>>,
}

impl DataResponse {
    const TAG: &'static str = "DataResponse/1";

    pub fn encode(&self) -> Zeroizing<Vec<u8>> {
        let mut w = CanonicalWriter::with_tag(Self::TAG);
        w.str(self.data_id.as_str())
            .str(self.grant_id.as_str())
            .bytes(&self.plaintext);
        Zeroizing::new(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = CanonicalReader::new(bytes);
        r.expect_tag(Self::TAG)?;
        let out = DataResponse {
            data_id: DataId::new(r.string()?),
            grant_id: GrantId::new(r.string()?),
            plaintext: Zeroizing::new(r.bytes()?.to_vec()),
        };
        r.finish()?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Denial {
    pub request_id: RequestId,
    pub data_id: DataId,
    pub reason: String,
}

impl Denial {
    const TAG: &'static str = "Denial/1";

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag(Self::TAG);
        w.str(self.request_id.as_str())
            .str(self.data_id.as_str())
            .str(&self.reason);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = CanonicalReader::new(bytes);
        r.expect_tag(Self::TAG)?;
        let out = Denial {
            request_id: RequestId::new(r.string()?),
            data_id: DataId::new(r.string()?),
            reason: r.string()?,
        };
        r.finish()?;
        Ok(out)
    }
}

/// Reply to an authenticated envelope that its handler refused.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorNotice {
    pub reason: Reason,
    pub subject: String,
    pub refers_to: [u8; 32],
}

impl ErrorNotice {
    const TAG: &'static str = "Error/1";

    pub fn encode(&self) -> Vec<u8> {
        let mut w = CanonicalWriter::with_tag(Self::TAG);
        w.str(self.reason.as_str())
            .str(&self.subject)
            .bytes(&self.refers_to);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = CanonicalReader::new(bytes);
        r.expect_tag(Self::TAG)?;
        let reason = Reason::parse(r.str()?).ok_or(CodecError::Invalid(1))?;
        let out = ErrorNotice {
            reason,
            subject: r.string()?,
            refers_to: r.array()?,
        };
        r.finish()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::test_keys::pair;

    fn sig() -> Signature {
        Signature {
            signer_key_id: KeyId::new("rsa:0011223344556677"),
            sig_bytes: vec![9; 256],
        }
    }

    #[test]
    fn every_payload_decodes_what_it_encodes() {
        let grant = GrantToken {
            grant_id: "g1".into(),
            data_id: "d1".into(),
            applicant_id: "bob".into(),
            request_id: "r1".into(),
            expiry: 130,
            one_time: true,
            agent_signature: sig(),
        };
        let key = Zeroizing::new(vec![1, 2, 3]);
        let rd = RegisterData { data_id: "d1".into(), classification: DataClassification::Shared };
        assert_eq!(RegisterData::decode(&rd.encode()).unwrap(), rd);
        let n = DataPubKeyNotice {
            data_id: "d1".into(),
            owner_id: "alice".into(),
            classification: DataClassification::Public,
            data_public_key: pair("data").public,
        };
        assert_eq!(DataPubKeyNotice::decode(&n.encode()).unwrap(), n);
        let up = DataUpload { data_id: "d1".into(), plaintext: Zeroizing::new(b"abc".to_vec()) };
        assert_eq!(DataUpload::decode(&up.encode()).unwrap(), up);
        let ar = AccessRequest { request_id: "r1".into(), data_id: "d1".into(), applicant_id: "bob".into(), purpose: "audit".into() };
        assert_eq!(AccessRequest::decode(&ar.encode()).unwrap(), ar);
        let oa = OwnerApprovalRequest { request_id: "r1".into(), data_id: "d1".into(), applicant_id: "bob".into(), purpose: "".into() };
        assert_eq!(OwnerApprovalRequest::decode(&oa.encode()).unwrap(), oa);
        let ov = OwnerVerification { request_id: "r1".into(), decision: Decision::Deny, inner_layer: vec![5; 256], outer_signature: sig() };
        assert_eq!(OwnerVerification::decode(&ov.encode()).unwrap(), ov);
        let gi = GrantIssue { grant: grant.clone(), data_private_key: key.clone() };
        assert_eq!(GrantIssue::decode(&gi.encode()).unwrap(), gi);
        let ca = CloudAccess { grant, data_private_key: key };
        assert_eq!(CloudAccess::decode(&ca.encode()).unwrap(), ca);
        let dr = DataResponse { data_id: "d1".into(), grant_id: "g1".into(), plaintext: Zeroizing::new(vec![]) };
        assert_eq!(DataResponse::decode(&dr.encode()).unwrap(), dr);
        let dn = Denial { request_id: "r1".into(), data_id: "d1".into(), reason: "owner_denied".into() };
        assert_eq!(Denial::decode(&dn.encode()).unwrap(), dn);
        let en = ErrorNotice { reason: Reason::BadGrant, subject: "g1".into(), refers_to: [3; 32] };
        assert_eq!(ErrorNotice::decode(&en.encode()).unwrap(), en);
    }

    #[test]
    fn payloads_do_not_cross_decode() {
        let ca = CloudAccess {
            grant: GrantToken {
                grant_id: "g".into(),
                data_id: "d".into(),
                applicant_id: "a".into(),
                request_id: "r".into(),
                expiry: 1,
                one_time: true,
                agent_signature: sig(),
            },
            data_private_key: Zeroizing::new(vec![1]),
        };
        assert!(GrantIssue::decode(&ca.encode()).is_err());
    }

    #[test]
    fn inner_binding_fits_one_oaep_block() {
        let long = RequestId::new("x".repeat(10_000));
        assert!(OwnerVerification::inner_plaintext(&long, Decision::Approve).len() <= 190);
    }
}
