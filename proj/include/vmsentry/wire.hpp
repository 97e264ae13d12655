// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/evidence.hpp"

#include <variant>

namespace vmsentry {

// ---------------------------------------------------------------------------
// Message vocabulary

// Proof that a node's layer-two image is untampered: the node presents its
// endorsed key, the publisher's signature over the core-image hash, and its
// own signature over the hash it recomputed at boot.
struct StackAttestation {
    Bytes node_public_key;
    Bytes node_key_endorsement; // publisher signature over node_public_key
    Digest core_hash{};         // recomputed hash of the core image payload
    Bytes core_signature;       // publisher signature over core_hash
    Bytes report_signature;     // node signature over core_hash
};

struct JoinRequest {
    NodeProfile profile;
    StackAttestation attestation;
};

struct ProvisionVm {
    VmImage security_image;
    std::vector<SecurityComponentDescriptor> component_set;
    std::vector<AccessToken> tokens;
};

struct AttestationReport {
    std::string node_id;
    Digest security_vm_hash{};
    Bytes signature; // node signature over security_vm_hash
};

struct AccessGrant {
    std::string node_id;
    Tick lease_ticks = 0;
};

struct AccessDenied {
    std::string node_id;
    std::string reason; // machine-readable: UnknownKey, IntegrityFailure, ...
};

struct InfectionReport {
    std::string node_id;
    std::string vm_id;
    Tick tick = 0;
    Verdict verdict;
};

struct EvidenceTransfer {
    EvidenceBundle bundle;
};

struct CleanVmDelivery {
    VmImage guest_image;
    std::string replaces_vm_id;
};

struct ComponentUpdate {
    VmImage security_image;
    std::vector<SecurityComponentDescriptor> component_set;
    std::vector<AccessToken> tokens;
};

struct Ack {
    std::uint64_t ref_seq = 0;
    std::string info; // e.g. evidence bundle address
};

using MessagePayload =
    std::variant<JoinRequest, ProvisionVm, AttestationReport, AccessGrant, AccessDenied,
                 InfectionReport, EvidenceTransfer, CleanVmDelivery, ComponentUpdate, Ack>;

struct ProtocolMessage {
    std::string sender;
    std::uint64_t seq = 0; // monotonically increasing per sender
    Tick tick = 0;         // sender's local tick when the message was produced
    MessagePayload payload;
};

std::string_view message_type_name(const MessagePayload& p);
bool messages_equal(const ProtocolMessage& a, const ProtocolMessage& b);

// ---------------------------------------------------------------------------
// Canonical encoding and framing

// Deterministic encoding: JSON with lexicographically sorted keys, integers in
// fixed decimal form, byte fields hex-encoded. Equal messages yield identical
// bytes regardless of construction order.
Bytes canonical_bytes(const ProtocolMessage& m);

inline constexpr std::size_t kMaxFrameBytes = 16u * 1024u * 1024u; // images travel in-band

enum class FrameError { IncompleteFrame, MalformedPayload, OversizeFrame };
std::string_view frame_error_name(FrameError e);

// Frame = 4-byte big-endian length prefix + canonical bytes.
Bytes encode_frame(const ProtocolMessage& m);

struct DecodeResult {
    std::optional<ProtocolMessage> message;
    std::optional<FrameError> error;
    std::size_t consumed = 0; // bytes eaten from the front of the input
};

// Decodes at most one frame from the front of `input`; never reads past the
// declared frame length. On IncompleteFrame, consumed is 0.
DecodeResult decode_frame(ByteView input);

} // namespace vmsentry
