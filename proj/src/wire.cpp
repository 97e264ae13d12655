// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/wire.hpp"

#include "vmsentry/json_io.hpp"

namespace vmsentry {

using nlohmann::json;

std::string_view message_type_name(const MessagePayload& p) {
    struct Visitor {
        std::string_view operator()(const JoinRequest&) { return "JoinRequest"; }
        std::string_view operator()(const ProvisionVm&) { return "ProvisionVm"; }
        std::string_view operator()(const AttestationReport&) { return "AttestationReport"; }
        std::string_view operator()(const AccessGrant&) { return "AccessGrant"; }
        std::string_view operator()(const AccessDenied&) { return "AccessDenied"; }
        std::string_view operator()(const InfectionReport&) { return "InfectionReport"; }
        std::string_view operator()(const EvidenceTransfer&) { return "EvidenceTransfer"; }
        std::string_view operator()(const CleanVmDelivery&) { return "CleanVmDelivery"; }
        std::string_view operator()(const ComponentUpdate&) { return "ComponentUpdate"; }
        std::string_view operator()(const Ack&) { return "Ack"; }
    };
    return std::visit(Visitor{}, p);
}

// ---------------------------------------------------------------------------
// payload <-> json

static json attestation_to_json(const StackAttestation& a) {
    json j;
    j["node_public_key"] = to_hex(a.node_public_key);
    j["node_key_endorsement"] = to_hex(a.node_key_endorsement);
    j["core_hash"] = to_hex(a.core_hash);
    j["core_signature"] = to_hex(a.core_signature);
    j["report_signature"] = to_hex(a.report_signature);
    return j;
}

static StackAttestation attestation_from_json(const json& j) {
    StackAttestation a;
    a.node_public_key = from_hex(j.at("node_public_key").get<std::string>());
    a.node_key_endorsement = from_hex(j.at("node_key_endorsement").get<std::string>());
    a.core_hash = digest_from_hex(j.at("core_hash").get<std::string>());
    a.core_signature = from_hex(j.at("core_signature").get<std::string>());
    a.report_signature = from_hex(j.at("report_signature").get<std::string>());
    return a;
}

static json components_to_json(const std::vector<SecurityComponentDescriptor>& cs) {
    json arr = json::array();
    for (const auto& c : cs)
        arr.push_back(component_to_json(c));
    return arr;
}

static std::vector<SecurityComponentDescriptor> components_from_json(const json& arr) {
    std::vector<SecurityComponentDescriptor> out;
    for (const json& c : arr)
        out.push_back(component_from_json(c));
    return out;
}

static json tokens_to_json(const std::vector<AccessToken>& ts) {
    json arr = json::array();
    for (const auto& t : ts)
        arr.push_back(token_to_json(t));
    return arr;
}

static std::vector<AccessToken> tokens_from_json(const json& arr) {
    std::vector<AccessToken> out;
    for (const json& t : arr)
        out.push_back(token_from_json(t));
    return out;
}

static json payload_to_json(const MessagePayload& p) {
    struct Visitor {
        json operator()(const JoinRequest& m) {
            json j;
            j["profile"] = profile_to_json(m.profile);
            j["attestation"] = attestation_to_json(m.attestation);
            return j;
        }
        json operator()(const ProvisionVm& m) {
            json j;
            j["security_image"] = image_to_json(m.security_image);
            j["component_set"] = components_to_json(m.component_set);
            j["tokens"] = tokens_to_json(m.tokens);
            return j;
        }
        json operator()(const AttestationReport& m) {
            json j;
            j["node_id"] = m.node_id;
            j["security_vm_hash"] = to_hex(m.security_vm_hash);
            j["signature"] = to_hex(m.signature);
            return j;
        }
        json operator()(const AccessGrant& m) {
            json j;
            j["node_id"] = m.node_id;
            j["lease_ticks"] = m.lease_ticks;
            return j;
        }
        json operator()(const AccessDenied& m) {
            json j;
            j["node_id"] = m.node_id;
            j["reason"] = m.reason;
            return j;
        }
        json operator()(const InfectionReport& m) {
            json j;
            j["node_id"] = m.node_id;
            j["vm_id"] = m.vm_id;
            j["tick"] = m.tick;
            j["verdict"] = verdict_to_json(m.verdict);
            return j;
        }
        json operator()(const EvidenceTransfer& m) {
            json j;
            j["bundle"] = bundle_to_json(m.bundle);
            return j;
        }
        json operator()(const CleanVmDelivery& m) {
            json j;
            j["guest_image"] = image_to_json(m.guest_image);
            j["replaces_vm_id"] = m.replaces_vm_id;
            return j;
        }
        json operator()(const ComponentUpdate& m) {
            json j;
            j["security_image"] = image_to_json(m.security_image);
            j["component_set"] = components_to_json(m.component_set);
            j["tokens"] = tokens_to_json(m.tokens);
            return j;
        }
        json operator()(const Ack& m) {
            json j;
            j["ref_seq"] = m.ref_seq;
            j["info"] = m.info;
            return j;
        }
    };
    return std::visit(Visitor{}, p);
}

static MessagePayload payload_from_json(std::string_view type, const json& j) {
    if (type == "JoinRequest")
        return JoinRequest{profile_from_json(j.at("profile")),
                           attestation_from_json(j.at("attestation"))};
    if (type == "ProvisionVm")
        return ProvisionVm{image_from_json(j.at("security_image")),
                           components_from_json(j.at("component_set")),
                           tokens_from_json(j.at("tokens"))};
    if (type == "AttestationReport")
        return AttestationReport{j.at("node_id").get<std::string>(),
                                 digest_from_hex(j.at("security_vm_hash").get<std::string>()),
                                 from_hex(j.at("signature").get<std::string>())};
    if (type == "AccessGrant")
        return AccessGrant{j.at("node_id").get<std::string>(), j.at("lease_ticks").get<Tick>()};
    if (type == "AccessDenied")
        return AccessDenied{j.at("node_id").get<std::string>(),
                            j.at("reason").get<std::string>()};
    if (type == "InfectionReport")
        return InfectionReport{j.at("node_id").get<std::string>(),
                               j.at("vm_id").get<std::string>(), j.at("tick").get<Tick>(),
                               verdict_from_json(j.at("verdict"))};
    if (type == "EvidenceTransfer")
        return EvidenceTransfer{bundle_from_json(j.at("bundle"))};
    if (type == "CleanVmDelivery")
        return CleanVmDelivery{image_from_json(j.at("guest_image")),
                               j.at("replaces_vm_id").get<std::string>()};
    if (type == "ComponentUpdate")
        return ComponentUpdate{image_from_json(j.at("security_image")),
                               components_from_json(j.at("component_set")),
                               tokens_from_json(j.at("tokens"))};
    if (type == "Ack")
        return Ack{j.at("ref_seq").get<std::uint64_t>(), j.at("info").get<std::string>()};
    throw BadHex("unknown message type");
}

Bytes canonical_bytes(const ProtocolMessage& m) {
    json j;
    j["sender"] = m.sender;
    j["seq"] = m.seq;
    j["tick"] = m.tick;
    j["type"] = std::string(message_type_name(m.payload));
    j["payload"] = payload_to_json(m.payload);
    return to_bytes(j.dump());
}

bool messages_equal(const ProtocolMessage& a, const ProtocolMessage& b) {
    return canonical_bytes(a) == canonical_bytes(b);
}

// ---------------------------------------------------------------------------
// framing

std::string_view frame_error_name(FrameError e) {
    switch (e) {
    case FrameError::IncompleteFrame: return "IncompleteFrame";
    case FrameError::MalformedPayload: return "MalformedPayload";
    case FrameError::OversizeFrame: return "OversizeFrame";
    }
    return "?";
}

Bytes encode_frame(const ProtocolMessage& m) {
    Bytes body = canonical_bytes(m);
    if (body.size() > kMaxFrameBytes)
        throw std::length_error("frame exceeds maximum size");
    Bytes out;
    out.reserve(body.size() + 4);
    std::uint32_t len = static_cast<std::uint32_t>(body.size());
    out.push_back(static_cast<std::uint8_t>(len >> 24));
    out.push_back(static_cast<std::uint8_t>(len >> 16));
    out.push_back(static_cast<std::uint8_t>(len >> 8));
    out.push_back(static_cast<std::uint8_t>(len));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

DecodeResult decode_frame(ByteView input) {
    if (input.size() < 4)
        return {std::nullopt, FrameError::IncompleteFrame, 0};
    std::uint32_t len = (static_cast<std::uint32_t>(input[0]) << 24) |
                        (static_cast<std::uint32_t>(input[1]) << 16) |
                        (static_cast<std::uint32_t>(input[2]) << 8) |
                        static_cast<std::uint32_t>(input[3]);
    if (len > kMaxFrameBytes)
        return {std::nullopt, FrameError::OversizeFrame, 0};
    if (input.size() < 4u + len)
        return {std::nullopt, FrameError::IncompleteFrame, 0};

    ByteView body = input.subspan(4, len);
    try {
        json j = json::parse(body.begin(), body.end());
        ProtocolMessage m;
        m.sender = j.at("sender").get<std::string>();
        m.seq = j.at("seq").get<std::uint64_t>();
        m.tick = j.at("tick").get<Tick>();
        m.payload = payload_from_json(j.at("type").get<std::string>(), j.at("payload"));
        return {std::move(m), std::nullopt, 4u + len};
    } catch (const json::exception&) {
        return {std::nullopt, FrameError::MalformedPayload, 4u + len};
    } catch (const BadHex&) {
        return {std::nullopt, FrameError::MalformedPayload, 4u + len};
    }
}

} // namespace vmsentry
