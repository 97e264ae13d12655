// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/bytes.hpp"

#include <array>
#include <memory>
#include <optional>

namespace vmsentry {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(ByteView data);
std::string to_hex(const Digest& d);
Digest digest_from_hex(std::string_view hex); // throws BadHex on anything but 64 hex chars

struct MalformedKey : std::runtime_error {
    explicit MalformedKey(const std::string& what) : std::runtime_error(what) {}
};

struct KeyPair {
    Bytes public_key;
    Bytes private_key;
};

// Detached-signature scheme. The default is Ed25519; tests may swap in a
// toy scheme to exercise callers without real crypto.
class SignatureScheme {
public:
    virtual ~SignatureScheme() = default;
    virtual KeyPair keypair_from_seed(const Digest& seed) const = 0;
    virtual Bytes sign(const Bytes& private_key, ByteView message) const = 0;
    virtual bool verify(const Bytes& public_key, ByteView message, ByteView signature) const = 0;
};

const SignatureScheme& ed25519_scheme();
const SignatureScheme& default_scheme();

// Deterministic keypair derivation: seed material is sha256(label || ":" || seed).
KeyPair derive_keypair(std::uint64_t seed, std::string_view owner_label);

Bytes sign(const Bytes& private_key, ByteView message);
bool verify(const Bytes& public_key, ByteView message, ByteView signature);

// ---------------------------------------------------------------------------
// Resource-access credentials

enum class Resource { GuestMemory, GuestDisk, NetworkTap };

constexpr std::array<Resource, 3> kAllResources{Resource::GuestMemory, Resource::GuestDisk,
                                                Resource::NetworkTap};

std::string_view resource_name(Resource r);
std::optional<Resource> resource_from_name(std::string_view name);

struct AccessToken {
    std::string component_id;
    Resource resource = Resource::GuestMemory;
    Tick expiry_tick = 0;
    Bytes signature; // server signature over signed_bytes()

    Bytes signed_bytes() const; // canonical encoding of the three fields above
};

AccessToken issue_token(const Bytes& server_private_key, std::string component_id,
                        Resource resource, Tick expiry_tick);

// True iff the signature verifies under server_public_key, the resource matches,
// and now_tick < expiry_tick (strict).
bool check_access(const Bytes& server_public_key, const AccessToken& token, Resource resource,
                  Tick now_tick);

// ---------------------------------------------------------------------------
// Chain of custody

enum class CustodyAction { Snapshotted, Transferred, Stored, Analyzed };

std::string_view custody_action_name(CustodyAction a);
std::optional<CustodyAction> custody_action_from_name(std::string_view name);

struct CustodyRecord {
    std::string actor; // e.g. "node:n1", "server"
    Bytes actor_public_key;
    CustodyAction action = CustodyAction::Snapshotted;
    Tick tick = 0;
    Digest prev_hash{}; // hash of the previous record, or the chain genesis digest
    Bytes signature;    // actor signature over signing_payload()

    Bytes signing_payload() const;
    Digest record_hash() const; // covers every field including the signature
};

CustodyRecord make_custody_record(std::string actor, const KeyPair& actor_key,
                                  CustodyAction action, Tick tick, const Digest& prev_hash);

// Verifies signatures and the prev-hash links of a chain anchored at `genesis`.
bool verify_custody_chain(const Digest& genesis, std::span<const CustodyRecord> chain);

} // namespace vmsentry
