// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/crypto.hpp"

#include <sodium.h>

#include <cstring>
#include <mutex>

namespace vmsentry {

static void ensure_sodium() {
    static std::once_flag once;
    std::call_once(once, [] {
        if (sodium_init() < 0)
            throw std::runtime_error("libsodium initialisation failed");
    });
}

Digest sha256(ByteView data) {
    ensure_sodium();
    Digest out;
    crypto_hash_sha256(out.data(), data.data(), data.size());
    return out;
}

std::string to_hex(const Digest& d) {
    return to_hex(ByteView(d.data(), d.size()));
}

Digest digest_from_hex(std::string_view hex) {
    Bytes raw = from_hex(hex);
    if (raw.size() != 32)
        throw BadHex("digest must be 64 hex chars");
    Digest out;
    std::memcpy(out.data(), raw.data(), 32);
    return out;
}

namespace {

class Ed25519 final : public SignatureScheme {
public:
    KeyPair keypair_from_seed(const Digest& seed) const override {
        ensure_sodium();
        KeyPair kp;
        kp.public_key.resize(crypto_sign_PUBLICKEYBYTES);
        kp.private_key.resize(crypto_sign_SECRETKEYBYTES);
        crypto_sign_seed_keypair(kp.public_key.data(), kp.private_key.data(), seed.data());
        return kp;
    }

    Bytes sign(const Bytes& private_key, ByteView message) const override {
        ensure_sodium();
        if (private_key.size() != crypto_sign_SECRETKEYBYTES)
            throw MalformedKey("ed25519 private key must be " +
                               std::to_string(crypto_sign_SECRETKEYBYTES) + " bytes");
        Bytes sig(crypto_sign_BYTES);
        crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(),
                             private_key.data());
        return sig;
    }

    bool verify(const Bytes& public_key, ByteView message, ByteView signature) const override {
        ensure_sodium();
        if (public_key.size() != crypto_sign_PUBLICKEYBYTES)
            throw MalformedKey("ed25519 public key must be " +
                               std::to_string(crypto_sign_PUBLICKEYBYTES) + " bytes");
        if (signature.size() != crypto_sign_BYTES)
            return false;
        return crypto_sign_verify_detached(signature.data(), message.data(), message.size(),
                                           public_key.data()) == 0;
    }
};

} // namespace

const SignatureScheme& ed25519_scheme() {
    static Ed25519 scheme;
    return scheme;
}

const SignatureScheme& default_scheme() {
    return ed25519_scheme();
}

KeyPair derive_keypair(std::uint64_t seed, std::string_view owner_label) {
    std::string material(owner_label);
    material += ":";
    material += std::to_string(seed);
    return default_scheme().keypair_from_seed(sha256(to_bytes(material)));
}

Bytes sign(const Bytes& private_key, ByteView message) {
    return default_scheme().sign(private_key, message);
}

bool verify(const Bytes& public_key, ByteView message, ByteView signature) {
    return default_scheme().verify(public_key, message, signature);
}

// ---------------------------------------------------------------------------

std::string_view resource_name(Resource r) {
    switch (r) {
    case Resource::GuestMemory: return "GuestMemory";
    case Resource::GuestDisk: return "GuestDisk";
    case Resource::NetworkTap: return "NetworkTap";
    }
    return "?";
}

std::optional<Resource> resource_from_name(std::string_view name) {
    for (Resource r : kAllResources)
        if (resource_name(r) == name)
            return r;
    return std::nullopt;
}

Bytes AccessToken::signed_bytes() const {
    std::string s = "token|" + component_id + "|" + std::string(resource_name(resource)) + "|" +
                    std::to_string(expiry_tick);
    return to_bytes(s);
}

AccessToken issue_token(const Bytes& server_private_key, std::string component_id,
                        Resource resource, Tick expiry_tick) {
    AccessToken t;
    t.component_id = std::move(component_id);
    t.resource = resource;
    t.expiry_tick = expiry_tick;
    t.signature = sign(server_private_key, t.signed_bytes());
    return t;
}

bool check_access(const Bytes& server_public_key, const AccessToken& token, Resource resource,
                  Tick now_tick) {
    if (token.resource != resource)
        return false;
    if (now_tick >= token.expiry_tick)
        return false;
    return verify(server_public_key, token.signed_bytes(), token.signature);
}

// ---------------------------------------------------------------------------

std::string_view custody_action_name(CustodyAction a) {
    switch (a) {
    case CustodyAction::Snapshotted: return "Snapshotted";
    case CustodyAction::Transferred: return "Transferred";
    case CustodyAction::Stored: return "Stored";
    case CustodyAction::Analyzed: return "Analyzed";
    }
    return "?";
}

std::optional<CustodyAction> custody_action_from_name(std::string_view name) {
    for (CustodyAction a : {CustodyAction::Snapshotted, CustodyAction::Transferred,
                            CustodyAction::Stored, CustodyAction::Analyzed})
        if (custody_action_name(a) == name)
            return a;
    return std::nullopt;
}

Bytes CustodyRecord::signing_payload() const {
    std::string s = "custody|" + vmsentry::to_hex(prev_hash) + "|" + actor + "|" +
                    std::string(custody_action_name(action)) + "|" + std::to_string(tick);
    return to_bytes(s);
}

Digest CustodyRecord::record_hash() const {
    Bytes all = signing_payload();
    all.push_back('|');
    Bytes pk_hex = to_bytes(vmsentry::to_hex(actor_public_key));
    all.insert(all.end(), pk_hex.begin(), pk_hex.end());
    all.push_back('|');
    Bytes sig_hex = to_bytes(vmsentry::to_hex(signature));
    all.insert(all.end(), sig_hex.begin(), sig_hex.end());
    return sha256(all);
}

CustodyRecord make_custody_record(std::string actor, const KeyPair& actor_key,
                                  CustodyAction action, Tick tick, const Digest& prev_hash) {
    CustodyRecord r;
    r.actor = std::move(actor);
    r.actor_public_key = actor_key.public_key;
    r.action = action;
    r.tick = tick;
    r.prev_hash = prev_hash;
    r.signature = sign(actor_key.private_key, r.signing_payload());
    return r;
}

bool verify_custody_chain(const Digest& genesis, std::span<const CustodyRecord> chain) {
    Digest expect_prev = genesis;
    for (const CustodyRecord& rec : chain) {
        if (rec.prev_hash != expect_prev)
            return false;
        try {
            if (!verify(rec.actor_public_key, rec.signing_payload(), rec.signature))
                return false;
        } catch (const MalformedKey&) {
            return false;
        }
        expect_prev = rec.record_hash();
    }
    return true;
}

} // namespace vmsentry
