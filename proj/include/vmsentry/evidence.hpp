// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/detection.hpp"
#include "vmsentry/domain.hpp"

#include <filesystem>
#include <map>
#include <shared_mutex>

namespace vmsentry {

struct BundleMeta {
    std::string node_id;
    std::string vm_id;
    Tick halt_tick = 0;
    Verdict verdict;                       // what triggered the quarantine
    std::vector<std::string> app_manifest; // apps installed on the infected VM
};

// Content-addressed snapshot of a quarantined VM with a signed chain of custody.
// The custody chain is anchored at sha256(snapshot); records appended after the
// bundle left the node (Stored, Analyzed) live in the store's sidecar so the
// stored bytes keep re-hashing to their address.
struct EvidenceBundle {
    Bytes snapshot; // full byte copy of the halted VM payload
    BundleMeta meta;
    std::vector<CustodyRecord> custody;
};

struct BadBundle : std::runtime_error {
    explicit BadBundle(const std::string& what) : std::runtime_error(what) {}
};

Bytes serialize_bundle(const EvidenceBundle& bundle);
EvidenceBundle parse_bundle(ByteView bytes); // throws BadBundle
Digest bundle_address(const EvidenceBundle& bundle);

// Chain verification over the embedded records plus any sidecar extension.
bool verify_bundle_chain(const EvidenceBundle& bundle,
                         std::span<const CustodyRecord> extension = {});

// ---------------------------------------------------------------------------

struct CustodyBroken : std::runtime_error {
    explicit CustodyBroken(const std::string& what) : std::runtime_error(what) {}
};

struct StoreUnreadable : std::runtime_error {
    explicit StoreUnreadable(const std::string& what) : std::runtime_error(what) {}
};

struct BundleNotFound : std::runtime_error {
    explicit BundleNotFound(const std::string& what) : std::runtime_error(what) {}
};

// On-disk layout:
//   <root>/bundles/<hex hash>          bundle bytes (re-hash to the address)
//   <root>/bundles/<hex hash>.custody  sidecar custody records, one JSON per line
//   <root>/index.tsv                   node_id \t vm_id \t tick \t hash
class EvidenceStore {
public:
    struct IndexEntry {
        std::string node_id;
        std::string vm_id;
        Tick tick = 0;
        std::string hash_hex;
    };

    // Opens (or creates) the store. A trailing index line without a newline is
    // treated as an interrupted append and dropped; entries whose bundle file
    // exists but are missing from the index are re-indexed.
    explicit EvidenceStore(std::filesystem::path root);

    // Verifies the custody chain, persists the bundle at its content address
    // (write-temp-then-rename), appends a server-signed Stored record to the
    // sidecar, and returns the address. Re-storing the same bundle returns the
    // existing address without rewriting.
    std::string store(const EvidenceBundle& bundle, const KeyPair& server_key, Tick now_tick);

    bool contains(const std::string& hash_hex) const;
    Bytes load_bytes(const std::string& hash_hex) const; // throws BundleNotFound
    EvidenceBundle load_bundle(const std::string& hash_hex) const;
    std::vector<CustodyRecord> load_sidecar(const std::string& hash_hex) const;
    void append_sidecar(const std::string& hash_hex, const CustodyRecord& record);

    std::vector<IndexEntry> index() const;
    const std::filesystem::path& root() const { return root_; }

private:
    void append_index_locked(const IndexEntry& entry);

    std::filesystem::path root_;
    std::vector<IndexEntry> index_;
    mutable std::shared_mutex mutex_;
};

// Strict index reader used by the evidence CLI: any malformed line raises
// StoreUnreadable naming the line number.
std::vector<EvidenceStore::IndexEntry> read_index_strict(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Operator-facing verification

struct VerificationCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct VerificationReport {
    std::vector<VerificationCheck> checks;
    bool all_pass() const;
};

// Re-hashes stored bytes against the address and verifies the full custody
// chain (embedded records plus sidecar). Chain checks are skipped when the
// hash check already failed.
VerificationReport verify_stored_bundle(const EvidenceStore& store, const std::string& hash_hex);

} // namespace vmsentry
