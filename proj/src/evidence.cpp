// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/evidence.hpp"

#include "vmsentry/json_io.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>

namespace vmsentry {

namespace fs = std::filesystem;
using nlohmann::json;

Bytes serialize_bundle(const EvidenceBundle& bundle) {
    return to_bytes(bundle_to_json(bundle).dump());
}

EvidenceBundle parse_bundle(ByteView bytes) {
    try {
        return bundle_from_json(json::parse(bytes.begin(), bytes.end()));
    } catch (const json::exception& e) {
        throw BadBundle(std::string("bundle parse failed: ") + e.what());
    } catch (const BadHex& e) {
        throw BadBundle(std::string("bundle parse failed: ") + e.what());
    }
}

Digest bundle_address(const EvidenceBundle& bundle) {
    return sha256(serialize_bundle(bundle));
}

bool verify_bundle_chain(const EvidenceBundle& bundle, std::span<const CustodyRecord> extension) {
    std::vector<CustodyRecord> chain(bundle.custody.begin(), bundle.custody.end());
    chain.insert(chain.end(), extension.begin(), extension.end());
    if (chain.empty())
        return false; // a bundle nobody signed for carries no proof
    return verify_custody_chain(sha256(bundle.snapshot), chain);
}

// ---------------------------------------------------------------------------

static fs::path bundle_path(const fs::path& root, const std::string& hash_hex) {
    return root / "bundles" / hash_hex;
}

static fs::path sidecar_path(const fs::path& root, const std::string& hash_hex) {
    return root / "bundles" / (hash_hex + ".custody");
}

static Bytes read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw StoreUnreadable("cannot open " + p.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

static void write_file_atomic(const fs::path& p, ByteView data) {
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw StoreUnreadable("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size()));
        out.flush();
        if (!out)
            throw StoreUnreadable("write failed " + tmp.string());
    }
    fs::rename(tmp, p);
}

EvidenceStore::EvidenceStore(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_ / "bundles");

    // Load the index, dropping a trailing partial line (interrupted append).
    fs::path index_file = root_ / "index.tsv";
    std::set<std::string> indexed;
    if (fs::exists(index_file)) {
        Bytes raw = read_file(index_file);
        std::string text = vmsentry::to_string(raw);
        std::size_t pos = 0;
        std::string repaired;
        while (pos < text.size()) {
            std::size_t nl = text.find('\n', pos);
            if (nl == std::string::npos)
                break; // partial trailing line: the matching store() never acked
            std::string line = text.substr(pos, nl - pos);
            pos = nl + 1;
            IndexEntry e;
            std::size_t a = line.find('\t');
            std::size_t b = a == std::string::npos ? a : line.find('\t', a + 1);
            std::size_t c = b == std::string::npos ? b : line.find('\t', b + 1);
            if (c == std::string::npos)
                continue; // damaged line; bundle file is authoritative
            e.node_id = line.substr(0, a);
            e.vm_id = line.substr(a + 1, b - a - 1);
            try {
                e.tick = std::stoll(line.substr(b + 1, c - b - 1));
            } catch (...) {
                continue;
            }
            e.hash_hex = line.substr(c + 1);
            if (!fs::exists(bundle_path(root_, e.hash_hex)))
                continue;
            index_.push_back(e);
            indexed.insert(e.hash_hex);
            repaired += line;
            repaired += '\n';
        }
        if (repaired != text)
            write_file_atomic(index_file, to_bytes(repaired));
    }

    // Re-index bundle files that made it to disk before the index append.
    std::vector<fs::path> orphans;
    for (const auto& entry : fs::directory_iterator(root_ / "bundles")) {
        std::string name = entry.path().filename().string();
        if (name.size() != 64 || indexed.count(name))
            continue;
        orphans.push_back(entry.path());
    }
    std::sort(orphans.begin(), orphans.end());
    for (const fs::path& p : orphans) {
        try {
            EvidenceBundle b = parse_bundle(read_file(p));
            IndexEntry e{b.meta.node_id, b.meta.vm_id, b.meta.halt_tick, p.filename().string()};
            index_.push_back(e);
            append_index_locked(e);
        } catch (const BadBundle&) {
            // half-written temp leftovers are not addressable bundles
        }
    }
}

void EvidenceStore::append_index_locked(const IndexEntry& entry) {
    std::ofstream out(root_ / "index.tsv", std::ios::binary | std::ios::app);
    if (!out)
        throw StoreUnreadable("cannot append index in " + root_.string());
    out << entry.node_id << '\t' << entry.vm_id << '\t' << entry.tick << '\t' << entry.hash_hex
        << '\n';
    out.flush();
}

std::string EvidenceStore::store(const EvidenceBundle& bundle, const KeyPair& server_key,
                                 Tick now_tick) {
    if (!verify_bundle_chain(bundle))
        throw CustodyBroken("bundle custody chain does not verify");

    Bytes bytes = serialize_bundle(bundle);
    std::string hash_hex = vmsentry::to_hex(sha256(bytes));

    std::unique_lock lock(mutex_);
    fs::path p = bundle_path(root_, hash_hex);
    if (fs::exists(p))
        return hash_hex; // idempotent re-store

    write_file_atomic(p, bytes);
    IndexEntry e{bundle.meta.node_id, bundle.meta.vm_id, bundle.meta.halt_tick, hash_hex};
    index_.push_back(e);
    append_index_locked(e);
    lock.unlock();

    Digest prev = bundle.custody.empty() ? sha256(bundle.snapshot)
                                         : bundle.custody.back().record_hash();
    append_sidecar(hash_hex, make_custody_record("server", server_key, CustodyAction::Stored,
                                                 now_tick, prev));
    return hash_hex;
}

bool EvidenceStore::contains(const std::string& hash_hex) const {
    std::shared_lock lock(mutex_);
    return fs::exists(bundle_path(root_, hash_hex));
}

Bytes EvidenceStore::load_bytes(const std::string& hash_hex) const {
    std::shared_lock lock(mutex_);
    fs::path p = bundle_path(root_, hash_hex);
    if (!fs::exists(p))
        throw BundleNotFound("no bundle " + hash_hex);
    return read_file(p);
}

EvidenceBundle EvidenceStore::load_bundle(const std::string& hash_hex) const {
    return parse_bundle(load_bytes(hash_hex));
}

std::vector<CustodyRecord> EvidenceStore::load_sidecar(const std::string& hash_hex) const {
    std::shared_lock lock(mutex_);
    fs::path p = sidecar_path(root_, hash_hex);
    std::vector<CustodyRecord> out;
    if (!fs::exists(p))
        return out;
    std::ifstream in(p, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        try {
            out.push_back(custody_from_json(json::parse(line)));
        } catch (...) {
            break; // interrupted append: drop the partial tail
        }
    }
    return out;
}

void EvidenceStore::append_sidecar(const std::string& hash_hex, const CustodyRecord& record) {
    std::unique_lock lock(mutex_);
    std::ofstream out(sidecar_path(root_, hash_hex), std::ios::binary | std::ios::app);
    if (!out)
        throw StoreUnreadable("cannot append sidecar for " + hash_hex);
    out << custody_to_json(record).dump() << '\n';
    out.flush();
}

std::vector<EvidenceStore::IndexEntry> EvidenceStore::index() const {
    std::shared_lock lock(mutex_);
    return index_;
}

// ---------------------------------------------------------------------------

std::vector<EvidenceStore::IndexEntry> read_index_strict(const fs::path& root) {
    fs::path index_file = root / "index.tsv";
    if (!fs::exists(root))
        throw StoreUnreadable("store directory missing: " + root.string());
    std::vector<EvidenceStore::IndexEntry> out;
    if (!fs::exists(index_file))
        return out;
    std::ifstream in(index_file, std::ios::binary);
    if (!in)
        throw StoreUnreadable("cannot open " + index_file.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t a = line.find('\t');
        std::size_t b = a == std::string::npos ? a : line.find('\t', a + 1);
        std::size_t c = b == std::string::npos ? b : line.find('\t', b + 1);
        if (c == std::string::npos)
            throw StoreUnreadable("corrupted index line " + std::to_string(lineno));
        EvidenceStore::IndexEntry e;
        e.node_id = line.substr(0, a);
        e.vm_id = line.substr(a + 1, b - a - 1);
        try {
            e.tick = std::stoll(line.substr(b + 1, c - b - 1));
        } catch (...) {
            throw StoreUnreadable("corrupted index line " + std::to_string(lineno));
        }
        e.hash_hex = line.substr(c + 1);
        if (e.hash_hex.size() != 64)
            throw StoreUnreadable("corrupted index line " + std::to_string(lineno));
        out.push_back(std::move(e));
    }
    return out;
}

bool VerificationReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const VerificationCheck& c) { return c.pass; });
}

VerificationReport verify_stored_bundle(const EvidenceStore& store, const std::string& hash_hex) {
    VerificationReport report;
    Bytes bytes = store.load_bytes(hash_hex); // throws BundleNotFound

    bool hash_ok = vmsentry::to_hex(sha256(bytes)) == hash_hex;
    report.checks.push_back({"content_hash", hash_ok, hash_ok ? "matches address" : "MISMATCH"});
    if (!hash_ok) {
        report.checks.push_back({"custody_chain", false, "skipped: content hash failed"});
        return report;
    }

    EvidenceBundle bundle;
    try {
        bundle = parse_bundle(bytes);
    } catch (const BadBundle& e) {
        report.checks.push_back({"bundle_parse", false, e.what()});
        return report;
    }
    report.checks.push_back({"bundle_parse", true, ""});

    bool snap_ok = sha256(bundle.snapshot) ==
                   (bundle.custody.empty() ? Digest{} : bundle.custody.front().prev_hash);
    report.checks.push_back(
        {"snapshot_anchor", snap_ok, snap_ok ? "" : "genesis does not bind snapshot"});

    std::vector<CustodyRecord> sidecar = store.load_sidecar(hash_hex);
    bool chain_ok = verify_bundle_chain(bundle, sidecar);
    report.checks.push_back({"custody_chain", chain_ok,
                             chain_ok ? std::to_string(bundle.custody.size() + sidecar.size()) +
                                            " records verified"
                                      : "chain verification FAILED"});
    return report;
}

} // namespace vmsentry
