// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/catalog.hpp"
#include "vmsentry/evidence.hpp"
#include "vmsentry/trace.hpp"
#include "vmsentry/wire.hpp"

#include <deque>
#include <map>
#include <set>
#include <shared_mutex>

namespace vmsentry {

struct UnadmittedNode : std::runtime_error {
    explicit UnadmittedNode(const std::string& node_id)
        : std::runtime_error("node not admitted: " + node_id) {}
};

struct UnknownManifest : std::runtime_error {
    explicit UnknownManifest(const std::string& key)
        : std::runtime_error("no clean image for manifest: " + key) {}
};

struct ServerConfig {
    Tick lease_ticks = 600; // renewable via re-attestation
    double anomaly_threshold = 7.5;
    std::filesystem::path evidence_root;
};

// The network's security authority: admits nodes, provisions security
// components as services, stores evidence, and delivers clean VMs.
class SecurityServer {
public:
    struct NodeRecord {
        NodeProfile profile;
        Tick lease_expiry_tick = -1;
        std::vector<SecurityComponentDescriptor> component_set;
        Digest attested_core_hash{};
        Digest attested_security_vm_hash{};
        Bytes node_public_key;
        bool admitted = false;
    };

    struct AnalysisResult {
        std::string bundle_hash;
        std::vector<Verdict> verdicts; // one per catalog detector capability
    };

    SecurityServer(ComponentCatalog catalog, KeyPair server_key, Bytes publisher_public_key,
                   ServerConfig config, TraceSink sink = null_sink());

    // Dispatches one inbound message; returns the ordered responses the peer
    // should receive. Safe for concurrent sessions.
    std::vector<ProtocolMessage> handle(const ProtocolMessage& msg);

    // Operator-initiated component exchange. Registry commits on the node's Ack.
    ProtocolMessage push_component_update(const std::string& node_id,
                                          std::vector<SecurityComponentDescriptor> component_set,
                                          Tick now_tick);

    CleanVmDelivery issue_clean_vm(const std::string& node_id,
                                   const std::vector<std::string>& app_manifest) const;

    bool is_admitted(const std::string& node_id, Tick now_tick) const;
    std::optional<NodeRecord> node_record(const std::string& node_id) const;
    std::size_t analysis_queue_size() const;
    const std::vector<AnalysisResult>& analysis_results() const { return analysis_results_; }
    EvidenceStore& evidence() { return evidence_; }
    const ComponentCatalog& catalog() const { return catalog_; }
    const Bytes& public_key() const { return server_key_.public_key; }

private:
    ProtocolMessage reply(MessagePayload payload, Tick tick);
    std::vector<ProtocolMessage> handle_join(const JoinRequest& req, Tick now);
    std::vector<ProtocolMessage> handle_attestation(const AttestationReport& rep, Tick now);
    std::vector<ProtocolMessage> handle_infection_report(const ProtocolMessage& msg,
                                                         const InfectionReport& rep, Tick now);
    std::vector<ProtocolMessage> handle_evidence_transfer(const ProtocolMessage& msg,
                                                          const EvidenceTransfer& xfer, Tick now);
    void handle_node_ack(const ProtocolMessage& msg, const Ack& ack);
    void run_deep_analysis(const EvidenceBundle& bundle, const std::string& hash_hex, Tick now);
    std::vector<AccessToken> issue_tokens(const std::vector<SecurityComponentDescriptor>& comps,
                                          Tick now) const;

    ComponentCatalog catalog_;
    Ruleset catalog_ruleset_; // parsed from the security image payload
    KeyPair server_key_;
    Bytes publisher_pk_;
    ServerConfig config_;
    TraceSink sink_;
    EvidenceStore evidence_;

    std::map<std::string, NodeRecord> registry_;
    std::map<std::string, std::vector<SecurityComponentDescriptor>> pending_updates_;
    struct AnalysisJob {
        std::string node_id, vm_id;
        Tick tick = 0;
    };
    std::deque<AnalysisJob> analysis_queue_;
    std::set<std::tuple<std::string, std::string, Tick>> seen_reports_;
    std::vector<AnalysisResult> analysis_results_;

    std::uint64_t seq_ = 0;
    mutable std::shared_mutex mutex_;
};

} // namespace vmsentry
