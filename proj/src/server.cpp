// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/server.hpp"

#include <algorithm>
#include <mutex>

namespace vmsentry {

SecurityServer::SecurityServer(ComponentCatalog catalog, KeyPair server_key,
                               Bytes publisher_public_key, ServerConfig config, TraceSink sink)
    : catalog_(std::move(catalog)),
      server_key_(std::move(server_key)),
      publisher_pk_(std::move(publisher_public_key)),
      config_(std::move(config)),
      sink_(std::move(sink)),
      evidence_(config_.evidence_root) {
    try {
        catalog_ruleset_ =
            parse_ruleset(vmsentry::to_string(catalog_.security_env_image.payload));
    } catch (const BadRuleset&) {
        // security image without an embedded ruleset: deep analysis runs anomaly-only
    }
}

ProtocolMessage SecurityServer::reply(MessagePayload payload, Tick tick) {
    ProtocolMessage m;
    m.sender = "server";
    m.seq = ++seq_;
    m.tick = tick;
    m.payload = std::move(payload);
    return m;
}

std::vector<ProtocolMessage> SecurityServer::handle(const ProtocolMessage& msg) {
    std::unique_lock lock(mutex_);
    const Tick now = msg.tick;
    if (const auto* join = std::get_if<JoinRequest>(&msg.payload))
        return handle_join(*join, now);
    if (const auto* rep = std::get_if<AttestationReport>(&msg.payload))
        return handle_attestation(*rep, now);
    if (const auto* inf = std::get_if<InfectionReport>(&msg.payload))
        return handle_infection_report(msg, *inf, now);
    if (const auto* xfer = std::get_if<EvidenceTransfer>(&msg.payload))
        return handle_evidence_transfer(msg, *xfer, now);
    if (const auto* ack = std::get_if<Ack>(&msg.payload)) {
        handle_node_ack(msg, *ack);
        return {};
    }
    // Server-originated message types arriving inbound are protocol misuse.
    return {reply(AccessDenied{msg.sender, "UnexpectedMessage"}, now)};
}

std::vector<AccessToken>
SecurityServer::issue_tokens(const std::vector<SecurityComponentDescriptor>& comps,
                             Tick now) const {
    // Capability -> observed resource mapping mirrors the guard's.
    std::vector<AccessToken> tokens;
    for (const auto& c : comps) {
        std::set<Resource> resources;
        for (const auto& cap : c.capabilities) {
            if (cap == caps::kFirewallFilter)
                resources.insert(Resource::NetworkTap);
            else
                resources.insert(Resource::GuestMemory);
        }
        for (Resource r : resources)
            tokens.push_back(issue_token(server_key_.private_key, c.component_id, r,
                                         now + config_.lease_ticks));
    }
    return tokens;
}

std::vector<ProtocolMessage> SecurityServer::handle_join(const JoinRequest& req, Tick now) {
    const std::string& node_id = req.profile.node_id;
    const StackAttestation& att = req.attestation;

    auto deny = [&](const char* reason) {
        sink_(now, "server", "deny", node_id + " " + reason);
        return std::vector<ProtocolMessage>{reply(AccessDenied{node_id, reason}, now)};
    };

    try {
        if (!verify(publisher_pk_, att.node_public_key, att.node_key_endorsement))
            return deny("UnknownKey");
        ByteView core_hash_view(att.core_hash.data(), att.core_hash.size());
        if (!verify(att.node_public_key, core_hash_view, att.report_signature))
            return deny("BadAttestationSignature");
        if (!verify(publisher_pk_, core_hash_view, att.core_signature))
            return deny("IntegrityFailure");
    } catch (const MalformedKey&) {
        return deny("UnknownKey");
    }

    SelectionResult selection = select_components(req.profile, catalog_);
    if (!selection.feasible)
        return deny("InfeasibleProfile");

    NodeRecord rec;
    rec.profile = req.profile;
    rec.component_set = selection.components;
    rec.attested_core_hash = att.core_hash;
    rec.node_public_key = att.node_public_key;
    rec.admitted = false; // admission completes on AttestationReport
    registry_[node_id] = rec;

    ProvisionVm prov;
    prov.security_image = catalog_.security_env_image;
    prov.component_set = selection.components;
    prov.tokens = issue_tokens(selection.components, now);
    sink_(now, "server", "provision", node_id + " components=" +
                                          std::to_string(selection.components.size()));
    return {reply(std::move(prov), now)};
}

std::vector<ProtocolMessage> SecurityServer::handle_attestation(const AttestationReport& rep,
                                                                Tick now) {
    auto it = registry_.find(rep.node_id);
    auto deny = [&](const char* reason) {
        sink_(now, "server", "deny", rep.node_id + " " + reason);
        return std::vector<ProtocolMessage>{reply(AccessDenied{rep.node_id, reason}, now)};
    };
    if (it == registry_.end())
        return deny("UnknownNode");
    NodeRecord& rec = it->second;
    ByteView hash_view(rep.security_vm_hash.data(), rep.security_vm_hash.size());
    try {
        if (!verify(rec.node_public_key, hash_view, rep.signature))
            return deny("BadAttestationSignature");
    } catch (const MalformedKey&) {
        return deny("UnknownKey");
    }
    if (rep.security_vm_hash != catalog_.security_env_image.content_hash)
        return deny("SecurityVmHashMismatch");

    rec.attested_security_vm_hash = rep.security_vm_hash;
    rec.lease_expiry_tick = now + config_.lease_ticks;
    rec.admitted = true;
    sink_(now, "server", "grant", rep.node_id + " lease=" + std::to_string(config_.lease_ticks));
    return {reply(AccessGrant{rep.node_id, config_.lease_ticks}, now)};
}

std::vector<ProtocolMessage>
SecurityServer::handle_infection_report(const ProtocolMessage& msg, const InfectionReport& rep,
                                        Tick now) {
    auto it = registry_.find(rep.node_id);
    if (it == registry_.end() || !it->second.admitted || now >= it->second.lease_expiry_tick) {
        sink_(now, "server", "deny", rep.node_id + " UnadmittedNode");
        return {reply(AccessDenied{rep.node_id, "UnadmittedNode"}, now)};
    }
    // Idempotent on (node, vm, tick): retries must not duplicate analysis jobs.
    if (seen_reports_.insert({rep.node_id, rep.vm_id, rep.tick}).second) {
        analysis_queue_.push_back({rep.node_id, rep.vm_id, rep.tick});
        sink_(now, "server", "infection_report", rep.node_id + "/" + rep.vm_id + " " +
                                                     rep.verdict.cause);
    }
    return {reply(Ack{msg.seq, ""}, now)};
}

void SecurityServer::run_deep_analysis(const EvidenceBundle& bundle, const std::string& hash_hex,
                                       Tick now) {
    // "Deep" analysis re-runs the catalog detectors over the snapshot.
    Observation obs{bundle.meta.vm_id, now, Resource::GuestMemory, bundle.snapshot};
    AnalysisResult result;
    result.bundle_hash = hash_hex;
    result.verdicts.push_back(signature_scan(obs, catalog_ruleset_));
    result.verdicts.push_back(anomaly_scan(obs, config_.anomaly_threshold));
    analysis_results_.push_back(result);

    auto job = std::find_if(analysis_queue_.begin(), analysis_queue_.end(),
                            [&](const AnalysisJob& j) {
                                return j.node_id == bundle.meta.node_id &&
                                       j.vm_id == bundle.meta.vm_id &&
                                       j.tick == bundle.meta.halt_tick;
                            });
    if (job != analysis_queue_.end())
        analysis_queue_.erase(job);

    Digest prev;
    std::vector<CustodyRecord> sidecar = evidence_.load_sidecar(hash_hex);
    if (!sidecar.empty())
        prev = sidecar.back().record_hash();
    else if (!bundle.custody.empty())
        prev = bundle.custody.back().record_hash();
    else
        prev = sha256(bundle.snapshot);
    evidence_.append_sidecar(hash_hex, make_custody_record("server", server_key_,
                                                           CustodyAction::Analyzed, now, prev));
    sink_(now, "server", "analyze", hash_hex);
}

std::vector<ProtocolMessage>
SecurityServer::handle_evidence_transfer(const ProtocolMessage& msg, const EvidenceTransfer& xfer,
                                         Tick now) {
    // Evidence is accepted on the strength of its custody chain alone, so a
    // node can still deliver after a server restart cleared the registry.
    std::string hash_hex;
    bool duplicate = false;
    try {
        duplicate = evidence_.contains(vmsentry::to_hex(bundle_address(xfer.bundle)));
        hash_hex = evidence_.store(xfer.bundle, server_key_, now);
    } catch (const CustodyBroken&) {
        sink_(now, "server", "deny", xfer.bundle.meta.node_id + " CustodyBroken");
        return {reply(AccessDenied{xfer.bundle.meta.node_id, "CustodyBroken"}, now)};
    }
    sink_(now, "server", "store", hash_hex);
    if (!duplicate)
        run_deep_analysis(xfer.bundle, hash_hex, now);

    std::vector<ProtocolMessage> out;
    out.push_back(reply(Ack{msg.seq, hash_hex}, now));

    // Replacement is issued right after the transfer to limit node downtime.
    auto it = registry_.find(xfer.bundle.meta.node_id);
    if (it != registry_.end() && it->second.admitted && now < it->second.lease_expiry_tick) {
        try {
            CleanVmDelivery delivery =
                issue_clean_vm(xfer.bundle.meta.node_id, xfer.bundle.meta.app_manifest);
            delivery.replaces_vm_id = xfer.bundle.meta.vm_id;
            sink_(now, "server", "clean_delivery",
                  xfer.bundle.meta.node_id + "/" + xfer.bundle.meta.vm_id + " " +
                      vmsentry::to_hex(delivery.guest_image.content_hash));
            out.push_back(reply(std::move(delivery), now));
        } catch (const UnknownManifest&) {
            out.push_back(
                reply(AccessDenied{xfer.bundle.meta.node_id, "UnknownManifest"}, now));
        }
    }
    return out;
}

void SecurityServer::handle_node_ack(const ProtocolMessage& msg, const Ack&) {
    // Agents send as "node:<id>"; registry and pending updates key on the id.
    std::string node_id = msg.sender.rfind("node:", 0) == 0 ? msg.sender.substr(5) : msg.sender;
    auto it = pending_updates_.find(node_id);
    if (it == pending_updates_.end())
        return;
    auto reg = registry_.find(node_id);
    if (reg != registry_.end()) {
        reg->second.component_set = it->second;
        sink_(msg.tick, "server", "update_committed", node_id);
    }
    pending_updates_.erase(it);
}

ProtocolMessage
SecurityServer::push_component_update(const std::string& node_id,
                                      std::vector<SecurityComponentDescriptor> component_set,
                                      Tick now_tick) {
    std::unique_lock lock(mutex_);
    auto it = registry_.find(node_id);
    if (it == registry_.end() || !it->second.admitted || now_tick >= it->second.lease_expiry_tick)
        throw UnadmittedNode(node_id);

    ComponentUpdate update;
    update.security_image = catalog_.security_env_image;
    update.component_set = component_set;
    update.tokens = issue_tokens(component_set, now_tick);
    pending_updates_[node_id] = std::move(component_set);
    sink_(now_tick, "server", "push_update", node_id);
    return reply(std::move(update), now_tick);
}

CleanVmDelivery SecurityServer::issue_clean_vm(const std::string& node_id,
                                               const std::vector<std::string>& app_manifest) const {
    std::string key = manifest_key(app_manifest);
    auto it = catalog_.clean_guest_images.find(key);
    if (it == catalog_.clean_guest_images.end())
        throw UnknownManifest(key);
    CleanVmDelivery d;
    d.guest_image = it->second;
    (void)node_id;
    return d;
}

bool SecurityServer::is_admitted(const std::string& node_id, Tick now_tick) const {
    std::shared_lock lock(mutex_);
    auto it = registry_.find(node_id);
    return it != registry_.end() && it->second.admitted &&
           now_tick < it->second.lease_expiry_tick;
}

std::optional<SecurityServer::NodeRecord>
SecurityServer::node_record(const std::string& node_id) const {
    std::shared_lock lock(mutex_);
    auto it = registry_.find(node_id);
    if (it == registry_.end())
        return std::nullopt;
    return it->second;
}

std::size_t SecurityServer::analysis_queue_size() const {
    std::shared_lock lock(mutex_);
    return analysis_queue_.size();
}

} // namespace vmsentry
