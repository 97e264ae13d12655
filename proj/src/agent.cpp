// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/agent.hpp"

#include <algorithm>

namespace vmsentry {

Bytes GuestRuntime::full_payload() const {
    Bytes out = inst.image.payload;
    for (const Segment& s : segments)
        out.insert(out.end(), s.bytes.begin(), s.bytes.end());
    return out;
}

Bytes GuestRuntime::visible_payload(Tick now) const {
    Bytes out = inst.image.payload;
    for (const Segment& s : segments)
        if (s.visible_at <= now)
            out.insert(out.end(), s.bytes.begin(), s.bytes.end());
    return out;
}

std::optional<Tick> GuestRuntime::first_infection_tick() const {
    if (segments.empty())
        return std::nullopt;
    Tick t = segments.front().applied_tick;
    for (const Segment& s : segments)
        t = std::min(t, s.applied_tick);
    return t;
}

// ---------------------------------------------------------------------------

NodeAgent::NodeAgent(NodeProfile profile, LayerStack stack, KeyPair node_key,
                     Bytes node_key_endorsement, Bytes publisher_public_key,
                     Bytes server_public_key, ServerLink& link, AgentConfig config,
                     TraceSink sink)
    : profile_(std::move(profile)),
      actor_("node:" + profile_.node_id),
      core_image_(std::move(stack.core_image)),
      node_key_(std::move(node_key)),
      node_key_endorsement_(std::move(node_key_endorsement)),
      publisher_pk_(std::move(publisher_public_key)),
      server_pk_(std::move(server_public_key)),
      link_(link),
      config_(config),
      sink_(std::move(sink)) {
    for (VmInstance& g : stack.guest_vms)
        guests_.push_back(GuestRuntime{std::move(g), {}});
}

ProtocolMessage NodeAgent::make_message(MessagePayload payload, Tick now) {
    ProtocolMessage m;
    m.sender = actor_;
    m.seq = ++seq_;
    m.tick = now;
    m.payload = std::move(payload);
    return m;
}

GuestRuntime* NodeAgent::find_guest(const std::string& vm_id) {
    for (GuestRuntime& g : guests_)
        if (g.inst.vm_id == vm_id)
            return &g;
    return nullptr;
}

void NodeAgent::install_security_vm(const VmImage& image,
                                    std::vector<SecurityComponentDescriptor> components,
                                    std::vector<AccessToken> tokens, Tick now) {
    VmInstance vm;
    vm.vm_id = profile_.node_id + ".sec" + std::to_string(now);
    vm.image = image;
    vm.state = transition(VmState::Provisioned, VmEvent::Start);
    security_vm_ = std::move(vm);
    components_ = std::move(components);
    tokens_ = std::move(tokens);
    try {
        ruleset_ = parse_ruleset(vmsentry::to_string(image.payload));
    } catch (const BadRuleset&) {
        ruleset_ = {};
    }
}

NodeAgent::BootResult NodeAgent::boot_sequence(Tick now) {
    // Layer-two self check runs before any network contact.
    if (!check_integrity(core_image_, publisher_pk_)) {
        sink_(now, actor_, "self_check_failed", core_image_.image_id);
        denial_reason_ = "IntegritySelfCheckFailed";
        return BootResult::IntegritySelfCheckFailed;
    }

    StackAttestation att;
    att.node_public_key = node_key_.public_key;
    att.node_key_endorsement = node_key_endorsement_;
    att.core_hash = sha256(core_image_.payload);
    att.core_signature = core_image_.signature;
    att.report_signature =
        sign(node_key_.private_key, ByteView(att.core_hash.data(), att.core_hash.size()));

    std::vector<ProtocolMessage> responses;
    try {
        responses = link_.exchange(make_message(JoinRequest{profile_, att}, now));
    } catch (const LinkFailure& e) {
        denial_reason_ = std::string("LinkFailure: ") + e.what();
        return BootResult::Denied;
    }
    if (responses.empty()) {
        denial_reason_ = "NoResponse";
        return BootResult::Denied;
    }
    if (const auto* denied = std::get_if<AccessDenied>(&responses.front().payload)) {
        denial_reason_ = denied->reason;
        sink_(now, actor_, "join_denied", denied->reason);
        return BootResult::Denied;
    }
    const auto* prov = std::get_if<ProvisionVm>(&responses.front().payload);
    if (!prov) {
        denial_reason_ = "UnexpectedResponse";
        return BootResult::Denied;
    }
    if (!check_integrity(prov->security_image, publisher_pk_)) {
        denial_reason_ = "SecurityImageIntegrityFailure";
        return BootResult::Denied;
    }
    install_security_vm(prov->security_image, prov->component_set, prov->tokens, now);

    AttestationReport rep;
    rep.node_id = profile_.node_id;
    rep.security_vm_hash = security_vm_->image.content_hash;
    rep.signature = sign(node_key_.private_key,
                         ByteView(rep.security_vm_hash.data(), rep.security_vm_hash.size()));
    try {
        responses = link_.exchange(make_message(std::move(rep), now));
    } catch (const LinkFailure& e) {
        denial_reason_ = std::string("LinkFailure: ") + e.what();
        return BootResult::Denied;
    }
    if (responses.empty() || !std::holds_alternative<AccessGrant>(responses.front().payload)) {
        if (!responses.empty())
            if (const auto* d = std::get_if<AccessDenied>(&responses.front().payload))
                denial_reason_ = d->reason;
        sink_(now, actor_, "attest_denied", denial_reason_);
        return BootResult::Denied;
    }

    admitted_ = true;
    // Guests start only once the node holds network access.
    for (GuestRuntime& g : guests_)
        if (g.inst.state == VmState::Provisioned)
            g.inst.state = transition(g.inst.state, VmEvent::Start);
    sink_(now, actor_, "admitted", profile_.node_id);
    return BootResult::Admitted;
}

const AccessToken* NodeAgent::find_token(const std::string& component_id, Resource resource,
                                         Tick now) const {
    for (const AccessToken& t : tokens_)
        if (t.component_id == component_id && check_access(server_pk_, t, resource, now))
            return &t;
    return nullptr;
}

static std::optional<Resource> capability_resource(const CapabilityTag& cap) {
    if (cap == caps::kSignatureScan || cap == caps::kAnomalyScan)
        return Resource::GuestMemory;
    if (cap == caps::kFirewallFilter)
        return Resource::NetworkTap;
    return std::nullopt; // unknown capability: nothing to observe
}

std::vector<NodeAgent::CycleEntry> NodeAgent::guard_cycle(Tick now) {
    std::vector<CycleEntry> entries;
    if (!admitted_)
        return entries;

    for (GuestRuntime& guest : guests_) {
        if (guest.inst.state != VmState::Running)
            continue;
        Bytes visible = guest.visible_payload(now);
        if (config_.observation_window && visible.size() > config_.observation_window)
            visible.resize(config_.observation_window);

        for (const SecurityComponentDescriptor& comp : components_) {
            if (guest.inst.state != VmState::Running)
                break; // halted earlier this cycle
            for (const CapabilityTag& cap : comp.capabilities) {
                auto resource = capability_resource(cap);
                if (!resource)
                    continue;
                if (!find_token(comp.component_id, *resource, now)) {
                    sink_(now, actor_, "token_refusal",
                          comp.component_id + " " + std::string(resource_name(*resource)));
                    continue;
                }
                Observation obs{guest.inst.vm_id, now, *resource, visible};
                Verdict verdict = (cap == caps::kAnomalyScan)
                                      ? anomaly_scan(obs, config_.anomaly_threshold)
                                      : signature_scan(obs, ruleset_);
                CycleEntry entry{guest.inst.vm_id, comp.component_id, *resource, verdict,
                                 verdict.infected() ? ResponseAction::HaltAndQuarantine
                                                    : ResponseAction::None};
                entries.push_back(entry);
                if (verdict.infected()) {
                    sink_(now, actor_, "verdict_infected",
                          guest.inst.vm_id + " by=" + comp.component_id + " " + verdict.cause);
                    execute_infection_response(guest, verdict, now);
                    break;
                }
            }
            if (guest.inst.state != VmState::Running)
                break;
        }
    }
    return entries;
}

void NodeAgent::execute_infection_response(GuestRuntime& guest, const Verdict& verdict,
                                           Tick now) {
    // Workflow order: halt, report, duplicate+send; replacement follows the
    // transfer Ack after the provisioning delay.
    halt_vm(guest.inst.vm_id, now);
    trigger_verdicts_[guest.inst.vm_id] = verdict;
    try {
        auto responses = link_.exchange(make_message(
            InfectionReport{profile_.node_id, guest.inst.vm_id, now, verdict}, now));
        (void)responses;
    } catch (const LinkFailure&) {
        sink_(now, actor_, "report_failed", guest.inst.vm_id);
    }
    snapshot_and_transfer(guest.inst.vm_id, now);
}

void NodeAgent::halt_vm(const std::string& vm_id, Tick now) {
    GuestRuntime* guest = find_guest(vm_id);
    if (!guest)
        throw TargetNotRunning(vm_id);
    guest->inst.state = transition(guest->inst.state, VmEvent::InfectionDetected);
    guest->inst.halt_tick = now;
    sink_(now, actor_, "halt", vm_id);
}

bool NodeAgent::attempt_transfer(const EvidenceBundle& bundle, const std::string& vm_id,
                                 Tick now, std::string& address_out) {
    for (int i = 0; i < config_.transfer_attempts_per_cycle; ++i) {
        try {
            auto responses = link_.exchange(make_message(EvidenceTransfer{bundle}, now));
            for (const ProtocolMessage& r : responses) {
                if (const auto* ack = std::get_if<Ack>(&r.payload))
                    address_out = ack->info;
                else if (const auto* delivery = std::get_if<CleanVmDelivery>(&r.payload)) {
                    pending_replacements_.push_back(
                        {*delivery, now + config_.provisioning_delay});
                    sink_(now, actor_, "delivery_scheduled",
                          delivery->replaces_vm_id + " at=" +
                              std::to_string(now + config_.provisioning_delay));
                }
            }
            if (!address_out.empty()) {
                sink_(now, actor_, "transfer", vm_id + " " + address_out);
                return true;
            }
        } catch (const LinkFailure&) {
            // next attempt
        }
    }
    return false;
}

std::optional<std::string> NodeAgent::snapshot_and_transfer(const std::string& vm_id, Tick now) {
    GuestRuntime* guest = find_guest(vm_id);
    if (!guest)
        throw TargetNotRunning(vm_id);

    EvidenceBundle bundle;
    bundle.snapshot = guest->full_payload();
    bundle.meta.node_id = profile_.node_id;
    bundle.meta.vm_id = vm_id;
    bundle.meta.halt_tick = guest->inst.halt_tick.value_or(now);
    bundle.meta.app_manifest = guest->inst.image.app_manifest;
    auto trig = trigger_verdicts_.find(vm_id);
    bundle.meta.verdict =
        trig != trigger_verdicts_.end() ? trig->second : Verdict::infected_by("manual");

    Digest genesis = sha256(bundle.snapshot);
    bundle.custody.push_back(
        make_custody_record(actor_, node_key_, CustodyAction::Snapshotted, now, genesis));
    bundle.custody.push_back(make_custody_record(actor_, node_key_, CustodyAction::Transferred,
                                                 now, bundle.custody.back().record_hash()));

    guest->inst.state = transition(guest->inst.state, VmEvent::SnapshotTaken); // throws if not Halted
    sink_(now, actor_, "snapshot", vm_id + " " + vmsentry::to_hex(genesis));

    std::string address;
    if (attempt_transfer(bundle, vm_id, now, address))
        return address;

    pending_transfers_.push_back({vm_id, std::move(bundle), now + 1, 1});
    sink_(now, actor_, "transfer_retained", vm_id);
    return std::nullopt;
}

void NodeAgent::process_pending(Tick now) {
    for (auto it = pending_replacements_.begin(); it != pending_replacements_.end();) {
        if (it->apply_at <= now) {
            try {
                replace_vm(it->delivery.replaces_vm_id, it->delivery, now);
            } catch (const IntegrityFailure& e) {
                sink_(now, actor_, "replace_rejected", e.what());
            } catch (const TargetNotRunning&) {
                // VM already replaced by an earlier delivery
            }
            it = pending_replacements_.erase(it);
        } else {
            ++it;
        }
    }

    for (auto it = pending_transfers_.begin(); it != pending_transfers_.end();) {
        if (it->next_attempt > now) {
            ++it;
            continue;
        }
        std::string address;
        if (attempt_transfer(it->bundle, it->vm_id, now, address)) {
            it = pending_transfers_.erase(it);
        } else {
            it->backoff = std::min<Tick>(it->backoff * 2, 4);
            it->next_attempt = now + it->backoff;
            ++it;
        }
    }
}

VmInstance& NodeAgent::replace_vm(const std::string& vm_id, const CleanVmDelivery& delivery,
                                  Tick now) {
    GuestRuntime* old_guest = find_guest(vm_id);
    if (!old_guest || old_guest->inst.state != VmState::Quarantined)
        throw TargetNotRunning(vm_id);
    if (!check_integrity(delivery.guest_image, publisher_pk_))
        throw IntegrityFailure("delivered image failed integrity check");

    Tick halt_tick = old_guest->inst.halt_tick.value_or(now);
    old_guest->inst.state = transition(old_guest->inst.state, VmEvent::Replace);

    GuestRuntime fresh;
    fresh.inst.vm_id = vm_id + ".r" + std::to_string(now);
    fresh.inst.image = delivery.guest_image;
    fresh.inst.state = transition(VmState::Provisioned, VmEvent::Start);
    guests_.push_back(std::move(fresh));

    sink_(now, actor_, "replace",
          vm_id + " -> " + guests_.back().inst.vm_id +
              " downtime=" + std::to_string(now - halt_tick));
    return guests_.back().inst;
}

void NodeAgent::apply_component_update(const ComponentUpdate& update, Tick now) {
    if (!check_integrity(update.security_image, publisher_pk_))
        throw IntegrityFailure("update security image failed integrity check");

    // Atomic exchange: the old security VM retires and the new set takes over
    // before any further cycle runs; guest VMs are untouched.
    if (security_vm_) {
        security_vm_->state = transition(security_vm_->state, VmEvent::Replace);
        security_vm_->halt_tick = now;
    }
    install_security_vm(update.security_image, update.component_set, update.tokens, now);
    sink_(now, actor_, "component_update",
          "components=" + std::to_string(components_.size()));
    try {
        link_.exchange(make_message(Ack{0, "component_update"}, now));
    } catch (const LinkFailure&) {
        sink_(now, actor_, "update_ack_failed", "");
    }
}

void NodeAgent::append_guest_payload(const std::string& vm_id, const std::string& pattern_id,
                                     ByteView bytes, Tick now, Tick visible_at) {
    GuestRuntime* guest = find_guest(vm_id);
    if (!guest || guest->inst.state != VmState::Running)
        throw TargetNotRunning(vm_id);
    guest->segments.push_back(
        {Bytes(bytes.begin(), bytes.end()), now, visible_at, pattern_id});
}

} // namespace vmsentry
