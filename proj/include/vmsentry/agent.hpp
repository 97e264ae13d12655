// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/detection.hpp"
#include "vmsentry/trace.hpp"
#include "vmsentry/wire.hpp"

#include <map>

namespace vmsentry {

// Node-side view of the server session. The in-memory implementation calls the
// server directly; the live one speaks frames over TCP. exchange() throws
// LinkFailure when the server is unreachable.
struct LinkFailure : std::runtime_error {
    explicit LinkFailure(const std::string& what) : std::runtime_error(what) {}
};

class ServerLink {
public:
    virtual ~ServerLink() = default;
    virtual std::vector<ProtocolMessage> exchange(const ProtocolMessage& request) = 0;
};

struct IntegrityFailure : std::runtime_error {
    explicit IntegrityFailure(const std::string& what) : std::runtime_error(what) {}
};

struct TargetNotRunning : std::runtime_error {
    explicit TargetNotRunning(const std::string& vm_id)
        : std::runtime_error("vm not running: " + vm_id) {}
};

enum class ResponseAction { None, HaltAndQuarantine };

struct AgentConfig {
    int transfer_attempts_per_cycle = 3;
    Tick provisioning_delay = 1;
    std::size_t observation_window = 0; // 0 = full payload
    double anomaly_threshold = 7.5;
};

// A guest VM plus the byte segments infections appended to it. Segments become
// visible to the guard only from their visible_at tick (detector latency), but
// snapshots and propagation always see the full payload.
struct GuestRuntime {
    struct Segment {
        Bytes bytes;
        Tick applied_tick = 0;
        Tick visible_at = 0;
        std::string pattern_id;
    };

    VmInstance inst;
    std::vector<Segment> segments;

    Bytes full_payload() const;
    Bytes visible_payload(Tick now) const;
    std::optional<Tick> first_infection_tick() const;
    bool infected() const { return !segments.empty(); }
};

// The per-node process: a simulated hypervisor plus the security-environment
// guard that gathers observations, consults components, and executes responses.
class NodeAgent {
public:
    enum class BootResult { Admitted, Denied, IntegritySelfCheckFailed };

    struct CycleEntry {
        std::string vm_id;
        std::string component_id;
        Resource resource = Resource::GuestMemory;
        Verdict verdict;
        ResponseAction action = ResponseAction::None;
    };

    NodeAgent(NodeProfile profile, LayerStack stack, KeyPair node_key, Bytes node_key_endorsement,
              Bytes publisher_public_key, Bytes server_public_key, ServerLink& link,
              AgentConfig config = {}, TraceSink sink = null_sink());

    BootResult boot_sequence(Tick now);
    std::string last_denial_reason() const { return denial_reason_; }

    // Applies due clean-VM replacements and retries retained evidence
    // transfers. Call once per tick before guard_cycle.
    void process_pending(Tick now);

    std::vector<CycleEntry> guard_cycle(Tick now);

    void halt_vm(const std::string& vm_id, Tick now);
    std::optional<std::string> snapshot_and_transfer(const std::string& vm_id, Tick now);
    VmInstance& replace_vm(const std::string& vm_id, const CleanVmDelivery& delivery, Tick now);
    void apply_component_update(const ComponentUpdate& update, Tick now);

    // Simulator hooks: payload mutation for injections and propagation.
    void append_guest_payload(const std::string& vm_id, const std::string& pattern_id,
                              ByteView bytes, Tick now, Tick visible_at);

    bool admitted() const { return admitted_; }
    const NodeProfile& profile() const { return profile_; }
    const std::vector<GuestRuntime>& guests() const { return guests_; }
    GuestRuntime* find_guest(const std::string& vm_id);
    const std::optional<VmInstance>& security_vm() const { return security_vm_; }
    const std::vector<SecurityComponentDescriptor>& components() const { return components_; }
    std::size_t pending_transfer_count() const { return pending_transfers_.size(); }

private:
    ProtocolMessage make_message(MessagePayload payload, Tick now);
    void install_security_vm(const VmImage& image,
                             std::vector<SecurityComponentDescriptor> components,
                             std::vector<AccessToken> tokens, Tick now);
    const AccessToken* find_token(const std::string& component_id, Resource resource,
                                  Tick now) const;
    void execute_infection_response(GuestRuntime& guest, const Verdict& verdict, Tick now);
    bool attempt_transfer(const EvidenceBundle& bundle, const std::string& vm_id, Tick now,
                          std::string& address_out);

    NodeProfile profile_;
    std::string actor_; // "node:<id>"
    VmImage core_image_;
    std::vector<GuestRuntime> guests_;
    std::optional<VmInstance> security_vm_;
    KeyPair node_key_;
    Bytes node_key_endorsement_;
    Bytes publisher_pk_;
    Bytes server_pk_;
    ServerLink& link_;
    AgentConfig config_;
    TraceSink sink_;

    std::vector<SecurityComponentDescriptor> components_;
    std::vector<AccessToken> tokens_;
    Ruleset ruleset_;
    bool admitted_ = false;
    std::string denial_reason_;
    std::uint64_t seq_ = 0;

    std::map<std::string, Verdict> trigger_verdicts_; // vm_id -> verdict that caused the halt

    struct PendingTransfer {
        std::string vm_id;
        EvidenceBundle bundle;
        Tick next_attempt = 0;
        Tick backoff = 1; // 1, 2, 4 ticks
    };
    std::vector<PendingTransfer> pending_transfers_;

    struct PendingReplacement {
        CleanVmDelivery delivery;
        Tick apply_at = 0;
    };
    std::vector<PendingReplacement> pending_replacements_;
};

} // namespace vmsentry
