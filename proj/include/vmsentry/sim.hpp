// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/agent.hpp"
#include "vmsentry/server.hpp"

#include <random>

namespace vmsentry {

enum class Topology { Complete, Ring, Star };

std::string_view topology_name(Topology t);
std::optional<Topology> topology_from_name(std::string_view name);

struct InfectionInjection {
    Tick tick = 0;
    std::string node_id;
    std::string pattern_id;
};

struct Scenario {
    std::uint64_t seed = 0;
    int num_nodes = 1;
    std::vector<NodeProfile> profiles; // one per node, in node order
    Ruleset ruleset;
    std::vector<InfectionInjection> injections;
    double propagation_probability = 0.0;
    Tick detector_latency = 0; // ticks between exposure and first scannable observation
    Tick provisioning_delay = 1;
    Tick max_ticks = 20;
    Topology topology = Topology::Complete;
};

struct ScenarioInvalid : std::runtime_error {
    std::string field;
    ScenarioInvalid(std::string field_, const std::string& what)
        : std::runtime_error("invalid scenario (" + field_ + "): " + what),
          field(std::move(field_)) {}
};

void validate_scenario(const Scenario& s); // throws ScenarioInvalid

// Scenario files are key=value lines; see docs/scenario-format.md.
Scenario parse_scenario(std::string_view text);
Scenario load_scenario_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct TraceEvent {
    Tick tick = 0;
    std::string actor;
    std::string kind;
    std::string detail;
};

struct ScenarioTrace {
    std::vector<TraceEvent> events;
    // One event per line: tick, actor, kind, detail, first 12 hex of
    // sha256(detail) — tab-separated.
    std::string to_text() const;
};

struct IncidentMetrics {
    std::string node_id;
    std::string vm_id;
    Tick infection_tick = -1;
    Tick halt_tick = -1;
    Tick replace_tick = -1;
    Tick downtime() const { return replace_tick >= 0 && halt_tick >= 0 ? replace_tick - halt_tick : -1; }
    Tick detection_latency() const {
        return halt_tick >= 0 && infection_tick >= 0 ? halt_tick - infection_tick : -1;
    }
};

struct Metrics {
    std::vector<IncidentMetrics> incidents;
    int propagation_count = 0; // nodes infected beyond the injections
    int evidence_count = 0;
    std::string to_text() const; // key=value lines
};

struct RunResult {
    ScenarioTrace trace;
    Metrics metrics;
    std::filesystem::path evidence_root;
};

// In-memory deterministic transport; `down` injects server outages.
class InMemoryLink : public ServerLink {
public:
    explicit InMemoryLink(SecurityServer& server) : server_(&server) {}
    std::vector<ProtocolMessage> exchange(const ProtocolMessage& request) override {
        if (down)
            throw LinkFailure("server unreachable");
        return server_->handle(request);
    }
    void rebind(SecurityServer& server) { server_ = &server; }
    bool down = false;

private:
    SecurityServer* server_;
};

// Deterministic fixture builders shared by the simulator, the CLI, and tests.
ComponentCatalog build_catalog(const Scenario& scenario, const KeyPair& publisher);
LayerStack build_node_stack(const NodeProfile& profile, const ComponentCatalog& catalog,
                            const KeyPair& publisher);

// Runs admission plus max_ticks simulation ticks. The evidence store lives at
// <work_dir>/evidence, recreated fresh so identical scenarios yield
// byte-identical traces.
RunResult run_scenario(const Scenario& scenario, const std::filesystem::path& work_dir);

} // namespace vmsentry
