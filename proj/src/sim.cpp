// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/sim.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace vmsentry {

namespace fs = std::filesystem;

std::string_view topology_name(Topology t) {
    switch (t) {
    case Topology::Complete: return "complete";
    case Topology::Ring: return "ring";
    case Topology::Star: return "star";
    }
    return "?";
}

std::optional<Topology> topology_from_name(std::string_view name) {
    for (Topology t : {Topology::Complete, Topology::Ring, Topology::Star})
        if (topology_name(t) == name)
            return t;
    return std::nullopt;
}

void validate_scenario(const Scenario& s) {
    if (s.num_nodes < 1)
        throw ScenarioInvalid("num_nodes", "must be >= 1");
    if (static_cast<int>(s.profiles.size()) != s.num_nodes)
        throw ScenarioInvalid("profiles", "must have exactly num_nodes entries");
    if (!(s.propagation_probability >= 0.0 && s.propagation_probability <= 1.0))
        throw ScenarioInvalid("propagation_probability", "must be in [0,1]");
    if (s.detector_latency < 0)
        throw ScenarioInvalid("detector_latency", "must be >= 0");
    if (s.provisioning_delay < 0)
        throw ScenarioInvalid("provisioning_delay", "must be >= 0");
    if (s.max_ticks < 0)
        throw ScenarioInvalid("max_ticks", "must be >= 0");
    std::set<std::string> node_ids;
    for (const NodeProfile& p : s.profiles) {
        if (!node_ids.insert(p.node_id).second)
            throw ScenarioInvalid("profiles", "duplicate node_id " + p.node_id);
        if (p.required_capabilities.empty())
            throw ScenarioInvalid("profiles", p.node_id + " has no required capabilities");
        if (p.cpu_budget < 0 || p.mem_budget < 0)
            throw ScenarioInvalid("profiles", p.node_id + " has a negative budget");
    }
    for (const InfectionInjection& inj : s.injections) {
        if (!node_ids.count(inj.node_id))
            throw ScenarioInvalid("injections", "unknown node " + inj.node_id);
        if (!s.ruleset.find(inj.pattern_id))
            throw ScenarioInvalid("injections", "unknown pattern " + inj.pattern_id);
        if (inj.tick < 0)
            throw ScenarioInvalid("injections", "negative tick");
    }
}

// ---------------------------------------------------------------------------
// Scenario file parsing

static NodeProfile default_profile(int index) {
    NodeProfile p;
    p.node_id = "node" + std::to_string(index);
    p.node_class = NodeClass::Desktop;
    p.cpu_budget = 100;
    p.mem_budget = 100;
    p.required_capabilities = {caps::kSignatureScan};
    return p;
}

static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        out.push_back(item);
    return out;
}

Scenario parse_scenario(std::string_view text) {
    Scenario s;
    std::vector<NodeProfile> node_lines;
    bool num_nodes_given = false;
    std::stringstream ss{std::string(text)};
    std::string line;
    int lineno = 0;
    auto bad = [&](const std::string& field, const std::string& why) {
        return ScenarioInvalid(field, "line " + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(ss, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line[0] == '#')
            continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw bad("format", "expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        try {
            if (key == "seed") {
                s.seed = std::stoull(value);
            } else if (key == "num_nodes") {
                s.num_nodes = std::stoi(value);
                num_nodes_given = true;
            } else if (key == "max_ticks") {
                s.max_ticks = std::stoll(value);
            } else if (key == "propagation_probability") {
                s.propagation_probability = std::stod(value);
            } else if (key == "detector_latency") {
                s.detector_latency = std::stoll(value);
            } else if (key == "provisioning_delay") {
                s.provisioning_delay = std::stoll(value);
            } else if (key == "topology") {
                auto t = topology_from_name(value);
                if (!t)
                    throw bad("topology", "unknown topology " + value);
                s.topology = *t;
            } else if (key == "rule") {
                // rule=<id>:<hex pattern>:<description>
                auto parts = split(value, ':');
                if (parts.size() < 3)
                    throw bad("rule", "expected id:hexpattern:description");
                Ruleset merged = s.ruleset;
                merged.rules.push_back({parts[0], from_hex(parts[1]), parts[2]});
                s.ruleset = parse_ruleset(serialize_ruleset(merged)); // re-validate
            } else if (key == "inject") {
                // inject=<tick>:<node_id>:<pattern_id>
                auto parts = split(value, ':');
                if (parts.size() != 3)
                    throw bad("inject", "expected tick:node_id:pattern_id");
                s.injections.push_back({std::stoll(parts[0]), parts[1], parts[2]});
            } else if (key == "node") {
                // node=<id>:<class>:<cpu>:<mem>:<cap1,cap2>
                auto parts = split(value, ':');
                if (parts.size() != 5)
                    throw bad("node", "expected id:class:cpu:mem:caps");
                NodeProfile p;
                p.node_id = parts[0];
                auto cls = node_class_from_name(parts[1]);
                if (!cls)
                    throw bad("node", "unknown class " + parts[1]);
                p.node_class = *cls;
                p.cpu_budget = std::stoll(parts[2]);
                p.mem_budget = std::stoll(parts[3]);
                for (const std::string& c : split(parts[4], ','))
                    if (!c.empty())
                        p.required_capabilities.insert(c);
                node_lines.push_back(std::move(p));
            } else {
                throw bad(key, "unknown key");
            }
        } catch (const ScenarioInvalid&) {
            throw;
        } catch (const std::exception& e) {
            throw bad(key, e.what());
        }
    }

    if (!node_lines.empty()) {
        if (num_nodes_given && static_cast<int>(node_lines.size()) != s.num_nodes)
            throw ScenarioInvalid("num_nodes", "does not match the number of node= lines");
        s.profiles = std::move(node_lines);
        s.num_nodes = static_cast<int>(s.profiles.size());
    } else {
        for (int i = 0; i < s.num_nodes; ++i)
            s.profiles.push_back(default_profile(i));
    }
    if (s.ruleset.rules.empty())
        s.ruleset.rules.push_back({"R1", to_bytes("EVILWORMSIG01"), "default worm marker"});
    validate_scenario(s);
    return s;
}

Scenario load_scenario_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ScenarioInvalid("file", "cannot open " + path.string());
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_scenario(text);
}

// ---------------------------------------------------------------------------
// Trace / metrics text forms

std::string ScenarioTrace::to_text() const {
    std::string out;
    for (const TraceEvent& e : events) {
        Digest d = sha256(to_bytes(e.detail));
        out += std::to_string(e.tick);
        out += '\t';
        out += e.actor;
        out += '\t';
        out += e.kind;
        out += '\t';
        out += e.detail;
        out += '\t';
        out += to_hex(d).substr(0, 12);
        out += '\n';
    }
    return out;
}

std::string Metrics::to_text() const {
    std::string out;
    out += "evidence_count=" + std::to_string(evidence_count) + "\n";
    out += "propagation_count=" + std::to_string(propagation_count) + "\n";
    out += "incident_count=" + std::to_string(incidents.size()) + "\n";
    for (const IncidentMetrics& i : incidents) {
        out += "incident=" + i.node_id + ":" + i.vm_id + ":infection=" +
               std::to_string(i.infection_tick) + ":halt=" + std::to_string(i.halt_tick) +
               ":replace=" + std::to_string(i.replace_tick) +
               ":downtime=" + std::to_string(i.downtime()) +
               ":detection_latency=" + std::to_string(i.detection_latency()) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixture builders

ComponentCatalog build_catalog(const Scenario& scenario, const KeyPair& publisher) {
    ComponentCatalog cat;

    std::set<CapabilityTag> tags;
    for (const NodeProfile& p : scenario.profiles)
        tags.insert(p.required_capabilities.begin(), p.required_capabilities.end());
    for (const CapabilityTag& tag : tags) {
        SecurityComponentDescriptor c;
        c.component_id = "svc-" + tag;
        c.version = 1;
        c.capabilities = {tag};
        c.cpu_cost = 10;
        c.mem_cost = 10;
        c.public_key = derive_keypair(scenario.seed, "component:" + tag).public_key;
        cat.entries.push_back(std::move(c));
    }

    cat.security_env_image =
        make_signed_image("secenv-v1", VmKind::SecurityEnv,
                          to_bytes(serialize_ruleset(scenario.ruleset)), {"guard"}, publisher);

    std::string core_payload;
    for (int i = 0; i < 32; ++i)
        core_payload += "core-kernel-and-hypervisor block " + std::to_string(i) + "\n";
    cat.core_image =
        make_signed_image("core-v1", VmKind::GuestOs, to_bytes(core_payload), {}, publisher);

    std::string clean_payload;
    for (int i = 0; i < 64; ++i)
        clean_payload += "clean guest filesystem block " + std::to_string(i) + "\n";
    VmImage clean = make_signed_image("guest-clean-v1", VmKind::GuestOs, to_bytes(clean_payload),
                                      {"browser", "editor"}, publisher);
    cat.clean_guest_images[manifest_key(clean.app_manifest)] = std::move(clean);
    return cat;
}

LayerStack build_node_stack(const NodeProfile& profile, const ComponentCatalog& catalog,
                            const KeyPair& publisher) {
    LayerStack stack;
    stack.hardware_id = "hw-" + profile.node_id;
    stack.core_image = catalog.core_image;

    std::string guest_payload;
    for (int i = 0; i < 64; ++i)
        guest_payload += "guest filesystem block " + std::to_string(i) + " on " +
                         profile.node_id + "\n";
    VmInstance guest;
    guest.vm_id = "g0";
    guest.image = make_signed_image("guest-" + profile.node_id, VmKind::GuestOs,
                                    to_bytes(guest_payload), {"browser", "editor"}, publisher);
    guest.state = VmState::Provisioned;
    stack.guest_vms.push_back(std::move(guest));
    return stack;
}

// ---------------------------------------------------------------------------
// The deterministic event loop

namespace {

struct NodeSlot {
    std::unique_ptr<NodeAgent> agent;
    std::string node_id;
};

GuestRuntime* first_running_guest(NodeAgent& agent) {
    for (const GuestRuntime& g : agent.guests())
        if (g.inst.state == VmState::Running)
            return agent.find_guest(g.inst.vm_id);
    return nullptr;
}

} // namespace

RunResult run_scenario(const Scenario& scenario, const fs::path& work_dir) {
    validate_scenario(scenario);

    fs::path evidence_root = work_dir / "evidence";
    fs::remove_all(evidence_root);
    fs::create_directories(evidence_root);

    RunResult result;
    result.evidence_root = evidence_root;
    ScenarioTrace& trace = result.trace;
    Metrics& metrics = result.metrics;

    // Incident bookkeeping keyed (node_id, vm_id), fed from the event stream.
    std::map<std::pair<std::string, std::string>, std::size_t> incident_of;
    auto incident_for = [&](const std::string& node, const std::string& vm) -> IncidentMetrics& {
        auto key = std::make_pair(node, vm);
        auto it = incident_of.find(key);
        if (it == incident_of.end()) {
            it = incident_of.emplace(key, metrics.incidents.size()).first;
            metrics.incidents.push_back({node, vm, -1, -1, -1});
        }
        return metrics.incidents[it->second];
    };

    TraceSink sink = [&](Tick tick, std::string_view actor, std::string_view kind,
                         std::string_view detail) {
        trace.events.push_back(
            {tick, std::string(actor), std::string(kind), std::string(detail)});
        if (kind == "halt" && actor.substr(0, 5) == "node:") {
            incident_for(std::string(actor.substr(5)), std::string(detail)).halt_tick = tick;
        } else if (kind == "replace" && actor.substr(0, 5) == "node:") {
            // detail: "<old vm> -> <new vm> downtime=<d>"
            std::string d(detail);
            std::string vm = d.substr(0, d.find(' '));
            incident_for(std::string(actor.substr(5)), vm).replace_tick = tick;
        }
    };

    KeyPair publisher = derive_keypair(scenario.seed, "publisher");
    KeyPair server_key = derive_keypair(scenario.seed, "server");
    ComponentCatalog catalog = build_catalog(scenario, publisher);

    ServerConfig server_config;
    server_config.evidence_root = evidence_root;
    SecurityServer server(catalog, server_key, publisher.public_key, server_config, sink);
    InMemoryLink link(server);

    AgentConfig agent_config;
    agent_config.provisioning_delay = scenario.provisioning_delay;

    std::vector<NodeSlot> nodes;
    for (const NodeProfile& profile : scenario.profiles) {
        KeyPair node_key = derive_keypair(scenario.seed, "node:" + profile.node_id);
        Bytes endorsement = sign(publisher.private_key, node_key.public_key);
        LayerStack stack = build_node_stack(profile, catalog, publisher);
        auto agent = std::make_unique<NodeAgent>(profile, std::move(stack), std::move(node_key),
                                                 std::move(endorsement), publisher.public_key,
                                                 server_key.public_key, link, agent_config, sink);
        nodes.push_back({std::move(agent), profile.node_id});
    }

    // Admission phase at tick 0.
    for (NodeSlot& n : nodes) {
        auto outcome = n.agent->boot_sequence(0);
        if (outcome != NodeAgent::BootResult::Admitted)
            sink(0, "sim", "admission_failed", n.node_id + " " + n.agent->last_denial_reason());
    }

    auto find_node = [&](const std::string& id) -> NodeAgent* {
        for (NodeSlot& n : nodes)
            if (n.node_id == id)
                return n.agent.get();
        return nullptr;
    };

    std::mt19937_64 rng(scenario.seed);
    std::set<std::string> injected_nodes;
    std::set<std::string> propagated_nodes;

    for (Tick tick = 1; tick <= scenario.max_ticks; ++tick) {
        // 1. due replacements and retained transfers
        for (NodeSlot& n : nodes)
            n.agent->process_pending(tick);

        // 2. scheduled infections
        for (const InfectionInjection& inj : scenario.injections) {
            if (inj.tick != tick)
                continue;
            NodeAgent* agent = find_node(inj.node_id);
            const SignatureRule* rule = scenario.ruleset.find(inj.pattern_id);
            GuestRuntime* target = agent ? first_running_guest(*agent) : nullptr;
            if (!target) {
                sink(tick, "sim", "inject_failed", inj.node_id + " " + inj.pattern_id);
                continue;
            }
            agent->append_guest_payload(target->inst.vm_id, inj.pattern_id, rule->pattern, tick,
                                        tick + scenario.detector_latency);
            injected_nodes.insert(inj.node_id);
            incident_for(inj.node_id, target->inst.vm_id).infection_tick = tick;
            sink(tick, "sim", "inject",
                 inj.node_id + "/" + target->inst.vm_id + " " + inj.pattern_id);
        }

        // 3. propagation from guests infected at a strictly earlier tick
        struct Source {
            std::size_t node_index;
            std::string vm_id;
            std::string pattern_id;
        };
        std::vector<Source> sources;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            for (const GuestRuntime& g : nodes[i].agent->guests())
                if (g.inst.state == VmState::Running && g.infected() &&
                    g.first_infection_tick().value_or(tick) < tick)
                    sources.push_back({i, g.inst.vm_id, g.segments.front().pattern_id});

        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (const Source& src : sources) {
            std::vector<std::size_t> targets;
            const std::size_t n = nodes.size();
            switch (scenario.topology) {
            case Topology::Complete:
                for (std::size_t j = 0; j < n; ++j)
                    if (j != src.node_index)
                        targets.push_back(j);
                break;
            case Topology::Ring:
                if (n > 1)
                    targets.push_back((src.node_index + 1) % n); // directed successor
                break;
            case Topology::Star:
                if (src.node_index == 0) {
                    for (std::size_t j = 1; j < n; ++j)
                        targets.push_back(j);
                } else {
                    targets.push_back(0);
                }
                break;
            }
            for (std::size_t j : targets) {
                GuestRuntime* victim = first_running_guest(*nodes[j].agent);
                if (!victim || victim->infected())
                    continue;
                if (unit(rng) >= scenario.propagation_probability)
                    continue;
                const SignatureRule* rule = scenario.ruleset.find(src.pattern_id);
                nodes[j].agent->append_guest_payload(victim->inst.vm_id, src.pattern_id,
                                                     rule->pattern, tick,
                                                     tick + scenario.detector_latency);
                if (!injected_nodes.count(nodes[j].node_id))
                    propagated_nodes.insert(nodes[j].node_id);
                incident_for(nodes[j].node_id, victim->inst.vm_id).infection_tick = tick;
                sink(tick, "sim", "propagate",
                     nodes[src.node_index].node_id + "/" + src.vm_id + " -> " +
                         nodes[j].node_id + "/" + victim->inst.vm_id);
            }
        }

        // 4. guard cycles
        for (NodeSlot& n : nodes)
            n.agent->guard_cycle(tick);
    }

    metrics.propagation_count = static_cast<int>(propagated_nodes.size());
    metrics.evidence_count = static_cast<int>(server.evidence().index().size());
    return result;
}

} // namespace vmsentry
