// SPDX-License-Identifier: Apache-2.0
//
// vmsentry: security server, node agent, scenario simulator, and evidence
// inspection in one binary.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error, 3 verification failure.

#include "vmsentry/net.hpp"
#include "vmsentry/sim.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace vmsentry;

namespace {

int g_log_level = 1; // 0 quiet, 1 info, 2 debug

TraceSink log_sink() {
    return [](Tick tick, std::string_view actor, std::string_view kind,
              std::string_view detail) {
        if (g_log_level >= 1)
            std::cerr << "[" << tick << "] " << actor << " " << kind << " " << detail << "\n";
    };
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << text;
}

// key=value profile file: node_id, node_class, cpu_budget, mem_budget,
// required_capabilities (comma-separated).
NodeProfile load_profile_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open profile " + path.string());
    NodeProfile p;
    p.node_class = NodeClass::Desktop;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("profile line without '=': " + line);
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "node_id") {
            p.node_id = value;
        } else if (key == "node_class") {
            auto cls = node_class_from_name(value);
            if (!cls)
                throw std::runtime_error("unknown node_class " + value);
            p.node_class = *cls;
        } else if (key == "cpu_budget") {
            p.cpu_budget = std::stoll(value);
        } else if (key == "mem_budget") {
            p.mem_budget = std::stoll(value);
        } else if (key == "required_capabilities") {
            std::stringstream ss(value);
            std::string tag;
            while (std::getline(ss, tag, ','))
                if (!tag.empty())
                    p.required_capabilities.insert(tag);
        } else {
            throw std::runtime_error("unknown profile key " + key);
        }
    }
    if (p.node_id.empty())
        throw std::runtime_error("profile missing node_id");
    return p;
}

LayerStack load_stack_dir(const fs::path& dir) {
    LayerStack stack;
    stack.hardware_id = "hw-" + dir.filename().string();
    stack.core_image = load_image_file(dir / "core.img");
    std::vector<fs::path> guests;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (name.rfind("guest", 0) == 0 && e.path().extension() == ".img")
            guests.push_back(e.path());
    }
    std::sort(guests.begin(), guests.end());
    int i = 0;
    for (const fs::path& p : guests) {
        VmInstance vm;
        vm.vm_id = "g" + std::to_string(i++);
        vm.image = load_image_file(p);
        stack.guest_vms.push_back(std::move(vm));
    }
    return stack;
}

int cmd_serve(const std::string& listen, const fs::path& catalog_dir, const fs::path& evidence,
              std::uint64_t seed) {
    auto [host, port] = parse_endpoint(listen);
    ComponentCatalog catalog = load_catalog(catalog_dir);
    KeyPair publisher = derive_keypair(seed, "publisher");
    KeyPair server_key = derive_keypair(seed, "server");

    ServerConfig config;
    config.evidence_root = evidence;
    SecurityServer server(std::move(catalog), server_key, publisher.public_key, config,
                          log_sink());
    TcpFrontend frontend(server, host, port);
    std::cerr << "vmsentry serve: listening on " << host << ":" << frontend.port() << "\n";
    frontend.run();
    return 0;
}

int cmd_agent(const std::string& server_ep, const fs::path& profile_file,
              const fs::path& stack_dir, std::uint64_t seed, Tick ticks) {
    auto [host, port] = parse_endpoint(server_ep);
    NodeProfile profile = load_profile_file(profile_file);
    LayerStack stack = load_stack_dir(stack_dir);

    KeyPair publisher = derive_keypair(seed, "publisher");
    KeyPair server_key = derive_keypair(seed, "server");
    KeyPair node_key = derive_keypair(seed, "node:" + profile.node_id);
    Bytes endorsement = sign(publisher.private_key, node_key.public_key);

    TcpServerLink link(host, port);
    NodeAgent agent(profile, std::move(stack), node_key, endorsement, publisher.public_key,
                    server_key.public_key, link, {}, log_sink());

    auto outcome = agent.boot_sequence(0);
    if (outcome == NodeAgent::BootResult::IntegritySelfCheckFailed) {
        std::cerr << "agent: core image integrity self-check failed\n";
        return 3;
    }
    if (outcome == NodeAgent::BootResult::Denied) {
        std::cerr << "agent: denied (" << agent.last_denial_reason() << ")\n";
        return 2;
    }
    for (Tick tick = 1; tick <= ticks; ++tick) {
        agent.process_pending(tick);
        agent.guard_cycle(tick);
    }
    if (agent.pending_transfer_count() > 0) {
        std::cerr << "agent: " << agent.pending_transfer_count()
                  << " evidence transfer(s) still pending\n";
        return 2;
    }
    return 0;
}

int cmd_simulate(const fs::path& scenario_file, const fs::path& trace_out,
                 const fs::path& metrics_out, std::optional<std::uint64_t> seed_override,
                 const fs::path& work_dir) {
    Scenario scenario = load_scenario_file(scenario_file);
    if (seed_override)
        scenario.seed = *seed_override;
    RunResult result = run_scenario(scenario, work_dir);
    write_text(trace_out, result.trace.to_text());
    write_text(metrics_out, result.metrics.to_text());
    if (g_log_level >= 1)
        std::cerr << "simulate: " << result.trace.events.size() << " events, evidence at "
                  << result.evidence_root << "\n";
    return 0;
}

int cmd_evidence_list(const fs::path& store_dir, const std::string& node_filter, Tick tick_from,
                      Tick tick_to) {
    auto entries = read_index_strict(store_dir); // throws StoreUnreadable
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        return std::tie(a.tick, a.node_id) < std::tie(b.tick, b.node_id);
    });
    for (const auto& e : entries) {
        if (!node_filter.empty() && e.node_id != node_filter)
            continue;
        if (e.tick < tick_from || e.tick > tick_to)
            continue;
        std::cout << e.node_id << '\t' << e.vm_id << '\t' << e.tick << '\t' << e.hash_hex
                  << '\n';
    }
    return 0;
}

int cmd_evidence_verify(const fs::path& store_dir, const std::string& hash, bool all) {
    EvidenceStore store(store_dir);
    std::vector<std::string> hashes;
    if (all) {
        for (const auto& e : read_index_strict(store_dir))
            hashes.push_back(e.hash_hex);
    } else {
        hashes.push_back(hash);
    }
    bool ok = true;
    for (const std::string& h : hashes) {
        VerificationReport report = verify_stored_bundle(store, h); // throws BundleNotFound
        for (const VerificationCheck& c : report.checks)
            std::cout << h.substr(0, 12) << '\t' << c.name << '\t'
                      << (c.pass ? "PASS" : "FAIL") << '\t' << c.detail << '\n';
        ok = ok && report.all_pass();
    }
    return ok ? 0 : 3;
}

// Writes a demo catalog, node profile, and stack directory so serve/agent can
// be exercised without a simulator run.
int cmd_fixture(const fs::path& out_dir, std::uint64_t seed, bool infected) {
    Scenario scenario = parse_scenario("seed=" + std::to_string(seed) + "\nnum_nodes=1\n");
    KeyPair publisher = derive_keypair(seed, "publisher");
    ComponentCatalog catalog = build_catalog(scenario, publisher);
    write_catalog(out_dir / "catalog", catalog);

    const NodeProfile& profile = scenario.profiles.front();
    LayerStack stack = build_node_stack(profile, catalog, publisher);
    if (infected) {
        // plant the default rule pattern so the guard quarantines this guest
        Bytes payload = stack.guest_vms[0].image.payload;
        const SignatureRule& rule = scenario.ruleset.rules.front();
        payload.insert(payload.end(), rule.pattern.begin(), rule.pattern.end());
        stack.guest_vms[0].image =
            make_signed_image(stack.guest_vms[0].image.image_id, VmKind::GuestOs, payload,
                              stack.guest_vms[0].image.app_manifest, publisher);
    }
    fs::create_directories(out_dir / "stack");
    save_image_file(out_dir / "stack" / "core.img", stack.core_image);
    save_image_file(out_dir / "stack" / "guest0.img", stack.guest_vms[0].image);

    std::string prof = "node_id=" + profile.node_id + "\nnode_class=Desktop\ncpu_budget=100\n" +
                       "mem_budget=100\nrequired_capabilities=SignatureScan\n";
    write_text(out_dir / "profile.txt", prof);
    std::cout << "fixture written to " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"virtualized network security testbed"};
    app.require_subcommand(1);

    std::uint64_t seed = 42;
    app.add_option("--seed", seed, "deterministic key/scenario seed")->capture_default_str();
    app.add_option("--log-level", g_log_level, "0 quiet, 1 info, 2 debug")
        ->capture_default_str();

    // serve
    auto* serve = app.add_subcommand("serve", "run the security server");
    serve->fallthrough();
    std::string listen = "127.0.0.1:7343";
    fs::path catalog_dir, evidence_dir;
    serve->add_option("--listen", listen, "host:port")->capture_default_str();
    serve->add_option("--catalog", catalog_dir, "catalog directory")->required();
    serve->add_option("--evidence", evidence_dir, "evidence store directory")->required();

    // agent
    auto* agent = app.add_subcommand("agent", "run a node agent");
    agent->fallthrough();
    std::string server_ep = "127.0.0.1:7343";
    fs::path profile_file, stack_dir;
    Tick agent_ticks = 30;
    agent->add_option("--server", server_ep, "server host:port")->capture_default_str();
    agent->add_option("--profile", profile_file, "node profile file")->required();
    agent->add_option("--stack", stack_dir, "stack directory (core.img, guest*.img)")->required();
    agent->add_option("--ticks", agent_ticks, "guard cycles to run")->capture_default_str();

    // simulate
    auto* simulate = app.add_subcommand("simulate", "run a deterministic scenario");
    simulate->fallthrough();
    fs::path scenario_file, trace_out, metrics_out, work_dir = "sim-work";
    bool seed_given = false;
    simulate->add_option("--scenario", scenario_file, "scenario file")->required();
    simulate->add_option("--trace-out", trace_out, "trace output file")->required();
    simulate->add_option("--metrics-out", metrics_out, "metrics output file")->required();
    simulate->add_option("--work-dir", work_dir, "working directory (evidence store)")
        ->capture_default_str();

    // evidence list | verify
    auto* evidence = app.add_subcommand("evidence", "inspect an evidence store");
    evidence->fallthrough();
    evidence->require_subcommand(1);
    auto* ev_list = evidence->add_subcommand("list", "list stored bundles");
    ev_list->fallthrough();
    fs::path store_dir;
    std::string node_filter;
    Tick tick_from = 0, tick_to = std::numeric_limits<Tick>::max();
    ev_list->add_option("--store", store_dir, "store directory")->required();
    ev_list->add_option("--node", node_filter, "filter by node_id");
    ev_list->add_option("--from", tick_from, "minimum tick");
    ev_list->add_option("--to", tick_to, "maximum tick");
    auto* ev_verify = evidence->add_subcommand("verify", "verify bundle integrity and custody");
    ev_verify->fallthrough();
    fs::path vstore_dir;
    std::string hash;
    bool verify_all = false;
    ev_verify->add_option("--store", vstore_dir, "store directory")->required();
    ev_verify->add_option("--hash", hash, "bundle hash (hex)");
    ev_verify->add_flag("--all", verify_all, "verify every indexed bundle");

    // fixture
    auto* fixture = app.add_subcommand("fixture", "write demo catalog/profile/stack");
    fixture->fallthrough();
    fs::path fixture_dir;
    bool fixture_infected = false;
    fixture->add_option("--out", fixture_dir, "output directory")->required();
    fixture->add_flag("--infected", fixture_infected, "plant the default worm marker");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*serve)
            return cmd_serve(listen, catalog_dir, evidence_dir, seed);
        if (*agent)
            return cmd_agent(server_ep, profile_file, stack_dir, seed, agent_ticks);
        if (*simulate) {
            seed_given = app.count("--seed") > 0;
            return cmd_simulate(scenario_file, trace_out, metrics_out,
                                seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt,
                                work_dir);
        }
        if (*ev_list)
            return cmd_evidence_list(store_dir, node_filter, tick_from, tick_to);
        if (*ev_verify) {
            if (!verify_all && hash.empty()) {
                std::cerr << "evidence verify: need --hash or --all\n";
                return 1;
            }
            return cmd_evidence_verify(vstore_dir, hash, verify_all);
        }
        if (*fixture)
            return cmd_fixture(fixture_dir, seed, fixture_infected);
    } catch (const BundleNotFound& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
