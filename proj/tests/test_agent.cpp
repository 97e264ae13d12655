// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/sim.hpp"

#include <doctest.h>

#include <algorithm>

using namespace vmsentry;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

constexpr std::uint64_t kSeed = 42;
const Bytes kMarker = to_bytes("EVILWORMSIG01");

struct Fixture {
    TempDir dir;
    Scenario scenario;
    KeyPair publisher;
    KeyPair server_key;
    KeyPair node_key;
    Bytes endorsement;
    ComponentCatalog catalog;
    SecurityServer server;
    InMemoryLink link;
    NodeAgent agent;

    explicit Fixture(const std::string& name, AgentConfig agent_config = {}, Tick lease = 600,
                     bool tamper_core = false)
        : dir(name),
          scenario(parse_scenario("seed=42\n")),
          publisher(derive_keypair(kSeed, "publisher")),
          server_key(derive_keypair(kSeed, "server")),
          node_key(derive_keypair(kSeed, "node:node0")),
          endorsement(sign(publisher.private_key, node_key.public_key)),
          catalog(build_catalog(scenario, publisher)),
          server(catalog, server_key, publisher.public_key,
                 ServerConfig{lease, 7.5, dir.path / "evidence"}),
          link(server),
          agent(scenario.profiles[0], make_stack(tamper_core), node_key, endorsement,
                publisher.public_key, server_key.public_key, link, agent_config) {}

    LayerStack make_stack(bool tamper_core) {
        LayerStack stack = build_node_stack(scenario.profiles[0], catalog, publisher);
        if (tamper_core)
            stack.core_image.payload[0] ^= 0x01;
        return stack;
    }

    void infect_g0(Tick now, Tick visible_at) {
        agent.append_guest_payload("g0", "R1", kMarker, now, visible_at);
    }

    const GuestRuntime* guest(const std::string& vm_id) {
        for (const GuestRuntime& g : agent.guests())
            if (g.inst.vm_id == vm_id)
                return &g;
        return nullptr;
    }
};

} // namespace

TEST_CASE("boot: a tampered core fails the self check before any network contact") {
    Fixture f("vmsentry_ag_selfcheck", {}, 600, /*tamper_core=*/true);
    f.link.down = true; // would throw LinkFailure if the agent tried to talk
    CHECK(f.agent.boot_sequence(0) == NodeAgent::BootResult::IntegritySelfCheckFailed);
    CHECK_FALSE(f.agent.admitted());
    CHECK(f.agent.last_denial_reason() == "IntegritySelfCheckFailed");
    CHECK(f.guest("g0")->inst.state == VmState::Provisioned); // guests never started
}

TEST_CASE("boot: the full admission sequence arms the guard") {
    Fixture f("vmsentry_ag_boot");
    REQUIRE(f.agent.boot_sequence(0) == NodeAgent::BootResult::Admitted);
    CHECK(f.agent.admitted());
    CHECK(f.server.is_admitted("node0", 1));
    CHECK(f.guest("g0")->inst.state == VmState::Running);
    REQUIRE(f.agent.security_vm().has_value());
    CHECK(f.agent.security_vm()->state == VmState::Running);
    CHECK_FALSE(f.agent.components().empty());

    // a clean cycle produces clean verdicts and no action
    auto entries = f.agent.guard_cycle(1);
    REQUIRE(!entries.empty());
    for (const auto& e : entries) {
        CHECK_FALSE(e.verdict.infected());
        CHECK(e.action == ResponseAction::None);
    }
}

TEST_CASE("boot: a rogue node key is turned away") {
    Fixture f("vmsentry_ag_rogue");
    KeyPair rogue_pub = derive_keypair(666, "publisher");
    Bytes bad_endorsement = sign(rogue_pub.private_key, f.node_key.public_key);
    NodeAgent rogue(f.scenario.profiles[0], f.make_stack(false), f.node_key, bad_endorsement,
                    f.publisher.public_key, f.server_key.public_key, f.link);
    CHECK(rogue.boot_sequence(0) == NodeAgent::BootResult::Denied);
    CHECK(rogue.last_denial_reason() == "UnknownKey");
    CHECK_FALSE(rogue.admitted());
}

TEST_CASE("guard_cycle without admission does nothing") {
    Fixture f("vmsentry_ag_unarmed");
    CHECK(f.agent.guard_cycle(1).empty());
}

TEST_CASE("infection workflow: halt, report, duplicate, transfer, replace") {
    AgentConfig cfg;
    cfg.provisioning_delay = 1;
    Fixture f("vmsentry_ag_workflow", cfg);
    REQUIRE(f.agent.boot_sequence(0) == NodeAgent::BootResult::Admitted);

    f.infect_g0(5, 5); // immediately visible
    auto entries = f.agent.guard_cycle(5);
    REQUIRE(!entries.empty());
    // the infected entry carries the halt decision
    bool halted = false;
    for (const auto& e : entries)
        if (e.verdict == Verdict::infected_by("R1") && e.action == ResponseAction::HaltAndQuarantine)
            halted = true;
    CHECK(halted);

    // by the end of the cycle the guest is quarantined and the evidence is stored
    CHECK(f.guest("g0")->inst.state == VmState::Quarantined);
    CHECK(f.agent.pending_transfer_count() == 0);
    REQUIRE(f.server.evidence().index().size() == 1);
    auto idx = f.server.evidence().index()[0];
    CHECK(idx.node_id == "node0");
    CHECK(idx.vm_id == "g0");
    CHECK(idx.tick == 5);

    // custody chain shape: Snapshotted, Transferred on the node; Stored,
    // Analyzed in the server sidecar
    EvidenceBundle stored = f.server.evidence().load_bundle(idx.hash_hex);
    REQUIRE(stored.custody.size() == 2);
    CHECK(stored.custody[0].action == CustodyAction::Snapshotted);
    CHECK(stored.custody[0].actor == "node:node0");
    CHECK(stored.custody[1].action == CustodyAction::Transferred);
    auto sidecar = f.server.evidence().load_sidecar(idx.hash_hex);
    REQUIRE(sidecar.size() == 2);
    CHECK(sidecar[0].action == CustodyAction::Stored);
    CHECK(sidecar[0].actor == "server");
    CHECK(sidecar[1].action == CustodyAction::Analyzed);
    CHECK(verify_stored_bundle(f.server.evidence(), idx.hash_hex).all_pass());

    // the snapshot duplicated the full infected payload
    CHECK(std::search(stored.snapshot.begin(), stored.snapshot.end(), kMarker.begin(),
                      kMarker.end()) != stored.snapshot.end());

    // the infection report reached the server exactly once
    CHECK(f.server.analysis_queue_size() == 0); // consumed by the transfer analysis

    // replacement lands after the provisioning delay
    f.agent.process_pending(6);
    CHECK(f.guest("g0")->inst.state == VmState::Retired);
    const GuestRuntime* fresh = f.guest("g0.r6");
    REQUIRE(fresh != nullptr);
    CHECK(fresh->inst.state == VmState::Running);
    CHECK_FALSE(fresh->infected());

    // the fresh guest scans clean
    for (const auto& e : f.agent.guard_cycle(7))
        CHECK_FALSE(e.verdict.infected());
}

TEST_CASE("detector latency: infection is invisible until visible_at") {
    Fixture f("vmsentry_ag_latency");
    REQUIRE(f.agent.boot_sequence(0) == NodeAgent::BootResult::Admitted);
    f.infect_g0(5, 7); // latency 2

    for (Tick t : {5, 6}) {
        for (const auto& e : f.agent.guard_cycle(t))
            CHECK_FALSE(e.verdict.infected());
        CHECK(f.guest("g0")->inst.state == VmState::Running);
    }
    f.agent.guard_cycle(7);
    CHECK(f.guest("g0")->inst.state == VmState::Quarantined);
    // but the snapshot taken at halt still contains the payload
    auto idx = f.server.evidence().index();
    REQUIRE(idx.size() == 1);
    EvidenceBundle stored = f.server.evidence().load_bundle(idx[0].hash_hex);
    CHECK(std::search(stored.snapshot.begin(), stored.snapshot.end(), kMarker.begin(),
                      kMarker.end()) != stored.snapshot.end());
}

TEST_CASE("expired tokens stop the guard from touching guest memory") {
    Fixture f("vmsentry_ag_expiry", {}, /*lease=*/5);
    REQUIRE(f.agent.boot_sequence(0) == NodeAgent::BootResult::Admitted);
    f.infect_g0(1, 1);

    // tokens expired at tick 5: no observation, no verdict, guest untouched
    auto entries = f.agent.guard_cycle(6);
    CHECK(entries.empty());
    CHECK(f.guest("g0")->inst.state == VmState::Running);

    // within the lease the same infection is caught
    auto caught = f.agent.guard_cycle(4);
    CHECK(!caught.empty());
    CHECK(f.guest("g0")->inst.state == VmState::Quarantined);
}

TEST_CASE("halt is single-shot and targets must exist") {
    Fixture f("vmsentry_ag_halt");
    REQUIRE(f.agent.boot_sequence(0) == NodeAgent::BootResult::Admitted);
    f.agent.halt_vm("g0", 3);
    CHECK(f.guest("g0")->inst.state == VmState::Halted);
    CHECK_THROWS_AS(f.agent.halt_vm("g0", 4), IllegalTransition);
    CHECK_THROWS_AS(f.agent.halt_vm("ghost", 4), TargetNotRunning);
    CHECK_THROWS_AS(f.agent.append_guest_payload("g0", "R1", kMarker, 4, 4), TargetNotRunning);
}

TEST_CASE("server outage: evidence is retained and retried with backoff") {
    AgentConfig cfg;
    cfg.provisioning_delay = 1;
    Fixture f("vmsentry_ag_outage", cfg);
    REQUIRE(f.agent.boot_sequence(0) == NodeAgent::BootResult::Admitted);

    f.infect_g0(5, 5);
    f.link.down = true;
    f.agent.guard_cycle(5);

    // quarantined locally, but nothing reached the server
    CHECK(f.guest("g0")->inst.state == VmState::Quarantined);
    CHECK(f.agent.pending_transfer_count() == 1);
    CHECK(f.server.evidence().index().empty());

    // retries while down keep the bundle and back off
    f.agent.process_pending(6);
    f.agent.process_pending(7);
    CHECK(f.agent.pending_transfer_count() == 1);
    CHECK(f.server.evidence().index().empty());

    // the server comes back; the next due retry lands the transfer
    f.link.down = false;
    for (Tick t = 8; t <= 12 && f.agent.pending_transfer_count() > 0; ++t)
        f.agent.process_pending(t);
    CHECK(f.agent.pending_transfer_count() == 0);
    REQUIRE(f.server.evidence().index().size() == 1);
    CHECK(verify_stored_bundle(f.server.evidence(), f.server.evidence().index()[0].hash_hex)
              .all_pass());

    // and the delayed replacement still happens
    f.agent.process_pending(13);
    CHECK(f.guest("g0")->inst.state == VmState::Retired);
    bool has_fresh = false;
    for (const GuestRuntime& g : f.agent.guests())
        if (g.inst.state == VmState::Running)
            has_fresh = true;
    CHECK(has_fresh);
}

TEST_CASE("replacement refuses an image that fails the publisher check") {
    Fixture f("vmsentry_ag_badimage");
    REQUIRE(f.agent.boot_sequence(0) == NodeAgent::BootResult::Admitted);
    f.agent.halt_vm("g0", 3);
    f.agent.snapshot_and_transfer("g0", 3);
    REQUIRE(f.guest("g0")->inst.state == VmState::Quarantined);

    CleanVmDelivery forged;
    forged.replaces_vm_id = "g0";
    KeyPair rogue = derive_keypair(666, "publisher");
    forged.guest_image = make_signed_image("evil", VmKind::GuestOs, to_bytes("trojan"),
                                           {"browser", "editor"}, rogue);
    CHECK_THROWS_AS(f.agent.replace_vm("g0", forged, 4), IntegrityFailure);
    CHECK(f.guest("g0")->inst.state == VmState::Quarantined); // untouched
}

TEST_CASE("component update swaps the security VM atomically") {
    Fixture f("vmsentry_ag_update");
    REQUIRE(f.agent.boot_sequence(0) == NodeAgent::BootResult::Admitted);
    std::string old_vm_id = f.agent.security_vm()->vm_id;
    auto server_set_before = f.server.node_record("node0")->component_set;

    std::vector<SecurityComponentDescriptor> next = f.agent.components();
    SecurityComponentDescriptor extra;
    extra.component_id = "svc-extra";
    extra.version = 2;
    extra.capabilities = {caps::kAnomalyScan};
    extra.cpu_cost = 5;
    extra.mem_cost = 5;
    next.push_back(extra);

    ProtocolMessage push = f.server.push_component_update("node0", next, 5);
    f.agent.apply_component_update(std::get<ComponentUpdate>(push.payload), 5);

    CHECK(f.agent.security_vm()->vm_id != old_vm_id);
    CHECK(f.agent.security_vm()->state == VmState::Running);
    CHECK(f.agent.components().size() == next.size());
    // the agent's Ack committed the set on the server
    CHECK(f.server.node_record("node0")->component_set.size() == next.size());

    // guests were untouched and the guard still works with the new set
    CHECK(f.guest("g0")->inst.state == VmState::Running);
    f.infect_g0(6, 6);
    f.agent.guard_cycle(6);
    CHECK(f.guest("g0")->inst.state == VmState::Quarantined);
}

TEST_CASE("component update with a tampered image changes nothing") {
    Fixture f("vmsentry_ag_badupdate");
    REQUIRE(f.agent.boot_sequence(0) == NodeAgent::BootResult::Admitted);
    std::string old_vm_id = f.agent.security_vm()->vm_id;
    std::size_t old_count = f.agent.components().size();

    ComponentUpdate update;
    update.security_image = f.catalog.security_env_image;
    update.security_image.payload.push_back(0x00); // breaks the content hash
    CHECK_THROWS_AS(f.agent.apply_component_update(update, 5), IntegrityFailure);
    CHECK(f.agent.security_vm()->vm_id == old_vm_id);
    CHECK(f.agent.security_vm()->state == VmState::Running);
    CHECK(f.agent.components().size() == old_count);
}
