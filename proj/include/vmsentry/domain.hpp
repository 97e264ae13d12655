// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/crypto.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <vector>

namespace vmsentry {

// ---------------------------------------------------------------------------
// VM lifecycle

enum class VmKind { GuestOs, SecurityEnv };
enum class VmState { Provisioned, Running, Halted, Quarantined, Retired };
enum class VmEvent { Start, InfectionDetected, SnapshotTaken, Replace };

std::string_view vm_kind_name(VmKind k);
std::optional<VmKind> vm_kind_from_name(std::string_view name);
std::string_view vm_state_name(VmState s);
std::string_view vm_event_name(VmEvent e);

constexpr std::array<VmState, 5> kAllVmStates{VmState::Provisioned, VmState::Running,
                                              VmState::Halted, VmState::Quarantined,
                                              VmState::Retired};
constexpr std::array<VmEvent, 4> kAllVmEvents{VmEvent::Start, VmEvent::InfectionDetected,
                                              VmEvent::SnapshotTaken, VmEvent::Replace};

struct IllegalTransition : std::runtime_error {
    IllegalTransition(VmState s, VmEvent e);
};

// Transition table:
//   Provisioned --Start-------------> Running
//   Running     --InfectionDetected-> Halted
//   Halted      --SnapshotTaken-----> Quarantined
//   Quarantined --Replace-----------> Retired
//   Running     --Replace-----------> Retired   (planned component exchange)
// Everything else throws IllegalTransition.
VmState transition(VmState state, VmEvent event);

// ---------------------------------------------------------------------------
// Images and instances

struct VmImage {
    std::string image_id;
    VmKind kind = VmKind::GuestOs;
    Bytes payload; // simulated disk+memory content; layer-four apps are opaque bytes
    Digest content_hash{};
    Bytes signature; // publisher signature over content_hash
    std::vector<std::string> app_manifest;
};

VmImage make_signed_image(std::string image_id, VmKind kind, Bytes payload,
                          std::vector<std::string> app_manifest, const KeyPair& publisher_key);

// True iff the recomputed payload hash matches content_hash AND the signature
// over content_hash verifies under the publisher key.
bool check_integrity(const VmImage& image, const Bytes& publisher_public_key);

struct VmInstance {
    std::string vm_id;
    VmImage image;
    VmState state = VmState::Provisioned;
    std::optional<Tick> halt_tick; // set iff state is Halted/Quarantined/Retired
};

struct LayerStack {
    std::string hardware_id;
    VmImage core_image; // layer two: kernel + virtualization system
    std::vector<VmInstance> guest_vms;
    std::optional<VmInstance> security_vm;
};

enum class StackViolation {
    MissingSecurityVm,
    DuplicateVmId,
    CoreImageHashMismatch,
    CoreImageBadSignature,
    GuestImageHashMismatch,
    GuestImageBadSignature,
    SecurityImageHashMismatch,
    SecurityImageBadSignature,
};

std::string_view stack_violation_name(StackViolation v);

struct ValidationReport {
    std::vector<StackViolation> violations;
    bool valid() const { return violations.empty(); }
    bool contains(StackViolation v) const;
};

ValidationReport validate_stack(const LayerStack& stack, const Bytes& publisher_public_key);

// ---------------------------------------------------------------------------
// Node and component descriptors

enum class NodeClass { Desktop, ThinClient, MobileHandheld };

std::string_view node_class_name(NodeClass c);
std::optional<NodeClass> node_class_from_name(std::string_view name);

// Extensible string-backed capability tag; equality is case-sensitive exact match.
using CapabilityTag = std::string;

namespace caps {
inline const CapabilityTag kSignatureScan = "SignatureScan";
inline const CapabilityTag kAnomalyScan = "AnomalyScan";
inline const CapabilityTag kFirewallFilter = "FirewallFilter";
} // namespace caps

struct NodeProfile {
    std::string node_id;
    NodeClass node_class = NodeClass::Desktop;
    std::int64_t cpu_budget = 0;
    std::int64_t mem_budget = 0;
    std::set<CapabilityTag> required_capabilities;
};

struct SecurityComponentDescriptor {
    std::string component_id;
    std::uint64_t version = 1;
    std::set<CapabilityTag> capabilities;
    std::int64_t cpu_cost = 0;
    std::int64_t mem_cost = 0;
    Bytes public_key; // verification key for the component's access credential
};

// ---------------------------------------------------------------------------
// Image fixture files: header line "VMIMG1", then kind, image_id, comma-joined
// app_manifest, content_hash hex, signature hex, then raw payload bytes to EOF.

struct BadImageFile : std::runtime_error {
    explicit BadImageFile(const std::string& what) : std::runtime_error(what) {}
};

void save_image_file(const std::filesystem::path& path, const VmImage& image);
VmImage load_image_file(const std::filesystem::path& path);

} // namespace vmsentry
